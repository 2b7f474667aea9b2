#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "pvgf/decoder.hpp"
#include "pvgf/encoder.hpp"
#include "pvgf/prompt.hpp"

namespace pvgf {

// Ablation variants:
//   DBC  - encoder + decoder only; no prompt parameters at all
//   VGF  - prompt classifier trained through the fusion loss, but no prompt
//          sequence is fed to the decoder
//   PVGF - full model: classifier, learnable prompt vectors, and prompt
//          conditioning of the decoder
enum class Variant { DBC, VGF, PVGF };

inline Variant parse_variant(const std::string& s) {
  const std::string v = lowercase(s);
  if (v == "dbc") return Variant::DBC;
  if (v == "vgf" || v == "vgf-dpc") return Variant::VGF;
  if (v == "pvgf" || v == "pvgf-dpc") return Variant::PVGF;
  throw ConfigError("unknown variant '" + s + "' (expected dbc, vgf, or pvgf)");
}

inline std::string variant_name(Variant v) {
  switch (v) {
    case Variant::DBC: return "DBC";
    case Variant::VGF: return "VGF-DPC";
    case Variant::PVGF: return "PVGF-DPC";
  }
  throw ConfigError("unknown variant");
}

inline std::string variant_key(Variant v) {
  switch (v) {
    case Variant::DBC: return "dbc";
    case Variant::VGF: return "vgf";
    case Variant::PVGF: return "pvgf";
  }
  throw ConfigError("unknown variant");
}

struct CaptionModel {
  Variant variant = Variant::PVGF;
  EncoderConfig encoder_config;
  DecoderConfig decoder_config;
  int prompt_vector_count = 4;

  VisionEncoder encoder;
  CaptionDecoder decoder;
  std::optional<PromptModule> prompt;

  Vocabulary vocab;
  PromptCatalog catalog;

  static CaptionModel create(Variant variant, const EncoderConfig& enc_cfg, DecoderConfig dec_cfg,
                             int prompt_vector_count, Vocabulary vocab, PromptCatalog catalog, std::uint64_t seed) {
    CaptionModel m;
    m.variant = variant;
    m.encoder_config = enc_cfg;
    dec_cfg.vocab_size = vocab.size();
    dec_cfg.feature_dim = enc_cfg.head_channels;
    m.decoder_config = dec_cfg;
    m.prompt_vector_count = prompt_vector_count;
    m.vocab = std::move(vocab);
    m.catalog = std::move(catalog);

    Rng rng(mix_seed(seed, 0x494e4954ULL));  // "INIT" stream
    m.encoder = VisionEncoder(enc_cfg, rng);
    m.decoder = CaptionDecoder(dec_cfg, rng);
    if (variant != Variant::DBC) {
      const int m_vectors = variant == Variant::PVGF ? prompt_vector_count : 0;
      m.prompt = PromptModule(m.catalog, enc_cfg.head_channels, m_vectors, dec_cfg.model_dim, rng);
    }
    return m;
  }

  bool has_prompt_classifier() const { return prompt.has_value(); }
  bool has_prompt_conditioning() const { return variant == Variant::PVGF; }

  std::vector<std::pair<std::string, Tensor>> named_params() const {
    std::vector<std::pair<std::string, Tensor>> out;
    encoder.collect_params(out);
    decoder.collect_params(out);
    if (prompt) prompt->collect_params(out);
    return out;
  }

  long long param_count() const {
    long long n = 0;
    for (const auto& [name, t] : named_params()) n += t.numel();
    return n;
  }

  // Prompt embedding sequence for a label, or an empty tensor when this
  // variant does not condition the decoder on prompts.
  Tensor prompt_embeddings_for(int label_index) const {
    if (!has_prompt_conditioning()) return Tensor();
    return prompt->build_prompt(label_index, vocab, decoder.token_embedding());
  }
};

}  // namespace pvgf
