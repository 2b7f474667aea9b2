#pragma once

#include <limits>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "pvgf/data.hpp"
#include "pvgf/encoder.hpp"
#include "pvgf/ops.hpp"

namespace pvgf {

enum class PromptPlacement { Prefix, Suffix };

inline PromptPlacement parse_prompt_placement(const std::string& s) {
  if (s == "prefix") return PromptPlacement::Prefix;
  if (s == "suffix") return PromptPlacement::Suffix;
  throw ConfigError("decoder: prompt placement must be 'prefix' or 'suffix', got '" + s + "'");
}

struct DecoderConfig {
  int num_layers = 2;
  int model_dim = 64;
  int num_heads = 4;
  int ffn_dim = 128;
  int max_seq_len = 64;
  int vocab_size = 0;
  int feature_dim = 64;  // encoder head_channels
  PromptPlacement prompt_placement = PromptPlacement::Prefix;
  double ln_eps = 1e-5;

  void validate() const {
    if (num_layers < 1) throw ConfigError("decoder: num_layers must be >= 1");
    if (model_dim < 1 || num_heads < 1 || model_dim % num_heads != 0)
      throw ConfigError("decoder: model_dim must be a positive multiple of num_heads");
    if (ffn_dim < 1) throw ConfigError("decoder: ffn_dim must be >= 1");
    if (max_seq_len < 2) throw ConfigError("decoder: max_seq_len must be >= 2");
    if (vocab_size < 1) throw ConfigError("decoder: vocab_size must be >= 1");
    if (feature_dim < 1) throw ConfigError("decoder: feature_dim must be >= 1");
    if (!(ln_eps > 0)) throw ConfigError("decoder: ln_eps must be positive");
  }
};

struct AttentionParams {
  Tensor wq, bq, wk, bk, wv, bv;  // [d, d], [d]
  Tensor wo, bo;                  // [d, d], [d]
};

struct CodingLayerParams {
  AttentionParams attn;
  Tensor ffn_w1, ffn_b1;  // [d, ffn], [ffn]
  Tensor ffn_w2, ffn_b2;  // [ffn, d], [d]
  Tensor ln1_gamma, ln1_beta, ln2_gamma, ln2_beta;  // [d]
};

// Additive causal mask: 0 where position i may attend j (j <= i), -inf above
// the diagonal.
inline Tensor causal_mask(int t) {
  Tensor m = Tensor::zeros({t, t});
  const double ninf = -std::numeric_limits<double>::infinity();
  for (int i = 0; i < t; ++i)
    for (int j = i + 1; j < t; ++j) m.at2(i, j) = ninf;
  return m;
}

// Transformer decoder whose layer normalization receives the projected image
// feature vector at every layer: scaled dot-product attention, then
// LN(x + attention + I), a ReLU feed-forward, then LN(x' + ffn + I).
class CaptionDecoder {
 public:
  CaptionDecoder() = default;

  CaptionDecoder(const DecoderConfig& cfg, Rng& rng) : cfg_(cfg) {
    cfg_.validate();
    const int d = cfg.model_dim;
    token_embedding_ = glorot_uniform({cfg.vocab_size, d}, cfg.vocab_size, d, rng);
    pos_embedding_ = glorot_uniform({cfg.max_seq_len, d}, cfg.max_seq_len, d, rng);
    feature_w_ = glorot_uniform({cfg.feature_dim, d}, cfg.feature_dim, d, rng);
    feature_b_ = Tensor::zeros({d}, true);
    for (int l = 0; l < cfg.num_layers; ++l) {
      CodingLayerParams p;
      p.attn.wq = glorot_uniform({d, d}, d, d, rng);
      p.attn.bq = Tensor::zeros({d}, true);
      p.attn.wk = glorot_uniform({d, d}, d, d, rng);
      p.attn.bk = Tensor::zeros({d}, true);
      p.attn.wv = glorot_uniform({d, d}, d, d, rng);
      p.attn.bv = Tensor::zeros({d}, true);
      p.attn.wo = glorot_uniform({d, d}, d, d, rng);
      p.attn.bo = Tensor::zeros({d}, true);
      p.ffn_w1 = glorot_uniform({d, cfg.ffn_dim}, d, cfg.ffn_dim, rng);
      p.ffn_b1 = Tensor::zeros({cfg.ffn_dim}, true);
      p.ffn_w2 = glorot_uniform({cfg.ffn_dim, d}, cfg.ffn_dim, d, rng);
      p.ffn_b2 = Tensor::zeros({d}, true);
      p.ln1_gamma = Tensor::filled({d}, 1.0, true);
      p.ln1_beta = Tensor::zeros({d}, true);
      p.ln2_gamma = Tensor::filled({d}, 1.0, true);
      p.ln2_beta = Tensor::zeros({d}, true);
      layers_.push_back(std::move(p));
    }
    out_w_ = glorot_uniform({d, cfg.vocab_size}, d, cfg.vocab_size, rng);
    out_b_ = Tensor::zeros({cfg.vocab_size}, true);
  }

  const DecoderConfig& config() const { return cfg_; }
  const Tensor& token_embedding() const { return token_embedding_; }
  const std::vector<CodingLayerParams>& layers() const { return layers_; }

  // Projects the encoder feature vector into model space; shared by all layers.
  Tensor project_feature(const Tensor& e_x) const {
    if (e_x.ndim() != 1 || e_x.dim(0) != cfg_.feature_dim)
      throw ShapeError("project_feature: expected [" + std::to_string(cfg_.feature_dim) + "], got " +
                       shape_str(e_x.shape()));
    Tensor row = reshape(e_x, {1, cfg_.feature_dim});
    Tensor proj = add_bias(matmul(row, feature_w_), feature_b_);
    return reshape(proj, {cfg_.model_dim});
  }

  Tensor multi_head_attention(const Tensor& x, const Tensor& mask, const AttentionParams& p) const {
    const int d = cfg_.model_dim;
    const int heads = cfg_.num_heads;
    const int dk = d / heads;
    Tensor q = add_bias(matmul(x, p.wq), p.bq);
    Tensor k = add_bias(matmul(x, p.wk), p.bk);
    Tensor v = add_bias(matmul(x, p.wv), p.bv);
    std::vector<Tensor> head_outputs;
    head_outputs.reserve(static_cast<std::size_t>(heads));
    for (int h = 0; h < heads; ++h) {
      Tensor qh = slice_cols(q, h * dk, (h + 1) * dk);
      Tensor kh = slice_cols(k, h * dk, (h + 1) * dk);
      Tensor vh = slice_cols(v, h * dk, (h + 1) * dk);
      Tensor scores = scale(matmul(qh, transpose(kh)), 1.0 / std::sqrt(static_cast<double>(dk)));
      if (mask.defined()) scores = add(scores, mask);
      Tensor weights = softmax(scores, 1);
      head_outputs.push_back(matmul(weights, vh));
    }
    Tensor merged = heads == 1 ? head_outputs[0] : concat_cols(head_outputs);
    return add_bias(matmul(merged, p.wo), p.bo);
  }

  Tensor coding_layer(const Tensor& x, const Tensor& injected, const Tensor& mask,
                      const CodingLayerParams& p) const {
    Tensor att = multi_head_attention(x, mask, p.attn);
    Tensor x1 = layer_norm_injected(x, att, injected, p.ln1_gamma, p.ln1_beta, cfg_.ln_eps);
    Tensor ff = add_bias(matmul(relu(add_bias(matmul(x1, p.ffn_w1), p.ffn_b1)), p.ffn_w2), p.ffn_b2);
    return layer_norm_injected(x1, ff, injected, p.ln2_gamma, p.ln2_beta, cfg_.ln_eps);
  }

  // Assembles prompt + token embeddings per the configured placement, adds
  // positional embeddings, and runs the coding layers. Returns [T x V] logits
  // over the combined sequence.
  Tensor forward(const std::vector<int>& tokens, const Tensor& prompt_embeddings, const Tensor& e_x) const {
    Tensor tok = embedding_lookup(token_embedding_, tokens);
    Tensor seq;
    if (prompt_embeddings.defined()) {
      if (prompt_embeddings.ndim() != 2 || prompt_embeddings.dim(1) != cfg_.model_dim)
        throw ShapeError("forward: prompt embeddings must be [T x " + std::to_string(cfg_.model_dim) + "], got " +
                         shape_str(prompt_embeddings.shape()));
      seq = cfg_.prompt_placement == PromptPlacement::Prefix ? concat_rows({prompt_embeddings, tok})
                                                             : concat_rows({tok, prompt_embeddings});
    } else {
      seq = tok;
    }
    const int t = seq.dim(0);
    if (t > cfg_.max_seq_len)
      throw LengthError("forward: sequence of length " + std::to_string(t) + " exceeds max_seq_len " +
                        std::to_string(cfg_.max_seq_len));
    std::vector<int> positions(static_cast<std::size_t>(t));
    std::iota(positions.begin(), positions.end(), 0);
    seq = add(seq, embedding_lookup(pos_embedding_, positions));

    Tensor injected = project_feature(e_x);
    Tensor mask = causal_mask(t);
    for (const auto& layer : layers_) seq = coding_layer(seq, injected, mask, layer);
    return add_bias(matmul(seq, out_w_), out_b_);
  }

  // Greedy decoding: BOS after the prompt prefix, argmax next token (ties to
  // the lowest id), stop at EOS or max_new_tokens. Returns the caption body
  // without BOS/EOS. Under suffix placement a prompt cannot condition
  // generation causally, so it is dropped here.
  std::vector<int> generate(const Tensor& e_x, const Tensor& prompt, int max_new_tokens) const {
    if (max_new_tokens < 1) throw ConfigError("generate: max_new_tokens must be >= 1");
    const Tensor prompt_embeddings =
        cfg_.prompt_placement == PromptPlacement::Prefix ? prompt : Tensor();
    const int prompt_len = prompt_embeddings.defined() ? prompt_embeddings.dim(0) : 0;
    std::vector<int> tokens = {Vocabulary::kBos};
    std::vector<int> body;
    while (static_cast<int>(body.size()) < max_new_tokens &&
           prompt_len + static_cast<int>(tokens.size()) < cfg_.max_seq_len) {
      Tensor logits = forward(tokens, prompt_embeddings, e_x);
      const int t = logits.dim(0);
      const int next = argmax_lowest(logits.data() + static_cast<long long>(t - 1) * cfg_.vocab_size, cfg_.vocab_size);
      if (next == Vocabulary::kEos) break;
      body.push_back(next);
      tokens.push_back(next);
    }
    return body;
  }

  void collect_params(std::vector<std::pair<std::string, Tensor>>& out) const {
    out.emplace_back("decoder.token_embedding", token_embedding_);
    out.emplace_back("decoder.pos_embedding", pos_embedding_);
    out.emplace_back("decoder.feature_proj.w", feature_w_);
    out.emplace_back("decoder.feature_proj.b", feature_b_);
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      const std::string prefix = "decoder.layer" + std::to_string(l) + ".";
      const auto& p = layers_[l];
      out.emplace_back(prefix + "attn.wq", p.attn.wq);
      out.emplace_back(prefix + "attn.bq", p.attn.bq);
      out.emplace_back(prefix + "attn.wk", p.attn.wk);
      out.emplace_back(prefix + "attn.bk", p.attn.bk);
      out.emplace_back(prefix + "attn.wv", p.attn.wv);
      out.emplace_back(prefix + "attn.bv", p.attn.bv);
      out.emplace_back(prefix + "attn.wo", p.attn.wo);
      out.emplace_back(prefix + "attn.bo", p.attn.bo);
      out.emplace_back(prefix + "ffn.w1", p.ffn_w1);
      out.emplace_back(prefix + "ffn.b1", p.ffn_b1);
      out.emplace_back(prefix + "ffn.w2", p.ffn_w2);
      out.emplace_back(prefix + "ffn.b2", p.ffn_b2);
      out.emplace_back(prefix + "ln1.gamma", p.ln1_gamma);
      out.emplace_back(prefix + "ln1.beta", p.ln1_beta);
      out.emplace_back(prefix + "ln2.gamma", p.ln2_gamma);
      out.emplace_back(prefix + "ln2.beta", p.ln2_beta);
    }
    out.emplace_back("decoder.output.w", out_w_);
    out.emplace_back("decoder.output.b", out_b_);
  }

 private:
  DecoderConfig cfg_;
  Tensor token_embedding_;
  Tensor pos_embedding_;
  Tensor feature_w_, feature_b_;
  std::vector<CodingLayerParams> layers_;
  Tensor out_w_, out_b_;
};

// Builds the shifted-target vector for the text loss over a combined
// (prompt + caption) sequence. tokens = [BOS, w1..wn]; supervised targets are
// [w1..wn, EOS] at the caption positions; prompt rows carry ignore_index.
inline std::vector<int> shifted_targets(const std::vector<int>& tokens, int next_after_last, int prompt_len,
                                        PromptPlacement placement, int ignore_index) {
  const int tc = static_cast<int>(tokens.size());
  std::vector<int> targets;
  targets.reserve(static_cast<std::size_t>(prompt_len + tc));
  auto push_caption_targets = [&] {
    for (int i = 0; i + 1 < tc; ++i) targets.push_back(tokens[static_cast<std::size_t>(i) + 1]);
    targets.push_back(next_after_last);
  };
  if (placement == PromptPlacement::Prefix) {
    for (int i = 0; i < prompt_len; ++i) targets.push_back(ignore_index);
    push_caption_targets();
  } else {
    push_caption_targets();
    for (int i = 0; i < prompt_len; ++i) targets.push_back(ignore_index);
  }
  return targets;
}

// Mean token-level negative log-likelihood over caption positions only.
inline Tensor text_loss(const Tensor& logits, const std::vector<int>& targets, int ignore_index) {
  return cross_entropy(logits, targets, ignore_index);
}

}  // namespace pvgf
