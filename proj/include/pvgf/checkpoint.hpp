#pragma once

#include <array>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "pvgf/config.hpp"
#include "pvgf/model.hpp"
#include "pvgf/optim.hpp"

namespace pvgf {

// Checkpoint container: "PVGF" magic, u32 version, u64 header length, JSON
// header (config snapshot, vocab, catalog, epoch, optimizer step, RNG state),
// then named little-endian float64 parameter blocks. Model parameters are
// stored under their registry names; optimizer moments under
// "adam.m.<name>" / "adam.v.<name>".

inline constexpr std::uint32_t kCheckpointVersion = 1;

inline std::vector<std::uint8_t> serialize_checkpoint(const CaptionModel& model, const RunConfig& config,
                                                      int epochs_done, const AdamW& opt, const Rng& rng) {
  nlohmann::ordered_json header;
  header["format"] = kCheckpointVersion;
  header["epoch"] = epochs_done;
  header["adam_step"] = opt.step_count();
  nlohmann::ordered_json rng_state = nlohmann::ordered_json::array();
  for (auto word : rng.state()) rng_state.push_back(hex_u64(word));
  header["rng"] = rng_state;
  header["variant"] = variant_key(model.variant);
  header["config"] = config.json();
  header["vocab"] = model.vocab.tokens();
  header["catalog"] = {{"labels", model.catalog.labels}, {"label_texts", model.catalog.label_texts}};

  std::vector<std::pair<std::string, std::vector<double>>> blocks;
  for (const auto& [name, t] : model.named_params()) blocks.emplace_back(name, t.values());
  for (std::size_t k = 0; k < opt.params().size(); ++k) {
    blocks.emplace_back("adam.m." + opt.params()[k].first, opt.moment1(k));
    blocks.emplace_back("adam.v." + opt.params()[k].first, opt.moment2(k));
  }

  std::vector<std::uint8_t> out;
  out.insert(out.end(), {'P', 'V', 'G', 'F'});
  write_u32_le(out, kCheckpointVersion);
  const std::string header_text = header.dump();
  write_u64_le(out, header_text.size());
  out.insert(out.end(), header_text.begin(), header_text.end());
  write_u64_le(out, blocks.size());
  for (const auto& [name, values] : blocks) {
    write_u64_le(out, name.size());
    out.insert(out.end(), name.begin(), name.end());
    write_u64_le(out, values.size());
    for (double v : values) write_f64_le(out, v);
  }
  return out;
}

inline void save_checkpoint(const std::string& path, const CaptionModel& model, const RunConfig& config,
                            int epochs_done, const AdamW& opt, const Rng& rng) {
  write_file_bytes(path, serialize_checkpoint(model, config, epochs_done, opt, rng));
}

struct LoadedCheckpoint {
  RunConfig config = RunConfig::defaults();
  CaptionModel model;
  int epochs_done = 0;
  long long adam_step = 0;
  std::array<std::uint64_t, 4> rng_state{};
  std::map<std::string, std::vector<double>> blocks;  // includes optimizer moments
};

inline LoadedCheckpoint load_checkpoint(const std::string& path) {
  const auto bytes = read_file_bytes(path);
  ByteReader reader(bytes.data(), bytes.size());
  if (reader.bytes(4) != "PVGF") throw DataError("checkpoint " + path + ": bad magic");
  const std::uint32_t version = reader.u32();
  if (version != kCheckpointVersion)
    throw DataError("checkpoint " + path + ": unsupported version " + std::to_string(version));
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(reader.bytes(reader.u64()));
  } catch (const nlohmann::json::exception& e) {
    throw DataError("checkpoint " + path + ": corrupt header (" + std::string(e.what()) + ")");
  }

  LoadedCheckpoint ck;
  ck.config.merge(header.at("config"));
  ck.epochs_done = header.at("epoch").get<int>();
  ck.adam_step = header.at("adam_step").get<long long>();
  const auto rng_words = header.at("rng").get<std::vector<std::string>>();
  if (rng_words.size() != 4) throw DataError("checkpoint " + path + ": bad RNG state");
  for (std::size_t i = 0; i < 4; ++i) ck.rng_state[i] = parse_hex_u64(rng_words[i]);

  Vocabulary vocab(header.at("vocab").get<std::vector<std::string>>());
  PromptCatalog catalog;
  catalog.labels = header.at("catalog").at("labels").get<std::vector<std::string>>();
  catalog.label_texts = header.at("catalog").at("label_texts").get<std::vector<std::string>>();

  const Variant variant = parse_variant(header.at("variant").get<std::string>());
  ck.model = CaptionModel::create(variant, ck.config.encoder_config(), ck.config.decoder_config(),
                                  ck.config.get_int("prompt.vectors"), std::move(vocab), std::move(catalog),
                                  ck.config.seed());

  const std::uint64_t num_blocks = reader.u64();
  for (std::uint64_t b = 0; b < num_blocks; ++b) {
    const std::string name = reader.bytes(reader.u64());
    const std::uint64_t count = reader.u64();
    std::vector<double> values(count);
    for (std::uint64_t i = 0; i < count; ++i) values[i] = reader.f64();
    ck.blocks[name] = std::move(values);
  }

  for (auto& [name, t] : ck.model.named_params()) {
    auto it = ck.blocks.find(name);
    if (it == ck.blocks.end()) throw DataError("checkpoint " + path + ": missing parameter block '" + name + "'");
    if (it->second.size() != static_cast<std::size_t>(t.numel()))
      throw DataError("checkpoint " + path + ": parameter block '" + name + "' has wrong size");
    Tensor tensor = t;
    for (long long i = 0; i < tensor.numel(); ++i) tensor[i] = it->second[static_cast<std::size_t>(i)];
  }
  return ck;
}

// Restores moment estimates and the step counter into a freshly built
// optimizer whose parameter list matches the checkpoint.
inline void restore_optimizer(AdamW& opt, const LoadedCheckpoint& ck) {
  for (std::size_t k = 0; k < opt.params().size(); ++k) {
    const std::string& name = opt.params()[k].first;
    auto m_it = ck.blocks.find("adam.m." + name);
    auto v_it = ck.blocks.find("adam.v." + name);
    if (m_it == ck.blocks.end() || v_it == ck.blocks.end())
      throw DataError("checkpoint: missing optimizer moments for '" + name + "'");
    opt.restore(k, m_it->second, v_it->second);
  }
  opt.set_step_count(ck.adam_step);
}

}  // namespace pvgf
