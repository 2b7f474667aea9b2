#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "pvgf/augment.hpp"
#include "pvgf/decoder.hpp"
#include "pvgf/encoder.hpp"
#include "pvgf/metrics.hpp"
#include "pvgf/model.hpp"
#include "pvgf/synth.hpp"

namespace pvgf {

struct ConfigEntry {
  const char* key;
  const char* type;  // "int" | "float" | "string" | "bool"
  const char* default_text;
  const char* doc;
};

inline const std::vector<ConfigEntry>& config_schema() {
  static const std::vector<ConfigEntry> schema = {
      {"seed", "int", "42", "master seed for data generation, splits, init, and training"},
      {"synth.categories", "int", "7", "number of built-in synthetic categories to use (1..7)"},
      {"synth.per_category", "int", "8", "synthetic samples rendered per category"},
      {"synth.resolution", "int", "32", "synthetic image resolution in pixels (square)"},
      {"augment.multiplier", "int", "4", "expanded dataset size as a multiple of the originals"},
      {"augment.transforms", "string",
       "\"flip_h,rotate_90,rotate_180,rotate_270,rotate_12.5,crop_0.9,noise_0.02,jitter_0.15,sharpen_0.8\"",
       "comma-separated transform cycle; per-category override via augment.transforms.<category>"},
      {"data.manifest", "string", "\"\"", "input dataset manifest (JSONL)"},
      {"data.min_count", "int", "1", "minimum corpus frequency for a vocabulary token"},
      {"data.max_caption_len", "int", "32", "token budget per caption including BOS/EOS"},
      {"split.train", "float", "0.8", "train fraction of original images"},
      {"split.val", "float", "0.1", "validation fraction of original images (test gets the rest)"},
      {"encoder.resolution", "int", "32", "encoder input resolution; images must match"},
      {"encoder.stem_channels", "int", "8", "channels after the 3x3 stride-2 stem convolution"},
      {"encoder.blocks", "string", "\"1:8:1,2:12:2,2:16:1,2:24:2\"",
       "inverted residual blocks as expansion:out_channels:stride"},
      {"encoder.head_channels", "int", "64", "feature vector width after the 1x1 head conv + pooling"},
      {"decoder.layers", "int", "2", "number of coding layers"},
      {"decoder.model_dim", "int", "64", "decoder model width"},
      {"decoder.heads", "int", "4", "attention heads (model_dim must divide evenly)"},
      {"decoder.ffn_dim", "int", "128", "feed-forward hidden width"},
      {"decoder.max_seq_len", "int", "64", "maximum combined prompt+caption sequence length"},
      {"decoder.prompt_placement", "string", "\"prefix\"", "prompt position in the decoder input: prefix or suffix"},
      {"decoder.ln_eps", "float", "1e-5", "layer normalization epsilon"},
      {"prompt.vectors", "int", "4", "learnable prompt vectors spliced into the template"},
      {"train.batch_size", "int", "8", "samples per optimizer step"},
      {"train.lr", "float", "1e-5", "initial learning rate"},
      {"train.lr_decay_factor", "float", "0.8", "learning-rate decay factor"},
      {"train.lr_decay_every", "int", "8", "epochs between learning-rate decays"},
      {"train.weight_decay", "float", "0.01", "decoupled AdamW weight decay coefficient"},
      {"train.alpha", "float", "1.0", "fusion weight on the text loss"},
      {"train.lambda", "float", "1.0", "fusion weight on the prompt loss"},
      {"train.epochs", "int", "16", "training epochs"},
      {"train.variant", "string", "\"pvgf\"", "ablation variant: dbc, vgf, or pvgf"},
      {"train.grad_clip", "float", "5.0", "global gradient-norm clip (0 disables)"},
      {"train.freeze_encoder", "bool", "false", "exclude encoder parameters from optimization"},
      {"caption.max_new_tokens", "int", "24", "generation budget per caption"},
      {"eval.bleu_n", "int", "4", "highest BLEU order"},
      {"eval.meteor_eta", "float", "0.9", "METEOR precision/recall balance"},
      {"eval.meteor_penalty_weight", "float", "0.5", "METEOR fragmentation penalty weight"},
      {"eval.meteor_penalty_exponent", "float", "3.0", "METEOR fragmentation penalty exponent"},
      {"eval.rouge_mu", "float", "1.2", "ROUGE-L F-measure weighting"},
      {"eval.cider_n", "int", "4", "highest CIDEr n-gram order"},
      {"eval.cider_canonical", "bool", "false", "apply the 1/N factor and x10 scaling to CIDEr"},
  };
  return schema;
}

// Flat key/value configuration with schema-checked keys and dotted override
// flags. Unknown keys are rejected; every key has a documented default.
class RunConfig {
 public:
  static RunConfig defaults() {
    RunConfig cfg;
    for (const auto& e : config_schema()) cfg.values_[e.key] = nlohmann::json::parse(e.default_text);
    return cfg;
  }

  static RunConfig from_file(const std::string& path) {
    RunConfig cfg = defaults();
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(read_file_text(path));
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("config file " + path + ": invalid JSON (" + e.what() + ")");
    }
    if (!j.is_object()) throw ConfigError("config file " + path + ": expected a flat JSON object");
    for (auto it = j.begin(); it != j.end(); ++it) cfg.set(it.key(), it.value());
    return cfg;
  }

  void set(const std::string& key, const nlohmann::json& value) {
    const ConfigEntry* entry = find_entry(key);
    if (entry == nullptr && key.rfind("augment.transforms.", 0) == 0) {
      if (!value.is_string()) throw ConfigError("config key '" + key + "' must be a string");
      values_[key] = value;
      return;
    }
    if (entry == nullptr) throw ConfigError("unknown config key '" + key + "'");
    const std::string type = entry->type;
    if (type == "int" && !value.is_number_integer())
      throw ConfigError("config key '" + key + "' must be an integer");
    if (type == "float" && !value.is_number())
      throw ConfigError("config key '" + key + "' must be a number");
    if (type == "string" && !value.is_string())
      throw ConfigError("config key '" + key + "' must be a string");
    if (type == "bool" && !value.is_boolean())
      throw ConfigError("config key '" + key + "' must be a boolean");
    values_[key] = value;
  }

  // Parses "key=value" with the value read as JSON when possible, else as a
  // bare string.
  void apply_override(const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos)
      throw ConfigError("override '" + assignment + "' is not of the form key=value");
    const std::string key = assignment.substr(0, eq);
    const std::string text = assignment.substr(eq + 1);
    nlohmann::json value;
    try {
      value = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception&) {
      value = text;
    }
    // integer-typed keys accept "8" but not 8.5; float keys accept integers
    const ConfigEntry* entry = find_entry(key);
    if (entry && std::string(entry->type) == "float" && value.is_number_integer())
      value = value.get<double>();
    set(key, value);
  }

  int get_int(const std::string& key) const { return at(key).get<int>(); }
  double get_double(const std::string& key) const { return at(key).get<double>(); }
  std::string get_string(const std::string& key) const { return at(key).get<std::string>(); }
  bool get_bool(const std::string& key) const { return at(key).get<bool>(); }
  std::uint64_t seed() const { return static_cast<std::uint64_t>(at("seed").get<long long>()); }

  const nlohmann::json& json() const { return values_; }

  void merge(const nlohmann::json& obj) {
    for (auto it = obj.begin(); it != obj.end(); ++it) set(it.key(), it.value());
  }

  // Canonical serialized form (nlohmann::json orders keys); the hash appears
  // in report footers.
  std::string canonical() const { return values_.dump(); }
  std::uint64_t hash() const { return fnv1a64(canonical()); }

  // ------ typed views ------

  SynthConfig synth_config() const {
    SynthConfig s;
    s.categories = get_int("synth.categories");
    s.per_category = get_int("synth.per_category");
    s.resolution = get_int("synth.resolution");
    return s;
  }

  EncoderConfig encoder_config() const {
    EncoderConfig e;
    e.input_resolution = get_int("encoder.resolution");
    e.stem_channels = get_int("encoder.stem_channels");
    e.head_channels = get_int("encoder.head_channels");
    e.blocks.clear();
    for (const auto& part : split_string(get_string("encoder.blocks"), ',')) {
      const auto fields = split_string(part, ':');
      if (fields.size() != 3)
        throw ConfigError("encoder.blocks entry '" + part + "' must be expansion:out_channels:stride");
      EncoderBlockSpec b;
      try {
        b.expansion = std::stoi(fields[0]);
        b.out_channels = std::stoi(fields[1]);
        b.stride = std::stoi(fields[2]);
      } catch (...) {
        throw ConfigError("encoder.blocks entry '" + part + "' has non-numeric fields");
      }
      e.blocks.push_back(b);
    }
    e.validate();
    return e;
  }

  DecoderConfig decoder_config() const {
    DecoderConfig d;
    d.num_layers = get_int("decoder.layers");
    d.model_dim = get_int("decoder.model_dim");
    d.num_heads = get_int("decoder.heads");
    d.ffn_dim = get_int("decoder.ffn_dim");
    d.max_seq_len = get_int("decoder.max_seq_len");
    d.feature_dim = get_int("encoder.head_channels");
    d.prompt_placement = parse_prompt_placement(get_string("decoder.prompt_placement"));
    d.ln_eps = get_double("decoder.ln_eps");
    return d;
  }

  AugmentPlan augment_plan() const {
    AugmentPlan plan;
    plan.multiplier = get_int("augment.multiplier");
    for (const auto& name : split_string(get_string("augment.transforms"), ','))
      if (!name.empty()) plan.default_transforms.push_back(parse_transform(name));
    for (auto it = values_.begin(); it != values_.end(); ++it) {
      const std::string& key = it.key();
      if (key.rfind("augment.transforms.", 0) != 0) continue;
      const std::string category = key.substr(std::string("augment.transforms.").size());
      std::vector<TransformSpec> specs;
      for (const auto& name : split_string(it.value().get<std::string>(), ','))
        if (!name.empty()) specs.push_back(parse_transform(name));
      plan.per_category[category] = std::move(specs);
    }
    return plan;
  }

  metrics::MetricConfig metric_config() const {
    metrics::MetricConfig m;
    m.bleu_n = get_int("eval.bleu_n");
    m.meteor_eta = get_double("eval.meteor_eta");
    m.meteor_penalty_weight = get_double("eval.meteor_penalty_weight");
    m.meteor_penalty_exponent = get_double("eval.meteor_penalty_exponent");
    m.rouge_mu = get_double("eval.rouge_mu");
    m.cider_n = get_int("eval.cider_n");
    m.cider_canonical = get_bool("eval.cider_canonical");
    return m;
  }

  Variant variant() const { return parse_variant(get_string("train.variant")); }

 private:
  static const ConfigEntry* find_entry(const std::string& key) {
    for (const auto& e : config_schema())
      if (key == e.key) return &e;
    return nullptr;
  }

  const nlohmann::json& at(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
    return *it;
  }

  nlohmann::json values_ = nlohmann::json::object();
};

}  // namespace pvgf
