#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "pvgf/checkpoint.hpp"
#include "pvgf/config.hpp"
#include "pvgf/image.hpp"
#include "pvgf/metrics.hpp"
#include "pvgf/model.hpp"
#include "pvgf/optim.hpp"

namespace pvgf {

inline constexpr int kIgnoreIndex = -1;

struct TrainConfig {
  int batch_size = 8;
  double lr = 1e-5;
  double lr_decay_factor = 0.8;
  int lr_decay_every = 8;
  double weight_decay = 0.01;
  double alpha = 1.0;
  double lambda = 1.0;
  int epochs = 16;
  std::uint64_t seed = 42;
  Variant variant = Variant::PVGF;
  double grad_clip = 5.0;
  bool freeze_encoder = false;

  void validate() const {
    if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
    if (alpha < 0 || lambda < 0) throw ConfigError("train: alpha and lambda must be >= 0");
    if (!(lr_decay_factor > 0 && lr_decay_factor <= 1))
      throw ConfigError("train: lr_decay_factor must be in (0, 1]");
    if (lr_decay_every < 1) throw ConfigError("train: lr_decay_every must be >= 1");
    if (epochs < 0) throw ConfigError("train: epochs must be >= 0");
  }
};

inline TrainConfig train_config_from(const RunConfig& cfg) {
  TrainConfig t;
  t.batch_size = cfg.get_int("train.batch_size");
  t.lr = cfg.get_double("train.lr");
  t.lr_decay_factor = cfg.get_double("train.lr_decay_factor");
  t.lr_decay_every = cfg.get_int("train.lr_decay_every");
  t.weight_decay = cfg.get_double("train.weight_decay");
  t.alpha = cfg.get_double("train.alpha");
  t.lambda = cfg.get_double("train.lambda");
  t.epochs = cfg.get_int("train.epochs");
  t.seed = cfg.seed();
  t.variant = cfg.variant();
  t.grad_clip = cfg.get_double("train.grad_clip");
  t.freeze_encoder = cfg.get_bool("train.freeze_encoder");
  t.validate();
  return t;
}

// The three ablation variants share every hyperparameter; DBC drops the
// prompt term entirely (no prompt parameters exist, so lambda is forced to 0).
inline TrainConfig ablation_variant(Variant variant, TrainConfig base) {
  base.variant = variant;
  if (variant == Variant::DBC) base.lambda = 0.0;
  return base;
}

// alpha * text + lambda * prompt.
inline Tensor fusion_loss(const Tensor& text_loss, const Tensor& prompt_loss, double alpha, double lambda) {
  return add(scale(text_loss, alpha), scale(prompt_loss, lambda));
}

// ---------------------------------------------------------------------------
// per-batch forward/backward

struct TrainSample {
  Tensor image;                 // [H, W, 3]
  std::vector<int> token_ids;   // BOS + caption tokens + EOS, no padding
  int label_index = 0;
  std::string caption;
  std::string image_path;
};

// BOS + tokens + EOS without padding; used by the in-memory training path.
inline std::vector<int> encode_caption_trimmed(const std::string& text, const Vocabulary& vocab, int max_len) {
  auto ids = encode_caption(text, vocab, max_len);
  while (!ids.empty() && ids.back() == Vocabulary::kPad) ids.pop_back();
  return ids;
}

struct LossBreakdown {
  double text = 0.0;
  double prompt = 0.0;
  double fusion = 0.0;
};

// Builds the full differentiable graph for one batch and returns the fusion
// loss tensor plus its components. Teacher forcing: prompts are built from
// the ground-truth labels.
inline Tensor batch_losses(const CaptionModel& model, const std::vector<TrainSample>& batch, double alpha,
                           double lambda, LossBreakdown& out) {
  if (batch.empty()) throw EmptyBatchError("train_step: empty batch");

  std::vector<Tensor> features;
  features.reserve(batch.size());
  for (const auto& s : batch) features.push_back(model.encoder.encode(s.image));

  Tensor prompt_term = Tensor::scalar(0.0);
  if (model.has_prompt_classifier()) {
    std::vector<int> labels;
    for (const auto& s : batch) labels.push_back(s.label_index);
    Tensor stacked = concat_rows(features);
    ClassifyResult cls = model.prompt->classify(stacked);
    prompt_term = prompt_loss(cls.probabilities, labels);
  }

  std::vector<Tensor> all_logits;
  std::vector<int> all_targets;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto& s = batch[i];
    if (s.token_ids.size() < 2) throw DataError("train_step: caption for " + s.image_path + " has no tokens");
    std::vector<int> input_tokens(s.token_ids.begin(), s.token_ids.end() - 1);
    const int final_target = s.token_ids.back();  // EOS
    Tensor prompt_emb = model.prompt_embeddings_for(s.label_index);
    const int prompt_len = prompt_emb.defined() ? prompt_emb.dim(0) : 0;
    Tensor logits = model.decoder.forward(input_tokens, prompt_emb, features[i]);
    const auto targets = shifted_targets(input_tokens, final_target, prompt_len,
                                         model.decoder.config().prompt_placement, kIgnoreIndex);
    all_logits.push_back(logits);
    all_targets.insert(all_targets.end(), targets.begin(), targets.end());
  }
  Tensor logits = all_logits.size() == 1 ? all_logits[0] : concat_rows(all_logits);
  Tensor text_term = text_loss(logits, all_targets, kIgnoreIndex);

  out.text = text_term.item();
  out.prompt = prompt_term.item();
  if (!std::isfinite(out.text)) throw DivergenceError("training diverged: text loss is not finite");
  if (!std::isfinite(out.prompt)) throw DivergenceError("training diverged: prompt loss is not finite");
  Tensor fused = fusion_loss(text_term, prompt_term, alpha, lambda);
  out.fusion = fused.item();
  if (!std::isfinite(out.fusion)) throw DivergenceError("training diverged: fusion loss is not finite");
  return fused;
}

// One optimization step over a batch: forward, backward, clip, AdamW update.
inline LossBreakdown train_step(const CaptionModel& model, const std::vector<TrainSample>& batch, AdamW& opt,
                                const TrainConfig& cfg, double lr) {
  LossBreakdown losses;
  Tape tape;
  Tensor fused = batch_losses(model, batch, cfg.alpha, cfg.lambda, losses);
  tape.backward(fused);
  clip_global_norm(opt.params(), cfg.grad_clip);
  opt.step(lr);
  return losses;
}

// ---------------------------------------------------------------------------
// training loop

struct EpochLog {
  int epoch = 0;
  double text = 0.0, prompt = 0.0, fusion = 0.0, lr = 0.0;
};

struct TrainResult {
  CaptionModel model;
  AdamW opt;
  Rng rng;
  std::vector<EpochLog> log;
  SplitIndices split;
  RunConfig config = RunConfig::defaults();
};

inline std::string loss_csv_text(const std::vector<EpochLog>& log) {
  std::string out = "epoch,text_loss,prompt_loss,fusion_loss,lr\n";
  for (const auto& e : log)
    out += std::to_string(e.epoch) + "," + format_double(e.text) + "," + format_double(e.prompt) + "," +
           format_double(e.fusion) + "," + format_double(e.lr) + "\n";
  return out;
}

inline std::vector<TrainSample> load_train_samples(const Dataset& dataset, const std::vector<std::size_t>& indices,
                                                   const Vocabulary& vocab, const PromptCatalog& catalog,
                                                   int max_caption_len) {
  std::vector<TrainSample> out(indices.size());
  parallel_for(indices.size(), [&](std::size_t k) {
    const CaptionSample& s = dataset.samples[indices[k]];
    TrainSample t;
    t.image = png_read(dataset.image_file(s).string());
    t.token_ids = encode_caption_trimmed(s.caption, vocab, max_caption_len);
    t.label_index = catalog.index_of(s.category);
    t.caption = s.caption;
    t.image_path = s.image_path;
    out[k] = std::move(t);
  });
  return out;
}

// Runs the configured number of epochs (optionally resuming) and writes
// checkpoint.pvgf plus loss_log.csv into out_dir. The split, vocabulary,
// catalog, parameter init, and shuffle order all derive from config values,
// so identical (config, seed) runs are byte-identical.
inline TrainResult train(const Dataset& dataset, const RunConfig& config, const fs::path& out_dir,
                         const std::string& resume_checkpoint = "", std::ostream& log_stream = std::cerr) {
  if (dataset.samples.empty()) throw ConfigError("train: empty dataset");
  const TrainConfig tcfg = ablation_variant(config.variant(), train_config_from(config));
  fs::create_directories(out_dir);

  TrainResult result;
  result.config = config;
  result.split = split_dataset(dataset, config.get_double("split.train"), config.get_double("split.val"), tcfg.seed);
  if (result.split.train.empty()) throw ConfigError("train: train split is empty");

  int epochs_done = 0;
  std::optional<LoadedCheckpoint> resume;
  if (resume_checkpoint.empty()) {
    std::vector<std::string> captions;
    for (std::size_t idx : result.split.train) captions.push_back(dataset.samples[idx].caption);
    Vocabulary vocab = build_vocab(captions, config.get_int("data.min_count"));
    PromptCatalog catalog = catalog_from_samples(dataset.samples);
    result.model = CaptionModel::create(tcfg.variant, config.encoder_config(), config.decoder_config(),
                                        config.get_int("prompt.vectors"), std::move(vocab), std::move(catalog),
                                        tcfg.seed);
    result.rng = Rng(mix_seed(tcfg.seed, 0x545241494eULL));  // "TRAIN" stream
  } else {
    resume = load_checkpoint(resume_checkpoint);
    if (resume->model.variant != tcfg.variant)
      throw ConfigError("resume: checkpoint variant " + variant_name(resume->model.variant) +
                        " does not match configured variant " + variant_name(tcfg.variant));
    result.model = std::move(resume->model);
    result.rng.set_state(resume->rng_state);
    epochs_done = resume->epochs_done;
  }

  auto trainable = result.model.named_params();
  if (tcfg.freeze_encoder)
    std::erase_if(trainable, [](const auto& p) { return p.first.rfind("encoder.", 0) == 0; });
  result.opt = AdamW(std::move(trainable), tcfg.weight_decay);
  if (resume) restore_optimizer(result.opt, *resume);

  log_stream << "variant: " << variant_name(result.model.variant) << "\n";
  log_stream << "prompt module: " << (result.model.has_prompt_classifier() ? "enabled" : "disabled") << "\n";
  log_stream << "prompt conditioning: " << (result.model.has_prompt_conditioning() ? "enabled" : "disabled") << "\n";
  log_stream << "parameters: " << result.model.param_count() << "\n";
  log_stream << "train/val/test: " << result.split.train.size() << "/" << result.split.val.size() << "/"
             << result.split.test.size() << "\n";

  auto samples = load_train_samples(dataset, result.split.train, result.model.vocab, result.model.catalog,
                                    config.get_int("data.max_caption_len"));

  for (int epoch = epochs_done + 1; epoch <= tcfg.epochs; ++epoch) {
    const double lr = scheduled_lr(tcfg.lr, tcfg.lr_decay_factor, tcfg.lr_decay_every, epoch);
    std::vector<std::size_t> order(samples.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    result.rng.shuffle(order);

    LossBreakdown epoch_sums;
    int steps = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(tcfg.batch_size)) {
      std::vector<TrainSample> batch;
      for (std::size_t i = start; i < std::min(order.size(), start + static_cast<std::size_t>(tcfg.batch_size)); ++i)
        batch.push_back(samples[order[i]]);
      const LossBreakdown losses = train_step(result.model, batch, result.opt, tcfg, lr);
      epoch_sums.text += losses.text;
      epoch_sums.prompt += losses.prompt;
      epoch_sums.fusion += losses.fusion;
      ++steps;
    }
    EpochLog entry;
    entry.epoch = epoch;
    entry.text = epoch_sums.text / steps;
    entry.prompt = epoch_sums.prompt / steps;
    entry.fusion = epoch_sums.fusion / steps;
    entry.lr = lr;
    result.log.push_back(entry);
    log_stream << "epoch " << epoch << " lr " << format_double(lr) << " text " << format_fixed(entry.text, 6)
               << " prompt " << format_fixed(entry.prompt, 6) << " fusion " << format_fixed(entry.fusion, 6) << "\n";
  }

  save_checkpoint((out_dir / "checkpoint.pvgf").string(), result.model, config, std::max(epochs_done, tcfg.epochs),
                  result.opt, result.rng);
  write_file_text((out_dir / "loss_log.csv").string(), loss_csv_text(result.log));
  return result;
}

// ---------------------------------------------------------------------------
// inference helpers

struct GeneratedCaption {
  std::string image_path;
  std::string category;     // predicted label, empty when no classifier exists
  std::string prompt_text;  // rendered template, empty when no classifier exists
  std::string caption;
};

inline GeneratedCaption caption_image(const CaptionModel& model, const Tensor& image, const std::string& image_path,
                                      int max_new_tokens) {
  GeneratedCaption out;
  out.image_path = image_path;
  Tensor e_x = model.encoder.encode(image);
  Tensor prompt_emb;
  if (model.has_prompt_classifier()) {
    ClassifyResult cls = model.prompt->classify(e_x);
    const int predicted = cls.predicted[0];
    out.category = model.catalog.labels[static_cast<std::size_t>(predicted)];
    out.prompt_text = model.prompt->prompt_text(predicted);
    if (model.has_prompt_conditioning())
      prompt_emb = model.prompt->build_prompt(predicted, model.vocab, model.decoder.token_embedding());
  }
  const auto token_ids = model.decoder.generate(e_x, prompt_emb, max_new_tokens);
  out.caption = decode_tokens(token_ids, model.vocab);
  return out;
}

// Generates one caption per unique image in the given subset and scores it
// against every reference caption of that image.
inline metrics::MetricReport evaluate_on_subset(const CaptionModel& model, const Dataset& dataset,
                                                const std::vector<std::size_t>& indices, int max_new_tokens,
                                                const metrics::MetricConfig& mcfg) {
  std::vector<std::string> image_order;
  std::map<std::string, std::vector<std::string>> refs_by_image;
  for (std::size_t idx : indices) {
    const auto& s = dataset.samples[idx];
    if (!refs_by_image.count(s.image_path)) image_order.push_back(s.image_path);
    refs_by_image[s.image_path].push_back(s.caption);
  }
  if (image_order.empty()) throw ConfigError("evaluate: empty evaluation subset");

  std::vector<metrics::ScoredPair> pairs(image_order.size());
  parallel_for(image_order.size(), [&](std::size_t k) {
    const std::string& path = image_order[k];
    Tensor image = png_read((dataset.base_dir / path).string());
    const GeneratedCaption gen = caption_image(model, image, path, max_new_tokens);
    pairs[k] = metrics::make_pair(path, gen.caption, refs_by_image.at(path));
  });
  return metrics::evaluate(pairs, mcfg);
}

// ---------------------------------------------------------------------------
// ablation harness

struct AblationRow {
  Variant variant;
  metrics::MetricReport report;
  long long param_count = 0;
};

// Trains DBC, VGF-DPC, and PVGF-DPC under identical seeds/data and evaluates
// each on the held-out test split (val if the test split is empty).
inline std::vector<AblationRow> run_ablation(const Dataset& dataset, const RunConfig& base_config,
                                             const fs::path& out_dir, std::ostream& log_stream = std::cerr) {
  std::vector<AblationRow> rows;
  for (Variant variant : {Variant::DBC, Variant::VGF, Variant::PVGF}) {
    RunConfig config = base_config;
    config.set("train.variant", variant_key(variant));
    log_stream << "--- training " << variant_name(variant) << " ---\n";
    TrainResult result = train(dataset, config, out_dir / variant_key(variant), "", log_stream);
    const auto& eval_indices = result.split.test.empty() ? result.split.val : result.split.test;
    AblationRow row;
    row.variant = variant;
    row.param_count = result.model.param_count();
    row.report = evaluate_on_subset(result.model, dataset, eval_indices,
                                    base_config.get_int("caption.max_new_tokens"), base_config.metric_config());
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace pvgf
