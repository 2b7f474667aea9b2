// pvgf: synthetic-corpus captioning toolkit
//
// Subcommands: synth, augment, train, caption, eval, ablate. Logs go to
// stderr; machine-readable outputs are written to files under --out.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "pvgf/augment.hpp"
#include "pvgf/checkpoint.hpp"
#include "pvgf/config.hpp"
#include "pvgf/metrics.hpp"
#include "pvgf/synth.hpp"
#include "pvgf/train.hpp"

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

struct CommonArgs {
  std::string config_path;
  std::vector<std::string> overrides;
  std::string out_dir;
  bool has_seed = false;
  std::uint64_t seed = 0;
  bool force = false;
};

void add_common_options(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--config", args.config_path, "flat JSON config file");
  cmd->add_option("--set", args.overrides, "dotted config override key=value (repeatable)");
  cmd->add_option("--out", args.out_dir, "output directory");
  cmd->add_option("--seed", args.seed, "override the master seed")->each([&args](const std::string&) {
    args.has_seed = true;
  });
  cmd->add_flag("--force", args.force, "allow writing into a non-empty output directory");
}

pvgf::RunConfig build_config(const CommonArgs& args) {
  pvgf::RunConfig cfg =
      args.config_path.empty() ? pvgf::RunConfig::defaults() : pvgf::RunConfig::from_file(args.config_path);
  for (const auto& o : args.overrides) cfg.apply_override(o);
  if (args.has_seed) cfg.set("seed", static_cast<long long>(args.seed));
  return cfg;
}

fs::path require_out_dir(const CommonArgs& args, bool refuse_non_empty) {
  if (args.out_dir.empty()) throw pvgf::ConfigError("--out is required for this command");
  const fs::path dir(args.out_dir);
  if (refuse_non_empty && !args.force && fs::exists(dir) && !fs::is_empty(dir))
    throw pvgf::ConfigError("output directory " + dir.string() + " is not empty (use --force to overwrite)");
  fs::create_directories(dir);
  return dir;
}

pvgf::Dataset load_dataset(const pvgf::RunConfig& cfg) {
  const std::string manifest = cfg.get_string("data.manifest");
  if (manifest.empty()) throw pvgf::ConfigError("data.manifest must point to a dataset manifest");
  return pvgf::load_manifest(manifest);
}

int cmd_synth(const CommonArgs& args) {
  const pvgf::RunConfig cfg = build_config(args);
  const fs::path out = require_out_dir(args, /*refuse_non_empty=*/true);
  const pvgf::Dataset ds = pvgf::generate_synthetic_corpus(cfg.synth_config(), cfg.seed(), out);
  std::map<std::string, int> counts;
  for (const auto& s : ds.samples) ++counts[s.category];
  std::cerr << "wrote " << ds.samples.size() << " samples to " << out.string() << "\n";
  for (const auto& [label, n] : counts) std::cerr << "  " << label << ": " << n << "\n";
  return 0;
}

int cmd_augment(const CommonArgs& args) {
  const pvgf::RunConfig cfg = build_config(args);
  const fs::path out = require_out_dir(args, /*refuse_non_empty=*/true);
  const pvgf::Dataset input = load_dataset(cfg);
  const pvgf::AugmentPlan plan = cfg.augment_plan();
  const pvgf::Dataset expanded = pvgf::expand_dataset(input, plan, cfg.seed(), out);
  std::cerr << "multiplier " << plan.multiplier << ": " << input.samples.size() << " -> "
            << expanded.samples.size() << " samples in " << out.string() << "\n";
  return 0;
}

int cmd_train(const CommonArgs& args, int layers_override, const std::string& variant_override,
              const std::string& resume) {
  pvgf::RunConfig cfg = build_config(args);
  if (layers_override > 0) cfg.set("decoder.layers", layers_override);
  if (!variant_override.empty()) cfg.set("train.variant", variant_override);
  const fs::path out = require_out_dir(args, /*refuse_non_empty=*/false);
  const pvgf::Dataset ds = load_dataset(cfg);
  pvgf::TrainResult result = pvgf::train(ds, cfg, out, resume);
  std::cerr << "checkpoint: " << (out / "checkpoint.pvgf").string() << "\n";
  std::cerr << "loss log: " << (out / "loss_log.csv").string() << "\n";
  return 0;
}

int cmd_caption(const CommonArgs& args, const std::string& checkpoint_path, const std::string& image_path,
                const std::string& manifest_path) {
  pvgf::RunConfig cfg = build_config(args);
  if (checkpoint_path.empty()) throw pvgf::ConfigError("--checkpoint is required");
  if (image_path.empty() == manifest_path.empty())
    throw pvgf::ConfigError("provide exactly one of --image or --manifest");
  const pvgf::LoadedCheckpoint ck = pvgf::load_checkpoint(checkpoint_path);
  const int max_new_tokens = cfg.get_int("caption.max_new_tokens");

  std::vector<std::pair<std::string, std::string>> inputs;  // (id, file)
  if (!image_path.empty()) {
    inputs.emplace_back(image_path, image_path);
  } else {
    const pvgf::Dataset ds = pvgf::load_manifest(manifest_path);
    std::set<std::string> seen;
    for (const auto& s : ds.samples)
      if (seen.insert(s.image_path).second)
        inputs.emplace_back(s.image_path, ds.image_file(s).string());
  }

  std::vector<pvgf::GeneratedCaption> results(inputs.size());
  pvgf::parallel_for(inputs.size(), [&](std::size_t i) {
    pvgf::Tensor image = pvgf::png_read(inputs[i].second);
    results[i] = pvgf::caption_image(ck.model, image, inputs[i].first, max_new_tokens);
  });

  std::ostream* out_stream = &std::cout;
  std::ofstream file;
  if (!args.out_dir.empty()) {
    const fs::path out = require_out_dir(args, /*refuse_non_empty=*/false);
    file.open(out / "captions.jsonl", std::ios::trunc);
    if (!file) throw pvgf::DataError("cannot write captions.jsonl");
    out_stream = &file;
  }
  for (const auto& r : results) {
    ordered_json j;
    j["image"] = r.image_path;
    if (ck.model.has_prompt_classifier()) {
      j["category"] = r.category;
      j["prompt"] = r.prompt_text;
    }
    j["caption"] = r.caption;
    (*out_stream) << j.dump() << "\n";
  }
  std::cerr << "captioned " << results.size() << " image(s)\n";
  return 0;
}

// candidates: JSONL {image_id, caption}; references: JSONL {image_id, caption}
// or {image_id, references: [...]}, multi-reference via repeated ids.
int cmd_eval(const CommonArgs& args, const std::string& candidates_path, const std::string& references_path) {
  const pvgf::RunConfig cfg = build_config(args);

  auto read_jsonl = [](const std::string& path) {
    std::ifstream f(path);
    if (!f) throw pvgf::DataError("cannot open " + path);
    std::vector<nlohmann::json> lines;
    std::string line;
    int lineno = 0;
    while (std::getline(f, line)) {
      ++lineno;
      if (line.empty()) continue;
      try {
        lines.push_back(nlohmann::json::parse(line));
      } catch (const nlohmann::json::exception& e) {
        throw pvgf::DataError(path + " line " + std::to_string(lineno) + ": invalid JSON (" + e.what() + ")");
      }
    }
    return lines;
  };

  std::vector<std::pair<std::string, std::string>> candidates;  // (id, text), insertion order
  std::set<std::string> cand_ids;
  for (const auto& j : read_jsonl(candidates_path)) {
    const std::string id = j.at("image_id").get<std::string>();
    const std::string text = j.contains("caption") ? j.at("caption").get<std::string>()
                                                   : j.at("candidate").get<std::string>();
    if (!cand_ids.insert(id).second) throw pvgf::DataError("duplicate candidate image_id: " + id);
    candidates.emplace_back(id, text);
  }
  if (candidates.empty()) throw pvgf::ConfigError("candidate file " + candidates_path + " is empty");

  std::map<std::string, std::vector<std::string>> references;
  for (const auto& j : read_jsonl(references_path)) {
    const std::string id = j.at("image_id").get<std::string>();
    if (j.contains("references"))
      for (const auto& r : j.at("references")) references[id].push_back(r.get<std::string>());
    else
      references[id].push_back(j.at("caption").get<std::string>());
  }

  std::vector<std::string> unmatched;
  for (const auto& [id, text] : candidates)
    if (!references.count(id)) unmatched.push_back("candidate without references: " + id);
  for (const auto& [id, refs] : references)
    if (!cand_ids.count(id)) unmatched.push_back("reference without candidate: " + id);
  if (!unmatched.empty()) {
    std::string msg = "candidate/reference id mismatch:";
    for (const auto& u : unmatched) msg += "\n  " + u;
    throw pvgf::DataError(msg);
  }

  std::vector<pvgf::metrics::ScoredPair> pairs;
  for (const auto& [id, text] : candidates)
    pairs.push_back(pvgf::metrics::make_pair(id, text, references.at(id)));

  const pvgf::metrics::MetricReport report = pvgf::metrics::evaluate(pairs, cfg.metric_config());
  const std::string table = pvgf::metrics::format_report_table({{"corpus", report}});
  std::cout << table;
  if (!args.out_dir.empty()) {
    const fs::path out = require_out_dir(args, /*refuse_non_empty=*/false);
    pvgf::write_file_text((out / "metrics.json").string(), pvgf::metrics::report_to_json(report).dump(2) + "\n");
    pvgf::write_file_text((out / "metrics.txt").string(), table);
    std::cerr << "wrote " << (out / "metrics.json").string() << "\n";
  }
  return 0;
}

int cmd_ablate(const CommonArgs& args, int layers_override) {
  pvgf::RunConfig cfg = build_config(args);
  if (layers_override > 0) cfg.set("decoder.layers", layers_override);
  const fs::path out = require_out_dir(args, /*refuse_non_empty=*/false);
  const pvgf::Dataset ds = load_dataset(cfg);

  const auto rows = pvgf::run_ablation(ds, cfg, out);
  std::vector<std::pair<std::string, pvgf::metrics::MetricReport>> table_rows;
  ordered_json report_json = ordered_json::array();
  for (const auto& row : rows) {
    table_rows.emplace_back(pvgf::variant_name(row.variant), row.report);
    ordered_json entry;
    entry["variant"] = pvgf::variant_name(row.variant);
    entry["param_count"] = row.param_count;
    entry["metrics"] = pvgf::metrics::report_to_json(row.report);
    report_json.push_back(entry);
  }
  std::string table = pvgf::metrics::format_report_table(table_rows);
  table += "# config=" + pvgf::hex_u64(cfg.hash()) + " seed=" + std::to_string(cfg.seed()) + "\n";
  std::cout << table;
  pvgf::write_file_text((out / "ablation_report.txt").string(), table);
  ordered_json full;
  full["rows"] = report_json;
  full["config_hash"] = pvgf::hex_u64(cfg.hash());
  full["seed"] = cfg.seed();
  pvgf::write_file_text((out / "ablation_report.json").string(), full.dump(2) + "\n");
  std::cerr << "wrote " << (out / "ablation_report.txt").string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"prompt-conditioned image captioning toolkit"};
  app.require_subcommand(1);

  CommonArgs synth_args, augment_args, train_args, caption_args, eval_args, ablate_args;
  int train_layers = 0, ablate_layers = 0;
  std::string train_variant, train_resume;
  std::string caption_checkpoint, caption_image_path, caption_manifest;
  std::string eval_candidates, eval_references;

  CLI::App* synth = app.add_subcommand("synth", "generate the synthetic corpus");
  add_common_options(synth, synth_args);

  CLI::App* augment = app.add_subcommand("augment", "expand a dataset with augmented copies");
  add_common_options(augment, augment_args);

  CLI::App* train = app.add_subcommand("train", "train a captioning model");
  add_common_options(train, train_args);
  train->add_option("--variant", train_variant, "ablation variant: dbc, vgf, or pvgf");
  train->add_option("--layers", train_layers, "decoder depth override");
  train->add_option("--resume", train_resume, "checkpoint to resume from");

  CLI::App* caption = app.add_subcommand("caption", "generate captions from a checkpoint");
  add_common_options(caption, caption_args);
  caption->add_option("--checkpoint", caption_checkpoint, "trained checkpoint file")->required();
  caption->add_option("--image", caption_image_path, "single image to caption");
  caption->add_option("--manifest", caption_manifest, "manifest of images to caption");

  CLI::App* eval = app.add_subcommand("eval", "score candidate captions against references");
  add_common_options(eval, eval_args);
  eval->add_option("candidates", eval_candidates, "candidates JSONL")->required();
  eval->add_option("references", eval_references, "references JSONL")->required();

  CLI::App* ablate = app.add_subcommand("ablate", "train and evaluate all three ablation variants");
  add_common_options(ablate, ablate_args);
  ablate->add_option("--layers", ablate_layers, "decoder depth override");

  CLI11_PARSE(app, argc, argv);

  try {
    if (synth->parsed()) return cmd_synth(synth_args);
    if (augment->parsed()) return cmd_augment(augment_args);
    if (train->parsed()) return cmd_train(train_args, train_layers, train_variant, train_resume);
    if (caption->parsed()) return cmd_caption(caption_args, caption_checkpoint, caption_image_path, caption_manifest);
    if (eval->parsed()) return cmd_eval(eval_args, eval_candidates, eval_references);
    if (ablate->parsed()) return cmd_ablate(ablate_args, ablate_layers);
  } catch (const pvgf::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
