#include <catch2/catch.hpp>

#include <cstdlib>
#include <fstream>
#include <set>

#include <json.hpp>

#include "pvgf/data.hpp"
#include "pvgf/image.hpp"
#include "pvgf/metrics.hpp"
#include "pvgf/util.hpp"
#include "test_util.hpp"

using namespace pvgf;
using testutil::temp_dir;

namespace {

std::string binary() {
  const char* bin = std::getenv("PVGF_BIN");
  REQUIRE(bin != nullptr);
  return bin;
}

struct RunOutput {
  int exit_code = 0;
  std::string stderr_text;
  std::string stdout_text;
};

RunOutput run(const std::string& args) {
  static int counter = 0;
  const fs::path err = temp_dir("cli_err") / ("e" + std::to_string(counter) + ".txt");
  const fs::path out = temp_dir("cli_out") / ("o" + std::to_string(counter) + ".txt");
  ++counter;
  const std::string cmd = binary() + " " + args + " >" + out.string() + " 2>" + err.string();
  const int status = std::system(cmd.c_str());
  RunOutput r;
  r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.stderr_text = fs::exists(err) ? read_file_text(err.string()) : "";
  r.stdout_text = fs::exists(out) ? read_file_text(out.string()) : "";
  return r;
}

std::string tiny_flags() {
  return " --set synth.resolution=16 --set synth.per_category=2"
         " --set encoder.resolution=16 --set encoder.stem_channels=4"
         " --set \"encoder.blocks=1:4:1,2:6:2\" --set encoder.head_channels=12"
         " --set decoder.layers=1 --set decoder.model_dim=16 --set decoder.heads=2"
         " --set decoder.ffn_dim=24 --set decoder.max_seq_len=48"
         " --set prompt.vectors=2 --set train.epochs=1 --set train.batch_size=4";
}

std::uint64_t tree_hash(const fs::path& dir) {
  std::vector<fs::path> files;
  for (const auto& entry : fs::recursive_directory_iterator(dir))
    if (entry.is_regular_file()) files.push_back(entry.path());
  std::sort(files.begin(), files.end());
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& f : files) {
    const std::string rel = fs::relative(f, dir).string();
    h = fnv1a64(rel.data(), rel.size(), h);
    const auto bytes = read_file_bytes(f.string());
    h = fnv1a64(bytes.data(), bytes.size(), h);
  }
  return h;
}

}  // namespace

TEST_CASE("synth writes a manifest with all seven categories and refuses overwrites") {
  const fs::path out = temp_dir("cli_synth");
  const auto first = run("synth --out " + out.string() + " --set synth.resolution=16 --set synth.per_category=2");
  REQUIRE(first.exit_code == 0);
  Dataset ds = load_manifest(out / "manifest.jsonl");
  CHECK(ds.samples.size() == 14);
  CHECK(catalog_from_samples(ds.samples).size() == 7);

  // refusal without --force
  const auto refused = run("synth --out " + out.string() + " --set synth.resolution=16 --set synth.per_category=2");
  CHECK(refused.exit_code != 0);
  CHECK(refused.stderr_text.find("--force") != std::string::npos);

  // --force regenerates
  const auto forced =
      run("synth --out " + out.string() + " --force --set synth.resolution=16 --set synth.per_category=2");
  CHECK(forced.exit_code == 0);
}

TEST_CASE("synth is reproducible for a fixed seed") {
  const fs::path a = temp_dir("cli_synth_a");
  const fs::path b = temp_dir("cli_synth_b");
  REQUIRE(run("synth --out " + a.string() + " --seed 9 --set synth.resolution=16 --set synth.per_category=2")
              .exit_code == 0);
  REQUIRE(run("synth --out " + b.string() + " --seed 9 --set synth.resolution=16 --set synth.per_category=2")
              .exit_code == 0);
  CHECK(tree_hash(a) == tree_hash(b));
}

TEST_CASE("augment expands the corpus by the configured multiplier") {
  const fs::path data = temp_dir("cli_aug_src");
  REQUIRE(run("synth --out " + data.string() + " --set synth.resolution=16 --set synth.per_category=2").exit_code ==
          0);
  const fs::path out = temp_dir("cli_aug_out");
  const auto result = run("augment --out " + out.string() + " --set data.manifest=" +
                          (data / "manifest.jsonl").string() + " --set augment.multiplier=3");
  REQUIRE(result.exit_code == 0);
  Dataset expanded = load_manifest(out / "manifest.jsonl");
  CHECK(expanded.samples.size() == 42);
}

TEST_CASE("train logs structure, writes outputs, and depth changes the parameter count") {
  const fs::path data = temp_dir("cli_train_data");
  REQUIRE(run("synth --out " + data.string() + tiny_flags()).exit_code == 0);
  const std::string manifest = " --set data.manifest=" + (data / "manifest.jsonl").string();

  const fs::path dbc_out = temp_dir("cli_train_dbc");
  const auto dbc = run("train --variant dbc --out " + dbc_out.string() + tiny_flags() + manifest);
  REQUIRE(dbc.exit_code == 0);
  CHECK(dbc.stderr_text.find("prompt module: disabled") != std::string::npos);
  CHECK(fs::exists(dbc_out / "checkpoint.pvgf"));
  CHECK(fs::exists(dbc_out / "loss_log.csv"));

  auto param_count_of = [&](const std::string& text) {
    const auto pos = text.find("parameters: ");
    REQUIRE(pos != std::string::npos);
    return std::stoll(text.substr(pos + 12));
  };
  const fs::path l1_out = temp_dir("cli_train_l1");
  const fs::path l2_out = temp_dir("cli_train_l2");
  const auto l1 = run("train --layers 1 --out " + l1_out.string() + tiny_flags() + manifest);
  const auto l2 = run("train --layers 2 --out " + l2_out.string() + tiny_flags() + manifest);
  REQUIRE(l1.exit_code == 0);
  REQUIRE(l2.exit_code == 0);
  CHECK(param_count_of(l2.stderr_text) > param_count_of(l1.stderr_text));
}

TEST_CASE("train caption eval pipeline round-trips deterministically") {
  const fs::path data = temp_dir("cli_pipe_data");
  REQUIRE(run("synth --out " + data.string() + tiny_flags()).exit_code == 0);
  const std::string manifest = " --set data.manifest=" + (data / "manifest.jsonl").string();

  const fs::path train_out = temp_dir("cli_pipe_train");
  REQUIRE(run("train --out " + train_out.string() + tiny_flags() + manifest).exit_code == 0);
  const std::string ckpt = (train_out / "checkpoint.pvgf").string();

  // caption the whole manifest twice: identical bytes
  const fs::path cap1 = temp_dir("cli_pipe_cap1");
  const fs::path cap2 = temp_dir("cli_pipe_cap2");
  REQUIRE(run("caption --checkpoint " + ckpt + " --manifest " + (data / "manifest.jsonl").string() + " --out " +
              cap1.string() + tiny_flags())
              .exit_code == 0);
  REQUIRE(run("caption --checkpoint " + ckpt + " --manifest " + (data / "manifest.jsonl").string() + " --out " +
              cap2.string() + tiny_flags())
              .exit_code == 0);
  const std::string caps1 = read_file_text((cap1 / "captions.jsonl").string());
  CHECK(caps1 == read_file_text((cap2 / "captions.jsonl").string()));

  // every line carries a catalog category
  Dataset ds = load_manifest(data / "manifest.jsonl");
  const auto catalog = catalog_from_samples(ds.samples);
  std::istringstream lines(caps1);
  std::string line;
  int count = 0;
  while (std::getline(lines, line)) {
    if (line.empty()) continue;
    const auto j = nlohmann::json::parse(line);
    const std::string category = j.at("category").get<std::string>();
    CHECK(std::find(catalog.labels.begin(), catalog.labels.end(), category) != catalog.labels.end());
    CHECK(j.at("prompt").get<std::string>().find("This is a Dongba painting about") == 0);
    ++count;
  }
  CHECK(count == 14);

  // single-image captioning works at the checkpoint resolution
  std::string first_image;
  for (const auto& s : ds.samples) {
    first_image = (data / s.image_path).string();
    break;
  }
  const auto single = run("caption --checkpoint " + ckpt + " --image " + first_image);
  REQUIRE(single.exit_code == 0);
  CHECK(nlohmann::json::parse(single.stdout_text).at("caption").is_string());

  // an image at the wrong resolution is an explicit error
  const fs::path oversized = temp_dir("cli_pipe_big") / "big.png";
  png_write(oversized.string(), make_image(24, 24, 0.4));
  const auto bad = run("caption --checkpoint " + ckpt + " --image " + oversized.string());
  CHECK(bad.exit_code != 0);
  CHECK(bad.stderr_text.find("resolution mismatch") != std::string::npos);
}

TEST_CASE("eval scores a perfect corpus at one and rejects mismatched ids") {
  const fs::path dir = temp_dir("cli_eval");
  {
    std::ofstream cand(dir / "cand.jsonl");
    cand << R"({"image_id":"a","caption":"a golden deity on a throne"})" << "\n";
    cand << R"({"image_id":"b","caption":"two figures fishing at dawn"})" << "\n";
    std::ofstream refs(dir / "refs.jsonl");
    refs << R"({"image_id":"a","caption":"a golden deity on a throne"})" << "\n";
    refs << R"({"image_id":"b","references":["two figures fishing at dawn"]})" << "\n";
  }
  const fs::path out = temp_dir("cli_eval_out");
  const auto result =
      run("eval " + (dir / "cand.jsonl").string() + " " + (dir / "refs.jsonl").string() + " --out " + out.string());
  REQUIRE(result.exit_code == 0);
  CHECK(result.stdout_text.find("BLEU-1") != std::string::npos);
  const auto report = nlohmann::json::parse(read_file_text((out / "metrics.json").string()));
  CHECK(report.at("bleu_1").get<double>() == Approx(1.0));
  CHECK(report.at("bleu_4").get<double>() == Approx(1.0));
  CHECK(report.at("rouge_l").get<double>() == Approx(1.0));

  // unmatched ids are listed
  {
    std::ofstream cand(dir / "cand2.jsonl");
    cand << R"({"image_id":"zzz","caption":"a"})" << "\n";
  }
  const auto mismatch = run("eval " + (dir / "cand2.jsonl").string() + " " + (dir / "refs.jsonl").string());
  CHECK(mismatch.exit_code != 0);
  CHECK(mismatch.stderr_text.find("zzz") != std::string::npos);

  // empty candidate file is a usage error
  write_file_text((dir / "empty.jsonl").string(), "");
  const auto empty = run("eval " + (dir / "empty.jsonl").string() + " " + (dir / "refs.jsonl").string());
  CHECK(empty.exit_code != 0);
}

TEST_CASE("eval output equals the library scores on a two-pair toy corpus") {
  const fs::path dir = temp_dir("cli_eval_toy");
  {
    std::ofstream cand(dir / "cand.jsonl");
    cand << R"({"image_id":"a","caption":"a golden deity sits on the throne"})" << "\n";
    cand << R"({"image_id":"b","caption":"two pale ghosts drift in smoke"})" << "\n";
    std::ofstream refs(dir / "refs.jsonl");
    refs << R"({"image_id":"a","references":["a golden deity rests on a lotus throne","the deity sits"]})" << "\n";
    refs << R"({"image_id":"b","references":["a pale ghost drifts through dark smoke"]})" << "\n";
  }
  const fs::path out = temp_dir("cli_eval_toy_out");
  REQUIRE(run("eval " + (dir / "cand.jsonl").string() + " " + (dir / "refs.jsonl").string() + " --out " +
              out.string())
              .exit_code == 0);
  const auto report = nlohmann::json::parse(read_file_text((out / "metrics.json").string()));

  const std::vector<pvgf::metrics::ScoredPair> pairs = {
      pvgf::metrics::make_pair("a", "a golden deity sits on the throne",
                               {"a golden deity rests on a lotus throne", "the deity sits"}),
      pvgf::metrics::make_pair("b", "two pale ghosts drift in smoke",
                               {"a pale ghost drifts through dark smoke"})};
  pvgf::metrics::MetricConfig mcfg;
  const auto expected = pvgf::metrics::evaluate(pairs, mcfg);
  for (int k = 0; k < 4; ++k)
    CHECK(report.at("bleu_" + std::to_string(k + 1)).get<double>() ==
          Approx(expected.bleu[static_cast<std::size_t>(k)]).margin(1e-12));
  CHECK(report.at("meteor").get<double>() == Approx(expected.meteor).margin(1e-12));
  CHECK(report.at("rouge_l").get<double>() == Approx(expected.rouge_l).margin(1e-12));
  CHECK(report.at("cider").get<double>() == Approx(expected.cider).margin(1e-12));
}

TEST_CASE("ablate emits the three-variant table with a config footer") {
  const fs::path data = temp_dir("cli_ablate_data");
  REQUIRE(run("synth --out " + data.string() + tiny_flags()).exit_code == 0);
  const fs::path out = temp_dir("cli_ablate_out");
  const auto result = run("ablate --out " + out.string() + tiny_flags() + " --set data.manifest=" +
                          (data / "manifest.jsonl").string() + " --set split.train=0.7 --set split.val=0.0");
  REQUIRE(result.exit_code == 0);
  const std::string table = read_file_text((out / "ablation_report.txt").string());
  CHECK(table.find("DBC") != std::string::npos);
  CHECK(table.find("VGF-DPC") != std::string::npos);
  CHECK(table.find("PVGF-DPC") != std::string::npos);
  CHECK(table.find("# config=") != std::string::npos);
  CHECK(table.find("seed=") != std::string::npos);
  for (const char* col : {"BLEU-1", "BLEU-2", "BLEU-3", "BLEU-4", "METEOR", "ROUGE-L", "CIDEr"})
    CHECK(table.find(col) != std::string::npos);

  const auto report = nlohmann::json::parse(read_file_text((out / "ablation_report.json").string()));
  REQUIRE(report.at("rows").size() == 3);
}

TEST_CASE("unknown config keys are rejected") {
  const auto result = run("synth --out " + temp_dir("cli_badkey").string() + " --set nonsense.key=1");
  CHECK(result.exit_code != 0);
  CHECK(result.stderr_text.find("nonsense.key") != std::string::npos);
}

TEST_CASE("config files drive commands and overrides beat the file") {
  const fs::path dir = temp_dir("cli_cfgfile");
  write_file_text((dir / "run.json").string(),
                  R"({"synth.resolution": 16, "synth.per_category": 3, "synth.categories": 2})");
  const fs::path out = temp_dir("cli_cfgfile_out");
  const auto result = run("synth --config " + (dir / "run.json").string() + " --out " + out.string() +
                          " --set synth.per_category=2");
  REQUIRE(result.exit_code == 0);
  Dataset ds = load_manifest(out / "manifest.jsonl");
  CHECK(ds.samples.size() == 4);  // 2 categories x 2 per category (override wins)
}
