#include <catch2/catch.hpp>

#include <fstream>
#include <set>

#include "pvgf/augment.hpp"
#include "pvgf/config.hpp"
#include "pvgf/synth.hpp"
#include "test_util.hpp"

using namespace pvgf;
using testutil::temp_dir;

namespace {
std::string file_hash(const fs::path& p) {
  const auto bytes = read_file_bytes(p.string());
  return hex_u64(fnv1a64(bytes.data(), bytes.size()));
}

Dataset write_tiny_dataset(const fs::path& dir, int per_category = 2) {
  SynthConfig cfg;
  cfg.categories = 3;
  cfg.per_category = per_category;
  cfg.resolution = 16;
  return generate_synthetic_corpus(cfg, 7, dir);
}
}  // namespace

TEST_CASE("vocabulary is frequency-ordered with lexicographic ties") {
  Vocabulary v = build_vocab({"a b", "a"}, 1);
  CHECK(v.id_of("a") == Vocabulary::kNumReserved);
  CHECK(v.id_of("b") == Vocabulary::kNumReserved + 1);
  CHECK(v.size() == 6);

  Vocabulary strict = build_vocab({"a b", "a"}, 2);
  CHECK(strict.contains("a"));
  CHECK_FALSE(strict.contains("b"));
  CHECK(strict.id_of("b") == Vocabulary::kUnk);

  // ties broken lexicographically
  Vocabulary ties = build_vocab({"zeta alpha"}, 1);
  CHECK(ties.id_of("alpha") < ties.id_of("zeta"));

  CHECK_THROWS_AS(build_vocab({}, 1), ConfigError);
  CHECK_THROWS_AS(build_vocab({"a"}, 0), ConfigError);
}

TEST_CASE("encode and decode round-trip in-vocabulary text") {
  Vocabulary v = build_vocab({"the cat sat on the mat"}, 1);
  const std::string text = "the cat sat";
  const auto ids = encode_caption(text, v, 8);
  CHECK(ids.size() == 8);
  CHECK(ids[0] == Vocabulary::kBos);
  CHECK(decode_tokens(ids, v) == text);
}

TEST_CASE("encode_caption structure") {
  Vocabulary v = build_vocab({"a b"}, 1);
  const auto ids = encode_caption("a b", v, 5);
  REQUIRE(ids == std::vector<int>({Vocabulary::kBos, v.id_of("a"), v.id_of("b"), Vocabulary::kEos, Vocabulary::kPad}));

  // long caption: exactly max_len, EOS retained as the last non-PAD token
  std::string longtext;
  for (int i = 0; i < 200; ++i) longtext += "a ";
  const auto capped = encode_caption(longtext, v, 128);
  CHECK(capped.size() == 128);
  CHECK(capped.back() == Vocabulary::kEos);

  // out-of-vocabulary word becomes UNK in place
  const auto unk = encode_caption("a zzz b", v, 6);
  CHECK(unk[2] == Vocabulary::kUnk);

  CHECK_THROWS_AS(encode_caption("a", v, 2), ConfigError);
}

TEST_CASE("manifest loading validates per line") {
  const fs::path dir = temp_dir("manifest");
  png_write((dir / "img.png").string(), make_image(4, 4, 0.5));

  auto write_manifest_text = [&](const std::string& text) {
    std::ofstream f(dir / "manifest.jsonl", std::ios::trunc);
    f << text;
  };

  write_manifest_text(R"({"image":"img.png","caption":"a cat","category":"deity"}
{"image":"img.png","caption":"a second caption","category":"deity"}
{"image":"img.png","caption":"a ghost story","category":"ghost"}
)");
  Dataset ds = load_manifest(dir / "manifest.jsonl");
  REQUIRE(ds.samples.size() == 3);
  PromptCatalog cat = catalog_from_samples(ds.samples);
  CHECK(cat.labels == std::vector<std::string>({"deity", "ghost"}));
  CHECK(cat.label_texts[0] == "a deity");

  write_manifest_text(R"({"image":"img.png","caption":"","category":"deity"})");
  try {
    load_manifest(dir / "manifest.jsonl");
    FAIL("expected DataError");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("line 1") != std::string::npos);
  }

  write_manifest_text("{\"image\":\"img.png\",\"caption\":\"ok\",\"category\":\"x\"}\n"
                      "{\"image\":\"img.png\",\"caption\":\"ok\",\"category\":\"x\",\"bogus\":1}\n");
  try {
    load_manifest(dir / "manifest.jsonl");
    FAIL("expected DataError");
  } catch (const DataError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("line 2") != std::string::npos);
    CHECK(msg.find("bogus") != std::string::npos);
  }

  write_manifest_text(R"({"image":"missing.png","caption":"ok","category":"x"})");
  CHECK_THROWS_AS(load_manifest(dir / "manifest.jsonl"), DataError);
}

TEST_CASE("png round-trips quantized images bit-exactly") {
  const fs::path dir = temp_dir("png");
  Rng rng(3);
  Tensor img = make_image(9, 7);
  for (long long i = 0; i < img.numel(); ++i)
    img[i] = static_cast<double>(rng.uniform_int(256)) / 255.0;  // already quantized
  png_write((dir / "x.png").string(), img);
  Tensor back = png_read((dir / "x.png").string());
  REQUIRE(back.shape() == img.shape());
  for (long long i = 0; i < img.numel(); ++i) CHECK(back[i] == img[i]);
}

TEST_CASE("flip and rotate_180 are bit-exact involutions") {
  Rng rng(4);
  Tensor img = make_image(13, 9);
  for (long long i = 0; i < img.numel(); ++i) img[i] = rng.uniform();
  for (const char* name : {"flip_h", "flip_v", "rotate_180"}) {
    Tensor once = augment(img, name, 11);
    Tensor twice = augment(once, name, 11);
    REQUIRE(twice.shape() == img.shape());
    for (long long i = 0; i < img.numel(); ++i) {
      if (twice[i] != img[i]) {
        FAIL(std::string(name) << " not an involution at index " << i);
      }
    }
  }
}

TEST_CASE("zero-sigma noise is the identity") {
  Rng rng(5);
  Tensor img = make_image(8, 8);
  for (long long i = 0; i < img.numel(); ++i) img[i] = rng.uniform();
  Tensor out = augment(img, "noise_0", 3);
  for (long long i = 0; i < img.numel(); ++i) CHECK(out[i] == img[i]);
}

TEST_CASE("augmentations preserve shape and the unit value range") {
  Rng rng(6);
  Tensor img = make_image(12, 12);
  for (long long i = 0; i < img.numel(); ++i) img[i] = rng.uniform();
  for (const char* name : {"flip_h", "flip_v", "rotate_90", "rotate_180", "rotate_270", "rotate_12.5", "crop_0.8",
                           "noise_0.05", "jitter_0.3", "sharpen_1.5"}) {
    Tensor out = augment(img, name, 17);
    REQUIRE(out.shape() == img.shape());
    for (long long i = 0; i < out.numel(); ++i) {
      CHECK(out[i] >= 0.0);
      CHECK(out[i] <= 1.0);
    }
    // deterministic for a fixed (spec, seed)
    Tensor again = augment(img, name, 17);
    for (long long i = 0; i < out.numel(); ++i) CHECK(out[i] == again[i]);
  }
}

TEST_CASE("augment rejects out-of-range parameters") {
  CHECK_THROWS_AS(parse_transform("crop_0"), ConfigError);
  CHECK_THROWS_AS(parse_transform("crop_1.5"), ConfigError);
  CHECK_THROWS_AS(parse_transform("noise_-1"), ConfigError);
  CHECK_THROWS_AS(parse_transform("rotate_95"), ConfigError);
  CHECK_THROWS_AS(parse_transform("zoom_2"), ConfigError);
}

TEST_CASE("expand_dataset multiplies, keeps originals, and records lineage") {
  const fs::path src = temp_dir("expand_src");
  Dataset ds = write_tiny_dataset(src);  // 6 samples
  AugmentPlan plan;
  plan.multiplier = 4;
  plan.default_transforms = default_transform_cycle();

  const fs::path out1 = temp_dir("expand_out1");
  Dataset expanded = expand_dataset(ds, plan, 123, out1);
  CHECK(expanded.samples.size() == ds.samples.size() * 4);

  // originals are a byte-identical strict subset
  for (const auto& s : ds.samples) {
    const fs::path a = ds.base_dir / s.image_path;
    const fs::path b = out1 / s.image_path;
    REQUIRE(fs::exists(b));
    CHECK(file_hash(a) == file_hash(b));
  }
  int derived = 0;
  for (const auto& s : expanded.samples) {
    if (s.image_path.find("__aug") != std::string::npos) {
      ++derived;
      CHECK_FALSE(s.lineage.empty());
    } else {
      CHECK(s.lineage.empty());
    }
  }
  CHECK(derived == static_cast<int>(ds.samples.size()) * 3);

  // same seed twice: bit-identical tree
  const fs::path out2 = temp_dir("expand_out2");
  expand_dataset(ds, plan, 123, out2);
  for (const auto& s : expanded.samples) CHECK(file_hash(out1 / s.image_path) == file_hash(out2 / s.image_path));
  CHECK(file_hash(out1 / "manifest.jsonl") == file_hash(out2 / "manifest.jsonl"));

  CHECK_THROWS_AS(expand_dataset(ds, AugmentPlan{0, {}, {}}, 1, temp_dir("expand_bad")), ConfigError);
}

TEST_CASE("synthetic corpus contract") {
  const fs::path dir = temp_dir("synth");
  SynthConfig cfg;
  cfg.categories = 7;
  cfg.per_category = 8;
  cfg.resolution = 24;
  Dataset ds = generate_synthetic_corpus(cfg, 42, dir);
  CHECK(ds.samples.size() == 56);
  PromptCatalog cat = catalog_from_samples(ds.samples);
  CHECK(cat.size() == 7);

  // every caption mentions its category term
  for (const auto& s : ds.samples) {
    const auto tokens = tokenize(s.caption);
    CHECK(std::find(tokens.begin(), tokens.end(), s.category) != tokens.end());
  }

  // same seed: bit-identical corpus
  const fs::path dir2 = temp_dir("synth2");
  generate_synthetic_corpus(cfg, 42, dir2);
  for (const auto& s : ds.samples) CHECK(file_hash(dir / s.image_path) == file_hash(dir2 / s.image_path));
  CHECK(file_hash(dir / "manifest.jsonl") == file_hash(dir2 / "manifest.jsonl"));

  // mean-color linear probe separates the categories perfectly
  CHECK(mean_color_probe_accuracy(ds) == 1.0);
}

TEST_CASE("split keeps augmented copies with their originals") {
  const fs::path src = temp_dir("split_src");
  Dataset ds = write_tiny_dataset(src, 5);  // 15 originals
  AugmentPlan plan;
  plan.multiplier = 3;
  plan.default_transforms = default_transform_cycle();
  Dataset expanded = expand_dataset(ds, plan, 9, temp_dir("split_out"));

  SplitIndices split = split_dataset(expanded, 0.6, 0.2, 77);
  CHECK(split.train.size() + split.val.size() + split.test.size() == expanded.samples.size());

  auto origin_of = [&](std::size_t idx) { return origin_stem(expanded.samples[idx].image_path); };
  std::map<std::string, std::set<int>> buckets;
  for (std::size_t i : split.train) buckets[origin_of(i)].insert(0);
  for (std::size_t i : split.val) buckets[origin_of(i)].insert(1);
  for (std::size_t i : split.test) buckets[origin_of(i)].insert(2);
  for (const auto& [origin, seen] : buckets) {
    INFO("origin " << origin);
    CHECK(seen.size() == 1);
  }

  // deterministic
  SplitIndices again = split_dataset(expanded, 0.6, 0.2, 77);
  CHECK(again.train == split.train);
  CHECK(again.val == split.val);
  CHECK(again.test == split.test);
}

TEST_CASE("per-category transform overrides take precedence over the default cycle") {
  RunConfig cfg = RunConfig::defaults();
  cfg.apply_override("augment.transforms=flip_h,flip_v");
  cfg.apply_override("augment.transforms.deity=rotate_180");
  const AugmentPlan plan = cfg.augment_plan();
  REQUIRE(plan.default_transforms.size() == 2);
  CHECK(plan.transforms_for("ghost").size() == 2);
  REQUIRE(plan.transforms_for("deity").size() == 1);
  CHECK(plan.transforms_for("deity")[0].name == "rotate_180");

  cfg.apply_override("augment.transforms.bad=zoom_9");
  CHECK_THROWS_AS(cfg.augment_plan(), ConfigError);
}

TEST_CASE("duplicate images with distinct captions are legal multi-reference samples") {
  const fs::path dir = temp_dir("multiref");
  png_write((dir / "one.png").string(), make_image(4, 4, 0.3));
  std::ofstream f(dir / "manifest.jsonl");
  f << R"({"image":"one.png","caption":"first text","category":"c"})" << "\n";
  f << R"({"image":"one.png","caption":"second text","category":"c"})" << "\n";
  f.close();
  Dataset ds = load_manifest(dir / "manifest.jsonl");
  CHECK(ds.samples.size() == 2);
}
