#include <catch2/catch.hpp>

#include <cstdlib>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "pvgf/metrics.hpp"
#include "pvgf/rng.hpp"

using namespace pvgf;
using metrics::ScoredPair;

#include "metric_oracles.hpp"


namespace {
ScoredPair pair_of(const std::string& id, const std::string& cand, const std::vector<std::string>& refs) {
  return metrics::make_pair(id, cand, refs);
}
}  // namespace

TEST_CASE("tokenize_for_metrics basics") {
  CHECK(tokenize("The cat, sat.") == std::vector<std::string>({"the", "cat", "sat"}));
  CHECK(tokenize("").empty());
  CHECK(tokenize("Dongba  painting") == std::vector<std::string>({"dongba", "painting"}));
}

TEST_CASE("identical candidate and reference score perfectly") {
  const std::vector<ScoredPair> pairs = {
      pair_of("a", "a golden deity on a lotus throne", {"a golden deity on a lotus throne"}),
      pair_of("b", "two figures fishing at dawn", {"two figures fishing at dawn"})};
  const auto b = metrics::bleu(pairs, 4);
  for (double v : b) CHECK(v == Approx(1.0).margin(1e-12));
  CHECK(metrics::rouge_l(pairs, 1.2) == Approx(1.0).margin(1e-12));
}

TEST_CASE("clipped unigram precision on the the the") {
  const std::vector<ScoredPair> pairs = {pair_of("x", "the the the", {"the cat"})};
  // c=3 > r=2 so BP = 1 and BLEU-1 equals the clipped precision 1/3
  const auto b = metrics::bleu(pairs, 1);
  CHECK(b[0] == Approx(1.0 / 3.0).margin(1e-12));
}

TEST_CASE("brevity penalty for a short candidate") {
  const std::vector<ScoredPair> pairs = {pair_of("x", "a b", {"a b c d"})};
  const auto b = metrics::bleu(pairs, 1);
  CHECK(b[0] == Approx(std::exp(-1.0)).margin(1e-9));  // P1 = 1, BP = e^{1-4/2}
}

TEST_CASE("empty candidates give BLEU zero without an error") {
  const std::vector<ScoredPair> pairs = {pair_of("x", "", {"a b"})};
  const auto b = metrics::bleu(pairs, 4);
  for (double v : b) CHECK(v == 0.0);
}

TEST_CASE("meteor hand fixture: identical three-token sentences") {
  const std::vector<ScoredPair> pairs = {pair_of("x", "a b c", {"a b c"})};
  const double expected = (1.0 - 0.5 * std::pow(1.0 / 3.0, 3.0)) * 1.0;
  CHECK(metrics::meteor(pairs, 0.9, 0.5, 3.0) == Approx(expected).margin(1e-5));
  CHECK(expected == Approx(0.98148).margin(1e-5));
}

TEST_CASE("meteor is zero without overlap and collapses when P equals R") {
  CHECK(metrics::meteor({pair_of("x", "a b", {"c d"})}, 0.9, 0.5, 3.0) == 0.0);

  // equal-length candidate/reference with partial overlap: F collapses to p
  const std::vector<ScoredPair> pairs = {pair_of("x", "a b c d", {"a b x y"})};
  const double p = 0.5;
  const double pen = 0.5 * std::pow(1.0 / 2.0, 3.0);
  CHECK(metrics::meteor(pairs, 0.9, 0.5, 3.0) == Approx((1 - pen) * p).margin(1e-12));
}

TEST_CASE("rouge_l hand fixture and boundary cases") {
  const std::vector<ScoredPair> pairs = {pair_of("x", "the cat", {"the cat sat"})};
  const double pl = 1.0, rl = 2.0 / 3.0, mu = 1.2;
  const double expected = (1 + mu * mu) * rl * pl / (rl + mu * mu * pl);
  CHECK(metrics::rouge_l(pairs, mu) == Approx(expected).margin(1e-12));
  CHECK(expected == Approx(0.7722).margin(1e-4));

  CHECK(metrics::rouge_l({pair_of("y", "a b c", {"a b c"})}, 0.7) == Approx(1.0).margin(1e-12));
  CHECK(metrics::rouge_l({pair_of("z", "a b", {"c d"})}, 1.2) == 0.0);
}

TEST_CASE("cider two-image disjoint fixture scores 4.0") {
  const std::vector<ScoredPair> pairs = {
      pair_of("img1", "a golden deity rises", {"a golden deity rises"}),
      pair_of("img2", "dark ghost under smoke", {"dark ghost under smoke"})};
  CHECK(metrics::cider(pairs, 4) == Approx(4.0).margin(1e-9));
}

TEST_CASE("cider degenerate cases") {
  // single image: every IDF is ln(1) = 0
  CHECK(metrics::cider({pair_of("only", "a b c d", {"a b c d"})}, 4) == 0.0);
  // no shared n-grams
  const std::vector<ScoredPair> pairs = {pair_of("i1", "x y z w", {"a b c d"}),
                                         pair_of("i2", "p q r s", {"e f g h"})};
  CHECK(metrics::cider(pairs, 4) == 0.0);
}

TEST_CASE("canonical cider flag applies the 1/N and x10 scaling") {
  const std::vector<ScoredPair> pairs = {
      pair_of("img1", "a golden deity rises", {"a golden deity rises"}),
      pair_of("img2", "dark ghost under smoke", {"dark ghost under smoke"})};
  const double plain = metrics::cider(pairs, 4, false);
  const double canonical = metrics::cider(pairs, 4, true);
  CHECK(canonical == Approx(plain * 10.0 / 4.0).margin(1e-12));
}

TEST_CASE("oracle equivalence on randomized corpora") {
  Rng rng(99);
  const std::vector<std::string> words = {"a", "b", "c", "d", "e", "f", "g"};
  auto random_sentence = [&](int max_len) {
    const int len = 1 + rng.uniform_int(max_len);
    std::string s;
    for (int i = 0; i < len; ++i) {
      if (i) s += " ";
      s += words[static_cast<std::size_t>(rng.uniform_int(static_cast<int>(words.size())))];
    }
    return s;
  };

  for (int trial = 0; trial < 24; ++trial) {
    const int num_pairs = 2 + rng.uniform_int(3);
    std::vector<ScoredPair> pairs;
    for (int i = 0; i < num_pairs; ++i) {
      const int num_refs = 1 + rng.uniform_int(2);
      std::vector<std::string> refs;
      for (int r = 0; r < num_refs; ++r) refs.push_back(random_sentence(7));
      pairs.push_back(pair_of("img" + std::to_string(i), random_sentence(7), refs));
    }

    const auto impl_bleu = metrics::bleu(pairs, 4);
    const auto oracle_bleu = oracle::bleu(pairs, 4);
    for (int k = 0; k < 4; ++k) CHECK(std::abs(impl_bleu[k] - oracle_bleu[k]) < 1e-9);

    CHECK(std::abs(metrics::meteor(pairs, 0.9, 0.5, 3.0) - oracle::meteor(pairs, 0.9, 0.5, 3.0)) < 1e-9);
    CHECK(std::abs(metrics::rouge_l(pairs, 1.2) - oracle::rouge_l(pairs, 1.2)) < 1e-9);
    CHECK(std::abs(metrics::cider(pairs, 4) - oracle::cider(pairs, 4)) < 1e-9);
  }
}

TEST_CASE("word-order permutations never beat the identical ordering for BLEU-2..4") {
  const std::string reference = "a golden deity sits on a lotus throne";
  const std::vector<std::string> permutations = {
      "a deity golden sits on a throne lotus",
      "golden a deity on sits lotus a throne",
      "throne lotus a on sits deity golden a",
  };
  const auto base = metrics::bleu({pair_of("x", reference, {reference})}, 4);
  for (const auto& perm : permutations) {
    const auto permuted = metrics::bleu({pair_of("x", perm, {reference})}, 4);
    for (int k = 1; k < 4; ++k) CHECK(permuted[k] <= base[k] + 1e-12);
  }
}

TEST_CASE("duplicating the whole corpus never changes any score") {
  std::vector<ScoredPair> pairs = {
      pair_of("i1", "a golden deity", {"a golden deity sits", "the deity"}),
      pair_of("i2", "two figures fishing", {"figures fishing at dawn"}),
      pair_of("i3", "an endless knot pattern", {"a woven pattern of fish"})};
  std::vector<ScoredPair> doubled = pairs;
  for (const auto& p : pairs) {
    ScoredPair copy = p;
    copy.image_id += "_copy";
    doubled.push_back(copy);
  }
  const auto b1 = metrics::bleu(pairs, 4), b2 = metrics::bleu(doubled, 4);
  for (int k = 0; k < 4; ++k) CHECK(std::abs(b1[k] - b2[k]) < 1e-12);
  CHECK(std::abs(metrics::meteor(pairs, 0.9, 0.5, 3.0) - metrics::meteor(doubled, 0.9, 0.5, 3.0)) < 1e-12);
  CHECK(std::abs(metrics::rouge_l(pairs, 1.2) - metrics::rouge_l(doubled, 1.2)) < 1e-12);
  CHECK(std::abs(metrics::cider(pairs, 4) - metrics::cider(doubled, 4)) < 1e-12);
}

TEST_CASE("rouge_l with mu = 1 is symmetric in precision and recall") {
  Rng rng(7);
  const std::vector<std::string> words = {"a", "b", "c", "d", "e"};
  auto sentence = [&](int len) {
    std::string s;
    for (int i = 0; i < len; ++i) {
      if (i) s += " ";
      s += words[static_cast<std::size_t>(rng.uniform_int(5))];
    }
    return s;
  };
  for (int trial = 0; trial < 10; ++trial) {
    const std::string a = sentence(3 + rng.uniform_int(4));
    const std::string b = sentence(3 + rng.uniform_int(4));
    const double ab = metrics::rouge_l({pair_of("x", a, {b})}, 1.0);
    const double ba = metrics::rouge_l({pair_of("x", b, {a})}, 1.0);
    CHECK(std::abs(ab - ba) < 1e-12);
  }
}

TEST_CASE("metric report respects range invariants") {
  Rng rng(55);
  const std::vector<std::string> words = {"u", "v", "w", "x", "y"};
  std::vector<ScoredPair> pairs;
  for (int i = 0; i < 6; ++i) {
    std::string cand, ref;
    for (int t = 0; t < 5; ++t) {
      if (t) {
        cand += " ";
        ref += " ";
      }
      cand += words[static_cast<std::size_t>(rng.uniform_int(5))];
      ref += words[static_cast<std::size_t>(rng.uniform_int(5))];
    }
    pairs.push_back(pair_of("img" + std::to_string(i), cand, {ref}));
  }
  metrics::MetricConfig cfg;
  const auto report = metrics::evaluate(pairs, cfg);
  for (double b : report.bleu) {
    CHECK(b >= 0.0);
    CHECK(b <= 1.0);
  }
  CHECK(report.meteor >= 0.0);
  CHECK(report.meteor <= 1.0);
  CHECK(report.rouge_l >= 0.0);
  CHECK(report.rouge_l <= 1.0);
  CHECK(report.cider >= 0.0);
  CHECK(report.corpus_size == 6);
}

TEST_CASE("weighted BLEU validates its weights") {
  const std::vector<ScoredPair> pairs = {pair_of("x", "a b c d e", {"a b c d e"})};
  CHECK(metrics::bleu_weighted(pairs, {0.25, 0.25, 0.25, 0.25}) == Approx(1.0).margin(1e-12));
  CHECK_THROWS_AS(metrics::bleu_weighted(pairs, {0.5, 0.4}), ConfigError);
}

TEST_CASE("scored pairs load from the JSONL interchange format") {
  const auto dir = std::filesystem::temp_directory_path() / "pvgf_metrics_jsonl";
  std::filesystem::create_directories(dir);
  const std::string path = (dir / "pairs.jsonl").string();
  write_file_text(path,
                  R"({"image_id":"a","candidate":"The cat sat.","references":["the cat sat","a cat"]})"
                  "\n"
                  R"({"image_id":"b","candidate":"dogs run","references":["dogs run fast"]})"
                  "\n");
  const auto pairs = metrics::load_scored_pairs(path);
  REQUIRE(pairs.size() == 2);
  CHECK(pairs[0].candidate == std::vector<std::string>({"the", "cat", "sat"}));
  CHECK(pairs[0].references.size() == 2);
  CHECK(pairs[1].image_id == "b");

  write_file_text(path, R"({"image_id":"a","candidate":"x"})" "\n");
  CHECK_THROWS_AS(metrics::load_scored_pairs(path), DataError);
}

TEST_CASE("parallel scoring matches the serial reduction bit for bit") {
  Rng rng(321);
  const std::vector<std::string> words = {"m", "n", "o", "p", "q", "r"};
  std::vector<ScoredPair> pairs;
  for (int i = 0; i < 12; ++i) {
    auto sentence = [&] {
      std::string s;
      const int len = 3 + rng.uniform_int(5);
      for (int t = 0; t < len; ++t) {
        if (t) s += " ";
        s += words[static_cast<std::size_t>(rng.uniform_int(6))];
      }
      return s;
    };
    pairs.push_back(pair_of("img" + std::to_string(i), sentence(), {sentence(), sentence()}));
  }
  metrics::MetricConfig cfg;
  const auto serial = metrics::evaluate(pairs, cfg);
  ::setenv("PVGF_THREADS", "3", 1);
  const auto parallel = metrics::evaluate(pairs, cfg);
  ::setenv("PVGF_THREADS", "1", 1);
  for (int k = 0; k < 4; ++k)
    CHECK(serial.bleu[static_cast<std::size_t>(k)] == parallel.bleu[static_cast<std::size_t>(k)]);
  CHECK(serial.meteor == parallel.meteor);
  CHECK(serial.rouge_l == parallel.rouge_l);
  CHECK(serial.cider == parallel.cider);
}

TEST_CASE("pairs without any non-empty reference are rejected") {
  ScoredPair bad;
  bad.image_id = "x";
  bad.candidate = {"a"};
  bad.references = {{}};
  CHECK_THROWS_AS(metrics::bleu({bad}, 4), DataError);
}
