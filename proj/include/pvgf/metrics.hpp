#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "pvgf/error.hpp"
#include "pvgf/tokenize.hpp"
#include "pvgf/util.hpp"

namespace pvgf::metrics {

struct ScoredPair {
  std::string image_id;
  std::vector<std::string> candidate;
  std::vector<std::vector<std::string>> references;  // at least one non-empty
};

inline ScoredPair make_pair(std::string image_id, const std::string& candidate_text,
                            const std::vector<std::string>& reference_texts) {
  ScoredPair p;
  p.image_id = std::move(image_id);
  p.candidate = tokenize(candidate_text);
  for (const auto& r : reference_texts) p.references.push_back(tokenize(r));
  return p;
}

// JSONL input: one {image_id, candidate, references: [..]} object per line.
inline std::vector<ScoredPair> load_scored_pairs(const std::string& path) {
  std::vector<ScoredPair> pairs;
  std::istringstream stream(read_file_text(path));
  std::string line;
  int lineno = 0;
  while (std::getline(stream, line)) {
    ++lineno;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw DataError(path + " line " + std::to_string(lineno) + ": invalid JSON (" + e.what() + ")");
    }
    try {
      pairs.push_back(make_pair(j.at("image_id").get<std::string>(), j.at("candidate").get<std::string>(),
                                j.at("references").get<std::vector<std::string>>()));
    } catch (const nlohmann::json::exception& e) {
      throw DataError(path + " line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return pairs;
}

inline void validate_pairs(const std::vector<ScoredPair>& pairs) {
  if (pairs.empty()) throw DataError("metrics: empty corpus");
  for (const auto& p : pairs) {
    bool ok = false;
    for (const auto& r : p.references)
      if (!r.empty()) ok = true;
    if (!ok) throw DataError("metrics: pair '" + p.image_id + "' has no non-empty reference");
  }
}

struct MetricConfig {
  int bleu_n = 4;
  double meteor_eta = 0.9;
  double meteor_penalty_weight = 0.5;
  double meteor_penalty_exponent = 3.0;
  double rouge_mu = 1.2;
  int cider_n = 4;
  bool cider_canonical = false;  // adds the 1/N factor and x10 scaling
};

struct MetricReport {
  std::vector<double> bleu;  // BLEU-1 .. BLEU-N
  double meteor = 0.0;
  double rouge_l = 0.0;
  double cider = 0.0;
  int corpus_size = 0;
  MetricConfig config;
};

// ---------------------------------------------------------------------------
// n-gram helpers

using Ngram = std::vector<std::string>;

inline std::map<Ngram, int> count_ngrams(const std::vector<std::string>& tokens, int n) {
  std::map<Ngram, int> counts;
  if (static_cast<int>(tokens.size()) < n) return counts;
  for (std::size_t i = 0; i + n <= tokens.size(); ++i)
    ++counts[Ngram(tokens.begin() + static_cast<long>(i), tokens.begin() + static_cast<long>(i) + n)];
  return counts;
}

// ---------------------------------------------------------------------------
// BLEU (corpus-level, pooled counts)

namespace detail {
struct BleuPairStats {
  std::vector<long long> clipped;  // per n
  std::vector<long long> total;    // per n
  long long cand_len = 0;
  long long eff_ref_len = 0;
};

inline BleuPairStats bleu_pair_stats(const ScoredPair& p, int N) {
  BleuPairStats s;
  s.clipped.assign(static_cast<std::size_t>(N), 0);
  s.total.assign(static_cast<std::size_t>(N), 0);
  s.cand_len = static_cast<long long>(p.candidate.size());

  // effective reference length: closest to the candidate, ties to the shorter
  long long best_len = static_cast<long long>(p.references.front().size());
  for (const auto& r : p.references) {
    const long long len = static_cast<long long>(r.size());
    const long long d_new = std::llabs(len - s.cand_len), d_old = std::llabs(best_len - s.cand_len);
    if (d_new < d_old || (d_new == d_old && len < best_len)) best_len = len;
  }
  s.eff_ref_len = best_len;

  for (int n = 1; n <= N; ++n) {
    const auto cand_counts = count_ngrams(p.candidate, n);
    std::map<Ngram, int> max_ref;
    for (const auto& r : p.references)
      for (const auto& [gram, c] : count_ngrams(r, n)) max_ref[gram] = std::max(max_ref[gram], c);
    long long clipped = 0, total = 0;
    for (const auto& [gram, c] : cand_counts) {
      total += c;
      auto it = max_ref.find(gram);
      clipped += std::min<long long>(c, it == max_ref.end() ? 0 : it->second);
    }
    s.clipped[static_cast<std::size_t>(n - 1)] = clipped;
    s.total[static_cast<std::size_t>(n - 1)] = total;
  }
  return s;
}
}  // namespace detail

// BLEU-1..N with uniform weights 1/k over n = 1..k for each BLEU-k.
// Modified n-gram precisions use reference-clipped counts pooled over the
// corpus; BP = 1 if c > r else exp(1 - r/c).
inline std::vector<double> bleu(const std::vector<ScoredPair>& pairs, int N) {
  if (N < 1) throw ConfigError("bleu: N must be >= 1");
  validate_pairs(pairs);
  std::vector<detail::BleuPairStats> stats(pairs.size());
  parallel_for(pairs.size(), [&](std::size_t i) { stats[i] = detail::bleu_pair_stats(pairs[i], N); });

  std::vector<long long> clipped(static_cast<std::size_t>(N), 0), total(static_cast<std::size_t>(N), 0);
  long long c = 0, r = 0;
  for (const auto& s : stats) {
    for (int n = 0; n < N; ++n) {
      clipped[static_cast<std::size_t>(n)] += s.clipped[static_cast<std::size_t>(n)];
      total[static_cast<std::size_t>(n)] += s.total[static_cast<std::size_t>(n)];
    }
    c += s.cand_len;
    r += s.eff_ref_len;
  }

  std::vector<double> out(static_cast<std::size_t>(N), 0.0);
  if (c == 0) return out;  // empty candidates score zero
  const double bp = c > r ? 1.0 : std::exp(1.0 - static_cast<double>(r) / static_cast<double>(c));
  for (int k = 1; k <= N; ++k) {
    double log_sum = 0.0;
    bool zero = false;
    for (int n = 1; n <= k; ++n) {
      const long long cl = clipped[static_cast<std::size_t>(n - 1)], to = total[static_cast<std::size_t>(n - 1)];
      if (cl == 0 || to == 0) {
        zero = true;
        break;
      }
      log_sum += (1.0 / k) * std::log(static_cast<double>(cl) / static_cast<double>(to));
    }
    out[static_cast<std::size_t>(k - 1)] = zero ? 0.0 : bp * std::exp(log_sum);
  }
  return out;
}

// Single weighted BLEU-N score with explicit weights (must sum to 1).
inline double bleu_weighted(const std::vector<ScoredPair>& pairs, const std::vector<double>& weights) {
  const int N = static_cast<int>(weights.size());
  if (N < 1) throw ConfigError("bleu_weighted: need at least one weight");
  double wsum = 0.0;
  for (double w : weights) wsum += w;
  if (std::abs(wsum - 1.0) > 1e-9) throw ConfigError("bleu_weighted: weights must sum to 1");
  validate_pairs(pairs);
  std::vector<long long> clipped(static_cast<std::size_t>(N), 0), total(static_cast<std::size_t>(N), 0);
  long long c = 0, r = 0;
  for (const auto& p : pairs) {
    const auto s = detail::bleu_pair_stats(p, N);
    for (int n = 0; n < N; ++n) {
      clipped[static_cast<std::size_t>(n)] += s.clipped[static_cast<std::size_t>(n)];
      total[static_cast<std::size_t>(n)] += s.total[static_cast<std::size_t>(n)];
    }
    c += s.cand_len;
    r += s.eff_ref_len;
  }
  if (c == 0) return 0.0;
  const double bp = c > r ? 1.0 : std::exp(1.0 - static_cast<double>(r) / static_cast<double>(c));
  double log_sum = 0.0;
  for (int n = 1; n <= N; ++n) {
    const long long cl = clipped[static_cast<std::size_t>(n - 1)], to = total[static_cast<std::size_t>(n - 1)];
    if (cl == 0 || to == 0) return 0.0;
    log_sum += weights[static_cast<std::size_t>(n - 1)] * std::log(static_cast<double>(cl) / static_cast<double>(to));
  }
  return bp * std::exp(log_sum);
}

// ---------------------------------------------------------------------------
// METEOR (exact unigram matching)

namespace detail {

struct Alignment {
  int matches = 0;
  int chunks = 0;
};

// Greedy leftmost alignment; used only when the exact search would be too
// large (very long sentences with heavy token repetition).
inline Alignment meteor_align_greedy(const std::vector<std::string>& cand, const std::vector<std::string>& ref) {
  std::vector<bool> used(ref.size(), false);
  Alignment a;
  int prev = -2;
  for (const auto& w : cand) {
    int pick = -1;
    for (std::size_t j = 0; j < ref.size(); ++j)
      if (!used[j] && ref[j] == w) {
        pick = static_cast<int>(j);
        break;
      }
    if (pick < 0) {
      prev = -2;
      continue;
    }
    used[static_cast<std::size_t>(pick)] = true;
    ++a.matches;
    if (pick != prev + 1) ++a.chunks;
    prev = pick;
  }
  return a;
}

// Exact search: maximize matches, then minimize the number of contiguous
// matched runs (chunks). State: candidate position, bitmask over matchable
// reference positions, and the reference position matched by the previous
// candidate position (or -1).
struct MeteorDp {
  const std::vector<std::string>& cand;
  std::vector<int> ref_pos;                 // matchable reference positions
  std::vector<const std::string*> ref_tok;  // tokens at those positions
  std::unordered_map<std::uint64_t, std::uint32_t> memo;

  MeteorDp(const std::vector<std::string>& c, const std::vector<std::string>& ref,
           const std::set<std::string>& cand_vocab)
      : cand(c) {
    for (std::size_t j = 0; j < ref.size(); ++j)
      if (cand_vocab.count(ref[j])) {
        ref_pos.push_back(static_cast<int>(j));
        ref_tok.push_back(&ref[j]);
      }
  }

  static std::uint32_t pack(int matches, int chunks) {
    // higher is better: maximize matches, then minimize chunks
    return (static_cast<std::uint32_t>(matches) << 16) | static_cast<std::uint32_t>(0xffff - chunks);
  }

  std::uint32_t solve(std::size_t i, std::uint64_t mask, int prev_slot) {
    if (i == cand.size()) return pack(0, 0);
    const std::uint64_t key =
        (static_cast<std::uint64_t>(i) << 56) | (static_cast<std::uint64_t>(prev_slot + 1) << 48) | mask;
    auto it = memo.find(key);
    if (it != memo.end()) return it->second;

    std::uint32_t best = solve(i + 1, mask, -1);  // leave candidate token i unmatched
    for (std::size_t s = 0; s < ref_pos.size(); ++s) {
      if (mask & (1ULL << s)) continue;
      if (*ref_tok[s] != cand[i]) continue;
      const bool contiguous = prev_slot >= 0 && ref_pos[s] == ref_pos[static_cast<std::size_t>(prev_slot)] + 1;
      const std::uint32_t sub = solve(i + 1, mask | (1ULL << s), static_cast<int>(s));
      const int matches = static_cast<int>(sub >> 16) + 1;
      const int chunks = static_cast<int>(0xffff - (sub & 0xffff)) + (contiguous ? 0 : 1);
      best = std::max(best, pack(matches, chunks));
    }
    memo.emplace(key, best);
    return best;
  }
};

inline Alignment meteor_align(const std::vector<std::string>& cand, const std::vector<std::string>& ref) {
  std::set<std::string> cand_vocab(cand.begin(), cand.end());
  int matchable = 0;
  for (const auto& t : ref)
    if (cand_vocab.count(t)) ++matchable;
  // The exact search is exponential in pathological repetition; long inputs
  // fall back to the greedy alignment.
  if (matchable > 20 || cand.size() > 80) return meteor_align_greedy(cand, ref);

  MeteorDp dp(cand, ref, cand_vocab);
  const std::uint32_t packed = dp.solve(0, 0, -1);
  Alignment a;
  a.matches = static_cast<int>(packed >> 16);
  a.chunks = static_cast<int>(0xffff - (packed & 0xffff));
  return a;
}

inline double meteor_pair(const ScoredPair& p, double eta, double penalty_weight, double penalty_exponent) {
  double best = 0.0;
  for (const auto& ref : p.references) {
    if (ref.empty()) continue;
    const Alignment a = meteor_align(p.candidate, ref);
    if (a.matches == 0) continue;
    const double pm = static_cast<double>(a.matches) / static_cast<double>(p.candidate.size());
    const double rm = static_cast<double>(a.matches) / static_cast<double>(ref.size());
    const double f = pm * rm / (eta * pm + (1.0 - eta) * rm);
    const double pen =
        penalty_weight * std::pow(static_cast<double>(a.chunks) / static_cast<double>(a.matches), penalty_exponent);
    best = std::max(best, (1.0 - pen) * f);
  }
  return best;
}
}  // namespace detail

// Unigram-exact METEOR; multi-reference scores take the best reference and
// the corpus score is the mean over pairs.
inline double meteor(const std::vector<ScoredPair>& pairs, double eta, double penalty_weight,
                     double penalty_exponent) {
  if (!(eta > 0.0 && eta < 1.0)) throw ConfigError("meteor: eta must be in (0, 1)");
  validate_pairs(pairs);
  std::vector<double> scores(pairs.size(), 0.0);
  parallel_for(pairs.size(), [&](std::size_t i) {
    if (!pairs[i].candidate.empty())
      scores[i] = detail::meteor_pair(pairs[i], eta, penalty_weight, penalty_exponent);
  });
  double sum = 0.0;
  for (double s : scores) sum += s;
  return sum / static_cast<double>(pairs.size());
}

// ---------------------------------------------------------------------------
// ROUGE-L

namespace detail {
inline int lcs_length(const std::vector<std::string>& a, const std::vector<std::string>& b) {
  const std::size_t n = a.size(), m = b.size();
  std::vector<int> prev(m + 1, 0), cur(m + 1, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    for (std::size_t j = 1; j <= m; ++j)
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    std::swap(prev, cur);
  }
  return prev[m];
}

inline double rouge_pair(const ScoredPair& p, double mu) {
  double best = 0.0;
  for (const auto& ref : p.references) {
    if (ref.empty()) continue;
    const int lcs = lcs_length(p.candidate, ref);
    if (lcs == 0) continue;
    const double pl = static_cast<double>(lcs) / static_cast<double>(p.candidate.size());
    const double rl = static_cast<double>(lcs) / static_cast<double>(ref.size());
    best = std::max(best, (1.0 + mu * mu) * rl * pl / (rl + mu * mu * pl));
  }
  return best;
}
}  // namespace detail

inline double rouge_l(const std::vector<ScoredPair>& pairs, double mu) {
  if (!(mu > 0.0)) throw ConfigError("rouge_l: mu must be positive");
  validate_pairs(pairs);
  std::vector<double> scores(pairs.size(), 0.0);
  parallel_for(pairs.size(), [&](std::size_t i) {
    if (!pairs[i].candidate.empty()) scores[i] = detail::rouge_pair(pairs[i], mu);
  });
  double sum = 0.0;
  for (double s : scores) sum += s;
  return sum / static_cast<double>(pairs.size());
}

// ---------------------------------------------------------------------------
// CIDEr
//
// TF = count / total n-grams of the sentence. IDF = ln(|images| / df) with
// document frequency taken over per-image reference sets only; n-grams absent
// from every reference set get weight 0. The score sums the per-n cosines
// (n = 1..N) averaged over references, then averages over candidates. The
// canonical flag additionally applies the 1/N factor and the x10 scaling used
// by standard tooling.

namespace detail {
struct IdfTable {
  std::vector<std::map<Ngram, double>> idf;  // per n (1-based index n-1)
  double num_images = 0;
};

inline IdfTable build_idf(const std::vector<ScoredPair>& pairs, int N) {
  IdfTable table;
  table.idf.resize(static_cast<std::size_t>(N));
  std::set<std::string> seen_ids;
  std::vector<const ScoredPair*> unique_pairs;
  for (const auto& p : pairs)
    if (seen_ids.insert(p.image_id).second) unique_pairs.push_back(&p);
  table.num_images = static_cast<double>(unique_pairs.size());
  for (int n = 1; n <= N; ++n) {
    std::map<Ngram, int> df;
    for (const ScoredPair* p : unique_pairs) {
      std::set<Ngram> grams;
      for (const auto& ref : p->references)
        for (const auto& [gram, c] : count_ngrams(ref, n)) grams.insert(gram);
      for (const auto& gram : grams) ++df[gram];
    }
    for (const auto& [gram, d] : df)
      table.idf[static_cast<std::size_t>(n - 1)][gram] = std::log(table.num_images / static_cast<double>(d));
  }
  return table;
}

inline std::map<Ngram, double> tfidf_vector(const std::vector<std::string>& tokens, int n,
                                            const std::map<Ngram, double>& idf) {
  std::map<Ngram, double> vec;
  const auto counts = count_ngrams(tokens, n);
  double total = 0.0;
  for (const auto& [gram, c] : counts) total += c;
  if (total == 0.0) return vec;
  for (const auto& [gram, c] : counts) {
    auto it = idf.find(gram);
    if (it == idf.end()) continue;  // unseen n-gram: weight 0
    const double w = (static_cast<double>(c) / total) * it->second;
    if (w != 0.0) vec[gram] = w;
  }
  return vec;
}

inline double cosine(const std::map<Ngram, double>& a, const std::map<Ngram, double>& b) {
  double na = 0.0, nb = 0.0, dot = 0.0;
  for (const auto& [g, v] : a) na += v * v;
  for (const auto& [g, v] : b) nb += v * v;
  if (na == 0.0 || nb == 0.0) return 0.0;
  for (const auto& [g, v] : a) {
    auto it = b.find(g);
    if (it != b.end()) dot += v * it->second;
  }
  return dot / (std::sqrt(na) * std::sqrt(nb));
}
}  // namespace detail

inline double cider(const std::vector<ScoredPair>& pairs, int N, bool canonical = false) {
  if (N < 1) throw ConfigError("cider: N must be >= 1");
  validate_pairs(pairs);
  const auto idf_table = detail::build_idf(pairs, N);
  std::vector<double> scores(pairs.size(), 0.0);
  parallel_for(pairs.size(), [&](std::size_t i) {
    const auto& p = pairs[i];
    double sum = 0.0;
    const double num_refs = static_cast<double>(p.references.size());
    for (int n = 1; n <= N; ++n) {
      const auto cand_vec = detail::tfidf_vector(p.candidate, n, idf_table.idf[static_cast<std::size_t>(n - 1)]);
      for (const auto& ref : p.references)
        sum += detail::cosine(cand_vec, detail::tfidf_vector(ref, n, idf_table.idf[static_cast<std::size_t>(n - 1)]));
    }
    scores[i] = sum / num_refs;
  });
  double total = 0.0;
  for (double s : scores) total += s;
  double out = total / static_cast<double>(pairs.size());
  if (canonical) out *= 10.0 / static_cast<double>(N);
  return out;
}

// ---------------------------------------------------------------------------
// report

inline MetricReport evaluate(const std::vector<ScoredPair>& pairs, const MetricConfig& cfg) {
  MetricReport report;
  report.config = cfg;
  report.corpus_size = static_cast<int>(pairs.size());
  report.bleu = bleu(pairs, cfg.bleu_n);
  report.meteor = meteor(pairs, cfg.meteor_eta, cfg.meteor_penalty_weight, cfg.meteor_penalty_exponent);
  report.rouge_l = rouge_l(pairs, cfg.rouge_mu);
  report.cider = cider(pairs, cfg.cider_n, cfg.cider_canonical);
  return report;
}

inline nlohmann::ordered_json report_to_json(const MetricReport& r) {
  nlohmann::ordered_json j;
  for (std::size_t i = 0; i < r.bleu.size(); ++i) j["bleu_" + std::to_string(i + 1)] = r.bleu[i];
  j["meteor"] = r.meteor;
  j["rouge_l"] = r.rouge_l;
  j["cider"] = r.cider;
  j["corpus_size"] = r.corpus_size;
  j["config"] = {{"bleu_n", r.config.bleu_n},
                 {"meteor_eta", r.config.meteor_eta},
                 {"meteor_penalty_weight", r.config.meteor_penalty_weight},
                 {"meteor_penalty_exponent", r.config.meteor_penalty_exponent},
                 {"rouge_mu", r.config.rouge_mu},
                 {"cider_n", r.config.cider_n},
                 {"cider_canonical", r.config.cider_canonical}};
  return j;
}

// Plain-text table, one row per labelled report: BLEU-1..4, METEOR, ROUGE-L,
// CIDEr in that column order.
inline std::string format_report_table(const std::vector<std::pair<std::string, MetricReport>>& rows) {
  std::string out;
  std::size_t label_width = 5;
  for (const auto& [label, r] : rows) label_width = std::max(label_width, label.size());
  auto pad = [](std::string s, std::size_t w) {
    while (s.size() < w) s.push_back(' ');
    return s;
  };
  out += pad("Model", label_width + 2);
  for (const char* col : {"BLEU-1", "BLEU-2", "BLEU-3", "BLEU-4", "METEOR", "ROUGE-L", "CIDEr"})
    out += pad(col, 9);
  out += "\n";
  for (const auto& [label, r] : rows) {
    out += pad(label, label_width + 2);
    for (int k = 0; k < 4; ++k)
      out += pad(k < static_cast<int>(r.bleu.size()) ? format_fixed(r.bleu[static_cast<std::size_t>(k)], 4) : "-", 9);
    out += pad(format_fixed(r.meteor, 4), 9);
    out += pad(format_fixed(r.rouge_l, 4), 9);
    out += pad(format_fixed(r.cider, 4), 9);
    out += "\n";
  }
  return out;
}

}  // namespace pvgf::metrics
