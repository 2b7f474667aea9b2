#pragma once

#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "pvgf/data.hpp"
#include "pvgf/image.hpp"
#include "pvgf/rng.hpp"

namespace pvgf {

// Procedural stand-in corpus: each category pairs a distinct color signature
// and geometric motif with a handful of caption templates that always mention
// the category term. Background colors are spread far apart in RGB so that
// mean pixel color alone separates the categories.

struct SynthCategory {
  std::string label;
  std::array<double, 3> background;
  std::array<double, 3> motif_color;
  std::vector<std::string> captions;
};

inline const std::vector<SynthCategory>& synth_categories() {
  static const std::vector<SynthCategory> cats = {
      {"deity",
       {0.95, 0.85, 0.20},
       {0.55, 0.10, 0.10},
       {"a golden deity seated on a lotus throne",
        "the deity raises one hand in blessing",
        "a radiant deity crowned with a bright halo"}},
      {"ghost",
       {0.25, 0.10, 0.35},
       {0.85, 0.85, 0.90},
       {"a pale ghost with long curved claws",
        "the ghost drifts through dark smoke",
        "a grinning ghost guards the gate of night"}},
      {"beast",
       {0.85, 0.15, 0.10},
       {0.10, 0.10, 0.15},
       {"a horned beast stands guard at the altar",
        "the beast bares its teeth beneath a red sky",
        "a striped beast with a long curved tail"}},
      {"flora",
       {0.10, 0.70, 0.20},
       {0.95, 0.95, 0.85},
       {"white flora blooms beside the river",
        "tall flora with broad green leaves",
        "a garland of flora winds around the frame"}},
      {"fishing",
       {0.10, 0.35, 0.85},
       {0.90, 0.75, 0.40},
       {"a man fishing from a small wooden boat",
        "two figures fishing with long nets at dawn",
        "a fishing line cast over calm blue water"}},
      {"dance",
       {0.95, 0.45, 0.05},
       {0.25, 0.05, 0.30},
       {"dancers circle the fire in a ritual dance",
        "a dance of drummers in bright robes",
        "the dance unfolds under a burning sun"}},
      {"pattern",
       {0.05, 0.75, 0.75},
       {0.90, 0.20, 0.45},
       {"an endless knot pattern in bright colors",
        "a woven pattern of twin fish and lotus",
        "a lattice pattern frames the sacred vase"}},
  };
  return cats;
}

struct SynthConfig {
  int categories = 7;        // uses the first k built-in categories
  int per_category = 8;
  int resolution = 32;
};

namespace detail {

inline void fill_background(Tensor& img, const std::array<double, 3>& base, Rng& rng) {
  const double jitter[3] = {rng.uniform(-0.04, 0.04), rng.uniform(-0.04, 0.04), rng.uniform(-0.04, 0.04)};
  const int h = img.dim(0), w = img.dim(1);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) px(img, y, x, c) = base[static_cast<std::size_t>(c)] + jitter[c];
}

inline void draw_disc(Tensor& img, double cy, double cx, double r, const std::array<double, 3>& color) {
  const int h = img.dim(0), w = img.dim(1);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      if ((y - cy) * (y - cy) + (x - cx) * (x - cx) <= r * r)
        for (int c = 0; c < 3; ++c) px(img, y, x, c) = color[static_cast<std::size_t>(c)];
}

inline void draw_rect(Tensor& img, int y0, int x0, int y1, int x1, const std::array<double, 3>& color) {
  const int h = img.dim(0), w = img.dim(1);
  for (int y = std::max(0, y0); y <= std::min(h - 1, y1); ++y)
    for (int x = std::max(0, x0); x <= std::min(w - 1, x1); ++x)
      for (int c = 0; c < 3; ++c) px(img, y, x, c) = color[static_cast<std::size_t>(c)];
}

inline void draw_triangle(Tensor& img, double cy, double cx, double size, const std::array<double, 3>& color) {
  const int h = img.dim(0), w = img.dim(1);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double dy = y - cy, dx = x - cx;
      if (dy >= -size && dy <= size && std::abs(dx) <= (dy + size) * 0.5)
        for (int c = 0; c < 3; ++c) px(img, y, x, c) = color[static_cast<std::size_t>(c)];
    }
}

inline void draw_motif(Tensor& img, int category_index, const SynthCategory& cat, Rng& rng) {
  const int h = img.dim(0), w = img.dim(1);
  const double cy = h / 2.0 + rng.uniform(-0.1, 0.1) * h;
  const double cx = w / 2.0 + rng.uniform(-0.1, 0.1) * w;
  const double size = (0.16 + rng.uniform(0.0, 0.06)) * std::min(h, w);
  switch (category_index % 7) {
    case 0:  // disc with halo ring
      draw_disc(img, cy, cx, size, cat.motif_color);
      draw_disc(img, cy - size * 1.4, cx, size * 0.35, cat.motif_color);
      break;
    case 1:  // triangle
      draw_triangle(img, cy, cx, size, cat.motif_color);
      break;
    case 2:  // body with head
      draw_rect(img, static_cast<int>(cy - size * 0.5), static_cast<int>(cx - size), static_cast<int>(cy + size * 0.5),
                static_cast<int>(cx + size), cat.motif_color);
      draw_disc(img, cy - size * 0.8, cx + size, size * 0.45, cat.motif_color);
      break;
    case 3:  // stem with two leaves
      draw_rect(img, static_cast<int>(cy - size), static_cast<int>(cx - 1), static_cast<int>(cy + size),
                static_cast<int>(cx + 1), cat.motif_color);
      draw_disc(img, cy - size * 0.4, cx - size * 0.6, size * 0.4, cat.motif_color);
      draw_disc(img, cy + size * 0.2, cx + size * 0.6, size * 0.4, cat.motif_color);
      break;
    case 4: {  // wavy water strokes and a hull
      for (int x = 0; x < w; ++x) {
        const int yy = static_cast<int>(cy + size * 0.8 + 1.5 * std::sin(x * 0.7));
        if (yy >= 0 && yy < h)
          for (int c = 0; c < 3; ++c) px(img, yy, x, c) = cat.motif_color[static_cast<std::size_t>(c)];
      }
      draw_rect(img, static_cast<int>(cy - size * 0.2), static_cast<int>(cx - size), static_cast<int>(cy + size * 0.2),
                static_cast<int>(cx + size), cat.motif_color);
      break;
    }
    case 5:  // two leaning figures
      draw_rect(img, static_cast<int>(cy - size), static_cast<int>(cx - size * 0.9), static_cast<int>(cy + size),
                static_cast<int>(cx - size * 0.5), cat.motif_color);
      draw_rect(img, static_cast<int>(cy - size), static_cast<int>(cx + size * 0.5), static_cast<int>(cy + size),
                static_cast<int>(cx + size * 0.9), cat.motif_color);
      draw_disc(img, cy - size * 1.3, cx - size * 0.7, size * 0.3, cat.motif_color);
      draw_disc(img, cy - size * 1.3, cx + size * 0.7, size * 0.3, cat.motif_color);
      break;
    default: {  // lattice
      const int step = std::max(3, static_cast<int>(size * 0.8));
      for (int y = step / 2; y < h; y += step)
        for (int x = 0; x < w; ++x)
          for (int c = 0; c < 3; ++c) px(img, y, x, c) = cat.motif_color[static_cast<std::size_t>(c)];
      for (int x = step / 2; x < w; x += step)
        for (int y = 0; y < h; ++y)
          for (int c = 0; c < 3; ++c) px(img, y, x, c) = cat.motif_color[static_cast<std::size_t>(c)];
      break;
    }
  }
}

}  // namespace detail

inline Tensor render_synth_image(int category_index, int resolution, std::uint64_t seed) {
  const auto& cats = synth_categories();
  const SynthCategory& cat = cats[static_cast<std::size_t>(category_index)];
  Rng rng(seed);
  Tensor img = make_image(resolution, resolution);
  detail::fill_background(img, cat.background, rng);
  detail::draw_motif(img, category_index, cat, rng);
  for (long long i = 0; i < img.numel(); ++i) img[i] += rng.uniform(-0.015, 0.015);
  return clamp01(std::move(img));
}

// Renders the corpus and writes manifest.jsonl plus one PNG per sample.
inline Dataset generate_synthetic_corpus(const SynthConfig& cfg, std::uint64_t seed, const fs::path& out_dir) {
  if (cfg.categories < 1 || cfg.categories > static_cast<int>(synth_categories().size()))
    throw ConfigError("generate_synthetic_corpus: categories must be in [1, " +
                      std::to_string(synth_categories().size()) + "]");
  if (cfg.per_category < 1) throw ConfigError("generate_synthetic_corpus: per_category must be >= 1");
  if (cfg.resolution < 8) throw ConfigError("generate_synthetic_corpus: resolution must be >= 8");

  fs::create_directories(out_dir);
  Dataset ds;
  ds.base_dir = out_dir;
  const auto& cats = synth_categories();
  for (int k = 0; k < cfg.categories; ++k) {
    const SynthCategory& cat = cats[static_cast<std::size_t>(k)];
    for (int i = 0; i < cfg.per_category; ++i) {
      const std::uint64_t sample_seed = mix_seed(mix_seed(seed, static_cast<std::uint64_t>(k)),
                                                 static_cast<std::uint64_t>(i));
      Tensor img = render_synth_image(k, cfg.resolution, sample_seed);
      char name[64];
      std::snprintf(name, sizeof(name), "%s_%03d.png", cat.label.c_str(), i);
      png_write((out_dir / name).string(), img);

      CaptionSample s;
      s.image_path = name;
      s.category = cat.label;
      Rng crng(mix_seed(sample_seed, 0x434150ULL));
      s.caption = cat.captions[static_cast<std::size_t>(crng.uniform_int(static_cast<int>(cat.captions.size())))];
      ds.samples.push_back(std::move(s));
    }
  }
  write_manifest(out_dir / "manifest.jsonl", ds);
  return ds;
}

// Nearest-centroid classifier over mean pixel color; linear in the feature.
// Returns the held-out-free training accuracy used by the separability check.
inline double mean_color_probe_accuracy(const Dataset& ds) {
  if (ds.samples.empty()) throw ConfigError("mean_color_probe_accuracy: empty dataset");
  std::map<std::string, std::array<double, 4>> acc;  // label -> (r,g,b,count)
  std::vector<std::array<double, 3>> means(ds.samples.size());
  for (std::size_t i = 0; i < ds.samples.size(); ++i) {
    Tensor img = png_read(ds.image_file(ds.samples[i]).string());
    double m[3] = {0, 0, 0};
    const long long n = img.numel() / 3;
    for (long long p = 0; p < n; ++p)
      for (int c = 0; c < 3; ++c) m[c] += img[p * 3 + c];
    for (int c = 0; c < 3; ++c) means[i][static_cast<std::size_t>(c)] = m[c] / static_cast<double>(n);
    auto& a = acc[ds.samples[i].category];
    for (int c = 0; c < 3; ++c) a[static_cast<std::size_t>(c)] += means[i][static_cast<std::size_t>(c)];
    a[3] += 1.0;
  }
  std::vector<std::pair<std::string, std::array<double, 3>>> centroids;
  for (const auto& [label, a] : acc)
    centroids.push_back({label, {a[0] / a[3], a[1] / a[3], a[2] / a[3]}});

  std::size_t correct = 0;
  for (std::size_t i = 0; i < ds.samples.size(); ++i) {
    double best = 1e300;
    std::string best_label;
    for (const auto& [label, c] : centroids) {
      double d = 0;
      for (int k = 0; k < 3; ++k) {
        const double diff = means[i][static_cast<std::size_t>(k)] - c[static_cast<std::size_t>(k)];
        d += diff * diff;
      }
      if (d < best) {
        best = d;
        best_label = label;
      }
    }
    if (best_label == ds.samples[i].category) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(ds.samples.size());
}

}  // namespace pvgf
