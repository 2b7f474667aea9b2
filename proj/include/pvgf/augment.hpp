#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "pvgf/data.hpp"
#include "pvgf/error.hpp"
#include "pvgf/image.hpp"
#include "pvgf/rng.hpp"
#include "pvgf/util.hpp"

namespace pvgf {

// ---------------------------------------------------------------------------
// transform specs
//
// Parsed from compact strings:
//   flip_h | flip_v | rotate_90 | rotate_180 | rotate_270 | rotate_<deg>
//   crop_<fraction> | noise_<sigma> | jitter_<delta> | jitter_<b>_<c>_<s>
//   sharpen_<strength>

enum class TransformKind { FlipH, FlipV, Rotate90, Rotate180, Rotate270, RotateAngle, Crop, Noise, Jitter, Sharpen };

struct TransformSpec {
  TransformKind kind;
  double a = 0.0, b = 0.0, c = 0.0;  // kind-dependent parameters
  std::string name;                  // canonical name recorded in lineage
};

inline TransformSpec parse_transform(const std::string& text) {
  auto parts = split_string(text, '_');
  auto num = [&](std::size_t i) {
    try {
      return std::stod(parts.at(i));
    } catch (...) {
      throw ConfigError("transform '" + text + "': bad numeric parameter");
    }
  };
  TransformSpec spec;
  spec.name = text;
  if (text == "flip_h") {
    spec.kind = TransformKind::FlipH;
  } else if (text == "flip_v") {
    spec.kind = TransformKind::FlipV;
  } else if (text == "rotate_90") {
    spec.kind = TransformKind::Rotate90;
  } else if (text == "rotate_180") {
    spec.kind = TransformKind::Rotate180;
  } else if (text == "rotate_270") {
    spec.kind = TransformKind::Rotate270;
  } else if (parts.size() == 2 && parts[0] == "rotate") {
    spec.kind = TransformKind::RotateAngle;
    spec.a = num(1);
    if (!(spec.a > -90.0 && spec.a < 90.0)) throw ConfigError("transform '" + text + "': angle must be in (-90, 90)");
  } else if (parts.size() == 2 && parts[0] == "crop") {
    spec.kind = TransformKind::Crop;
    spec.a = num(1);
    if (!(spec.a > 0.0 && spec.a <= 1.0)) throw ConfigError("transform '" + text + "': fraction must be in (0, 1]");
  } else if (parts.size() == 2 && parts[0] == "noise") {
    spec.kind = TransformKind::Noise;
    spec.a = num(1);
    if (spec.a < 0.0) throw ConfigError("transform '" + text + "': sigma must be >= 0");
  } else if ((parts.size() == 2 || parts.size() == 4) && parts[0] == "jitter") {
    spec.kind = TransformKind::Jitter;
    spec.a = num(1);
    spec.b = parts.size() == 4 ? num(2) : spec.a;
    spec.c = parts.size() == 4 ? num(3) : spec.a;
    if (spec.a < 0 || spec.b < 0 || spec.c < 0) throw ConfigError("transform '" + text + "': deltas must be >= 0");
  } else if (parts.size() == 2 && parts[0] == "sharpen") {
    spec.kind = TransformKind::Sharpen;
    spec.a = num(1);
    if (spec.a < 0.0) throw ConfigError("transform '" + text + "': strength must be >= 0");
  } else {
    throw ConfigError("unknown transform: '" + text + "'");
  }
  return spec;
}

// ---------------------------------------------------------------------------
// individual transforms

namespace detail {

inline Tensor flip_image(const Tensor& img, bool horizontal) {
  const int h = img.dim(0), w = img.dim(1);
  Tensor out = make_image(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c)
        px(out, y, x, c) = horizontal ? px(img, y, w - 1 - x, c) : px(img, h - 1 - y, x, c);
  return out;
}

// Quarter-turn rotations are exact pixel permutations.
inline Tensor rotate_quarter(const Tensor& img, int quarters) {
  const int h = img.dim(0), w = img.dim(1);
  Tensor out = quarters == 2 ? make_image(h, w) : make_image(w, h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) {
        double v = px(img, y, x, c);
        if (quarters == 1)  // 90 degrees counterclockwise
          px(out, w - 1 - x, y, c) = v;
        else if (quarters == 2)
          px(out, h - 1 - y, w - 1 - x, c) = v;
        else  // 270
          px(out, x, h - 1 - y, c) = v;
      }
  return out;
}

// Small-angle rotation about the image center with bilinear resampling and
// clamp-to-edge source sampling.
inline Tensor rotate_angle(const Tensor& img, double degrees) {
  const int h = img.dim(0), w = img.dim(1);
  const double rad = degrees * 3.14159265358979323846 / 180.0;
  const double cs = std::cos(rad), sn = std::sin(rad);
  const double cy = (h - 1) / 2.0, cx = (w - 1) / 2.0;
  Tensor out = make_image(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double dy = y - cy, dx = x - cx;
      const double sy = cs * dy - sn * dx + cy;
      const double sx = sn * dy + cs * dx + cx;
      const int y0 = std::clamp(static_cast<int>(std::floor(sy)), 0, h - 1);
      const int x0 = std::clamp(static_cast<int>(std::floor(sx)), 0, w - 1);
      const int y1 = std::min(y0 + 1, h - 1), x1 = std::min(x0 + 1, w - 1);
      const double fy = std::clamp(sy - y0, 0.0, 1.0), fx = std::clamp(sx - x0, 0.0, 1.0);
      for (int c = 0; c < 3; ++c) {
        const double top = px(img, y0, x0, c) * (1 - fx) + px(img, y0, x1, c) * fx;
        const double bot = px(img, y1, x0, c) * (1 - fx) + px(img, y1, x1, c) * fx;
        px(out, y, x, c) = top * (1 - fy) + bot * fy;
      }
    }
  return out;
}

}  // namespace detail

// Applies one transform. Deterministic given (spec, seed); output has the
// same shape as the input and values clamped to [0, 1].
inline Tensor augment(const Tensor& img, const TransformSpec& spec, std::uint64_t seed) {
  check_image(img, "augment");
  const int h = img.dim(0), w = img.dim(1);
  Rng rng(mix_seed(seed, fnv1a64(spec.name)));
  switch (spec.kind) {
    case TransformKind::FlipH:
      return detail::flip_image(img, true);
    case TransformKind::FlipV:
      return detail::flip_image(img, false);
    case TransformKind::Rotate90: {
      Tensor r = detail::rotate_quarter(img, 1);
      // keep the declared shape contract for non-square images
      return h == w ? r : resize_bilinear(r, h, w);
    }
    case TransformKind::Rotate180:
      return detail::rotate_quarter(img, 2);
    case TransformKind::Rotate270: {
      Tensor r = detail::rotate_quarter(img, 3);
      return h == w ? r : resize_bilinear(r, h, w);
    }
    case TransformKind::RotateAngle:
      return clamp01(detail::rotate_angle(img, spec.a));
    case TransformKind::Crop: {
      const int ch = std::max(1, static_cast<int>(std::lround(spec.a * h)));
      const int cw = std::max(1, static_cast<int>(std::lround(spec.a * w)));
      const int oy = ch < h ? rng.uniform_int(h - ch + 1) : 0;
      const int ox = cw < w ? rng.uniform_int(w - cw + 1) : 0;
      Tensor crop = make_image(ch, cw);
      for (int y = 0; y < ch; ++y)
        for (int x = 0; x < cw; ++x)
          for (int c = 0; c < 3; ++c) px(crop, y, x, c) = px(img, oy + y, ox + x, c);
      return clamp01(resize_bilinear(crop, h, w));
    }
    case TransformKind::Noise: {
      if (spec.a == 0.0) return img.clone();
      Tensor out = img.clone();
      for (long long i = 0; i < out.numel(); ++i) out[i] += rng.normal(0.0, spec.a);
      return clamp01(std::move(out));
    }
    case TransformKind::Jitter: {
      const double db = rng.uniform(-spec.a, spec.a);
      const double dc = rng.uniform(-spec.b, spec.b);
      const double ds = rng.uniform(-spec.c, spec.c);
      Tensor out = img.clone();
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
          const double r = px(out, y, x, 0), g = px(out, y, x, 1), b = px(out, y, x, 2);
          const double luma = 0.299 * r + 0.587 * g + 0.114 * b;
          for (int c = 0; c < 3; ++c) {
            double v = px(out, y, x, c);
            v = luma + (v - luma) * (1.0 + ds);       // saturation
            v = (v - 0.5) * (1.0 + dc) + 0.5;         // contrast
            v += db;                                  // brightness
            px(out, y, x, c) = v;
          }
        }
      return clamp01(std::move(out));
    }
    case TransformKind::Sharpen: {
      // unsharp mask over a 3x3 box blur with edge replication
      Tensor out = img.clone();
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
          for (int c = 0; c < 3; ++c) {
            double blur = 0.0;
            for (int dy = -1; dy <= 1; ++dy)
              for (int dx = -1; dx <= 1; ++dx)
                blur += px(img, std::clamp(y + dy, 0, h - 1), std::clamp(x + dx, 0, w - 1), c);
            blur /= 9.0;
            px(out, y, x, c) = px(img, y, x, c) + spec.a * (px(img, y, x, c) - blur);
          }
      return clamp01(std::move(out));
    }
  }
  throw ConfigError("augment: unhandled transform kind");
}

inline Tensor augment(const Tensor& img, const std::string& spec_text, std::uint64_t seed) {
  return augment(img, parse_transform(spec_text), seed);
}

// ---------------------------------------------------------------------------
// dataset expansion

struct AugmentPlan {
  int multiplier = 4;
  std::vector<TransformSpec> default_transforms;                     // applies to every category
  std::map<std::string, std::vector<TransformSpec>> per_category;    // overrides by category

  const std::vector<TransformSpec>& transforms_for(const std::string& category) const {
    auto it = per_category.find(category);
    return it == per_category.end() ? default_transforms : it->second;
  }
};

inline std::vector<TransformSpec> default_transform_cycle() {
  std::vector<TransformSpec> out;
  for (const char* name : {"flip_h", "rotate_90", "rotate_180", "rotate_270", "rotate_12.5", "crop_0.9",
                           "noise_0.02", "jitter_0.15", "sharpen_0.8"})
    out.push_back(parse_transform(name));
  return out;
}

// Each original yields multiplier-1 derived copies; copy j of sample i uses
// transform j mod |list| with a seed derived from (seed, i, j). Originals are
// carried over untouched, so they are a strict subset of the output.
inline Dataset expand_dataset(const Dataset& input, const AugmentPlan& plan, std::uint64_t seed,
                              const fs::path& out_dir) {
  if (plan.multiplier < 1) throw ConfigError("expand_dataset: multiplier must be >= 1");
  fs::create_directories(out_dir);
  if (fs::equivalent(out_dir, input.base_dir))
    throw ConfigError("expand_dataset: output directory must differ from the input dataset directory");
  Dataset out;
  out.base_dir = out_dir;

  struct Job {
    std::size_t sample_index;
    int copy;
    TransformSpec spec;
    std::string out_name;
  };
  std::vector<Job> jobs;

  for (std::size_t i = 0; i < input.samples.size(); ++i) {
    const CaptionSample& s = input.samples[i];
    const std::string stem = fs::path(s.image_path).stem().string();
    // carry the original forward byte-for-byte
    const fs::path src = input.image_file(s);
    const std::string orig_name = stem + ".png";
    fs::copy_file(src, out_dir / orig_name, fs::copy_options::overwrite_existing);
    CaptionSample copy = s;
    copy.image_path = orig_name;
    out.samples.push_back(copy);

    const auto& transforms = plan.transforms_for(s.category);
    if (plan.multiplier > 1 && transforms.empty())
      throw ConfigError("expand_dataset: no transforms configured for category '" + s.category + "'");
    for (int j = 0; j < plan.multiplier - 1; ++j) {
      const TransformSpec& spec = transforms[static_cast<std::size_t>(j) % transforms.size()];
      Job job;
      job.sample_index = i;
      job.copy = j;
      job.spec = spec;
      job.out_name = stem + "__aug" + std::to_string(j) + "_" + spec.name + ".png";
      jobs.push_back(std::move(job));

      CaptionSample derived = s;
      derived.image_path = jobs.back().out_name;
      derived.lineage = s.lineage;
      derived.lineage.push_back(spec.name);
      out.samples.push_back(std::move(derived));
    }
  }

  parallel_for(jobs.size(), [&](std::size_t k) {
    const Job& job = jobs[k];
    const CaptionSample& s = input.samples[job.sample_index];
    Tensor img = png_read(input.image_file(s).string());
    const std::uint64_t job_seed = mix_seed(mix_seed(seed, job.sample_index), static_cast<std::uint64_t>(job.copy));
    Tensor derived = augment(img, job.spec, job_seed);
    png_write((out_dir / job.out_name).string(), derived);
  });

  write_manifest(out_dir / "manifest.jsonl", out);
  return out;
}

}  // namespace pvgf
