#pragma once

#include <string>
#include <utility>
#include <vector>

#include "pvgf/ops.hpp"
#include "pvgf/rng.hpp"

namespace pvgf {

// Uniform in +/- sqrt(6 / (fan_in + fan_out)).
inline Tensor glorot_uniform(Shape shape, int fan_in, int fan_out, Rng& rng) {
  const double limit = std::sqrt(6.0 / (fan_in + fan_out));
  Tensor t = Tensor::zeros(std::move(shape), true);
  for (long long i = 0; i < t.numel(); ++i) t[i] = rng.uniform(-limit, limit);
  return t;
}

struct EncoderBlockSpec {
  int expansion = 1;    // channel expansion factor (>= 1)
  int out_channels = 8;
  int stride = 1;       // 1 or 2
};

struct EncoderConfig {
  int input_resolution = 32;
  int stem_channels = 8;
  std::vector<EncoderBlockSpec> blocks = {{1, 8, 1}, {2, 12, 2}, {2, 16, 1}, {2, 24, 2}};
  int head_channels = 64;

  void validate() const {
    if (input_resolution < 4) throw ConfigError("encoder: input_resolution must be >= 4");
    if (stem_channels < 1 || head_channels < 1) throw ConfigError("encoder: channel counts must be positive");
    if (blocks.empty()) throw ConfigError("encoder: at least one block required");
    for (const auto& b : blocks) {
      if (b.expansion < 1) throw ConfigError("encoder: expansion_factor must be >= 1");
      if (b.stride != 1 && b.stride != 2) throw ConfigError("encoder: stride must be 1 or 2");
      if (b.out_channels < 1) throw ConfigError("encoder: out_channels must be positive");
    }
  }
};

// Parameters of one inverted residual block:
// 1x1 expansion conv (+ReLU) -> 3x3 depthwise conv (+ReLU) -> 1x1 linear
// projection, with a skip connection when stride == 1 and channels match.
struct InvertedResidualParams {
  int in_channels = 0, mid_channels = 0, out_channels = 0, stride = 1;
  Tensor expand_w, expand_b;   // [mid, in, 1, 1], [mid]
  Tensor dw_w, dw_b;           // [mid, 3, 3], [mid]
  Tensor project_w, project_b; // [out, mid, 1, 1], [out]
};

inline Tensor inverted_residual_block(const Tensor& x, const InvertedResidualParams& p) {
  Tensor h = relu(conv2d(x, p.expand_w, p.expand_b, 1, Padding::Same));
  h = relu(depthwise_conv2d(h, p.dw_w, p.dw_b, p.stride, Padding::Same));
  h = conv2d(h, p.project_w, p.project_b, 1, Padding::Same);
  if (p.stride == 1 && p.in_channels == p.out_channels) h = add(h, x);
  return h;
}

// Inverted-residual CNN producing the image feature vector: stem conv ->
// blocks -> 1x1 head conv -> global average pooling. No normalization layers;
// per-channel biases are learned instead.
class VisionEncoder {
 public:
  VisionEncoder() = default;

  VisionEncoder(const EncoderConfig& cfg, Rng& rng) : cfg_(cfg) {
    cfg_.validate();
    stem_w_ = glorot_uniform({cfg.stem_channels, 3, 3, 3}, 3 * 9, cfg.stem_channels * 9, rng);
    stem_b_ = Tensor::zeros({cfg.stem_channels}, true);
    int in_ch = cfg.stem_channels;
    for (const auto& spec : cfg.blocks) {
      InvertedResidualParams p;
      p.in_channels = in_ch;
      p.mid_channels = in_ch * spec.expansion;
      p.out_channels = spec.out_channels;
      p.stride = spec.stride;
      p.expand_w = glorot_uniform({p.mid_channels, in_ch, 1, 1}, in_ch, p.mid_channels, rng);
      p.expand_b = Tensor::zeros({p.mid_channels}, true);
      p.dw_w = glorot_uniform({p.mid_channels, 3, 3}, 9, 9, rng);
      p.dw_b = Tensor::zeros({p.mid_channels}, true);
      p.project_w = glorot_uniform({p.out_channels, p.mid_channels, 1, 1}, p.mid_channels, p.out_channels, rng);
      p.project_b = Tensor::zeros({p.out_channels}, true);
      blocks_.push_back(std::move(p));
      in_ch = spec.out_channels;
    }
    head_w_ = glorot_uniform({cfg.head_channels, in_ch, 1, 1}, in_ch, cfg.head_channels, rng);
    head_b_ = Tensor::zeros({cfg.head_channels}, true);
  }

  const EncoderConfig& config() const { return cfg_; }

  // image: [H, W, 3] with H == W == input_resolution, values in [0, 1].
  Tensor encode(const Tensor& image) const {
    if (image.ndim() != 3 || image.dim(2) != 3 || image.dim(0) != cfg_.input_resolution ||
        image.dim(1) != cfg_.input_resolution)
      throw ShapeError("encode: resolution mismatch: image " + shape_str(image.shape()) + ", encoder expects " +
                       std::to_string(cfg_.input_resolution) + "x" + std::to_string(cfg_.input_resolution) + "x3");
    Tensor x = to_chw(image);
    x = relu(conv2d(x, stem_w_, stem_b_, 2, Padding::Same));
    for (const auto& p : blocks_) x = inverted_residual_block(x, p);
    x = relu(conv2d(x, head_w_, head_b_, 1, Padding::Same));
    return global_avg_pool(x);
  }

  const std::vector<InvertedResidualParams>& blocks() const { return blocks_; }

  void collect_params(std::vector<std::pair<std::string, Tensor>>& out) const {
    out.emplace_back("encoder.stem.w", stem_w_);
    out.emplace_back("encoder.stem.b", stem_b_);
    for (std::size_t i = 0; i < blocks_.size(); ++i) {
      const std::string prefix = "encoder.block" + std::to_string(i) + ".";
      out.emplace_back(prefix + "expand.w", blocks_[i].expand_w);
      out.emplace_back(prefix + "expand.b", blocks_[i].expand_b);
      out.emplace_back(prefix + "dw.w", blocks_[i].dw_w);
      out.emplace_back(prefix + "dw.b", blocks_[i].dw_b);
      out.emplace_back(prefix + "project.w", blocks_[i].project_w);
      out.emplace_back(prefix + "project.b", blocks_[i].project_b);
    }
    out.emplace_back("encoder.head.w", head_w_);
    out.emplace_back("encoder.head.b", head_b_);
  }

  // [H, W, 3] -> [3, H, W]; plain input data, not a tape node.
  static Tensor to_chw(const Tensor& image) {
    const int h = image.dim(0), w = image.dim(1);
    Tensor x = Tensor::zeros({3, h, w});
    for (int y = 0; y < h; ++y)
      for (int xx = 0; xx < w; ++xx)
        for (int c = 0; c < 3; ++c)
          x[(static_cast<long long>(c) * h + y) * w + xx] = image[(static_cast<long long>(y) * w + xx) * 3 + c];
    return x;
  }

 private:
  EncoderConfig cfg_;
  Tensor stem_w_, stem_b_;
  std::vector<InvertedResidualParams> blocks_;
  Tensor head_w_, head_b_;
};

}  // namespace pvgf
