#include <catch2/catch.hpp>

#include <cmath>

#include "pvgf/encoder.hpp"
#include "pvgf/image.hpp"
#include "test_util.hpp"

using namespace pvgf;
using testutil::gradcheck;
using testutil::random_tensor;

namespace {
EncoderConfig tiny_config() {
  EncoderConfig cfg;
  cfg.input_resolution = 8;
  cfg.stem_channels = 4;
  cfg.blocks = {{1, 4, 1}, {2, 6, 2}};
  cfg.head_channels = 10;
  return cfg;
}
}  // namespace

TEST_CASE("encode of an all-zero image is finite") {
  Rng rng(1);
  VisionEncoder enc(tiny_config(), rng);
  Tensor image = make_image(8, 8, 0.0);
  Tensor e_x = enc.encode(image);
  REQUIRE(e_x.ndim() == 1);
  for (long long i = 0; i < e_x.numel(); ++i) CHECK(std::isfinite(e_x[i]));
}

TEST_CASE("encode output length equals head_channels across configs") {
  Rng rng(2);
  for (int head : {3, 10, 17}) {
    EncoderConfig cfg = tiny_config();
    cfg.head_channels = head;
    VisionEncoder enc(cfg, rng);
    Tensor image = random_tensor({8, 8, 3}, rng, false, 0.5);
    for (long long i = 0; i < image.numel(); ++i) image[i] = std::abs(image[i]);
    CHECK(enc.encode(image).dim(0) == head);
  }
}

TEST_CASE("encode rejects resolution mismatches") {
  Rng rng(3);
  VisionEncoder enc(tiny_config(), rng);
  CHECK_THROWS_AS(enc.encode(make_image(9, 9)), ShapeError);
  CHECK_THROWS_AS(enc.encode(make_image(8, 9)), ShapeError);
}

TEST_CASE("encode is deterministic for fixed params and input") {
  Rng rng(4);
  VisionEncoder enc(tiny_config(), rng);
  Tensor image = random_tensor({8, 8, 3}, rng, false, 0.5);
  Tensor a = enc.encode(image);
  Tensor b = enc.encode(image);
  for (long long i = 0; i < a.numel(); ++i) CHECK(a[i] == b[i]);
}

TEST_CASE("zero-weight block with stride 1 and equal channels is the identity") {
  InvertedResidualParams p;
  p.in_channels = 3;
  p.mid_channels = 3;
  p.out_channels = 3;
  p.stride = 1;
  p.expand_w = Tensor::zeros({3, 3, 1, 1});
  p.expand_b = Tensor::zeros({3});
  p.dw_w = Tensor::zeros({3, 3, 3});
  p.dw_b = Tensor::zeros({3});
  p.project_w = Tensor::zeros({3, 3, 1, 1});
  p.project_b = Tensor::zeros({3});
  Rng rng(5);
  Tensor x = random_tensor({3, 6, 6}, rng, false);
  Tensor out = inverted_residual_block(x, p);
  REQUIRE(out.shape() == x.shape());
  for (long long i = 0; i < x.numel(); ++i) CHECK(out[i] == x[i]);
}

TEST_CASE("stride-2 block halves spatial extent with ceil division") {
  Rng rng(6);
  InvertedResidualParams p;
  p.in_channels = 2;
  p.mid_channels = 4;
  p.out_channels = 5;
  p.stride = 2;
  p.expand_w = random_tensor({4, 2, 1, 1}, rng, false);
  p.expand_b = random_tensor({4}, rng, false);
  p.dw_w = random_tensor({4, 3, 3}, rng, false);
  p.dw_b = random_tensor({4}, rng, false);
  p.project_w = random_tensor({5, 4, 1, 1}, rng, false);
  p.project_b = random_tensor({5}, rng, false);
  Tensor x = random_tensor({2, 7, 9}, rng, false);
  Tensor out = inverted_residual_block(x, p);
  CHECK(out.dim(0) == 5);
  CHECK(out.dim(1) == 4);  // ceil(7/2)
  CHECK(out.dim(2) == 5);  // ceil(9/2)
}

TEST_CASE("gradient check through a full inverted residual block") {
  Rng rng(7);
  InvertedResidualParams p;
  p.in_channels = 2;
  p.mid_channels = 4;
  p.out_channels = 2;
  p.stride = 1;
  p.expand_w = random_tensor({4, 2, 1, 1}, rng);
  p.expand_b = random_tensor({4}, rng, true, 0.2);
  p.dw_w = random_tensor({4, 3, 3}, rng);
  p.dw_b = random_tensor({4}, rng, true, 0.2);
  p.project_w = random_tensor({2, 4, 1, 1}, rng);
  p.project_b = random_tensor({2}, rng, true, 0.2);
  Tensor x = random_tensor({2, 5, 5}, rng);
  auto res = gradcheck([&] { return sum_all(inverted_residual_block(x, p)); },
                       {x, p.expand_w, p.expand_b, p.dw_w, p.dw_b, p.project_w, p.project_b}, 6, 1e-5, 9);
  CHECK(res.max_rel_err < 1e-4);
}

TEST_CASE("hand-set near-1x1 encoder matches a per-pixel linear-algebra oracle") {
  // Depthwise kernels with only the center tap populated collapse every stage
  // to a per-pixel linear map, which the oracle reproduces with plain loops.
  EncoderConfig cfg;
  cfg.input_resolution = 8;
  cfg.stem_channels = 2;
  cfg.blocks = {{1, 2, 1}};
  cfg.head_channels = 3;
  Rng rng(8);
  VisionEncoder enc(cfg, rng);

  std::vector<std::pair<std::string, Tensor>> params;
  enc.collect_params(params);
  auto get = [&](const std::string& name) -> Tensor {
    for (auto& [n, t] : params)
      if (n == name) return t;
    FAIL("missing param " + name);
    return Tensor();
  };

  // stem: zero everything except the center tap so it acts per-pixel
  Tensor stem_w = get("encoder.stem.w");
  for (long long i = 0; i < stem_w.numel(); ++i) stem_w[i] = 0.0;
  auto stem_at = [&](int oc, int ic) -> double& {
    return stem_w[((static_cast<long long>(oc) * 3 + ic) * 3 + 1) * 3 + 1];
  };
  stem_at(0, 0) = 0.7;
  stem_at(0, 1) = -0.2;
  stem_at(0, 2) = 0.1;
  stem_at(1, 0) = -0.3;
  stem_at(1, 1) = 0.5;
  stem_at(1, 2) = 0.4;
  Tensor stem_b = get("encoder.stem.b");
  stem_b[0] = 0.05;
  stem_b[1] = -0.02;

  Tensor expand_w = get("encoder.block0.expand.w");
  expand_w.values() = {0.6, 0.1, -0.4, 0.8};
  Tensor expand_b = get("encoder.block0.expand.b");
  expand_b.values() = {0.01, 0.02};
  Tensor dw_w = get("encoder.block0.dw.w");
  for (long long i = 0; i < dw_w.numel(); ++i) dw_w[i] = 0.0;
  dw_w[0 * 9 + 4] = 0.9;  // center taps only
  dw_w[1 * 9 + 4] = 1.1;
  Tensor dw_b = get("encoder.block0.dw.b");
  dw_b.values() = {0.03, -0.01};
  Tensor project_w = get("encoder.block0.project.w");
  project_w.values() = {0.5, -0.6, 0.2, 0.7};
  Tensor project_b = get("encoder.block0.project.b");
  project_b.values() = {0.0, 0.1};
  Tensor head_w = get("encoder.head.w");
  head_w.values() = {0.3, -0.2, 0.5, 0.6, -0.1, 0.4};
  Tensor head_b = get("encoder.head.b");
  head_b.values() = {0.02, -0.05, 0.07};

  Rng img_rng(9);
  Tensor image = make_image(8, 8);
  for (long long i = 0; i < image.numel(); ++i) image[i] = img_rng.uniform();

  // oracle: stride-2 center sampling then per-pixel matvecs
  auto relu_s = [](double v) { return v > 0 ? v : 0.0; };
  double pooled[3] = {0, 0, 0};
  for (int oy = 0; oy < 4; ++oy)
    for (int ox = 0; ox < 4; ++ox) {
      const int iy = 2 * oy + 1, ix = 2 * ox + 1;
      double in[3];
      for (int c = 0; c < 3; ++c) in[c] = image[(static_cast<long long>(iy) * 8 + ix) * 3 + c];
      double stem[2];
      stem[0] = relu_s(0.7 * in[0] - 0.2 * in[1] + 0.1 * in[2] + 0.05);
      stem[1] = relu_s(-0.3 * in[0] + 0.5 * in[1] + 0.4 * in[2] - 0.02);
      double ex[2];
      ex[0] = relu_s(0.6 * stem[0] + 0.1 * stem[1] + 0.01);
      ex[1] = relu_s(-0.4 * stem[0] + 0.8 * stem[1] + 0.02);
      double dw[2];
      dw[0] = relu_s(0.9 * ex[0] + 0.03);
      dw[1] = relu_s(1.1 * ex[1] - 0.01);
      double proj[2];
      proj[0] = 0.5 * dw[0] - 0.6 * dw[1] + 0.0 + stem[0];  // skip connection
      proj[1] = 0.2 * dw[0] + 0.7 * dw[1] + 0.1 + stem[1];
      double head[3];
      head[0] = relu_s(0.3 * proj[0] - 0.2 * proj[1] + 0.02);
      head[1] = relu_s(0.5 * proj[0] + 0.6 * proj[1] - 0.05);
      head[2] = relu_s(-0.1 * proj[0] + 0.4 * proj[1] + 0.07);
      for (int c = 0; c < 3; ++c) pooled[c] += head[c];
    }
  for (double& v : pooled) v /= 16.0;

  Tensor e_x = enc.encode(image);
  for (int c = 0; c < 3; ++c) CHECK(e_x[c] == Approx(pooled[c]).margin(1e-10));
}

TEST_CASE("gradient flows into every encoder parameter") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Rng rng(100 + seed);
    VisionEncoder enc(tiny_config(), rng);
    Tensor image = random_tensor({8, 8, 3}, rng, false, 0.5);
    for (long long i = 0; i < image.numel(); ++i) image[i] = std::abs(image[i]);
    Tape tape;
    Tensor loss = sum_all(enc.encode(image));
    tape.backward(loss);
    std::vector<std::pair<std::string, Tensor>> params;
    enc.collect_params(params);
    for (const auto& [name, t] : params) {
      REQUIRE(t.requires_grad());
      bool any_nonzero = false;
      for (long long i = 0; i < t.numel(); ++i)
        if (t.grad()[i] != 0.0) any_nonzero = true;
      INFO(name << " at seed " << seed);
      CHECK(any_nonzero);
    }
  }
}
