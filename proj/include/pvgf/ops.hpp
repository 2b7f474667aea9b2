#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "pvgf/tensor.hpp"

namespace pvgf {

enum class Padding { Same, Valid };

namespace detail {

inline void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(op) + ": shapes disagree: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// matmul

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.ndim() != 2 || b.ndim() != 2 || a.dim(1) != b.dim(0))
    throw ShapeError("matmul: incompatible shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
  const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor out = Tensor::zeros({m, n});
  {
    const double* A = a.data();
    const double* B = b.data();
    double* O = out.data();
    for (int i = 0; i < m; ++i)
      for (int l = 0; l < k; ++l) {
        const double av = A[i * k + l];
        if (av == 0.0) continue;
        const double* Bl = B + static_cast<std::size_t>(l) * n;
        double* Oi = O + static_cast<std::size_t>(i) * n;
        for (int j = 0; j < n; ++j) Oi[j] += av * Bl[j];
      }
  }
  if (detail::trace({&a, &b})) {
    out.set_requires_grad(true);
    auto an = a.node(), bn = b.node(), on = out.node();
    Tape::active()->record(
        [an, bn, on, m, k, n] {
          const double* G = on->grad.data();
          if (an->requires_grad) {
            double* dA = an->grad.data();
            const double* B = bn->value.data();
            for (int i = 0; i < m; ++i)
              for (int j = 0; j < n; ++j) {
                const double g = G[i * n + j];
                if (g == 0.0) continue;
                for (int l = 0; l < k; ++l) dA[i * k + l] += g * B[l * n + j];
              }
          }
          if (bn->requires_grad) {
            double* dB = bn->grad.data();
            const double* A = an->value.data();
            for (int i = 0; i < m; ++i)
              for (int l = 0; l < k; ++l) {
                const double av = A[i * k + l];
                if (av == 0.0) continue;
                for (int j = 0; j < n; ++j) dB[l * n + j] += av * G[i * n + j];
              }
          }
        },
        {a, b, out});
  }
  return out;
}

// ---------------------------------------------------------------------------
// elementwise and broadcast

inline Tensor add(const Tensor& a, const Tensor& b) {
  detail::check_same_shape(a, b, "add");
  Tensor out = a.clone();
  for (long long i = 0; i < out.numel(); ++i) out[i] += b[i];
  if (detail::trace({&a, &b})) {
    out.set_requires_grad(true);
    auto an = a.node(), bn = b.node(), on = out.node();
    Tape::active()->record(
        [an, bn, on] {
          const auto& g = on->grad;
          if (an->requires_grad)
            for (std::size_t i = 0; i < g.size(); ++i) an->grad[i] += g[i];
          if (bn->requires_grad)
            for (std::size_t i = 0; i < g.size(); ++i) bn->grad[i] += g[i];
        },
        {a, b, out});
  }
  return out;
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  detail::check_same_shape(a, b, "mul");
  Tensor out = a.clone();
  for (long long i = 0; i < out.numel(); ++i) out[i] *= b[i];
  if (detail::trace({&a, &b})) {
    out.set_requires_grad(true);
    auto an = a.node(), bn = b.node(), on = out.node();
    Tape::active()->record(
        [an, bn, on] {
          const auto& g = on->grad;
          if (an->requires_grad)
            for (std::size_t i = 0; i < g.size(); ++i) an->grad[i] += g[i] * bn->value[i];
          if (bn->requires_grad)
            for (std::size_t i = 0; i < g.size(); ++i) bn->grad[i] += g[i] * an->value[i];
        },
        {a, b, out});
  }
  return out;
}

inline Tensor scale(const Tensor& a, double c) {
  Tensor out = a.clone();
  for (long long i = 0; i < out.numel(); ++i) out[i] *= c;
  if (detail::trace({&a})) {
    out.set_requires_grad(true);
    auto an = a.node(), on = out.node();
    Tape::active()->record(
        [an, on, c] {
          for (std::size_t i = 0; i < on->grad.size(); ++i) an->grad[i] += c * on->grad[i];
        },
        {a, out});
  }
  return out;
}

// x: [T x d], bias: [d]; adds the bias to every row.
inline Tensor add_bias(const Tensor& x, const Tensor& b) {
  if (x.ndim() != 2 || b.ndim() != 1 || x.dim(1) != b.dim(0))
    throw ShapeError("add_bias: incompatible shapes " + shape_str(x.shape()) + " and " + shape_str(b.shape()));
  const int rows = x.dim(0), d = x.dim(1);
  Tensor out = x.clone();
  for (int t = 0; t < rows; ++t)
    for (int j = 0; j < d; ++j) out[static_cast<long long>(t) * d + j] += b[j];
  if (detail::trace({&x, &b})) {
    out.set_requires_grad(true);
    auto xn = x.node(), bn = b.node(), on = out.node();
    Tape::active()->record(
        [xn, bn, on, rows, d] {
          const double* G = on->grad.data();
          if (xn->requires_grad)
            for (long long i = 0; i < static_cast<long long>(rows) * d; ++i) xn->grad[i] += G[i];
          if (bn->requires_grad)
            for (int t = 0; t < rows; ++t)
              for (int j = 0; j < d; ++j) bn->grad[j] += G[static_cast<long long>(t) * d + j];
        },
        {x, b, out});
  }
  return out;
}

inline Tensor relu(const Tensor& x) {
  Tensor out = x.clone();
  for (long long i = 0; i < out.numel(); ++i)
    if (out[i] < 0.0) out[i] = 0.0;
  if (detail::trace({&x})) {
    out.set_requires_grad(true);
    auto xn = x.node(), on = out.node();
    Tape::active()->record(
        [xn, on] {
          for (std::size_t i = 0; i < on->grad.size(); ++i)
            if (xn->value[i] > 0.0) xn->grad[i] += on->grad[i];
        },
        {x, out});
  }
  return out;
}

inline Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel())
    throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  Tensor out = Tensor::from_data(std::move(shape), x.values());
  if (detail::trace({&x})) {
    out.set_requires_grad(true);
    auto xn = x.node(), on = out.node();
    Tape::active()->record(
        [xn, on] {
          for (std::size_t i = 0; i < on->grad.size(); ++i) xn->grad[i] += on->grad[i];
        },
        {x, out});
  }
  return out;
}

inline Tensor transpose(const Tensor& x) {
  if (x.ndim() != 2) throw ShapeError("transpose: expects rank-2 tensor, got " + shape_str(x.shape()));
  const int m = x.dim(0), n = x.dim(1);
  Tensor out = Tensor::zeros({n, m});
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) out[static_cast<long long>(j) * m + i] = x[static_cast<long long>(i) * n + j];
  if (detail::trace({&x})) {
    out.set_requires_grad(true);
    auto xn = x.node(), on = out.node();
    Tape::active()->record(
        [xn, on, m, n] {
          for (int i = 0; i < m; ++i)
            for (int j = 0; j < n; ++j)
              xn->grad[static_cast<std::size_t>(i) * n + j] += on->grad[static_cast<std::size_t>(j) * m + i];
        },
        {x, out});
  }
  return out;
}

inline Tensor sum_all(const Tensor& x) {
  double s = 0.0;
  for (long long i = 0; i < x.numel(); ++i) s += x[i];
  Tensor out = Tensor::scalar(s);
  if (detail::trace({&x})) {
    out.set_requires_grad(true);
    auto xn = x.node(), on = out.node();
    Tape::active()->record(
        [xn, on] {
          const double g = on->grad[0];
          for (double& d : xn->grad) d += g;
        },
        {x, out});
  }
  return out;
}

inline Tensor mean_all(const Tensor& x) {
  const double inv = 1.0 / static_cast<double>(x.numel());
  double s = 0.0;
  for (long long i = 0; i < x.numel(); ++i) s += x[i];
  Tensor out = Tensor::scalar(s * inv);
  if (detail::trace({&x})) {
    out.set_requires_grad(true);
    auto xn = x.node(), on = out.node();
    Tape::active()->record(
        [xn, on, inv] {
          const double g = on->grad[0] * inv;
          for (double& d : xn->grad) d += g;
        },
        {x, out});
  }
  return out;
}

// ---------------------------------------------------------------------------
// softmax

// Softmax along `axis` with max-subtraction. -inf inputs are legal (masked
// attention scores) and produce exact zeros; NaN input is rejected.
inline Tensor softmax(const Tensor& x, int axis) {
  if (axis < 0) axis += x.ndim();
  if (axis < 0 || axis >= x.ndim())
    throw ShapeError("softmax: axis out of range for shape " + shape_str(x.shape()));
  // -inf is a legal masked score; NaN and +inf are not
  for (long long i = 0; i < x.numel(); ++i)
    if (std::isnan(x[i]) || x[i] == std::numeric_limits<double>::infinity())
      throw NumericError("softmax: non-finite input");

  const int n = x.dim(axis);
  long long outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= x.dim(i);
  for (int i = axis + 1; i < x.ndim(); ++i) inner *= x.dim(i);

  Tensor out = Tensor::zeros(x.shape());
  const double* X = x.data();
  double* O = out.data();
  for (long long o = 0; o < outer; ++o)
    for (long long in = 0; in < inner; ++in) {
      const long long base = o * n * inner + in;
      double mx = -std::numeric_limits<double>::infinity();
      for (int i = 0; i < n; ++i) mx = std::max(mx, X[base + i * inner]);
      if (!std::isfinite(mx))
        throw NumericError("softmax: a full slice is -inf");
      double sum = 0.0;
      for (int i = 0; i < n; ++i) {
        const double e = std::exp(X[base + i * inner] - mx);
        O[base + i * inner] = e;
        sum += e;
      }
      for (int i = 0; i < n; ++i) O[base + i * inner] /= sum;
    }

  if (detail::trace({&x})) {
    out.set_requires_grad(true);
    auto xn = x.node(), on = out.node();
    Tape::active()->record(
        [xn, on, n, outer, inner] {
          const double* P = on->value.data();
          const double* G = on->grad.data();
          for (long long o = 0; o < outer; ++o)
            for (long long in = 0; in < inner; ++in) {
              const long long base = o * n * inner + in;
              double dot = 0.0;
              for (int i = 0; i < n; ++i) dot += P[base + i * inner] * G[base + i * inner];
              for (int i = 0; i < n; ++i)
                xn->grad[base + i * inner] += P[base + i * inner] * (G[base + i * inner] - dot);
            }
        },
        {x, out});
  }
  return out;
}

// ---------------------------------------------------------------------------
// feature-injected layer normalization
//
// For each sequence position t: s = x_t + residual_t + injected. The mean and
// variance are taken over the features of s (the injected vector enters both
// the sum and the statistics), then gamma/beta apply the affine map.
inline Tensor layer_norm_injected(const Tensor& x, const Tensor& residual, const Tensor& injected,
                                  const Tensor& gamma, const Tensor& beta, double eps) {
  if (x.ndim() != 2) throw ShapeError("layer_norm_injected: x must be rank 2, got " + shape_str(x.shape()));
  const int T = x.dim(0), d = x.dim(1);
  auto check_d = [d](const Tensor& t, const char* name) {
    const bool ok = (t.ndim() == 1 && t.dim(0) == d);
    if (!ok)
      throw ShapeError(std::string("layer_norm_injected: ") + name + " must have feature width " + std::to_string(d) +
                       ", got " + shape_str(t.shape()));
  };
  detail::check_same_shape(x, residual, "layer_norm_injected");
  check_d(injected, "injected");
  check_d(gamma, "gamma");
  check_d(beta, "beta");
  if (!(eps > 0.0)) throw NumericError("layer_norm_injected: eps must be positive");

  Tensor out = Tensor::zeros({T, d});
  std::vector<double> norm(static_cast<std::size_t>(T) * d);  // (s - mu) * inv_std
  std::vector<double> inv_std(static_cast<std::size_t>(T));
  for (int t = 0; t < T; ++t) {
    double mu = 0.0;
    std::vector<double> s(static_cast<std::size_t>(d));
    for (int j = 0; j < d; ++j) {
      s[j] = x.at2(t, j) + residual.at2(t, j) + injected[j];
      mu += s[j];
    }
    mu /= d;
    double var = 0.0;
    for (int j = 0; j < d; ++j) {
      const double c = s[j] - mu;
      var += c * c;
    }
    var /= d;
    const double inv = 1.0 / std::sqrt(var + eps);
    inv_std[static_cast<std::size_t>(t)] = inv;
    for (int j = 0; j < d; ++j) {
      const double y = (s[j] - mu) * inv;
      norm[static_cast<std::size_t>(t) * d + j] = y;
      out.at2(t, j) = gamma[j] * y + beta[j];
    }
  }

  if (detail::trace({&x, &residual, &injected, &gamma, &beta})) {
    out.set_requires_grad(true);
    auto xn = x.node(), rn = residual.node(), in_ = injected.node();
    auto gn = gamma.node(), bn = beta.node(), on = out.node();
    Tape::active()->record(
        [xn, rn, in_, gn, bn, on, T, d, norm = std::move(norm), inv_std = std::move(inv_std)] {
          const double* G = on->grad.data();
          for (int t = 0; t < T; ++t) {
            const double* y = norm.data() + static_cast<std::size_t>(t) * d;
            const double* g = G + static_cast<std::size_t>(t) * d;
            const double inv = inv_std[static_cast<std::size_t>(t)];
            double mean_a = 0.0, mean_ay = 0.0;
            for (int j = 0; j < d; ++j) {
              const double a = g[j] * gn->value[static_cast<std::size_t>(j)];
              mean_a += a;
              mean_ay += a * y[j];
            }
            mean_a /= d;
            mean_ay /= d;
            for (int j = 0; j < d; ++j) {
              const double a = g[j] * gn->value[static_cast<std::size_t>(j)];
              const double ds = inv * (a - mean_a - y[j] * mean_ay);
              const std::size_t idx = static_cast<std::size_t>(t) * d + j;
              if (xn->requires_grad) xn->grad[idx] += ds;
              if (rn->requires_grad) rn->grad[idx] += ds;
              if (in_->requires_grad) in_->grad[static_cast<std::size_t>(j)] += ds;
              if (gn->requires_grad) gn->grad[static_cast<std::size_t>(j)] += g[j] * y[j];
              if (bn->requires_grad) bn->grad[static_cast<std::size_t>(j)] += g[j];
            }
          }
        },
        {x, residual, injected, gamma, beta, out});
  }
  return out;
}

// ---------------------------------------------------------------------------
// losses

// Mean negative log-likelihood over non-ignored rows, computed from logits
// with a stable log-sum-exp.
inline Tensor cross_entropy(const Tensor& logits, const std::vector<int>& targets, int ignore_index) {
  if (logits.ndim() != 2) throw ShapeError("cross_entropy: logits must be rank 2, got " + shape_str(logits.shape()));
  const int B = logits.dim(0), V = logits.dim(1);
  if (static_cast<int>(targets.size()) != B)
    throw ShapeError("cross_entropy: " + std::to_string(targets.size()) + " targets for " + std::to_string(B) + " rows");

  int count = 0;
  double total = 0.0;
  std::vector<double> probs(static_cast<std::size_t>(B) * V, 0.0);
  for (int i = 0; i < B; ++i) {
    const int y = targets[static_cast<std::size_t>(i)];
    if (y == ignore_index) continue;
    if (y < 0 || y >= V)
      throw DataError("cross_entropy: target " + std::to_string(y) + " outside vocabulary of size " + std::to_string(V));
    const double* row = logits.data() + static_cast<std::size_t>(i) * V;
    double mx = row[0];
    for (int j = 1; j < V; ++j) mx = std::max(mx, row[j]);
    double sum = 0.0;
    for (int j = 0; j < V; ++j) sum += std::exp(row[j] - mx);
    const double lse = mx + std::log(sum);
    total += lse - row[y];
    for (int j = 0; j < V; ++j) probs[static_cast<std::size_t>(i) * V + j] = std::exp(row[j] - lse);
    ++count;
  }
  if (count == 0) throw EmptyBatchError("cross_entropy: every position carries the ignore index");

  Tensor out = Tensor::scalar(total / count);
  if (detail::trace({&logits})) {
    out.set_requires_grad(true);
    auto ln = logits.node(), on = out.node();
    Tape::active()->record(
        [ln, on, targets, ignore_index, B, V, count, probs = std::move(probs)] {
          const double g = on->grad[0] / count;
          for (int i = 0; i < B; ++i) {
            const int y = targets[static_cast<std::size_t>(i)];
            if (y == ignore_index) continue;
            for (int j = 0; j < V; ++j)
              ln->grad[static_cast<std::size_t>(i) * V + j] += g * probs[static_cast<std::size_t>(i) * V + j];
            ln->grad[static_cast<std::size_t>(i) * V + y] -= g;
          }
        },
        {logits, out});
  }
  return out;
}

// Mean negative log-likelihood straight from a probability matrix.
inline Tensor nll_from_probs(const Tensor& probs, const std::vector<int>& targets) {
  if (probs.ndim() != 2) throw ShapeError("nll_from_probs: probs must be rank 2, got " + shape_str(probs.shape()));
  const int B = probs.dim(0), n = probs.dim(1);
  if (static_cast<int>(targets.size()) != B)
    throw ShapeError("nll_from_probs: " + std::to_string(targets.size()) + " targets for " + std::to_string(B) + " rows");
  if (B == 0) throw EmptyBatchError("nll_from_probs: empty batch");
  double total = 0.0;
  for (int i = 0; i < B; ++i) {
    const int y = targets[static_cast<std::size_t>(i)];
    if (y < 0 || y >= n)
      throw DataError("nll_from_probs: label " + std::to_string(y) + " outside catalog of size " + std::to_string(n));
    total -= std::log(probs.at2(i, y));
  }
  Tensor out = Tensor::scalar(total / B);
  if (detail::trace({&probs})) {
    out.set_requires_grad(true);
    auto pn = probs.node(), on = out.node();
    Tape::active()->record(
        [pn, on, targets, B, n] {
          const double g = on->grad[0] / B;
          for (int i = 0; i < B; ++i) {
            const int y = targets[static_cast<std::size_t>(i)];
            pn->grad[static_cast<std::size_t>(i) * n + y] -= g / pn->value[static_cast<std::size_t>(i) * n + y];
          }
        },
        {probs, out});
  }
  return out;
}

// ---------------------------------------------------------------------------
// convolutions (feature maps are [C x H x W])

namespace detail {
struct ConvGeom {
  int out_h = 0, out_w = 0;
  int pad_top = 0, pad_left = 0;
};

inline ConvGeom conv_geometry(int H, int W, int kh, int kw, int stride, Padding pad) {
  if (stride < 1) throw ShapeError("conv: stride must be >= 1, got " + std::to_string(stride));
  ConvGeom g;
  if (pad == Padding::Same) {
    g.out_h = (H + stride - 1) / stride;
    g.out_w = (W + stride - 1) / stride;
    const int ph = std::max((g.out_h - 1) * stride + kh - H, 0);
    const int pw = std::max((g.out_w - 1) * stride + kw - W, 0);
    g.pad_top = ph / 2;
    g.pad_left = pw / 2;
  } else {
    if (H < kh || W < kw)
      throw ShapeError("conv: kernel " + std::to_string(kh) + "x" + std::to_string(kw) + " larger than input " +
                       std::to_string(H) + "x" + std::to_string(W));
    g.out_h = (H - kh) / stride + 1;
    g.out_w = (W - kw) / stride + 1;
  }
  return g;
}
}  // namespace detail

inline Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, int stride, Padding pad) {
  if (x.ndim() != 3 || w.ndim() != 4)
    throw ShapeError("conv2d: expects x [C,H,W] and w [OC,C,kh,kw], got " + shape_str(x.shape()) + " and " +
                     shape_str(w.shape()));
  const int C = x.dim(0), H = x.dim(1), W = x.dim(2);
  const int OC = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  if (w.dim(1) != C)
    throw ShapeError("conv2d: weight expects " + std::to_string(w.dim(1)) + " input channels, image has " +
                     std::to_string(C));
  if (bias.defined() && (bias.ndim() != 1 || bias.dim(0) != OC))
    throw ShapeError("conv2d: bias shape " + shape_str(bias.shape()) + " does not match " + std::to_string(OC) +
                     " output channels");
  const auto g = detail::conv_geometry(H, W, kh, kw, stride, pad);

  Tensor out = Tensor::zeros({OC, g.out_h, g.out_w});
  for (int oc = 0; oc < OC; ++oc)
    for (int oy = 0; oy < g.out_h; ++oy)
      for (int ox = 0; ox < g.out_w; ++ox) {
        double acc = bias.defined() ? bias[oc] : 0.0;
        for (int c = 0; c < C; ++c)
          for (int ky = 0; ky < kh; ++ky) {
            const int iy = oy * stride - g.pad_top + ky;
            if (iy < 0 || iy >= H) continue;
            for (int kx = 0; kx < kw; ++kx) {
              const int ix = ox * stride - g.pad_left + kx;
              if (ix < 0 || ix >= W) continue;
              acc += x[(static_cast<long long>(c) * H + iy) * W + ix] *
                     w[((static_cast<long long>(oc) * C + c) * kh + ky) * kw + kx];
            }
          }
        out[(static_cast<long long>(oc) * g.out_h + oy) * g.out_w + ox] = acc;
      }

  if (detail::trace({&x, &w, &bias})) {
    out.set_requires_grad(true);
    auto xn = x.node(), wn = w.node(), on = out.node();
    auto bn = bias.defined() ? bias.node() : nullptr;
    Tape::active()->record(
        [xn, wn, bn, on, C, H, W, OC, kh, kw, stride, g] {
          for (int oc = 0; oc < OC; ++oc)
            for (int oy = 0; oy < g.out_h; ++oy)
              for (int ox = 0; ox < g.out_w; ++ox) {
                const double go = on->grad[(static_cast<std::size_t>(oc) * g.out_h + oy) * g.out_w + ox];
                if (go == 0.0) continue;
                if (bn && bn->requires_grad) bn->grad[static_cast<std::size_t>(oc)] += go;
                for (int c = 0; c < C; ++c)
                  for (int ky = 0; ky < kh; ++ky) {
                    const int iy = oy * stride - g.pad_top + ky;
                    if (iy < 0 || iy >= H) continue;
                    for (int kx = 0; kx < kw; ++kx) {
                      const int ix = ox * stride - g.pad_left + kx;
                      if (ix < 0 || ix >= W) continue;
                      const std::size_t xi = (static_cast<std::size_t>(c) * H + iy) * W + ix;
                      const std::size_t wi = ((static_cast<std::size_t>(oc) * C + c) * kh + ky) * kw + kx;
                      if (xn->requires_grad) xn->grad[xi] += go * wn->value[wi];
                      if (wn->requires_grad) wn->grad[wi] += go * xn->value[xi];
                    }
                  }
              }
        },
        {x, w, bias, out});
  }
  return out;
}

inline Tensor depthwise_conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, int stride, Padding pad) {
  if (x.ndim() != 3 || w.ndim() != 3)
    throw ShapeError("depthwise_conv2d: expects x [C,H,W] and w [C,kh,kw], got " + shape_str(x.shape()) + " and " +
                     shape_str(w.shape()));
  const int C = x.dim(0), H = x.dim(1), W = x.dim(2);
  const int kh = w.dim(1), kw = w.dim(2);
  if (w.dim(0) != C)
    throw ShapeError("depthwise_conv2d: weight has " + std::to_string(w.dim(0)) + " filters for " + std::to_string(C) +
                     " channels");
  if (bias.defined() && (bias.ndim() != 1 || bias.dim(0) != C))
    throw ShapeError("depthwise_conv2d: bias shape " + shape_str(bias.shape()) + " does not match channels");
  const auto g = detail::conv_geometry(H, W, kh, kw, stride, pad);

  Tensor out = Tensor::zeros({C, g.out_h, g.out_w});
  for (int c = 0; c < C; ++c)
    for (int oy = 0; oy < g.out_h; ++oy)
      for (int ox = 0; ox < g.out_w; ++ox) {
        double acc = bias.defined() ? bias[c] : 0.0;
        for (int ky = 0; ky < kh; ++ky) {
          const int iy = oy * stride - g.pad_top + ky;
          if (iy < 0 || iy >= H) continue;
          for (int kx = 0; kx < kw; ++kx) {
            const int ix = ox * stride - g.pad_left + kx;
            if (ix < 0 || ix >= W) continue;
            acc += x[(static_cast<long long>(c) * H + iy) * W + ix] *
                   w[(static_cast<long long>(c) * kh + ky) * kw + kx];
          }
        }
        out[(static_cast<long long>(c) * g.out_h + oy) * g.out_w + ox] = acc;
      }

  if (detail::trace({&x, &w, &bias})) {
    out.set_requires_grad(true);
    auto xn = x.node(), wn = w.node(), on = out.node();
    auto bn = bias.defined() ? bias.node() : nullptr;
    Tape::active()->record(
        [xn, wn, bn, on, C, H, W, kh, kw, stride, g] {
          for (int c = 0; c < C; ++c)
            for (int oy = 0; oy < g.out_h; ++oy)
              for (int ox = 0; ox < g.out_w; ++ox) {
                const double go = on->grad[(static_cast<std::size_t>(c) * g.out_h + oy) * g.out_w + ox];
                if (go == 0.0) continue;
                if (bn && bn->requires_grad) bn->grad[static_cast<std::size_t>(c)] += go;
                for (int ky = 0; ky < kh; ++ky) {
                  const int iy = oy * stride - g.pad_top + ky;
                  if (iy < 0 || iy >= H) continue;
                  for (int kx = 0; kx < kw; ++kx) {
                    const int ix = ox * stride - g.pad_left + kx;
                    if (ix < 0 || ix >= W) continue;
                    const std::size_t xi = (static_cast<std::size_t>(c) * H + iy) * W + ix;
                    const std::size_t wi = (static_cast<std::size_t>(c) * kh + ky) * kw + kx;
                    if (xn->requires_grad) xn->grad[xi] += go * wn->value[wi];
                    if (wn->requires_grad) wn->grad[wi] += go * xn->value[xi];
                  }
                }
              }
        },
        {x, w, bias, out});
  }
  return out;
}

inline Tensor global_avg_pool(const Tensor& x) {
  if (x.ndim() != 3) throw ShapeError("global_avg_pool: expects [C,H,W], got " + shape_str(x.shape()));
  const int C = x.dim(0), H = x.dim(1), W = x.dim(2);
  const double inv = 1.0 / (static_cast<double>(H) * W);
  Tensor out = Tensor::zeros({C});
  for (int c = 0; c < C; ++c) {
    double s = 0.0;
    for (int i = 0; i < H * W; ++i) s += x[static_cast<long long>(c) * H * W + i];
    out[c] = s * inv;
  }
  if (detail::trace({&x})) {
    out.set_requires_grad(true);
    auto xn = x.node(), on = out.node();
    Tape::active()->record(
        [xn, on, C, H, W, inv] {
          for (int c = 0; c < C; ++c) {
            const double g = on->grad[static_cast<std::size_t>(c)] * inv;
            for (int i = 0; i < H * W; ++i) xn->grad[static_cast<std::size_t>(c) * H * W + i] += g;
          }
        },
        {x, out});
  }
  return out;
}

// ---------------------------------------------------------------------------
// embeddings / sequence assembly

inline Tensor embedding_lookup(const Tensor& table, const std::vector<int>& ids) {
  if (table.ndim() != 2) throw ShapeError("embedding_lookup: table must be rank 2, got " + shape_str(table.shape()));
  const int V = table.dim(0), d = table.dim(1);
  const int T = static_cast<int>(ids.size());
  if (T == 0) throw ShapeError("embedding_lookup: empty id list");
  for (int id : ids)
    if (id < 0 || id >= V)
      throw DataError("embedding_lookup: id " + std::to_string(id) + " outside table of size " + std::to_string(V));
  Tensor out = Tensor::zeros({T, d});
  for (int t = 0; t < T; ++t)
    for (int j = 0; j < d; ++j) out.at2(t, j) = table.at2(ids[static_cast<std::size_t>(t)], j);
  if (detail::trace({&table})) {
    out.set_requires_grad(true);
    auto tn = table.node(), on = out.node();
    Tape::active()->record(
        [tn, on, ids, d] {
          for (std::size_t t = 0; t < ids.size(); ++t)
            for (int j = 0; j < d; ++j)
              tn->grad[static_cast<std::size_t>(ids[t]) * d + j] += on->grad[t * d + j];
        },
        {table, out});
  }
  return out;
}

namespace detail {
inline int rows_of(const Tensor& t) { return t.ndim() == 1 ? 1 : t.dim(0); }
inline int cols_of(const Tensor& t) { return t.ndim() == 1 ? t.dim(0) : t.dim(1); }
}  // namespace detail

// Stacks rank-1 or rank-2 pieces along the row axis; rank-1 inputs count as
// single rows. All pieces must share the column width.
inline Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  const int d = detail::cols_of(parts[0]);
  int total = 0;
  for (const Tensor& p : parts) {
    if (p.ndim() > 2 || detail::cols_of(p) != d)
      throw ShapeError("concat_rows: piece shape " + shape_str(p.shape()) + " does not fit width " + std::to_string(d));
    total += detail::rows_of(p);
  }
  Tensor out = Tensor::zeros({total, d});
  int r = 0;
  for (const Tensor& p : parts) {
    const int pr = detail::rows_of(p);
    for (int i = 0; i < pr * d; ++i) out[static_cast<long long>(r) * d + i] = p[i];
    r += pr;
  }
  bool any = false;
  for (const Tensor& p : parts)
    if (p.requires_grad()) any = true;
  if (any && Tape::active()) {
    out.set_requires_grad(true);
    std::vector<std::shared_ptr<detail::TensorNode>> nodes;
    std::vector<int> rows;
    for (const Tensor& p : parts) {
      nodes.push_back(p.node());
      rows.push_back(detail::rows_of(p));
    }
    auto on = out.node();
    std::vector<Tensor> participants = parts;
    participants.push_back(out);
    Tape::active()->record(
        [nodes = std::move(nodes), rows = std::move(rows), on, d] {
          int r = 0;
          for (std::size_t k = 0; k < nodes.size(); ++k) {
            if (nodes[k]->requires_grad)
              for (int i = 0; i < rows[k] * d; ++i)
                nodes[k]->grad[static_cast<std::size_t>(i)] += on->grad[static_cast<std::size_t>(r) * d + i];
            r += rows[k];
          }
        },
        participants);
  }
  return out;
}

inline Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  const int T = parts[0].ndim() == 2 ? parts[0].dim(0) : 1;
  int total = 0;
  for (const Tensor& p : parts) {
    if (p.ndim() != 2 || p.dim(0) != T)
      throw ShapeError("concat_cols: piece shape " + shape_str(p.shape()) + " does not fit " + std::to_string(T) + " rows");
    total += p.dim(1);
  }
  Tensor out = Tensor::zeros({T, total});
  int c0 = 0;
  for (const Tensor& p : parts) {
    const int pc = p.dim(1);
    for (int t = 0; t < T; ++t)
      for (int j = 0; j < pc; ++j) out.at2(t, c0 + j) = p.at2(t, j);
    c0 += pc;
  }
  bool any = false;
  for (const Tensor& p : parts)
    if (p.requires_grad()) any = true;
  if (any && Tape::active()) {
    out.set_requires_grad(true);
    std::vector<std::shared_ptr<detail::TensorNode>> nodes;
    std::vector<int> widths;
    for (const Tensor& p : parts) {
      nodes.push_back(p.node());
      widths.push_back(p.dim(1));
    }
    auto on = out.node();
    std::vector<Tensor> participants = parts;
    participants.push_back(out);
    Tape::active()->record(
        [nodes = std::move(nodes), widths = std::move(widths), on, T, total] {
          int c0 = 0;
          for (std::size_t k = 0; k < nodes.size(); ++k) {
            if (nodes[k]->requires_grad)
              for (int t = 0; t < T; ++t)
                for (int j = 0; j < widths[k]; ++j)
                  nodes[k]->grad[static_cast<std::size_t>(t) * widths[k] + j] +=
                      on->grad[static_cast<std::size_t>(t) * total + c0 + j];
            c0 += widths[k];
          }
        },
        participants);
  }
  return out;
}

inline Tensor slice_rows(const Tensor& x, int r0, int r1) {
  if (x.ndim() != 2 || r0 < 0 || r1 > x.dim(0) || r0 >= r1)
    throw ShapeError("slice_rows: bad range [" + std::to_string(r0) + "," + std::to_string(r1) + ") for " +
                     shape_str(x.shape()));
  const int d = x.dim(1);
  Tensor out = Tensor::zeros({r1 - r0, d});
  for (int t = r0; t < r1; ++t)
    for (int j = 0; j < d; ++j) out.at2(t - r0, j) = x.at2(t, j);
  if (detail::trace({&x})) {
    out.set_requires_grad(true);
    auto xn = x.node(), on = out.node();
    Tape::active()->record(
        [xn, on, r0, r1, d] {
          for (int t = r0; t < r1; ++t)
            for (int j = 0; j < d; ++j)
              xn->grad[static_cast<std::size_t>(t) * d + j] += on->grad[static_cast<std::size_t>(t - r0) * d + j];
        },
        {x, out});
  }
  return out;
}

inline Tensor slice_cols(const Tensor& x, int c0, int c1) {
  if (x.ndim() != 2 || c0 < 0 || c1 > x.dim(1) || c0 >= c1)
    throw ShapeError("slice_cols: bad range [" + std::to_string(c0) + "," + std::to_string(c1) + ") for " +
                     shape_str(x.shape()));
  const int T = x.dim(0), d = x.dim(1), w = c1 - c0;
  Tensor out = Tensor::zeros({T, w});
  for (int t = 0; t < T; ++t)
    for (int j = 0; j < w; ++j) out.at2(t, j) = x.at2(t, c0 + j);
  if (detail::trace({&x})) {
    out.set_requires_grad(true);
    auto xn = x.node(), on = out.node();
    Tape::active()->record(
        [xn, on, T, d, c0, w] {
          for (int t = 0; t < T; ++t)
            for (int j = 0; j < w; ++j)
              xn->grad[static_cast<std::size_t>(t) * d + c0 + j] += on->grad[static_cast<std::size_t>(t) * w + j];
        },
        {x, out});
  }
  return out;
}

// Argmax over a contiguous range of values; ties resolve to the lowest index.
inline int argmax_lowest(const double* v, int n) {
  int best = 0;
  for (int i = 1; i < n; ++i)
    if (v[i] > v[best]) best = i;
  return best;
}

}  // namespace pvgf
