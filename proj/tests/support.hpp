#pragma once

// Random fixtures and naive reference implementations for the test suites.
// The oracles are written from the definitions with plain loops and share
// no code with the library kernels.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "eifnet/autodiff.hpp"
#include "eifnet/events.hpp"
#include "eifnet/rng.hpp"
#include "eifnet/tensor.hpp"

namespace testing {

using eifnet::Shape;
using eifnet::Tensor;

template <typename T = double>
Tensor<T> random_tensor(const Shape& shape, eifnet::Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor<T> t(shape);
  for (auto& v : t.data()) v = static_cast<T>(rng.uniform(lo, hi));
  return t;
}

template <typename T>
double max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) return INFINITY;
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(double(a[i]) - double(b[i])));
  return m;
}

inline std::size_t idx4(const Shape& s, std::size_t a, std::size_t b, std::size_t c, std::size_t d) {
  return ((a * s[1] + b) * s[2] + c) * s[3] + d;
}

inline Tensor<double> naive_conv2d(const Tensor<double>& x, const Tensor<double>& w, const Tensor<double>& bias,
                                   std::size_t stride, std::size_t pad) {
  const Shape& xs = x.shape();
  const Shape& ws = w.shape();
  const long H = long(xs[2]), W = long(xs[3]), kh = long(ws[2]), kw = long(ws[3]);
  const std::size_t Ho = (H + 2 * pad - kh) / stride + 1, Wo = (W + 2 * pad - kw) / stride + 1;
  Tensor<double> out({xs[0], ws[0], Ho, Wo});
  for (std::size_t b = 0; b < xs[0]; ++b)
    for (std::size_t o = 0; o < ws[0]; ++o)
      for (std::size_t i = 0; i < Ho; ++i)
        for (std::size_t j = 0; j < Wo; ++j) {
          double acc = bias[o];
          for (std::size_t c = 0; c < xs[1]; ++c)
            for (long u = 0; u < kh; ++u)
              for (long v = 0; v < kw; ++v) {
                const long y = long(i * stride) + u - long(pad);
                const long xx = long(j * stride) + v - long(pad);
                if (y < 0 || y >= H || xx < 0 || xx >= W) continue;
                acc += x[idx4(xs, b, c, y, xx)] * w[idx4(ws, o, c, u, v)];
              }
          out[idx4(out.shape(), b, o, i, j)] = acc;
        }
  return out;
}

inline Tensor<double> naive_pool2d(const Tensor<double>& x, bool max_pool, std::size_t k, std::size_t stride,
                                   std::size_t pad) {
  const Shape& xs = x.shape();
  const long H = long(xs[2]), W = long(xs[3]);
  const std::size_t Ho = (H + 2 * pad - k) / stride + 1, Wo = (W + 2 * pad - k) / stride + 1;
  Tensor<double> out({xs[0], xs[1], Ho, Wo});
  for (std::size_t b = 0; b < xs[0]; ++b)
    for (std::size_t c = 0; c < xs[1]; ++c)
      for (std::size_t i = 0; i < Ho; ++i)
        for (std::size_t j = 0; j < Wo; ++j) {
          double sum = 0, best = -INFINITY;
          for (long u = 0; u < long(k); ++u)
            for (long v = 0; v < long(k); ++v) {
              const long y = long(i * stride) + u - long(pad);
              const long xx = long(j * stride) + v - long(pad);
              const bool inside = y >= 0 && y < H && xx >= 0 && xx < W;
              const double val = inside ? x[idx4(xs, b, c, y, xx)] : 0.0;
              sum += val;
              if (inside) best = std::max(best, val);
            }
          out[idx4(out.shape(), b, c, i, j)] = max_pool ? best : sum / double(k * k);
        }
  return out;
}

/// softmax(Q K^T / sqrt(d)) V, one query row at a time.
inline Tensor<double> naive_attention(const Tensor<double>& q, const Tensor<double>& k, const Tensor<double>& v) {
  const Shape& qs = q.shape();
  const std::size_t B = qs[0], h = qs[1], N = qs[2], d = qs[3], Nk = k.dim(2);
  Tensor<double> out(qs);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t g = 0; g < h; ++g)
      for (std::size_t n = 0; n < N; ++n) {
        std::vector<double> s(Nk);
        for (std::size_t m = 0; m < Nk; ++m) {
          double dot = 0;
          for (std::size_t e = 0; e < d; ++e) dot += q[idx4(qs, b, g, n, e)] * k[idx4(k.shape(), b, g, m, e)];
          s[m] = dot / std::sqrt(double(d));
        }
        const double mx = *std::max_element(s.begin(), s.end());
        double z = 0;
        for (auto& val : s) z += (val = std::exp(val - mx));
        for (std::size_t e = 0; e < d; ++e) {
          double acc = 0;
          for (std::size_t m = 0; m < Nk; ++m) acc += s[m] / z * v[idx4(v.shape(), b, g, m, e)];
          out[idx4(qs, b, g, n, e)] = acc;
        }
      }
  return out;
}

/// Half-pixel-centre bilinear sampling with the source coordinate clamped to the grid.
inline Tensor<double> naive_bilinear(const Tensor<double>& x, std::size_t oh, std::size_t ow) {
  const Shape& xs = x.shape();
  const std::size_t H = xs[2], W = xs[3];
  Tensor<double> out({xs[0], xs[1], oh, ow});
  auto sample = [&](std::size_t b, std::size_t c, double sy, double sx) {
    sy = std::clamp(sy, 0.0, double(H - 1));
    sx = std::clamp(sx, 0.0, double(W - 1));
    const std::size_t y0 = std::size_t(std::floor(sy)), x0 = std::size_t(std::floor(sx));
    const std::size_t y1 = std::min(y0 + 1, H - 1), x1 = std::min(x0 + 1, W - 1);
    const double fy = sy - double(y0), fx = sx - double(x0);
    return (1 - fy) * ((1 - fx) * x[idx4(xs, b, c, y0, x0)] + fx * x[idx4(xs, b, c, y0, x1)]) +
           fy * ((1 - fx) * x[idx4(xs, b, c, y1, x0)] + fx * x[idx4(xs, b, c, y1, x1)]);
  };
  for (std::size_t b = 0; b < xs[0]; ++b)
    for (std::size_t c = 0; c < xs[1]; ++c)
      for (std::size_t i = 0; i < oh; ++i)
        for (std::size_t j = 0; j < ow; ++j)
          out[idx4(out.shape(), b, c, i, j)] =
              sample(b, c, (double(i) + 0.5) * double(H) / double(oh) - 0.5,
                     (double(j) + 0.5) * double(W) / double(ow) - 0.5);
  return out;
}

inline Tensor<double> naive_gap(const Tensor<double>& x) {
  const Shape& xs = x.shape();
  Tensor<double> out({xs[0], xs[1], 1, 1});
  for (std::size_t b = 0; b < xs[0]; ++b)
    for (std::size_t c = 0; c < xs[1]; ++c) {
      double s = 0;
      for (std::size_t i = 0; i < xs[2]; ++i)
        for (std::size_t j = 0; j < xs[3]; ++j) s += x[idx4(xs, b, c, i, j)];
      out[b * xs[1] + c] = s / double(xs[2] * xs[3]);
    }
  return out;
}

inline Tensor<double> naive_sigmoid(Tensor<double> x) {
  for (auto& v : x.data()) v = 1.0 / (1.0 + std::exp(-v));
  return x;
}

inline Tensor<double> naive_relu(Tensor<double> x) {
  for (auto& v : x.data()) v = std::max(v, 0.0);
  return x;
}

/// Training-mode batchnorm: biased variance over (B, H, W), eps 1e-5.
inline Tensor<double> naive_batchnorm(const Tensor<double>& x, const Tensor<double>& scale,
                                      const Tensor<double>& shift) {
  const Shape& xs = x.shape();
  Tensor<double> out(xs);
  const double n = double(xs[0] * xs[2] * xs[3]);
  for (std::size_t c = 0; c < xs[1]; ++c) {
    double m = 0, v = 0;
    for (std::size_t b = 0; b < xs[0]; ++b)
      for (std::size_t i = 0; i < xs[2]; ++i)
        for (std::size_t j = 0; j < xs[3]; ++j) m += x[idx4(xs, b, c, i, j)];
    m /= n;
    for (std::size_t b = 0; b < xs[0]; ++b)
      for (std::size_t i = 0; i < xs[2]; ++i)
        for (std::size_t j = 0; j < xs[3]; ++j) v += std::pow(x[idx4(xs, b, c, i, j)] - m, 2);
    v /= n;
    for (std::size_t b = 0; b < xs[0]; ++b)
      for (std::size_t i = 0; i < xs[2]; ++i)
        for (std::size_t j = 0; j < xs[3]; ++j)
          out[idx4(xs, b, c, i, j)] = (x[idx4(xs, b, c, i, j)] - m) / std::sqrt(v + 1e-5) * scale[c] + shift[c];
  }
  return out;
}

/// out[b,c,h,w] = x[b,c,h,w] * w[b, c or 0, h or 0, w or 0] (broadcast of size-1 axes).
inline Tensor<double> naive_broadcast_mul(const Tensor<double>& x, const Tensor<double>& w) {
  const Shape& xs = x.shape();
  const Shape& ws = w.shape();
  Tensor<double> out(xs);
  for (std::size_t b = 0; b < xs[0]; ++b)
    for (std::size_t c = 0; c < xs[1]; ++c)
      for (std::size_t i = 0; i < xs[2]; ++i)
        for (std::size_t j = 0; j < xs[3]; ++j)
          out[idx4(xs, b, c, i, j)] =
              x[idx4(xs, b, c, i, j)] * w[idx4(ws, ws[0] == 1 ? 0 : b, ws[1] == 1 ? 0 : c, ws[2] == 1 ? 0 : i,
                                             ws[3] == 1 ? 0 : j)];
  return out;
}

struct NaiveEncoding {
  std::vector<double> e_vt, a_cm;  // [bins, H, W]
};

/// Per-event, per-bin accumulation straight from the definition.
inline NaiveEncoding naive_encode(const eifnet::EventWindow& w, std::size_t bins) {
  const std::size_t H = w.dims.height, W = w.dims.width;
  NaiveEncoding r{std::vector<double>(bins * H * W, 0.0), std::vector<double>(bins * H * W, 0.0)};
  for (const auto& ev : w.events) {
    const double ts = bins == 1 ? 0.0
                                : double(bins - 1) * double(ev.t_us - w.t_start_us) / double(w.t_end_us - w.t_start_us);
    for (std::size_t c = 0; c < bins; ++c) {
      const double kv = std::max(0.0, 1.0 - std::abs(double(c) - ts));
      const std::size_t at = (c * H + std::size_t(ev.y)) * W + std::size_t(ev.x);
      r.e_vt[at] += ev.p * kv;
      r.a_cm[at] += kv;
    }
  }
  return r;
}

inline std::vector<eifnet::Event> linear_window(const std::vector<eifnet::Event>& events, std::int64_t t_end,
                                                std::int64_t duration) {
  std::vector<eifnet::Event> out;
  for (const auto& e : events)
    if (e.t_us >= t_end - duration && e.t_us < t_end) out.push_back(e);
  return out;
}

inline std::vector<eifnet::Event> random_events(std::size_t n, eifnet::SensorDims dims, std::int64_t t_max,
                                                eifnet::Rng& rng) {
  std::vector<eifnet::Event> ev(n);
  for (auto& e : ev) {
    e.t_us = rng.uniform_int(0, t_max - 1);
    e.x = std::int32_t(rng.uniform_int(0, std::int64_t(dims.width) - 1));
    e.y = std::int32_t(rng.uniform_int(0, std::int64_t(dims.height) - 1));
    e.p = rng.uniform() < 0.5 ? -1 : 1;
  }
  std::stable_sort(ev.begin(), ev.end(), [](const auto& a, const auto& b) { return a.t_us < b.t_us; });
  return ev;
}

/// Scratch directory under the build tree, emptied on creation.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("eifnet_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

/// Double-precision value of f at a point via a fresh no-grad tape.
template <typename F>
double eval_scalar(F&& f, const Tensor<double>& at) {
  eifnet::Tape<double> tape(false);
  return f(tape, tape.leaf(at)).value().item();
}

}  // namespace testing
