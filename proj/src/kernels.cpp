#include "eifnet/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace eifnet::kernels {

namespace {

void require_rank(const Shape& s, std::size_t rank, const char* what) {
  if (s.size() != rank) {
    throw ShapeError(std::string(what) + ": expected rank " + std::to_string(rank) + ", got " +
                     shape_str(s));
  }
}

std::size_t out_extent(std::size_t in, std::size_t kernel, std::size_t stride, std::size_t pad,
                       const char* what) {
  if (stride == 0) throw ShapeError(std::string(what) + ": stride must be positive");
  if (in + 2 * pad < kernel) {
    throw ShapeError(std::string(what) + ": non-positive output extent");
  }
  return (in + 2 * pad - kernel) / stride + 1;
}

// Output indices o in [lo, hi) with 0 <= o*stride + offset < in.
struct Span {
  std::ptrdiff_t lo;
  std::ptrdiff_t hi;
};

Span valid_outputs(std::ptrdiff_t in, std::ptrdiff_t out, std::ptrdiff_t stride,
                   std::ptrdiff_t offset) {
  const std::ptrdiff_t lo = offset >= 0 ? 0 : (-offset + stride - 1) / stride;
  const std::ptrdiff_t last = in - 1 - offset;
  if (last < 0) return {0, 0};
  const std::ptrdiff_t hi = std::min(out, last / stride + 1);
  return {std::min(lo, hi), hi};
}

// Splits a shape around `axis` into (outer, extent, inner) for axis-wise loops.
struct AxisSplit {
  std::size_t outer = 1;
  std::size_t extent = 1;
  std::size_t inner = 1;
};

AxisSplit split_axis(const Shape& s, std::size_t axis) {
  if (axis >= s.size()) throw ShapeError("axis " + std::to_string(axis) + " invalid for " + shape_str(s));
  AxisSplit r;
  for (std::size_t i = 0; i < axis; ++i) r.outer *= s[i];
  r.extent = s[axis];
  for (std::size_t i = axis + 1; i < s.size(); ++i) r.inner *= s[i];
  return r;
}

std::vector<std::size_t> strides_of(const Shape& s) {
  std::vector<std::size_t> st(s.size(), 1);
  for (std::size_t i = s.size(); i-- > 1;) st[i - 1] = st[i] * s[i];
  return st;
}

// Strides of `s` viewed inside broadcast shape `out` (0 on broadcast axes).
std::vector<std::size_t> broadcast_strides(const Shape& s, const Shape& out) {
  auto st = strides_of(s);
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] == 1 && out[i] != 1) st[i] = 0;
  }
  return st;
}

// Advances a multi-index over `shape`, updating two linear offsets.
struct Cursor {
  const Shape& shape;
  std::vector<std::size_t> index;
  Cursor(const Shape& s) : shape(s), index(s.size(), 0) {}

  template <typename F>
  void step(F&& on_axis) {
    for (std::size_t ax = shape.size(); ax-- > 0;) {
      on_axis(ax, +1);
      if (++index[ax] < shape[ax]) return;
      on_axis(ax, -static_cast<std::ptrdiff_t>(shape[ax]));
      index[ax] = 0;
    }
  }
};

struct BilinearTap {
  std::size_t i0;
  std::size_t i1;
  double w1;
};

std::vector<BilinearTap> bilinear_taps(std::size_t in, std::size_t out) {
  std::vector<BilinearTap> taps(out);
  const double scale = static_cast<double>(in) / static_cast<double>(out);
  for (std::size_t o = 0; o < out; ++o) {
    double src = (static_cast<double>(o) + 0.5) * scale - 0.5;
    if (src < 0) src = 0;
    auto i0 = static_cast<std::size_t>(src);
    if (i0 > in - 1) i0 = in - 1;
    const std::size_t i1 = i0 + (i0 < in - 1 ? 1 : 0);
    taps[o] = {i0, i1, src - static_cast<double>(i0)};
  }
  return taps;
}

std::vector<std::size_t> nearest_taps(std::size_t in, std::size_t out) {
  std::vector<std::size_t> taps(out);
  for (std::size_t o = 0; o < out; ++o) taps[o] = std::min(in - 1, (o * in) / out);
  return taps;
}

}  // namespace

// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias,
                 std::size_t stride, std::size_t pad) {
  require_rank(input.shape(), 4, "conv2d input");
  require_rank(weight.shape(), 4, "conv2d weight");
  const std::size_t B = input.dim(0), Ci = input.dim(1), H = input.dim(2), W = input.dim(3);
  const std::size_t Co = weight.dim(0), kh = weight.dim(2), kw = weight.dim(3);
  if (weight.dim(1) != Ci) {
    throw ShapeError("conv2d: input has " + std::to_string(Ci) + " channels, weight expects " +
                     std::to_string(weight.dim(1)));
  }
  if (kh % 2 == 0 || kw % 2 == 0) throw ShapeError("conv2d: kernel extents must be odd");
  if (bias.rank() != 1 || bias.dim(0) != Co) throw ShapeError("conv2d: bias must have shape [Cout]");
  const std::size_t Ho = out_extent(H, kh, stride, pad, "conv2d");
  const std::size_t Wo = out_extent(W, kw, stride, pad, "conv2d");

  Tensor<T> out({B, Co, Ho, Wo});
  const T* in = input.data().data();
  const T* wt = weight.data().data();
  T* o = out.data().data();
  const auto s = static_cast<std::ptrdiff_t>(stride);
  const auto p = static_cast<std::ptrdiff_t>(pad);
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t co = 0; co < Co; ++co) {
      T* oplane = o + (b * Co + co) * Ho * Wo;
      std::fill(oplane, oplane + Ho * Wo, bias[co]);
      for (std::size_t ci = 0; ci < Ci; ++ci) {
        const T* iplane = in + (b * Ci + ci) * H * W;
        const T* wk = wt + (co * Ci + ci) * kh * kw;
        for (std::size_t ky = 0; ky < kh; ++ky) {
          const Span rows = valid_outputs(H, Ho, s, static_cast<std::ptrdiff_t>(ky) - p);
          for (std::size_t kx = 0; kx < kw; ++kx) {
            const T wv = wk[ky * kw + kx];
            const std::ptrdiff_t xoff = static_cast<std::ptrdiff_t>(kx) - p;
            const Span cols = valid_outputs(W, Wo, s, xoff);
            for (std::ptrdiff_t oy = rows.lo; oy < rows.hi; ++oy) {
              const T* irow = iplane + (oy * s + static_cast<std::ptrdiff_t>(ky) - p) * W;
              T* orow = oplane + oy * Wo;
              for (std::ptrdiff_t ox = cols.lo; ox < cols.hi; ++ox) {
                orow[ox] += wv * irow[ox * s + xoff];
              }
            }
          }
        }
      }
    }
  }
  return out;
}

template <typename T>
ConvGrads<T> conv2d_backward(const Tensor<T>& input, const Tensor<T>& weight,
                             const Tensor<T>& grad_out, std::size_t stride, std::size_t pad) {
  const std::size_t B = input.dim(0), Ci = input.dim(1), H = input.dim(2), W = input.dim(3);
  const std::size_t Co = weight.dim(0), kh = weight.dim(2), kw = weight.dim(3);
  const std::size_t Ho = grad_out.dim(2), Wo = grad_out.dim(3);
  ConvGrads<T> g{Tensor<T>(input.shape()), Tensor<T>(weight.shape()), Tensor<T>({Co})};
  const T* in = input.data().data();
  const T* wt = weight.data().data();
  const T* go = grad_out.data().data();
  T* gi = g.input.data().data();
  T* gw = g.weight.data().data();
  const auto s = static_cast<std::ptrdiff_t>(stride);
  const auto p = static_cast<std::ptrdiff_t>(pad);
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t co = 0; co < Co; ++co) {
      const T* gplane = go + (b * Co + co) * Ho * Wo;
      T acc{0};
      for (std::size_t i = 0; i < Ho * Wo; ++i) acc += gplane[i];
      g.bias[co] += acc;
      for (std::size_t ci = 0; ci < Ci; ++ci) {
        const T* iplane = in + (b * Ci + ci) * H * W;
        T* giplane = gi + (b * Ci + ci) * H * W;
        const T* wk = wt + (co * Ci + ci) * kh * kw;
        T* gwk = gw + (co * Ci + ci) * kh * kw;
        for (std::size_t ky = 0; ky < kh; ++ky) {
          const Span rows = valid_outputs(H, Ho, s, static_cast<std::ptrdiff_t>(ky) - p);
          for (std::size_t kx = 0; kx < kw; ++kx) {
            const T wv = wk[ky * kw + kx];
            const std::ptrdiff_t xoff = static_cast<std::ptrdiff_t>(kx) - p;
            const Span cols = valid_outputs(W, Wo, s, xoff);
            T wacc{0};
            for (std::ptrdiff_t oy = rows.lo; oy < rows.hi; ++oy) {
              const std::ptrdiff_t rowoff = (oy * s + static_cast<std::ptrdiff_t>(ky) - p) * W;
              const T* irow = iplane + rowoff;
              T* girow = giplane + rowoff;
              const T* grow = gplane + oy * Wo;
              for (std::ptrdiff_t ox = cols.lo; ox < cols.hi; ++ox) {
                const T gv = grow[ox];
                wacc += gv * irow[ox * s + xoff];
                girow[ox * s + xoff] += wv * gv;
              }
            }
            gwk[ky * kw + kx] += wacc;
          }
        }
      }
    }
  }
  return g;
}

// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> pool2d(const Tensor<T>& input, PoolKind kind, std::size_t kernel, std::size_t stride,
                 std::size_t pad) {
  require_rank(input.shape(), 4, "pool2d input");
  if (kernel == 0) throw ShapeError("pool2d: kernel must be positive");
  if (2 * pad > kernel) throw ShapeError("pool2d: padding exceeds half the kernel");
  const std::size_t B = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
  const std::size_t Ho = out_extent(H, kernel, stride, pad, "pool2d");
  const std::size_t Wo = out_extent(W, kernel, stride, pad, "pool2d");
  Tensor<T> out({B, C, Ho, Wo});
  const T area = static_cast<T>(kernel * kernel);
  const auto p = static_cast<std::ptrdiff_t>(pad);
  for (std::size_t bc = 0; bc < B * C; ++bc) {
    const T* plane = input.data().data() + bc * H * W;
    T* oplane = out.data().data() + bc * Ho * Wo;
    for (std::size_t oy = 0; oy < Ho; ++oy) {
      for (std::size_t ox = 0; ox < Wo; ++ox) {
        T acc = kind == PoolKind::max ? -std::numeric_limits<T>::infinity() : T{0};
        for (std::size_t ky = 0; ky < kernel; ++ky) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ky) - p;
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(H)) continue;
          for (std::size_t kx = 0; kx < kernel; ++kx) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * stride + kx) - p;
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(W)) continue;
            const T v = plane[iy * W + ix];
            if (kind == PoolKind::max) {
              acc = std::max(acc, v);
            } else {
              acc += v;
            }
          }
        }
        oplane[oy * Wo + ox] = kind == PoolKind::max ? acc : acc / area;
      }
    }
  }
  return out;
}

template <typename T>
Tensor<T> pool2d_backward(const Tensor<T>& input, const Tensor<T>& grad_out, PoolKind kind,
                          std::size_t kernel, std::size_t stride, std::size_t pad) {
  const std::size_t B = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
  const std::size_t Ho = grad_out.dim(2), Wo = grad_out.dim(3);
  Tensor<T> gin(input.shape());
  const T area = static_cast<T>(kernel * kernel);
  const auto p = static_cast<std::ptrdiff_t>(pad);
  for (std::size_t bc = 0; bc < B * C; ++bc) {
    const T* plane = input.data().data() + bc * H * W;
    const T* gplane = grad_out.data().data() + bc * Ho * Wo;
    T* giplane = gin.data().data() + bc * H * W;
    for (std::size_t oy = 0; oy < Ho; ++oy) {
      for (std::size_t ox = 0; ox < Wo; ++ox) {
        const T g = gplane[oy * Wo + ox];
        std::ptrdiff_t best = -1;
        T best_v = -std::numeric_limits<T>::infinity();
        for (std::size_t ky = 0; ky < kernel; ++ky) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ky) - p;
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(H)) continue;
          for (std::size_t kx = 0; kx < kernel; ++kx) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * stride + kx) - p;
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(W)) continue;
            const std::ptrdiff_t idx = iy * static_cast<std::ptrdiff_t>(W) + ix;
            if (kind == PoolKind::avg) {
              giplane[idx] += g / area;
            } else if (best < 0 || plane[idx] > best_v) {
              best = idx;
              best_v = plane[idx];
            }
          }
        }
        if (kind == PoolKind::max && best >= 0) giplane[best] += g;
      }
    }
  }
  return gin;
}

template <typename T>
Tensor<T> gap(const Tensor<T>& input) {
  require_rank(input.shape(), 4, "gap input");
  const std::size_t B = input.dim(0), C = input.dim(1), HW = input.dim(2) * input.dim(3);
  Tensor<T> out({B, C, 1, 1});
  for (std::size_t bc = 0; bc < B * C; ++bc) {
    Acc<T> acc = 0;
    const T* plane = input.data().data() + bc * HW;
    for (std::size_t i = 0; i < HW; ++i) acc += plane[i];
    out[bc] = static_cast<T>(acc / static_cast<Acc<T>>(HW));
  }
  return out;
}

template <typename T>
Tensor<T> gap_backward(const Shape& input_shape, const Tensor<T>& grad_out) {
  Tensor<T> gin(input_shape);
  const std::size_t HW = input_shape[2] * input_shape[3];
  const T inv = T{1} / static_cast<T>(HW);
  for (std::size_t bc = 0; bc < input_shape[0] * input_shape[1]; ++bc) {
    const T g = grad_out[bc] * inv;
    T* plane = gin.data().data() + bc * HW;
    for (std::size_t i = 0; i < HW; ++i) plane[i] = g;
  }
  return gin;
}

// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  Tensor<T> y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const T v = x[i];
    if (v >= 0) {
      y[i] = T{1} / (T{1} + std::exp(-v));
    } else {
      const T e = std::exp(v);
      y[i] = e / (T{1} + e);
    }
  }
  return y;
}

template <typename T>
Tensor<T> sigmoid_backward(const Tensor<T>& y, const Tensor<T>& grad_out) {
  Tensor<T> g(y.shape());
  for (std::size_t i = 0; i < y.size(); ++i) g[i] = grad_out[i] * y[i] * (T{1} - y[i]);
  return g;
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  Tensor<T> y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] > 0 ? x[i] : T{0};
  return y;
}

template <typename T>
Tensor<T> relu_backward(const Tensor<T>& x, const Tensor<T>& grad_out) {
  Tensor<T> g(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) g[i] = x[i] > 0 ? grad_out[i] : T{0};
  return g;
}

template <typename T>
Tensor<T> gelu(const Tensor<T>& x) {
  Tensor<T> y(x.shape());
  const T inv_sqrt2 = static_cast<T>(0.70710678118654752440);
  for (std::size_t i = 0; i < x.size(); ++i) {
    y[i] = T{0.5} * x[i] * (T{1} + std::erf(x[i] * inv_sqrt2));
  }
  return y;
}

template <typename T>
Tensor<T> gelu_backward(const Tensor<T>& x, const Tensor<T>& grad_out) {
  Tensor<T> g(x.shape());
  const T inv_sqrt2 = static_cast<T>(0.70710678118654752440);
  const T inv_sqrt2pi = static_cast<T>(0.39894228040143267794);
  for (std::size_t i = 0; i < x.size(); ++i) {
    const T v = x[i];
    const T cdf = T{0.5} * (T{1} + std::erf(v * inv_sqrt2));
    const T pdf = inv_sqrt2pi * std::exp(T{-0.5} * v * v);
    g[i] = grad_out[i] * (cdf + v * pdf);
  }
  return g;
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& x, std::size_t axis) {
  const AxisSplit sp = split_axis(x.shape(), axis);
  Tensor<T> y(x.shape());
  for (std::size_t o = 0; o < sp.outer; ++o) {
    for (std::size_t in = 0; in < sp.inner; ++in) {
      const std::size_t base = o * sp.extent * sp.inner + in;
      T mx = x[base];
      for (std::size_t j = 1; j < sp.extent; ++j) mx = std::max(mx, x[base + j * sp.inner]);
      T denom{0};
      for (std::size_t j = 0; j < sp.extent; ++j) {
        const T e = std::exp(x[base + j * sp.inner] - mx);
        y[base + j * sp.inner] = e;
        denom += e;
      }
      for (std::size_t j = 0; j < sp.extent; ++j) y[base + j * sp.inner] /= denom;
    }
  }
  return y;
}

template <typename T>
Tensor<T> softmax_backward(const Tensor<T>& y, const Tensor<T>& grad_out, std::size_t axis) {
  const AxisSplit sp = split_axis(y.shape(), axis);
  Tensor<T> g(y.shape());
  for (std::size_t o = 0; o < sp.outer; ++o) {
    for (std::size_t in = 0; in < sp.inner; ++in) {
      const std::size_t base = o * sp.extent * sp.inner + in;
      T dot{0};
      for (std::size_t j = 0; j < sp.extent; ++j) {
        dot += y[base + j * sp.inner] * grad_out[base + j * sp.inner];
      }
      for (std::size_t j = 0; j < sp.extent; ++j) {
        const std::size_t idx = base + j * sp.inner;
        g[idx] = y[idx] * (grad_out[idx] - dot);
      }
    }
  }
  return g;
}

// ---------------------------------------------------------------------------

namespace {

// Normalization over groups that share a "channel" index. `layout` walks
// every element of group c; used by both batchnorm and layernorm.
struct NormLayout {
  std::size_t groups;     // number of independent normalization groups
  std::size_t count;      // elements per group
  std::size_t channels;   // affine parameter length
  // element j of group g -> (linear index, affine channel)
  std::size_t (*index)(const Shape&, std::size_t, std::size_t);
  std::size_t (*channel)(const Shape&, std::size_t, std::size_t);
};

// Batchnorm: group = channel c; elements enumerate (b, h, w).
std::size_t bn_index(const Shape& s, std::size_t c, std::size_t j) {
  const std::size_t hw = s[2] * s[3];
  const std::size_t b = j / hw;
  return (b * s[1] + c) * hw + (j % hw);
}
std::size_t bn_channel(const Shape&, std::size_t c, std::size_t) { return c; }

// Layernorm: group = (b, pixel); elements enumerate channels.
std::size_t ln_index(const Shape& s, std::size_t g, std::size_t c) {
  const std::size_t hw = s[2] * s[3];
  const std::size_t b = g / hw;
  return (b * s[1] + c) * hw + (g % hw);
}
std::size_t ln_channel(const Shape&, std::size_t, std::size_t c) { return c; }

template <typename T>
Tensor<T> norm_forward(const Tensor<T>& x, const Tensor<T>& scale, const Tensor<T>& shift,
                       const NormLayout& L) {
  if (scale.size() != L.channels || shift.size() != L.channels) {
    throw ShapeError("normalize: affine parameters must have " + std::to_string(L.channels) +
                     " entries");
  }
  const Shape& s = x.shape();
  Tensor<T> y(s);
  for (std::size_t g = 0; g < L.groups; ++g) {
    Acc<T> mean = 0;
    for (std::size_t j = 0; j < L.count; ++j) mean += x[L.index(s, g, j)];
    mean /= static_cast<Acc<T>>(L.count);
    Acc<T> var = 0;
    for (std::size_t j = 0; j < L.count; ++j) {
      const Acc<T> d = x[L.index(s, g, j)] - mean;
      var += d * d;
    }
    var /= static_cast<Acc<T>>(L.count);
    const Acc<T> inv_std = 1.0 / std::sqrt(var + kNormEpsilon);
    for (std::size_t j = 0; j < L.count; ++j) {
      const std::size_t idx = L.index(s, g, j);
      const std::size_t c = L.channel(s, g, j);
      y[idx] = static_cast<T>(scale[c] * ((x[idx] - mean) * inv_std) + shift[c]);
    }
  }
  return y;
}

template <typename T>
AffineGrads<T> norm_backward(const Tensor<T>& x, const Tensor<T>& scale, const Tensor<T>& grad_out,
                             const NormLayout& L) {
  const Shape& s = x.shape();
  AffineGrads<T> out{Tensor<T>(s), Tensor<T>({L.channels}), Tensor<T>({L.channels})};
  std::vector<Acc<T>> gscale(L.channels, 0.0), gshift(L.channels, 0.0);
  std::vector<Acc<T>> xhat(L.count);
  for (std::size_t g = 0; g < L.groups; ++g) {
    Acc<T> mean = 0;
    for (std::size_t j = 0; j < L.count; ++j) mean += x[L.index(s, g, j)];
    mean /= static_cast<Acc<T>>(L.count);
    Acc<T> var = 0;
    for (std::size_t j = 0; j < L.count; ++j) {
      const Acc<T> d = x[L.index(s, g, j)] - mean;
      var += d * d;
    }
    var /= static_cast<Acc<T>>(L.count);
    const Acc<T> inv_std = 1.0 / std::sqrt(var + kNormEpsilon);
    // dy/dxhat = scale; reduce over the group
    Acc<T> sum_g = 0, sum_gx = 0;
    for (std::size_t j = 0; j < L.count; ++j) {
      const std::size_t idx = L.index(s, g, j);
      const std::size_t c = L.channel(s, g, j);
      xhat[j] = (x[idx] - mean) * inv_std;
      const Acc<T> gy = grad_out[idx];
      gscale[c] += gy * xhat[j];
      gshift[c] += gy;
      const Acc<T> gxh = gy * scale[c];
      sum_g += gxh;
      sum_gx += gxh * xhat[j];
    }
    const Acc<T> n = static_cast<Acc<T>>(L.count);
    for (std::size_t j = 0; j < L.count; ++j) {
      const std::size_t idx = L.index(s, g, j);
      const std::size_t c = L.channel(s, g, j);
      const Acc<T> gxh = grad_out[idx] * scale[c];
      out.input[idx] = static_cast<T>(inv_std / n * (n * gxh - sum_g - xhat[j] * sum_gx));
    }
  }
  for (std::size_t c = 0; c < L.channels; ++c) {
    out.scale[c] = static_cast<T>(gscale[c]);
    out.shift[c] = static_cast<T>(gshift[c]);
  }
  return out;
}

NormLayout bn_layout(const Shape& s) {
  require_rank(s, 4, "batchnorm2d input");
  return {s[1], s[0] * s[2] * s[3], s[1], &bn_index, &bn_channel};
}

NormLayout ln_layout(const Shape& s) {
  require_rank(s, 4, "layernorm input");
  return {s[0] * s[2] * s[3], s[1], s[1], &ln_index, &ln_channel};
}

}  // namespace

template <typename T>
Tensor<T> batchnorm2d(const Tensor<T>& x, const Tensor<T>& scale, const Tensor<T>& shift) {
  return norm_forward(x, scale, shift, bn_layout(x.shape()));
}

template <typename T>
AffineGrads<T> batchnorm2d_backward(const Tensor<T>& x, const Tensor<T>& scale,
                                    const Tensor<T>& grad_out) {
  return norm_backward(x, scale, grad_out, bn_layout(x.shape()));
}

template <typename T>
Tensor<T> layernorm_channels(const Tensor<T>& x, const Tensor<T>& scale, const Tensor<T>& shift) {
  return norm_forward(x, scale, shift, ln_layout(x.shape()));
}

template <typename T>
AffineGrads<T> layernorm_channels_backward(const Tensor<T>& x, const Tensor<T>& scale,
                                           const Tensor<T>& grad_out) {
  return norm_backward(x, scale, grad_out, ln_layout(x.shape()));
}

// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> resample(const Tensor<T>& input, std::size_t out_h, std::size_t out_w,
                   ResampleMode mode) {
  require_rank(input.shape(), 4, "resample input");
  if (out_h == 0 || out_w == 0) throw ShapeError("resample: target extents must be positive");
  const std::size_t B = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
  Tensor<T> out({B, C, out_h, out_w});
  if (mode == ResampleMode::nearest) {
    const auto ty = nearest_taps(H, out_h);
    const auto tx = nearest_taps(W, out_w);
    for (std::size_t bc = 0; bc < B * C; ++bc) {
      const T* plane = input.data().data() + bc * H * W;
      T* oplane = out.data().data() + bc * out_h * out_w;
      for (std::size_t y = 0; y < out_h; ++y) {
        for (std::size_t x = 0; x < out_w; ++x) oplane[y * out_w + x] = plane[ty[y] * W + tx[x]];
      }
    }
    return out;
  }
  const auto ty = bilinear_taps(H, out_h);
  const auto tx = bilinear_taps(W, out_w);
  for (std::size_t bc = 0; bc < B * C; ++bc) {
    const T* plane = input.data().data() + bc * H * W;
    T* oplane = out.data().data() + bc * out_h * out_w;
    for (std::size_t y = 0; y < out_h; ++y) {
      const auto& a = ty[y];
      const T wy1 = static_cast<T>(a.w1), wy0 = T{1} - wy1;
      for (std::size_t x = 0; x < out_w; ++x) {
        const auto& b = tx[x];
        const T wx1 = static_cast<T>(b.w1), wx0 = T{1} - wx1;
        oplane[y * out_w + x] =
            wy0 * (wx0 * plane[a.i0 * W + b.i0] + wx1 * plane[a.i0 * W + b.i1]) +
            wy1 * (wx0 * plane[a.i1 * W + b.i0] + wx1 * plane[a.i1 * W + b.i1]);
      }
    }
  }
  return out;
}

template <typename T>
Tensor<T> resample_backward(const Shape& input_shape, const Tensor<T>& grad_out,
                            ResampleMode mode) {
  const std::size_t B = input_shape[0], C = input_shape[1], H = input_shape[2], W = input_shape[3];
  const std::size_t out_h = grad_out.dim(2), out_w = grad_out.dim(3);
  Tensor<T> gin(input_shape);
  if (mode == ResampleMode::nearest) {
    const auto ty = nearest_taps(H, out_h);
    const auto tx = nearest_taps(W, out_w);
    for (std::size_t bc = 0; bc < B * C; ++bc) {
      T* plane = gin.data().data() + bc * H * W;
      const T* gplane = grad_out.data().data() + bc * out_h * out_w;
      for (std::size_t y = 0; y < out_h; ++y) {
        for (std::size_t x = 0; x < out_w; ++x) plane[ty[y] * W + tx[x]] += gplane[y * out_w + x];
      }
    }
    return gin;
  }
  const auto ty = bilinear_taps(H, out_h);
  const auto tx = bilinear_taps(W, out_w);
  for (std::size_t bc = 0; bc < B * C; ++bc) {
    T* plane = gin.data().data() + bc * H * W;
    const T* gplane = grad_out.data().data() + bc * out_h * out_w;
    for (std::size_t y = 0; y < out_h; ++y) {
      const auto& a = ty[y];
      const T wy1 = static_cast<T>(a.w1), wy0 = T{1} - wy1;
      for (std::size_t x = 0; x < out_w; ++x) {
        const auto& b = tx[x];
        const T wx1 = static_cast<T>(b.w1), wx0 = T{1} - wx1;
        const T g = gplane[y * out_w + x];
        plane[a.i0 * W + b.i0] += g * wy0 * wx0;
        plane[a.i0 * W + b.i1] += g * wy0 * wx1;
        plane[a.i1 * W + b.i0] += g * wy1 * wx0;
        plane[a.i1 * W + b.i1] += g * wy1 * wx1;
      }
    }
  }
  return gin;
}

// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> attention_core(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v) {
  require_rank(q.shape(), 4, "attention Q");
  require_rank(k.shape(), 4, "attention K");
  require_rank(v.shape(), 4, "attention V");
  const std::size_t B = q.dim(0), Hh = q.dim(1), N = q.dim(2), d = q.dim(3);
  const std::size_t Nk = k.dim(2);
  if (k.dim(0) != B || v.dim(0) != B || k.dim(1) != Hh || v.dim(1) != Hh || k.dim(3) != d ||
      v.dim(3) != d || v.dim(2) != Nk) {
    throw ShapeError("attention: incompatible Q " + shape_str(q.shape()) + ", K " +
                     shape_str(k.shape()) + ", V " + shape_str(v.shape()));
  }
  Tensor<T> out(q.shape());
  const T scale = T{1} / std::sqrt(static_cast<T>(d));
  std::vector<T> p(Nk);
  for (std::size_t bh = 0; bh < B * Hh; ++bh) {
    const T* qb = q.data().data() + bh * N * d;
    const T* kb = k.data().data() + bh * Nk * d;
    const T* vb = v.data().data() + bh * Nk * d;
    T* ob = out.data().data() + bh * N * d;
    for (std::size_t i = 0; i < N; ++i) {
      T mx = -std::numeric_limits<T>::infinity();
      for (std::size_t j = 0; j < Nk; ++j) {
        T s{0};
        for (std::size_t c = 0; c < d; ++c) s += qb[i * d + c] * kb[j * d + c];
        p[j] = s * scale;
        mx = std::max(mx, p[j]);
      }
      T denom{0};
      for (std::size_t j = 0; j < Nk; ++j) {
        p[j] = std::exp(p[j] - mx);
        denom += p[j];
      }
      T* orow = ob + i * d;
      for (std::size_t j = 0; j < Nk; ++j) {
        const T w = p[j] / denom;
        for (std::size_t c = 0; c < d; ++c) orow[c] += w * vb[j * d + c];
      }
    }
  }
  return out;
}

template <typename T>
AttentionGrads<T> attention_core_backward(const Tensor<T>& q, const Tensor<T>& k,
                                          const Tensor<T>& v, const Tensor<T>& grad_out) {
  const std::size_t B = q.dim(0), Hh = q.dim(1), N = q.dim(2), d = q.dim(3);
  const std::size_t Nk = k.dim(2);
  AttentionGrads<T> g{Tensor<T>(q.shape()), Tensor<T>(k.shape()), Tensor<T>(v.shape())};
  const T scale = T{1} / std::sqrt(static_cast<T>(d));
  std::vector<T> p(Nk), dp(Nk);
  for (std::size_t bh = 0; bh < B * Hh; ++bh) {
    const T* qb = q.data().data() + bh * N * d;
    const T* kb = k.data().data() + bh * Nk * d;
    const T* vb = v.data().data() + bh * Nk * d;
    const T* gob = grad_out.data().data() + bh * N * d;
    T* gqb = g.q.data().data() + bh * N * d;
    T* gkb = g.k.data().data() + bh * Nk * d;
    T* gvb = g.v.data().data() + bh * Nk * d;
    for (std::size_t i = 0; i < N; ++i) {
      T mx = -std::numeric_limits<T>::infinity();
      for (std::size_t j = 0; j < Nk; ++j) {
        T s{0};
        for (std::size_t c = 0; c < d; ++c) s += qb[i * d + c] * kb[j * d + c];
        p[j] = s * scale;
        mx = std::max(mx, p[j]);
      }
      T denom{0};
      for (std::size_t j = 0; j < Nk; ++j) {
        p[j] = std::exp(p[j] - mx);
        denom += p[j];
      }
      const T* gorow = gob + i * d;
      T dot{0};
      for (std::size_t j = 0; j < Nk; ++j) {
        p[j] /= denom;
        T s{0};
        for (std::size_t c = 0; c < d; ++c) {
          s += gorow[c] * vb[j * d + c];
          gvb[j * d + c] += p[j] * gorow[c];
        }
        dp[j] = s;
        dot += p[j] * s;
      }
      for (std::size_t j = 0; j < Nk; ++j) {
        const T ds = p[j] * (dp[j] - dot) * scale;
        for (std::size_t c = 0; c < d; ++c) {
          gqb[i * d + c] += ds * kb[j * d + c];
          gkb[j * d + c] += ds * qb[i * d + c];
        }
      }
    }
  }
  return g;
}

// ---------------------------------------------------------------------------

Shape broadcast_shape(const Shape& a, const Shape& b) {
  if (a.size() != b.size()) {
    throw ShapeError("broadcast: rank mismatch " + shape_str(a) + " vs " + shape_str(b));
  }
  Shape out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i] == b[i] || b[i] == 1) {
      out[i] = a[i];
    } else if (a[i] == 1) {
      out[i] = b[i];
    } else {
      throw ShapeError("broadcast: incompatible " + shape_str(a) + " vs " + shape_str(b));
    }
  }
  return out;
}

template <typename T>
Tensor<T> binary(const Tensor<T>& a, const Tensor<T>& b, BinaryOp op) {
  auto apply = [op](T x, T y) {
    switch (op) {
      case BinaryOp::add: return x + y;
      case BinaryOp::sub: return x - y;
      case BinaryOp::mul: return x * y;
    }
    return x;
  };
  if (a.shape() == b.shape()) {
    Tensor<T> out(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = apply(a[i], b[i]);
    return out;
  }
  const Shape shape = broadcast_shape(a.shape(), b.shape());
  Tensor<T> out(shape);
  const auto sa = broadcast_strides(a.shape(), shape);
  const auto sb = broadcast_strides(b.shape(), shape);
  std::ptrdiff_t ia = 0, ib = 0;
  Cursor cur(shape);
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = apply(a[static_cast<std::size_t>(ia)], b[static_cast<std::size_t>(ib)]);
    cur.step([&](std::size_t ax, std::ptrdiff_t delta) {
      ia += delta * static_cast<std::ptrdiff_t>(sa[ax]);
      ib += delta * static_cast<std::ptrdiff_t>(sb[ax]);
    });
  }
  return out;
}

template <typename T>
Tensor<T> reduce_to_shape(const Tensor<T>& grad, const Shape& shape) {
  if (grad.shape() == shape) return grad;
  const auto st = broadcast_strides(shape, grad.shape());
  Tensor<T> out(shape);
  std::ptrdiff_t io = 0;
  Cursor cur(grad.shape());
  for (std::size_t i = 0; i < grad.size(); ++i) {
    out[static_cast<std::size_t>(io)] += grad[i];
    cur.step([&](std::size_t ax, std::ptrdiff_t delta) {
      io += delta * static_cast<std::ptrdiff_t>(st[ax]);
    });
  }
  return out;
}

template <typename T>
Tensor<T> permute(const Tensor<T>& x, const std::vector<std::size_t>& order) {
  const Shape& s = x.shape();
  if (order.size() != s.size()) throw ShapeError("permute: order rank mismatch");
  Shape out_shape(s.size());
  const auto in_strides = strides_of(s);
  std::vector<std::size_t> st(s.size());
  std::vector<bool> seen(s.size(), false);
  for (std::size_t i = 0; i < order.size(); ++i) {
    if (order[i] >= s.size() || seen[order[i]]) throw ShapeError("permute: invalid axis order");
    seen[order[i]] = true;
    out_shape[i] = s[order[i]];
    st[i] = in_strides[order[i]];
  }
  Tensor<T> out(out_shape);
  std::ptrdiff_t src = 0;
  Cursor cur(out_shape);
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = x[static_cast<std::size_t>(src)];
    cur.step([&](std::size_t ax, std::ptrdiff_t delta) {
      src += delta * static_cast<std::ptrdiff_t>(st[ax]);
    });
  }
  return out;
}

template <typename T>
Tensor<T> concat(const std::vector<const Tensor<T>*>& parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  Shape shape = parts.front()->shape();
  if (axis >= shape.size()) throw ShapeError("concat: axis out of range");
  std::size_t total = 0;
  for (const auto* p : parts) {
    const Shape& ps = p->shape();
    if (ps.size() != shape.size()) throw ShapeError("concat: rank mismatch");
    for (std::size_t i = 0; i < ps.size(); ++i) {
      if (i != axis && ps[i] != shape[i]) {
        throw ShapeError("concat: extent mismatch " + shape_str(ps) + " vs " + shape_str(shape));
      }
    }
    total += ps[axis];
  }
  shape[axis] = total;
  Tensor<T> out(shape);
  const AxisSplit sp = split_axis(shape, axis);
  std::size_t offset = 0;
  for (const auto* p : parts) {
    const std::size_t ext = p->dim(axis);
    for (std::size_t o = 0; o < sp.outer; ++o) {
      const T* src = p->data().data() + o * ext * sp.inner;
      T* dst = out.data().data() + (o * total + offset) * sp.inner;
      std::copy(src, src + ext * sp.inner, dst);
    }
    offset += ext;
  }
  return out;
}

template <typename T>
Tensor<T> slice(const Tensor<T>& x, std::size_t axis, std::size_t start, std::size_t length) {
  const AxisSplit sp = split_axis(x.shape(), axis);
  if (length == 0 || start + length > sp.extent) throw ShapeError("slice: range out of bounds");
  Shape shape = x.shape();
  shape[axis] = length;
  Tensor<T> out(shape);
  for (std::size_t o = 0; o < sp.outer; ++o) {
    const T* src = x.data().data() + (o * sp.extent + start) * sp.inner;
    std::copy(src, src + length * sp.inner, out.data().data() + o * length * sp.inner);
  }
  return out;
}

template <typename T>
Tensor<T> reduce_axis(const Tensor<T>& x, std::size_t axis, PoolKind kind) {
  const AxisSplit sp = split_axis(x.shape(), axis);
  Shape shape = x.shape();
  shape[axis] = 1;
  Tensor<T> out(shape);
  for (std::size_t o = 0; o < sp.outer; ++o) {
    for (std::size_t in = 0; in < sp.inner; ++in) {
      const std::size_t base = o * sp.extent * sp.inner + in;
      if (kind == PoolKind::max) {
        T mx = x[base];
        for (std::size_t j = 1; j < sp.extent; ++j) mx = std::max(mx, x[base + j * sp.inner]);
        out[o * sp.inner + in] = mx;
      } else {
        T acc{0};
        for (std::size_t j = 0; j < sp.extent; ++j) acc += x[base + j * sp.inner];
        out[o * sp.inner + in] = acc / static_cast<T>(sp.extent);
      }
    }
  }
  return out;
}

template <typename T>
Tensor<T> reduce_axis_backward(const Tensor<T>& x, const Tensor<T>& grad_out, std::size_t axis,
                               PoolKind kind) {
  const AxisSplit sp = split_axis(x.shape(), axis);
  Tensor<T> g(x.shape());
  for (std::size_t o = 0; o < sp.outer; ++o) {
    for (std::size_t in = 0; in < sp.inner; ++in) {
      const std::size_t base = o * sp.extent * sp.inner + in;
      const T go = grad_out[o * sp.inner + in];
      if (kind == PoolKind::max) {
        std::size_t best = 0;
        for (std::size_t j = 1; j < sp.extent; ++j) {
          if (x[base + j * sp.inner] > x[base + best * sp.inner]) best = j;
        }
        g[base + best * sp.inner] = go;
      } else {
        const T share = go / static_cast<T>(sp.extent);
        for (std::size_t j = 0; j < sp.extent; ++j) g[base + j * sp.inner] = share;
      }
    }
  }
  return g;
}

// ---------------------------------------------------------------------------

namespace {

template <typename T>
void check_labels(const Tensor<T>& logits, const std::vector<int>& labels, int ignore_id) {
  require_rank(logits.shape(), 4, "cross_entropy logits");
  const std::size_t pixels = logits.dim(0) * logits.dim(2) * logits.dim(3);
  if (labels.size() != pixels) {
    throw ShapeError("cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                     std::to_string(pixels) + " pixels");
  }
  const int K = static_cast<int>(logits.dim(1));
  for (int l : labels) {
    if (l == ignore_id && ignore_id >= 0) continue;
    if (l < 0 || l >= K) throw ShapeError("cross_entropy: label " + std::to_string(l) + " out of range");
  }
}

}  // namespace

template <typename T>
T cross_entropy(const Tensor<T>& logits, const std::vector<int>& labels, int ignore_id) {
  check_labels(logits, labels, ignore_id);
  const std::size_t B = logits.dim(0), K = logits.dim(1), HW = logits.dim(2) * logits.dim(3);
  Acc<T> total = 0;
  std::size_t count = 0;
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t px = 0; px < HW; ++px) {
      const int label = labels[b * HW + px];
      if (ignore_id >= 0 && label == ignore_id) continue;
      const T* base = logits.data().data() + b * K * HW + px;
      Acc<T> mx = base[0];
      for (std::size_t k = 1; k < K; ++k) mx = std::max(mx, static_cast<Acc<T>>(base[k * HW]));
      Acc<T> denom = 0;
      for (std::size_t k = 0; k < K; ++k) denom += std::exp(base[k * HW] - mx);
      total += std::log(denom) + mx - base[static_cast<std::size_t>(label) * HW];
      ++count;
    }
  }
  if (count == 0) throw ShapeError("cross_entropy: every pixel is ignored");
  return static_cast<T>(total / static_cast<Acc<T>>(count));
}

template <typename T>
Tensor<T> cross_entropy_backward(const Tensor<T>& logits, const std::vector<int>& labels,
                                 int ignore_id, T grad_out) {
  check_labels(logits, labels, ignore_id);
  const std::size_t B = logits.dim(0), K = logits.dim(1), HW = logits.dim(2) * logits.dim(3);
  std::size_t count = 0;
  for (int l : labels) {
    if (!(ignore_id >= 0 && l == ignore_id)) ++count;
  }
  if (count == 0) throw ShapeError("cross_entropy: every pixel is ignored");
  Tensor<T> g(logits.shape());
  const Acc<T> scale = static_cast<Acc<T>>(grad_out) / static_cast<Acc<T>>(count);
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t px = 0; px < HW; ++px) {
      const int label = labels[b * HW + px];
      if (ignore_id >= 0 && label == ignore_id) continue;
      const std::size_t off = b * K * HW + px;
      Acc<T> mx = logits[off];
      for (std::size_t k = 1; k < K; ++k) mx = std::max(mx, static_cast<Acc<T>>(logits[off + k * HW]));
      Acc<T> denom = 0;
      for (std::size_t k = 0; k < K; ++k) denom += std::exp(logits[off + k * HW] - mx);
      for (std::size_t k = 0; k < K; ++k) {
        const Acc<T> pk = std::exp(logits[off + k * HW] - mx) / denom;
        const Acc<T> target = static_cast<int>(k) == label ? 1.0 : 0.0;
        g[off + k * HW] = static_cast<T>(scale * (pk - target));
      }
    }
  }
  return g;
}

// ---------------------------------------------------------------------------

#define EIFNET_INSTANTIATE_KERNELS(T)                                                          \
  template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, std::size_t, \
                            std::size_t);                                                      \
  template ConvGrads<T> conv2d_backward(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,  \
                                        std::size_t, std::size_t);                             \
  template Tensor<T> pool2d(const Tensor<T>&, PoolKind, std::size_t, std::size_t, std::size_t); \
  template Tensor<T> pool2d_backward(const Tensor<T>&, const Tensor<T>&, PoolKind, std::size_t, \
                                     std::size_t, std::size_t);                                \
  template Tensor<T> gap(const Tensor<T>&);                                                    \
  template Tensor<T> gap_backward(const Shape&, const Tensor<T>&);                             \
  template Tensor<T> sigmoid(const Tensor<T>&);                                                \
  template Tensor<T> sigmoid_backward(const Tensor<T>&, const Tensor<T>&);                     \
  template Tensor<T> relu(const Tensor<T>&);                                                   \
  template Tensor<T> relu_backward(const Tensor<T>&, const Tensor<T>&);                        \
  template Tensor<T> gelu(const Tensor<T>&);                                                   \
  template Tensor<T> gelu_backward(const Tensor<T>&, const Tensor<T>&);                        \
  template Tensor<T> softmax(const Tensor<T>&, std::size_t);                                   \
  template Tensor<T> softmax_backward(const Tensor<T>&, const Tensor<T>&, std::size_t);        \
  template Tensor<T> batchnorm2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);        \
  template AffineGrads<T> batchnorm2d_backward(const Tensor<T>&, const Tensor<T>&,             \
                                               const Tensor<T>&);                              \
  template Tensor<T> layernorm_channels(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&); \
  template AffineGrads<T> layernorm_channels_backward(const Tensor<T>&, const Tensor<T>&,      \
                                                      const Tensor<T>&);                       \
  template Tensor<T> resample(const Tensor<T>&, std::size_t, std::size_t, ResampleMode);       \
  template Tensor<T> resample_backward(const Shape&, const Tensor<T>&, ResampleMode);          \
  template Tensor<T> attention_core(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);     \
  template AttentionGrads<T> attention_core_backward(const Tensor<T>&, const Tensor<T>&,       \
                                                     const Tensor<T>&, const Tensor<T>&);      \
  template Tensor<T> binary(const Tensor<T>&, const Tensor<T>&, BinaryOp);                     \
  template Tensor<T> reduce_to_shape(const Tensor<T>&, const Shape&);                          \
  template Tensor<T> permute(const Tensor<T>&, const std::vector<std::size_t>&);               \
  template Tensor<T> concat(const std::vector<const Tensor<T>*>&, std::size_t);                \
  template Tensor<T> slice(const Tensor<T>&, std::size_t, std::size_t, std::size_t);           \
  template Tensor<T> reduce_axis(const Tensor<T>&, std::size_t, PoolKind);                     \
  template Tensor<T> reduce_axis_backward(const Tensor<T>&, const Tensor<T>&, std::size_t,     \
                                          PoolKind);                                           \
  template T cross_entropy(const Tensor<T>&, const std::vector<int>&, int);                    \
  template Tensor<T> cross_entropy_backward(const Tensor<T>&, const std::vector<int>&, int, T);

EIFNET_INSTANTIATE_KERNELS(float)
EIFNET_INSTANTIATE_KERNELS(double)
EIFNET_INSTANTIATE_KERNELS(long double)

#undef EIFNET_INSTANTIATE_KERNELS

}  // namespace eifnet::kernels
