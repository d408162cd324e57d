#pragma once

// Value-level numeric kernels on Tensor. Each differentiable kernel has a
// matching *_backward that maps the output gradient to input gradients.
// The differentiable wrappers in ops.hpp record these onto a Tape.

#include <cstddef>
#include <vector>

#include "eifnet/tensor.hpp"

namespace eifnet::kernels {

enum class PoolKind { avg, max };
enum class ResampleMode { bilinear, nearest };

template <typename T>
struct ConvGrads {
  Tensor<T> input;
  Tensor<T> weight;
  Tensor<T> bias;
};

template <typename T>
struct AffineGrads {
  Tensor<T> input;
  Tensor<T> scale;
  Tensor<T> shift;
};

template <typename T>
struct AttentionGrads {
  Tensor<T> q;
  Tensor<T> k;
  Tensor<T> v;
};

inline constexpr double kNormEpsilon = 1e-5;

// --- convolution / pooling -------------------------------------------------

/// Zero-padded cross-correlation. input [B,Cin,H,W], weight [Cout,Cin,kh,kw], bias [Cout].
template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias,
                 std::size_t stride, std::size_t pad);
template <typename T>
ConvGrads<T> conv2d_backward(const Tensor<T>& input, const Tensor<T>& weight,
                             const Tensor<T>& grad_out, std::size_t stride, std::size_t pad);

/// Average pooling divides by the full kernel area; padded taps count as zeros.
template <typename T>
Tensor<T> pool2d(const Tensor<T>& input, PoolKind kind, std::size_t kernel, std::size_t stride,
                 std::size_t pad);
template <typename T>
Tensor<T> pool2d_backward(const Tensor<T>& input, const Tensor<T>& grad_out, PoolKind kind,
                          std::size_t kernel, std::size_t stride, std::size_t pad);

/// Spatial mean: [B,C,H,W] -> [B,C,1,1].
template <typename T>
Tensor<T> gap(const Tensor<T>& input);
template <typename T>
Tensor<T> gap_backward(const Shape& input_shape, const Tensor<T>& grad_out);

// --- activations -----------------------------------------------------------

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x);
template <typename T>
Tensor<T> sigmoid_backward(const Tensor<T>& y, const Tensor<T>& grad_out);

template <typename T>
Tensor<T> relu(const Tensor<T>& x);
template <typename T>
Tensor<T> relu_backward(const Tensor<T>& x, const Tensor<T>& grad_out);

/// Exact (erf) GELU.
template <typename T>
Tensor<T> gelu(const Tensor<T>& x);
template <typename T>
Tensor<T> gelu_backward(const Tensor<T>& x, const Tensor<T>& grad_out);

template <typename T>
Tensor<T> softmax(const Tensor<T>& x, std::size_t axis);
template <typename T>
Tensor<T> softmax_backward(const Tensor<T>& y, const Tensor<T>& grad_out, std::size_t axis);

// --- normalization ---------------------------------------------------------

/// Batch statistics over (B,H,W) per channel; scale/shift have shape [C].
template <typename T>
Tensor<T> batchnorm2d(const Tensor<T>& x, const Tensor<T>& scale, const Tensor<T>& shift);
template <typename T>
AffineGrads<T> batchnorm2d_backward(const Tensor<T>& x, const Tensor<T>& scale,
                                    const Tensor<T>& grad_out);

/// Normalizes across the channel axis at every (b,h,w); scale/shift have shape [C].
template <typename T>
Tensor<T> layernorm_channels(const Tensor<T>& x, const Tensor<T>& scale, const Tensor<T>& shift);
template <typename T>
AffineGrads<T> layernorm_channels_backward(const Tensor<T>& x, const Tensor<T>& scale,
                                           const Tensor<T>& grad_out);

// --- resampling ------------------------------------------------------------

/// Bilinear uses align_corners=false: src = (dst + 0.5) * in/out - 0.5, edge-clamped.
template <typename T>
Tensor<T> resample(const Tensor<T>& input, std::size_t out_h, std::size_t out_w,
                   ResampleMode mode);
template <typename T>
Tensor<T> resample_backward(const Shape& input_shape, const Tensor<T>& grad_out,
                            ResampleMode mode);

// --- attention -------------------------------------------------------------

/// softmax(Q K^T / sqrt(d)) V per (batch, head). Q [B,h,N,d], K,V [B,h,Nk,d].
template <typename T>
Tensor<T> attention_core(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v);
template <typename T>
AttentionGrads<T> attention_core_backward(const Tensor<T>& q, const Tensor<T>& k,
                                          const Tensor<T>& v, const Tensor<T>& grad_out);

// --- elementwise and layout ------------------------------------------------

/// Numpy-style broadcast of two equal-rank shapes (each extent equal or 1).
Shape broadcast_shape(const Shape& a, const Shape& b);

enum class BinaryOp { add, sub, mul };

template <typename T>
Tensor<T> binary(const Tensor<T>& a, const Tensor<T>& b, BinaryOp op);

/// Sum `grad` down to `shape` along broadcast axes.
template <typename T>
Tensor<T> reduce_to_shape(const Tensor<T>& grad, const Shape& shape);

template <typename T>
Tensor<T> permute(const Tensor<T>& x, const std::vector<std::size_t>& order);

template <typename T>
Tensor<T> concat(const std::vector<const Tensor<T>*>& parts, std::size_t axis);

template <typename T>
Tensor<T> slice(const Tensor<T>& x, std::size_t axis, std::size_t start, std::size_t length);

/// Mean or max across one axis, keeping it with extent 1.
template <typename T>
Tensor<T> reduce_axis(const Tensor<T>& x, std::size_t axis, PoolKind kind);
template <typename T>
Tensor<T> reduce_axis_backward(const Tensor<T>& x, const Tensor<T>& grad_out, std::size_t axis,
                               PoolKind kind);

/// Mean softmax cross-entropy over pixels. logits [B,K,H,W], labels B*H*W ids.
/// Pixels whose label equals ignore_id are skipped (ignore_id < 0 disables).
template <typename T>
T cross_entropy(const Tensor<T>& logits, const std::vector<int>& labels, int ignore_id);
template <typename T>
Tensor<T> cross_entropy_backward(const Tensor<T>& logits, const std::vector<int>& labels,
                                 int ignore_id, T grad_out);

}  // namespace eifnet::kernels
