#pragma once

#include <cstddef>
#include <string>

#include "eifnet/layers.hpp"

namespace eifnet {

struct MgfmConfig {
  std::size_t channels = 16;
  std::size_t heads = 1;
  /// K/V pooling factor of the image-side cross-attention.
  std::size_t reduction = 2;
  double lambda_init = 0.8;
  std::size_t ffn_expansion = 4;
};

/// Multi-head attention gated fusion.
///
/// Event side: differential cross-attention, queries from events and
/// keys/values from the image, with A = softmax(Q1 K1^T/sqrt d) -
/// lambda_h softmax(Q2 K2^T/sqrt d) per head.
/// Image side: cross-attention with keys/values from the average-pooled
/// event map.
/// Both attended streams feed a two-channel softmax gate (channel plus
/// spatial attention), are mixed per pixel, and then pass through a
/// layernorm + FFN residual block.
///
/// Bias-free convs: the keys (a per-row logit shift leaves softmax
/// unchanged), the gate convs ahead of batchnorm, and the FFN output.
class Mgfm {
 public:
  Mgfm(const std::string& prefix, const MgfmConfig& config);

  const MgfmConfig& config() const { return cfg_; }
  const std::string& lambda_name() const { return lambda_; }
  const Conv2d& diff_q1() const { return q1_; }
  const Conv2d& diff_q2() const { return q2_; }
  const Conv2d& diff_k1() const { return k1_; }
  const Conv2d& diff_k2() const { return k2_; }
  const Conv2d& diff_v() const { return dv_; }
  const Conv2d& diff_out() const { return dout_; }
  const Conv2d& cross_q() const { return cq_; }
  const Conv2d& cross_k() const { return ck_; }
  const Conv2d& cross_v() const { return cv_; }
  const Conv2d& cross_out() const { return cout_; }
  const Conv2d& gate_channel_conv() const { return conv_c_; }
  const BatchNorm2d& gate_channel_bn() const { return bn_c_; }
  const Conv2d& gate_spatial_conv() const { return conv_s_; }
  const BatchNorm2d& gate_spatial_bn() const { return bn_s_; }
  const Conv2d& gate_logit_conv() const { return conv_g_; }
  const LayerNorm2d& norm() const { return ln_; }
  const Conv2d& ffn_in() const { return fc1_; }
  const Conv2d& ffn_out() const { return fc2_; }

  template <typename T>
  void init(ParamStore<T>& store, Rng& rng) const;

  /// E' = DifferentialAttention(X, Y) + X; X = events (queries), Y = image.
  template <typename T>
  Var<T> differential_attention(Context<T>& ctx, Var<T> x, Var<T> y) const;

  /// I' = CrossAttention(X, pool_R(Y)) + X; X = image (queries), Y = events.
  template <typename T>
  Var<T> efficient_cross_attention(Context<T>& ctx, Var<T> x, Var<T> y) const;

  /// G = softmax_channels(conv_g(A_c + A_s)) -> [B,2,H,W]
  template <typename T>
  Var<T> gate(Context<T>& ctx, Var<T> e_att, Var<T> i_att) const;

  /// F_out = E' * G_e + I' * G_i
  template <typename T>
  static Var<T> fuse(Var<T> e_att, Var<T> i_att, Var<T> g);

  /// F_out + FFN(LN(F_out))
  template <typename T>
  Var<T> enhance(Context<T>& ctx, Var<T> f_out) const;

  template <typename T>
  Var<T> forward(Context<T>& ctx, Var<T> e_rec, Var<T> i_rec) const;

 private:
  MgfmConfig cfg_;
  Conv2d q1_, q2_, k1_, k2_, dv_, dout_;
  std::string lambda_;
  Conv2d cq_, ck_, cv_, cout_;
  Conv2d conv_c_;
  BatchNorm2d bn_c_;
  Conv2d conv_s_;
  BatchNorm2d bn_s_;
  Conv2d conv_g_;
  LayerNorm2d ln_;
  Conv2d fc1_, fc2_;
};

/// [B,C,H,W] -> [B,heads,H*W,C/heads]
template <typename T>
Var<T> split_heads(Var<T> x, std::size_t heads) {
  const Shape& s = x.shape();
  if (heads == 0 || s[1] % heads != 0) {
    throw ShapeError("channels " + std::to_string(s[1]) + " not divisible by " +
                     std::to_string(heads) + " heads");
  }
  Var<T> r = ops::reshape(x, {s[0], heads, s[1] / heads, s[2] * s[3]});
  return ops::permute(r, {0, 1, 3, 2});
}

/// [B,heads,H*W,d] -> [B,heads*d,H,W]
template <typename T>
Var<T> merge_heads(Var<T> x, std::size_t height, std::size_t width) {
  const Shape& s = x.shape();
  Var<T> r = ops::permute(x, {0, 1, 3, 2});
  return ops::reshape(r, {s[0], s[1] * s[3], height, width});
}

}  // namespace eifnet
