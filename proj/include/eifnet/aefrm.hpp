#pragma once

#include <cstddef>
#include <string>

#include "eifnet/layers.hpp"

namespace eifnet {

inline constexpr std::size_t kAefrmDefaultWidth = 8;

/// Adaptive event feature refinement. Builds a multi-scale activity pyramid
/// from the activity map, turns it into a channel-weighted spatial mask and
/// applies the mask as a multiplicative residual on the signed projection.
///
/// Each temporal bin is processed as an independent single-channel map. The
/// internal feature width lives at 1/4 resolution; the mask is resampled
/// back to full resolution.
class Aefrm {
 public:
  explicit Aefrm(const std::string& prefix, std::size_t width = kAefrmDefaultWidth);

  std::size_t width() const { return width_; }
  const Conv2d& weight_conv() const { return conv_w_; }
  const Conv2d& mask_conv() const { return conv_m_; }

  template <typename T>
  void init(ParamStore<T>& store, Rng& rng) const;

  /// a_cm [B,C,H,W] -> F [B*C, width, H/4, W/4]. H and W must be divisible by 4.
  template <typename T>
  Var<T> activity_pyramid(Context<T>& ctx, Var<T> a_cm) const;

  /// sigmoid(conv1x1(gap(F))) -> [B*C, width, 1, 1]
  template <typename T>
  Var<T> channel_weights(Context<T>& ctx, Var<T> f) const;

  /// conv1x1(F * W) resampled to the event grid and reshaped to `event_shape` [B,C,H,W].
  template <typename T>
  Var<T> attention_mask(Context<T>& ctx, Var<T> f, Var<T> w, const Shape& event_shape) const;

  template <typename T>
  Var<T> forward(Context<T>& ctx, Var<T> a_cm, Var<T> e_vt) const;

 private:
  std::size_t width_;
  Conv2d stem_;
  Conv2d branch3_;
  Conv2d branch5_;
  ConvBnRelu cbr_;
  Conv2d conv_w_;
  Conv2d conv_m_;
};

/// E = e_vt * M + e_vt
template <typename T>
Var<T> refine(Var<T> e_vt, Var<T> mask) {
  if (e_vt.shape() != mask.shape()) {
    throw ShapeError("refine: e_vt " + shape_str(e_vt.shape()) + " vs mask " + shape_str(mask.shape()));
  }
  return ops::add(ops::mul(e_vt, mask), e_vt);
}

}  // namespace eifnet
