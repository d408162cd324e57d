#include "eifnet/aefrm.hpp"

namespace eifnet {

Aefrm::Aefrm(const std::string& prefix, std::size_t width)
    : width_(width),
      stem_(prefix + ".stem", 1, width, 7, 4, 3),
      branch3_(prefix + ".branch3", 1, width, 3, 1, 1),
      branch5_(prefix + ".branch5", 1, width, 3, 1, 1),
      cbr_(prefix + ".cbr", width, width, 3, 1, 1),
      conv_w_(prefix + ".conv_w", width, width, 1),
      conv_m_(prefix + ".conv_m", width, 1, 1) {
  if (width == 0) throw ConfigError("AEFRM width must be at least 1");
}

template <typename T>
void Aefrm::init(ParamStore<T>& store, Rng& rng) const {
  stem_.init(store, rng);
  branch3_.init(store, rng);
  branch5_.init(store, rng);
  cbr_.init(store, rng);
  conv_w_.init(store, rng);
  conv_m_.init(store, rng);
}

template <typename T>
Var<T> Aefrm::activity_pyramid(Context<T>& ctx, Var<T> a_cm) const {
  const Shape& s = a_cm.shape();
  if (s.size() != 4) throw ShapeError("AEFRM expects a_cm of rank 4, got " + shape_str(s));
  const std::size_t B = s[0], C = s[1], H = s[2], W = s[3];
  if (H % 4 != 0 || W % 4 != 0) {
    throw ShapeError("AEFRM input extents must be divisible by 4, got " + shape_str(s));
  }
  const std::size_t h4 = H / 4, w4 = W / 4;
  Var<T> x = ops::reshape(a_cm, {B * C, 1, H, W});
  Var<T> fs = stem_(ctx, x);
  Var<T> p1 = branch3_(ctx, ops::pool2d(x, ops::PoolKind::avg, 3, 3, 0));
  Var<T> p2 = branch5_(ctx, ops::pool2d(x, ops::PoolKind::avg, 5, 5, 0));
  p1 = ops::resample(p1, h4, w4, ops::ResampleMode::bilinear);
  p2 = ops::resample(p2, h4, w4, ops::ResampleMode::bilinear);
  return cbr_(ctx, ops::add(ops::add(fs, p1), p2));
}

template <typename T>
Var<T> Aefrm::channel_weights(Context<T>& ctx, Var<T> f) const {
  return ops::sigmoid(conv_w_(ctx, ops::gap(f)));
}

template <typename T>
Var<T> Aefrm::attention_mask(Context<T>& ctx, Var<T> f, Var<T> w, const Shape& event_shape) const {
  Var<T> m = conv_m_(ctx, ops::mul(f, w));
  m = ops::resample(m, event_shape[2], event_shape[3], ops::ResampleMode::bilinear);
  return ops::reshape(m, event_shape);
}

template <typename T>
Var<T> Aefrm::forward(Context<T>& ctx, Var<T> a_cm, Var<T> e_vt) const {
  if (a_cm.shape() != e_vt.shape()) {
    throw ShapeError("AEFRM: a_cm " + shape_str(a_cm.shape()) + " vs e_vt " + shape_str(e_vt.shape()));
  }
  Var<T> f = activity_pyramid(ctx, a_cm);
  Var<T> w = channel_weights(ctx, f);
  return refine(e_vt, attention_mask(ctx, f, w, e_vt.shape()));
}

#define EIFNET_INSTANTIATE(T)                                                                   \
  template void Aefrm::init(ParamStore<T>&, Rng&) const;                                        \
  template Var<T> Aefrm::activity_pyramid(Context<T>&, Var<T>) const;                           \
  template Var<T> Aefrm::channel_weights(Context<T>&, Var<T>) const;                            \
  template Var<T> Aefrm::attention_mask(Context<T>&, Var<T>, Var<T>, const Shape&) const;        \
  template Var<T> Aefrm::forward(Context<T>&, Var<T>, Var<T>) const;

EIFNET_INSTANTIATE(float)
EIFNET_INSTANTIATE(double)
EIFNET_INSTANTIATE(long double)
#undef EIFNET_INSTANTIATE

}  // namespace eifnet
