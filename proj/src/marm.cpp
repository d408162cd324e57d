#include "eifnet/marm.hpp"

namespace eifnet {

namespace {

void check_spatial(const Shape& e, const Shape& i) {
  if (e.size() != 4 || i.size() != 4 || e[0] != i[0] || e[2] != i[2] || e[3] != i[3]) {
    throw ShapeError("MARM: event " + shape_str(e) + " and image " + shape_str(i) +
                     " must share batch and spatial extents");
  }
}

template <typename T>
Var<T> gamma4(Context<T>& ctx, const std::string& name) {
  return ops::reshape(ctx.param(name), {1, 1, 1, 1});
}

}  // namespace

Marm::Marm(const std::string& prefix, std::size_t event_channels, std::size_t image_channels)
    : conv_ce_(prefix + ".conv_ce", event_channels, event_channels, 1),
      conv_ci_(prefix + ".conv_ci", image_channels, image_channels, 1),
      conv_s_(prefix + ".conv_s", 4, 2, 7, 1, 3),
      gamma_e_(prefix + ".gamma_e"),
      gamma_i_(prefix + ".gamma_i") {}

template <typename T>
void Marm::init(ParamStore<T>& store, Rng& rng) const {
  conv_ce_.init(store, rng);
  conv_ci_.init(store, rng);
  conv_s_.init(store, rng);
  store.add(gamma_e_, Tensor<T>({1}), ParamKind::scalar);
  store.add(gamma_i_, Tensor<T>({1}), ParamKind::scalar);
}

template <typename T>
std::pair<Var<T>, Var<T>> Marm::channel_recalibrate(Context<T>& ctx, Var<T> e, Var<T> i) const {
  check_spatial(e.shape(), i.shape());
  Var<T> w_e = ops::sigmoid(conv_ce_(ctx, ops::gap(e)));
  Var<T> w_i = ops::sigmoid(conv_ci_(ctx, ops::gap(i)));
  return {ops::mul(e, w_e), ops::mul(i, w_i)};
}

template <typename T>
Var<T> Marm::spatial_stats(Var<T> e_c, Var<T> i_c) {
  check_spatial(e_c.shape(), i_c.shape());
  using ops::PoolKind;
  return ops::concat<T>({ops::reduce_axis(e_c, 1, PoolKind::avg), ops::reduce_axis(e_c, 1, PoolKind::max),
                         ops::reduce_axis(i_c, 1, PoolKind::avg), ops::reduce_axis(i_c, 1, PoolKind::max)},
                        1);
}

template <typename T>
Var<T> Marm::spatial_masks(Context<T>& ctx, Var<T> s) const {
  if (s.shape().size() != 4 || s.dim(1) != 4) {
    throw ShapeError("MARM spatial stats must have 4 channels, got " + shape_str(s.shape()));
  }
  return ops::sigmoid(conv_s_(ctx, s));
}

template <typename T>
std::pair<Var<T>, Var<T>> Marm::recalibrate(Context<T>& ctx, Var<T> e, Var<T> i) const {
  auto [e_c, i_c] = channel_recalibrate(ctx, e, i);
  Var<T> masks = spatial_masks(ctx, spatial_stats(e_c, i_c));
  Var<T> a_e = ops::slice(masks, 1, 0, 1);
  Var<T> a_i = ops::slice(masks, 1, 1, 1);
  Var<T> e_rec = ops::add(ops::mul(ops::mul(e_c, a_e), gamma4(ctx, gamma_e_)), e);
  Var<T> i_rec = ops::add(ops::mul(ops::mul(i_c, a_i), gamma4(ctx, gamma_i_)), i);
  return {e_rec, i_rec};
}

#define EIFNET_INSTANTIATE(T)                                                                  \
  template void Marm::init(ParamStore<T>&, Rng&) const;                                        \
  template std::pair<Var<T>, Var<T>> Marm::channel_recalibrate(Context<T>&, Var<T>, Var<T>) const; \
  template Var<T> Marm::spatial_stats(Var<T>, Var<T>);                                         \
  template Var<T> Marm::spatial_masks(Context<T>&, Var<T>) const;                              \
  template std::pair<Var<T>, Var<T>> Marm::recalibrate(Context<T>&, Var<T>, Var<T>) const;

EIFNET_INSTANTIATE(float)
EIFNET_INSTANTIATE(double)
EIFNET_INSTANTIATE(long double)
#undef EIFNET_INSTANTIATE

}  // namespace eifnet
