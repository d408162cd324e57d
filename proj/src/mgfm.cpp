#include "eifnet/mgfm.hpp"

namespace eifnet {

Mgfm::Mgfm(const std::string& prefix, const MgfmConfig& config)
    : cfg_(config),
      q1_(prefix + ".diff.q1", config.channels, config.channels, 1),
      q2_(prefix + ".diff.q2", config.channels, config.channels, 1),
      k1_(prefix + ".diff.k1", config.channels, config.channels, 1, 1, 0, false),
      k2_(prefix + ".diff.k2", config.channels, config.channels, 1, 1, 0, false),
      dv_(prefix + ".diff.v", config.channels, config.channels, 1),
      dout_(prefix + ".diff.out", config.channels, config.channels, 1),
      lambda_(prefix + ".diff.lambda"),
      cq_(prefix + ".cross.q", config.channels, config.channels, 1),
      ck_(prefix + ".cross.k", config.channels, config.channels, 1, 1, 0, false),
      cv_(prefix + ".cross.v", config.channels, config.channels, 1),
      cout_(prefix + ".cross.out", config.channels, config.channels, 1),
      conv_c_(prefix + ".gate.conv_c", 2 * config.channels, 2, 1, 1, 0, false),
      bn_c_(prefix + ".gate.bn_c", 2),
      conv_s_(prefix + ".gate.conv_s", 2 * config.channels, 2, 7, 1, 3, false),
      bn_s_(prefix + ".gate.bn_s", 2),
      conv_g_(prefix + ".gate.conv_g", 2, 2, 1),
      ln_(prefix + ".ln", config.channels),
      fc1_(prefix + ".ffn.fc1", config.channels, config.ffn_expansion * config.channels, 1),
      fc2_(prefix + ".ffn.fc2", config.ffn_expansion * config.channels, config.channels, 1, 1, 0, false) {
  if (config.channels == 0 || config.heads == 0 || config.channels % config.heads != 0) {
    throw ConfigError("MGFM channels " + std::to_string(config.channels) +
                      " must be a positive multiple of heads " + std::to_string(config.heads));
  }
  if (config.reduction == 0) throw ConfigError("MGFM reduction must be at least 1");
}

template <typename T>
void Mgfm::init(ParamStore<T>& store, Rng& rng) const {
  for (const Conv2d* c : {&q1_, &q2_, &k1_, &k2_, &dv_, &dout_}) c->init(store, rng);
  store.add(lambda_, Tensor<T>({cfg_.heads}, static_cast<T>(cfg_.lambda_init)), ParamKind::scalar);
  for (const Conv2d* c : {&cq_, &ck_, &cv_, &cout_}) c->init(store, rng);
  conv_c_.init(store, rng);
  bn_c_.init(store, rng);
  conv_s_.init(store, rng);
  bn_s_.init(store, rng);
  conv_g_.init(store, rng);
  // identity logits: initial gates are driven by A_c + A_s directly
  store.set(conv_g_.weight(), Tensor<T>({2, 2, 1, 1}, {T{1}, T{0}, T{0}, T{1}}));
  ln_.init(store, rng);
  fc1_.init(store, rng);
  fc2_.init(store, rng);
}

template <typename T>
Var<T> Mgfm::differential_attention(Context<T>& ctx, Var<T> x, Var<T> y) const {
  if (x.shape() != y.shape()) {
    throw ShapeError("differential attention: " + shape_str(x.shape()) + " vs " + shape_str(y.shape()));
  }
  const std::size_t h = cfg_.heads;
  Var<T> q1 = split_heads(q1_(ctx, x), h);
  Var<T> q2 = split_heads(q2_(ctx, x), h);
  Var<T> k1 = split_heads(k1_(ctx, y), h);
  Var<T> k2 = split_heads(k2_(ctx, y), h);
  Var<T> v = split_heads(dv_(ctx, y), h);
  // (A1 - lambda A2) V == A1 V - lambda (A2 V)
  Var<T> lambda = ops::reshape(ctx.param(lambda_), {1, h, 1, 1});
  Var<T> att = ops::sub(ops::attention_core(q1, k1, v),
                        ops::mul(ops::attention_core(q2, k2, v), lambda));
  Var<T> out = dout_(ctx, merge_heads(att, x.dim(2), x.dim(3)));
  return ops::add(out, x);
}

template <typename T>
Var<T> Mgfm::efficient_cross_attention(Context<T>& ctx, Var<T> x, Var<T> y) const {
  if (x.shape() != y.shape()) {
    throw ShapeError("cross attention: " + shape_str(x.shape()) + " vs " + shape_str(y.shape()));
  }
  const std::size_t r = cfg_.reduction;
  if (x.dim(2) % r != 0 || x.dim(3) % r != 0) {
    throw ShapeError("cross attention: spatial extents " + shape_str(x.shape()) +
                     " not divisible by reduction " + std::to_string(r));
  }
  Var<T> reduced = r > 1 ? ops::pool2d(y, ops::PoolKind::avg, r, r, 0) : y;
  const std::size_t h = cfg_.heads;
  Var<T> q = split_heads(cq_(ctx, x), h);
  Var<T> k = split_heads(ck_(ctx, reduced), h);
  Var<T> v = split_heads(cv_(ctx, reduced), h);
  Var<T> out = cout_(ctx, merge_heads(ops::attention_core(q, k, v), x.dim(2), x.dim(3)));
  return ops::add(out, x);
}

template <typename T>
Var<T> Mgfm::gate(Context<T>& ctx, Var<T> e_att, Var<T> i_att) const {
  if (e_att.shape() != i_att.shape()) {
    throw ShapeError("gate: " + shape_str(e_att.shape()) + " vs " + shape_str(i_att.shape()));
  }
  Var<T> fused = ops::concat<T>({e_att, i_att}, 1);
  Var<T> a_c = ops::relu(bn_c_(ctx, conv_c_(ctx, ops::gap(fused))));
  Var<T> a_s = ops::relu(bn_s_(ctx, conv_s_(ctx, fused)));
  return ops::softmax(conv_g_(ctx, ops::add(a_s, a_c)), 1);
}

template <typename T>
Var<T> Mgfm::fuse(Var<T> e_att, Var<T> i_att, Var<T> g) {
  Var<T> g_e = ops::slice(g, 1, 0, 1);
  Var<T> g_i = ops::slice(g, 1, 1, 1);
  return ops::add(ops::mul(e_att, g_e), ops::mul(i_att, g_i));
}

template <typename T>
Var<T> Mgfm::enhance(Context<T>& ctx, Var<T> f_out) const {
  Var<T> hidden = ops::gelu(fc1_(ctx, ln_(ctx, f_out)));
  return ops::add(fc2_(ctx, hidden), f_out);
}

template <typename T>
Var<T> Mgfm::forward(Context<T>& ctx, Var<T> e_rec, Var<T> i_rec) const {
  Var<T> e_att = differential_attention(ctx, e_rec, i_rec);
  Var<T> i_att = efficient_cross_attention(ctx, i_rec, e_rec);
  Var<T> g = gate(ctx, e_att, i_att);
  return enhance(ctx, fuse(e_att, i_att, g));
}

#define EIFNET_INSTANTIATE(T)                                                                \
  template void Mgfm::init(ParamStore<T>&, Rng&) const;                                      \
  template Var<T> Mgfm::differential_attention(Context<T>&, Var<T>, Var<T>) const;           \
  template Var<T> Mgfm::efficient_cross_attention(Context<T>&, Var<T>, Var<T>) const;        \
  template Var<T> Mgfm::gate(Context<T>&, Var<T>, Var<T>) const;                             \
  template Var<T> Mgfm::fuse(Var<T>, Var<T>, Var<T>);                                        \
  template Var<T> Mgfm::enhance(Context<T>&, Var<T>) const;                                  \
  template Var<T> Mgfm::forward(Context<T>&, Var<T>, Var<T>) const;

EIFNET_INSTANTIATE(float)
EIFNET_INSTANTIATE(double)
EIFNET_INSTANTIATE(long double)
#undef EIFNET_INSTANTIATE

}  // namespace eifnet
