#include <doctest.h>

#include "eifnet/gradcheck.hpp"
#include "eifnet/gradcheck_suite.hpp"
#include "eifnet/mgfm.hpp"
#include "support.hpp"

using namespace eifnet;
using testing::idx4;
using testing::max_abs_diff;
using testing::random_tensor;

namespace {

struct Fixture {
  Mgfm module;
  ParamStore<double> store;
  Tape<double> tape{false};
  Context<double> ctx{tape, store};

  Fixture(std::uint64_t seed, MgfmConfig cfg) : module("mgfm", cfg) {
    Rng rng(seed);
    module.init(store, rng);
    randomize_for_gradcheck(store, rng);
  }
  Var<double> in(const Tensor<double>& t) { return ctx.constant(t); }
  Tensor<double>& p(const std::string& name) { return store.value(name); }
  void zero(const Conv2d& c) {
    for (auto& v : p(c.weight()).data()) v = 0;
    if (c.has_bias())
      for (auto& v : p(c.bias()).data()) v = 0;
  }
  Tensor<double> conv(const Conv2d& c, const Tensor<double>& x, std::size_t pad = 0) {
    const Tensor<double> b = c.has_bias() ? p(c.bias()) : Tensor<double>({c.out_channels()});
    return testing::naive_conv2d(x, p(c.weight()), b, 1, pad);
  }
};

MgfmConfig config(std::size_t c, std::size_t heads, std::size_t r) {
  MgfmConfig cfg;
  cfg.channels = c;
  cfg.heads = heads;
  cfg.reduction = r;
  return cfg;
}

// [B,C,H,W] -> [B,h,H*W,C/h]
Tensor<double> tokens(const Tensor<double>& x, std::size_t h) {
  const Shape& s = x.shape();
  const std::size_t d = s[1] / h, n = s[2] * s[3];
  Tensor<double> out({s[0], h, n, d});
  for (std::size_t b = 0; b < s[0]; ++b)
    for (std::size_t g = 0; g < h; ++g)
      for (std::size_t t = 0; t < n; ++t)
        for (std::size_t e = 0; e < d; ++e) out[idx4(out.shape(), b, g, t, e)] = x[idx4(s, b, g * d + e, t / s[3], t % s[3])];
  return out;
}

Tensor<double> image(const Tensor<double>& t, std::size_t H, std::size_t W) {
  const Shape& s = t.shape();
  Tensor<double> out({s[0], s[1] * s[3], H, W});
  for (std::size_t b = 0; b < s[0]; ++b)
    for (std::size_t g = 0; g < s[1]; ++g)
      for (std::size_t n = 0; n < s[2]; ++n)
        for (std::size_t e = 0; e < s[3]; ++e) out[idx4(out.shape(), b, g * s[3] + e, n / W, n % W)] = t[idx4(s, b, g, n, e)];
  return out;
}

Tensor<double> plus(const Tensor<double>& a, const Tensor<double>& b, double kb = 1.0) {
  Tensor<double> out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] + kb * b[i];
  return out;
}

Tensor<double> oracle_differential(Fixture& f, const Tensor<double>& x, const Tensor<double>& y) {
  const std::size_t h = f.module.config().heads;
  const auto v = tokens(f.conv(f.module.diff_v(), y), h);
  const auto a1 = testing::naive_attention(tokens(f.conv(f.module.diff_q1(), x), h),
                                           tokens(f.conv(f.module.diff_k1(), y), h), v);
  const auto a2 = testing::naive_attention(tokens(f.conv(f.module.diff_q2(), x), h),
                                           tokens(f.conv(f.module.diff_k2(), y), h), v);
  Tensor<double> att(a1.shape());
  const auto& lambda = f.p(f.module.lambda_name());
  for (std::size_t i = 0; i < att.size(); ++i) {
    const std::size_t g = (i / (a1.dim(2) * a1.dim(3))) % h;
    att[i] = a1[i] - lambda[g] * a2[i];
  }
  return plus(f.conv(f.module.diff_out(), image(att, x.dim(2), x.dim(3))), x);
}

Tensor<double> oracle_cross(Fixture& f, const Tensor<double>& x, const Tensor<double>& y) {
  const std::size_t h = f.module.config().heads, r = f.module.config().reduction;
  const auto pooled = testing::naive_pool2d(y, false, r, r, 0);
  const auto att = testing::naive_attention(tokens(f.conv(f.module.cross_q(), x), h),
                                            tokens(f.conv(f.module.cross_k(), pooled), h),
                                            tokens(f.conv(f.module.cross_v(), pooled), h));
  return plus(f.conv(f.module.cross_out(), image(att, x.dim(2), x.dim(3))), x);
}

Tensor<double> oracle_gate(Fixture& f, const Tensor<double>& e, const Tensor<double>& i) {
  const Shape& s = e.shape();
  Tensor<double> fused({s[0], 2 * s[1], s[2], s[3]});
  for (std::size_t b = 0; b < s[0]; ++b)
    for (std::size_t c = 0; c < 2 * s[1]; ++c)
      for (std::size_t y = 0; y < s[2]; ++y)
        for (std::size_t x = 0; x < s[3]; ++x)
          fused[idx4(fused.shape(), b, c, y, x)] = c < s[1] ? e[idx4(s, b, c, y, x)] : i[idx4(s, b, c - s[1], y, x)];
  const auto ac = testing::naive_relu(testing::naive_batchnorm(f.conv(f.module.gate_channel_conv(), testing::naive_gap(fused)),
                                                               f.p(f.module.gate_channel_bn().scale()),
                                                               f.p(f.module.gate_channel_bn().shift())));
  const auto as = testing::naive_relu(testing::naive_batchnorm(f.conv(f.module.gate_spatial_conv(), fused, 3),
                                                               f.p(f.module.gate_spatial_bn().scale()),
                                                               f.p(f.module.gate_spatial_bn().shift())));
  Tensor<double> sum(as.shape());
  for (std::size_t b = 0; b < s[0]; ++b)
    for (std::size_t c = 0; c < 2; ++c)
      for (std::size_t y = 0; y < s[2]; ++y)
        for (std::size_t x = 0; x < s[3]; ++x) sum[idx4(sum.shape(), b, c, y, x)] = as[idx4(as.shape(), b, c, y, x)] + ac[b * 2 + c];
  auto logits = f.conv(f.module.gate_logit_conv(), sum);
  Tensor<double> g(logits.shape());
  for (std::size_t b = 0; b < s[0]; ++b)
    for (std::size_t y = 0; y < s[2]; ++y)
      for (std::size_t x = 0; x < s[3]; ++x) {
        const double l0 = logits[idx4(g.shape(), b, 0, y, x)], l1 = logits[idx4(g.shape(), b, 1, y, x)];
        g[idx4(g.shape(), b, 0, y, x)] = 1 / (1 + std::exp(l1 - l0));
        g[idx4(g.shape(), b, 1, y, x)] = 1 / (1 + std::exp(l0 - l1));
      }
  return g;
}

}  // namespace

TEST_CASE("MGFM construction") {
  CHECK_THROWS_AS(Mgfm("m", config(6, 4, 1)), ConfigError);
  CHECK_THROWS_AS(Mgfm("m", config(4, 0, 1)), ConfigError);
  CHECK_THROWS_AS(Mgfm("m", config(4, 2, 0)), ConfigError);
  Fixture f(1, config(4, 2, 2));
  CHECK(f.p(f.module.lambda_name()).shape() == Shape{2});
  CHECK(f.p(f.module.gate_channel_conv().weight()).shape() == Shape{2, 8, 1, 1});
  CHECK(f.p(f.module.gate_spatial_conv().weight()).shape() == Shape{2, 8, 7, 7});
  CHECK(f.p(f.module.ffn_in().weight()).shape() == Shape{16, 4, 1, 1});
  CHECK(f.p(f.module.ffn_out().weight()).shape() == Shape{4, 16, 1, 1});

  Mgfm fresh("m", config(4, 2, 2));
  ParamStore<double> s;
  Rng rng(2);
  fresh.init(s, rng);
  CHECK(s.value(fresh.lambda_name()) == Tensor<double>({2}, 0.8));
  CHECK(s.value(fresh.gate_logit_conv().weight()) == Tensor<double>({2, 2, 1, 1}, {1, 0, 0, 1}));
}

TEST_CASE("MGFM differential attention") {
  Rng rng(3);
  const auto x = random_tensor({2, 4, 4, 4}, rng), y = random_tensor({2, 4, 4, 4}, rng);
  SUBCASE("random case against the token-loop oracle") {
    Fixture f(4, config(4, 2, 2));
    CHECK(max_abs_diff(f.module.differential_attention(f.ctx, f.in(x), f.in(y)).value(), oracle_differential(f, x, y)) < 1e-6);
  }
  SUBCASE("lambda zero collapses to single-softmax cross-attention") {
    Fixture f(5, config(4, 2, 2));
    f.p(f.module.lambda_name()) = Tensor<double>({2});
    auto out = f.module.differential_attention(f.ctx, f.in(x), f.in(y)).value();
    const auto att = testing::naive_attention(tokens(f.conv(f.module.diff_q1(), x), 2),
                                              tokens(f.conv(f.module.diff_k1(), y), 2),
                                              tokens(f.conv(f.module.diff_v(), y), 2));
    CHECK(max_abs_diff(out, plus(f.conv(f.module.diff_out(), image(att, 4, 4)), x)) < 1e-12);
  }
  SUBCASE("identical branches with lambda one cancel to the residual") {
    Fixture f(6, config(4, 2, 2));
    f.p(f.module.diff_q2().weight()) = f.p(f.module.diff_q1().weight());
    f.p(f.module.diff_q2().bias()) = f.p(f.module.diff_q1().bias());
    f.p(f.module.diff_k2().weight()) = f.p(f.module.diff_k1().weight());
    f.p(f.module.lambda_name()) = Tensor<double>({2}, 1.0);
    for (auto& v : f.p(f.module.diff_out().bias()).data()) v = 0;
    CHECK(f.module.differential_attention(f.ctx, f.in(x), f.in(y)).value() == x);
  }
  Fixture f(7, config(4, 2, 2));
  CHECK_THROWS_AS(f.module.differential_attention(f.ctx, f.in(x), f.in(Tensor<double>({2, 4, 4, 2}))), ShapeError);
}

TEST_CASE("MGFM efficient cross-attention") {
  Rng rng(8);
  const auto x = random_tensor({2, 4, 4, 6}, rng), y = random_tensor({2, 4, 4, 6}, rng);
  SUBCASE("R = 2 against the oracle with materialized pooling") {
    Fixture f(9, config(4, 2, 2));
    CHECK(max_abs_diff(f.module.efficient_cross_attention(f.ctx, f.in(x), f.in(y)).value(), oracle_cross(f, x, y)) < 1e-6);
  }
  SUBCASE("R = 1 is plain cross-attention") {
    Fixture f(10, config(4, 4, 1));
    CHECK(max_abs_diff(f.module.efficient_cross_attention(f.ctx, f.in(x), f.in(y)).value(), oracle_cross(f, x, y)) < 1e-6);
  }
  SUBCASE("spatially constant keys and values give a position-independent update") {
    Fixture f(11, config(4, 2, 2));
    Tensor<double> yc(y.shape());
    for (std::size_t b = 0; b < 2; ++b)
      for (std::size_t c = 0; c < 4; ++c)
        for (std::size_t k = 0; k < 24; ++k) yc[(b * 4 + c) * 24 + k] = 0.3 * double(c) - 0.5 * double(b);
    auto d = plus(f.module.efficient_cross_attention(f.ctx, f.in(x), f.in(yc)).value(), x, -1.0);
    for (std::size_t bc = 0; bc < 8; ++bc)
      for (std::size_t k = 1; k < 24; ++k) CHECK(std::abs(d[bc * 24 + k] - d[bc * 24]) < 1e-12);
  }
  Fixture f(12, config(4, 2, 4));
  CHECK_THROWS_AS(f.module.efficient_cross_attention(f.ctx, f.in(x), f.in(y)), ShapeError);
}

TEST_CASE("MGFM gate and fuse") {
  Rng rng(13);
  const auto e = random_tensor({2, 4, 5, 5}, rng), i = random_tensor({2, 4, 5, 5}, rng);
  SUBCASE("zero logit conv gives equal gates") {
    Fixture f(14, config(4, 2, 1));
    f.zero(f.module.gate_logit_conv());
    CHECK(f.module.gate(f.ctx, f.in(e), f.in(i)).value() == Tensor<double>({2, 2, 5, 5}, 0.5));
  }
  SUBCASE("random case against the step-by-step oracle; gates positive and normalized") {
    Fixture f(15, config(4, 2, 1));
    auto g = f.module.gate(f.ctx, f.in(e), f.in(i)).value();
    CHECK(max_abs_diff(g, oracle_gate(f, e, i)) < 1e-6);
    for (std::size_t b = 0; b < 2; ++b)
      for (std::size_t k = 0; k < 25; ++k) {
        CHECK(g[b * 50 + k] > 0);
        CHECK(g[b * 50 + 25 + k] > 0);
        CHECK(std::abs(g[b * 50 + k] + g[b * 50 + 25 + k] - 1) < 1e-6);
      }
  }
  SUBCASE("fuse") {
    Tape<double> t(false);
    Tensor<double> ones({2, 2, 5, 5});
    for (std::size_t b = 0; b < 2; ++b)
      for (std::size_t k = 0; k < 25; ++k) ones[b * 50 + k] = 1;
    CHECK(Mgfm::fuse(t.leaf(e), t.leaf(i), t.leaf(ones)).value() == e);
    auto half = Mgfm::fuse(t.leaf(e), t.leaf(i), t.leaf(Tensor<double>({2, 2, 5, 5}, 0.5))).value();
    for (std::size_t k = 0; k < e.size(); ++k) CHECK(half[k] == doctest::Approx((e[k] + i[k]) / 2).epsilon(1e-15));
    Fixture f(16, config(4, 2, 1));
    auto g = f.module.gate(f.ctx, f.in(e), f.in(i)).value();
    CHECK(max_abs_diff(Mgfm::fuse(t.leaf(e), t.leaf(e), t.leaf(g)).value(), e) < 1e-15);
    auto mixed = Mgfm::fuse(t.leaf(e), t.leaf(i), t.leaf(g)).value();
    for (std::size_t k = 0; k < e.size(); ++k) {
      CHECK(mixed[k] >= std::min(e[k], i[k]) - 1e-15);
      CHECK(mixed[k] <= std::max(e[k], i[k]) + 1e-15);
    }
  }
}

TEST_CASE("MGFM enhance and forward") {
  Rng rng(17);
  const auto e = random_tensor({1, 4, 8, 8}, rng), i = random_tensor({1, 4, 8, 8}, rng);
  SUBCASE("zeroed FFN output conv makes enhance the identity") {
    Fixture f(18, config(4, 2, 2));
    f.zero(f.module.ffn_out());
    CHECK(f.module.enhance(f.ctx, f.in(e)).value() == e);
  }
  SUBCASE("enhance keeps the shape") {
    Fixture f(19, config(4, 2, 2));
    CHECK(f.module.enhance(f.ctx, f.in(e)).shape() == e.shape());
  }
  SUBCASE("zeroed output projections and logit conv average the inputs") {
    Fixture f(20, config(4, 2, 2));
    f.zero(f.module.diff_out());
    f.zero(f.module.cross_out());
    f.zero(f.module.ffn_out());
    f.zero(f.module.gate_logit_conv());
    auto out = f.module.forward(f.ctx, f.in(e), f.in(i)).value();
    for (std::size_t k = 0; k < e.size(); ++k) CHECK(out[k] == (e[k] + i[k]) / 2);
  }
  SUBCASE("fused map lies between the attended streams") {
    Fixture f(21, config(4, 2, 2));
    auto ea = f.module.differential_attention(f.ctx, f.in(e), f.in(i));
    auto ia = f.module.efficient_cross_attention(f.ctx, f.in(i), f.in(e));
    auto fo = Mgfm::fuse(ea, ia, f.module.gate(f.ctx, ea, ia)).value();
    for (std::size_t k = 0; k < e.size(); ++k) {
      CHECK(fo[k] >= std::min(ea.value()[k], ia.value()[k]) - 1e-15);
      CHECK(fo[k] <= std::max(ea.value()[k], ia.value()[k]) + 1e-15);
    }
  }
}

TEST_CASE("MGFM gradients") {
  SUBCASE("sum of the enhanced output on a 1x4x8x8 case") {
    Fixture f(22, config(4, 2, 2));
    Rng rng(23);
    auto model = [&f](auto& ctx, const auto& in) { return ops::sum(f.module.forward(ctx, in[0], in[1])); };
    auto rows = check_gradients(f.store, {{"e_rec", random_tensor({1, 4, 8, 8}, rng)}, {"i_rec", random_tensor({1, 4, 8, 8}, rng)}},
                                ModelFn(model), {1e-6, 0, 1}, ExtendedModelFn(model));
    CHECK(rows.size() == f.store.size() + 2);
    for (const auto& r : rows) {
      INFO(r.group);
      CHECK(r.max_rel_error < kGradTolerance);
    }
  }
  SUBCASE("suite case") { CHECK(gradcheck_module("mgfm", 1).passed()); }
}
