#include <doctest.h>

#include <cmath>
#include <cstring>

#include "eifnet/config.hpp"
#include "eifnet/gradcheck.hpp"
#include "eifnet/gradcheck_suite.hpp"
#include "eifnet/metrics.hpp"
#include "eifnet/network.hpp"
#include "eifnet/train.hpp"
#include "support.hpp"

using namespace eifnet;
using testing::idx4;
using testing::max_abs_diff;
using testing::random_tensor;

namespace {

struct Inputs {
  Tensor<double> image, e_vt, a_cm;
};

Inputs random_inputs(const NetworkConfig& c, std::size_t batch, Rng& rng) {
  Inputs in{random_tensor({batch, c.image_channels, c.height, c.width}, rng, 0, 1),
            random_tensor({batch, c.bins, c.height, c.width}, rng, -1, 1),
            random_tensor({batch, c.bins, c.height, c.width}, rng, 0, 2)};
  for (std::size_t k = 0; k < in.e_vt.size(); ++k) in.e_vt[k] = std::clamp(in.e_vt[k], -in.a_cm[k], in.a_cm[k]);
  return in;
}

Tensor<double> run(const Eifnet& net, ParamStore<double>& store, const Inputs& in) {
  Tape<double> tape(false);
  Context<double> ctx{tape, store};
  return net.forward(ctx, ctx.constant(in.image), ctx.constant(in.e_vt), ctx.constant(in.a_cm)).value();
}

double oracle_ce(const Tensor<double>& logits, const std::vector<int>& labels, int ignore = -1) {
  const Shape& s = logits.shape();
  double total = 0;
  std::size_t n = 0, px = 0;
  for (std::size_t b = 0; b < s[0]; ++b)
    for (std::size_t y = 0; y < s[2]; ++y)
      for (std::size_t x = 0; x < s[3]; ++x, ++px) {
        if (labels[px] == ignore) continue;
        double z = 0;
        for (std::size_t k = 0; k < s[1]; ++k) z += std::exp(logits[idx4(s, b, k, y, x)]);
        total += std::log(z) - logits[idx4(s, b, std::size_t(labels[px]), y, x)];
        ++n;
      }
  return total / double(n);
}

double ce(const Tensor<double>& logits, const std::vector<int>& labels, int ignore = -1) {
  Tape<double> t(false);
  return ops::cross_entropy(t.leaf(logits), labels, ignore).value().item();
}

}  // namespace

TEST_CASE("network config") {
  NetworkConfig c;
  CHECK_NOTHROW(c.validate());
  CHECK(c.event_channels() == 3);
  CHECK(c.stage_height(0) == 16);
  CHECK(c.stage_height(3) == 2);
  CHECK_NOTHROW(minimal_config().validate());
  CHECK(minimal_config().height == 32);
  CHECK(minimal_config().classes == 2);

  auto bad = c;
  bad.height = 48;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = c;
  bad.classes = 1;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = c;
  bad.heads = {1, 3, 3, 4};
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = c;
  bad.reduction = {2, 2, 4, 1};  // the 4x4 stage-3 grid takes R = 4
  CHECK_NOTHROW(bad.validate());
  bad.reduction = {2, 2, 2, 4};
  CHECK_THROWS_AS(bad.validate(), ConfigError);

  SUBCASE("JSON") {
    CHECK(config_from_json(config_to_json(c)) == c);
    CHECK(config_from_json("{}") == c);
    auto j = config_from_json(R"({"height": 32, "width": 96, "image_widths": [4, 8, 12, 16], "heads": 2,
                                  "reduction": [1, 1, 1, 1], "modules": {"marm": false},
                                  "encoding": {"bins": 5, "window_us": 1000}})");
    CHECK(j.width == 96);
    CHECK(j.event_widths == StageSizes{2, 4, 6, 8});
    CHECK(j.heads == StageSizes{2, 2, 2, 2});
    CHECK(j.modules == ModuleToggles{true, false, true});
    CHECK(j.bins == 5);
    CHECK(j.window_us == 1000);
    CHECK(config_from_json(R"({"image_widths": [5, 7, 9, 11], "heads": 1})").event_widths == StageSizes{3, 4, 5, 6});
    CHECK_THROWS_AS(config_from_json(R"({"hieght": 64})"), ConfigError);
    CHECK_THROWS_AS(config_from_json(R"({"modules": {"aefmr": true}})"), ConfigError);
    CHECK_THROWS_AS(config_from_json(R"({"encoding": {"bin": 3}})"), ConfigError);
    CHECK_THROWS_AS(config_from_json(R"({"event_channels": 4})"), ConfigError);
    CHECK_THROWS_AS(config_from_json(R"({"heads": [1, 2]})"), ConfigError);
    CHECK_THROWS_AS(config_from_json(R"({"height": -32})"), ConfigError);
    CHECK_THROWS_AS(config_from_json(R"({"height": 60})"), ConfigError);
    CHECK_THROWS_AS(config_from_json("{"), ConfigError);
    CHECK_THROWS_AS(config_from_json("[]"), ConfigError);
    auto dir = testing::scratch_dir("config");
    CHECK_THROWS_AS(load_config(dir / "missing.json"), ConfigError);
  }
}

TEST_CASE("stub encoder") {
  const StubEncoder enc("enc", 3, {4, 6, 8, 10});
  ParamStore<double> store;
  Rng rng(1);
  enc.init(store, rng);
  Tape<double> tape(false);
  Context<double> ctx{tape, store};
  SUBCASE("stage geometry for 64x64 and 32x96") {
    auto st = enc.forward(ctx, ctx.constant(random_tensor({2, 3, 64, 64}, rng)));
    CHECK(st[0].shape() == Shape{2, 4, 16, 16});
    CHECK(st[1].shape() == Shape{2, 6, 8, 8});
    CHECK(st[2].shape() == Shape{2, 8, 4, 4});
    CHECK(st[3].shape() == Shape{2, 10, 2, 2});
    auto wide = enc.forward(ctx, ctx.constant(random_tensor({1, 3, 32, 96}, rng)));
    CHECK(wide[0].shape() == Shape{1, 4, 8, 24});
    CHECK(wide[3].shape() == Shape{1, 10, 1, 3});
  }
  SUBCASE("zero input gives zero stages") {
    auto st = enc.forward(ctx, ctx.constant(Tensor<double>({1, 3, 32, 32})));
    for (const auto& s : st)
      for (auto v : s.value().data()) CHECK(v == 0.0);
  }
  CHECK_THROWS_AS(enc.forward(ctx, ctx.constant(Tensor<double>({1, 3, 48, 32}))), ShapeError);

  SUBCASE("gradient check on a 1x3x32x32 case") {
    randomize_for_gradcheck(store, rng);
    const auto w = random_tensor({1, 4 * 64 + 6 * 16 + 8 * 4 + 10}, rng);
    auto model = [&](auto& c, const auto& in) {
      using T = typename std::remove_reference_t<decltype(c)>::value_type;
      auto st = enc.forward(c, in[0]);
      std::vector<Var<T>> flat;
      for (const auto& s : st) flat.push_back(ops::reshape(s, {1, s.value().size()}));
      return ops::weighted_sum(ops::concat(flat, 1), w.cast<T>());
    };
    auto rows = check_gradients(store, {{"x", random_tensor({1, 3, 32, 32}, rng)}}, ModelFn(model), {1e-6, 24, 1},
                                ExtendedModelFn(model));
    for (const auto& r : rows) {
      INFO(r.group);
      CHECK(r.max_rel_error < kGradTolerance);
    }
    CHECK(gradcheck_module("encoder", 1).passed());
  }
}

TEST_CASE("event projection") {
  auto cfg = minimal_config();
  Rng rng(2);
  SUBCASE("identity and zero weights when widths match") {
    cfg.event_widths = cfg.image_widths;
    const Eifnet net(cfg);
    auto store = net.make_params<double>();
    Tape<double> tape(false);
    Context<double> ctx{tape, store};
    const auto x = random_tensor({1, 4, 8, 8}, rng);
    auto& w = store.value(net.event_projection(0).weight());
    w = Tensor<double>(w.shape());
    CHECK(net.project_event(ctx, ctx.constant(x), 0).value() == Tensor<double>(x.shape()));
    for (std::size_t c = 0; c < 4; ++c) w[c * 4 + c] = 1;
    CHECK(net.project_event(ctx, ctx.constant(x), 0).value() == x);
  }
  SUBCASE("random weights against a per-pixel matmul") {
    const Eifnet net(cfg);
    auto store = net.make_params<double>();
    randomize_for_gradcheck(store, rng);
    Tape<double> tape(false);
    Context<double> ctx{tape, store};
    const auto x = random_tensor({2, 4, 4, 4}, rng);  // stage 2: C_e 4 -> C_i 8
    auto y = net.project_event(ctx, ctx.constant(x), 1).value();
    const auto& w = store.value(net.event_projection(1).weight());
    const auto& b = store.value(net.event_projection(1).bias());
    REQUIRE(y.shape() == Shape{2, 8, 4, 4});
    double worst = 0;
    for (std::size_t n = 0; n < 2; ++n)
      for (std::size_t o = 0; o < 8; ++o)
        for (std::size_t p = 0; p < 16; ++p) {
          double acc = b[o];
          for (std::size_t c = 0; c < 4; ++c) acc += w[o * 4 + c] * x[(n * 4 + c) * 16 + p];
          worst = std::max(worst, std::abs(acc - y[(n * 8 + o) * 16 + p]));
        }
    CHECK(worst < 1e-12);
    CHECK_THROWS(net.project_event(ctx, ctx.constant(x), 4));
  }
}

TEST_CASE("decoder") {
  const StageSizes widths{4, 6, 6, 8};
  const Decoder dec("dec", widths, 6, 3);
  ParamStore<double> store;
  Rng rng(3);
  dec.init(store, rng);
  Tape<double> tape(false);
  Context<double> ctx{tape, store};
  StageFeatures<double> st;
  for (std::size_t s = 0; s < kStages; ++s) st[s] = ctx.constant(random_tensor({1, widths[s], 8u >> s, 8u >> s}, rng));
  SUBCASE("zero weights with a bias on one class give a constant argmax") {
    for (auto& [name, e] : store)
      if (e.kind == ParamKind::weight)
        for (auto& v : e.value.data()) v = 0;
    store.value(dec.classifier().bias()) = Tensor<double>({3}, {0.0, 0.0, 0.7});
    auto logits = dec.forward(ctx, st, 32, 32).value();
    CHECK(logits.shape() == Shape{1, 3, 32, 32});
    for (std::size_t k = 0; k < 3; ++k)
      for (std::size_t p = 0; p < 1024; ++p) CHECK(logits[k * 1024 + p] == (k == 2 ? 0.7 : 0.0));
    for (int id : argmax_classes(logits)) CHECK(id == 2);
  }
  SUBCASE("output matches the requested size") {
    CHECK(dec.forward(ctx, st, 32, 40).shape() == Shape{1, 3, 32, 40});
  }
  SUBCASE("gradients") { CHECK(gradcheck_module("decoder", 1).passed()); }
}

TEST_CASE("full network forward") {
  Rng rng(4);
  const auto cfg = minimal_config();
  const Eifnet net(cfg);
  auto store = net.make_params<double>();
  const auto in = random_inputs(cfg, 1, rng);
  SUBCASE("logit shape, stage shapes and bitwise determinism") {
    auto a = run(net, store, in);
    CHECK(a.shape() == Shape{1, 2, 32, 32});
    auto store2 = Eifnet(cfg).make_params<double>();
    auto b = run(net, store2, in);
    CHECK(std::memcmp(a.data().data(), b.data().data(), a.size() * sizeof(double)) == 0);
    Tape<double> tape(false);
    Context<double> ctx{tape, store};
    auto st = net.stage_features(ctx, ctx.constant(in.image), ctx.constant(in.e_vt), ctx.constant(in.a_cm));
    for (std::size_t s = 0; s < kStages; ++s)
      CHECK(st[s].shape() == Shape{1, cfg.image_widths[s], cfg.stage_height(s), cfg.stage_width(s)});
  }
  SUBCASE("default config at 64x64 and a non-square grid") {
    NetworkConfig big;
    auto bs = Eifnet(big).make_params<float>();
    Tape<float> tape(false);
    Context<float> ctx{tape, bs};
    auto bi = random_inputs(big, 1, rng);
    auto out = Eifnet(big).forward(ctx, ctx.constant(bi.image.cast<float>()), ctx.constant(bi.e_vt.cast<float>()),
                                   ctx.constant(bi.a_cm.cast<float>()));
    CHECK(out.shape() == Shape{1, 3, 64, 64});
    auto wide = cfg;
    wide.width = 64;
    wide.height = 32;
    const Eifnet wn(wide);
    auto ws = wn.make_params<double>();
    CHECK(run(wn, ws, random_inputs(wide, 2, rng)).shape() == Shape{2, 2, 32, 64});
  }
  SUBCASE("input shape errors") {
    auto bad = in;
    bad.e_vt = Tensor<double>({1, 2, 32, 32});
    CHECK_THROWS_AS(run(net, store, bad), ShapeError);
    bad = in;
    bad.image = Tensor<double>({1, 3, 32, 64});
    CHECK_THROWS_AS(run(net, store, bad), ShapeError);
  }
  SUBCASE("toggled-off modules create no parameters and leave other modules untouched") {
    auto off = cfg;
    off.modules = {false, false, false};
    auto s_off = Eifnet(off).make_params<double>();
    for (const auto& [name, e] : s_off) {
      CHECK(name.rfind("aefrm", 0) != 0);
      CHECK(name.rfind("marm", 0) != 0);
      CHECK(name.rfind("mgfm", 0) != 0);
      CHECK(store.value(name) == e.value);
    }
    CHECK(s_off.size() < store.size());
  }
}

TEST_CASE("ablation wiring") {
  Rng rng(5);
  auto cfg = minimal_config();
  const auto in = random_inputs(cfg, 1, rng);
  for (const auto& m : ablation_combinations()) {
    cfg.modules = m;
    const Eifnet net(cfg);
    auto store = net.make_params<double>();
    randomize_for_gradcheck(store, rng);
    auto out = run(net, store, in);
    CHECK(out.shape() == Shape{1, 2, 32, 32});
    CHECK(out.all_finite());
    CHECK(std::isfinite(ce(out, std::vector<int>(1024, 1))));
  }
  SUBCASE("all off: stages are the mean of projected event features and image features") {
    cfg.modules = {false, false, false};
    const Eifnet net(cfg);
    auto store = net.make_params<double>();
    randomize_for_gradcheck(store, rng);
    Tape<double> tape(false);
    Context<double> ctx{tape, store};
    auto st = net.stage_features(ctx, ctx.constant(in.image), ctx.constant(in.e_vt), ctx.constant(in.a_cm));
    auto ev = net.event_encoder().forward(ctx, ctx.constant(in.e_vt));
    auto im = net.image_encoder().forward(ctx, ctx.constant(in.image));
    for (std::size_t s = 0; s < kStages; ++s) {
      auto pe = net.project_event(ctx, ev[s], s).value();
      const auto& iv = im[s].value();
      for (std::size_t k = 0; k < pe.size(); ++k) CHECK(st[s].value()[k] == doctest::Approx((pe[k] + iv[k]) / 2).epsilon(1e-14));
    }
  }
  SUBCASE("AEFRM on with zeroed mask conv equals AEFRM off") {
    cfg.modules = {true, true, true};
    const Eifnet on(cfg);
    auto s_on = on.make_params<double>();
    for (auto* n : {"aefrm.conv_m.weight", "aefrm.conv_m.bias"})
      for (auto& v : s_on.value(n).data()) v = 0;
    cfg.modules.aefrm = false;
    const Eifnet off(cfg);
    auto s_off = off.make_params<double>();
    CHECK(run(on, s_on, in) == run(off, s_off, in));
  }
  SUBCASE("MARM at its gamma = 0 initialization equals MARM off") {
    cfg.modules = {true, true, true};
    const Eifnet on(cfg);
    auto s_on = on.make_params<double>();
    cfg.modules.marm = false;
    const Eifnet off(cfg);
    auto s_off = off.make_params<double>();
    CHECK(run(on, s_on, in) == run(off, s_off, in));
  }
}

TEST_CASE("full network gradients") { CHECK(gradcheck_module("network", 1).passed()); }

TEST_CASE("cross-entropy loss") {
  CHECK(ce(Tensor<double>({1, 2, 2, 2}), {0, 1, 1, 0}) == doctest::Approx(std::log(2.0)).epsilon(1e-15));
  Tensor<double> margin({1, 2, 1, 2}, {20, 0, 0, 20});
  CHECK(ce(margin, {0, 1}) < 1e-8);
  CHECK(ce(margin, {0, 1}) > 0);
  Rng rng(6);
  for (int rep = 0; rep < 20; ++rep) {
    const auto logits = random_tensor({2, 4, 3, 5}, rng, -6, 6);
    std::vector<int> labels(30);
    for (auto& l : labels) l = int(rng.uniform_int(0, 3));
    CHECK(std::abs(ce(logits, labels) - oracle_ce(logits, labels)) < 1e-6);
    labels[0] = labels[7] = 3;
    CHECK(std::abs(ce(logits, labels, 3) - oracle_ce(logits, labels, 3)) < 1e-6);
  }
  CHECK_THROWS_AS(ce(Tensor<double>({1, 2, 1, 2}), {1, 1}, 1), ShapeError);
  CHECK_THROWS_AS(ce(Tensor<double>({1, 2, 1, 2}), {0, 2}), ShapeError);
  CHECK_THROWS_AS(ce(Tensor<double>({1, 2, 1, 2}), {0}), ShapeError);
}

TEST_CASE("segmentation metrics") {
  const std::vector<int> gt{0, 0, 1, 1};
  auto same = segmentation_metrics(gt, gt, 2);
  CHECK(same.miou == 1.0);
  CHECK(same.pa == 1.0);
  const std::vector<int> all_a{0, 0, 0, 0};
  auto half = segmentation_metrics(all_a, gt, 2);
  CHECK(half.pa == 0.5);
  CHECK(half.iou[0] == 0.5);
  CHECK(half.iou[1] == 0.0);
  CHECK(half.miou == 0.25);
  auto absent = segmentation_metrics(gt, gt, 3);
  CHECK(std::isnan(absent.iou[2]));
  CHECK(absent.miou == 1.0);

  for (std::uint64_t seed = 1; seed <= 100; ++seed) {
    Rng rng(seed);
    const std::size_t K = std::size_t(rng.uniform_int(2, 6)), n = std::size_t(rng.uniform_int(1, 200));
    std::vector<int> p(n), g(n);
    for (std::size_t i = 0; i < n; ++i) {
      p[i] = int(rng.uniform_int(0, std::int64_t(K) - 1));
      g[i] = rng.uniform() < 0.5 ? p[i] : int(rng.uniform_int(0, std::int64_t(K) - 1));
    }
    std::vector<std::vector<double>> cm(K, std::vector<double>(K, 0));
    for (std::size_t i = 0; i < n; ++i) cm[std::size_t(g[i])][std::size_t(p[i])] += 1;
    double diag = 0, sum_iou = 0;
    std::size_t present = 0;
    for (std::size_t k = 0; k < K; ++k) {
      diag += cm[k][k];
      double row = 0, col = 0;
      for (std::size_t j = 0; j < K; ++j) row += cm[k][j], col += cm[j][k];
      const double uni = row + col - cm[k][k];
      if (uni > 0) sum_iou += cm[k][k] / uni, ++present;
    }
    auto m = segmentation_metrics(p, g, K);
    CHECK(std::abs(m.pa - diag / double(n)) < 1e-9);
    CHECK(std::abs(m.miou - sum_iou / double(present)) < 1e-9);
  }
  CHECK_THROWS(segmentation_metrics(std::vector<int>{0}, std::vector<int>{0, 1}, 2));
}

TEST_CASE("argmax and label tensors") {
  Tensor<double> logits({1, 3, 1, 3}, {1, 5, 2, 1, 5, 7, 0, 1, 7});
  CHECK(argmax_classes(logits) == std::vector<int>{0, 0, 1});  // ties go to the first class
  auto t = labels_to_tensor({0, 2, 1, 1}, {2, 2});
  CHECK(labels_from_tensor(t) == std::vector<int>{0, 2, 1, 1});
  CHECK_THROWS_AS(labels_from_tensor(Tensor<float>({2}, {0.5f, 1.0f})), FormatError);
  CHECK(labels_from_tensor(Tensor<float>({2}, {-1.0f, 1.0f})) == std::vector<int>{-1, 1});  // ignore ids pass through
}

TEST_CASE("toy trainer") {
  SynthParams sp;
  sp.dims = {32, 32};
  sp.seed = 3;
  const auto scene = synth_scene(sp);
  auto cfg = minimal_config();
  cfg.classes = 3;
  const auto in = scene_inputs(cfg, scene);
  CHECK(in.image.shape() == Shape{1, 3, 32, 32});
  CHECK(in.e_vt.shape() == Shape{1, 3, 32, 32});
  CHECK(in.labels.size() == 1024);

  SUBCASE("lr = 0 keeps the loss constant") {
    auto r = train_toy(cfg, in, {5, 0.0});
    REQUIRE(r.losses.size() == 5);
    for (double l : r.losses) CHECK(l == r.losses[0]);
    CHECK(r.final_loss == doctest::Approx(r.losses[0]).epsilon(1e-12));
  }
  SUBCASE("seed-stable and decreasing") {
    auto a = train_toy(cfg, in, {20, 0.05});
    auto b = train_toy(cfg, in, {20, 0.05});
    CHECK(a.losses == b.losses);
    CHECK(a.final_loss == b.final_loss);
    CHECK_FALSE(a.diverged);
    CHECK(a.final_loss < a.losses[0]);
    auto other = cfg;
    other.seed = 2;
    CHECK(train_toy(other, in, {3, 0.05}).losses != a.losses);
  }
  SUBCASE("divergence is reported with the step index") {
    auto r = train_toy(cfg, in, {50, 1e30});
    CHECK(r.diverged);
    CHECK(r.diverged_step < 50);
    CHECK(r.message.find("diverged at step") != std::string::npos);
    CHECK(std::isnan(r.final_loss));
  }
  SUBCASE("argument errors") {
    CHECK_THROWS_AS(train_toy(cfg, in, {0, 0.05}), ConfigError);
    CHECK_THROWS_AS(train_toy(cfg, in, {1, -1.0}), ConfigError);
    auto unlabeled = in;
    unlabeled.labels.clear();
    CHECK_THROWS_AS(train_toy(cfg, unlabeled, {1, 0.05}), ConfigError);
    auto two = cfg;
    two.classes = 2;
    CHECK_THROWS_AS(scene_inputs(two, scene), ConfigError);
    CHECK_THROWS_AS(scene_inputs(NetworkConfig{}, scene), ConfigError);
  }
  SUBCASE("ablation runs all combinations") {
    auto rows = ablate(cfg, in, {3, 0.05});
    REQUIRE(rows.size() == 8);
    CHECK(rows.front().modules == ModuleToggles{false, false, false});
    CHECK(rows.back().modules == ModuleToggles{true, true, true});
    for (const auto& r : rows) {
      CHECK_FALSE(r.result.diverged);
      CHECK(std::isfinite(r.result.final_loss));
    }
    CHECK(rows.back().result.losses == train_toy(cfg, in, {3, 0.05}).losses);
  }
  SUBCASE("evaluate without labels") {
    const Eifnet net(cfg);
    auto params = net.make_params<float>();
    auto unlabeled = in;
    unlabeled.labels.clear();
    auto ev = evaluate(net, params, unlabeled);
    CHECK(std::isnan(ev.loss));
    CHECK_FALSE(ev.metrics.has_value());
    CHECK(ev.pred.size() == 1024);
  }
}
