#include "eifnet/gradcheck_suite.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <map>
#include <memory>
#include <type_traits>

#include "eifnet/error.hpp"
#include "eifnet/network.hpp"

namespace eifnet {

double ModuleGradReport::max_error() const {
  double worst = 0.0;
  for (const auto& r : rows) worst = std::max(worst, r.max_rel_error);
  return worst;
}

std::size_t ModuleGradReport::coords() const {
  std::size_t n = 0;
  for (const auto& r : rows) n += r.coords;
  return n;
}

const std::vector<std::string>& gradcheck_modules() {
  static const std::vector<std::string> names{"aefrm", "marm", "mgfm", "encoder", "decoder", "network"};
  return names;
}

namespace {

using D = double;

Tensor<D> normal_tensor(Shape shape, Rng& rng, double scale = 1.0) {
  Tensor<D> t(std::move(shape));
  for (auto& v : t.data()) v = scale * rng.normal();
  return t;
}

// Random projection of the output. The weights are drawn at the first call
// and shared by both precisions.
class Projection {
 public:
  explicit Projection(std::uint64_t seed) : rng_(seed) {}
  template <typename U>
  Var<U> operator()(Var<U> out) {
    if (weights_.shape() != out.shape()) weights_ = normal_tensor(out.shape(), rng_);
    return ops::weighted_sum(out, weights_.template cast<U>());
  }

 private:
  Rng rng_;
  Tensor<D> weights_;
};

struct Case {
  ParamStore<D> params;
  std::vector<NamedTensor> inputs;
  ModelFn fn;
  ExtendedModelFn reference;
  std::size_t max_coords = 0;

  template <typename F>
  void set_model(F model) {
    fn = model;
    reference = model;
  }
};

template <typename Ctx>
using ScalarOf = typename std::decay_t<Ctx>::value_type;

// Keeps descriptors alive for the lifetime of the model closure.
template <typename M>
std::shared_ptr<M> keep(M m) {
  return std::make_shared<M>(std::move(m));
}

Case aefrm_case(Rng& rng, std::shared_ptr<Projection> proj) {
  auto mod = keep(Aefrm("aefrm", 4));
  Case c;
  mod->init(c.params, rng);
  Tensor<D> a = normal_tensor({1, 2, 16, 16}, rng);
  for (auto& v : a.data()) v = std::abs(v);
  c.inputs = {{"a_cm", a}, {"e_vt", normal_tensor({1, 2, 16, 16}, rng)}};
  c.set_model([mod, proj](auto& ctx, const auto& in) {
    return (*proj)(mod->forward(ctx, in[0], in[1]));
  });
  return c;
}

Case marm_case(Rng& rng, std::shared_ptr<Projection> proj) {
  auto mod = keep(Marm("marm", 3, 5));
  Case c;
  mod->init(c.params, rng);
  c.inputs = {{"e", normal_tensor({2, 3, 6, 6}, rng)}, {"i", normal_tensor({2, 5, 6, 6}, rng)}};
  c.set_model([mod, proj](auto& ctx, const auto& in) {
    auto [e, i] = mod->recalibrate(ctx, in[0], in[1]);
    return (*proj)(ops::concat<ScalarOf<decltype(ctx)>>({e, i}, 1));
  });
  return c;
}

Case mgfm_case(Rng& rng, std::shared_ptr<Projection> proj) {
  MgfmConfig cfg;
  cfg.channels = 4;
  cfg.heads = 2;
  cfg.reduction = 2;
  auto mod = keep(Mgfm("mgfm", cfg));
  Case c;
  mod->init(c.params, rng);
  // batch of 3: the channel gate normalizes one value per sample
  c.inputs = {{"e_rec", normal_tensor({3, 4, 8, 8}, rng)}, {"i_rec", normal_tensor({3, 4, 8, 8}, rng)}};
  c.max_coords = 24;
  c.set_model([mod, proj](auto& ctx, const auto& in) {
    return (*proj)(mod->forward(ctx, in[0], in[1]));
  });
  return c;
}

Case encoder_case(Rng& rng, std::shared_ptr<Projection> proj) {
  auto mod = keep(StubEncoder("enc", 3, {4, 4, 6, 6}));
  Case c;
  mod->init(c.params, rng);
  c.inputs = {{"x", normal_tensor({2, 3, 32, 32}, rng)}};
  c.set_model([mod, proj](auto& ctx, const auto& in) {
    auto f = mod->forward(ctx, in[0]);
    std::vector<Var<ScalarOf<decltype(ctx)>>> flat;
    for (auto& v : f) flat.push_back(ops::reshape(v, {shape_numel(v.shape())}));
    return (*proj)(ops::concat(flat, 0));
  });
  c.max_coords = 24;
  return c;
}

Case decoder_case(Rng& rng, std::shared_ptr<Projection> proj) {
  const StageSizes widths{4, 6, 6, 8};
  auto mod = keep(Decoder("dec", widths, 6, 2));
  Case c;
  mod->init(c.params, rng);
  for (std::size_t s = 0; s < kStages; ++s) {
    const std::size_t e = 8 >> s;
    c.inputs.push_back({"m" + std::to_string(s + 1), normal_tensor({2, widths[s], e, e}, rng)});
  }
  c.set_model([mod, proj](auto& ctx, const auto& in) {
    StageFeatures<ScalarOf<decltype(ctx)>> st{in[0], in[1], in[2], in[3]};
    return (*proj)(mod->forward(ctx, st, 32, 32));
  });
  c.max_coords = 24;
  return c;
}

Case network_case(Rng& rng, std::shared_ptr<Projection> proj) {
  const NetworkConfig cfg = minimal_config();
  auto net = keep(Eifnet(cfg));
  Case c;
  net->init(c.params, rng);
  // The last stage is 1x1 here, so with one sample the decoder batchnorm
  // would erase it; two samples keep every path observable.
  const Shape ev{2, cfg.bins, cfg.height, cfg.width};
  Tensor<D> a = normal_tensor(ev, rng);
  for (auto& v : a.data()) v = std::abs(v);
  Tensor<D> e = normal_tensor(ev, rng);
  for (std::size_t i = 0; i < e.size(); ++i) e[i] = std::clamp(e[i], -a[i], a[i]);
  c.inputs = {{"image", normal_tensor({2, cfg.image_channels, cfg.height, cfg.width}, rng)},
              {"e_vt", e},
              {"a_cm", a}};
  c.set_model([net, proj](auto& ctx, const auto& in) {
    return (*proj)(net->forward(ctx, in[0], in[1], in[2]));
  });
  c.max_coords = 6;
  return c;
}

}  // namespace

ModuleGradReport gradcheck_module(const std::string& module, std::uint64_t seed, double fault) {
  const std::map<std::string, std::function<Case(Rng&, std::shared_ptr<Projection>)>> builders{
      {"aefrm", aefrm_case},     {"marm", marm_case},   {"mgfm", mgfm_case},
      {"encoder", encoder_case}, {"decoder", decoder_case}, {"network", network_case}};
  auto it = builders.find(module);
  if (it == builders.end()) throw ConfigError("unknown gradcheck module: " + module);
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng(seed);
  auto proj = std::make_shared<Projection>(seed ^ 0x9e3779b97f4a7c15ULL);
  Case c = it->second(rng, proj);
  randomize_for_gradcheck(c.params, rng);
  GradCheckOptions opt;
  opt.max_coords = c.max_coords;
  opt.seed = seed;
  opt.fault = fault;
  ModuleGradReport rep;
  rep.module = module;
  rep.rows = check_gradients(c.params, std::move(c.inputs), c.fn, opt, c.reference);
  rep.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return rep;
}

}  // namespace eifnet
