#include "eifnet/train.hpp"

#include <cmath>
#include <limits>

#include "eifnet/error.hpp"

namespace eifnet {

NetworkInputs make_inputs(const Tensor<float>& image, const EncodedEvents& events,
                          std::vector<int> labels) {
  if (image.rank() != 3 || events.e_vt.rank() != 3 || image.dim(1) != events.e_vt.dim(1) ||
      image.dim(2) != events.e_vt.dim(2)) {
    throw ShapeError("inputs: image " + shape_str(image.shape()) + " and events " +
                     shape_str(events.e_vt.shape()) + " must share H and W");
  }
  if (!labels.empty() && labels.size() != image.dim(1) * image.dim(2)) {
    throw ShapeError("inputs: label count does not match the image grid");
  }
  auto batch = [](const Tensor<float>& t) {
    Shape s = t.shape();
    s.insert(s.begin(), 1);
    return t.reshaped(s);
  };
  return {batch(image), batch(events.e_vt), batch(events.a_cm), std::move(labels)};
}

NetworkInputs scene_inputs(const NetworkConfig& config, const SyntheticScene& scene,
                           std::optional<std::int64_t> t_end_us, std::optional<std::int64_t> duration_us) {
  const SensorDims dims = scene.params.dims;
  if (dims.height != config.height || dims.width != config.width) {
    throw ConfigError("scene is " + std::to_string(dims.height) + "x" + std::to_string(dims.width) +
                      " but the config expects " + std::to_string(config.height) + "x" +
                      std::to_string(config.width));
  }
  if (scene.class_count > config.classes) {
    throw ConfigError("scene has " + std::to_string(scene.class_count) + " classes but the config has " +
                      std::to_string(config.classes));
  }
  const EventWindow w = window(scene.events, t_end_us.value_or(scene.params.window_us),
                               duration_us.value_or(config.window_us), dims);
  return make_inputs(scene.image, encode(w, config.bins), labels_from_tensor(scene.labels));
}

namespace {

struct Pass {
  double loss;
  Tensor<float> logits;
};

Pass run(const Eifnet& net, ParamStore<float>& params, const NetworkInputs& in, bool train) {
  Tape<float> tape(train);
  Context<float> ctx{tape, params};
  Var<float> logits = net.forward(ctx, ctx.constant(in.image), ctx.constant(in.e_vt), ctx.constant(in.a_cm));
  Pass p{std::numeric_limits<double>::quiet_NaN(), logits.value()};
  if (!in.labels.empty()) {
    Var<float> loss = ops::cross_entropy(logits, in.labels);
    p.loss = loss.value().item();
    if (train) tape.backward(loss);
  }
  return p;
}

}  // namespace

Evaluation evaluate(const Eifnet& net, ParamStore<float>& params, const NetworkInputs& inputs) {
  Pass p = run(net, params, inputs, false);
  Evaluation ev;
  ev.pred = argmax_classes(p.logits);
  ev.logits = std::move(p.logits);
  ev.loss = p.loss;
  if (!inputs.labels.empty()) ev.metrics = segmentation_metrics(ev.pred, inputs.labels, net.config().classes);
  return ev;
}

TrainResult train_toy(const Eifnet& net, ParamStore<float>& params, const NetworkInputs& inputs,
                      const TrainOptions& options) {
  if (options.steps == 0) throw ConfigError("train: steps must be at least 1");
  if (inputs.labels.empty()) throw ConfigError("train: labels are required");
  if (!std::isfinite(options.lr) || options.lr < 0) throw ConfigError("train: lr must be finite and >= 0");
  TrainResult r;
  const auto lr = static_cast<float>(options.lr);
  auto fail = [&](std::size_t step, const std::string& why) {
    r.diverged = true;
    r.diverged_step = step;
    r.message = "diverged at step " + std::to_string(step) + ": " + why;
    r.final_loss = std::numeric_limits<double>::quiet_NaN();
    return r;
  };
  for (std::size_t step = 0; step < options.steps; ++step) {
    params.zero_grad();
    try {
      Pass p = run(net, params, inputs, true);
      if (!std::isfinite(p.loss)) return fail(step, "non-finite loss");
      r.losses.push_back(p.loss);
    } catch (const NumericError& e) {
      return fail(step, e.what());
    }
    for (auto& [name, e] : params) {
      if (!e.trainable) continue;
      auto v = e.value.data();
      auto g = e.grad.data();
      for (std::size_t i = 0; i < v.size(); ++i) v[i] -= lr * g[i];
      if (!e.value.all_finite()) return fail(step, "non-finite parameter " + name);
    }
  }
  try {
    Evaluation ev = evaluate(net, params, inputs);
    if (!std::isfinite(ev.loss)) return fail(options.steps, "non-finite final loss");
    r.final_loss = ev.loss;
    r.metrics = *ev.metrics;
  } catch (const NumericError& e) {
    return fail(options.steps, e.what());
  }
  return r;
}

TrainResult train_toy(const NetworkConfig& config, const NetworkInputs& inputs, const TrainOptions& options) {
  Eifnet net(config);
  ParamStore<float> params = net.make_params<float>();
  return train_toy(net, params, inputs, options);
}

std::vector<ModuleToggles> ablation_combinations() {
  return {{false, false, false}, {true, false, false}, {false, true, false}, {false, false, true},
          {true, true, false},   {true, false, true},  {false, true, true},  {true, true, true}};
}

std::vector<AblationRow> ablate(const NetworkConfig& config, const NetworkInputs& inputs,
                                const TrainOptions& options) {
  std::vector<AblationRow> rows;
  for (const ModuleToggles& m : ablation_combinations()) {
    NetworkConfig c = config;
    c.modules = m;
    rows.push_back({m, train_toy(c, inputs, options)});
  }
  return rows;
}

}  // namespace eifnet
