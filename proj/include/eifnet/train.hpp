#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "eifnet/encoding.hpp"
#include "eifnet/metrics.hpp"
#include "eifnet/network.hpp"
#include "eifnet/synth.hpp"

namespace eifnet {

/// One single-sample batch: image [1,3,H,W], events [1,bins,H,W], labels H*W.
struct NetworkInputs {
  Tensor<float> image;
  Tensor<float> e_vt;
  Tensor<float> a_cm;
  std::vector<int> labels;
};

/// Batches an image [3,H,W] with encoded events [bins,H,W].
NetworkInputs make_inputs(const Tensor<float>& image, const EncodedEvents& events,
                          std::vector<int> labels);

/// Encodes the scene's events over [t_end - duration, t_end). Defaults: the
/// end of the scene window and the config's encoding window.
NetworkInputs scene_inputs(const NetworkConfig& config, const SyntheticScene& scene,
                           std::optional<std::int64_t> t_end_us = std::nullopt,
                           std::optional<std::int64_t> duration_us = std::nullopt);

struct Evaluation {
  Tensor<float> logits;
  std::vector<int> pred;
  double loss = 0.0;  // NaN when no labels were given
  std::optional<SegMetrics> metrics;
};

/// Inference pass without gradient recording.
Evaluation evaluate(const Eifnet& net, ParamStore<float>& params, const NetworkInputs& inputs);

struct TrainOptions {
  std::size_t steps = 200;
  double lr = 0.05;
};

struct TrainResult {
  /// Loss at each step, measured before that step's update.
  std::vector<double> losses;
  /// Loss and metrics after the last update.
  double final_loss = 0.0;
  SegMetrics metrics;
  bool diverged = false;
  std::size_t diverged_step = 0;
  std::string message;
};

/// Plain gradient descent on a single sample. Divergence stops the run and
/// is reported through `diverged` with the failing step index.
TrainResult train_toy(const Eifnet& net, ParamStore<float>& params, const NetworkInputs& inputs,
                      const TrainOptions& options);
TrainResult train_toy(const NetworkConfig& config, const NetworkInputs& inputs, const TrainOptions& options);

struct AblationRow {
  ModuleToggles modules;
  TrainResult result;
};

/// The 8 toggle combinations, all-off baseline first and full model last.
std::vector<ModuleToggles> ablation_combinations();

/// Trains every combination from the same seed and inputs.
std::vector<AblationRow> ablate(const NetworkConfig& config, const NetworkInputs& inputs,
                                const TrainOptions& options);

}  // namespace eifnet
