#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "eifnet/autodiff.hpp"
#include "eifnet/rng.hpp"

namespace eifnet {

struct GradCheckOptions {
  double epsilon = 1e-6;
  /// Coordinates probed per tensor; 0 probes every coordinate.
  std::size_t max_coords = 0;
  std::uint64_t seed = 0;
  /// Test hook forwarded to Tape::inject_fault for the analytic pass.
  double fault = 0.0;
};

struct GradCheckRow {
  std::string group;
  std::size_t coords = 0;
  double max_rel_error = 0.0;
};

struct NamedTensor {
  std::string name;
  Tensor<double> value;
};

/// |a - n| / max(|a|, |n|, 1e-8)
double relative_error(double analytic, double numeric);

using ScalarFn = std::function<Var<double>(Tape<double>&, Var<double>)>;

/// Max relative error between the tape gradient of f at `point` and central
/// differences (f(x+eps e) - f(x-eps e)) / (2 eps), over every coordinate.
double finite_difference_check(const ScalarFn& f, const Tensor<double>& point,
                               double epsilon = 1e-6);

template <typename T>
using ModelFnT = std::function<Var<T>(Context<T>&, const std::vector<Var<T>>& inputs)>;
using ModelFn = ModelFnT<double>;
using ExtendedModelFn = ModelFnT<long double>;

/// One row per trainable parameter tensor and per input tensor. Analytic
/// gradients come from `f` in double. When `reference` is set (the same
/// model instantiated in long double), the central differences are
/// evaluated with it, which keeps rounding noise far below the tolerance on
/// deep compositions; otherwise `f` is used for both.
std::vector<GradCheckRow> check_gradients(ParamStore<double>& params,
                                          std::vector<NamedTensor> inputs, const ModelFn& f,
                                          const GradCheckOptions& options = {},
                                          const ExtendedModelFn& reference = {});

/// Moves every parameter to a generic point: weights keep their (random)
/// values, biases and scalars are redrawn, norm scales land in [0.5, 1.5] and
/// norm shifts are kept at least 0.1 away from zero.
void randomize_for_gradcheck(ParamStore<double>& params, Rng& rng);

}  // namespace eifnet
