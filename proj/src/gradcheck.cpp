#include "eifnet/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace eifnet {

double relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
  return std::abs(analytic - numeric) / denom;
}

double finite_difference_check(const ScalarFn& f, const Tensor<double>& point, double epsilon) {
  Tensor<double> analytic;
  {
    Tape<double> tape;
    Var<double> x = tape.leaf(point, true);
    Var<double> out = f(tape, x);
    tape.backward(out);
    analytic = tape.grad(x);
  }
  auto eval = [&](const Tensor<double>& at) {
    Tape<double> tape(false);
    return f(tape, tape.leaf(at)).value().item();
  };
  double worst = 0.0;
  Tensor<double> probe = point;
  for (std::size_t i = 0; i < point.size(); ++i) {
    probe[i] = point[i] + epsilon;
    const double up = eval(probe);
    probe[i] = point[i] - epsilon;
    const double down = eval(probe);
    probe[i] = point[i];
    worst = std::max(worst, relative_error(analytic[i], (up - down) / (2 * epsilon)));
  }
  return worst;
}

namespace {

std::vector<std::size_t> pick_coords(std::size_t n, std::size_t max_coords, Rng& rng) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  if (max_coords == 0 || n <= max_coords) return idx;
  // partial Fisher-Yates
  for (std::size_t i = 0; i < max_coords; ++i) {
    const auto j = static_cast<std::size_t>(rng.uniform_int(static_cast<std::int64_t>(i),
                                                            static_cast<std::int64_t>(n - 1)));
    std::swap(idx[i], idx[j]);
  }
  idx.resize(max_coords);
  std::sort(idx.begin(), idx.end());
  return idx;
}

// Central differences over the sampled coordinates of every parameter and input.
template <typename U>
std::vector<GradCheckRow> numeric_rows(ParamStore<U> params, std::vector<Tensor<U>> inputs,
                                       const ModelFnT<U>& f, const std::vector<Tensor<double>>& analytic,
                                       const std::vector<std::string>& names, const GradCheckOptions& options) {
  auto eval = [&]() {
    Tape<U> tape(false);
    Context<U> ctx{tape, params};
    std::vector<Var<U>> vars;
    for (const auto& in : inputs) vars.push_back(tape.leaf(in));
    return static_cast<long double>(f(ctx, vars).value().item());
  };
  const U eps = static_cast<U>(options.epsilon);
  Rng rng(options.seed);
  std::vector<GradCheckRow> rows;
  std::size_t k = 0;
  auto probe = [&](Tensor<U>& value) {
    GradCheckRow row;
    row.group = names[k];
    const Tensor<double>& a = analytic[k++];
    for (std::size_t i : pick_coords(value.size(), options.max_coords, rng)) {
      const U saved = value[i];
      value[i] = saved + eps;
      const long double up = eval();
      value[i] = saved - eps;
      const long double down = eval();
      value[i] = saved;
      const auto numeric = static_cast<double>((up - down) / (2 * static_cast<long double>(eps)));
      row.max_rel_error = std::max(row.max_rel_error, relative_error(a[i], numeric));
      ++row.coords;
    }
    rows.push_back(row);
  };
  for (auto& [name, entry] : params) {
    if (entry.trainable) probe(entry.value);
  }
  for (auto& in : inputs) probe(in);
  return rows;
}

}  // namespace

std::vector<GradCheckRow> check_gradients(ParamStore<double>& params,
                                          std::vector<NamedTensor> inputs, const ModelFn& f,
                                          const GradCheckOptions& options,
                                          const ExtendedModelFn& reference) {
  params.zero_grad();
  std::vector<Tensor<double>> analytic;
  std::vector<std::string> names;
  {
    Tape<double> tape;
    tape.inject_fault(options.fault);
    Context<double> ctx{tape, params};
    std::vector<Var<double>> vars;
    for (const auto& in : inputs) vars.push_back(tape.leaf(in.value, true));
    Var<double> out = f(ctx, vars);
    tape.backward(out);
    for (const auto& [name, entry] : params) {
      if (!entry.trainable) continue;
      analytic.push_back(entry.grad);
      names.push_back(name);
    }
    for (std::size_t k = 0; k < inputs.size(); ++k) {
      analytic.push_back(tape.grad(vars[k]));
      names.push_back("input:" + inputs[k].name);
    }
  }
  if (reference) {
    std::vector<Tensor<long double>> ext;
    for (const auto& in : inputs) ext.push_back(in.value.cast<long double>());
    return numeric_rows<long double>(params.cast<long double>(), std::move(ext), reference, analytic,
                                     names, options);
  }
  std::vector<Tensor<double>> plain;
  for (const auto& in : inputs) plain.push_back(in.value);
  return numeric_rows<double>(params, std::move(plain), f, analytic, names, options);
}

void randomize_for_gradcheck(ParamStore<double>& params, Rng& rng) {
  for (auto& [name, entry] : params) {
    for (auto& v : entry.value.data()) {
      switch (entry.kind) {
        case ParamKind::weight:
          break;
        case ParamKind::bias:
          v = rng.uniform(-0.2, 0.2);
          break;
        case ParamKind::norm_scale:
          v = rng.uniform(0.5, 1.5);
          break;
        case ParamKind::norm_shift: {
          const double mag = rng.uniform(0.1, 0.5);
          v = rng.uniform() < 0.5 ? -mag : mag;
          break;
        }
        case ParamKind::scalar:
          v = rng.uniform(0.3, 1.2);
          break;
      }
    }
  }
}

}  // namespace eifnet
