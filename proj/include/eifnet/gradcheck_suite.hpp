#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "eifnet/gradcheck.hpp"

namespace eifnet {

inline constexpr double kGradTolerance = 1e-4;

struct ModuleGradReport {
  std::string module;
  std::vector<GradCheckRow> rows;
  double seconds = 0.0;

  double max_error() const;
  std::size_t coords() const;
  bool passed(double tolerance = kGradTolerance) const { return max_error() < tolerance; }
};

/// aefrm, marm, mgfm, encoder, decoder, network
const std::vector<std::string>& gradcheck_modules();

/// Double-precision check of one module at a seeded generic point. The loss
/// is a fixed random projection of the module output. `fault` corrupts the
/// analytic parameter gradients (harness self-test).
ModuleGradReport gradcheck_module(const std::string& module, std::uint64_t seed, double fault = 0.0);

}  // namespace eifnet
