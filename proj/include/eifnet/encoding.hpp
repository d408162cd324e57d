#pragma once

#include <cstddef>
#include <cstdint>

#include "eifnet/events.hpp"
#include "eifnet/tensor.hpp"

namespace eifnet {

inline constexpr std::size_t kDefaultBins = 3;
inline constexpr std::int64_t kDefaultWindowUs = 50000;

/// Signed projection and unsigned activity map, both [bins, H, W].
struct EncodedEvents {
  Tensor<float> e_vt;
  Tensor<float> a_cm;
  std::size_t bins = 0;
  std::int64_t t_start_us = 0;
  std::int64_t t_end_us = 0;
};

/// Triangular kernel max(0, 1 - |z|).
inline double kernel_k(double z) {
  const double a = z < 0 ? -z : z;
  return a < 1.0 ? 1.0 - a : 0.0;
}

/// Maps a timestamp in [t_start, t_end) onto [0, bins - 1].
double normalize_time(std::int64_t t_us, const EventWindow& window, std::size_t bins);

/// Each event adds p * k(c - t*) to e_vt[c, y, x] and k(c - t*) to a_cm[c, y, x].
EncodedEvents encode(const EventWindow& window, std::size_t bins = kDefaultBins);

}  // namespace eifnet
