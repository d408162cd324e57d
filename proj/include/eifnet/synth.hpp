#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "eifnet/events.hpp"
#include "eifnet/tensor.hpp"

namespace eifnet {

inline constexpr std::int64_t kSynthStepUs = 1000;
inline constexpr float kBackgroundGray = 0.5f;

/// Axis-aligned rectangle moving at a constant velocity (pixels per ms).
struct SceneObject {
  double x = 0;
  double y = 0;
  std::size_t w = 1;
  std::size_t h = 1;
  double vx = 0;
  double vy = 0;
  std::array<float, 3> albedo{0.5f, 0.5f, 0.5f};
  int cls = 1;

  float luminance() const { return 0.299f * albedo[0] + 0.587f * albedo[1] + 0.114f * albedo[2]; }
  /// Top-left corner at simulation step `k`, clamped so the rectangle stays on the sensor.
  std::array<std::size_t, 2> corner_at(std::int64_t k, SensorDims dims) const;
};

struct SynthParams {
  std::uint64_t seed = 1;
  SensorDims dims{64, 64};
  std::size_t n_objects = 2;
  double noise_rate = 0.0;  // events per ms
  std::int64_t window_us = 50000;
};

struct SyntheticScene {
  SynthParams params;
  std::vector<SceneObject> objects;
  std::vector<Event> events;  // sorted by time, inside [0, window_us)
  Tensor<float> image;        // [3, H, W], final-time render
  Tensor<float> labels;       // [H, W], final-time class ids, background 0
  std::size_t class_count = 0;
};

/// Number of simulation steps k >= 1 with k * 1 ms < window_us.
std::int64_t synth_steps(std::int64_t window_us);

/// Edge events from frame differencing of the rendered object motion: one
/// event per pixel whose luminance changes between consecutive 1 ms steps,
/// positive when it brightens. Sorted by time.
std::vector<Event> simulate_motion_events(const std::vector<SceneObject>& objects, SensorDims dims,
                                          std::int64_t window_us);

/// Deterministic scene: seeded rectangles (classes 1..n) over a gray
/// background, their motion events, and uniform noise events.
SyntheticScene synth_scene(const SynthParams& params);

/// Scene directory: events.csv, image.eift, labels.eift, meta.
void save_scene(const std::filesystem::path& dir, const SyntheticScene& scene);
SyntheticScene load_scene(const std::filesystem::path& dir);

}  // namespace eifnet
