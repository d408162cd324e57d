#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>

namespace eifnet {

inline constexpr std::size_t kStages = 4;
using StageSizes = std::array<std::size_t, kStages>;

struct ModuleToggles {
  bool aefrm = true;
  bool marm = true;
  bool mgfm = true;
  bool operator==(const ModuleToggles&) const = default;
};

/// Toy-scale network layout. Stage s runs at 1/(4 * 2^s) of the input size.
struct NetworkConfig {
  std::size_t height = 64;
  std::size_t width = 64;
  std::size_t image_channels = 3;
  StageSizes image_widths{16, 32, 48, 64};
  StageSizes event_widths{8, 16, 24, 32};
  StageSizes heads{1, 2, 3, 4};
  StageSizes reduction{2, 2, 2, 1};
  std::size_t classes = 3;
  std::uint64_t seed = 1;
  std::size_t decoder_width = 32;
  std::size_t aefrm_width = 8;
  ModuleToggles modules;
  std::size_t bins = 3;
  std::int64_t window_us = 50000;

  std::size_t event_channels() const { return bins; }
  std::size_t stage_height(std::size_t s) const { return height / (4u << s); }
  std::size_t stage_width(std::size_t s) const { return width / (4u << s); }

  /// Throws ConfigError on any inconsistency.
  void validate() const;
  bool operator==(const NetworkConfig&) const = default;
};

/// Smallest configuration used for end-to-end gradient checks: 32x32, 2 classes.
NetworkConfig minimal_config();

/// JSON form: the NetworkConfig fields plus "modules" {aefrm, marm, mgfm} and
/// "encoding" {bins, window_us}. Unknown keys are rejected. Missing
/// event_widths default to ceil(image_width / 2).
NetworkConfig config_from_json(const std::string& text);
std::string config_to_json(const NetworkConfig& config);
NetworkConfig load_config(const std::filesystem::path& path);

}  // namespace eifnet
