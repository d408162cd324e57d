#include "eifnet/synth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include "eifnet/error.hpp"
#include "eifnet/rng.hpp"
#include "eifnet/tensor_io.hpp"

namespace eifnet {

std::array<std::size_t, 2> SceneObject::corner_at(std::int64_t k, SensorDims dims) const {
  auto place = [](double origin, double v, std::int64_t step, std::size_t extent, std::size_t size) {
    const double pos = std::floor(origin + v * static_cast<double>(step));
    const double hi = static_cast<double>(size - std::min(size, extent));
    return static_cast<std::size_t>(std::clamp(pos, 0.0, hi));
  };
  return {place(x, vx, k, w, dims.width), place(y, vy, k, h, dims.height)};
}

std::int64_t synth_steps(std::int64_t window_us) {
  return window_us <= 0 ? 0 : (window_us - 1) / kSynthStepUs;
}

namespace {

void render_luminance(const std::vector<SceneObject>& objects, SensorDims dims, std::int64_t k,
                      std::vector<float>& lum) {
  std::fill(lum.begin(), lum.end(), kBackgroundGray);
  for (const auto& o : objects) {
    const auto [cx, cy] = o.corner_at(k, dims);
    const float v = o.luminance();
    for (std::size_t y = cy; y < std::min(dims.height, cy + o.h); ++y) {
      std::fill_n(lum.begin() + static_cast<std::ptrdiff_t>(y * dims.width + cx),
                  std::min(o.w, dims.width - cx), v);
    }
  }
}

void validate(const SynthParams& p) {
  if (p.dims.height < 32 || p.dims.width < 32 || p.dims.height % 32 != 0 || p.dims.width % 32 != 0) {
    throw ConfigError("scene dims must be at least 32 and divisible by 32, got " +
                      std::to_string(p.dims.height) + "x" + std::to_string(p.dims.width));
  }
  if (p.n_objects < 1) throw ConfigError("scene needs at least one object");
  if (p.window_us <= 0) throw ConfigError("window_us must be positive");
  if (!(p.noise_rate >= 0.0) || !std::isfinite(p.noise_rate)) {
    throw ConfigError("noise rate must be a non-negative number");
  }
}

}  // namespace

std::vector<Event> simulate_motion_events(const std::vector<SceneObject>& objects, SensorDims dims,
                                          std::int64_t window_us) {
  const std::size_t n = dims.height * dims.width;
  std::vector<float> prev(n), cur(n);
  render_luminance(objects, dims, 0, prev);
  std::vector<Event> events;
  for (std::int64_t k = 1; k <= synth_steps(window_us); ++k) {
    render_luminance(objects, dims, k, cur);
    for (std::size_t i = 0; i < n; ++i) {
      if (cur[i] == prev[i]) continue;
      events.push_back({k * kSynthStepUs, static_cast<std::int32_t>(i % dims.width),
                        static_cast<std::int32_t>(i / dims.width),
                        static_cast<std::int8_t>(cur[i] > prev[i] ? 1 : -1)});
    }
    std::swap(prev, cur);
  }
  return events;
}

SyntheticScene synth_scene(const SynthParams& params) {
  validate(params);
  const SensorDims dims = params.dims;
  Rng rng(params.seed);
  SyntheticScene scene;
  scene.params = params;
  scene.class_count = params.n_objects + 1;

  const auto min_side = [](std::size_t extent) { return std::max<std::size_t>(4, extent / 4); };
  for (std::size_t i = 0; i < params.n_objects; ++i) {
    SceneObject o;
    o.cls = static_cast<int>(i + 1);
    o.w = static_cast<std::size_t>(rng.uniform_int(static_cast<std::int64_t>(min_side(dims.width)),
                                                   static_cast<std::int64_t>(dims.width / 2)));
    o.h = static_cast<std::size_t>(rng.uniform_int(static_cast<std::int64_t>(min_side(dims.height)),
                                                   static_cast<std::int64_t>(dims.height / 2)));
    o.x = static_cast<double>(rng.uniform_int(0, static_cast<std::int64_t>(dims.width - o.w)));
    o.y = static_cast<double>(rng.uniform_int(0, static_cast<std::int64_t>(dims.height - o.h)));
    o.vx = rng.uniform(-0.2, 0.2);
    o.vy = rng.uniform(-0.2, 0.2);
    do {
      for (auto& c : o.albedo) c = static_cast<float>(rng.uniform());
    } while (std::abs(o.luminance() - kBackgroundGray) < 0.2f);
    scene.objects.push_back(o);
  }

  scene.events = simulate_motion_events(scene.objects, dims, params.window_us);
  const auto noise_count =
      static_cast<std::int64_t>(std::llround(params.noise_rate * static_cast<double>(params.window_us) / 1000.0));
  for (std::int64_t i = 0; i < noise_count; ++i) {
    Event e;
    e.t_us = rng.uniform_int(0, params.window_us - 1);
    e.x = static_cast<std::int32_t>(rng.uniform_int(0, static_cast<std::int64_t>(dims.width) - 1));
    e.y = static_cast<std::int32_t>(rng.uniform_int(0, static_cast<std::int64_t>(dims.height) - 1));
    e.p = rng.uniform() < 0.5 ? std::int8_t{-1} : std::int8_t{1};
    scene.events.push_back(e);
  }
  std::stable_sort(scene.events.begin(), scene.events.end(),
                   [](const Event& a, const Event& b) { return a.t_us < b.t_us; });

  const std::int64_t final_step = synth_steps(params.window_us);
  scene.image = Tensor<float>({3, dims.height, dims.width}, kBackgroundGray);
  scene.labels = Tensor<float>({dims.height, dims.width});
  const std::size_t plane = dims.height * dims.width;
  for (const auto& o : scene.objects) {
    const auto [cx, cy] = o.corner_at(final_step, dims);
    for (std::size_t y = cy; y < cy + o.h; ++y) {
      for (std::size_t x = cx; x < cx + o.w; ++x) {
        const std::size_t px = y * dims.width + x;
        for (std::size_t c = 0; c < 3; ++c) scene.image[c * plane + px] = o.albedo[c];
        scene.labels[px] = static_cast<float>(o.cls);
      }
    }
  }
  return scene;
}

// --- scene directory ---------------------------------------------------------

void save_scene(const std::filesystem::path& dir, const SyntheticScene& scene) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw Error("cannot create directory " + dir.string() + ": " + ec.message());
  write_events((dir / "events.csv").string(), scene.events);
  write_tensor(dir / "image.eift", scene.image);
  write_tensor(dir / "labels.eift", scene.labels);
  std::ofstream meta(dir / "meta", std::ios::trunc);
  if (!meta) throw Error("cannot write " + (dir / "meta").string());
  meta << "height " << scene.params.dims.height << '\n'
       << "width " << scene.params.dims.width << '\n'
       << "seed " << scene.params.seed << '\n'
       << "classes " << scene.class_count << '\n'
       << "objects " << scene.params.n_objects << '\n'
       << "noise_rate " << scene.params.noise_rate << '\n'
       << "window_us " << scene.params.window_us << '\n';
  if (!meta) throw Error("failed writing " + (dir / "meta").string());
}

SyntheticScene load_scene(const std::filesystem::path& dir) {
  std::ifstream meta(dir / "meta");
  if (!meta) throw Error("scene directory " + dir.string() + " has no meta file");
  std::map<std::string, std::string> kv;
  std::string key, value;
  while (meta >> key >> value) kv[key] = value;
  auto get = [&](const std::string& k) {
    auto it = kv.find(k);
    if (it == kv.end()) throw FormatError("scene meta missing '" + k + "'");
    return it->second;
  };
  SyntheticScene scene;
  try {
    scene.params.dims = {std::stoul(get("height")), std::stoul(get("width"))};
    scene.params.seed = std::stoull(get("seed"));
    scene.class_count = std::stoul(get("classes"));
    scene.params.n_objects = std::stoul(get("objects"));
    scene.params.noise_rate = std::stod(get("noise_rate"));
    scene.params.window_us = std::stoll(get("window_us"));
  } catch (const std::logic_error&) {
    throw FormatError("scene meta has a malformed value");
  }
  scene.events = read_events((dir / "events.csv").string(), scene.params.dims);
  scene.image = read_tensor(dir / "image.eift");
  scene.labels = read_tensor(dir / "labels.eift");
  const SensorDims d = scene.params.dims;
  if (scene.image.shape() != Shape{3, d.height, d.width} ||
      scene.labels.shape() != Shape{d.height, d.width}) {
    throw FormatError("scene tensors do not match meta dims");
  }
  return scene;
}

}  // namespace eifnet
