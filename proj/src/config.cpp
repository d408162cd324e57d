#include "eifnet/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "eifnet/error.hpp"

namespace eifnet {

using nlohmann::json;

void NetworkConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError("config: " + msg); };
  if (height < 32 || width < 32 || height % 32 != 0 || width % 32 != 0) {
    fail("input dims must be at least 32 and divisible by 32, got " + std::to_string(height) + "x" +
         std::to_string(width));
  }
  if (image_channels == 0) fail("image_channels must be positive");
  if (classes < 2) fail("classes must be at least 2");
  if (decoder_width == 0 || aefrm_width == 0) fail("decoder_width and aefrm_width must be positive");
  if (bins == 0) fail("encoding.bins must be positive");
  if (window_us <= 0) fail("encoding.window_us must be positive");
  for (std::size_t s = 0; s < kStages; ++s) {
    const std::string tag = "stage " + std::to_string(s + 1) + ": ";
    if (image_widths[s] == 0 || event_widths[s] == 0) fail(tag + "widths must be positive");
    if (heads[s] == 0 || image_widths[s] % heads[s] != 0) {
      fail(tag + "width " + std::to_string(image_widths[s]) + " not divisible by heads " +
           std::to_string(heads[s]));
    }
    if (reduction[s] == 0 || stage_height(s) % reduction[s] != 0 ||
        stage_width(s) % reduction[s] != 0) {
      fail(tag + "reduction " + std::to_string(reduction[s]) + " does not divide the " +
           std::to_string(stage_height(s)) + "x" + std::to_string(stage_width(s)) + " grid");
    }
  }
}

NetworkConfig minimal_config() {
  NetworkConfig c;
  c.height = 32;
  c.width = 32;
  c.image_widths = {4, 8, 8, 8};
  c.event_widths = {2, 4, 4, 4};
  c.heads = {1, 2, 2, 2};
  c.reduction = {2, 2, 2, 1};
  c.classes = 2;
  c.decoder_width = 8;
  c.aefrm_width = 4;
  return c;
}

namespace {

void reject_unknown(const json& obj, const std::set<std::string>& allowed, const std::string& where) {
  if (!obj.is_object()) throw ConfigError("config: " + where + " must be an object");
  for (const auto& [key, value] : obj.items()) {
    if (!allowed.count(key)) throw ConfigError("config: unknown key '" + where + key + "'");
  }
}

StageSizes stage_list(const json& v, const std::string& key) {
  StageSizes out{};
  if (v.is_number_unsigned()) {
    out.fill(v.get<std::size_t>());
    return out;
  }
  if (!v.is_array() || v.size() != kStages) {
    throw ConfigError("config: '" + key + "' must be a list of 4 positive integers");
  }
  for (std::size_t s = 0; s < kStages; ++s) {
    if (!v[s].is_number_unsigned()) throw ConfigError("config: '" + key + "' entries must be integers");
    out[s] = v[s].get<std::size_t>();
  }
  return out;
}

template <typename U>
U get_as(const json& v, const std::string& key) {
  try {
    return v.get<U>();
  } catch (const json::exception&) {
    throw ConfigError("config: '" + key + "' has the wrong type");
  }
}

std::size_t get_size(const json& v, const std::string& key) {
  if (!v.is_number_unsigned()) throw ConfigError("config: '" + key + "' must be a non-negative integer");
  return v.get<std::size_t>();
}

}  // namespace

NetworkConfig config_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config: invalid JSON: ") + e.what());
  }
  reject_unknown(j,
                 {"height", "width", "event_channels", "image_channels", "image_widths",
                  "event_widths", "heads", "reduction", "classes", "seed", "decoder_width",
                  "aefrm_width", "modules", "encoding"},
                 "");
  NetworkConfig c;
  if (j.contains("height")) c.height = get_size(j["height"], "height");
  if (j.contains("width")) c.width = get_size(j["width"], "width");
  if (j.contains("image_channels")) c.image_channels = get_size(j["image_channels"], "image_channels");
  if (j.contains("image_widths")) {
    c.image_widths = stage_list(j["image_widths"], "image_widths");
    for (std::size_t s = 0; s < kStages; ++s) c.event_widths[s] = (c.image_widths[s] + 1) / 2;
  }
  if (j.contains("event_widths")) c.event_widths = stage_list(j["event_widths"], "event_widths");
  if (j.contains("heads")) c.heads = stage_list(j["heads"], "heads");
  if (j.contains("reduction")) c.reduction = stage_list(j["reduction"], "reduction");
  if (j.contains("classes")) c.classes = get_size(j["classes"], "classes");
  if (j.contains("seed")) c.seed = get_as<std::uint64_t>(j["seed"], "seed");
  if (j.contains("decoder_width")) c.decoder_width = get_size(j["decoder_width"], "decoder_width");
  if (j.contains("aefrm_width")) c.aefrm_width = get_size(j["aefrm_width"], "aefrm_width");
  if (j.contains("modules")) {
    const json& m = j["modules"];
    reject_unknown(m, {"aefrm", "marm", "mgfm"}, "modules.");
    if (m.contains("aefrm")) c.modules.aefrm = get_as<bool>(m["aefrm"], "modules.aefrm");
    if (m.contains("marm")) c.modules.marm = get_as<bool>(m["marm"], "modules.marm");
    if (m.contains("mgfm")) c.modules.mgfm = get_as<bool>(m["mgfm"], "modules.mgfm");
  }
  if (j.contains("encoding")) {
    const json& e = j["encoding"];
    reject_unknown(e, {"bins", "window_us"}, "encoding.");
    if (e.contains("bins")) c.bins = get_size(e["bins"], "encoding.bins");
    if (e.contains("window_us")) c.window_us = get_as<std::int64_t>(e["window_us"], "encoding.window_us");
  }
  if (j.contains("event_channels") && get_size(j["event_channels"], "event_channels") != c.bins) {
    throw ConfigError("config: event_channels must equal encoding.bins");
  }
  c.validate();
  return c;
}

std::string config_to_json(const NetworkConfig& c) {
  json j;
  j["height"] = c.height;
  j["width"] = c.width;
  j["event_channels"] = c.event_channels();
  j["image_channels"] = c.image_channels;
  j["image_widths"] = c.image_widths;
  j["event_widths"] = c.event_widths;
  j["heads"] = c.heads;
  j["reduction"] = c.reduction;
  j["classes"] = c.classes;
  j["seed"] = c.seed;
  j["decoder_width"] = c.decoder_width;
  j["aefrm_width"] = c.aefrm_width;
  j["modules"] = {{"aefrm", c.modules.aefrm}, {"marm", c.modules.marm}, {"mgfm", c.modules.mgfm}};
  j["encoding"] = {{"bins", c.bins}, {"window_us", c.window_us}};
  return j.dump(2);
}

NetworkConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return config_from_json(ss.str());
}

}  // namespace eifnet
