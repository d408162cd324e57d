#include "eifnet/events.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>
#include <string_view>

#include "eifnet/error.hpp"

namespace eifnet {

namespace {

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

std::int64_t parse_int(std::string_view field, std::size_t line, const char* name) {
  field = trim(field);
  std::int64_t v = 0;
  const auto* end = field.data() + field.size();
  auto [ptr, ec] = std::from_chars(field.data(), end, v);
  if (field.empty() || ec != std::errc{} || ptr != end) {
    throw ParseError(line, std::string("non-numeric ") + name + " field '" + std::string(field) + "'");
  }
  return v;
}

}  // namespace

std::vector<Event> parse_events(std::istream& in, SensorDims dims) {
  std::vector<Event> events;
  std::string raw;
  std::size_t line = 0;
  while (std::getline(in, raw)) {
    ++line;
    const std::string_view text = trim(raw);
    if (text.empty() || text.front() == '#') continue;
    std::string_view fields[4];
    std::size_t n = 0;
    std::size_t start = 0;
    while (true) {
      const auto comma = text.find(',', start);
      if (n == 4) throw ParseError(line, "expected 4 fields, got more");
      fields[n++] = text.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start);
      if (comma == std::string_view::npos) break;
      start = comma + 1;
    }
    if (n != 4) throw ParseError(line, "expected 4 fields, got " + std::to_string(n));
    const auto t = parse_int(fields[0], line, "timestamp");
    const auto x = parse_int(fields[1], line, "x");
    const auto y = parse_int(fields[2], line, "y");
    const auto p = parse_int(fields[3], line, "polarity");
    if (t < 0) throw ValidationError(line, "negative timestamp");
    if (p != -1 && p != 0 && p != 1) throw ParseError(line, "polarity must be -1, 0 or 1");
    if (x < 0 || y < 0 || static_cast<std::size_t>(x) >= dims.width ||
        static_cast<std::size_t>(y) >= dims.height) {
      throw ValidationError(line, "coordinate (" + std::to_string(x) + "," + std::to_string(y) +
                                      ") outside " + std::to_string(dims.width) + "x" +
                                      std::to_string(dims.height) + " sensor");
    }
    events.push_back({t, static_cast<std::int32_t>(x), static_cast<std::int32_t>(y),
                      static_cast<std::int8_t>(p == 1 ? 1 : -1)});
  }
  std::stable_sort(events.begin(), events.end(),
                   [](const Event& a, const Event& b) { return a.t_us < b.t_us; });
  return events;
}

std::vector<Event> parse_events(const std::string& text, SensorDims dims) {
  std::istringstream in(text);
  return parse_events(in, dims);
}

std::vector<Event> read_events(const std::string& path, SensorDims dims) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path);
  return parse_events(in, dims);
}

void write_events(std::ostream& out, const std::vector<Event>& events) {
  for (const auto& e : events) {
    out << e.t_us << ',' << e.x << ',' << e.y << ',' << static_cast<int>(e.p) << '\n';
  }
}

void write_events(const std::string& path, const std::vector<Event>& events) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot open " + path + " for writing");
  write_events(out, events);
  if (!out) throw Error("failed writing " + path);
}

EventWindow window(const std::vector<Event>& events, std::int64_t t_end_us,
                   std::int64_t duration_us, SensorDims dims) {
  if (duration_us <= 0) throw Error("window duration must be positive");
  EventWindow w;
  w.t_start_us = t_end_us - duration_us;
  w.t_end_us = t_end_us;
  w.dims = dims;
  auto by_time = [](const Event& e, std::int64_t t) { return e.t_us < t; };
  const auto lo = std::lower_bound(events.begin(), events.end(), w.t_start_us, by_time);
  const auto hi = std::lower_bound(lo, events.end(), t_end_us, by_time);
  w.events.assign(lo, hi);
  return w;
}

}  // namespace eifnet
