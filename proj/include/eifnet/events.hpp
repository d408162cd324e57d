#pragma once

#include <cstddef>
#include <cstdint>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

namespace eifnet {

struct SensorDims {
  std::size_t height = 0;
  std::size_t width = 0;
  bool operator==(const SensorDims&) const = default;
};

/// One camera event. Polarity is exactly -1 or +1.
struct Event {
  std::int64_t t_us = 0;
  std::int32_t x = 0;
  std::int32_t y = 0;
  std::int8_t p = 1;
  bool operator==(const Event&) const = default;
};

/// Events inside the half-open interval [t_start_us, t_end_us), sorted by time.
struct EventWindow {
  std::vector<Event> events;
  std::int64_t t_start_us = 0;
  std::int64_t t_end_us = 0;
  SensorDims dims;

  std::size_t count() const { return events.size(); }
  bool operator==(const EventWindow&) const = default;
};

/// Parses "t_us,x,y,p" lines. Blank lines and '#' comments are skipped,
/// polarity 0 maps to -1. The result is stably sorted by timestamp.
/// Throws ParseError (malformed) or ValidationError (out of bounds) with the
/// 1-based line number.
std::vector<Event> parse_events(std::istream& in, SensorDims dims);
std::vector<Event> parse_events(const std::string& text, SensorDims dims);
std::vector<Event> read_events(const std::string& path, SensorDims dims);

/// Writes events back in the CSV form parse_events accepts (p as -1/1).
void write_events(std::ostream& out, const std::vector<Event>& events);
void write_events(const std::string& path, const std::vector<Event>& events);

/// Events with t_end_us - duration_us <= t < t_end_us. `events` must be sorted.
EventWindow window(const std::vector<Event>& events, std::int64_t t_end_us,
                   std::int64_t duration_us, SensorDims dims);

}  // namespace eifnet
