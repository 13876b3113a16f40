#pragma once

#include <cstdint>
#include <vector>

namespace evpupil {

inline constexpr int kDefaultSensorWidth = 346;
inline constexpr int kDefaultSensorHeight = 260;

/// One brightness-change record. Timestamps are microseconds since stream start.
struct Event {
  std::int64_t t = 0;
  std::uint16_t x = 0;
  std::uint16_t y = 0;
  std::int8_t p = 1;  // -1 or +1

  friend bool operator==(const Event&, const Event&) = default;
};

struct EventStream {
  int width = kDefaultSensorWidth;
  int height = kDefaultSensorHeight;
  std::vector<Event> events;

  std::size_t size() const noexcept { return events.size(); }
  bool empty() const noexcept { return events.empty(); }

  /// Throws ValidationError on out-of-bounds coordinates, bad polarity or
  /// decreasing timestamps.
  void validate() const;

  friend bool operator==(const EventStream&, const EventStream&) = default;
};

}  // namespace evpupil
