#include "evpupil/event.hpp"

#include <string>

#include "evpupil/errors.hpp"

namespace evpupil {

void EventStream::validate() const {
  if (width <= 0 || height <= 0 || width > 65535 || height > 65535) {
    throw ValidationError("sensor geometry " + std::to_string(width) + "x" +
                          std::to_string(height) + " is invalid");
  }
  std::int64_t last_t = 0;
  for (std::size_t i = 0; i < events.size(); ++i) {
    const Event& e = events[i];
    if (e.x >= width || e.y >= height) {
      throw ValidationError("event " + std::to_string(i) + " at (" + std::to_string(e.x) + "," +
                            std::to_string(e.y) + ") is outside the " + std::to_string(width) +
                            "x" + std::to_string(height) + " sensor");
    }
    if (e.p != 1 && e.p != -1) {
      throw ValidationError("event " + std::to_string(i) + " has polarity " +
                            std::to_string(e.p));
    }
    if (e.t < 0 || (i > 0 && e.t < last_t)) {
      throw ValidationError("event " + std::to_string(i) + " timestamp " + std::to_string(e.t) +
                            " decreases");
    }
    last_t = e.t;
  }
}

}  // namespace evpupil
