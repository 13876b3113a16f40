#pragma once

#include <filesystem>
#include <string_view>

#include "evpupil/event.hpp"

namespace evpupil {

enum class EventFormat { Csv, Binary };

/// Parses "csv" / "binary" (also "bin"). Throws ArgumentError otherwise.
EventFormat parse_event_format(std::string_view name);

/// Guesses the format from the file extension: ".csv" is CSV, anything else binary.
EventFormat format_from_path(const std::filesystem::path& path);

/// CSV carries no geometry, so the sensor size is supplied by the caller.
/// Binary files carry their own width/height and ignore these arguments.
EventStream read_events(const std::filesystem::path& path, EventFormat format,
                        int width = kDefaultSensorWidth, int height = kDefaultSensorHeight);

void write_events(const EventStream& stream, const std::filesystem::path& path,
                  EventFormat format);

}  // namespace evpupil
