#include "evpupil/event_io.hpp"

#include <array>
#include <charconv>
#include <fstream>
#include <string>

#include "evpupil/detail/little_endian.hpp"
#include "evpupil/errors.hpp"

namespace evpupil {

namespace {

constexpr std::string_view kCsvHeader = "t_us,x,y,p";
constexpr std::array<char, 8> kBinaryMagic = {'E', 'V', 'T', 'S', 'T', 'R', 'M', '1'};

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

std::int64_t parse_field(std::string_view field, std::size_t line, const char* name) {
  field = trim(field);
  std::int64_t value = 0;
  const auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), value);
  if (ec != std::errc{} || ptr != field.data() + field.size() || field.empty()) {
    throw ParseError(line, std::string("field '") + name + "' is not an integer: '" +
                               std::string(field) + "'");
  }
  return value;
}

Event parse_csv_line(std::string_view text, std::size_t line, int width, int height) {
  std::array<std::string_view, 4> fields;
  std::size_t n = 0;
  std::size_t start = 0;
  for (std::size_t i = 0; i <= text.size(); ++i) {
    if (i == text.size() || text[i] == ',') {
      if (n == fields.size()) throw ParseError(line, "expected 4 fields, found more");
      fields[n++] = text.substr(start, i - start);
      start = i + 1;
    }
  }
  if (n != 4) throw ParseError(line, "expected 4 fields, found " + std::to_string(n));

  const std::int64_t t = parse_field(fields[0], line, "t_us");
  const std::int64_t x = parse_field(fields[1], line, "x");
  const std::int64_t y = parse_field(fields[2], line, "y");
  const std::int64_t p = parse_field(fields[3], line, "p");
  if (t < 0) throw ValidationError("line " + std::to_string(line) + ": negative timestamp");
  if (x < 0 || x >= width || y < 0 || y >= height) {
    throw ValidationError("line " + std::to_string(line) + ": coordinate (" + std::to_string(x) +
                          "," + std::to_string(y) + ") outside " + std::to_string(width) + "x" +
                          std::to_string(height) + " sensor");
  }
  if (p != 0 && p != 1) throw ParseError(line, "polarity must be 0 or 1");
  return Event{t, static_cast<std::uint16_t>(x), static_cast<std::uint16_t>(y),
               static_cast<std::int8_t>(p == 1 ? 1 : -1)};
}

EventStream read_csv(const std::filesystem::path& path, int width, int height) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  EventStream stream;
  stream.width = width;
  stream.height = height;
  std::string raw;
  std::size_t line = 0;
  while (std::getline(in, raw)) {
    ++line;
    const std::string_view text = trim(raw);
    if (text.empty()) continue;
    if (line == 1 && text == kCsvHeader) continue;
    Event e = parse_csv_line(text, line, width, height);
    if (!stream.events.empty() && e.t < stream.events.back().t) {
      throw ValidationError("line " + std::to_string(line) + ": timestamp " +
                            std::to_string(e.t) + " precedes " +
                            std::to_string(stream.events.back().t));
    }
    stream.events.push_back(e);
  }
  if (in.bad()) throw IoError("read failure on " + path.string());
  return stream;
}

EventStream read_binary(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::array<char, 8> magic{};
  if (!in.read(magic.data(), magic.size()) || magic != kBinaryMagic) {
    throw ParseError(1, "missing EVTSTRM1 magic in " + path.string());
  }
  EventStream stream;
  stream.width = detail::get_le<std::uint16_t>(in);
  stream.height = detail::get_le<std::uint16_t>(in);
  const auto count = detail::get_le<std::uint64_t>(in);
  stream.events.reserve(static_cast<std::size_t>(count));
  for (std::uint64_t i = 0; i < count; ++i) {
    Event e;
    try {
      const auto t = detail::get_le<std::uint64_t>(in);
      e.x = detail::get_le<std::uint16_t>(in);
      e.y = detail::get_le<std::uint16_t>(in);
      e.p = detail::get_le<std::int8_t>(in);
      e.t = static_cast<std::int64_t>(t);
    } catch (const IoError&) {
      throw ParseError(i + 1, "truncated record");
    }
    if (e.p != 1 && e.p != -1) throw ParseError(i + 1, "polarity must be -1 or +1");
    stream.events.push_back(e);
  }
  stream.validate();
  return stream;
}

}  // namespace

EventFormat parse_event_format(std::string_view name) {
  if (name == "csv") return EventFormat::Csv;
  if (name == "binary" || name == "bin") return EventFormat::Binary;
  throw ArgumentError("unknown event format '" + std::string(name) + "'");
}

EventFormat format_from_path(const std::filesystem::path& path) {
  return path.extension() == ".csv" ? EventFormat::Csv : EventFormat::Binary;
}

EventStream read_events(const std::filesystem::path& path, EventFormat format, int width,
                        int height) {
  return format == EventFormat::Csv ? read_csv(path, width, height) : read_binary(path);
}

void write_events(const EventStream& stream, const std::filesystem::path& path,
                  EventFormat format) {
  stream.validate();
  if (format == EventFormat::Csv) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    std::string buf;
    buf.reserve(stream.events.size() * 20 + 16);
    buf.append(kCsvHeader).push_back('\n');
    for (const Event& e : stream.events) {
      buf += std::to_string(e.t);
      buf += ',';
      buf += std::to_string(e.x);
      buf += ',';
      buf += std::to_string(e.y);
      buf += e.p > 0 ? ",1\n" : ",0\n";
    }
    out << buf;
    if (!out) throw IoError("write failure on " + path.string());
    return;
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(kBinaryMagic.data(), kBinaryMagic.size());
  detail::put_le(out, static_cast<std::uint16_t>(stream.width));
  detail::put_le(out, static_cast<std::uint16_t>(stream.height));
  detail::put_le(out, static_cast<std::uint64_t>(stream.events.size()));
  for (const Event& e : stream.events) {
    detail::put_le(out, static_cast<std::uint64_t>(e.t));
    detail::put_le(out, e.x);
    detail::put_le(out, e.y);
    detail::put_le(out, e.p);
  }
  if (!out) throw IoError("write failure on " + path.string());
}

}  // namespace evpupil
