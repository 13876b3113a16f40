#include "evpupil/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>
#include <vector>

#include <fmt/format.h>

#include "evpupil/errors.hpp"

namespace evpupil {

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

template <typename T>
T parse_number(std::string_view text, std::size_t line, std::string_view key) {
  T value{};
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc{} || ptr != text.data() + text.size() || text.empty()) {
    throw ParseError(line, fmt::format("value '{}' for key '{}' is not a valid number", text, key));
  }
  return value;
}

struct Key {
  std::string_view name;
  std::function<void(PipelineConfig&, std::string_view, std::size_t)> set;
  std::function<std::string(const PipelineConfig&)> get;
};

template <typename T>
Key make_key(std::string_view name, T PipelineConfig::*member) {
  return Key{
      name,
      [name, member](PipelineConfig& c, std::string_view v, std::size_t line) {
        c.*member = parse_number<T>(v, line, name);
      },
      [member](const PipelineConfig& c) { return fmt::format("{}", c.*member); },
  };
}

const std::vector<Key>& keys() {
  static const std::vector<Key> table = {
      make_key("slicing_threshold", &PipelineConfig::slicing_threshold),
      make_key("downsample_factor", &PipelineConfig::downsample_factor),
      make_key("max_slice_duration", &PipelineConfig::max_slice_duration_us),
      make_key("max_slice_events", &PipelineConfig::max_slice_events),
      make_key("dilation_kernel", &PipelineConfig::dilation_kernel),
      make_key("dilation_iterations", &PipelineConfig::dilation_iterations),
      make_key("canny_low", &PipelineConfig::canny_low),
      make_key("canny_high", &PipelineConfig::canny_high),
      make_key("gaussian_sigma", &PipelineConfig::gaussian_sigma),
      make_key("hough_r_min", &PipelineConfig::hough_r_min),
      make_key("hough_r_max", &PipelineConfig::hough_r_max),
      make_key("hough_vote_threshold", &PipelineConfig::hough_vote_threshold),
      make_key("roi_aspect_min", &PipelineConfig::roi_aspect_min),
      make_key("roi_aspect_max", &PipelineConfig::roi_aspect_max),
      make_key("kalman_process_noise", &PipelineConfig::kalman_process_noise),
      make_key("kalman_measurement_noise", &PipelineConfig::kalman_measurement_noise),
      make_key("window_length", &PipelineConfig::window_length),
      make_key("window_stride", &PipelineConfig::window_stride),
      make_key("max_consecutive_misses", &PipelineConfig::max_consecutive_misses),
      make_key("forest_trees", &PipelineConfig::forest_trees),
      make_key("forest_max_depth", &PipelineConfig::forest_max_depth),
      make_key("forest_min_node_size", &PipelineConfig::forest_min_node_size),
      make_key("auth_budget", &PipelineConfig::auth_budget),
      make_key("rng_seed", &PipelineConfig::rng_seed),
  };
  return table;
}

void require(bool ok, std::string_view constraint) {
  if (!ok) throw ValidationError(fmt::format("config constraint violated: {}", constraint));
}

}  // namespace

void PipelineConfig::validate() const {
  require(slicing_threshold > 0, "slicing_threshold > 0");
  require(downsample_factor >= 1, "downsample_factor >= 1");
  require(max_slice_duration_us > 0, "max_slice_duration > 0");
  require(max_slice_events > 0, "max_slice_events > 0");
  require(dilation_kernel >= 1 && dilation_kernel % 2 == 1, "dilation_kernel odd and >= 1");
  require(dilation_iterations >= 0, "dilation_iterations >= 0");
  require(canny_low < canny_high, "canny_low < canny_high");
  require(gaussian_sigma > 0, "gaussian_sigma > 0");
  require(hough_r_min >= 1, "hough_r_min >= 1");
  require(hough_r_min < hough_r_max, "hough_r_min < hough_r_max");
  require(hough_vote_threshold > 0 && hough_vote_threshold <= 1, "0 < hough_vote_threshold <= 1");
  require(roi_aspect_min > 0 && roi_aspect_min < roi_aspect_max, "0 < roi_aspect_min < roi_aspect_max");
  require(kalman_process_noise > 0, "kalman_process_noise > 0");
  require(kalman_measurement_noise > 0, "kalman_measurement_noise > 0");
  require(window_length >= 2, "window_length (M) >= 2");
  require(window_stride >= 1, "window_stride >= 1");
  require(max_consecutive_misses >= 0, "max_consecutive_misses >= 0");
  require(forest_trees >= 1, "forest_trees >= 1");
  require(forest_max_depth >= 1, "forest_max_depth >= 1");
  require(forest_min_node_size >= 2, "forest_min_node_size >= 2");
  require(auth_budget >= 1, "auth_budget >= 1");
}

PipelineConfig parse_config(std::string_view text) {
  PipelineConfig config;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const std::size_t end = std::min(text.find('\n', pos), text.size());
    std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) throw ParseError(line_no, "expected 'key = value'");
    const std::string_view key = trim(line.substr(0, eq));
    const std::string_view value = trim(line.substr(eq + 1));
    bool found = false;
    for (const Key& k : keys()) {
      if (k.name == key) {
        k.set(config, value, line_no);
        found = true;
        break;
      }
    }
    if (!found) throw ValidationError(fmt::format("unknown config key '{}' (line {})", key, line_no));
  }
  config.validate();
  return config;
}

PipelineConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string to_config_text(const PipelineConfig& config) {
  std::string out;
  for (const Key& k : keys()) out += fmt::format("{} = {}\n", k.name, k.get(config));
  return out;
}

}  // namespace evpupil
