#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

namespace evpupil {

struct PipelineConfig {
  // slicing
  double slicing_threshold = 0.001;
  int downsample_factor = 2;
  std::int64_t max_slice_duration_us = 100'000;
  std::int64_t max_slice_events = 200'000;

  // segmentation
  int dilation_kernel = 3;
  int dilation_iterations = 1;
  double canny_low = 50.0;
  double canny_high = 150.0;
  double gaussian_sigma = 1.0;
  int hough_r_min = 8;
  int hough_r_max = 60;
  double hough_vote_threshold = 0.4;
  double roi_aspect_min = 0.7;
  double roi_aspect_max = 1.4;

  // tracking / features
  double kalman_process_noise = 0.01;     // px^2 / ms^3
  double kalman_measurement_noise = 1.0;  // px^2
  int window_length = 10;
  int window_stride = 1;
  int max_consecutive_misses = 3;

  // authentication
  int forest_trees = 100;
  int forest_max_depth = 25;
  int forest_min_node_size = 2;
  int auth_budget = 50;
  std::uint64_t rng_seed = 0;

  /// Throws ValidationError naming the first violated constraint.
  void validate() const;
};

/// Flat `key = value` file with `#` comments. Unspecified keys keep defaults.
PipelineConfig load_config(const std::filesystem::path& path);
PipelineConfig parse_config(std::string_view text);

/// Writes every key, so the output reloads to an identical config.
std::string to_config_text(const PipelineConfig& config);

}  // namespace evpupil
