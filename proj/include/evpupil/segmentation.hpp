#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "evpupil/config.hpp"
#include "evpupil/image.hpp"
#include "evpupil/slicing.hpp"

namespace evpupil {

struct Point {
  int x = 0;
  int y = 0;
  friend bool operator==(const Point&, const Point&) = default;
};

struct BoundingBox {
  int min_x = 0;
  int min_y = 0;
  int max_x = -1;
  int max_y = -1;

  int width() const noexcept { return max_x - min_x + 1; }
  int height() const noexcept { return max_y - min_y + 1; }
  double aspect() const noexcept { return static_cast<double>(width()) / height(); }
  bool contains(double x, double y) const noexcept {
    return x >= min_x && x <= max_x && y >= min_y && y <= max_y;
  }
};

/// Closed boundary; consecutive points (and last-to-first) are 8-connected.
struct Contour {
  std::vector<Point> points;
  BoundingBox bounds() const;
};

struct CircleHypothesis {
  double cx = 0;
  double cy = 0;
  double r = 0;
  double votes = 0;
};

struct PupilDetection {
  CircleHypothesis circle;
  std::int64_t frame_t_mid = 0;
};

/// Binary activity map: 255 wherever either polarity fired.
GrayImage to_gray(const EventFrame& frame);

/// Square max filter with the window clamped to the image.
GrayImage dilate(const GrayImage& img, int kernel, int iterations = 1);

/// Gaussian blur, Sobel gradients, 4-direction non-maximum suppression and
/// 8-connected hysteresis. Output pixels are 0 or 255.
GrayImage canny(const GrayImage& img, double sigma, double low, double high);

/// Outer boundary of every 8-connected foreground component, by Moore
/// neighbour tracing. Components yielding fewer than 4 points are dropped.
std::vector<Contour> find_contours(const GrayImage& edges);

/// Gradient-directed 3-D Hough transform over (cx, cy, r) at 1 px resolution.
/// Each edge pixel votes along its local normal in both senses for every
/// radius in [r_min, r_max]. A candidate needs vote_threshold * 2*pi*r votes;
/// candidates whose centers are closer than r_min are merged. Sorted by votes.
std::vector<CircleHypothesis> hough_circles(const GrayImage& edges, int r_min, int r_max,
                                            double vote_threshold);

/// Area, aspect-ratio and border checks; returns the strongest survivor.
std::optional<CircleHypothesis> roi_filter(std::span<const CircleHypothesis> candidates,
                                           std::span<const Contour> contours,
                                           const PipelineConfig& config, int width, int height);

/// Intermediate images of one segmentation run, for inspection and dumps.
struct SegmentationTrace {
  GrayImage gray;
  GrayImage dilated;
  GrayImage edges;
  std::vector<Contour> contours;
  std::vector<CircleHypothesis> candidates;
};

std::optional<PupilDetection> segment_pupil(const EventFrame& frame, const PipelineConfig& config,
                                            SegmentationTrace* trace = nullptr);

/// `frame_idx,t_mid_us,cx,cy,r,votes`; missed frames carry NA in the circle fields.
struct DetectionRow {
  std::size_t frame_idx = 0;
  std::int64_t t_mid = 0;
  std::optional<CircleHypothesis> circle;
};

void write_detections(std::span<const DetectionRow> rows, const std::filesystem::path& path);
std::vector<DetectionRow> read_detections(const std::filesystem::path& path);

}  // namespace evpupil
