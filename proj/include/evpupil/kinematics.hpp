#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "evpupil/config.hpp"
#include "evpupil/segmentation.hpp"
#include "evpupil/tracking.hpp"

namespace evpupil {

/// Units: t in us, position in px, velocity in px/ms, acceleration in px/ms^2.
struct KinematicSample {
  std::int64_t t = 0;
  double x = 0, y = 0;
  double vx = 0, vy = 0;
  double ax = 0, ay = 0;
  bool observed = true;  // false when the tracker ran predict-only
};

/// Per frame: (x, y, vx, vy, ax, ay), oldest frame first.
inline constexpr int kValuesPerFrame = 6;

struct FeatureVector {
  std::vector<double> values;
  std::string user;
  int session = 0;
  std::size_t window_idx = 0;
  std::int64_t t_start = 0;
  std::int64_t t_end = 0;
};

struct TimedPoint {
  std::int64_t t = 0;
  double x = 0, y = 0;
};

/// (x_i - x_{i-1}) / dt in px/ms. Throws ArgumentError when dt <= 0.
std::pair<double, double> velocity(const TimedPoint& prev, const TimedPoint& curr);

/// Same divided difference applied to velocities, in px/ms^2.
std::pair<double, double> acceleration(const TimedPoint& prev_v, const TimedPoint& curr_v);

struct TrackPoint {
  std::int64_t t = 0;
  Center center;
  bool observed = true;
};

/// Runs the Kalman filter over per-frame detections (absent = missed frame).
/// Frames before the first detection produce no track point.
std::vector<TrackPoint> track_detections(std::span<const DetectionRow> detections, const KalmanParams& params);

/// Velocity/acceleration from consecutive track points. The first velocity and
/// the first two accelerations are zero.
std::vector<KinematicSample> kinematic_samples(std::span<const TrackPoint> track);

/// Sliding windows of M samples advancing by `stride`. Windows containing a run
/// of more than `max_consecutive_misses` unobserved samples are skipped; the
/// window index still advances so indices map back to sample offsets.
std::vector<FeatureVector> window_features(std::span<const KinematicSample> samples, int M, int stride = 1,
                                           int max_consecutive_misses = 3);

void write_kinematics(std::span<const KinematicSample> samples, const std::filesystem::path& path);
std::vector<KinematicSample> read_kinematics(const std::filesystem::path& path);

/// `user,session,window_idx,t_start_us,t_end_us,f0..f{n-1}`
void write_features(std::span<const FeatureVector> features, const std::filesystem::path& path);
std::vector<FeatureVector> read_features(const std::filesystem::path& path);

}  // namespace evpupil
