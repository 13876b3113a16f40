#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <variant>
#include <vector>

#include "evpupil/event.hpp"
#include "evpupil/metrics.hpp"
#include "evpupil/tracking.hpp"

namespace evpupil {

struct SceneModel {
  int width = kDefaultSensorWidth;
  int height = kDefaultSensorHeight;
  double bg_level = 160;
  double iris_level = 100;
  double pupil_level = 30;
  Center iris_center{kDefaultSensorWidth / 2.0, kDefaultSensorHeight / 2.0};
  double iris_radius = 70;
  double pupil_radius = 25;
  double edge_softness = 1.0;

  void validate() const;
};

struct Fixation {
  double duration_ms = 300;
  double jitter_amplitude = 0;  // px, circular drift radius
  double jitter_freq = 0;       // Hz
  double jitter_phase = 0;      // rad
};

/// Minimum-jerk move to `target`; its duration follows from the peak velocity
/// (peak = 1.875 * distance / duration).
struct Saccade {
  Center target;
  double peak_velocity = 1.5;  // px/ms
};

/// x(t) = x0 + A sin(2 pi f t) cos(dir), y(t) = y0 + A sin(2 pi f t) sin(dir)
struct Pursuit {
  double amplitude = 30;  // px
  double frequency = 1;   // Hz
  double duration_ms = 1000;
  double direction = 0;  // rad
};

using TrajectorySegment = std::variant<Fixation, Saccade, Pursuit>;

struct TrajectorySpec {
  Center start{kDefaultSensorWidth / 2.0, kDefaultSensorHeight / 2.0};
  std::vector<TrajectorySegment> segments;

  /// Total duration in microseconds.
  std::int64_t duration_us() const;
};

struct PupilKinematics {
  double cx = 0, cy = 0;  // px
  double vx = 0, vy = 0;  // px/ms
  double ax = 0, ay = 0;  // px/ms^2
};

struct SegmentSpan {
  std::int64_t t_begin = 0;
  std::int64_t t_end = 0;
  std::size_t index = 0;
};

/// Analytic center, velocity and acceleration. Throws ArgumentError when t is
/// outside [0, duration].
PupilKinematics pupil_center(const TrajectorySpec& spec, double t_us);

/// Time span of every segment, in order.
std::vector<SegmentSpan> segment_spans(const TrajectorySpec& spec);

/// Throws ValidationError when the pupil would come within pupil_radius + 2 px
/// of a border.
void validate_trajectory(const TrajectorySpec& spec, const SceneModel& scene);

/// Continuous intensity in [0, 255]: pupil disc over iris disc over background,
/// each boundary a linear ramp `edge_softness` px wide.
double render_intensity(const SceneModel& scene, Center center, double x, double y);

struct EventCameraModel {
  double contrast_threshold = 0.15;  // log-intensity units
  std::int64_t refractory_us = 100;
  std::int64_t sim_dt_us = 100;
  std::int64_t timestamp_jitter_us = 0;

  void validate() const;
};

/// Per-pixel contrast-threshold state.
struct PixelState {
  double log_ref = 0;
  std::int64_t last_event_t = INT64_MIN;
};

/// Emits events for one pixel that now sees log intensity `log_i` at time t.
/// One event per threshold crossing; a crossing that falls inside the
/// refractory period stays pending (the reference does not move) and fires at
/// a later call. Returns the number emitted; `polarity` receives their sign.
int emit_pixel_events(PixelState& state, double log_i, std::int64_t t, const EventCameraModel& cam,
                      int& polarity);

class GroundTruth {
 public:
  GroundTruth() = default;
  GroundTruth(SceneModel scene, TrajectorySpec spec) : scene_(std::move(scene)), spec_(std::move(spec)) {}

  PupilKinematics at(double t_us) const { return pupil_center(spec_, t_us); }
  Mask mask(double t_us) const;
  const SceneModel& scene() const { return scene_; }
  const TrajectorySpec& trajectory() const { return spec_; }

  /// `t_us,cx,cy,vx,vy,ax,ay,r` at 1 ms cadence.
  void write_csv(const std::filesystem::path& path) const;

 private:
  SceneModel scene_;
  TrajectorySpec spec_;
};

struct SyntheticRecording {
  EventStream stream;
  GroundTruth truth;
};

SyntheticRecording generate_events(const SceneModel& scene, const TrajectorySpec& spec,
                                   const EventCameraModel& cam, std::uint64_t seed);

struct IdentityParams {
  double saccade_peak_velocity = 1.5;  // px/ms
  double jitter_amplitude = 1.0;       // px
  double jitter_freq = 2.0;            // Hz
  double pursuit_gain = 1.0;
  Center placement;  // px, where the eye sits in the frame relative to center
};

struct IdentityProfile {
  IdentityParams params;
  std::vector<TrajectorySpec> sessions;  // two sessions, different random phases
};

struct PopulationOptions {
  double session_ms = 8000;
  int sessions = 2;
};

/// Relative gap left empty between neighbouring parameter cells.
inline constexpr double kCellGapFraction = 0.3;

/// Per-identity kinematic parameters drawn from non-overlapping cells, plus
/// session trajectories built from them. Identity names are "u00", "u01", ...
std::map<std::string, IdentityProfile> make_identity_population(int n_users, std::uint64_t seed,
                                                                const PopulationOptions& options = {},
                                                                const SceneModel& scene = {});

/// Named scenario trajectories used by tests, benchmarks and the CLI.
TrajectorySpec mixed_motion_trajectory(std::uint64_t seed, double duration_ms = 3000, const SceneModel& scene = {});
TrajectorySpec two_phase_trajectory(std::uint64_t seed, double phase_ms = 1500, const SceneModel& scene = {});
TrajectorySpec pursuit_trajectory(double amplitude, double frequency, double duration_ms, const SceneModel& scene = {});

}  // namespace evpupil
