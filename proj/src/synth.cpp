#include "evpupil/synth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>

#include <fmt/format.h>

#include "evpupil/errors.hpp"
#include "evpupil/rng.hpp"

namespace evpupil {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

double saccade_duration_ms(Center from, const Saccade& s) {
  const double dist = std::hypot(s.target.x - from.x, s.target.y - from.y);
  if (dist == 0) return 0;
  if (s.peak_velocity <= 0) throw ArgumentError("saccade peak velocity must be > 0");
  return 1.875 * dist / s.peak_velocity;
}

double segment_duration_ms(Center from, const TrajectorySegment& seg) {
  return std::visit(Overloaded{
                        [](const Fixation& f) { return f.duration_ms; },
                        [&](const Saccade& s) { return saccade_duration_ms(from, s); },
                        [](const Pursuit& p) { return p.duration_ms; },
                    },
                    seg);
}

// Kinematics within a segment at local time tau_ms (position relative to `from`).
PupilKinematics evaluate(Center from, const TrajectorySegment& seg, double tau_ms) {
  return std::visit(
      Overloaded{
          [&](const Fixation& f) {
            const double w = kTwoPi * f.jitter_freq / 1000.0;  // rad/ms
            const double ph = w * tau_ms + f.jitter_phase;
            const double a = f.jitter_amplitude;
            return PupilKinematics{from.x + a * (std::sin(ph) - std::sin(f.jitter_phase)),
                                   from.y + a * (std::cos(ph) - std::cos(f.jitter_phase)),
                                   a * w * std::cos(ph),
                                   -a * w * std::sin(ph),
                                   -a * w * w * std::sin(ph),
                                   -a * w * w * std::cos(ph)};
          },
          [&](const Saccade& s) {
            const double T = saccade_duration_ms(from, s);
            const double dx = s.target.x - from.x, dy = s.target.y - from.y;
            if (T == 0) return PupilKinematics{from.x, from.y, 0, 0, 0, 0};
            const double u = std::clamp(tau_ms / T, 0.0, 1.0);
            const double pos = u * u * u * (10 - 15 * u + 6 * u * u);
            const double vel = 30 * u * u * (1 - 2 * u + u * u) / T;
            const double acc = (60 * u - 180 * u * u + 120 * u * u * u) / (T * T);
            return PupilKinematics{from.x + dx * pos, from.y + dy * pos, dx * vel, dy * vel, dx * acc, dy * acc};
          },
          [&](const Pursuit& p) {
            const double w = kTwoPi * p.frequency / 1000.0;
            const double c = std::cos(p.direction), sn = std::sin(p.direction);
            const double s = p.amplitude * std::sin(w * tau_ms);
            const double v = p.amplitude * w * std::cos(w * tau_ms);
            const double a = -p.amplitude * w * w * std::sin(w * tau_ms);
            return PupilKinematics{from.x + s * c, from.y + s * sn, v * c, v * sn, a * c, a * sn};
          },
      },
      seg);
}

struct PlannedSegment {
  Center from;
  double begin_ms;
  double duration_ms;
};

std::vector<PlannedSegment> plan(const TrajectorySpec& spec) {
  std::vector<PlannedSegment> out;
  out.reserve(spec.segments.size());
  Center pos = spec.start;
  double t = 0;
  for (const TrajectorySegment& seg : spec.segments) {
    const double d = segment_duration_ms(pos, seg);
    if (d < 0) throw ArgumentError("segment duration must be >= 0");
    out.push_back({pos, t, d});
    const PupilKinematics end = evaluate(pos, seg, d);
    pos = {end.cx, end.cy};
    t += d;
  }
  return out;
}

double total_ms(const std::vector<PlannedSegment>& p) {
  return p.empty() ? 0.0 : p.back().begin_ms + p.back().duration_ms;
}

PupilKinematics evaluate_plan(const TrajectorySpec& spec, const std::vector<PlannedSegment>& p, double t_us) {
  const double t_ms = t_us / 1000.0;
  if (p.empty()) return PupilKinematics{spec.start.x, spec.start.y, 0, 0, 0, 0};
  // Segment i owns [begin, begin + duration); the final instant belongs to the last segment.
  auto it = std::upper_bound(p.begin(), p.end(), t_ms,
                             [](double t, const PlannedSegment& s) { return t < s.begin_ms; });
  std::size_t i = it == p.begin() ? 0 : static_cast<std::size_t>(it - p.begin()) - 1;
  while (i > 0 && p[i].duration_ms == 0 && t_ms >= total_ms(p)) --i;
  return evaluate(p[i].from, spec.segments[i], t_ms - p[i].begin_ms);
}

}  // namespace

void SceneModel::validate() const {
  if (width <= 0 || height <= 0) throw ValidationError("scene geometry must be positive");
  if (!(pupil_level < iris_level && iris_level < bg_level)) {
    throw ValidationError("scene requires pupil_level < iris_level < bg_level");
  }
  if (!(pupil_radius > 0 && pupil_radius < iris_radius)) throw ValidationError("scene requires 0 < pupil_radius < iris_radius");
  if (edge_softness < 0) throw ValidationError("edge_softness must be >= 0");
}

void EventCameraModel::validate() const {
  if (!(contrast_threshold > 0)) throw ValidationError("contrast threshold must be > 0");
  if (sim_dt_us < 1) throw ValidationError("sim_dt must be >= 1 us");
  if (refractory_us < 0 || timestamp_jitter_us < 0) throw ValidationError("refractory and jitter must be >= 0");
}

std::int64_t TrajectorySpec::duration_us() const { return std::llround(total_ms(plan(*this)) * 1000.0); }

std::vector<SegmentSpan> segment_spans(const TrajectorySpec& spec) {
  std::vector<SegmentSpan> out;
  const auto p = plan(spec);
  for (std::size_t i = 0; i < p.size(); ++i) {
    out.push_back({std::llround(p[i].begin_ms * 1000.0), std::llround((p[i].begin_ms + p[i].duration_ms) * 1000.0), i});
  }
  return out;
}

PupilKinematics pupil_center(const TrajectorySpec& spec, double t_us) {
  const auto p = plan(spec);
  const double total_us = total_ms(p) * 1000.0;
  if (t_us < 0 || t_us > total_us + 1e-6) {
    throw ArgumentError(fmt::format("t = {} us outside trajectory [0, {}]", t_us, total_us));
  }
  return evaluate_plan(spec, p, t_us);
}

void validate_trajectory(const TrajectorySpec& spec, const SceneModel& scene) {
  const auto p = plan(spec);
  const double margin = scene.pupil_radius + 2.0;
  const double total = total_ms(p);
  auto check = [&](double t_ms) {
    const PupilKinematics k = evaluate_plan(spec, p, t_ms * 1000.0);
    if (k.cx < margin || k.cy < margin || k.cx > scene.width - 1 - margin || k.cy > scene.height - 1 - margin) {
      throw ValidationError(fmt::format("pupil center ({:.1f}, {:.1f}) at t = {:.1f} ms is within {} px of the border",
                                        k.cx, k.cy, t_ms, margin));
    }
  };
  for (double t = 0; t < total; t += 1.0) check(t);
  check(total);
}

double render_intensity(const SceneModel& scene, Center center, double x, double y) {
  const double rho = std::hypot(x - center.x, y - center.y);
  auto coverage = [&](double radius) {
    if (scene.edge_softness <= 0) return rho <= radius ? 1.0 : 0.0;
    return std::clamp((radius - rho) / scene.edge_softness + 0.5, 0.0, 1.0);
  };
  const double iris = coverage(scene.iris_radius);
  const double pupil = coverage(scene.pupil_radius);
  return scene.bg_level + iris * (scene.iris_level - scene.bg_level) + pupil * (scene.pupil_level - scene.iris_level);
}

int emit_pixel_events(PixelState& state, double log_i, std::int64_t t, const EventCameraModel& cam, int& polarity) {
  int count = 0;
  for (;;) {
    const double diff = log_i - state.log_ref;
    if (std::abs(diff) < cam.contrast_threshold) break;
    if (state.last_event_t != INT64_MIN && t - state.last_event_t < cam.refractory_us) break;
    polarity = diff > 0 ? 1 : -1;
    state.log_ref += polarity * cam.contrast_threshold;
    state.last_event_t = t;
    ++count;
  }
  return count;
}

Mask GroundTruth::mask(double t_us) const {
  const PupilKinematics k = at(t_us);
  return rasterize_circle(k.cx, k.cy, scene_.pupil_radius, scene_.width, scene_.height);
}

void GroundTruth::write_csv(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "t_us,cx,cy,vx,vy,ax,ay,r\n";
  const std::int64_t total = spec_.duration_us();
  for (std::int64_t t = 0; t <= total; t += 1000) {
    const PupilKinematics k = at(static_cast<double>(t));
    out << fmt::format("{},{},{},{},{},{},{},{}\n", t, k.cx, k.cy, k.vx, k.vy, k.ax, k.ay, scene_.pupil_radius);
  }
  if (!out) throw IoError("write failure on " + path.string());
}

SyntheticRecording generate_events(const SceneModel& scene, const TrajectorySpec& spec, const EventCameraModel& cam,
                                   std::uint64_t seed) {
  scene.validate();
  cam.validate();
  validate_trajectory(spec, scene);

  const int w = scene.width, h = scene.height;
  const auto p = plan(spec);
  const double total_us = total_ms(p) * 1000.0;
  const auto n_px = static_cast<std::size_t>(w) * static_cast<std::size_t>(h);

  // The sensor starts adapted to the background, so every pixel covered by the
  // eye at t = 0 fires while it settles.
  std::vector<PixelState> pixels(n_px, PixelState{std::log(scene.bg_level), INT64_MIN});
  const PupilKinematics k0 = evaluate_plan(spec, p, 0.0);
  std::vector<std::int64_t> stamp(n_px, -1);
  std::vector<std::uint32_t> pending, next_pending;
  for (std::uint32_t idx = 0; idx < n_px; ++idx) {
    const double i0 = render_intensity(scene, {k0.cx, k0.cy}, idx % static_cast<std::uint32_t>(w),
                                       idx / static_cast<std::uint32_t>(w));
    if (std::abs(std::log(std::max(1.0, i0)) - pixels[idx].log_ref) >= cam.contrast_threshold) pending.push_back(idx);
  }
  std::vector<Event> events;
  std::vector<Event> step_events;
  Rng rng(derive_seed(seed, "timestamp_jitter"));

  Center prev{k0.cx, k0.cy};
  const auto steps = static_cast<std::int64_t>(std::floor(total_us / static_cast<double>(cam.sim_dt_us)));
  for (std::int64_t k = 1; k <= steps; ++k) {
    const std::int64_t t = k * cam.sim_dt_us;
    const PupilKinematics kin = evaluate_plan(spec, p, static_cast<double>(t));
    const Center cur{kin.cx, kin.cy};
    const double moved = std::hypot(cur.x - prev.x, cur.y - prev.y);
    step_events.clear();
    next_pending.clear();

    auto visit = [&](std::uint32_t idx) {
      if (stamp[idx] == k) return;
      stamp[idx] = k;
      const int x = static_cast<int>(idx % static_cast<std::uint32_t>(w));
      const int y = static_cast<int>(idx / static_cast<std::uint32_t>(w));
      const double log_i = std::log(std::max(1.0, render_intensity(scene, cur, x, y)));
      PixelState& ps = pixels[idx];
      int polarity = 0;
      const int n = emit_pixel_events(ps, log_i, t, cam, polarity);
      for (int i = 0; i < n; ++i) {
        step_events.push_back({t, static_cast<std::uint16_t>(x), static_cast<std::uint16_t>(y),
                               static_cast<std::int8_t>(polarity)});
      }
      if (std::abs(log_i - ps.log_ref) >= cam.contrast_threshold) next_pending.push_back(idx);
    };

    if (moved > 0) {
      // Only pixels near a disc boundary at either position can change intensity.
      for (const double radius : {scene.pupil_radius, scene.iris_radius}) {
        const double r_out = radius + scene.edge_softness / 2 + moved + 1e-6;
        const double r_in = std::max(0.0, radius - scene.edge_softness / 2 - moved - 1e-6);
        const int y0 = std::max(0, static_cast<int>(std::floor(prev.y - r_out)));
        const int y1 = std::min(h - 1, static_cast<int>(std::ceil(prev.y + r_out)));
        for (int y = y0; y <= y1; ++y) {
          const double dy = y - prev.y;
          const double ho = std::sqrt(std::max(0.0, r_out * r_out - dy * dy));
          auto run = [&](double xa, double xb) {
            const int xs = std::max(0, static_cast<int>(std::floor(xa)));
            const int xe = std::min(w - 1, static_cast<int>(std::ceil(xb)));
            for (int x = xs; x <= xe; ++x) visit(static_cast<std::uint32_t>(y * w + x));
          };
          if (std::abs(dy) < r_in) {
            const double hi = std::sqrt(r_in * r_in - dy * dy);
            run(prev.x - ho, prev.x - hi);
            run(prev.x + hi, prev.x + ho);
          } else {
            run(prev.x - ho, prev.x + ho);
          }
        }
      }
    }
    for (const std::uint32_t idx : pending) visit(idx);
    pending.swap(next_pending);

    std::sort(step_events.begin(), step_events.end(),
              [](const Event& a, const Event& b) { return a.y != b.y ? a.y < b.y : a.x < b.x; });
    if (cam.timestamp_jitter_us > 0) {
      const auto span = static_cast<std::uint64_t>(std::min(cam.timestamp_jitter_us, cam.sim_dt_us - 1) + 1);
      for (Event& e : step_events) e.t += static_cast<std::int64_t>(uniform_index(rng, span));
    }
    events.insert(events.end(), step_events.begin(), step_events.end());
    prev = cur;
  }
  if (cam.timestamp_jitter_us > 0) {
    std::stable_sort(events.begin(), events.end(), [](const Event& a, const Event& b) { return a.t < b.t; });
  }

  SyntheticRecording rec;
  rec.stream.width = w;
  rec.stream.height = h;
  rec.stream.events = std::move(events);
  rec.truth = GroundTruth(scene, spec);
  return rec;
}

namespace {

struct ParamRange {
  double lo, hi;
};

constexpr ParamRange kSaccadeVelocity{0.6, 2.0};
constexpr ParamRange kJitterAmplitude{1.0, 4.0};
constexpr ParamRange kJitterFreq{1.0, 4.0};
constexpr ParamRange kPursuitGain{0.5, 1.5};
constexpr double kPlacementRange = 8.0;  // px
constexpr double kRefitNoise = 1.0;      // px, per session

double draw_in_cell(Rng& rng, ParamRange range, int cell, int cells) {
  const double width = (range.hi - range.lo) / cells;
  const double inner = uniform(rng, kCellGapFraction / 2, 1.0 - kCellGapFraction / 2);
  return range.lo + width * (cell + inner);
}

std::vector<int> permutation(Rng& rng, int n) {
  std::vector<int> v(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) v[static_cast<std::size_t>(i)] = i;
  for (int i = n - 1; i > 0; --i) {
    const auto j = static_cast<std::size_t>(uniform_index(rng, static_cast<std::uint64_t>(i) + 1));
    std::swap(v[static_cast<std::size_t>(i)], v[j]);
  }
  return v;
}

struct Bounds {
  double x0, x1, y0, y1;
};

Bounds safe_region(const SceneModel& scene, double extra) {
  const double m = scene.pupil_radius + 2.0 + extra;
  return {m, scene.width - 1 - m, m, scene.height - 1 - m};
}

Center random_target(Rng& rng, Center from, const Bounds& b, double min_dist, double max_dist) {
  for (int attempt = 0; attempt < 64; ++attempt) {
    const double angle = uniform(rng, 0, kTwoPi);
    const double dist = uniform(rng, min_dist, max_dist);
    const Center c{from.x + dist * std::cos(angle), from.y + dist * std::sin(angle)};
    if (c.x >= b.x0 && c.x <= b.x1 && c.y >= b.y0 && c.y <= b.y1) return c;
  }
  return {(b.x0 + b.x1) / 2, (b.y0 + b.y1) / 2};
}

// Largest pursuit amplitude (up to `wanted`) that keeps the sweep inside the region.
double fit_pursuit(Center from, double direction, double wanted, const Bounds& b) {
  const double c = std::cos(direction), s = std::sin(direction);
  double a = wanted;
  auto inside = [&](double amp) {
    for (const double sign : {1.0, -1.0}) {
      const double x = from.x + sign * amp * c, y = from.y + sign * amp * s;
      if (x < b.x0 || x > b.x1 || y < b.y0 || y > b.y1) return false;
    }
    return true;
  };
  while (a > 1.0 && !inside(a)) a *= 0.9;
  return inside(a) ? a : 0.0;
}

// Every identity and session follows one stimulus script: fixation targets on
// a shared 3x3 grid and pursuits at a fixed frequency, in a fixed order. Only
// reaction-time jitter and the phases vary, so identity shows in the
// kinematics alone.
constexpr double kGridStepX = 60;
constexpr double kGridStepY = 40;
constexpr double kPursuitFreq = 0.5;      // Hz
constexpr double kPursuitAmplitude = 30;  // px at gain 1
constexpr std::uint64_t kStimulusSeed = 0x5eed;

struct StimulusStep {
  double dwell_ms;
  bool pursuit;
  double direction;
  int target;
};

std::vector<StimulusStep> stimulus_script(double session_ms) {
  Rng rng(derive_seed(kStimulusSeed, "stimulus"));
  std::vector<StimulusStep> steps;
  int at = 4;
  for (double t = 0; t < session_ms;) {
    StimulusStep s{uniform(rng, 400, 900), false, 0.0, at};
    if (uniform01(rng) < 0.25) {
      s.pursuit = true;
      s.direction = uniform01(rng) < 0.5 ? 0.0 : std::numbers::pi / 2;
      t += 1000.0 / kPursuitFreq;
    } else {
      int next = at;
      while (next == at) next = static_cast<int>(uniform_index(rng, 9));
      s.target = at = next;
    }
    t += s.dwell_ms + 60;
    steps.push_back(s);
  }
  return steps;
}

TrajectorySpec session_trajectory(const IdentityParams& ip, Rng& rng, double session_ms, const SceneModel& scene) {
  TrajectorySpec spec;
  const Bounds region = safe_region(scene, 2.0 * ip.jitter_amplitude + 2.0);
  const Center mid{scene.width / 2.0 + ip.placement.x + uniform(rng, -kRefitNoise, kRefitNoise),
                   scene.height / 2.0 + ip.placement.y + uniform(rng, -kRefitNoise, kRefitNoise)};
  auto grid = [&](int i) { return Center{mid.x + kGridStepX * (i % 3 - 1), mid.y + kGridStepY * (i / 3 - 1)}; };
  spec.start = grid(4);
  Center pos = spec.start;
  double t = 0;
  auto push = [&](TrajectorySegment seg) {
    const double d = segment_duration_ms(pos, seg);
    const PupilKinematics k = evaluate(pos, seg, d);
    t += d;
    pos = {k.cx, k.cy};
    spec.segments.push_back(std::move(seg));
  };
  // Saccades land on the drift orbit, so each fixation circles its target.
  double phase = uniform(rng, 0, kTwoPi);
  for (const StimulusStep& step : stimulus_script(session_ms)) {
    if (t >= session_ms) break;
    push(Fixation{step.dwell_ms + uniform(rng, -50, 50), ip.jitter_amplitude, ip.jitter_freq, phase});
    phase = uniform(rng, 0, kTwoPi);
    if (step.pursuit) {
      const double amp = fit_pursuit(pos, step.direction, kPursuitAmplitude * ip.pursuit_gain, region);
      if (amp > 0) push(Pursuit{amp, kPursuitFreq, 1000.0 / kPursuitFreq, step.direction});
    } else {
      const Center g = grid(step.target);
      push(Saccade{{g.x + ip.jitter_amplitude * std::sin(phase), g.y + ip.jitter_amplitude * std::cos(phase)},
                   ip.saccade_peak_velocity});
    }
  }
  return spec;
}

}  // namespace

std::map<std::string, IdentityProfile> make_identity_population(int n_users, std::uint64_t seed,
                                                                const PopulationOptions& options,
                                                                const SceneModel& scene) {
  if (n_users < 2) throw ArgumentError("identity population needs at least 2 users");
  Rng cell_rng(derive_seed(seed, "identity_cells"));
  const auto p_vel = permutation(cell_rng, n_users);
  const auto p_amp = permutation(cell_rng, n_users);
  const auto p_freq = permutation(cell_rng, n_users);
  const auto p_gain = permutation(cell_rng, n_users);

  std::map<std::string, IdentityProfile> out;
  for (int u = 0; u < n_users; ++u) {
    const std::string name = fmt::format("u{:02}", u);
    Rng rng(derive_seed(seed, "identity:" + name));
    IdentityProfile profile;
    const auto uu = static_cast<std::size_t>(u);
    profile.params.saccade_peak_velocity = draw_in_cell(rng, kSaccadeVelocity, p_vel[uu], n_users);
    profile.params.jitter_amplitude = draw_in_cell(rng, kJitterAmplitude, p_amp[uu], n_users);
    profile.params.jitter_freq = draw_in_cell(rng, kJitterFreq, p_freq[uu], n_users);
    profile.params.pursuit_gain = draw_in_cell(rng, kPursuitGain, p_gain[uu], n_users);
    profile.params.placement = {uniform(rng, -kPlacementRange, kPlacementRange),
                                uniform(rng, -kPlacementRange, kPlacementRange)};
    for (int s = 0; s < options.sessions; ++s) {
      Rng session_rng(derive_seed(seed, fmt::format("session:{}:{}", name, s)));
      profile.sessions.push_back(session_trajectory(profile.params, session_rng, options.session_ms, scene));
    }
    out.emplace(name, std::move(profile));
  }
  return out;
}

TrajectorySpec mixed_motion_trajectory(std::uint64_t seed, double duration_ms, const SceneModel& scene) {
  Rng rng(derive_seed(seed, "mixed_motion"));
  const Bounds region = safe_region(scene, 4.0);
  TrajectorySpec spec;
  spec.start = {uniform(rng, region.x0 + 50, region.x1 - 50), uniform(rng, region.y0 + 20, region.y1 - 20)};
  Center pos = spec.start;
  double t = 0;
  while (t < duration_ms) {
    const Fixation f{uniform(rng, 700, 1100), uniform(rng, 0.8, 1.5), uniform(rng, 1.0, 3.0), uniform(rng, 0, kTwoPi)};
    const PupilKinematics end = evaluate(pos, f, f.duration_ms);
    spec.segments.emplace_back(f);
    t += f.duration_ms;
    pos = {end.cx, end.cy};
    if (t >= duration_ms) break;
    const Saccade s{random_target(rng, pos, region, 30, 70), 1.5};
    t += saccade_duration_ms(pos, s);
    pos = s.target;
    spec.segments.emplace_back(s);
  }
  return spec;
}

TrajectorySpec two_phase_trajectory(std::uint64_t seed, double phase_ms, const SceneModel& scene) {
  Rng rng(derive_seed(seed, "two_phase"));
  const Bounds region = safe_region(scene, 4.0);
  TrajectorySpec spec;
  spec.start = {(region.x0 + region.x1) / 2, (region.y0 + region.y1) / 2};
  Center pos = spec.start;
  double t = 0;
  // Phase 1: saccades separated by brief fixations.
  while (t < phase_ms) {
    const Saccade s{random_target(rng, pos, region, 40, 90), 1.5};
    t += saccade_duration_ms(pos, s);
    pos = s.target;
    spec.segments.emplace_back(s);
    const Fixation f{uniform(rng, 20, 60), 0.5, 2.0, uniform(rng, 0, kTwoPi)};
    spec.segments.emplace_back(f);
    t += f.duration_ms;
    const PupilKinematics end = evaluate(pos, f, f.duration_ms);
    pos = {end.cx, end.cy};
  }
  // Phase 2: one long, slowly drifting fixation.
  spec.segments.emplace_back(Fixation{phase_ms, 1.0, 1.0, uniform(rng, 0, kTwoPi)});
  return spec;
}

TrajectorySpec pursuit_trajectory(double amplitude, double frequency, double duration_ms, const SceneModel& scene) {
  TrajectorySpec spec;
  spec.start = {scene.width / 2.0, scene.height / 2.0};
  spec.segments.emplace_back(Pursuit{amplitude, frequency, duration_ms, 0.0});
  return spec;
}

}  // namespace evpupil
