#include "evpupil/kinematics.hpp"

#include <fstream>
#include <sstream>

#include <fmt/format.h>

#include "evpupil/errors.hpp"

namespace evpupil {

std::pair<double, double> velocity(const TimedPoint& prev, const TimedPoint& curr) {
  if (curr.t <= prev.t) throw ArgumentError("velocity: timestamps must strictly increase");
  const double dt_ms = static_cast<double>(curr.t - prev.t) / 1000.0;
  return {(curr.x - prev.x) / dt_ms, (curr.y - prev.y) / dt_ms};
}

std::pair<double, double> acceleration(const TimedPoint& prev_v, const TimedPoint& curr_v) {
  if (curr_v.t <= prev_v.t) throw ArgumentError("acceleration: timestamps must strictly increase");
  const double dt_ms = static_cast<double>(curr_v.t - prev_v.t) / 1000.0;
  return {(curr_v.x - prev_v.x) / dt_ms, (curr_v.y - prev_v.y) / dt_ms};
}

std::vector<TrackPoint> track_detections(std::span<const DetectionRow> detections, const KalmanParams& params) {
  std::vector<TrackPoint> track;
  KalmanState state(params);
  for (const DetectionRow& row : detections) {
    std::optional<Center> obs;
    if (row.circle) obs = Center{row.circle->cx, row.circle->cy};
    // Frames sharing a timestamp with the previous one carry no new timing information.
    if (state.initialized && row.t_mid <= state.last_t) continue;
    auto [next, center] = kalman_step(state, row.t_mid, obs);
    state = next;
    if (center) track.push_back({row.t_mid, *center, obs.has_value()});
  }
  return track;
}

std::vector<KinematicSample> kinematic_samples(std::span<const TrackPoint> track) {
  std::vector<KinematicSample> out;
  out.reserve(track.size());
  for (std::size_t i = 0; i < track.size(); ++i) {
    KinematicSample s;
    s.t = track[i].t;
    s.x = track[i].center.x;
    s.y = track[i].center.y;
    s.observed = track[i].observed;
    if (i >= 1) {
      const TimedPoint prev{track[i - 1].t, track[i - 1].center.x, track[i - 1].center.y};
      std::tie(s.vx, s.vy) = velocity(prev, {s.t, s.x, s.y});
    }
    if (i >= 2) {
      const KinematicSample& p = out.back();
      std::tie(s.ax, s.ay) = acceleration({p.t, p.vx, p.vy}, {s.t, s.vx, s.vy});
    }
    out.push_back(s);
  }
  return out;
}

std::vector<FeatureVector> window_features(std::span<const KinematicSample> samples, int M, int stride,
                                           int max_consecutive_misses) {
  if (M < 2) throw ArgumentError("window length must be >= 2");
  if (stride < 1) throw ArgumentError("window stride must be >= 1");
  std::vector<FeatureVector> out;
  const auto m = static_cast<std::size_t>(M);
  if (samples.size() < m) return out;
  for (std::size_t start = 0, idx = 0; start + m <= samples.size(); start += static_cast<std::size_t>(stride), ++idx) {
    int run = 0, worst = 0;
    for (std::size_t i = start; i < start + m; ++i) {
      run = samples[i].observed ? 0 : run + 1;
      worst = std::max(worst, run);
    }
    if (worst > max_consecutive_misses) continue;
    FeatureVector v;
    v.values.reserve(m * kValuesPerFrame);
    for (std::size_t i = start; i < start + m; ++i) {
      const KinematicSample& s = samples[i];
      v.values.insert(v.values.end(), {s.x, s.y, s.vx, s.vy, s.ax, s.ay});
    }
    v.window_idx = idx;
    v.t_start = samples[start].t;
    v.t_end = samples[start + m - 1].t;
    out.push_back(std::move(v));
  }
  return out;
}

void write_kinematics(std::span<const KinematicSample> samples, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "t_us,x,y,vx,vy,ax,ay,observed\n";
  for (const KinematicSample& s : samples) {
    out << fmt::format("{},{},{},{},{},{},{},{}\n", s.t, s.x, s.y, s.vx, s.vy, s.ax, s.ay, s.observed ? 1 : 0);
  }
  if (!out) throw IoError("write failure on " + path.string());
}

namespace {

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> f;
  std::stringstream ss(line);
  for (std::string cell; std::getline(ss, cell, ',');) f.push_back(cell);
  if (!line.empty() && line.back() == ',') f.emplace_back();
  return f;
}

}  // namespace

std::vector<KinematicSample> read_kinematics(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<KinematicSample> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line_no == 1 || line.empty()) continue;
    const auto f = split_csv(line);
    if (f.size() != 8) throw ParseError(line_no, "expected 8 kinematic fields");
    try {
      out.push_back({std::stoll(f[0]), std::stod(f[1]), std::stod(f[2]), std::stod(f[3]), std::stod(f[4]),
                     std::stod(f[5]), std::stod(f[6]), f[7] == "1"});
    } catch (const std::logic_error&) {
      throw ParseError(line_no, "malformed kinematic row");
    }
  }
  return out;
}

void write_features(std::span<const FeatureVector> features, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  const std::size_t dims = features.empty() ? 60 : features.front().values.size();
  std::string header = "user,session,window_idx,t_start_us,t_end_us";
  for (std::size_t i = 0; i < dims; ++i) header += fmt::format(",f{}", i);
  out << header << '\n';
  std::string row;
  for (const FeatureVector& v : features) {
    row = fmt::format("{},{},{},{},{}", v.user, v.session, v.window_idx, v.t_start, v.t_end);
    for (double x : v.values) row += fmt::format(",{}", x);
    out << row << '\n';
  }
  if (!out) throw IoError("write failure on " + path.string());
}

std::vector<FeatureVector> read_features(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<FeatureVector> out;
  std::string line;
  std::size_t line_no = 0;
  std::size_t dims = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto f = split_csv(line);
    if (line_no == 1) {
      if (f.size() < 5) throw ParseError(1, "feature header too short");
      dims = f.size() - 5;
      continue;
    }
    if (f.size() != dims + 5) throw ParseError(line_no, "feature row width does not match header");
    try {
      FeatureVector v;
      v.user = f[0];
      v.session = std::stoi(f[1]);
      v.window_idx = std::stoull(f[2]);
      v.t_start = std::stoll(f[3]);
      v.t_end = std::stoll(f[4]);
      v.values.reserve(dims);
      for (std::size_t i = 0; i < dims; ++i) v.values.push_back(std::stod(f[5 + i]));
      out.push_back(std::move(v));
    } catch (const std::logic_error&) {
      throw ParseError(line_no, "malformed feature row");
    }
  }
  return out;
}

}  // namespace evpupil
