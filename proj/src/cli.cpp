#include "evpupil/cli.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <variant>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <json.hpp>

#include "evpupil/config.hpp"
#include "evpupil/errors.hpp"
#include "evpupil/event_io.hpp"
#include "evpupil/parallel.hpp"
#include "evpupil/pipeline.hpp"
#include "evpupil/rng.hpp"

namespace evpupil::cli {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

template <typename... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};
template <typename... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

struct Common {
  std::string config_path;
  std::uint64_t seed = 0;
  bool seed_given = false;
  int workers = 0;
  std::string out = ".";
};

struct SliceFlags {
  std::string strategy = "adaptive";
  double window_ms = 10;
  std::size_t n_events = 2000;

  SliceOptions options() const {
    SliceOptions o;
    o.strategy = parse_slice_strategy(strategy);
    o.window_us = std::llround(window_ms * 1000.0);
    o.n_events = n_events;
    return o;
  }
};

PipelineConfig resolve_config(const Common& c) {
  PipelineConfig cfg = c.config_path.empty() ? PipelineConfig{} : load_config(c.config_path);
  if (c.seed_given) cfg.rng_seed = c.seed;
  cfg.validate();
  return cfg;
}

fs::path ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw IoError("cannot create output directory " + dir.string());
  return dir;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write " + path.string());
  f << text;
  if (!f) throw IoError("write failure on " + path.string());
}

void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

json read_json(const fs::path& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open " + path.string());
  try {
    return json::parse(f);
  } catch (const json::parse_error& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
}

EventStream load_stream(const std::string& path) {
  if (!fs::exists(path)) throw IoError("no such input " + path);
  return read_events(path, format_from_path(path));
}

// ---- trajectory files ----

json center_json(Center c) { return json::array({c.x, c.y}); }
Center center_from(const json& j) { return {j.at(0).get<double>(), j.at(1).get<double>()}; }

json scene_json(const SceneModel& s) {
  return {{"width", s.width},
          {"height", s.height},
          {"bg_level", s.bg_level},
          {"iris_level", s.iris_level},
          {"pupil_level", s.pupil_level},
          {"iris_center", center_json(s.iris_center)},
          {"iris_radius", s.iris_radius},
          {"pupil_radius", s.pupil_radius},
          {"edge_softness", s.edge_softness}};
}

SceneModel scene_from(const json& j) {
  SceneModel s;
  s.width = j.at("width").get<int>();
  s.height = j.at("height").get<int>();
  s.bg_level = j.at("bg_level").get<double>();
  s.iris_level = j.at("iris_level").get<double>();
  s.pupil_level = j.at("pupil_level").get<double>();
  s.iris_center = center_from(j.at("iris_center"));
  s.iris_radius = j.at("iris_radius").get<double>();
  s.pupil_radius = j.at("pupil_radius").get<double>();
  s.edge_softness = j.at("edge_softness").get<double>();
  s.validate();
  return s;
}

json camera_json(const EventCameraModel& c) {
  return {{"contrast_threshold", c.contrast_threshold},
          {"refractory_us", c.refractory_us},
          {"sim_dt_us", c.sim_dt_us},
          {"timestamp_jitter_us", c.timestamp_jitter_us}};
}

json trajectory_json(const TrajectorySpec& spec) {
  json segments = json::array();
  for (const TrajectorySegment& seg : spec.segments) {
    segments.push_back(std::visit(Overloaded{
                                      [](const Fixation& f) -> json {
                                        return {{"type", "fixation"},
                                                {"duration_ms", f.duration_ms},
                                                {"jitter_amplitude", f.jitter_amplitude},
                                                {"jitter_freq", f.jitter_freq},
                                                {"jitter_phase", f.jitter_phase}};
                                      },
                                      [](const Saccade& s) -> json {
                                        return {{"type", "saccade"},
                                                {"target", center_json(s.target)},
                                                {"peak_velocity", s.peak_velocity}};
                                      },
                                      [](const Pursuit& p) -> json {
                                        return {{"type", "pursuit"},
                                                {"amplitude", p.amplitude},
                                                {"frequency", p.frequency},
                                                {"duration_ms", p.duration_ms},
                                                {"direction", p.direction}};
                                      },
                                  },
                                  seg));
  }
  return {{"start", center_json(spec.start)}, {"segments", segments}};
}

TrajectorySpec trajectory_from(const json& j) {
  TrajectorySpec spec;
  spec.start = center_from(j.at("start"));
  for (const json& s : j.at("segments")) {
    const std::string type = s.at("type").get<std::string>();
    if (type == "fixation") {
      spec.segments.push_back(Fixation{s.at("duration_ms").get<double>(), s.at("jitter_amplitude").get<double>(),
                                       s.at("jitter_freq").get<double>(), s.at("jitter_phase").get<double>()});
    } else if (type == "saccade") {
      spec.segments.push_back(Saccade{center_from(s.at("target")), s.at("peak_velocity").get<double>()});
    } else if (type == "pursuit") {
      spec.segments.push_back(Pursuit{s.at("amplitude").get<double>(), s.at("frequency").get<double>(),
                                      s.at("duration_ms").get<double>(), s.at("direction").get<double>()});
    } else {
      throw ValidationError("unknown trajectory segment '" + type + "'");
    }
  }
  return spec;
}

GroundTruth truth_from(const fs::path& path) {
  const json j = read_json(path);
  try {
    return GroundTruth(scene_from(j.at("scene")), trajectory_from(j.at("trajectory")));
  } catch (const json::exception& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
}

std::string events_name(const std::string& format) {
  return parse_event_format(format) == EventFormat::Csv ? "events.csv" : "events.bin";
}

void write_recording(const fs::path& dir, const SceneModel& scene, const TrajectorySpec& spec,
                     const EventCameraModel& cam, std::uint64_t seed, const std::string& format, json extra = {}) {
  ensure_dir(dir);
  const SyntheticRecording rec = generate_events(scene, spec, cam, seed);
  write_events(rec.stream, dir / events_name(format), parse_event_format(format));
  rec.truth.write_csv(dir / "truth.csv");
  json j = {{"scene", scene_json(scene)},
            {"camera", camera_json(cam)},
            {"trajectory", trajectory_json(spec)},
            {"event_seed", seed},
            {"events", rec.stream.size()}};
  if (extra.is_object()) j.update(extra);
  write_json(dir / "trajectory.json", j);
}

// ---- synth ----

struct SynthArgs {
  Common common;
  std::string scenario = "mixed";
  double duration_ms = 3000;
  int users = 0;
  double session_ms = 8000;
  std::string format = "binary";
  std::int64_t jitter_us = 0;
};

std::string session_name(const std::string& user, int session) { return fmt::format("{}_s{}", user, session); }

int cmd_synth(const SynthArgs& a, std::ostream& out) {
  const PipelineConfig cfg = resolve_config(a.common);
  const std::uint64_t seed = a.common.seed_given ? a.common.seed : cfg.rng_seed;
  const fs::path dir = ensure_dir(a.common.out);
  const SceneModel scene;
  EventCameraModel cam;
  cam.timestamp_jitter_us = a.jitter_us;
  cam.validate();
  parse_event_format(a.format);

  if (a.users > 0 || a.scenario == "population") {
    if (a.users < 2) throw ArgumentError("a population needs --synth-users >= 2");
    PopulationOptions po;
    po.session_ms = a.session_ms;
    const auto population = make_identity_population(a.users, seed, po, scene);
    struct Job {
      std::string user;
      int session;
      const TrajectorySpec* spec;
    };
    std::vector<Job> jobs;
    json users = json::object();
    json sessions = json::array();
    for (const auto& [user, profile] : population) {
      const IdentityParams& p = profile.params;
      users[user] = {{"saccade_peak_velocity", p.saccade_peak_velocity},
                     {"jitter_amplitude", p.jitter_amplitude},
                     {"jitter_freq", p.jitter_freq},
                     {"pursuit_gain", p.pursuit_gain},
                     {"placement", center_json(p.placement)}};
      for (std::size_t s = 0; s < profile.sessions.size(); ++s) {
        jobs.push_back({user, static_cast<int>(s), &profile.sessions[s]});
        sessions.push_back({{"name", session_name(user, static_cast<int>(s))}, {"user", user}, {"session", s}});
      }
    }
    parallel_for(jobs.size(), a.common.workers, [&](std::size_t i) {
      const Job& job = jobs[i];
      write_recording(dir / session_name(job.user, job.session), scene, *job.spec, cam,
                      derive_seed(seed, fmt::format("events:{}:{}", job.user, job.session)), a.format,
                      {{"user", job.user}, {"session", job.session}});
    });
    write_json(dir / "population.json", {{"seed", seed},
                                         {"session_ms", a.session_ms},
                                         {"format", a.format},
                                         {"users", users},
                                         {"sessions", sessions}});
    out << fmt::format("population of {} identities, {} sessions -> {}\n", a.users, jobs.size(), dir.string());
    return kExitOk;
  }

  TrajectorySpec spec;
  if (a.scenario == "mixed") {
    spec = mixed_motion_trajectory(seed, a.duration_ms, scene);
  } else if (a.scenario == "two-phase") {
    spec = two_phase_trajectory(seed, a.duration_ms / 2, scene);
  } else if (a.scenario == "pursuit") {
    spec = pursuit_trajectory(30, 1, a.duration_ms, scene);
  } else if (a.scenario == "static") {
    spec.start = scene.iris_center;
    spec.segments.push_back(Fixation{a.duration_ms, 0, 0, 0});
  } else {
    throw ArgumentError("unknown scenario '" + a.scenario + "'");
  }
  write_recording(dir, scene, spec, cam, derive_seed(seed, "events"), a.format, {{"scenario", a.scenario}});
  out << fmt::format("{} scenario ({} ms) -> {}\n", a.scenario, a.duration_ms, dir.string());
  return kExitOk;
}

// ---- slice / segment / track / features ----

struct SliceArgs {
  Common common;
  std::string input;
  SliceFlags flags;
};

int cmd_slice(const SliceArgs& a, std::ostream& out) {
  const PipelineConfig cfg = resolve_config(a.common);
  const EventStream stream = load_stream(a.input);
  const auto slices = slice_stream(stream, cfg, a.flags.options());
  const fs::path dir = ensure_dir(a.common.out);
  write_slice_report(slices, dir / "slices.csv");
  out << fmt::format("{} events -> {} slices ({})\n", stream.size(), slices.size(), a.flags.strategy);
  return kExitOk;
}

struct SegmentArgs {
  Common common;
  std::string input;
  std::string slices;
  int dump_pgm = 0;
};

int cmd_segment(const SegmentArgs& a, std::ostream& out) {
  const PipelineConfig cfg = resolve_config(a.common);
  const EventStream stream = load_stream(a.input);
  if (!fs::exists(a.slices)) throw IoError("no such slice report " + a.slices);
  const auto boundaries = read_slice_report(a.slices);
  const auto slices = apply_slice_report(stream, boundaries);
  const auto rows = detect_pupils(slices, stream.width, stream.height, cfg, a.common.workers);
  const fs::path dir = ensure_dir(a.common.out);
  write_detections(rows, dir / "detections.csv");
  const int dumps = std::min<int>(a.dump_pgm, static_cast<int>(slices.size()));
  if (dumps > 0) {
    const fs::path frames = ensure_dir(dir / "frames");
    for (int i = 0; i < dumps; ++i) {
      SegmentationTrace trace;
      segment_pupil(build_frame(slices[i], stream.width, stream.height), cfg, &trace);
      write_pgm(trace.gray, frames / fmt::format("frame_{:05}_gray.pgm", i));
      write_pgm(trace.dilated, frames / fmt::format("frame_{:05}_dilated.pgm", i));
      write_pgm(trace.edges, frames / fmt::format("frame_{:05}_edges.pgm", i));
    }
  }
  const auto hits = std::count_if(rows.begin(), rows.end(), [](const DetectionRow& r) { return r.circle.has_value(); });
  out << fmt::format("{} frames, {} detections\n", rows.size(), hits);
  return kExitOk;
}

struct TrackArgs {
  Common common;
  std::string detections;
};

int cmd_track(const TrackArgs& a, std::ostream& out) {
  const PipelineConfig cfg = resolve_config(a.common);
  if (!fs::exists(a.detections)) throw IoError("no such detection report " + a.detections);
  const auto rows = read_detections(a.detections);
  const auto samples = track_kinematics(rows, cfg);
  const fs::path dir = ensure_dir(a.common.out);
  write_kinematics(samples, dir / "kinematics.csv");
  out << fmt::format("{} kinematic samples\n", samples.size());
  return kExitOk;
}

struct FeaturesArgs {
  Common common;
  std::string kinematics;
  std::string user = "anon";
  int session = 0;
};

int cmd_features(const FeaturesArgs& a, std::ostream& out) {
  const PipelineConfig cfg = resolve_config(a.common);
  if (!fs::exists(a.kinematics)) throw IoError("no such kinematics file " + a.kinematics);
  const auto samples = read_kinematics(a.kinematics);
  const auto windows = label_windows(
      window_features(samples, cfg.window_length, cfg.window_stride, cfg.max_consecutive_misses), a.user, a.session);
  const fs::path dir = ensure_dir(a.common.out);
  write_features(windows, dir / "features.csv");
  out << fmt::format("{} windows for {} session {}\n", windows.size(), a.user, a.session);
  return kExitOk;
}

std::vector<FeatureVector> load_features(const std::vector<std::string>& paths) {
  std::vector<FeatureVector> all;
  for (const std::string& p : paths) {
    if (!fs::exists(p)) throw IoError("no such feature file " + p);
    auto v = read_features(p);
    all.insert(all.end(), std::make_move_iterator(v.begin()), std::make_move_iterator(v.end()));
  }
  return all;
}

// ---- train / auth ----

struct TrainArgs {
  Common common;
  std::vector<std::string> features;
  std::string groups = "pos,vel,acc";
  int train_session = -1;
};

int cmd_train(const TrainArgs& a, std::ostream& out) {
  const PipelineConfig cfg = resolve_config(a.common);
  std::map<std::string, std::vector<FeatureVector>> by_user;
  for (FeatureVector& v : load_features(a.features)) {
    if (a.train_session >= 0 && v.session != a.train_session) continue;
    by_user[v.user].push_back(std::move(v));
  }
  ForestOptions opt;
  opt.groups = FeatureGroups::parse(a.groups);
  opt.workers = a.common.workers;
  const auto forests = train_all(by_user, cfg, opt);
  const fs::path dir = ensure_dir(a.common.out);
  for (const auto& [user, forest] : forests) save_forest(forest, dir / (user + ".ptf"));
  out << fmt::format("{} forests ({}) -> {}\n", forests.size(), opt.groups.to_string(), dir.string());
  return kExitOk;
}

std::map<std::string, UserForest> load_models(const std::string& dir) {
  if (!fs::is_directory(dir)) throw IoError("no such model directory " + dir);
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.path().extension() == ".ptf") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  std::map<std::string, UserForest> forests;
  for (const fs::path& f : files) {
    UserForest forest = load_forest(f);
    forests[forest.user_label] = std::move(forest);
  }
  if (forests.empty()) throw IoError("no .ptf models in " + dir);
  return forests;
}

struct AuthArgs {
  Common common;
  std::string models;
  std::vector<std::string> features;
  std::string input;
  std::string claim;
  double threshold = 0.5;
  bool threshold_given = false;
  SliceFlags flags;
};

int cmd_auth(const AuthArgs& a, std::ostream& out) {
  const PipelineConfig cfg = resolve_config(a.common);
  auto forests = load_models(a.models);
  if (a.threshold_given) {
    if (!(a.threshold >= 0 && a.threshold <= 1)) throw ArgumentError("--threshold must lie in [0, 1]");
    for (auto& [user, forest] : forests) forest.decision_threshold = a.threshold;
  }
  const auto budget = static_cast<std::size_t>(cfg.auth_budget);

  if (!a.input.empty()) {
    const auto it = forests.find(a.claim);
    if (it == forests.end()) throw ArgumentError("no model for claimed identity '" + a.claim + "'");
    const auto t0 = std::chrono::steady_clock::now();
    const EventStream stream = load_stream(a.input);
    const SessionResult r = process_stream(stream, cfg, a.claim, 0, a.flags.options(), a.common.workers);
    const double processing_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    const AuthResult res = r.windows.empty() ? AuthResult{} : authenticate(it->second, r.windows, budget);
    const json j = {{"claimed_user", a.claim},
                    {"accepted", res.accepted},
                    {"windows_consumed", res.windows_consumed},
                    {"windows_available", r.windows.size()},
                    {"decision_ms", res.elapsed_ms},
                    {"processing_ms", processing_ms}};
    if (!a.common.out.empty()) write_json(ensure_dir(a.common.out) / "decision.json", j);
    out << j.dump(2) << "\n";
    return kExitOk;
  }

  const auto windows = load_features(a.features);
  const fs::path dir = ensure_dir(a.common.out);
  write_scores(score_windows(forests, windows, a.common.workers), dir / "scores.csv");

  std::map<std::pair<std::string, int>, std::vector<FeatureVector>> streams;
  for (const FeatureVector& v : windows) streams[{v.user, v.session}].push_back(v);
  for (auto& [key, w] : streams) {
    std::stable_sort(w.begin(), w.end(), [](const FeatureVector& x, const FeatureVector& y) { return x.window_idx < y.window_idx; });
  }
  std::ostringstream csv;
  csv << "claimed_user,user,session,accepted,windows_consumed\n";
  std::size_t accepted = 0, total = 0;
  for (const auto& [claim, forest] : forests) {
    for (const auto& [key, w] : streams) {
      const AuthResult res = authenticate(forest, w, budget);
      csv << fmt::format("{},{},{},{},{}\n", claim, key.first, key.second, res.accepted ? 1 : 0, res.windows_consumed);
      accepted += res.accepted ? 1 : 0;
      ++total;
    }
  }
  write_text(dir / "decisions.csv", csv.str());
  out << fmt::format("{} windows scored by {} forests; {}/{} attempts accepted\n", windows.size(), forests.size(),
                     accepted, total);
  return kExitOk;
}

// ---- bench ----

struct BenchArgs {
  Common common;
  std::string input;
  std::string slices;
  std::string models;
  std::vector<std::string> features;
  std::size_t repetitions = 100;
  SliceFlags flags;
};

json latency_json(const LatencyStats& s) {
  return {{"mean_ms", s.mean_ms}, {"p50_ms", s.p50_ms}, {"p95_ms", s.p95_ms}, {"repetitions", s.repetitions}};
}

int cmd_bench(const BenchArgs& a, std::ostream& out) {
  const PipelineConfig cfg = resolve_config(a.common);
  const std::uint64_t seed = cfg.rng_seed;
  EventStream stream;
  if (a.input.empty()) {
    stream = generate_events(SceneModel{}, mixed_motion_trajectory(seed), EventCameraModel{}, derive_seed(seed, "events"))
                 .stream;
  } else {
    stream = load_stream(a.input);
  }
  std::vector<EventSlice> slices;
  if (!a.slices.empty()) {
    if (!fs::exists(a.slices)) throw IoError("no such slice report " + a.slices);
    slices = apply_slice_report(stream, read_slice_report(a.slices));
  } else {
    slices = slice_stream(stream, cfg, a.flags.options());
  }
  if (slices.empty()) throw ValidationError("no frames to benchmark");
  std::vector<EventFrame> frames;
  frames.reserve(slices.size());
  for (const EventSlice& s : slices) frames.push_back(build_frame(s, stream.width, stream.height));

  std::size_t next = 0;
  volatile double sink = 0;
  const LatencyStats seg = bench_latency(
      BenchOp::Segmentation,
      [&] {
        const auto det = segment_pupil(frames[next++ % frames.size()], cfg);
        sink = det ? det->circle.r : 0.0;
      },
      a.repetitions);

  UserForest forest;
  std::vector<FeatureVector> windows = load_features(a.features);
  if (!a.models.empty()) {
    forest = load_models(a.models).begin()->second;
  } else {
    // Noise vectors: labels carry no signal, so the trees grow to full depth.
    Rng rng(derive_seed(seed, "bench_forest"));
    std::vector<FeatureVector> pos(200), neg(200);
    std::size_t idx = 0;
    for (auto* set : {&pos, &neg}) {
      for (FeatureVector& v : *set) {
        v.values.resize(static_cast<std::size_t>(cfg.window_length) * kValuesPerFrame);
        for (double& x : v.values) x = uniform01(rng);
        v.user = set == &pos ? "pos" : "neg";
        v.window_idx = idx++;
      }
    }
    forest = train_forest(pos, neg, cfg);
    if (windows.empty()) windows = pos;
  }
  if (windows.empty()) throw ValidationError("no feature windows to benchmark");
  next = 0;
  const LatencyStats cls = bench_latency(
      BenchOp::Classification, [&] { sink = predict_proba(forest, windows[next++ % windows.size()]); },
      a.repetitions);

  const fs::path dir = ensure_dir(a.common.out);
  write_json(dir / "bench.json", {{"segmentation", latency_json(seg)},
                                  {"classification", latency_json(cls)},
                                  {"frame_width", stream.width},
                                  {"frame_height", stream.height},
                                  {"frames", frames.size()},
                                  {"trees", forest.trees.size()}});
  std::ostringstream csv;
  csv << "op,mean_ms,p50_ms,p95_ms,repetitions\n";
  for (const auto& [op, s] : {std::pair{BenchOp::Segmentation, seg}, std::pair{BenchOp::Classification, cls}}) {
    csv << fmt::format("{},{},{},{},{}\n", to_string(op), s.mean_ms, s.p50_ms, s.p95_ms, s.repetitions);
    out << fmt::format("{:<15} mean {:8.3f} ms  p50 {:8.3f} ms  p95 {:8.3f} ms  (n={})\n", to_string(op), s.mean_ms,
                       s.p50_ms, s.p95_ms, s.repetitions);
  }
  write_text(dir / "bench.csv", csv.str());
  return kExitOk;
}

// ---- eval ----

struct EvalArgs {
  Common common;
  std::string scores;
  std::vector<std::string> sessions;
  std::string bench;
  double threshold = 0.5;
  int attempts = 3;
};

json optional_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

json segmentation_json(const SegmentationSummary& s) {
  return {{"iou_mean", s.iou_mean},
          {"dice_mean", s.dice_mean},
          {"iou_frame_mean", s.iou_frame_mean},
          {"dice_frame_mean", s.dice_frame_mean},
          {"mae_px", optional_json(s.mae_px)},
          {"miss_rate", s.miss_rate},
          {"frames", s.frames}};
}

int cmd_eval(const EvalArgs& a, std::ostream& out) {
  resolve_config(a.common);
  if (a.scores.empty() && a.sessions.empty() && a.bench.empty()) {
    throw ArgumentError("eval needs --scores, --session or --bench");
  }
  if (a.attempts < 1) throw ArgumentError("--attempts must be >= 1");
  json m = json::object();

  if (!a.sessions.empty()) {
    std::vector<FrameScore> all;
    json per_session = json::object();
    for (const std::string& s : a.sessions) {
      const fs::path dir(s);
      const GroundTruth truth = truth_from(dir / "trajectory.json");
      if (!fs::exists(dir / "slices.csv") || !fs::exists(dir / "detections.csv")) {
        throw IoError("missing slices.csv or detections.csv in " + s);
      }
      const auto boundaries = read_slice_report(dir / "slices.csv");
      const auto detections = read_detections(dir / "detections.csv");
      const auto scores = score_detections(boundaries, detections, truth);
      per_session[dir.filename().string()] = segmentation_json(summarize_segmentation(scores));
      all.insert(all.end(), scores.begin(), scores.end());
    }
    m.update(segmentation_json(summarize_segmentation(all)));
    m["per_session"] = per_session;
  }

  if (!a.scores.empty()) {
    if (!fs::exists(a.scores)) throw IoError("no such score file " + a.scores);
    const auto rows = read_scores(a.scores);
    const AuthSummary s = summarize_auth(rows, a.threshold);
    if (s.per_user.empty()) throw ValidationError("score file has no user with both genuine and impostor rows");
    json per_user = json::object();
    for (const auto& [user, u] : s.per_user) {
      per_user[user] = {{"accuracy", u.accuracy},
                        {"eer", u.eer},
                        {"far", u.far},
                        {"frr", u.frr},
                        {"session_accuracy", u.session_accuracy},
                        {"genuine_windows", u.genuine_windows},
                        {"impostor_windows", u.impostor_windows}};
    }
    m["accuracy"] = s.accuracy_median;
    m["accuracy_mean"] = s.accuracy_mean;
    m["eer"] = s.eer_mean;
    m["eer_median"] = s.eer_median;
    m["far"] = s.far_mean;
    m["frr"] = s.frr_mean;
    m["session_accuracy"] = s.session_accuracy_mean;
    m["effective_frr"] = effective_frr(s.frr_mean, a.attempts);
    m["attempts"] = a.attempts;
    m["threshold"] = a.threshold;
    m["per_user"] = per_user;
  }

  if (!a.bench.empty()) {
    const json b = read_json(a.bench);
    try {
      for (const char* key : {"mean_ms", "p50_ms", "p95_ms"}) {
        const std::string k = std::string(key).substr(0, std::string(key).size() - 3);
        m["latency_ms_" + k] = b.at("segmentation").at(key);
        m["classification_latency_ms_" + k] = b.at("classification").at(key);
      }
    } catch (const json::exception& e) {
      throw ValidationError(a.bench + ": " + e.what());
    }
  }

  const fs::path dir = ensure_dir(a.common.out);
  write_json(dir / "metrics.json", m);
  out << m.dump(2) << "\n";
  return kExitOk;
}

// ---- pipeline ----

struct PipelineArgs {
  Common common;
  int users = 10;
  double session_ms = 8000;
  std::string format = "binary";
  SliceFlags flags;
  std::string groups = "pos,vel,acc";
  double threshold = 0.5;
  int train_session = 0;
  std::size_t bench_repetitions = 50;
};

int cmd_pipeline(const PipelineArgs& a, std::ostream& out) {
  const PipelineConfig cfg = resolve_config(a.common);
  a.flags.options();
  FeatureGroups::parse(a.groups);
  const fs::path root = ensure_dir(a.common.out);
  std::ostream quiet(nullptr);
  auto stage = [&](const Common& base, const fs::path& dir) {
    Common c = base;
    c.out = dir.string();
    return c;
  };

  write_json(root / "manifest.json", {{"config", to_config_text(cfg)},
                                      {"seed", cfg.rng_seed},
                                      {"synth_users", a.users},
                                      {"session_ms", a.session_ms},
                                      {"format", a.format},
                                      {"strategy", a.flags.strategy},
                                      {"window_ms", a.flags.window_ms},
                                      {"n_events", a.flags.n_events},
                                      {"feature_groups", a.groups},
                                      {"threshold", a.threshold},
                                      {"train_session", a.train_session}});

  const fs::path sessions_dir = root / "sessions";
  SynthArgs synth;
  synth.common = stage(a.common, sessions_dir);
  synth.users = a.users;
  synth.session_ms = a.session_ms;
  synth.format = a.format;
  synth.scenario = "population";
  cmd_synth(synth, out);

  const json population = read_json(sessions_dir / "population.json");
  std::vector<std::string> session_dirs, train_features, test_features;
  const std::string events = events_name(a.format);
  for (const json& s : population.at("sessions")) {
    const fs::path dir = sessions_dir / s.at("name").get<std::string>();
    session_dirs.push_back(dir.string());
    const Common c = stage(a.common, dir);
    cmd_slice({c, (dir / events).string(), a.flags}, quiet);
    cmd_segment({c, (dir / events).string(), (dir / "slices.csv").string(), 0}, quiet);
    cmd_track({c, (dir / "detections.csv").string()}, quiet);
    cmd_features({c, (dir / "kinematics.csv").string(), s.at("user").get<std::string>(), s.at("session").get<int>()},
                 quiet);
    (s.at("session").get<int>() == a.train_session ? train_features : test_features)
        .push_back((dir / "features.csv").string());
  }
  out << fmt::format("processed {} sessions\n", session_dirs.size());
  if (test_features.empty()) throw ValidationError("no held-out session to evaluate");

  const fs::path models = root / "models";
  cmd_train({stage(a.common, models), train_features, a.groups, -1}, out);

  AuthArgs auth;
  auth.common = stage(a.common, root / "auth");
  auth.models = models.string();
  auth.features = test_features;
  auth.threshold = a.threshold;
  auth.threshold_given = true;
  cmd_auth(auth, out);

  BenchArgs bench;
  bench.common = stage(a.common, root / "bench");
  bench.input = (fs::path(session_dirs.front()) / events).string();
  bench.slices = (fs::path(session_dirs.front()) / "slices.csv").string();
  bench.models = models.string();
  bench.features = {test_features.front()};
  bench.repetitions = a.bench_repetitions;
  cmd_bench(bench, out);

  EvalArgs eval;
  eval.common = stage(a.common, root);
  eval.scores = (root / "auth" / "scores.csv").string();
  eval.sessions = session_dirs;
  eval.bench = (root / "bench" / "bench.json").string();
  eval.threshold = a.threshold;
  cmd_eval(eval, quiet);
  out << fmt::format("metrics -> {}\n", (root / "metrics.json").string());
  return kExitOk;
}

// ---- argument wiring ----

void add_common(CLI::App* sub, Common& c, CLI::Option*& seed_opt) {
  sub->add_option("--config", c.config_path, "key = value pipeline config file");
  seed_opt = sub->add_option("--seed", c.seed, "root seed for every random draw");
  sub->add_option("--workers", c.workers, "worker threads (0 = all cores)")->check(CLI::NonNegativeNumber);
  sub->add_option("--out", c.out, "output directory");
}

void add_slice_flags(CLI::App* sub, SliceFlags& f) {
  sub->add_option("--strategy", f.strategy, "adaptive, fixed-time or fixed-count")
      ->check(CLI::IsMember({"adaptive", "fixed-time", "fixed-count"}));
  sub->add_option("--window-ms", f.window_ms, "fixed-time window");
  sub->add_option("--n-events", f.n_events, "fixed-count slice size");
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Event-camera pupil tracking and eye-movement authentication", "evpupil"};
  app.require_subcommand(1);
  app.fallthrough(false);

  std::map<std::string, CLI::Option*> seeds;
  auto sub = [&](const char* name, const char* help, Common& c) {
    CLI::App* s = app.add_subcommand(name, help);
    add_common(s, c, seeds[name]);
    return s;
  };

  SynthArgs synth;
  CLI::App* s_synth = sub("synth", "generate synthetic event streams with ground truth", synth.common);
  s_synth->add_option("--scenario", synth.scenario, "mixed, two-phase, pursuit, static or population");
  s_synth->add_option("--duration-ms", synth.duration_ms, "scenario length");
  s_synth->add_option("--synth-users", synth.users, "generate an identity population of this size");
  s_synth->add_option("--session-ms", synth.session_ms, "population session length");
  s_synth->add_option("--format", synth.format, "csv or binary")->check(CLI::IsMember({"csv", "binary"}));
  s_synth->add_option("--timestamp-jitter-us", synth.jitter_us, "uniform event timestamp jitter");

  SliceArgs slice;
  CLI::App* s_slice = sub("slice", "cut an event stream into slices", slice.common);
  s_slice->add_option("--input", slice.input, "event file (.csv or binary)")->required();
  add_slice_flags(s_slice, slice.flags);

  SegmentArgs segment;
  CLI::App* s_segment = sub("segment", "detect the pupil in every slice", segment.common);
  s_segment->add_option("--input", segment.input, "event file")->required();
  s_segment->add_option("--slices", segment.slices, "slice report from `slice`")->required();
  s_segment->add_option("--dump-pgm", segment.dump_pgm, "write intermediate images of the first N frames");

  TrackArgs track;
  CLI::App* s_track = sub("track", "Kalman-track detections into kinematic samples", track.common);
  s_track->add_option("--detections", track.detections, "detection report from `segment`")->required();

  FeaturesArgs features;
  CLI::App* s_features = sub("features", "window kinematic samples into feature vectors", features.common);
  s_features->add_option("--kinematics", features.kinematics, "kinematics file from `track`")->required();
  s_features->add_option("--user", features.user, "identity label");
  s_features->add_option("--session", features.session, "session index");

  TrainArgs train;
  CLI::App* s_train = sub("train", "train one forest per identity", train.common);
  s_train->add_option("--features", train.features, "feature files")->required();
  s_train->add_option("--feature-groups", train.groups, "comma list of pos, vel, acc");
  s_train->add_option("--train-session", train.train_session, "use only this session (-1 = all)");

  AuthArgs auth;
  CLI::App* s_auth = sub("auth", "score windows or authenticate a stream", auth.common);
  auth.common.out.clear();
  s_auth->add_option("--models", auth.models, "directory of .ptf models")->required();
  s_auth->add_option("--features", auth.features, "feature files to score against every model");
  s_auth->add_option("--input", auth.input, "event stream to authenticate");
  s_auth->add_option("--claim", auth.claim, "claimed identity for --input");
  CLI::Option* auth_threshold = s_auth->add_option("--threshold", auth.threshold, "operating point");
  add_slice_flags(s_auth, auth.flags);

  EvalArgs eval;
  CLI::App* s_eval = sub("eval", "segmentation and authentication metrics", eval.common);
  s_eval->add_option("--scores", eval.scores, "score file from `auth`");
  s_eval->add_option("--session", eval.sessions, "session directory with trajectory.json, slices.csv, detections.csv");
  s_eval->add_option("--bench", eval.bench, "bench.json to fold in");
  s_eval->add_option("--threshold", eval.threshold, "operating point");
  s_eval->add_option("--attempts", eval.attempts, "consecutive failures before lock-out");

  BenchArgs bench;
  CLI::App* s_bench = sub("bench", "segmentation and classification latency", bench.common);
  s_bench->add_option("--input", bench.input, "event file (default: synthetic mixed-motion sequence)");
  s_bench->add_option("--slices", bench.slices, "slice report for --input");
  s_bench->add_option("--models", bench.models, "model directory (default: forest trained on noise)");
  s_bench->add_option("--features", bench.features, "feature files to classify");
  s_bench->add_option("--repetitions", bench.repetitions, "timed repetitions per op");
  add_slice_flags(s_bench, bench.flags);

  PipelineArgs pipe;
  CLI::App* s_pipe = sub("pipeline", "synthesize a population and run every stage", pipe.common);
  s_pipe->add_option("--synth-users", pipe.users, "identities");
  s_pipe->add_option("--session-ms", pipe.session_ms, "session length");
  s_pipe->add_option("--format", pipe.format, "csv or binary")->check(CLI::IsMember({"csv", "binary"}));
  s_pipe->add_option("--feature-groups", pipe.groups, "comma list of pos, vel, acc");
  s_pipe->add_option("--threshold", pipe.threshold, "operating point");
  s_pipe->add_option("--train-session", pipe.train_session, "session used for training");
  s_pipe->add_option("--bench-repetitions", pipe.bench_repetitions, "timed repetitions per op");
  add_slice_flags(s_pipe, pipe.flags);

  if (args.empty()) {
    err << app.help();
    return kExitValidation;
  }
  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    app.exit(e, out, err);
    return kExitOk;
  } catch (const CLI::CallForAllHelp& e) {
    app.exit(e, out, err);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return kExitValidation;
  }
  for (auto& [name, opt] : seeds) {
    if (opt->count() == 0) continue;
    if (name == "synth") synth.common.seed_given = true;
    if (name == "slice") slice.common.seed_given = true;
    if (name == "segment") segment.common.seed_given = true;
    if (name == "track") track.common.seed_given = true;
    if (name == "features") features.common.seed_given = true;
    if (name == "train") train.common.seed_given = true;
    if (name == "auth") auth.common.seed_given = true;
    if (name == "eval") eval.common.seed_given = true;
    if (name == "bench") bench.common.seed_given = true;
    if (name == "pipeline") pipe.common.seed_given = true;
  }
  auth.threshold_given = auth_threshold->count() > 0;

  try {
    if (s_synth->parsed()) return cmd_synth(synth, out);
    if (s_slice->parsed()) return cmd_slice(slice, out);
    if (s_segment->parsed()) return cmd_segment(segment, out);
    if (s_track->parsed()) return cmd_track(track, out);
    if (s_features->parsed()) return cmd_features(features, out);
    if (s_train->parsed()) return cmd_train(train, out);
    if (s_auth->parsed()) {
      if (auth.input.empty() == auth.features.empty()) throw ArgumentError("auth needs exactly one of --input or --features");
      if (!auth.input.empty() && auth.claim.empty()) throw ArgumentError("--input needs --claim");
      if (auth.input.empty() && auth.common.out.empty()) auth.common.out = ".";
      return cmd_auth(auth, out);
    }
    if (s_eval->parsed()) return cmd_eval(eval, out);
    if (s_bench->parsed()) return cmd_bench(bench, out);
    if (s_pipe->parsed()) return cmd_pipeline(pipe, out);
  } catch (const IoError& e) {
    err << "error: " << e.what() << "\n";
    return kExitIo;
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << "\n";
    return kExitIo;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitValidation;
  }
  err << app.help();
  return kExitValidation;
}

int run(int argc, char** argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run(args, std::cout, std::cerr);
}

}  // namespace evpupil::cli
