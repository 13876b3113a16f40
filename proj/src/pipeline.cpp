#include "evpupil/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <fmt/format.h>

#include "evpupil/errors.hpp"
#include "evpupil/parallel.hpp"
#include "evpupil/rng.hpp"
#include "evpupil/tracking.hpp"

namespace evpupil {

SliceStrategy parse_slice_strategy(std::string_view text) {
  if (text == "adaptive") return SliceStrategy::Adaptive;
  if (text == "fixed-time") return SliceStrategy::FixedTime;
  if (text == "fixed-count") return SliceStrategy::FixedCount;
  throw ArgumentError(fmt::format("unknown slicing strategy '{}'", text));
}

std::string_view to_string(SliceStrategy strategy) {
  switch (strategy) {
    case SliceStrategy::Adaptive: return "adaptive";
    case SliceStrategy::FixedTime: return "fixed-time";
    case SliceStrategy::FixedCount: return "fixed-count";
  }
  return "adaptive";
}

std::vector<EventSlice> slice_stream(const EventStream& stream, const PipelineConfig& config,
                                     const SliceOptions& options) {
  switch (options.strategy) {
    case SliceStrategy::Adaptive: return adaptive_slice(stream, config);
    case SliceStrategy::FixedTime: return fixed_time_slice(stream, options.window_us);
    case SliceStrategy::FixedCount: return fixed_count_slice(stream, options.n_events);
  }
  return {};
}

std::vector<SliceBoundary> boundaries_of(std::span<const EventSlice> slices) {
  std::vector<SliceBoundary> out;
  out.reserve(slices.size());
  for (const EventSlice& s : slices) out.push_back({s.t_start, s.t_end, s.events.size(), s.termination});
  return out;
}

std::vector<DetectionRow> detect_pupils(std::span<const EventSlice> slices, int width, int height,
                                        const PipelineConfig& config, int workers) {
  std::vector<DetectionRow> rows(slices.size());
  parallel_for(slices.size(), workers, [&](std::size_t i) {
    const EventFrame frame = build_frame(slices[i], width, height);
    const auto det = segment_pupil(frame, config);
    rows[i].frame_idx = i;
    rows[i].t_mid = frame.t_mid();
    if (det) rows[i].circle = det->circle;
  });
  return rows;
}

std::vector<FrameScore> score_detections(std::span<const SliceBoundary> slices, std::span<const DetectionRow> detections,
                                         const GroundTruth& truth) {
  if (slices.size() != detections.size()) throw ArgumentError("slice and detection counts differ");
  const SceneModel& scene = truth.scene();
  std::vector<FrameScore> out;
  out.reserve(slices.size());
  for (std::size_t i = 0; i < slices.size(); ++i) {
    FrameScore s;
    s.frame_idx = detections[i].frame_idx;
    s.t_mid = detections[i].t_mid;
    const std::int64_t next = i + 1 < slices.size() ? slices[i + 1].t_start : slices[i].t_end;
    s.weight_us = static_cast<double>(std::max<std::int64_t>(next - slices[i].t_start, 1));
    const Mask gt = truth.mask(static_cast<double>(s.t_mid));
    if (const auto& c = detections[i].circle) {
      const Mask pred = rasterize_circle(c->cx, c->cy, c->r, scene.width, scene.height);
      s.iou = iou(pred, gt);
      s.dice = dice(pred, gt);
      const PupilKinematics k = truth.at(static_cast<double>(s.t_mid));
      s.center_error = std::hypot(c->cx - k.cx, c->cy - k.cy);
    } else {
      s.iou = iou(Mask(scene.width, scene.height), gt);
      s.dice = dice(Mask(scene.width, scene.height), gt);
    }
    out.push_back(s);
  }
  return out;
}

SegmentationSummary summarize_segmentation(std::span<const FrameScore> scores) {
  SegmentationSummary out;
  out.frames = scores.size();
  if (scores.empty()) return out;
  double w = 0, wi = 0, wd = 0, fi = 0, fd = 0, err = 0;
  std::size_t hits = 0;
  for (const FrameScore& s : scores) {
    w += s.weight_us;
    wi += s.weight_us * s.iou;
    wd += s.weight_us * s.dice;
    fi += s.iou;
    fd += s.dice;
    if (s.center_error) {
      err += *s.center_error;
      ++hits;
    }
  }
  const auto n = static_cast<double>(scores.size());
  out.iou_mean = wi / w;
  out.dice_mean = wd / w;
  out.iou_frame_mean = fi / n;
  out.dice_frame_mean = fd / n;
  if (hits > 0) out.mae_px = err / static_cast<double>(hits);
  out.miss_rate = static_cast<double>(scores.size() - hits) / n;
  return out;
}

std::vector<KinematicSample> track_kinematics(std::span<const DetectionRow> detections, const PipelineConfig& config) {
  const auto track = track_detections(detections, KalmanParams::from_config(config));
  return kinematic_samples(track);
}

std::vector<FeatureVector> label_windows(std::vector<FeatureVector> windows, const std::string& user, int session) {
  for (FeatureVector& v : windows) {
    v.user = user;
    v.session = session;
  }
  return windows;
}

SessionResult process_stream(const EventStream& stream, const PipelineConfig& config, const std::string& user,
                             int session, const SliceOptions& options, int workers) {
  SessionResult r;
  r.slices = slice_stream(stream, config, options);
  r.detections = detect_pupils(r.slices, stream.width, stream.height, config, workers);
  r.samples = track_kinematics(r.detections, config);
  r.windows = label_windows(
      window_features(r.samples, config.window_length, config.window_stride, config.max_consecutive_misses), user,
      session);
  return r;
}

PopulationFeatures population_features(int n_users, std::uint64_t seed, const PipelineConfig& config,
                                       const PopulationOptions& options, int workers) {
  const SceneModel scene;
  const auto population = make_identity_population(n_users, seed, options, scene);
  struct Job {
    std::string user;
    int session;
    const TrajectorySpec* spec;
  };
  std::vector<Job> jobs;
  PopulationFeatures out;
  for (const auto& [user, profile] : population) {
    out.params[user] = profile.params;
    for (std::size_t s = 0; s < profile.sessions.size(); ++s) jobs.push_back({user, static_cast<int>(s), &profile.sessions[s]});
  }
  std::vector<std::vector<FeatureVector>> results(jobs.size());
  parallel_for(jobs.size(), workers, [&](std::size_t i) {
    const Job& job = jobs[i];
    const auto rec = generate_events(scene, *job.spec, EventCameraModel{},
                                     derive_seed(seed, fmt::format("events:{}:{}", job.user, job.session)));
    results[i] = process_stream(rec.stream, config, job.user, job.session).windows;
  });
  for (std::size_t i = 0; i < jobs.size(); ++i) out.windows[jobs[i].user][jobs[i].session] = std::move(results[i]);
  return out;
}

std::vector<ScoreRow> score_windows(const std::map<std::string, UserForest>& forests,
                                    std::span<const FeatureVector> windows, int workers) {
  std::vector<const FeatureVector*> order;
  order.reserve(windows.size());
  for (const FeatureVector& v : windows) order.push_back(&v);
  std::stable_sort(order.begin(), order.end(), [](const FeatureVector* a, const FeatureVector* b) {
    if (a->user != b->user) return a->user < b->user;
    if (a->session != b->session) return a->session < b->session;
    return a->window_idx < b->window_idx;
  });
  std::vector<const UserForest*> claims;
  for (const auto& [user, forest] : forests) claims.push_back(&forest);
  std::vector<ScoreRow> rows(claims.size() * order.size());
  parallel_for(claims.size(), workers, [&](std::size_t c) {
    for (std::size_t i = 0; i < order.size(); ++i) {
      ScoreRow& row = rows[c * order.size() + i];
      row.user = order[i]->user;
      row.claimed_user = claims[c]->user_label;
      row.window_idx = order[i]->window_idx;
      row.score = predict_proba(*claims[c], *order[i]);
      row.genuine = row.user == row.claimed_user;
    }
  });
  return rows;
}

void write_scores(std::span<const ScoreRow> rows, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "user,claimed_user,window_idx,score,genuine\n";
  for (const ScoreRow& r : rows) {
    out << fmt::format("{},{},{},{},{}\n", r.user, r.claimed_user, r.window_idx, r.score, r.genuine ? 1 : 0);
  }
  if (!out) throw IoError("write failure on " + path.string());
}

std::vector<ScoreRow> read_scores(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<ScoreRow> rows;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line_no == 1 || line.empty()) continue;
    if (line.back() == '\r') line.pop_back();
    std::vector<std::string> f;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) f.push_back(cell);
    if (f.size() != 5) throw ParseError(line_no, "expected 5 score fields");
    try {
      rows.push_back({f[0], f[1], std::stoull(f[2]), std::stod(f[3]), f[4] == "1"});
    } catch (const std::logic_error&) {
      throw ParseError(line_no, "malformed score row");
    }
  }
  return rows;
}

AuthSummary summarize_auth(std::span<const ScoreRow> rows, double threshold) {
  std::map<std::string, std::vector<double>> genuine, impostor;
  // (claim, owner) -> (accepted, total)
  std::map<std::pair<std::string, std::string>, std::pair<std::size_t, std::size_t>> pairs;
  for (const ScoreRow& r : rows) {
    (r.genuine ? genuine : impostor)[r.claimed_user].push_back(r.score);
    auto& p = pairs[{r.claimed_user, r.user}];
    p.first += r.score >= threshold ? 1 : 0;
    ++p.second;
  }
  AuthSummary out;
  std::vector<double> acc, eer, far, frr, sess;
  for (const auto& [user, g] : genuine) {
    const auto it = impostor.find(user);
    if (it == impostor.end() || g.empty() || it->second.empty()) continue;
    const std::vector<double>& im = it->second;
    UserAuthStats s;
    s.genuine_windows = g.size();
    s.impostor_windows = im.size();
    const auto accepted = static_cast<double>(std::count_if(g.begin(), g.end(), [&](double v) { return v >= threshold; }));
    const auto rejected = static_cast<double>(std::count_if(im.begin(), im.end(), [&](double v) { return v < threshold; }));
    s.frr = 1.0 - accepted / static_cast<double>(g.size());
    s.far = 1.0 - rejected / static_cast<double>(im.size());
    s.accuracy = 0.5 * (accepted / static_cast<double>(g.size()) + rejected / static_cast<double>(im.size()));
    s.eer = roc_eer(g, im).eer;
    double genuine_ok = 0, impostor_ok = 0, impostor_pairs = 0;
    for (const auto& [key, count] : pairs) {
      if (key.first != user) continue;
      const bool accept = 2 * count.first > count.second;
      if (key.second == user) {
        genuine_ok = accept ? 1 : 0;
      } else {
        impostor_ok += accept ? 0 : 1;
        impostor_pairs += 1;
      }
    }
    s.session_accuracy = 0.5 * (genuine_ok + (impostor_pairs > 0 ? impostor_ok / impostor_pairs : 1.0));
    out.per_user[user] = s;
    acc.push_back(s.accuracy);
    eer.push_back(s.eer);
    far.push_back(s.far);
    frr.push_back(s.frr);
    sess.push_back(s.session_accuracy);
  }
  if (acc.empty()) return out;
  auto mean = [](const std::vector<double>& v) {
    double sum = 0;
    for (const double x : v) sum += x;
    return sum / static_cast<double>(v.size());
  };
  out.accuracy_median = median(acc);
  out.accuracy_mean = mean(acc);
  out.eer_median = median(eer);
  out.eer_mean = mean(eer);
  out.far_mean = mean(far);
  out.frr_mean = mean(frr);
  out.session_accuracy_mean = mean(sess);
  return out;
}

AuthExperiment run_auth_experiment(const PopulationFeatures& features, const PipelineConfig& config,
                                   const ForestOptions& options, double threshold, int train_session) {
  std::map<std::string, std::vector<FeatureVector>> train;
  std::vector<FeatureVector> test;
  for (const auto& [user, sessions] : features.windows) {
    for (const auto& [session, windows] : sessions) {
      if (session == train_session) {
        train[user].insert(train[user].end(), windows.begin(), windows.end());
      } else {
        test.insert(test.end(), windows.begin(), windows.end());
      }
    }
  }
  AuthExperiment out;
  out.forests = train_all(train, config, options);
  for (auto& [user, forest] : out.forests) forest.decision_threshold = threshold;
  out.scores = score_windows(out.forests, test, options.workers);
  out.summary = summarize_auth(out.scores, threshold);
  return out;
}

}  // namespace evpupil
