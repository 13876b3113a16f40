#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "evpupil/config.hpp"
#include "evpupil/event.hpp"
#include "evpupil/forest.hpp"
#include "evpupil/kinematics.hpp"
#include "evpupil/metrics.hpp"
#include "evpupil/segmentation.hpp"
#include "evpupil/slicing.hpp"
#include "evpupil/synth.hpp"

namespace evpupil {

enum class SliceStrategy { Adaptive, FixedTime, FixedCount };

SliceStrategy parse_slice_strategy(std::string_view text);
std::string_view to_string(SliceStrategy strategy);

struct SliceOptions {
  SliceStrategy strategy = SliceStrategy::Adaptive;
  std::int64_t window_us = 10'000;
  std::size_t n_events = 2000;
};

std::vector<EventSlice> slice_stream(const EventStream& stream, const PipelineConfig& config,
                                     const SliceOptions& options = {});

std::vector<SliceBoundary> boundaries_of(std::span<const EventSlice> slices);

/// Segments every slice; row i belongs to slice i whatever the worker count.
std::vector<DetectionRow> detect_pupils(std::span<const EventSlice> slices, int width, int height,
                                        const PipelineConfig& config, int workers = 1);

struct FrameScore {
  std::size_t frame_idx = 0;
  std::int64_t t_mid = 0;
  double weight_us = 0;  // time the frame stands for: until the next frame starts
  double iou = 0;
  double dice = 0;
  std::optional<double> center_error;  // px, empty on a miss
};

/// Compares each detection with the true pupil at the frame midpoint. A miss
/// scores IoU = Dice = 0 against the (non-empty) true mask.
std::vector<FrameScore> score_detections(std::span<const SliceBoundary> slices, std::span<const DetectionRow> detections,
                                         const GroundTruth& truth);

struct SegmentationSummary {
  double iou_mean = 0;   // time-weighted
  double dice_mean = 0;  // time-weighted
  double iou_frame_mean = 0;
  double dice_frame_mean = 0;
  std::optional<double> mae_px;
  double miss_rate = 0;
  std::size_t frames = 0;
};

SegmentationSummary summarize_segmentation(std::span<const FrameScore> scores);

/// Kalman track of the detections turned into kinematic samples.
std::vector<KinematicSample> track_kinematics(std::span<const DetectionRow> detections, const PipelineConfig& config);

std::vector<FeatureVector> label_windows(std::vector<FeatureVector> windows, const std::string& user, int session);

/// Stream -> slices -> detections -> kinematics -> labelled windows.
struct SessionResult {
  std::vector<EventSlice> slices;
  std::vector<DetectionRow> detections;
  std::vector<KinematicSample> samples;
  std::vector<FeatureVector> windows;
};

SessionResult process_stream(const EventStream& stream, const PipelineConfig& config, const std::string& user,
                             int session, const SliceOptions& options = {}, int workers = 1);

/// Windows of every identity and session of a synthetic population.
struct PopulationFeatures {
  std::map<std::string, std::map<int, std::vector<FeatureVector>>> windows;  // user -> session -> windows
  std::map<std::string, IdentityParams> params;
};

PopulationFeatures population_features(int n_users, std::uint64_t seed, const PipelineConfig& config,
                                       const PopulationOptions& options = {}, int workers = 1);

struct ScoreRow {
  std::string user;          // owner of the window
  std::string claimed_user;  // forest that scored it
  std::size_t window_idx = 0;
  double score = 0;
  bool genuine = false;
};

/// Every window scored by every forest. Rows are ordered by claimed user, then
/// window owner, then window index.
std::vector<ScoreRow> score_windows(const std::map<std::string, UserForest>& forests,
                                    std::span<const FeatureVector> windows, int workers = 1);

void write_scores(std::span<const ScoreRow> rows, const std::filesystem::path& path);
std::vector<ScoreRow> read_scores(const std::filesystem::path& path);

struct UserAuthStats {
  double accuracy = 0;  // mean of genuine acceptance and impostor rejection rates
  double eer = 0;
  double far = 0;
  double frr = 0;
  double session_accuracy = 0;  // majority vote per (claim, owner) pair
  std::size_t genuine_windows = 0;
  std::size_t impostor_windows = 0;
};

struct AuthSummary {
  std::map<std::string, UserAuthStats> per_user;
  double accuracy_median = 0;
  double accuracy_mean = 0;
  double eer_median = 0;
  double eer_mean = 0;
  double far_mean = 0;
  double frr_mean = 0;
  double session_accuracy_mean = 0;
};

AuthSummary summarize_auth(std::span<const ScoreRow> rows, double threshold);

/// Trains on `train_session` and scores the windows of every other session.
struct AuthExperiment {
  std::map<std::string, UserForest> forests;
  std::vector<ScoreRow> scores;
  AuthSummary summary;
};

AuthExperiment run_auth_experiment(const PopulationFeatures& features, const PipelineConfig& config,
                                   const ForestOptions& options, double threshold = 0.5, int train_session = 0);

}  // namespace evpupil
