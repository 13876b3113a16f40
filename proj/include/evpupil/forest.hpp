#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "evpupil/config.hpp"
#include "evpupil/kinematics.hpp"

namespace evpupil {

/// Column groups of the per-frame (x, y, vx, vy, ax, ay) layout.
struct FeatureGroups {
  bool position = true;
  bool velocity = true;
  bool acceleration = true;

  /// Comma list of pos, vel, acc (e.g. "vel,acc").
  static FeatureGroups parse(std::string_view text);
  std::string to_string() const;
  bool any() const noexcept { return position || velocity || acceleration; }

  /// Indices into a window vector of `frames` frames that belong to the enabled groups.
  std::vector<int> columns(int frames) const;
};

struct TreeNode {
  int feature = -1;  // -1 marks a leaf
  double threshold = 0.0;
  int left = -1;
  int right = -1;
  double positive_fraction = 0.0;

  bool is_leaf() const noexcept { return feature < 0; }
  friend bool operator==(const TreeNode&, const TreeNode&) = default;
};

/// Node 0 is the root. Samples with value <= threshold go left.
struct DecisionTree {
  std::vector<TreeNode> nodes;

  double predict(std::span<const double> v) const;
  friend bool operator==(const DecisionTree&, const DecisionTree&) = default;
};

struct UserForest {
  std::string user_label;
  std::vector<DecisionTree> trees;
  double decision_threshold = 0.5;
  std::uint64_t rng_seed = 0;
  int n_features = 60;

  friend bool operator==(const UserForest&, const UserForest&) = default;
};

struct ForestOptions {
  FeatureGroups groups;
  int workers = 1;
};

/// One-vs-rest forest. Inputs are put in canonical (user, session, window_idx)
/// order first, so the result does not depend on the order they arrive in.
/// Each tree draws a class-stratified bootstrap with equal positive and
/// negative counts, which also balances the classes 1:1.
UserForest train_forest(std::span<const FeatureVector> positives, std::span<const FeatureVector> negatives,
                        const PipelineConfig& config, const ForestOptions& options = {});

/// Mean leaf positive fraction over trees.
double predict_proba(const UserForest& forest, std::span<const double> v);
inline double predict_proba(const UserForest& forest, const FeatureVector& v) {
  return predict_proba(forest, v.values);
}

struct AuthResult {
  bool accepted = false;
  std::size_t windows_consumed = 0;
  double elapsed_ms = 0.0;
};

/// Accepts at the first window scoring at least the forest's threshold;
/// rejects after `budget` windows (or when the stream runs out).
AuthResult authenticate(const UserForest& forest, std::span<const FeatureVector> windows, std::size_t budget = 50);

/// Positives are each identity's windows, negatives every window of the other
/// identities. The stratified bootstrap in train_forest evens out the sizes.
std::map<std::string, UserForest> train_all(const std::map<std::string, std::vector<FeatureVector>>& features_by_user,
                                            const PipelineConfig& config, const ForestOptions& options = {});

/// `PTFOREST1` binary model, little-endian.
void save_forest(const UserForest& forest, const std::filesystem::path& path);
UserForest load_forest(const std::filesystem::path& path);
std::string serialize_forest(const UserForest& forest);
UserForest deserialize_forest(std::string_view bytes);

}  // namespace evpupil
