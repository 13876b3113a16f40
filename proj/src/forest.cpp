#include "evpupil/forest.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <thread>

#include <fmt/format.h>

#include "evpupil/detail/little_endian.hpp"
#include "evpupil/errors.hpp"
#include "evpupil/parallel.hpp"
#include "evpupil/rng.hpp"

namespace evpupil {

FeatureGroups FeatureGroups::parse(std::string_view text) {
  FeatureGroups g{false, false, false};
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const std::size_t end = std::min(text.find(',', pos), text.size());
    const std::string_view token = text.substr(pos, end - pos);
    if (token == "pos") {
      g.position = true;
    } else if (token == "vel") {
      g.velocity = true;
    } else if (token == "acc") {
      g.acceleration = true;
    } else if (token == "all") {
      g = FeatureGroups{};
    } else {
      throw ArgumentError(fmt::format("unknown feature group '{}' (expected pos, vel, acc)", token));
    }
    pos = end + 1;
  }
  return g;
}

std::string FeatureGroups::to_string() const {
  std::string s;
  auto add = [&](bool on, const char* name) {
    if (!on) return;
    if (!s.empty()) s += ',';
    s += name;
  };
  add(position, "pos");
  add(velocity, "vel");
  add(acceleration, "acc");
  return s;
}

std::vector<int> FeatureGroups::columns(int frames) const {
  std::vector<int> cols;
  for (int f = 0; f < frames; ++f) {
    const int base = f * kValuesPerFrame;
    if (position) cols.insert(cols.end(), {base, base + 1});
    if (velocity) cols.insert(cols.end(), {base + 2, base + 3});
    if (acceleration) cols.insert(cols.end(), {base + 4, base + 5});
  }
  return cols;
}

double DecisionTree::predict(std::span<const double> v) const {
  int i = 0;
  while (!nodes[i].is_leaf()) {
    i = v[nodes[i].feature] <= nodes[i].threshold ? nodes[i].left : nodes[i].right;
  }
  return nodes[i].positive_fraction;
}

namespace {

struct Dataset {
  std::vector<double> x;  // row-major, n x dims
  std::vector<std::uint8_t> y;
  std::size_t dims = 0;
  double at(std::size_t row, int col) const { return x[row * dims + static_cast<std::size_t>(col)]; }
};

bool canonical_less(const FeatureVector* a, const FeatureVector* b) {
  if (a->user != b->user) return a->user < b->user;
  if (a->session != b->session) return a->session < b->session;
  if (a->window_idx != b->window_idx) return a->window_idx < b->window_idx;
  if (a->t_start != b->t_start) return a->t_start < b->t_start;
  return a->values < b->values;
}

std::vector<const FeatureVector*> canonical(std::span<const FeatureVector> v) {
  std::vector<const FeatureVector*> out;
  out.reserve(v.size());
  for (const FeatureVector& f : v) out.push_back(&f);
  std::stable_sort(out.begin(), out.end(), canonical_less);
  return out;
}

struct TreeBuilder {
  const Dataset& data;
  const std::vector<int>& columns;
  std::size_t mtry;
  int max_depth;
  std::size_t min_node_size;
  Rng rng;

  std::vector<std::pair<double, std::uint8_t>> sorted;

  struct Split {
    int feature = -1;
    double threshold = 0;
    double impurity = 0;
  };

  static double gini_sum(double pos, double n) {
    if (n <= 0) return 0;
    const double p = pos / n;
    return n * (1.0 - p * p - (1.0 - p) * (1.0 - p));
  }

  // Best split on one column, or feature = -1 when the column is constant here.
  Split best_on(int col, std::span<const std::uint32_t> rows, double total_pos) {
    sorted.clear();
    for (const std::uint32_t r : rows) sorted.emplace_back(data.at(r, col), data.y[r]);
    std::sort(sorted.begin(), sorted.end());
    Split best;
    const double n = static_cast<double>(sorted.size());
    double left_pos = 0;
    for (std::size_t i = 0; i + 1 < sorted.size(); ++i) {
      left_pos += sorted[i].second;
      const double a = sorted[i].first, b = sorted[i + 1].first;
      if (!(a < b)) continue;
      const double nl = static_cast<double>(i + 1);
      const double imp = gini_sum(left_pos, nl) + gini_sum(total_pos - left_pos, n - nl);
      if (best.feature < 0 || imp < best.impurity) {
        double thr = a + (b - a) / 2;
        if (!(thr < b)) thr = a;
        best = {col, thr, imp};
      }
    }
    return best;
  }

  DecisionTree build(std::vector<std::uint32_t> rows) {
    DecisionTree tree;
    struct Task {
      int node;
      std::size_t begin, end;
      int depth;
    };
    std::vector<Task> stack;
    tree.nodes.emplace_back();
    stack.push_back({0, 0, rows.size(), 0});
    std::vector<int> pool;
    while (!stack.empty()) {
      const Task task = stack.back();
      stack.pop_back();
      const std::span<const std::uint32_t> node_rows(rows.data() + task.begin, task.end - task.begin);
      double pos = 0;
      for (const std::uint32_t r : node_rows) pos += data.y[r];
      const double n = static_cast<double>(node_rows.size());
      tree.nodes[task.node].positive_fraction = n > 0 ? pos / n : 0.0;
      const bool pure = pos == 0 || pos == n;
      if (pure || task.depth >= max_depth || node_rows.size() < min_node_size) continue;

      // Draw candidate features without replacement; keep drawing past mtry
      // only while no valid partition has been found.
      pool = columns;
      Split best;
      std::vector<int> batch;
      std::size_t drawn = 0;
      while (drawn < pool.size() && (best.feature < 0 || drawn < mtry)) {
        batch.clear();
        const std::size_t want = drawn < mtry ? std::min(mtry, pool.size()) - drawn : 1;
        for (std::size_t k = 0; k < want; ++k, ++drawn) {
          const std::size_t j = drawn + uniform_index(rng, pool.size() - drawn);
          std::swap(pool[drawn], pool[j]);
          batch.push_back(pool[drawn]);
        }
        std::sort(batch.begin(), batch.end());
        for (const int col : batch) {
          const Split s = best_on(col, node_rows, pos);
          if (s.feature < 0) continue;
          const bool better = best.feature < 0 || s.impurity < best.impurity ||
                              (s.impurity == best.impurity && s.feature < best.feature);
          if (better) best = s;
        }
      }
      if (best.feature < 0) continue;

      auto mid = std::partition(rows.begin() + static_cast<std::ptrdiff_t>(task.begin),
                                rows.begin() + static_cast<std::ptrdiff_t>(task.end),
                                [&](std::uint32_t r) { return data.at(r, best.feature) <= best.threshold; });
      const std::size_t split_at = static_cast<std::size_t>(mid - rows.begin());
      const int left = static_cast<int>(tree.nodes.size());
      tree.nodes.emplace_back();
      tree.nodes.emplace_back();
      TreeNode& node = tree.nodes[task.node];
      node.feature = best.feature;
      node.threshold = best.threshold;
      node.left = left;
      node.right = left + 1;
      stack.push_back({left + 1, split_at, task.end, task.depth + 1});
      stack.push_back({left, task.begin, split_at, task.depth + 1});
    }
    return tree;
  }
};

}  // namespace

UserForest train_forest(std::span<const FeatureVector> positives, std::span<const FeatureVector> negatives,
                        const PipelineConfig& config, const ForestOptions& options) {
  if (positives.empty() || negatives.empty()) throw TrainingError("train_forest needs both classes non-empty");
  if (!options.groups.any()) throw ArgumentError("at least one feature group must be enabled");
  const std::size_t dims = positives.front().values.size();
  if (dims == 0 || dims % kValuesPerFrame != 0) throw TrainingError("feature vectors must hold whole frames");
  for (auto set : {positives, negatives}) {
    for (const FeatureVector& v : set) {
      if (v.values.size() != dims) throw TrainingError("feature vectors have inconsistent dimensions");
    }
  }

  Dataset data;
  data.dims = dims;
  const auto pos_sorted = canonical(positives);
  const auto neg_sorted = canonical(negatives);
  for (const auto* v : pos_sorted) {
    data.x.insert(data.x.end(), v->values.begin(), v->values.end());
    data.y.push_back(1);
  }
  for (const auto* v : neg_sorted) {
    data.x.insert(data.x.end(), v->values.begin(), v->values.end());
    data.y.push_back(0);
  }
  const std::size_t n_pos = pos_sorted.size(), n_neg = neg_sorted.size();
  const std::size_t per_class = std::max(n_pos, n_neg);

  const std::vector<int> columns = options.groups.columns(static_cast<int>(dims / kValuesPerFrame));
  const auto mtry = static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(columns.size()))));

  UserForest forest;
  forest.user_label = pos_sorted.front()->user;
  forest.rng_seed = config.rng_seed;
  forest.n_features = static_cast<int>(dims);
  forest.decision_threshold = 0.5;
  forest.trees.resize(static_cast<std::size_t>(config.forest_trees));

  parallel_for(forest.trees.size(), options.workers, [&](std::size_t t) {
    TreeBuilder builder{data, columns, mtry, config.forest_max_depth,
                        static_cast<std::size_t>(config.forest_min_node_size), Rng(derive_seed(config.rng_seed, t)),
                        {}};
    std::vector<std::uint32_t> rows;
    rows.reserve(2 * per_class);
    for (std::size_t i = 0; i < per_class; ++i) rows.push_back(static_cast<std::uint32_t>(uniform_index(builder.rng, n_pos)));
    for (std::size_t i = 0; i < per_class; ++i) {
      rows.push_back(static_cast<std::uint32_t>(n_pos + uniform_index(builder.rng, n_neg)));
    }
    forest.trees[t] = builder.build(std::move(rows));
  });
  return forest;
}

double predict_proba(const UserForest& forest, std::span<const double> v) {
  if (static_cast<int>(v.size()) != forest.n_features) {
    throw ArgumentError(fmt::format("feature vector has {} values, forest expects {}", v.size(), forest.n_features));
  }
  if (forest.trees.empty()) throw ArgumentError("forest has no trees");
  double sum = 0;
  for (const DecisionTree& t : forest.trees) sum += t.predict(v);
  return sum / static_cast<double>(forest.trees.size());
}

AuthResult authenticate(const UserForest& forest, std::span<const FeatureVector> windows, std::size_t budget) {
  if (windows.empty()) throw ArgumentError("authenticate needs at least one window");
  const auto start = std::chrono::steady_clock::now();
  AuthResult result;
  const std::size_t limit = std::min(budget, windows.size());
  for (std::size_t i = 0; i < limit; ++i) {
    ++result.windows_consumed;
    if (predict_proba(forest, windows[i]) >= forest.decision_threshold) {
      result.accepted = true;
      break;
    }
  }
  result.elapsed_ms =
      std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
  return result;
}

std::map<std::string, UserForest> train_all(const std::map<std::string, std::vector<FeatureVector>>& features_by_user,
                                            const PipelineConfig& config, const ForestOptions& options) {
  if (features_by_user.size() < 2) throw TrainingError("train_all needs at least 2 identities");
  std::map<std::string, UserForest> out;
  for (const auto& [user, positives] : features_by_user) {
    if (positives.empty()) throw TrainingError("identity '" + user + "' has no feature windows");
    std::vector<FeatureVector> pool;
    for (const auto& [other, windows] : features_by_user) {
      if (other == user) continue;
      pool.insert(pool.end(), windows.begin(), windows.end());
    }
    std::vector<FeatureVector> negatives = std::move(pool);

    PipelineConfig per_user = config;
    per_user.rng_seed = derive_seed(config.rng_seed, "forest:" + user);
    UserForest forest = train_forest(positives, negatives, per_user, options);
    forest.user_label = user;
    out.emplace(user, std::move(forest));
  }
  return out;
}

namespace {
constexpr std::string_view kForestMagic = "PTFOREST1";
}

std::string serialize_forest(const UserForest& forest) {
  std::ostringstream out(std::ios::binary);
  out.write(kForestMagic.data(), static_cast<std::streamsize>(kForestMagic.size()));
  detail::put_le(out, static_cast<std::uint32_t>(forest.user_label.size()));
  out.write(forest.user_label.data(), static_cast<std::streamsize>(forest.user_label.size()));
  detail::put_le(out, forest.decision_threshold);
  detail::put_le(out, forest.rng_seed);
  detail::put_le(out, static_cast<std::uint32_t>(forest.n_features));
  detail::put_le(out, static_cast<std::uint32_t>(forest.trees.size()));
  for (const DecisionTree& t : forest.trees) {
    detail::put_le(out, static_cast<std::uint32_t>(t.nodes.size()));
    for (const TreeNode& n : t.nodes) {
      detail::put_le(out, static_cast<std::int32_t>(n.feature));
      detail::put_le(out, n.threshold);
      detail::put_le(out, static_cast<std::int32_t>(n.left));
      detail::put_le(out, static_cast<std::int32_t>(n.right));
      detail::put_le(out, n.positive_fraction);
    }
  }
  return out.str();
}

UserForest deserialize_forest(std::string_view bytes) {
  std::istringstream in{std::string(bytes), std::ios::binary};
  std::string magic(kForestMagic.size(), '\0');
  if (!in.read(magic.data(), static_cast<std::streamsize>(magic.size())) || magic != kForestMagic) {
    throw ParseError(1, "missing PTFOREST1 magic");
  }
  UserForest forest;
  try {
    const auto label_len = detail::get_le<std::uint32_t>(in);
    if (label_len > bytes.size()) throw ParseError(1, "corrupt label length");
    forest.user_label.resize(label_len);
    if (!in.read(forest.user_label.data(), label_len)) throw ParseError(1, "truncated label");
    forest.decision_threshold = detail::get_le<double>(in);
    forest.rng_seed = detail::get_le<std::uint64_t>(in);
    forest.n_features = static_cast<int>(detail::get_le<std::uint32_t>(in));
    const auto n_trees = detail::get_le<std::uint32_t>(in);
    forest.trees.resize(n_trees);
    for (DecisionTree& t : forest.trees) {
      const auto n_nodes = detail::get_le<std::uint32_t>(in);
      if (n_nodes == 0 || n_nodes > bytes.size()) throw ParseError(1, "corrupt node count");
      t.nodes.resize(n_nodes);
      for (TreeNode& n : t.nodes) {
        n.feature = detail::get_le<std::int32_t>(in);
        n.threshold = detail::get_le<double>(in);
        n.left = detail::get_le<std::int32_t>(in);
        n.right = detail::get_le<std::int32_t>(in);
        n.positive_fraction = detail::get_le<double>(in);
      }
      for (const TreeNode& n : t.nodes) {
        const bool ok = n.is_leaf() || (n.feature < forest.n_features && n.left > 0 && n.right > 0 &&
                                        n.left < static_cast<int>(n_nodes) && n.right < static_cast<int>(n_nodes));
        if (!ok) throw ValidationError("model file contains an invalid tree node");
      }
    }
  } catch (const IoError&) {
    throw ParseError(1, "truncated model file");
  }
  return forest;
}

void save_forest(const UserForest& forest, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  const std::string bytes = serialize_forest(forest);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failure on " + path.string());
}

UserForest load_forest(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return deserialize_forest(ss.str());
}

}  // namespace evpupil
