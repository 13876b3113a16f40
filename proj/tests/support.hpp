#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "evpupil/config.hpp"
#include "evpupil/event.hpp"
#include "evpupil/image.hpp"
#include "evpupil/metrics.hpp"
#include "evpupil/rng.hpp"

namespace testsupport {

using namespace evpupil;

inline std::filesystem::path temp_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("evpupil_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  f << text;
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

inline bool close_rel(double a, double b, double rel, double abs_floor = 1e-15) {
  return std::abs(a - b) <= rel * std::max(std::abs(a), std::abs(b)) + abs_floor;
}

// Non-decreasing timestamps with ties and bursts, uniform coordinates.
inline EventStream random_stream(Rng& rng, std::size_t n, int width, int height, double mean_gap_us = 150.0) {
  EventStream s;
  s.width = width;
  s.height = height;
  s.events.reserve(n);
  std::int64_t t = static_cast<std::int64_t>(uniform_index(rng, 1000));
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint64_t mode = uniform_index(rng, 10);
    if (mode >= 3) t += static_cast<std::int64_t>(-std::log(1.0 - uniform01(rng)) * mean_gap_us);
    if (mode == 9) t += static_cast<std::int64_t>(uniform_index(rng, 20000));
    Event e;
    e.t = t;
    e.x = static_cast<std::uint16_t>(uniform_index(rng, static_cast<std::uint64_t>(width)));
    e.y = static_cast<std::uint16_t>(uniform_index(rng, static_cast<std::uint64_t>(height)));
    e.p = uniform_index(rng, 2) == 0 ? std::int8_t{-1} : std::int8_t{1};
    s.events.push_back(e);
  }
  return s;
}

// Straight transcription of the adaptive slicing rules. Every statistic is
// recomputed from the slice history and the raw accumulator after each event.
class SlicerOracle {
 public:
  SlicerOracle(int width, int height, const PipelineConfig& cfg)
      : d_(cfg.downsample_factor),
        gw_((width + d_ - 1) / d_),
        gh_((height + d_ - 1) / d_),
        cfg_(cfg),
        grid_(static_cast<std::size_t>(gw_) * gh_, 0) {}

  // Returns how many slices this event closes, mirroring AdaptiveSlicer::push.
  int push(const Event& e) {
    int cuts = 0;
    if (!pending_.empty() && e.t - pending_.front().t > cfg_.max_slice_duration_us) {
      reset();
      ++cuts;
    }
    pending_.push_back(e);
    ++n_;
    if (e.x % d_ == 0 || e.y % d_ == 0) {
      grid_[static_cast<std::size_t>(e.y / d_) * gw_ + e.x / d_] = 1;
      history_.push_back({n_, sigma_current()});
      if (sigma_running() > cfg_.slicing_threshold) {
        reset();
        return cuts + 1;
      }
    }
    if (static_cast<std::int64_t>(pending_.size()) >= cfg_.max_slice_events) {
      reset();
      ++cuts;
    }
    return cuts;
  }

  double mu() const {
    const auto active = std::count(grid_.begin(), grid_.end(), std::uint8_t{1});
    return static_cast<double>(active) / static_cast<double>(grid_.size());
  }

  double sigma_current() const { return std::abs(mu() - 1.0) / std::sqrt(static_cast<double>(grid_.size())); }

  double sigma_running() const {
    double s = 0;
    for (const auto& h : history_) {
      const double w = 1.0 / static_cast<double>(h.n);
      s = (1.0 - w) * s + w * h.sigma_c;
    }
    return s;
  }

  std::size_t cells() const { return grid_.size(); }

 private:
  struct Step {
    std::uint64_t n;
    double sigma_c;
  };
  void reset() {
    std::fill(grid_.begin(), grid_.end(), 0);
    history_.clear();
    pending_.clear();
  }

  int d_, gw_, gh_;
  PipelineConfig cfg_;
  std::vector<std::uint8_t> grid_;
  std::vector<Step> history_;
  std::vector<Event> pending_;
  std::uint64_t n_ = 0;
};

inline GrayImage brute_dilate(const GrayImage& img, int k) {
  GrayImage out(img.width, img.height);
  const int r = k / 2;
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      std::uint8_t m = 0;
      for (int dy = -r; dy <= r; ++dy) {
        for (int dx = -r; dx <= r; ++dx) {
          if (img.contains(x + dx, y + dy)) m = std::max(m, img.at(x + dx, y + dy));
        }
      }
      out.at(x, y) = m;
    }
  }
  return out;
}

inline double brute_iou(const Mask& a, const Mask& b) {
  std::size_t inter = 0, uni = 0;
  for (int y = 0; y < a.height; ++y) {
    for (int x = 0; x < a.width; ++x) {
      const std::size_t i = static_cast<std::size_t>(y) * a.width + x;
      inter += (a.bits[i] && b.bits[i]) ? 1 : 0;
      uni += (a.bits[i] || b.bits[i]) ? 1 : 0;
    }
  }
  return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

inline double brute_dice(const Mask& a, const Mask& b) {
  std::size_t inter = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.bits.size(); ++i) {
    na += a.bits[i] ? 1 : 0;
    nb += b.bits[i] ? 1 : 0;
    inter += (a.bits[i] && b.bits[i]) ? 1 : 0;
  }
  return na + nb == 0 ? 1.0 : 2.0 * static_cast<double>(inter) / static_cast<double>(na + nb);
}

// Exhaustive EER: every candidate threshold evaluated by direct counting, then
// every adjacent interval tested for a FAR/FRR crossing of the joining lines.
inline double brute_eer(const std::vector<double>& genuine, const std::vector<double>& impostor) {
  std::vector<double> th{0.0, 1.0};
  th.insert(th.end(), genuine.begin(), genuine.end());
  th.insert(th.end(), impostor.begin(), impostor.end());
  std::sort(th.begin(), th.end());
  th.erase(std::unique(th.begin(), th.end()), th.end());
  auto far = [&](double t) {
    double c = 0;
    for (double s : impostor) c += s >= t ? 1 : 0;
    return c / static_cast<double>(impostor.size());
  };
  auto frr = [&](double t) {
    double c = 0;
    for (double s : genuine) c += s < t ? 1 : 0;
    return c / static_cast<double>(genuine.size());
  };
  for (std::size_t i = 0; i < th.size(); ++i) {
    const double a0 = far(th[i]), r0 = frr(th[i]);
    if (a0 == r0) return a0;
    if (a0 < r0) return r0;  // FRR already above FAR at the lowest threshold
    if (i + 1 == th.size()) break;
    const double a1 = far(th[i + 1]), r1 = frr(th[i + 1]);
    if (a1 <= r1) {
      if (a1 == r1) return a1;
      // Intersection of the segments (0, a0)-(1, a1) and (0, r0)-(1, r1).
      const double s = (a0 - r0) / ((a0 - r0) - (a1 - r1));
      return a0 + s * (a1 - a0);
    }
  }
  return far(th.back());
}

inline Mask random_mask(Rng& rng, int w, int h, double density) {
  Mask m(w, h);
  for (auto& b : m.bits) b = uniform01(rng) < density ? 1 : 0;
  return m;
}

}  // namespace testsupport
