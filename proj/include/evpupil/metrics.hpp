#pragma once

#include <chrono>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "evpupil/tracking.hpp"

namespace evpupil {

struct Mask {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> bits;

  Mask() = default;
  Mask(int w, int h) : width(w), height(h), bits(static_cast<std::size_t>(w) * static_cast<std::size_t>(h), 0) {}
  std::size_t count() const;
};

/// Pixel (x, y) is set when its center lies within r of (cx, cy).
Mask rasterize_circle(double cx, double cy, double r, int width, int height);

/// |a & b| / |a | b|; 1.0 when both are empty.
double iou(const Mask& a, const Mask& b);
/// 2|a & b| / (|a| + |b|); 1.0 when both are empty.
double dice(const Mask& a, const Mask& b);

struct CenterError {
  std::optional<double> mae;  // empty when no frame has a prediction
  double miss_rate = 0.0;
};

CenterError center_mae(std::span<const std::optional<Center>> predicted, std::span<const Center> truth);

struct RocPoint {
  double threshold = 0;
  double far = 0;
  double frr = 0;
};

struct RocCurve {
  std::vector<RocPoint> points;  // strictly increasing thresholds
  double eer = 0;
};

/// Sweeps every distinct score plus the sentinels 0 and 1. At threshold t,
/// FAR = share of impostor scores >= t and FRR = share of genuine scores < t.
/// The EER interpolates linearly where FAR - FRR changes sign.
RocCurve roc_eer(std::span<const double> genuine, std::span<const double> impostor);

struct ErrorRates {
  double far = 0;
  double frr = 0;
};

/// Step-function lookup: the rates of the first curve threshold >= `threshold`.
ErrorRates far_frr_at(const RocCurve& curve, double threshold);

/// frr^k: chance of k independent consecutive false rejections.
double effective_frr(double frr, int k);

struct LatencyStats {
  double mean_ms = 0;
  double p50_ms = 0;
  double p95_ms = 0;
  std::size_t repetitions = 0;
};

enum class BenchOp { Segmentation, Classification };
std::string_view to_string(BenchOp op);

/// Times `work` `repetitions` times after 3 discarded warm-up runs.
LatencyStats bench_latency(BenchOp op, const std::function<void()>& work, std::size_t repetitions);

/// Nearest-rank percentile (q in [0, 1]) of an unsorted sample.
double percentile(std::vector<double> values, double q);
double median(std::vector<double> values);

}  // namespace evpupil
