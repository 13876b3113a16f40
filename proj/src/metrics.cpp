#include "evpupil/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "evpupil/errors.hpp"

namespace evpupil {

std::size_t Mask::count() const {
  return static_cast<std::size_t>(std::count_if(bits.begin(), bits.end(), [](std::uint8_t b) { return b != 0; }));
}

Mask rasterize_circle(double cx, double cy, double r, int width, int height) {
  Mask m(width, height);
  if (r < 0) return m;
  const int y0 = std::max(0, static_cast<int>(std::floor(cy - r)));
  const int y1 = std::min(height - 1, static_cast<int>(std::ceil(cy + r)));
  const int x0 = std::max(0, static_cast<int>(std::floor(cx - r)));
  const int x1 = std::min(width - 1, static_cast<int>(std::ceil(cx + r)));
  const double r2 = r * r;
  for (int y = y0; y <= y1; ++y) {
    for (int x = x0; x <= x1; ++x) {
      const double dx = x - cx, dy = y - cy;
      if (dx * dx + dy * dy <= r2) m.bits[static_cast<std::size_t>(y) * width + x] = 1;
    }
  }
  return m;
}

namespace {

struct Overlap {
  std::size_t a = 0, b = 0, both = 0;
};

Overlap overlap(const Mask& a, const Mask& b) {
  if (a.width != b.width || a.height != b.height) throw ArgumentError("mask dimensions differ");
  Overlap o;
  for (std::size_t i = 0; i < a.bits.size(); ++i) {
    const bool pa = a.bits[i] != 0, pb = b.bits[i] != 0;
    o.a += pa;
    o.b += pb;
    o.both += (pa && pb);
  }
  return o;
}

}  // namespace

double iou(const Mask& a, const Mask& b) {
  const Overlap o = overlap(a, b);
  const std::size_t uni = o.a + o.b - o.both;
  return uni == 0 ? 1.0 : static_cast<double>(o.both) / static_cast<double>(uni);
}

double dice(const Mask& a, const Mask& b) {
  const Overlap o = overlap(a, b);
  return (o.a + o.b) == 0 ? 1.0 : 2.0 * static_cast<double>(o.both) / static_cast<double>(o.a + o.b);
}

CenterError center_mae(std::span<const std::optional<Center>> predicted, std::span<const Center> truth) {
  if (predicted.size() != truth.size()) throw ArgumentError("center_mae: length mismatch");
  CenterError out;
  if (truth.empty()) return out;
  double sum = 0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (!predicted[i]) continue;
    sum += std::hypot(predicted[i]->x - truth[i].x, predicted[i]->y - truth[i].y);
    ++hits;
  }
  if (hits > 0) out.mae = sum / static_cast<double>(hits);
  out.miss_rate = 1.0 - static_cast<double>(hits) / static_cast<double>(truth.size());
  return out;
}

RocCurve roc_eer(std::span<const double> genuine, std::span<const double> impostor) {
  if (genuine.empty() || impostor.empty()) throw ArgumentError("roc_eer needs genuine and impostor scores");
  std::vector<double> g(genuine.begin(), genuine.end()), im(impostor.begin(), impostor.end());
  std::sort(g.begin(), g.end());
  std::sort(im.begin(), im.end());

  std::vector<double> thresholds;
  thresholds.reserve(g.size() + im.size() + 2);
  thresholds.push_back(0.0);
  thresholds.insert(thresholds.end(), g.begin(), g.end());
  thresholds.insert(thresholds.end(), im.begin(), im.end());
  thresholds.push_back(1.0);
  std::sort(thresholds.begin(), thresholds.end());
  thresholds.erase(std::unique(thresholds.begin(), thresholds.end()), thresholds.end());

  RocCurve curve;
  curve.points.reserve(thresholds.size());
  const double ng = static_cast<double>(g.size()), ni = static_cast<double>(im.size());
  for (const double t : thresholds) {
    const auto below_g = std::lower_bound(g.begin(), g.end(), t) - g.begin();
    const auto below_i = std::lower_bound(im.begin(), im.end(), t) - im.begin();
    curve.points.push_back({t, (ni - static_cast<double>(below_i)) / ni, static_cast<double>(below_g) / ng});
  }

  // FAR - FRR is non-increasing in the threshold; find where it reaches zero.
  const auto& p = curve.points;
  curve.eer = p.back().far;  // unreachable fallback: the last sentinel always has FAR <= FRR
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double d = p[i].far - p[i].frr;
    if (d == 0) {
      curve.eer = p[i].far;
      break;
    }
    if (d < 0) {
      if (i == 0) {
        curve.eer = p[0].frr;
        break;
      }
      const double d_prev = p[i - 1].far - p[i - 1].frr;
      const double alpha = d_prev / (d_prev - d);
      curve.eer = p[i - 1].far + alpha * (p[i].far - p[i - 1].far);
      break;
    }
  }
  return curve;
}

ErrorRates far_frr_at(const RocCurve& curve, double threshold) {
  const auto it = std::lower_bound(curve.points.begin(), curve.points.end(), threshold,
                                   [](const RocPoint& p, double t) { return p.threshold < t; });
  if (it == curve.points.end()) return {0.0, 1.0};
  return {it->far, it->frr};
}

double effective_frr(double frr, int k) {
  if (frr < 0 || frr > 1) throw ArgumentError("frr must lie in [0, 1]");
  if (k < 1) throw ArgumentError("attempt count must be >= 1");
  return std::pow(frr, k);
}

std::string_view to_string(BenchOp op) {
  return op == BenchOp::Segmentation ? "segmentation" : "classification";
}

double percentile(std::vector<double> values, double q) {
  if (values.empty()) throw ArgumentError("percentile of an empty sample");
  std::sort(values.begin(), values.end());
  const double rank = std::ceil(q * static_cast<double>(values.size()));
  const auto idx = static_cast<std::size_t>(std::clamp(rank, 1.0, static_cast<double>(values.size()))) - 1;
  return values[idx];
}

double median(std::vector<double> values) {
  if (values.empty()) throw ArgumentError("median of an empty sample");
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  return n % 2 == 1 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

LatencyStats bench_latency(BenchOp, const std::function<void()>& work, std::size_t repetitions) {
  if (repetitions < 10) throw ArgumentError("bench_latency needs at least 10 repetitions");
  for (int i = 0; i < 3; ++i) work();
  std::vector<double> samples;
  samples.reserve(repetitions);
  for (std::size_t i = 0; i < repetitions; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    work();
    samples.push_back(std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count());
  }
  LatencyStats s;
  s.repetitions = repetitions;
  s.mean_ms = std::accumulate(samples.begin(), samples.end(), 0.0) / static_cast<double>(samples.size());
  s.p50_ms = percentile(samples, 0.5);
  s.p95_ms = percentile(samples, 0.95);
  return s;
}

}  // namespace evpupil
