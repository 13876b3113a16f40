#include <doctest.h>

#include <thread>

#include "evpupil/errors.hpp"
#include "evpupil/metrics.hpp"
#include "support.hpp"

using namespace evpupil;
using namespace testsupport;

namespace {

Mask rect(int w, int h, int x0, int y0, int x1, int y1) {
  Mask m(w, h);
  for (int y = y0; y < y1; ++y) {
    for (int x = x0; x < x1; ++x) m.bits[static_cast<std::size_t>(y * w + x)] = 1;
  }
  return m;
}

}  // namespace

TEST_SUITE("eval") {

TEST_CASE("overlap examples") {
  const Mask a = rect(4, 1, 0, 0, 2, 1);
  const Mask b = rect(4, 1, 1, 0, 3, 1);
  CHECK(iou(a, b) == doctest::Approx(1.0 / 3.0));
  CHECK(dice(a, b) == doctest::Approx(0.5));
  CHECK(iou(a, a) == 1.0);
  CHECK(iou(Mask(4, 1), Mask(4, 1)) == 1.0);
  CHECK(dice(Mask(4, 1), Mask(4, 1)) == 1.0);
  CHECK(iou(a, Mask(4, 1)) == 0.0);

  const Mask c = rect(6, 1, 0, 0, 4, 1);
  const Mask d = rect(6, 1, 2, 0, 6, 1);
  CHECK(iou(c, d) == doctest::Approx(2.0 / 6.0));
  CHECK_THROWS_AS(iou(Mask(4, 1), Mask(3, 1)), ArgumentError);
}

TEST_CASE("overlap matches direct counting on random masks") {
  Rng rng(81);
  bool ok = true;
  for (int t = 0; t < 1000; ++t) {
    const int w = 1 + static_cast<int>(uniform_index(rng, 30));
    const int h = 1 + static_cast<int>(uniform_index(rng, 30));
    const Mask a = random_mask(rng, w, h, uniform01(rng));
    const Mask b = random_mask(rng, w, h, uniform01(rng));
    const double i = iou(a, b), d = dice(a, b);
    ok = ok && i == brute_iou(a, b) && d == brute_dice(a, b) && i <= d + 1e-15 && i >= 0 && d <= 1;
    ok = ok && i == iou(b, a);
  }
  CHECK(ok);
}

TEST_CASE("rasterized circles") {
  const Mask m = rasterize_circle(10, 10, 3, 20, 20);
  CHECK(m.bits[10 * 20 + 10] == 1);
  CHECK(m.bits[10 * 20 + 13] == 1);
  CHECK(m.bits[10 * 20 + 14] == 0);
  CHECK(m.count() == 29);
  CHECK(rasterize_circle(-50, -50, 3, 20, 20).count() == 0);
}

TEST_CASE("center error") {
  const std::vector<std::optional<Center>> pred{Center{3, 4}, std::nullopt, Center{0, 0}};
  const std::vector<Center> truth{{0, 0}, {1, 1}, {0, 0}};
  const CenterError e = center_mae(pred, truth);
  REQUIRE(e.mae.has_value());
  CHECK(*e.mae == doctest::Approx(2.5));
  CHECK(e.miss_rate == doctest::Approx(1.0 / 3.0));

  const std::vector<std::optional<Center>> none(2);
  const CenterError n = center_mae(none, std::vector<Center>{{0, 0}, {1, 1}});
  CHECK_FALSE(n.mae.has_value());
  CHECK(n.miss_rate == 1.0);
  CHECK_THROWS_AS(center_mae(none, truth), ArgumentError);
}

TEST_CASE("equal error rate examples") {
  SUBCASE("perfect separation") {
    const std::vector<double> g{0.9, 0.8}, i{0.1, 0.2};
    CHECK(roc_eer(g, i).eer == 0.0);
  }
  SUBCASE("identical distributions") {
    const std::vector<double> g{0.5, 0.5}, i{0.5, 0.5};
    CHECK(roc_eer(g, i).eer == doctest::Approx(brute_eer(g, i)));
  }
  SUBCASE("complete inversion") {
    const std::vector<double> g{0.1, 0.2}, i{0.8, 0.9};
    CHECK(roc_eer(g, i).eer == doctest::Approx(1.0));
  }
  SUBCASE("input validation") {
    const std::vector<double> g{0.5}, none;
    CHECK_THROWS_AS(roc_eer(g, none), ArgumentError);
    CHECK_THROWS_AS(roc_eer(none, g), ArgumentError);
  }
}

TEST_CASE("equal error rate against exhaustive enumeration") {
  Rng rng(82);
  bool ok = true;
  for (int t = 0; t < 300; ++t) {
    std::vector<double> g(1 + uniform_index(rng, 40)), im(1 + uniform_index(rng, 40));
    // Coarse grid so ties are common.
    for (auto& v : g) v = static_cast<double>(uniform_index(rng, 11)) / 10.0;
    for (auto& v : im) v = static_cast<double>(uniform_index(rng, 11)) / 10.0;
    const RocCurve c = roc_eer(g, im);
    ok = ok && std::abs(c.eer - brute_eer(g, im)) < 1e-12;
    for (std::size_t k = 1; k < c.points.size(); ++k) {
      ok = ok && c.points[k].threshold > c.points[k - 1].threshold;
      ok = ok && c.points[k].far <= c.points[k - 1].far && c.points[k].frr >= c.points[k - 1].frr;
    }
  }
  CHECK(ok);
}

TEST_CASE("equal error rate is invariant under monotone rescaling") {
  Rng rng(83);
  std::vector<double> g(200), im(200), g2, im2;
  for (auto& v : g) v = std::clamp(0.6 + 0.2 * (uniform01(rng) - 0.5) * 3, 0.0, 1.0);
  for (auto& v : im) v = std::clamp(0.4 + 0.2 * (uniform01(rng) - 0.5) * 3, 0.0, 1.0);
  for (double v : g) g2.push_back(v * v);
  for (double v : im) im2.push_back(v * v);
  CHECK(roc_eer(g, im).eer == doctest::Approx(roc_eer(g2, im2).eer).epsilon(1e-12));
}

TEST_CASE("rates at an operating point") {
  const std::vector<double> g{0.2, 0.6, 0.9}, im{0.1, 0.3, 0.7};
  const RocCurve c = roc_eer(g, im);
  const ErrorRates r = far_frr_at(c, 0.5);
  CHECK(r.far == doctest::Approx(1.0 / 3.0));
  CHECK(r.frr == doctest::Approx(1.0 / 3.0));
  const ErrorRates zero = far_frr_at(c, 0.0);
  CHECK(zero.far == 1.0);
  CHECK(zero.frr == 0.0);
}

TEST_CASE("effective rejection over attempts") {
  CHECK(effective_frr(0.09, 3) == doctest::Approx(0.000729));
  CHECK(effective_frr(0.5, 1) == 0.5);
  CHECK_THROWS_AS(effective_frr(1.5, 2), ArgumentError);
  CHECK_THROWS_AS(effective_frr(0.5, 0), ArgumentError);
}

TEST_CASE("latency statistics") {
  CHECK_THROWS_AS(bench_latency(BenchOp::Segmentation, [] {}, 5), ArgumentError);
  int calls = 0;
  const LatencyStats s = bench_latency(
      BenchOp::Classification,
      [&] {
        ++calls;
        std::this_thread::sleep_for(std::chrono::microseconds(200));
      },
      20);
  CHECK(calls == 23);
  CHECK(s.repetitions == 20);
  CHECK(s.p50_ms >= 0.2);
  CHECK(s.p95_ms >= s.p50_ms);
  CHECK(to_string(BenchOp::Segmentation) == "segmentation");
}

TEST_CASE("percentiles") {
  CHECK(percentile({5, 1, 3, 2, 4}, 0.5) == 3);
  CHECK(median({4, 1, 3, 2}) == 2.5);
  CHECK(percentile({1, 2, 3, 4, 5, 6, 7, 8, 9, 10}, 0.95) == 10);
  CHECK_THROWS(percentile({}, 0.5));
}

}  // TEST_SUITE
