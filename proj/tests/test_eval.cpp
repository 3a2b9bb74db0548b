#include <cmath>
#include <cstdio>

#include <nlohmann/json.hpp>

#include "doctest.h"
#include "epitraj/eval.hpp"
#include "epitraj/flow_io.hpp"
#include "support.hpp"

using namespace test;

namespace {

Mask rect(int w, int h, int x0, int y0, int x1, int y1) {
  Mask m(w, h);
  for (int y = y0; y < y1; ++y)
    for (int x = x0; x < x1; ++x) m(x, y) = 1;
  return m;
}

double iou_ref(const Mask& a, const Mask& b) {
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    inter += a[i] && b[i];
    uni += a[i] || b[i];
  }
  return uni == 0 ? 1.0 : static_cast<double>(inter) / uni;
}

void write_masks(const fs::path& dir, const std::vector<Mask>& masks) {
  fs::create_directories(dir);
  char name[16];
  for (std::size_t t = 0; t < masks.size(); ++t) {
    std::snprintf(name, sizeof name, "%05zu.png", t);
    write_mask(masks[t], dir / name);
  }
}

}  // namespace

TEST_CASE("iou") {
  const Mask a = rect(6, 6, 1, 1, 4, 4);
  CHECK(iou(a, a) == 1.0);
  CHECK(iou(a, rect(6, 6, 4, 4, 6, 6)) == 0.0);
  CHECK(iou(Mask(3, 3), Mask(3, 3)) == 1.0);
  // 4-px mask overlapping 2 px of a 4-px gt.
  const Mask m = rect(6, 2, 0, 0, 4, 1);
  const Mask g = rect(6, 2, 2, 0, 6, 1);
  CHECK(std::abs(iou(m, g) - 2.0 / 6.0) < 1e-9);
  CHECK_THROWS_AS(iou(Mask(3, 3), Mask(3, 2)), ArgError);
}

TEST_CASE("property: iou symmetry, translation, oracle") {
  Rng rng(61);
  for (int trial = 0; trial < 100; ++trial) {
    const int w = 4 + static_cast<int>(rng.below(20)), h = 4 + static_cast<int>(rng.below(20));
    const Mask a = random_mask(rng, w, h, rng.uniform());
    const Mask b = random_mask(rng, w, h, rng.uniform());
    CHECK(iou(a, b) == iou(b, a));
    CHECK(iou(a, b) == doctest::Approx(iou_ref(a, b)).epsilon(1e-15));
    // Pad both by a border and shift: the score is unchanged.
    const int dx = static_cast<int>(rng.below(5)), dy = static_cast<int>(rng.below(5));
    Mask pa(w + 5, h + 5), pb(w + 5, h + 5);
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        pa(x + dx, y + dy) = a(x, y);
        pb(x + dx, y + dy) = b(x, y);
      }
    }
    CHECK(iou(pa, pb) == iou(a, b));
    if (iou(a, b) == 1.0) CHECK(boundary_f(a, b) == 1.0);
    CHECK(boundary_f(a, a) == 1.0);
  }
}

TEST_CASE("series_stats") {
  const std::vector<double> flat(7, 0.8);
  SeriesStats s = series_stats(flat);
  CHECK(s.mean == doctest::Approx(0.8));
  CHECK(s.recall == 1.0);
  CHECK(s.decay == doctest::Approx(0.0));
  const std::vector<double> step{1, 1, 0, 0};
  s = series_stats(step);
  CHECK(s.mean == 0.5);
  CHECK(s.recall == 0.5);
  CHECK(s.decay == 1.0);
  const std::vector<double> low(5, 0.4);
  CHECK(series_stats(low).recall == 0.0);

  Rng rng(62);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> j(1 + rng.below(30));
    for (double& v : j) v = rng.uniform();
    double sum = 0;
    for (double v : j) sum += v;
    CHECK(series_stats(j).mean == doctest::Approx(sum / j.size()).epsilon(1e-12));
    const std::size_t q = (j.size() + 3) / 4;
    double first = 0, last = 0;
    for (std::size_t i = 0; i < q; ++i) {
      first += j[i];
      last += j[j.size() - 1 - i];
    }
    CHECK(series_stats(j).decay == doctest::Approx((first - last) / q).epsilon(1e-12));
  }
}

TEST_CASE("boundary") {
  const Mask m = rect(5, 5, 1, 1, 4, 4);
  const Mask b = boundary(m);
  CHECK(b(2, 2) == 0);
  CHECK(b(1, 1) == 1);
  CHECK(b(3, 2) == 1);
  CHECK(b(0, 0) == 0);
  // Pixels on the image edge are not boundary unless an unset neighbour exists.
  CHECK(boundary(Mask(4, 4, 1)) == Mask(4, 4, 0));
}

TEST_CASE("boundary_f") {
  const Mask a = rect(100, 100, 20, 20, 60, 50);
  CHECK(boundary_f(a, a) == 1.0);
  CHECK(boundary_f(Mask(10, 10), Mask(10, 10)) == 1.0);
  CHECK(boundary_f(a, Mask(100, 100)) == 0.0);
  // Radius ceil(0.008 * 141.4) = 2.
  CHECK(boundary_f(a, rect(100, 100, 21, 20, 61, 50)) == 1.0);
  const Mask thin = rect(100, 100, 10, 10, 11, 30);
  CHECK(boundary_f(thin, rect(100, 100, 20, 10, 21, 30)) == 0.0);
}

TEST_CASE("evaluate_sequence") {
  TempDir dir;
  Rng rng(63);
  std::vector<Mask> gt;
  for (int t = 0; t < 8; ++t) gt.push_back(rect(40, 30, 5 + t, 5, 20 + t, 25));
  write_masks(dir / "gt", gt);

  SUBCASE("self evaluation") {
    const EvalReport r = evaluate_sequence(dir / "gt", dir / "gt");
    CHECK(r.J.size() == 7);
    CHECK(r.J_stats.mean == 1.0);
    CHECK(r.F_stats.mean == 1.0);
    CHECK(r.J_stats.decay == 0.0);
    CHECK(r.F_stats.decay == 0.0);
    CHECK(r.J_stats.recall == 1.0);
    const auto j = nlohmann::json::parse(report_to_json(r));
    CHECK(j["J"]["mean"] == 1.0);
    CHECK(j["frames"].size() == 7);
    CHECK(report_to_table(r).find("J") != std::string::npos);
  }
  SUBCASE("recomputed J mean") {
    std::vector<Mask> pred;
    for (int t = 0; t < 8; ++t) pred.push_back(random_mask(rng, 40, 30, 0.3));
    write_masks(dir / "pred", pred);
    const EvalReport r = evaluate_sequence(dir / "pred", dir / "gt");
    double sum = 0;
    for (int t = 1; t < 8; ++t) sum += iou_ref(pred[t], gt[t]);
    CHECK(r.J_stats.mean == doctest::Approx(sum / 7).epsilon(1e-12));
    CHECK(r.frame_names[0] == "00001");
  }
  SUBCASE("errors") {
    fs::create_directories(dir / "empty");
    CHECK_THROWS_AS(evaluate_sequence(dir / "empty", dir / "gt"), ArgError);
    write_masks(dir / "short", std::vector<Mask>(gt.begin(), gt.begin() + 5));
    CHECK_THROWS_AS(evaluate_sequence(dir / "short", dir / "gt"), ArgError);
  }
}
