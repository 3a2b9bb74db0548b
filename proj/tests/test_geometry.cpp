#include <algorithm>
#include <cmath>

#include <Eigen/SVD>

#include "doctest.h"
#include "epitraj/geometry.hpp"
#include "support.hpp"

using namespace test;

namespace {

Mat3 cross_matrix(const Vec3& v) {
  Mat3 m;
  m << 0, -v(2), v(1), v(2), 0, -v(0), -v(1), v(0), 0;
  return m;
}

// Point-line distance evaluated from scratch.
double line_distance(const Vec3& l, const Vec3& x) {
  return std::abs(l.dot(x / x(2))) / std::sqrt(l(0) * l(0) + l(1) * l(1));
}

double sum_distance_ref(const Mat3& F21, const Mat3& F31, const Mat3& F32,
                        const Correspondence3& c) {
  return line_distance(F21 * c.x1, c.x2) + line_distance(F21.transpose() * c.x2, c.x1) +
         line_distance(F31 * c.x1, c.x3) + line_distance(F31.transpose() * c.x3, c.x1) +
         line_distance(F32 * c.x2, c.x3) + line_distance(F32.transpose() * c.x3, c.x2);
}

TripletGeometry true_geometry(const RigidScene& s) {
  const Fundamentals f = cameras_to_fundamentals(s.P[0], s.P[1], s.P[2]);
  TripletGeometry g;
  g.F21 = f.F21;
  g.F31 = f.F31;
  g.F32 = f.F32;
  return g;
}

double rank_ratio(const Mat3& F) {
  const Vec3 sv = Eigen::JacobiSVD<Mat3>(F).singularValues();
  return sv(2) / sv(0);
}

std::array<Correspondence3, 6> normalized_six(const std::vector<Correspondence3>& c,
                                              std::array<Mat3, 3>& T) {
  std::array<std::vector<Vec3>, 3> views;
  for (int k = 0; k < 6; ++k) {
    views[0].push_back(c[k].x1);
    views[1].push_back(c[k].x2);
    views[2].push_back(c[k].x3);
  }
  std::array<NormalizedPoints, 3> n;
  for (int v = 0; v < 3; ++v) {
    n[v] = hartley_normalize(views[v]);
    T[v] = n[v].T;
  }
  std::array<Correspondence3, 6> out;
  for (int k = 0; k < 6; ++k) out[k] = {n[0].points[k], n[1].points[k], n[2].points[k], 0};
  return out;
}

}  // namespace

TEST_CASE("hartley_normalize") {
  SUBCASE("already normalized") {
    const std::vector<Vec3> pts{{1, 1, 1}, {-1, 1, 1}, {1, -1, 1}, {-1, -1, 1}};
    const NormalizedPoints n = hartley_normalize(pts);
    CHECK((n.T - Mat3::Identity()).norm() < 1e-12);
  }
  SUBCASE("repeated point") {
    const std::vector<Vec3> pts(5, Vec3(3, 4, 1));
    CHECK_THROWS_AS(hartley_normalize(pts), DegenerateError);
  }
  SUBCASE("random clouds") {
    Rng rng(31);
    for (int trial = 0; trial < 50; ++trial) {
      std::vector<Vec3> pts;
      const int n = 3 + static_cast<int>(rng.below(40));
      for (int i = 0; i < n; ++i) pts.emplace_back(rng.uniform(-500, 900), rng.uniform(0, 300), 1);
      const NormalizedPoints np = hartley_normalize(pts);
      Vec2 centroid = Vec2::Zero();
      double ms = 0;
      for (int i = 0; i < n; ++i) {
        const Vec3 q = np.T * pts[i];
        CHECK((q / q(2) - np.points[i] / np.points[i](2)).norm() < 1e-12);
        centroid += q.hnormalized();
      }
      centroid /= n;
      for (int i = 0; i < n; ++i) ms += (np.points[i].hnormalized() - centroid).squaredNorm();
      CHECK(centroid.norm() < 1e-10);
      CHECK(std::abs(std::sqrt(ms / n) - std::sqrt(2.0)) < 1e-10);
      CHECK(std::abs(np.T.determinant()) > 0);
    }
  }
}

TEST_CASE("trifocal_six_point: reprojection and held-out transfer") {
  Rng rng(32);
  int solved = 0;
  for (int trial = 0; trial < 30; ++trial) {
    const RigidScene s = random_rigid_scene(rng, 7);
    const auto corrs = s.corrs();
    std::array<Mat3, 3> T;
    const auto six = normalized_six(corrs, T);
    std::vector<CameraTriplet> cands;
    try {
      cands = trifocal_six_point(six);
    } catch (const DegenerateError&) {
      continue;
    }
    ++solved;
    CHECK((cands.size() == 1 || cands.size() == 3));
    double best_reproj = 1e300, best_transfer = 1e300;
    for (const auto& c : cands) {
      double worst = 0;
      for (int k = 0; k < 6; ++k) worst = std::max(worst, max_reprojection_error(c, c.points[k], six[k]));
      best_reproj = std::min(best_reproj, worst);
      const Fundamentals f = cameras_to_fundamentals(c.P1, c.P2, c.P3);
      if (f.degenerate[0] || f.degenerate[1] || f.degenerate[2]) continue;
      const Mat3 F21 = T[1].transpose() * f.F21 * T[0];
      const Mat3 F31 = T[2].transpose() * f.F31 * T[0];
      const Mat3 F32 = T[2].transpose() * f.F32 * T[1];
      best_transfer = std::min(best_transfer, sum_distance_ref(F21, F31, F32, corrs[6]) / 6);
    }
    CHECK(best_reproj < 1e-6);
    CHECK(best_transfer < 1e-3);
  }
  CHECK(solved >= 25);
}

TEST_CASE("trifocal_six_point: zero parallax is degenerate") {
  std::array<Correspondence3, 6> c;
  const double xy[6][2] = {{0, 0}, {1, 0}, {0, 1}, {1, 1}, {0.3, 0.7}, {0.8, 0.2}};
  for (int k = 0; k < 6; ++k) {
    const Vec3 p(xy[k][0], xy[k][1], 1);
    c[k] = {p, p, p, 0};
  }
  CHECK_THROWS_AS(trifocal_six_point(c), DegenerateError);
}

TEST_CASE("cameras_to_fundamentals") {
  Rng rng(33);
  SUBCASE("identical cameras") {
    const RigidScene s = random_rigid_scene(rng, 1);
    const Fundamentals f = cameras_to_fundamentals(s.P[0], s.P[0], s.P[2]);
    CHECK(f.degenerate[0]);
    CHECK(f.F21.norm() == 0);
    CHECK_FALSE(f.degenerate[1]);
  }
  SUBCASE("rigid points satisfy the bilinear constraint") {
    for (int trial = 0; trial < 20; ++trial) {
      const RigidScene s = random_rigid_scene(rng, 20);
      const Fundamentals f = cameras_to_fundamentals(s.P[0], s.P[1], s.P[2]);
      for (const Mat3* F : {&f.F21, &f.F31, &f.F32}) {
        CHECK(std::abs(F->norm() - 1) < 1e-12);
        CHECK(rank_ratio(*F) < 1e-8);
      }
      for (const auto& c : s.corrs()) {
        CHECK(std::abs(c.x2.dot(f.F21 * c.x1)) < 1e-8);
        CHECK(std::abs(c.x3.dot(f.F31 * c.x1)) < 1e-8);
        CHECK(std::abs(c.x3.dot(f.F32 * c.x2)) < 1e-8);
        // F12 = F21^T maps view-2 points to their lines in view 1.
        CHECK(line_distance(epipolar_line(f.F21.transpose(), c.x2), c.x1) < 1e-6);
      }
    }
  }
}

TEST_CASE("epipolar_line and distance") {
  const Mat3 S = cross_matrix(Vec3(0, 0, 1));
  const Vec3 l = epipolar_line(S, Vec3(1, 0, 1));
  CHECK((l - Vec3(0, 1, 0)).norm() == 0);
  CHECK(epipolar_distance(Vec3(0, 1, 0), Vec3(5, 3, 1)) == 3.0);
  CHECK(epipolar_distance(Vec3(0, 1, 0), Vec3(5, 0, 1)) == 0.0);
  CHECK(epipolar_distance(Vec3(3, 4, -25), Vec3(0, 0, 1)) == 5.0);
  CHECK_THROWS_AS(epipolar_line(S, Vec3(0, 0, 1)), EpipoleError);
  CHECK_THROWS_AS(epipolar_distance(Vec3(0, 0, 2), Vec3(1, 1, 1)), EpipoleError);
}

TEST_CASE("triplet_distance") {
  Rng rng(34);
  SUBCASE("noiseless rigid correspondence") {
    for (int trial = 0; trial < 10; ++trial) {
      const RigidScene s = random_rigid_scene(rng, 30);
      const TripletGeometry g = true_geometry(s);
      for (const auto& c : s.corrs()) CHECK(triplet_distance(g, c) < 1e-6);
    }
  }
  SUBCASE("sum of pairwise terms") {
    const RigidScene s = random_rigid_scene(rng, 5);
    const TripletGeometry g = true_geometry(s);
    Correspondence3 c = s.corr(s.X[0]);
    c.x2 += Vec3(3, -2, 0);
    const auto d = pairwise_distances(g, c);
    double sum = 0;
    for (double x : d) sum += x;
    CHECK(triplet_distance(g, c) == doctest::Approx(sum).epsilon(1e-14));
    CHECK(std::abs(sum - sum_distance_ref(g.F21, g.F31, g.F32, c)) < 1e-9);
  }
  SUBCASE("displacement off the epipolar line") {
    for (int trial = 0; trial < 20; ++trial) {
      const RigidScene s = random_rigid_scene(rng, 1);
      const TripletGeometry g = true_geometry(s);
      Correspondence3 c = s.corr(s.X[0]);
      const Vec3 l = g.F21 * c.x1;
      const Vec2 normal = Vec2(l(0), l(1)).normalized();
      const Vec2 along(-normal(1), normal(0));
      const Vec2 shift = 10 * (0.6 * normal + 0.8 * along);
      c.x2.head<2>() += shift;
      // d12 alone equals the normal component of the shift.
      const double normal_part = std::abs(shift.dot(normal));
      CHECK(pairwise_distances(g, c)[0] == doctest::Approx(normal_part).epsilon(1e-9));
      CHECK(triplet_distance(g, c) >= normal_part - 1e-9);
      CHECK(triplet_distance(g, c) > 0);
    }
  }
  SUBCASE("degenerate pairs contribute zero") {
    const RigidScene s = random_rigid_scene(rng, 1);
    TripletGeometry g = true_geometry(s);
    Correspondence3 c = s.corr(s.X[0]);
    c.x3 += Vec3(4, 4, 0);
    g.degenerate = {true, true, true};
    CHECK(triplet_distance(g, c) == 0);
  }
}

TEST_CASE("property: distance invariances") {
  Rng rng(35);
  for (int trial = 0; trial < 30; ++trial) {
    const RigidScene s = random_rigid_scene(rng, 4);
    const TripletGeometry g = true_geometry(s);
    Correspondence3 c = s.corr(s.X[0]);
    c.x1 += Vec3(rng.uniform(-5, 5), rng.uniform(-5, 5), 0);
    c.x3 += Vec3(rng.uniform(-5, 5), rng.uniform(-5, 5), 0);
    const double d = triplet_distance(g, c);

    // Scale.
    TripletGeometry scaled = g;
    scaled.F21 *= rng.uniform(0.1, 10);
    scaled.F31 *= -rng.uniform(0.1, 10);
    scaled.F32 *= 1e-3;
    CHECK(std::abs(triplet_distance(scaled, c) - d) < 1e-9 * (1 + d));

    // Swapping views 1 and 2 transposes F21 and exchanges F31, F32.
    TripletGeometry swapped = g;
    swapped.F21 = g.F21.transpose();
    swapped.F31 = g.F32;
    swapped.F32 = g.F31;
    CHECK(std::abs(triplet_distance(swapped, {c.x2, c.x1, c.x3, 0}) - d) < 1e-9 * (1 + d));

    // Translation of every image by t with F' = T^-T F T^-1.
    const Vec2 t(rng.uniform(-100, 100), rng.uniform(-100, 100));
    Mat3 Tm = Mat3::Identity();
    Tm.block<2, 1>(0, 2) = t;
    const Mat3 Ti = Tm.inverse();
    TripletGeometry moved;
    moved.F21 = Ti.transpose() * g.F21 * Ti;
    moved.F31 = Ti.transpose() * g.F31 * Ti;
    moved.F32 = Ti.transpose() * g.F32 * Ti;
    const Correspondence3 cm{Tm * c.x1, Tm * c.x2, Tm * c.x3, 0};
    CHECK(std::abs(triplet_distance(moved, cm) - d) < 1e-8);
  }
}

TEST_CASE("detect_static_camera") {
  CHECK(detect_static_camera(FlowField(10, 10), FlowField(10, 10)));
  auto fraction_moving = [](double moving) {
    FlowField f(10, 10);
    for (int i = 0; i < static_cast<int>(moving * 100); ++i) f.u[i] = 5;
    return f;
  };
  CHECK(detect_static_camera(fraction_moving(0.4), fraction_moving(0.4)));
  CHECK_FALSE(detect_static_camera(fraction_moving(0.7), fraction_moving(0.7)));
  CHECK_FALSE(detect_static_camera(FlowField(10, 10), fraction_moving(0.7)));
}

TEST_CASE("static_fundamentals") {
  const TripletGeometry g = static_fundamentals(320, 240);
  CHECK(g.static_camera);
  CHECK(g.inlier_ratio == 1.0);
  for (const Mat3* F : {&g.F21, &g.F31, &g.F32}) CHECK((*F + F->transpose()).norm() == 0);
  Rng rng(36);
  for (int i = 0; i < 100; ++i) {
    const Vec3 x(static_cast<double>(rng.below(320)), static_cast<double>(rng.below(240)), 1);
    CHECK(triplet_distance(g, {x, x, x, 0}) == 0);
  }
  // Centre c: a point moving perpendicular to the line through itself and c.
  const Vec3 c = g.F21.col(0).cross(g.F21.col(1)).normalized();
  const Vec2 centre = c.hnormalized();
  const Vec3 x1(centre(0) + 50, centre(1) + 20, 1);
  const Vec3 x2 = x1 + Vec3(-4, 10, 0);
  CHECK(triplet_distance(g, {x1, x2, x2, 0}) > 0);
}

TEST_CASE("ransac_triplet") {
  SUBCASE("too few correspondences") {
    Rng rng(37);
    const RigidScene s = random_rigid_scene(rng, 5);
    CHECK_THROWS_AS(ransac_triplet(s.corrs(), {}), InsufficientDataError);
  }
  SUBCASE("noiseless rigid input") {
    Rng rng(38);
    const RigidScene s = random_rigid_scene(rng, 80);
    const auto corrs = s.corrs();
    const TripletGeometry g = ransac_triplet(corrs, {});
    CHECK(g.inlier_ratio == 1.0);
    std::vector<double> d;
    for (const auto& c : corrs) d.push_back(sum_distance_ref(g.F21, g.F31, g.F32, c) / 6);
    std::nth_element(d.begin(), d.begin() + d.size() / 2, d.end());
    CHECK(d[d.size() / 2] < 1e-3);
    for (const Mat3* F : {&g.F21, &g.F31, &g.F32}) CHECK(rank_ratio(*F) < 1e-8);
  }
  SUBCASE("rigid plus outliers, both scores") {
    for (RansacScore score : {RansacScore::LeastMedian, RansacScore::InlierCount}) {
      for (std::uint64_t seed = 1; seed <= 10; ++seed) {
        Rng rng(100 + seed);
        const RigidScene s = random_rigid_scene(rng, 100);
        auto corrs = s.corrs();
        for (int i = 0; i < 20; ++i) {
          corrs.push_back(make_correspondence({rng.uniform(0, 320), rng.uniform(0, 240)},
                                              {rng.uniform(0, 320), rng.uniform(0, 240)},
                                              {rng.uniform(0, 320), rng.uniform(0, 240)}));
        }
        RansacParams p;
        p.rng_seed = seed;
        p.score = score;
        const TripletGeometry g = ransac_triplet(corrs, p);
        int rigid_inliers = 0;
        for (int i = 0; i < 100; ++i) {
          if (sum_distance_ref(g.F21, g.F31, g.F32, corrs[i]) / 6 < 1.0) ++rigid_inliers;
        }
        CHECK(rigid_inliers >= 95);
        CHECK(g.inlier_ratio >= 0.0);
        CHECK(g.inlier_ratio <= 1.0);
      }
    }
  }
  SUBCASE("noisy rigid input keeps 90% inliers") {
    Rng rng(39);
    const RigidScene s = random_rigid_scene(rng, 400);
    auto corrs = s.corrs();
    for (auto& c : corrs) {
      for (Vec3* x : {&c.x1, &c.x2, &c.x3}) (*x) += Vec3(0.2 * rng.normal(), 0.2 * rng.normal(), 0);
    }
    CHECK(ransac_triplet(corrs, {}).inlier_ratio >= 0.9);
  }
  SUBCASE("deterministic for a seed") {
    Rng rng(40);
    const RigidScene s = random_rigid_scene(rng, 60);
    RansacParams p;
    p.rng_seed = 9;
    const TripletGeometry a = ransac_triplet(s.corrs(), p);
    const TripletGeometry b = ransac_triplet(s.corrs(), p);
    CHECK(a.F21 == b.F21);
    CHECK(a.F32 == b.F32);
  }
  SUBCASE("parameter validation") {
    Rng rng(41);
    const RigidScene s = random_rigid_scene(rng, 10);
    RansacParams p;
    p.confidence = 1.0;
    CHECK_THROWS_AS(ransac_triplet(s.corrs(), p), ArgError);
    p = {};
    p.inlier_threshold = 0;
    CHECK_THROWS_AS(ransac_triplet(s.corrs(), p), ArgError);
  }
}

TEST_CASE("ransac score names") {
  CHECK(parse_ransac_score("count") == RansacScore::InlierCount);
  CHECK(parse_ransac_score("median") == RansacScore::LeastMedian);
  CHECK_THROWS_AS(parse_ransac_score("mean"), ConfigError);
  CHECK(std::string(ransac_score_name(RansacScore::LeastMedian)) == "median");
}

TEST_CASE("geometry json roundtrip") {
  Rng rng(42);
  const RigidScene s = random_rigid_scene(rng, 1);
  TripletGeometry g = true_geometry(s);
  g.frame = 3;
  g.inlier_ratio = 0.875;
  const std::vector<TripletGeometry> in{g, static_fundamentals(32, 24)};
  const auto out = geometries_from_json(geometries_to_json(in));
  REQUIRE(out.size() == 2);
  CHECK(out[0].frame == 3);
  CHECK((out[0].F21 - g.F21).norm() < 1e-15);
  CHECK(out[0].inlier_ratio == 0.875);
  CHECK(out[1].static_camera);
}
