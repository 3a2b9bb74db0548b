#include <cmath>
#include <map>

#include <nlohmann/json.hpp>

#include "doctest.h"
#include "epitraj/flow_io.hpp"
#include "epitraj/synth.hpp"
#include "support.hpp"

using namespace test;

namespace {

// Camera translating along X over a plane at depth 10, patch at depth 5
// moving against the camera. No jitter or pan: every camera is K [I | -C].
SceneConfig translating_scene() {
  SceneConfig c;
  c.frames = 5;
  c.width = 64;
  c.height = 48;
  c.focal = 80;
  c.background = BackgroundKind::Plane;
  c.background_depth = 10;
  c.camera_velocity = Vec3(0.13, 0, 0);
  ForegroundPatch p;
  p.center = Vec3(0.123, -0.071, 5);
  p.half_size = Vec2(0.61, 0.47);
  p.velocity = Vec3(-0.17, 0.0, 0);
  c.foreground = {p};
  return c;
}

std::map<std::string, std::string> tree(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (e.is_regular_file()) out[fs::relative(e.path(), root).string()] = slurp(e.path());
  }
  return out;
}

}  // namespace

TEST_CASE("static camera, static scene") {
  SceneConfig c = SceneConfig::static_camera_preset(3, false);
  const SceneGroundTruth s = generate_scene(c);
  for (std::size_t t = 0; t < s.fwd.size(); ++t) {
    CHECK(s.fwd[t] == FlowField(c.width, c.height));
    CHECK(s.bwd[t] == FlowField(c.width, c.height));
  }
  CHECK(detect_static_camera(s.fwd[0], s.fwd[1]));
  for (const auto& f : s.triplet_fundamentals) CHECK(f[0].norm() == 0);
}

TEST_CASE("rigid correspondences satisfy the true fundamentals") {
  SceneConfig c = SceneConfig::moving_camera_preset(4);
  c.frames = 4;
  const SceneGroundTruth s = generate_scene(c);
  Rng rng(71);
  int checked = 0;
  for (int k = 0; k < 400; ++k) {
    const int x = static_cast<int>(rng.below(c.width)), y = static_cast<int>(rng.below(c.height));
    if (s.foreground[0](x, y)) continue;
    const auto track = s.track(0, x, y);
    if (track.size() < 3) continue;
    const Vec3 x1(track[0](0), track[0](1), 1), x2(track[1](0), track[1](1), 1),
        x3(track[2](0), track[2](1), 1);
    const auto& F = s.triplet_fundamentals[0];
    CHECK(std::abs(x2.dot(F[0] * x1)) < 1e-8);
    CHECK(std::abs(x3.dot(F[1] * x1)) < 1e-8);
    CHECK(std::abs(x3.dot(F[2] * x2)) < 1e-8);
    ++checked;
  }
  CHECK(checked > 200);
}

TEST_CASE("projections, flow and masks agree with a direct model") {
  const SceneConfig c = translating_scene();
  const SceneGroundTruth s = generate_scene(c);
  const Mat3 Kinv = s.K.inverse();
  const ForegroundPatch& patch = c.foreground[0];
  double fg_flow = 0, bg_flow = 0;
  int fg_n = 0, bg_n = 0;
  for (int t = 0; t + 1 < c.frames; ++t) {
    const Vec3 C0 = t * c.camera_velocity;
    const Vec3 P = patch.center + t * patch.velocity;
    for (int y = 0; y < c.height; ++y) {
      for (int x = 0; x < c.width; ++x) {
        const Vec3 d = Kinv * Vec3(x, y, 1);
        // Patch hit test on its plane.
        const Vec3 hp = C0 + (P(2) - C0(2)) / d(2) * d;
        const bool on_patch = std::abs(hp(0) - P(0)) <= patch.half_size(0) &&
                              std::abs(hp(1) - P(1)) <= patch.half_size(1);
        REQUIRE(s.foreground[t](x, y) == (on_patch ? 1 : 0));
        const Vec3 X = on_patch ? Vec3(hp + patch.velocity)
                                : Vec3(C0 + (c.background_depth - C0(2)) / d(2) * d);
        const Vec3 q = s.cameras[t + 1] * X.homogeneous();
        const Vec2 next = q.hnormalized();
        const Vec2 flow = next - Vec2(x, y);
        // Stored flow is the float rounding of the exact displacement.
        CHECK(std::abs(s.exact_fwd[t].u(x, y) - flow(0)) <= 1e-6 * std::abs(flow(0)) + 1e-9);
        CHECK(std::abs(s.exact_fwd[t].v(x, y) - flow(1)) <= 1e-6 * std::abs(flow(1)) + 1e-9);
        const auto track = s.track(t, x, y);
        if (track.size() >= 2) CHECK((track[1] - next).norm() < 1e-9);
        (on_patch ? fg_flow : bg_flow) += flow.norm();
        (on_patch ? fg_n : bg_n) += 1;
      }
    }
  }
  REQUIRE(fg_n > 0);
  CHECK(fg_flow / fg_n > bg_flow / bg_n);
}

TEST_CASE("true_fundamental") {
  Mat34 P1 = Mat34::Zero();
  P1.leftCols<3>() = Mat3::Identity();
  CHECK_THROWS_AS(true_fundamental(P1, P1), DegenerateError);
  Mat34 P2 = P1;
  P2.col(3) = Vec3(-1, 0, 0);
  const Mat3 F = true_fundamental(P1, P2);
  Mat3 expect;
  expect << 0, 0, 0, 0, 0, -1, 0, 1, 0;
  expect /= std::sqrt(2.0);
  CHECK(std::min((F - expect).norm(), (F + expect).norm()) < 1e-12);

  Rng rng(72);
  const RigidScene scene = random_rigid_scene(rng, 20);
  const Mat3 G = true_fundamental(scene.P[0], scene.P[1]);
  CHECK(std::abs(G.norm() - 1) < 1e-12);
  for (const auto& X : scene.X) {
    CHECK(std::abs(scene.project(1, X).dot(G * scene.project(0, X))) < 1e-8);
  }
}

TEST_CASE("noise and outliers") {
  SceneConfig c = SceneConfig::moving_camera_preset(5);
  c.frames = 3;
  c.flow_noise_sigma = 0.2;
  c.outlier_fraction = 0.1;
  const SceneGroundTruth s = generate_scene(c);
  std::size_t big = 0, n = 0;
  double sq = 0;
  for (std::size_t i = 0; i < s.fwd[0].u.size(); ++i) {
    const double du = s.fwd[0].u[i] - s.exact_fwd[0].u[i];
    const double dv = s.fwd[0].v[i] - s.exact_fwd[0].v[i];
    CHECK(std::abs(s.fwd[0].u[i]) <= 20.0f + std::abs(s.exact_fwd[0].u[i]) + 2.0f);
    if (std::hypot(du, dv) > 2.0) {
      ++big;
    } else {
      sq += du * du + dv * dv;
      ++n;
    }
  }
  const double frac = static_cast<double>(big) / s.fwd[0].u.size();
  CHECK(frac > 0.07);
  CHECK(frac < 0.11);
  CHECK(std::sqrt(sq / (2 * n)) == doctest::Approx(0.2).epsilon(0.05));
}

TEST_CASE("presets") {
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    const SceneConfig c = SceneConfig::moving_camera_preset(seed);
    c.validate();
    const SceneGroundTruth s = generate_scene(c);
    std::size_t fg = 0;
    for (std::size_t i = 0; i < s.foreground[0].size(); ++i) fg += s.foreground[0][i];
    const double frac = static_cast<double>(fg) / s.foreground[0].size();
    CHECK(frac >= 0.29);
    CHECK(frac <= 0.31);
  }
}

TEST_CASE("config validation and YAML") {
  SceneConfig c = translating_scene();
  c.camera_velocity = Vec3::Zero();
  CHECK_THROWS_AS(generate_scene(c), ConfigError);
  c.static_camera = true;
  CHECK_NOTHROW(c.validate());
  c.frames = 2;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  SceneConfig r = SceneConfig::moving_camera_preset(1);
  r.relief = 100;
  CHECK_THROWS_AS(r.validate(), ConfigError);
  CHECK_THROWS_AS(parse_scene_config("- 1\n- 2\n"), ConfigError);

  const SceneConfig p = SceneConfig::moving_camera_preset(7);
  const std::string yaml = scene_config_to_yaml(p);
  CHECK(scene_config_to_yaml(parse_scene_config(yaml)) == yaml);
  SceneConfig q = p;
  q.foreground[0].pause_begin = 3;
  q.foreground[0].pause_end = 9;
  const SceneConfig back = parse_scene_config(scene_config_to_yaml(q));
  CHECK(back.foreground[0].pause_begin == 3);
  CHECK(back.foreground[0].pause_end == 9);
}

TEST_CASE("seeded export is bit-identical") {
  TempDir dir;
  SceneConfig c = SceneConfig::moving_camera_preset(8);
  c.frames = 4;
  c.flow_noise_sigma = 0.2;
  c.outlier_fraction = 0.1;
  export_scene(generate_scene(c), dir / "a");
  export_scene(generate_scene(c), dir / "b");
  const auto a = tree(dir / "a");
  CHECK(a == tree(dir / "b"));
  CHECK(a.count("flow_fwd/000000.flo") == 1);
  CHECK(a.count("masks/000003.png") == 1);
  const auto j = nlohmann::json::parse(a.at("scene.json"));
  CHECK(j["frames"] == 4);
  CHECK(parse_scene_config(a.at("scene.yaml")).seed == 8);
}
