#include "epitraj/synth.hpp"

#include <cmath>
#include <numbers>

#include <Eigen/Geometry>
#include <nlohmann/json.hpp>
#include <yaml-cpp/yaml.h>

#include "epitraj/errors.hpp"
#include "epitraj/flow_io.hpp"
#include "epitraj/rng.hpp"
#include "parallel.hpp"

namespace epitraj {

namespace {

struct Wave {
  double amplitude;
  double kx;
  double ky;
  double phase;
};

struct Hit {
  int surface = -2;  // -1 background, >= 0 foreground patch, -2 nothing
  double depth = 0;  // ray parameter along a unit direction
  Vec3 local;        // background: world point; patch: offset from centre
};

// Everything needed to ray-cast one frame.
class Renderer {
 public:
  explicit Renderer(const SceneConfig& c) : c_(c) {
    const Vec2 pp = c.principal.value_or(
        Vec2((c.width - 1) / 2.0, (c.height - 1) / 2.0));
    K_ << c.focal, 0, pp(0), 0, c.focal, pp(1), 0, 0, 1;
    Kinv_ = K_.inverse();

    Rng rng(c.seed * 0x9E3779B97F4A7C15ull + 17);
    for (int k = 0; k < c.depth_waves; ++k) {
      const double lambda = rng.uniform(c.wavelength_min, c.wavelength_max);
      const double angle = rng.uniform(0, std::numbers::pi);
      const double kk = 2 * std::numbers::pi / lambda;
      waves_.push_back({c.depth_amplitude, kk * std::cos(angle),
                        kk * std::sin(angle), rng.uniform(0, 2 * std::numbers::pi)});
    }

    Rng jitter(c.seed * 0xD1B54A32D192ED03ull + 3);
    for (int t = 0; t < c.frames; ++t) {
      Vec3 centre = c.camera_start + t * c.camera_velocity;
      if (c.camera_jitter > 0) {
        centre += c.camera_jitter * Vec3(jitter.uniform(-1, 1), jitter.uniform(-1, 1),
                                         jitter.uniform(-1, 1));
      }
      const Mat3 R =
          Eigen::AngleAxisd(c.camera_pan * t, Vec3::UnitY()).toRotationMatrix();
      centres_.push_back(centre);
      rotations_.push_back(R);
      Mat34 P;
      P.leftCols<3>() = R;
      P.col(3) = -R * centre;
      cameras_.push_back(K_ * P);
    }

    for (const auto& patch : c.foreground) {
      std::vector<Vec3> path{patch.center};
      for (int t = 0; t + 1 < c.frames; ++t) {
        const bool paused = t >= patch.pause_begin && t < patch.pause_end;
        path.push_back(path.back() + (paused ? Vec3::Zero() : patch.velocity));
      }
      patch_paths_.push_back(std::move(path));
    }
  }

  const Mat3& K() const { return K_; }
  const std::vector<Mat34>& cameras() const { return cameras_; }

  double surface_z(double X, double Y) const {
    if (c_.background == BackgroundKind::Plane) {
      return c_.background_depth + c_.plane_slope(0) * X + c_.plane_slope(1) * Y;
    }
    double z = c_.background_depth - c_.relief * std::max(std::abs(X), std::abs(Y));
    for (const auto& w : waves_) z += w.amplitude * std::sin(w.kx * X + w.ky * Y + w.phase);
    return z;
  }

  Vec2 surface_grad(double X, double Y) const {
    if (c_.background == BackgroundKind::Plane) return c_.plane_slope;
    Vec2 g = Vec2::Zero();
    if (std::abs(X) >= std::abs(Y)) {
      g(0) = X > 0 ? -c_.relief : c_.relief;
    } else {
      g(1) = Y > 0 ? -c_.relief : c_.relief;
    }
    for (const auto& w : waves_) {
      const double d = w.amplitude * std::cos(w.kx * X + w.ky * Y + w.phase);
      g += d * Vec2(w.kx, w.ky);
    }
    return g;
  }

  Vec3 ray(int frame, double x, double y) const {
    return (rotations_[frame].transpose() * (Kinv_ * Vec3(x, y, 1))).normalized();
  }

  Hit cast(int frame, double x, double y) const {
    const Vec3& C = centres_[frame];
    const Vec3 r = ray(frame, x, y);
    Hit best;
    best.depth = std::numeric_limits<double>::infinity();

    // Background: root of g(s) = C_z + s r_z - Z(C_xy + s r_xy), which is
    // negative at the camera. Newton steps are kept inside a bracket.
    if (r(2) > 0) {
      auto g = [&](double s) {
        const Vec3 p = C + s * r;
        return p(2) - surface_z(p(0), p(1));
      };
      double lo = 0.0;
      double hi = std::max(1e-3, (c_.background_depth - C(2)) / r(2));
      while (g(hi) <= 0 && hi < 1e9) hi *= 2;
      if (g(lo) < 0 && g(hi) > 0) {
        double s = 0.5 * (lo + hi);
        for (int it = 0; it < 200; ++it) {
          const double gs = g(s);
          if (gs == 0) break;
          (gs < 0 ? lo : hi) = s;
          const Vec3 p = C + s * r;
          const Vec2 grad = surface_grad(p(0), p(1));
          const double dg = r(2) - grad(0) * r(0) - grad(1) * r(1);
          double next = dg > 0 ? s - gs / dg : 0.5 * (lo + hi);
          if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
          const bool done = std::abs(next - s) <= 1e-15 * s;
          s = next;
          if (done) break;
        }
        best = {-1, s, C + s * r};
      }
    }

    for (std::size_t k = 0; k < patch_paths_.size(); ++k) {
      const Vec3& P = patch_paths_[k][frame];
      if (r(2) <= 0) continue;
      const double s = (P(2) - C(2)) / r(2);
      if (s <= 0 || s >= best.depth) continue;
      const Vec3 hit = C + s * r;
      const Vec3 off = hit - P;
      const Vec2& half = c_.foreground[k].half_size;
      if (std::abs(off(0)) <= half(0) && std::abs(off(1)) <= half(1)) {
        best = {static_cast<int>(k), s, off};
      }
    }
    return best;
  }

  Vec3 world_point(const Hit& h, int frame) const {
    return h.surface < 0 ? h.local : patch_paths_[h.surface][frame] + h.local;
  }

  // Projection of a surface point into `frame`; nullopt if behind the camera.
  std::optional<Vec2> project(const Hit& h, int frame) const {
    const Vec3 p = cameras_[frame] * world_point(h, frame).homogeneous();
    if (!(p(2) > 0)) return std::nullopt;
    return p.hnormalized();
  }

  // Points on the border stay inside despite rounding in the projection.
  bool inside(const Vec2& q) const {
    constexpr double eps = 1e-9;
    return q(0) >= -eps && q(1) >= -eps && q(0) <= c_.width - 1 + eps &&
           q(1) <= c_.height - 1 + eps;
  }

  // Whether the surface point `h` is the first hit at its projection in
  // `frame`.
  bool visible(const Hit& h, int frame, const Vec2& q) const {
    if (!inside(q)) return false;
    const Hit other = cast(frame, q(0), q(1));
    if (other.surface != h.surface) return false;
    const double expected = (world_point(h, frame) - centres_[frame]).norm();
    return std::abs(other.depth - expected) <= 1e-7 * expected;
  }

 private:
  const SceneConfig& c_;
  Mat3 K_;
  Mat3 Kinv_;
  std::vector<Wave> waves_;
  std::vector<Vec3> centres_;
  std::vector<Mat3> rotations_;
  std::vector<Mat34> cameras_;
  std::vector<std::vector<Vec3>> patch_paths_;
};

// Flow from frame `from` to frame `to` at every pixel of `from`.
FlowField render_flow(const Renderer& r, const SceneConfig& c, int from, int to,
                      Mask* visible) {
  FlowField f(c.width, c.height);
  detail::ExceptionSlot error;
#pragma omp parallel for schedule(static)
  for (int y = 0; y < c.height; ++y) {
    try {
      for (int x = 0; x < c.width; ++x) {
        const Hit h = r.cast(from, x, y);
        if (h.surface == -2) throw ConfigError("synth: a pixel sees no surface");
        const auto q = r.project(h, to);
        const auto p = r.project(h, from);
        if (!q || !p) throw ConfigError("synth: scene point behind the camera");
        // Both ends reprojected, so a point that keeps its image moves by
        // exactly zero.
        f.u(x, y) = static_cast<float>((*q)(0) - (*p)(0));
        f.v(x, y) = static_cast<float>((*q)(1) - (*p)(1));
        if (visible) (*visible)(x, y) = r.visible(h, to, *q) ? 1 : 0;
      }
    } catch (...) {
      error.capture();
    }
  }
  error.rethrow();
  return f;
}

FlowField perturb(const FlowField& exact, const SceneConfig& c, std::uint64_t stream) {
  FlowField f = exact;
  if (c.flow_noise_sigma <= 0 && c.outlier_fraction <= 0) return f;
  Rng rng(c.seed ^ (stream * 0x9E3779B97F4A7C15ull));
  for (std::size_t i = 0; i < f.u.size(); ++i) {
    const double nu = rng.normal();
    const double nv = rng.normal();
    const double pick = rng.uniform();
    const double ou = rng.uniform(-20, 20);
    const double ov = rng.uniform(-20, 20);
    if (pick < c.outlier_fraction) {
      f.u[i] = static_cast<float>(ou);
      f.v[i] = static_cast<float>(ov);
    } else {
      f.u[i] = static_cast<float>(f.u[i] + c.flow_noise_sigma * nu);
      f.v[i] = static_cast<float>(f.v[i] + c.flow_noise_sigma * nv);
    }
  }
  return f;
}

Vec3 yaml_vec3(const YAML::Node& n, const Vec3& fallback) {
  if (!n) return fallback;
  const auto v = n.as<std::vector<double>>();
  if (v.size() != 3) throw ConfigError("expected a 3-vector");
  return {v[0], v[1], v[2]};
}
Vec2 yaml_vec2(const YAML::Node& n, const Vec2& fallback) {
  if (!n) return fallback;
  const auto v = n.as<std::vector<double>>();
  if (v.size() != 2) throw ConfigError("expected a 2-vector");
  return {v[0], v[1]};
}

}  // namespace

void SceneConfig::validate() const {
  if (frames < 3) throw ConfigError("scene needs at least 3 frames");
  if (width < 2 || height < 2) throw ConfigError("scene resolution too small");
  if (!(focal > 0)) throw ConfigError("focal length must be positive");
  if (!(background_depth > 0)) throw ConfigError("background depth must be positive");
  if (background == BackgroundKind::DepthField &&
      (depth_waves < 0 || !(wavelength_min > 0) || wavelength_max < wavelength_min)) {
    throw ConfigError("invalid depth field parameters");
  }
  // Bounded slope keeps every viewing ray crossing the background once.
  if (background == BackgroundKind::DepthField &&
      depth_waves * depth_amplitude * 2 * std::numbers::pi / wavelength_min >= 1) {
    throw ConfigError("depth field too steep");
  }
  // The relief term must grow slower than the depth along any viewing ray.
  const double ray_slope = 0.5 * std::max(width, height) / focal;
  if (background == BackgroundKind::DepthField && (relief < 0 || relief * ray_slope >= 0.9)) {
    throw ConfigError("relief out of range");
  }
  if (flow_noise_sigma < 0 || outlier_fraction < 0 || outlier_fraction > 1) {
    throw ConfigError("invalid noise parameters");
  }
  for (const auto& p : foreground) {
    if (!(p.half_size(0) > 0 && p.half_size(1) > 0)) {
      throw ConfigError("foreground patch needs positive size");
    }
  }
  const bool moves = camera_velocity.norm() > 0 || camera_jitter > 0 || camera_pan != 0;
  if (!moves && !static_camera) {
    throw ConfigError("camera has zero baseline; set static_camera to intend it");
  }
}

SceneConfig SceneConfig::moving_camera_preset(std::uint64_t seed,
                                              double foreground_fraction) {
  SceneConfig c;
  c.seed = seed;
  c.frames = 20;
  c.width = 320;
  c.height = 240;
  c.focal = 300;
  // Pyramid walls from depth 12 on the axis to about 6.5 at the image edge:
  // 3.3 px/frame of background motion on the axis, 2.8 px/frame more at the
  // side walls.
  c.camera_velocity = Vec3(0.4 / 3.0, 0, 0);
  c.camera_jitter = 0.02;
  c.camera_pan = 0.001;
  c.background = BackgroundKind::DepthField;
  c.background_depth = 12.0;
  c.relief = 1.6;

  // Patch at depth 6 (50 px per unit), sized to the requested image area
  // with a 10:9 aspect ratio.
  const double depth = 6.0;
  const double ppu = c.focal / depth;
  const double area_px = foreground_fraction * c.width * c.height;
  const double w_px = std::sqrt(area_px * 10.0 / 9.0);
  const double h_px = area_px / w_px;
  ForegroundPatch p;
  p.half_size = Vec2(w_px / 2 / ppu, h_px / 2 / ppu);
  // Moves 3.5 px/frame downward and drifts with the camera.
  p.velocity = Vec3(0.08, 3.5 / ppu, 0);
  p.center = Vec3(12.0 / ppu, -35.0 / ppu, depth);
  c.foreground.push_back(p);
  return c;
}

SceneConfig SceneConfig::static_camera_preset(std::uint64_t seed, bool moving_patch) {
  SceneConfig c;
  c.seed = seed;
  c.frames = 10;
  c.width = 160;
  c.height = 120;
  c.focal = 150;
  c.static_camera = true;
  c.background = BackgroundKind::DepthField;
  if (moving_patch) {
    ForegroundPatch p;
    p.center = Vec3(-0.8, -0.4, 6.0);
    p.half_size = Vec2(0.8, 0.6);
    // 25 px per unit at depth 6: (2.5, 1.5) px/frame, not radial.
    p.velocity = Vec3(0.1, 0.06, 0);
    c.foreground.push_back(p);
  }
  return c;
}

SceneConfig parse_scene_config(const std::string& yaml_text) {
  SceneConfig c;
  try {
    const YAML::Node n = YAML::Load(yaml_text);
    if (!n.IsMap()) throw ConfigError("scene config must be a mapping");
    c.frames = n["frames"].as<int>(c.frames);
    c.width = n["width"].as<int>(c.width);
    c.height = n["height"].as<int>(c.height);
    c.focal = n["focal"].as<double>(c.focal);
    if (n["principal"]) c.principal = yaml_vec2(n["principal"], Vec2::Zero());
    if (const auto cam = n["camera"]) {
      c.camera_start = yaml_vec3(cam["start"], c.camera_start);
      c.camera_velocity = yaml_vec3(cam["velocity"], c.camera_velocity);
      c.camera_jitter = cam["jitter"].as<double>(c.camera_jitter);
      c.camera_pan = cam["pan"].as<double>(c.camera_pan);
      c.static_camera = cam["static"].as<bool>(c.static_camera);
    }
    if (const auto bg = n["background"]) {
      const auto kind = bg["kind"].as<std::string>("depth_field");
      if (kind == "plane") {
        c.background = BackgroundKind::Plane;
      } else if (kind == "depth_field") {
        c.background = BackgroundKind::DepthField;
      } else {
        throw ConfigError("unknown background kind: " + kind);
      }
      c.background_depth = bg["depth"].as<double>(c.background_depth);
      c.plane_slope = yaml_vec2(bg["slope"], c.plane_slope);
      c.relief = bg["relief"].as<double>(c.relief);
      c.depth_waves = bg["waves"].as<int>(c.depth_waves);
      c.depth_amplitude = bg["amplitude"].as<double>(c.depth_amplitude);
      c.wavelength_min = bg["wavelength_min"].as<double>(c.wavelength_min);
      c.wavelength_max = bg["wavelength_max"].as<double>(c.wavelength_max);
    }
    if (const auto fg = n["foreground"]) {
      for (const auto& item : fg) {
        ForegroundPatch p;
        p.center = yaml_vec3(item["center"], p.center);
        p.half_size = yaml_vec2(item["half_size"], p.half_size);
        p.velocity = yaml_vec3(item["velocity"], p.velocity);
        if (const auto pause = item["pause"]) {
          const auto v = pause.as<std::vector<int>>();
          if (v.size() != 2) throw ConfigError("pause needs [begin, end]");
          p.pause_begin = v[0];
          p.pause_end = v[1];
        }
        c.foreground.push_back(p);
      }
    }
    if (const auto noise = n["noise"]) {
      c.flow_noise_sigma = noise["sigma"].as<double>(c.flow_noise_sigma);
      c.outlier_fraction = noise["outlier_fraction"].as<double>(c.outlier_fraction);
    }
    c.seed = n["seed"].as<std::uint64_t>(c.seed);
  } catch (const YAML::Exception& e) {
    throw ConfigError(std::string("scene config: ") + e.what());
  }
  c.validate();
  return c;
}

SceneConfig load_scene_config(const std::filesystem::path& path) {
  return parse_scene_config(read_file(path));
}

std::string scene_config_to_yaml(const SceneConfig& c) {
  YAML::Emitter out;
  out.SetDoublePrecision(17);
  auto seq = [&](auto... v) {
    out << YAML::Flow << YAML::BeginSeq;
    (out << ... << v);
    out << YAML::EndSeq;
  };
  out << YAML::BeginMap;
  out << YAML::Key << "frames" << YAML::Value << c.frames;
  out << YAML::Key << "width" << YAML::Value << c.width;
  out << YAML::Key << "height" << YAML::Value << c.height;
  out << YAML::Key << "focal" << YAML::Value << c.focal;
  if (c.principal) {
    out << YAML::Key << "principal" << YAML::Value;
    seq((*c.principal)(0), (*c.principal)(1));
  }
  out << YAML::Key << "camera" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "start" << YAML::Value;
  seq(c.camera_start(0), c.camera_start(1), c.camera_start(2));
  out << YAML::Key << "velocity" << YAML::Value;
  seq(c.camera_velocity(0), c.camera_velocity(1), c.camera_velocity(2));
  out << YAML::Key << "jitter" << YAML::Value << c.camera_jitter;
  out << YAML::Key << "pan" << YAML::Value << c.camera_pan;
  out << YAML::Key << "static" << YAML::Value << c.static_camera;
  out << YAML::EndMap;
  out << YAML::Key << "background" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "kind" << YAML::Value
      << (c.background == BackgroundKind::Plane ? "plane" : "depth_field");
  out << YAML::Key << "depth" << YAML::Value << c.background_depth;
  out << YAML::Key << "slope" << YAML::Value;
  seq(c.plane_slope(0), c.plane_slope(1));
  out << YAML::Key << "relief" << YAML::Value << c.relief;
  out << YAML::Key << "waves" << YAML::Value << c.depth_waves;
  out << YAML::Key << "amplitude" << YAML::Value << c.depth_amplitude;
  out << YAML::Key << "wavelength_min" << YAML::Value << c.wavelength_min;
  out << YAML::Key << "wavelength_max" << YAML::Value << c.wavelength_max;
  out << YAML::EndMap;
  out << YAML::Key << "foreground" << YAML::Value << YAML::BeginSeq;
  for (const auto& p : c.foreground) {
    out << YAML::BeginMap;
    out << YAML::Key << "center" << YAML::Value;
    seq(p.center(0), p.center(1), p.center(2));
    out << YAML::Key << "half_size" << YAML::Value;
    seq(p.half_size(0), p.half_size(1));
    out << YAML::Key << "velocity" << YAML::Value;
    seq(p.velocity(0), p.velocity(1), p.velocity(2));
    if (p.pause_begin >= 0) {
      out << YAML::Key << "pause" << YAML::Value;
      seq(p.pause_begin, p.pause_end);
    }
    out << YAML::EndMap;
  }
  out << YAML::EndSeq;
  out << YAML::Key << "noise" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "sigma" << YAML::Value << c.flow_noise_sigma;
  out << YAML::Key << "outlier_fraction" << YAML::Value << c.outlier_fraction;
  out << YAML::EndMap;
  out << YAML::Key << "seed" << YAML::Value << c.seed;
  out << YAML::EndMap;
  return std::string(out.c_str()) + "\n";
}

Mat3 true_fundamental(const Mat34& Pi, const Mat34& Pj) {
  Mat3 F = fundamental_from_pair(Pi / Pi.norm(), Pj / Pj.norm());
  if (!finalize_fundamental(F)) {
    throw DegenerateError("true_fundamental: camera centres coincide");
  }
  return F;
}

SceneGroundTruth generate_scene(const SceneConfig& config) {
  config.validate();
  SceneGroundTruth gt;
  gt.config = config;
  const Renderer r(gt.config);
  gt.K = r.K();
  gt.cameras = r.cameras();
  const int F = config.frames;

  for (int t = 0; t < F; ++t) {
    Mask fg(config.width, config.height);
#pragma omp parallel for schedule(static)
    for (int y = 0; y < config.height; ++y) {
      for (int x = 0; x < config.width; ++x) {
        fg(x, y) = r.cast(t, x, y).surface >= 0 ? 1 : 0;
      }
    }
    gt.foreground.push_back(std::move(fg));
  }
  for (int t = 0; t + 1 < F; ++t) {
    Mask vis(config.width, config.height);
    gt.exact_fwd.push_back(render_flow(r, gt.config, t, t + 1, &vis));
    gt.exact_bwd.push_back(render_flow(r, gt.config, t + 1, t, nullptr));
    gt.visible_next.push_back(std::move(vis));
    gt.fwd.push_back(perturb(gt.exact_fwd.back(), config, 2 * t + 1));
    gt.bwd.push_back(perturb(gt.exact_bwd.back(), config, 2 * t + 2));
  }
  for (int t = 0; t + 2 < F; ++t) {
    std::array<Mat3, 3> f;
    const Mat34& P1 = gt.cameras[t];
    const Mat34& P2 = gt.cameras[t + 1];
    const Mat34& P3 = gt.cameras[t + 2];
    try {
      f = {true_fundamental(P1, P2), true_fundamental(P1, P3), true_fundamental(P2, P3)};
    } catch (const DegenerateError&) {
      f = {Mat3::Zero(), Mat3::Zero(), Mat3::Zero()};
    }
    gt.triplet_fundamentals.push_back(f);
  }
  return gt;
}

std::vector<Vec2> SceneGroundTruth::track(int frame, int x, int y) const {
  const Renderer r(config);
  std::vector<Vec2> out;
  const Hit h = r.cast(frame, x, y);
  if (h.surface == -2) return out;
  out.emplace_back(x, y);
  for (int t = frame + 1; t < config.frames; ++t) {
    const auto q = r.project(h, t);
    if (!q || !r.visible(h, t, *q)) break;
    out.push_back(*q);
  }
  return out;
}

void export_scene(const SceneGroundTruth& scene, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir / "flow_fwd");
  fs::create_directories(dir / "flow_bwd");
  fs::create_directories(dir / "masks");
  char name[32];
  for (std::size_t t = 0; t < scene.fwd.size(); ++t) {
    std::snprintf(name, sizeof name, "%06zu.flo", t);
    write_flo(scene.fwd[t], dir / "flow_fwd" / name);
    write_flo(scene.bwd[t], dir / "flow_bwd" / name);
  }
  for (std::size_t t = 0; t < scene.foreground.size(); ++t) {
    std::snprintf(name, sizeof name, "%06zu.png", t);
    write_mask(scene.foreground[t], dir / "masks" / name);
  }

  auto mat = [](const auto& m) {
    std::vector<double> v;
    for (int r = 0; r < m.rows(); ++r)
      for (int c = 0; c < m.cols(); ++c) v.push_back(m(r, c));
    return v;
  };
  nlohmann::ordered_json j;
  j["width"] = scene.config.width;
  j["height"] = scene.config.height;
  j["frames"] = scene.config.frames;
  j["K"] = mat(scene.K);
  j["cameras"] = nlohmann::ordered_json::array();
  for (const auto& P : scene.cameras) j["cameras"].push_back(mat(P));
  j["triplets"] = nlohmann::ordered_json::array();
  for (std::size_t t = 0; t < scene.triplet_fundamentals.size(); ++t) {
    const auto& f = scene.triplet_fundamentals[t];
    j["triplets"].push_back({{"frame", t},
                             {"F21", mat(f[0])},
                             {"F31", mat(f[1])},
                             {"F32", mat(f[2])}});
  }
  write_file_atomic(dir / "scene.json", j.dump(1) + "\n");
  write_file_atomic(dir / "scene.yaml", scene_config_to_yaml(scene.config));
}

}  // namespace epitraj
