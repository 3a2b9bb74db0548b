#pragma once

#include <atomic>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <unistd.h>
#include <vector>

#include <Eigen/Geometry>

#include "epitraj/geometry.hpp"
#include "epitraj/image.hpp"
#include "epitraj/rng.hpp"

namespace test {

namespace fs = std::filesystem;
using namespace epitraj;

/// Fresh directory removed on scope exit.
class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    path_ = fs::temp_directory_path() /
            ("epitraj_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const fs::path& path() const { return path_; }
  fs::path operator/(const std::string& name) const { return path_ / name; }

 private:
  fs::path path_;
};

inline std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void spit(const fs::path& p, const std::string& bytes) {
  std::ofstream out(p, std::ios::binary);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

inline FlowField random_flow(Rng& rng, int w, int h, double amp) {
  FlowField f(w, h);
  for (std::size_t i = 0; i < f.u.size(); ++i) {
    f.u[i] = static_cast<float>(rng.uniform(-amp, amp));
    f.v[i] = static_cast<float>(rng.uniform(-amp, amp));
  }
  return f;
}

inline Mask random_mask(Rng& rng, int w, int h, double p) {
  Mask m(w, h);
  for (std::size_t i = 0; i < m.size(); ++i) m[i] = rng.uniform() < p ? 1 : 0;
  return m;
}

/// Three pinhole cameras looking down +Z with random small motions, and a
/// cloud of points in front of all of them.
struct RigidScene {
  std::array<Mat34, 3> P;
  std::vector<Vec4> X;

  Vec3 project(int view, const Vec4& x) const {
    const Vec3 p = P[view] * x;
    return p / p(2);
  }
  Correspondence3 corr(const Vec4& x) const {
    return {project(0, x), project(1, x), project(2, x), 0};
  }
  std::vector<Correspondence3> corrs() const {
    std::vector<Correspondence3> out;
    for (const auto& x : X) out.push_back(corr(x));
    return out;
  }
};

inline RigidScene random_rigid_scene(Rng& rng, int points, double baseline = 0.3) {
  Mat3 K;
  K << 300, 0, 160, 0, 300, 120, 0, 0, 1;
  RigidScene s;
  for (int v = 0; v < 3; ++v) {
    const Vec3 axis = Vec3(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)).normalized();
    const Mat3 R = v == 0 ? Mat3::Identity()
                          : Eigen::AngleAxisd(rng.uniform(-0.05, 0.05), axis).toRotationMatrix();
    const Vec3 C = v == 0 ? Vec3::Zero()
                          : Vec3(rng.uniform(-baseline, baseline), rng.uniform(-baseline, baseline),
                                 rng.uniform(-baseline, baseline) * 0.3);
    Mat34 Rt;
    Rt.leftCols<3>() = R;
    Rt.col(3) = -R * C;
    s.P[v] = K * Rt;
  }
  for (int i = 0; i < points; ++i) {
    const double z = rng.uniform(4, 12);
    s.X.emplace_back(rng.uniform(-0.5, 0.5) * z, rng.uniform(-0.4, 0.4) * z, z, 1.0);
  }
  return s;
}

}  // namespace test
