#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "epitraj/image.hpp"

namespace epitraj {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Vec4 = Eigen::Vector4d;
using Mat3 = Eigen::Matrix3d;
using Mat34 = Eigen::Matrix<double, 3, 4>;
using Mat4 = Eigen::Matrix4d;

/// One trajectory observed in the three frames of a triplet. Points are
/// homogeneous pixel coordinates with last coordinate 1.
struct Correspondence3 {
  Vec3 x1;
  Vec3 x2;
  Vec3 x3;
  std::uint64_t traj_id = 0;
};

Correspondence3 make_correspondence(const Vec2& p1, const Vec2& p2,
                                    const Vec2& p3, std::uint64_t traj_id = 0);

/// Rigid-scene model of a frame triplet (t, t+1, t+2). F_ji maps points of
/// view i to epipolar lines in view j; the reverse directions are the
/// transposes. Pairs are indexed 0: (2,1), 1: (3,1), 2: (3,2).
struct TripletGeometry {
  int frame = 0;
  Mat3 F21 = Mat3::Zero();
  Mat3 F31 = Mat3::Zero();
  Mat3 F32 = Mat3::Zero();
  std::array<bool, 3> degenerate{false, false, false};
  double inlier_ratio = 0.0;
  bool static_camera = false;
  bool fallback = false;  ///< copied from a neighbour after estimation failed
};

/// How RANSAC ranks candidate models.
enum class RansacScore {
  /// Most correspondences under inlier_threshold; iterations adapt to the
  /// inlier ratio.
  InlierCount,
  /// Smallest median of d_123 / 6, ties broken by inlier count. Draws the
  /// sample count that tolerates 50% outliers at the given confidence.
  LeastMedian,
};

/// "count" or "median"; anything else is a ConfigError.
RansacScore parse_ransac_score(const std::string& name);
const char* ransac_score_name(RansacScore score);

struct RansacParams {
  /// Threshold on the mean pairwise distance d_123 / 6, in pixels. Defines
  /// the reported inlier ratio under either score.
  double inlier_threshold = 1.0;
  RansacScore score = RansacScore::LeastMedian;
  int max_iters = 500;
  double confidence = 0.99;
  std::size_t sample_cap = 2000;
  std::uint64_t rng_seed = 0;

  void validate() const;
};

// --- conditioning -----------------------------------------------------------

struct NormalizedPoints {
  Mat3 T = Mat3::Identity();  ///< similarity taking pixels to normalized coords
  std::vector<Vec3> points;
};

/// Similarity moving the centroid to the origin with RMS distance sqrt(2).
NormalizedPoints hartley_normalize(std::span<const Vec3> points);

// --- minimal solver ---------------------------------------------------------

/// Projective reconstruction of six points in three views with P1 = [I|0].
struct CameraTriplet {
  Mat34 P1;
  Mat34 P2;
  Mat34 P3;
  std::array<Vec4, 6> points;
};

/// Six-point three-view solver. Returns one or three real solutions.
/// Throws DegenerateError when the configuration admits no isolated solution
/// (collinear basis points, zero parallax, rank-deficient constraints).
std::vector<CameraTriplet> trifocal_six_point(
    std::span<const Correspondence3, 6> corrs);

/// Reprojection residual (pixels, max over views) of 3D point X against
/// the observed homogeneous image points.
double max_reprojection_error(const CameraTriplet& cams, const Vec4& X,
                              const Correspondence3& c);

// --- three-view to two-view -------------------------------------------------

/// Trifocal tensor slices T_1..T_3 for cameras in canonical form P1 = [I|0].
struct TrifocalTensor {
  std::array<Mat3, 3> T;
};

TrifocalTensor trifocal_from_cameras(const Mat34& P2, const Mat34& P3);

/// Epipoles e' (view 2) and e'' (view 3) of the first camera's centre.
std::pair<Vec3, Vec3> trifocal_epipoles(const TrifocalTensor& t);

struct Fundamentals {
  Mat3 F21;
  Mat3 F31;
  Mat3 F32;
  std::array<bool, 3> degenerate{false, false, false};
};

/// Fundamental matrix x_j^T F x_i = 0 of two arbitrary cameras, computed by
/// 4x4 minors. Unnormalized; zero when the camera centres coincide.
Mat3 fundamental_from_pair(const Mat34& Pi, const Mat34& Pj);

/// All three fundamental matrices of a camera triplet. F21 and F31 are
/// extracted from the trifocal tensor, F32 from the camera pair. Each result
/// is rank-2 truncated and scaled to unit Frobenius norm; coincident centres
/// yield a zero matrix flagged degenerate.
Fundamentals cameras_to_fundamentals(const Mat34& P1, const Mat34& P2,
                                     const Mat34& P3);

/// Rank-2 truncation plus unit Frobenius scaling. Returns false (and a zero
/// matrix) when F is numerically zero relative to `reference_scale`.
bool finalize_fundamental(Mat3& F, double reference_scale = 1.0);

// --- distances --------------------------------------------------------------

/// l = F x. Throws EpipoleError when l vanishes.
Vec3 epipolar_line(const Mat3& F, const Vec3& x);

/// |x . l| / sqrt(l0^2 + l1^2). Throws EpipoleError when l0 = l1 = 0.
double epipolar_distance(const Vec3& l, const Vec3& x);

/// The six distances d12, d21, d13, d31, d23, d32 (pixels, nonnegative).
/// Pairs flagged degenerate and epipole hits contribute 0.
std::array<double, 6> pairwise_distances(const TripletGeometry& g,
                                         const Correspondence3& c);

/// Sum of the six pairwise distances.
double triplet_distance(const TripletGeometry& g, const Correspondence3& c);

// --- static camera ----------------------------------------------------------

/// True iff at least half of the pixels move less than eps_px in both
/// forward fields of the triplet.
bool detect_static_camera(const FlowField& fwd12, const FlowField& fwd23,
                          double eps_px = 0.25);

/// Fixed skew-symmetric model [c]_x at the image centre.
TripletGeometry static_fundamentals(int width, int height);

// --- robust estimation ------------------------------------------------------

/// Six-point RANSAC over at most sample_cap correspondences. Under the
/// median score every candidate near the best is refit linearly (8-point
/// per pair) on its robust inliers while its median keeps falling.
/// inlier_ratio counts d_123 / 6 < inlier_threshold over the subsample.
/// Throws InsufficientDataError below six correspondences and
/// EstimationError when every sample is degenerate.
TripletGeometry ransac_triplet(std::span<const Correspondence3> corrs,
                               const RansacParams& params);

// --- serialization ----------------------------------------------------------

std::string geometries_to_json(std::span<const TripletGeometry> geoms);
std::vector<TripletGeometry> geometries_from_json(const std::string& text);

}  // namespace epitraj
