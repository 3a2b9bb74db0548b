#include "epitraj/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <Eigen/Dense>
#include <Eigen/SVD>
#include <nlohmann/json.hpp>

#include "epitraj/errors.hpp"
#include "epitraj/rng.hpp"

namespace epitraj {

namespace {

Mat3 skew(const Vec3& v) {
  Mat3 m;
  m << 0, -v(2), v(1), v(2), 0, -v(0), -v(1), v(0), 0;
  return m;
}

// Homogeneous point scaled so that it has unit norm and a nonnegative
// dominant coordinate.
Vec3 unit_homogeneous(const Vec3& p) {
  Vec3 q = p.normalized();
  Eigen::Index k;
  q.cwiseAbs().maxCoeff(&k);
  return q(k) < 0 ? Vec3(-q) : q;
}

// Projective basis change taking p0, p1, p2, p3 to e1, e2, e3, (1,1,1).
Mat3 canonical_basis(const Vec3& p0, const Vec3& p1, const Vec3& p2,
                     const Vec3& p3) {
  Mat3 M;
  M.col(0) = unit_homogeneous(p0);
  M.col(1) = unit_homogeneous(p1);
  M.col(2) = unit_homogeneous(p2);
  const Vec3 q = unit_homogeneous(p3);
  Eigen::JacobiSVD<Mat3> svd(M);
  const auto& s = svd.singularValues();
  if (!(s(2) > 1e-9 * s(0))) {
    throw DegenerateError("six-point: three basis points are collinear");
  }
  const Vec3 lambda = M.fullPivLu().solve(q);
  if (lambda.cwiseAbs().minCoeff() < 1e-9 * lambda.cwiseAbs().maxCoeff()) {
    throw DegenerateError("six-point: basis points not in general position");
  }
  const Mat3 to_image = M * lambda.asDiagonal();
  return to_image.inverse();
}

// Quadratic constraints on m = (XY, XZ, XW, YZ, YW, ZW) that make it the
// set of pairwise products of a single point.
double conic1(const Eigen::Matrix<double, 6, 1>& m) {
  return m(0) * m(5) - m(1) * m(4);
}
double conic2(const Eigen::Matrix<double, 6, 1>& m) {
  return m(0) * m(5) - m(2) * m(3);
}
double polar1(const Eigen::Matrix<double, 6, 1>& a,
              const Eigen::Matrix<double, 6, 1>& b) {
  return a(0) * b(5) + b(0) * a(5) - a(1) * b(4) - b(1) * a(4);
}
double polar2(const Eigen::Matrix<double, 6, 1>& a,
              const Eigen::Matrix<double, 6, 1>& b) {
  return a(0) * b(5) + b(0) * a(5) - a(2) * b(3) - b(2) * a(3);
}

// Real roots (as homogeneous pairs) of c3 b^3 + c2 b^2 g + c1 b g^2 + c0 g^3.
std::vector<Vec2> homogeneous_cubic_roots(double c3, double c2, double c1,
                                          double c0) {
  std::vector<Vec2> roots;
  const double scale = std::max({std::abs(c3), std::abs(c2), std::abs(c1),
                                 std::abs(c0)});
  if (scale == 0.0) return roots;
  c3 /= scale;
  c2 /= scale;
  c1 /= scale;
  c0 /= scale;

  auto eval = [&](double t) { return ((c3 * t + c2) * t + c1) * t + c0; };
  auto deriv = [&](double t) { return (3 * c3 * t + 2 * c2) * t + c1; };

  std::vector<double> ts;
  int degree = 3;
  if (std::abs(c3) < 1e-12) {
    roots.emplace_back(1.0, 0.0);  // root at g = 0
    degree = std::abs(c2) < 1e-12 ? 1 : 2;
  }
  if (degree == 3) {
    Mat3 companion = Mat3::Zero();
    companion(0, 0) = -c2 / c3;
    companion(0, 1) = -c1 / c3;
    companion(0, 2) = -c0 / c3;
    companion(1, 0) = 1.0;
    companion(2, 1) = 1.0;
    Eigen::EigenSolver<Mat3> es(companion, false);
    for (int i = 0; i < 3; ++i) {
      const auto z = es.eigenvalues()(i);
      if (std::abs(z.imag()) <= 1e-7 * (1.0 + std::abs(z.real()))) {
        ts.push_back(z.real());
      }
    }
  } else if (degree == 2) {
    const double disc = c1 * c1 - 4 * c2 * c0;
    if (disc >= 0) {
      const double sq = std::sqrt(disc);
      const double q = -0.5 * (c1 + (c1 >= 0 ? sq : -sq));
      ts.push_back(q / c2);
      if (q != 0) ts.push_back(c0 / q);
    }
  } else if (std::abs(c1) > 1e-12) {
    ts.push_back(-c0 / c1);
  }
  for (double t : ts) {
    for (int it = 0; it < 3; ++it) {
      const double d = deriv(t);
      if (d == 0) break;
      t -= eval(t) / d;
    }
    roots.emplace_back(t, 1.0);
  }
  return roots;
}

// Recover the point X (up to scale) from its pairwise products.
bool point_from_products(const Eigen::Matrix<double, 6, 1>& m, Vec4& X) {
  Mat4 M = Mat4::Zero();
  M(0, 1) = m(0);
  M(0, 2) = m(1);
  M(0, 3) = m(2);
  M(1, 2) = m(3);
  M(1, 3) = m(4);
  M(2, 3) = m(5);
  M = M + M.transpose().eval();

  int a = 0, b = 1;
  double best = -1;
  for (int i = 0; i < 4; ++i) {
    for (int j = i + 1; j < 4; ++j) {
      if (std::abs(M(i, j)) > best) {
        best = std::abs(M(i, j));
        a = i;
        b = j;
      }
    }
  }
  if (best <= 0) return false;
  int k_best = -1;
  double k_val = 0;
  for (int k = 0; k < 4; ++k) {
    if (k == a || k == b) continue;
    if (std::abs(M(b, k)) > k_val) {
      k_val = std::abs(M(b, k));
      k_best = k;
    }
  }
  if (k_best < 0 || k_val < 1e-12 * best) return false;
  X(b) = 1.0;
  for (int k = 0; k < 4; ++k) {
    if (k != a && k != b) X(k) = M(a, k) / M(a, b);
  }
  X(a) = M(a, k_best) / M(b, k_best);
  X.normalize();
  return X.allFinite();
}

Mat34 canonical_first_camera() {
  Mat34 P = Mat34::Zero();
  P.leftCols<3>().setIdentity();
  return P;
}

bool epipolar_line_nothrow(const Mat3& F, const Vec3& x, Vec3& l) {
  l = F * x;
  const double n2 = l(0) * l(0) + l(1) * l(1);
  return n2 > 1e-24 * l.cwiseAbs2().maxCoeff();
}

double distance_or_zero(const Mat3& F, const Vec3& from, const Vec3& to) {
  Vec3 l;
  if (!epipolar_line_nothrow(F, from, l)) return 0.0;
  return std::abs(to.dot(l)) / std::sqrt(l(0) * l(0) + l(1) * l(1));
}

double frobenius(const Mat34& P) { return P.norm(); }

// Unit null vector of a full-rank camera.
Vec4 camera_centre(const Mat34& P) {
  Eigen::JacobiSVD<Mat34> svd(P, Eigen::ComputeFullV);
  return svd.matrixV().col(3);
}

bool centres_apart(const Vec4& a, const Vec4& b) {
  return std::min((a - b).norm(), (a + b).norm()) > 1e-10;
}

}  // namespace

Correspondence3 make_correspondence(const Vec2& p1, const Vec2& p2,
                                    const Vec2& p3, std::uint64_t traj_id) {
  return {p1.homogeneous(), p2.homogeneous(), p3.homogeneous(), traj_id};
}

void RansacParams::validate() const {
  if (!(inlier_threshold > 0)) throw ArgError("inlier_threshold must be > 0");
  if (!(confidence > 0 && confidence < 1)) {
    throw ArgError("confidence must lie in (0,1)");
  }
  if (max_iters < 1) throw ArgError("max_iters must be >= 1");
  if (sample_cap < 6) throw ArgError("sample_cap must be >= 6");
}

NormalizedPoints hartley_normalize(std::span<const Vec3> points) {
  if (points.empty()) throw DegenerateError("no points to normalize");
  Vec2 centroid = Vec2::Zero();
  for (const auto& p : points) centroid += p.hnormalized();
  centroid /= static_cast<double>(points.size());
  double sq = 0;
  for (const auto& p : points) sq += (p.hnormalized() - centroid).squaredNorm();
  const double rms = std::sqrt(sq / static_cast<double>(points.size()));
  if (!(rms > 1e-12 * (1.0 + centroid.norm()))) {
    throw DegenerateError("points coincide; cannot normalize");
  }
  const double s = std::sqrt(2.0) / rms;
  NormalizedPoints out;
  out.T << s, 0, -s * centroid(0), 0, s, -s * centroid(1), 0, 0, 1;
  out.points.reserve(points.size());
  for (const auto& p : points) {
    const Vec2 q = s * (p.hnormalized() - centroid);
    out.points.push_back(q.homogeneous());
  }
  return out;
}

std::vector<CameraTriplet> trifocal_six_point(
    std::span<const Correspondence3, 6> corrs) {
  using Vec6 = Eigen::Matrix<double, 6, 1>;
  std::array<Mat3, 3> basis;
  std::array<Vec3, 3> x5;
  std::array<Vec3, 3> x6;
  Eigen::Matrix<double, 3, 6> A;

  for (int v = 0; v < 3; ++v) {
    auto pick = [&](int k) -> const Vec3& {
      return v == 0 ? corrs[k].x1 : (v == 1 ? corrs[k].x2 : corrs[k].x3);
    };
    basis[v] = canonical_basis(pick(0), pick(1), pick(2), pick(3));
    x5[v] = (basis[v] * pick(4)).normalized();
    x6[v] = (basis[v] * pick(5)).normalized();
    const double u5 = x5[v](0), v5 = x5[v](1), w5 = x5[v](2);
    const double u6 = x6[v](0), v6 = x6[v](1), w6 = x6[v](2);
    // Coplanarity of x6, diag(x5) X and (W - X, W - Y, W - Z) in the
    // monomials (XY, XZ, XW, YZ, YW, ZW).
    A.row(v) << w6 * (v5 - u5), v6 * (u5 - w5), u5 * (w6 - v6),
        u6 * (w5 - v5), v5 * (u6 - w6), w5 * (v6 - u6);
  }

  Eigen::JacobiSVD<Eigen::Matrix<double, 3, 6>> svd(A, Eigen::ComputeFullV);
  const auto& sv = svd.singularValues();
  if (!(sv(2) > 1e-10 * sv(0))) {
    throw DegenerateError("six-point: constraints are rank deficient");
  }
  const Eigen::Matrix<double, 6, 3> N = svd.matrixV().rightCols<3>();
  const Vec6 ones = Vec6::Ones();
  const Vec3 w = N.transpose() * ones / std::sqrt(6.0);
  if (std::abs(w.norm() - 1.0) > 1e-6) {
    throw DegenerateError("six-point: null space lost the fifth point");
  }
  Eigen::JacobiSVD<Eigen::Matrix<double, 1, 3>> wsvd(w.transpose(),
                                                     Eigen::ComputeFullV);
  const Vec6 n2 = N * wsvd.matrixV().col(1);
  const Vec6 n3 = N * wsvd.matrixV().col(2);

  const double l12 = polar1(ones, n2), l13 = polar1(ones, n3);
  const double l22 = polar2(ones, n2), l23 = polar2(ones, n3);
  const double a22 = conic1(n2), a23 = polar1(n2, n3), a33 = conic1(n3);
  const double b22 = conic2(n2), b23 = polar2(n2, n3), b33 = conic2(n3);
  const double c3 = l12 * b22 - l22 * a22;
  const double c2 = l12 * b23 + l13 * b22 - l22 * a23 - l23 * a22;
  const double c1 = l12 * b33 + l13 * b23 - l22 * a33 - l23 * a23;
  const double c0 = l13 * b33 - l23 * a33;

  std::vector<CameraTriplet> out;
  for (const Vec2& bg : homogeneous_cubic_roots(c3, c2, c1, c0)) {
    const Vec6 vv = bg(0) * n2 + bg(1) * n3;
    const double p1 = polar1(ones, vv), p2 = polar2(ones, vv);
    double alpha;
    if (std::abs(p1) >= std::abs(p2)) {
      if (p1 == 0) continue;
      alpha = -conic1(vv) / p1;
    } else {
      alpha = -conic2(vv) / p2;
    }
    const Vec6 m = alpha * ones + vv;
    Vec4 X6;
    if (!point_from_products(m, X6)) continue;
    // Coincides with the fifth point: the spurious root.
    if ((X6 - Vec4::Ones().normalized()).norm() < 1e-9 ||
        (X6 + Vec4::Ones().normalized()).norm() < 1e-9) {
      continue;
    }

    std::array<Mat34, 3> P;
    bool ok = true;
    for (int v = 0; v < 3 && ok; ++v) {
      const Vec3 p(x5[v](0) * X6(0), x5[v](1) * X6(1), x5[v](2) * X6(2));
      const Vec3 q(X6(3) - X6(0), X6(3) - X6(1), X6(3) - X6(2));
      const Vec3 cp = x6[v].cross(p);
      const Vec3 cq = x6[v].cross(q);
      const double qq = cq.squaredNorm();
      if (!(qq > 1e-24)) {
        ok = false;
        break;
      }
      const double d = -cq.dot(cp) / qq;
      Mat34 reduced = Mat34::Zero();
      reduced(0, 0) = x5[v](0) - d;
      reduced(1, 1) = x5[v](1) - d;
      reduced(2, 2) = x5[v](2) - d;
      reduced.col(3).setConstant(d);
      P[v] = basis[v].inverse() * reduced;
    }
    if (!ok) continue;

    // Move to the frame where the first camera is [I | 0].
    Eigen::JacobiSVD<Mat34> psvd(P[0], Eigen::ComputeFullV);
    if (!(psvd.singularValues()(2) > 1e-12 * psvd.singularValues()(0))) {
      continue;
    }
    const Vec4 centre = psvd.matrixV().col(3);
    Mat4 H;
    H.leftCols<3>() =
        P[0].transpose() * (P[0] * P[0].transpose()).inverse();
    H.col(3) = centre;
    Eigen::FullPivLU<Mat4> lu(H);
    if (!lu.isInvertible()) continue;
    const Mat4 Hinv = lu.inverse();

    CameraTriplet cams;
    cams.P1 = canonical_first_camera();
    cams.P2 = P[1] * H;
    cams.P3 = P[2] * H;
    const std::array<Vec4, 6> world = {
        Vec4(1, 0, 0, 0), Vec4(0, 1, 0, 0), Vec4(0, 0, 1, 0),
        Vec4(0, 0, 0, 1), Vec4(1, 1, 1, 1), X6};
    for (int k = 0; k < 6; ++k) cams.points[k] = (Hinv * world[k]).normalized();
    if (!cams.P2.allFinite() || !cams.P3.allFinite()) continue;
    out.push_back(cams);
  }
  if (out.empty()) {
    throw DegenerateError("six-point: no admissible real solution");
  }
  return out;
}

double max_reprojection_error(const CameraTriplet& cams, const Vec4& X,
                              const Correspondence3& c) {
  auto err = [&](const Mat34& P, const Vec3& x) {
    const Vec3 p = P * X;
    return (p.hnormalized() - x.hnormalized()).norm();
  };
  return std::max({err(cams.P1, c.x1), err(cams.P2, c.x2), err(cams.P3, c.x3)});
}

TrifocalTensor trifocal_from_cameras(const Mat34& P2, const Mat34& P3) {
  TrifocalTensor t;
  const Vec3 a4 = P2.col(3);
  const Vec3 b4 = P3.col(3);
  for (int i = 0; i < 3; ++i) {
    t.T[i] = Vec3(P2.col(i)) * b4.transpose() - a4 * Vec3(P3.col(i)).transpose();
  }
  return t;
}

std::pair<Vec3, Vec3> trifocal_epipoles(const TrifocalTensor& t) {
  // e' is orthogonal to the left null vectors of every T_i, e'' to the
  // right null vectors.
  Mat3 left;
  Mat3 right;
  for (int i = 0; i < 3; ++i) {
    Eigen::JacobiSVD<Mat3> svd(t.T[i], Eigen::ComputeFullU | Eigen::ComputeFullV);
    left.row(i) = svd.matrixU().col(2).transpose();
    right.row(i) = svd.matrixV().col(2).transpose();
  }
  Eigen::JacobiSVD<Mat3> ls(left, Eigen::ComputeFullV);
  Eigen::JacobiSVD<Mat3> rs(right, Eigen::ComputeFullV);
  return {ls.matrixV().col(2), rs.matrixV().col(2)};
}

Mat3 fundamental_from_pair(const Mat34& Pi, const Mat34& Pj) {
  Mat3 F;
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) {
      Mat4 M;
      int row = 0;
      for (int k = 0; k < 3; ++k) {
        if (k != c) M.row(row++) = Pi.row(k);
      }
      for (int k = 0; k < 3; ++k) {
        if (k != r) M.row(row++) = Pj.row(k);
      }
      F(r, c) = ((r + c) % 2 ? -1.0 : 1.0) * M.determinant();
    }
  }
  return F;
}

bool finalize_fundamental(Mat3& F, double reference_scale) {
  const double n = F.norm();
  if (!(n > 1e-10 * reference_scale) || !F.allFinite()) {
    F.setZero();
    return false;
  }
  Eigen::JacobiSVD<Mat3> svd(F / n, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Vec3 s = svd.singularValues();
  s(2) = 0.0;
  F = svd.matrixU() * s.asDiagonal() * svd.matrixV().transpose();
  F /= F.norm();
  return true;
}

Fundamentals cameras_to_fundamentals(const Mat34& P1, const Mat34& P2,
                                     const Mat34& P3) {
  // Bring P1 to [I | 0] so that the tensor slices take their simple form.
  const Mat34 Q1 = P1 / frobenius(P1);
  Eigen::JacobiSVD<Mat34> svd(Q1, Eigen::ComputeFullV);
  if (!(svd.singularValues()(2) > 1e-12 * svd.singularValues()(0))) {
    throw DegenerateError("first camera is rank deficient");
  }
  Mat4 H;
  H.leftCols<3>() = Q1.transpose() * (Q1 * Q1.transpose()).inverse();
  H.col(3) = svd.matrixV().col(3);
  Mat34 Q2 = P2 * H;
  Mat34 Q3 = P3 * H;
  Q2 /= frobenius(Q2);
  Q3 /= frobenius(Q3);

  // Degeneracy is decided on the camera centres; the matrix norms scale
  // with powers of the baseline and carry no absolute meaning.
  const Vec4 c1(0, 0, 0, 1);
  const Vec4 c2 = camera_centre(Q2);
  const Vec4 c3 = camera_centre(Q3);
  const bool apart21 = centres_apart(c1, c2);
  const bool apart31 = centres_apart(c1, c3);
  const bool apart32 = centres_apart(c2, c3);

  Fundamentals out;
  if (apart21 && apart31) {
    const TrifocalTensor t = trifocal_from_cameras(Q2, Q3);
    const Vec3 e2 = Q2.col(3);
    const Vec3 e3 = Q3.col(3);
    Mat3 m21;
    Mat3 m31;
    for (int i = 0; i < 3; ++i) {
      m21.col(i) = t.T[i] * e3;
      m31.col(i) = t.T[i].transpose() * e2;
    }
    out.F21 = skew(e2) * m21;
    out.F31 = skew(e3) * m31;
  } else {
    // The tensor carries no epipole for a view whose centre coincides with
    // the first; use the camera pairs directly.
    const Mat34 I0 = canonical_first_camera();
    out.F21 = fundamental_from_pair(I0, Q2);
    out.F31 = fundamental_from_pair(I0, Q3);
  }
  out.F32 = fundamental_from_pair(Q2, Q3);

  out.degenerate[0] = !apart21 || !finalize_fundamental(out.F21, 0.0);
  out.degenerate[1] = !apart31 || !finalize_fundamental(out.F31, 0.0);
  out.degenerate[2] = !apart32 || !finalize_fundamental(out.F32, 0.0);
  for (int k = 0; k < 3; ++k) {
    if (out.degenerate[k]) (k == 0 ? out.F21 : k == 1 ? out.F31 : out.F32).setZero();
  }
  return out;
}

Vec3 epipolar_line(const Mat3& F, const Vec3& x) {
  const Vec3 l = F * x;
  if (!(l.norm() > 1e-12 * F.norm() * x.norm())) {
    throw EpipoleError("point is the epipole of F");
  }
  return l;
}

double epipolar_distance(const Vec3& l, const Vec3& x) {
  const double n = std::hypot(l(0), l(1));
  if (!(n > 1e-12 * l.cwiseAbs().maxCoeff())) {
    throw EpipoleError("line has no finite normal");
  }
  return std::abs(x.dot(l)) / n;
}

std::array<double, 6> pairwise_distances(const TripletGeometry& g,
                                         const Correspondence3& c) {
  std::array<double, 6> d{};
  if (!g.degenerate[0]) {
    d[0] = distance_or_zero(g.F21, c.x1, c.x2);
    d[1] = distance_or_zero(g.F21.transpose(), c.x2, c.x1);
  }
  if (!g.degenerate[1]) {
    d[2] = distance_or_zero(g.F31, c.x1, c.x3);
    d[3] = distance_or_zero(g.F31.transpose(), c.x3, c.x1);
  }
  if (!g.degenerate[2]) {
    d[4] = distance_or_zero(g.F32, c.x2, c.x3);
    d[5] = distance_or_zero(g.F32.transpose(), c.x3, c.x2);
  }
  return d;
}

double triplet_distance(const TripletGeometry& g, const Correspondence3& c) {
  const auto d = pairwise_distances(g, c);
  return std::accumulate(d.begin(), d.end(), 0.0);
}

bool detect_static_camera(const FlowField& fwd12, const FlowField& fwd23,
                          double eps_px) {
  if (fwd12.width() != fwd23.width() || fwd12.height() != fwd23.height()) {
    throw ArgError("static-camera check: flow dimensions differ");
  }
  const std::size_t n = fwd12.u.size();
  if (n == 0) throw ArgError("static-camera check: empty flow");
  const double eps2 = eps_px * eps_px;
  std::size_t still = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double m1 = double(fwd12.u[i]) * fwd12.u[i] + double(fwd12.v[i]) * fwd12.v[i];
    const double m2 = double(fwd23.u[i]) * fwd23.u[i] + double(fwd23.v[i]) * fwd23.v[i];
    if (m1 < eps2 && m2 < eps2) ++still;
  }
  return 2 * still >= n;
}

TripletGeometry static_fundamentals(int width, int height) {
  const Vec3 centre((width - 1) / 2.0, (height - 1) / 2.0, 1.0);
  TripletGeometry g;
  g.F21 = g.F31 = g.F32 = skew(centre);
  g.inlier_ratio = 1.0;
  g.static_camera = true;
  return g;
}

namespace {

// Linear least-squares F with to^T F from = 0 over the selected indices, on
// conditioned points. Returns false when the fit degenerates.
bool eight_point(const std::vector<Vec3>& from, const std::vector<Vec3>& to,
                 const std::vector<std::size_t>& idx, Mat3& F) {
  Eigen::Matrix<double, 9, 9> AtA = Eigen::Matrix<double, 9, 9>::Zero();
  Eigen::Matrix<double, 9, 1> row;
  for (const std::size_t i : idx) {
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) row(3 * r + c) = to[i](r) * from[i](c);
    AtA.noalias() += row * row.transpose();
  }
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix<double, 9, 9>> eig(AtA);
  if (eig.info() != Eigen::Success) return false;
  const auto f = eig.eigenvectors().col(0);
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) F(r, c) = f(3 * r + c);
  return finalize_fundamental(F, 0.0);
}

double median_in_place(std::vector<double>& v) {
  std::nth_element(v.begin(), v.begin() + v.size() / 2, v.end());
  return v[v.size() / 2];
}

}  // namespace

RansacScore parse_ransac_score(const std::string& name) {
  if (name == "count") return RansacScore::InlierCount;
  if (name == "median") return RansacScore::LeastMedian;
  throw ConfigError("unknown RANSAC score '" + name + "' (expected count or median)");
}

const char* ransac_score_name(RansacScore score) {
  return score == RansacScore::InlierCount ? "count" : "median";
}

TripletGeometry ransac_triplet(std::span<const Correspondence3> corrs,
                               const RansacParams& params) {
  params.validate();
  if (corrs.size() < 6) {
    throw InsufficientDataError("RANSAC needs at least six correspondences");
  }
  Rng rng(params.rng_seed);

  // Uniform subsample without replacement, kept in input order.
  std::vector<std::size_t> chosen(corrs.size());
  std::iota(chosen.begin(), chosen.end(), std::size_t{0});
  if (corrs.size() > params.sample_cap) {
    for (std::size_t i = 0; i < params.sample_cap; ++i) {
      const std::size_t j = i + rng.below(chosen.size() - i);
      std::swap(chosen[i], chosen[j]);
    }
    chosen.resize(params.sample_cap);
    std::sort(chosen.begin(), chosen.end());
  }
  const std::size_t n = chosen.size();

  std::vector<Correspondence3> pix(n);
  std::array<std::vector<Vec3>, 3> views;
  for (auto& v : views) v.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    pix[i] = corrs[chosen[i]];
    views[0].push_back(pix[i].x1);
    views[1].push_back(pix[i].x2);
    views[2].push_back(pix[i].x3);
  }
  std::array<NormalizedPoints, 3> norm;
  try {
    for (int v = 0; v < 3; ++v) norm[v] = hartley_normalize(views[v]);
  } catch (const DegenerateError&) {
    throw EstimationError("RANSAC: correspondences collapse to a point");
  }

  const double thresh_sum = 6.0 * params.inlier_threshold;
  const bool by_median = params.score == RansacScore::LeastMedian;
  std::size_t best_count = 0;
  double best_median = std::numeric_limits<double>::infinity();
  double best_residual = std::numeric_limits<double>::infinity();
  TripletGeometry best;
  bool have_model = false;

  const double log_fail = std::log(1.0 - params.confidence);
  double needed = params.max_iters;
  if (by_median) needed = std::ceil(log_fail / std::log1p(-std::pow(0.5, 6)));
  std::array<std::size_t, 6> sample{};
  std::array<Correspondence3, 6> minimal;
  std::vector<double> dist(n);

  // Local optimisation of a new best model: refit each pair linearly on the
  // points within 2.5 robust standard deviations, kept while the median drops.
  std::vector<double> refit_dist(n);
  auto polish = [&](TripletGeometry& model, double& median, std::size_t& count,
                    double& residual) {
    for (int round = 0; round < 5; ++round) {
      const double sigma = 1.4826 * (1.0 + 5.0 / static_cast<double>(n - 6)) * median;
      std::vector<std::size_t> keep;
      for (std::size_t i = 0; i < n; ++i) {
        if (triplet_distance(model, pix[i]) <= 2.5 * sigma) keep.push_back(i);
      }
      if (keep.size() < 8) return;
      Mat3 F21, F31, F32;
      if (!eight_point(norm[0].points, norm[1].points, keep, F21) ||
          !eight_point(norm[0].points, norm[2].points, keep, F31) ||
          !eight_point(norm[1].points, norm[2].points, keep, F32)) {
        return;
      }
      TripletGeometry g;
      g.F21 = norm[1].T.transpose() * F21 * norm[0].T;
      g.F31 = norm[2].T.transpose() * F31 * norm[0].T;
      g.F32 = norm[2].T.transpose() * F32 * norm[1].T;
      if (!finalize_fundamental(g.F21, 0.0) || !finalize_fundamental(g.F31, 0.0) ||
          !finalize_fundamental(g.F32, 0.0)) {
        return;
      }
      std::size_t c = 0;
      double r = 0;
      for (std::size_t i = 0; i < n; ++i) {
        refit_dist[i] = triplet_distance(g, pix[i]);
        if (refit_dist[i] < thresh_sum) {
          ++c;
          r += refit_dist[i];
        }
      }
      const double m = median_in_place(refit_dist);
      if (!(m < median)) return;
      model = g;
      median = m;
      count = c;
      residual = r;
    }
  };

  for (int iter = 0; iter < params.max_iters && iter < needed; ++iter) {
    for (int k = 0; k < 6; ++k) {
      bool fresh;
      do {
        sample[k] = rng.below(n);
        fresh = std::find(sample.begin(), sample.begin() + k, sample[k]) ==
                sample.begin() + k;
      } while (!fresh);
      const std::size_t i = sample[k];
      minimal[k] = {norm[0].points[i], norm[1].points[i], norm[2].points[i],
                    pix[i].traj_id};
    }
    std::vector<CameraTriplet> candidates;
    try {
      candidates = trifocal_six_point(minimal);
    } catch (const DegenerateError&) {
      continue;
    }
    for (const auto& cams : candidates) {
      Fundamentals f;
      try {
        f = cameras_to_fundamentals(cams.P1, cams.P2, cams.P3);
      } catch (const DegenerateError&) {
        continue;
      }
      if (f.degenerate[0] || f.degenerate[1] || f.degenerate[2]) continue;
      TripletGeometry g;
      g.F21 = norm[1].T.transpose() * f.F21 * norm[0].T;
      g.F31 = norm[2].T.transpose() * f.F31 * norm[0].T;
      g.F32 = norm[2].T.transpose() * f.F32 * norm[1].T;
      if (!finalize_fundamental(g.F21, 0.0) || !finalize_fundamental(g.F31, 0.0) ||
          !finalize_fundamental(g.F32, 0.0)) {
        continue;
      }
      std::size_t count = 0;
      double residual = 0;
      // Under the median score a candidate is dropped as soon as half the
      // distances exceed twice the best median; survivors are polished.
      const std::size_t reject_at = n - n / 2;
      std::size_t above = 0;
      for (std::size_t i = 0; i < n && above < reject_at; ++i) {
        dist[i] = triplet_distance(g, pix[i]);
        if (dist[i] < thresh_sum) {
          ++count;
          residual += dist[i];
        }
        if (by_median && dist[i] > 2 * best_median) ++above;
      }
      if (above >= reject_at) continue;
      double median = by_median ? median_in_place(dist) : 0.0;
      if (by_median) polish(g, median, count, residual);
      bool better;
      if (by_median && median != best_median) {
        better = median < best_median;
      } else {
        better = count > best_count ||
                 (count == best_count && count > 0 && residual < best_residual);
      }
      if (!better) continue;
      best_count = count;
      best_median = median;
      best_residual = residual;
      best = g;
      have_model = true;
      if (by_median) continue;
      const double p_good = std::pow(static_cast<double>(count) / n, 6);
      if (p_good >= 1.0) {
        needed = 0;
      } else if (p_good > 0) {
        needed = std::min<double>(params.max_iters,
                                  std::ceil(log_fail / std::log1p(-p_good)));
      }
    }
  }
  if (!have_model) {
    throw EstimationError("RANSAC: every sample was degenerate");
  }
  best.inlier_ratio = static_cast<double>(best_count) / n;
  best.static_camera = false;
  return best;
}

std::string geometries_to_json(std::span<const TripletGeometry> geoms) {
  nlohmann::ordered_json arr = nlohmann::ordered_json::array();
  auto mat = [](const Mat3& F) {
    std::vector<double> v;
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) v.push_back(F(r, c));
    return v;
  };
  for (const auto& g : geoms) {
    nlohmann::ordered_json j;
    j["frame"] = g.frame;
    j["F21"] = mat(g.F21);
    j["F31"] = mat(g.F31);
    j["F32"] = mat(g.F32);
    j["degenerate"] = {g.degenerate[0], g.degenerate[1], g.degenerate[2]};
    j["inlier_ratio"] = g.inlier_ratio;
    j["static_camera"] = g.static_camera;
    j["fallback"] = g.fallback;
    arr.push_back(std::move(j));
  }
  return arr.dump(1) + "\n";
}

std::vector<TripletGeometry> geometries_from_json(const std::string& text) {
  std::vector<TripletGeometry> out;
  try {
    const auto arr = nlohmann::json::parse(text);
    if (!arr.is_array()) throw FormatError("geometry JSON must be an array");
    auto mat = [](const nlohmann::json& j) {
      const auto v = j.get<std::vector<double>>();
      if (v.size() != 9) throw FormatError("fundamental matrix needs 9 entries");
      Mat3 F;
      for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c) F(r, c) = v[3 * r + c];
      return F;
    };
    for (const auto& j : arr) {
      TripletGeometry g;
      g.frame = j.at("frame").get<int>();
      g.F21 = mat(j.at("F21"));
      g.F31 = mat(j.at("F31"));
      g.F32 = mat(j.at("F32"));
      const auto deg = j.at("degenerate").get<std::vector<bool>>();
      if (deg.size() != 3) throw FormatError("degenerate needs 3 flags");
      for (int k = 0; k < 3; ++k) g.degenerate[k] = deg[k];
      g.inlier_ratio = j.at("inlier_ratio").get<double>();
      g.static_camera = j.at("static_camera").get<bool>();
      g.fallback = j.value("fallback", false);
      out.push_back(g);
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("geometry JSON: ") + e.what());
  }
  return out;
}

}  // namespace epitraj
