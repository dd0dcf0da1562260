#pragma once

// Factor graph over poses, points, Plücker lines and Global Primitive
// directions. Each factor exposes its residual as a template over the scalar
// type, evaluated at `state ⊞ delta` so that Jacobians with respect to the
// local parameterizations come out of forward-mode autodiff directly.
//
// Local parameterizations (⊞):
//   pose   6: exp(delta) * T_cw, delta = (rho, phi)
//   point  3: p + delta
//   line   4: orthonormal update (SO(3) x SO(2))
//   gp     2: normalize(g + w1 * b1 + w2 * b2)

#include <Eigen/Core>
#include <unsupported/Eigen/AutoDiff>

#include <array>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "gpslam/geometry.hpp"

namespace gpslam {

enum class VarType { kPose = 0, kPoint = 1, kLine = 2, kGp = 3 };

inline constexpr int tangent_dim(VarType t) {
  switch (t) {
    case VarType::kPose: return 6;
    case VarType::kPoint: return 3;
    case VarType::kLine: return 4;
    case VarType::kGp: return 2;
  }
  return 0;
}

inline const char* to_string(VarType t) {
  switch (t) {
    case VarType::kPose: return "pose";
    case VarType::kPoint: return "point";
    case VarType::kLine: return "line";
    case VarType::kGp: return "gp";
  }
  return "?";
}

struct VarRef {
  VarType type = VarType::kPose;
  int key = 0;

  friend auto operator<=>(const VarRef&, const VarRef&) = default;
};

/// Variable states.
struct Values {
  std::map<int, Pose> poses;
  std::map<int, Vec3> points;
  std::map<int, PluckerLine> lines;
  std::map<int, Vec3> gps;  // unit directions

  bool contains(const VarRef& v) const {
    switch (v.type) {
      case VarType::kPose: return poses.count(v.key) > 0;
      case VarType::kPoint: return points.count(v.key) > 0;
      case VarType::kLine: return lines.count(v.key) > 0;
      case VarType::kGp: return gps.count(v.key) > 0;
    }
    return false;
  }
};

// ---------------------------------------------------------------------------
// Tangent space of the unit sphere

struct TangentBasis {
  Vec3 b1 = Vec3::UnitX();
  Vec3 b2 = Vec3::UnitY();
};

/// b1 = normalize(anchor x e_k) for the axis e_k of anchor's smallest
/// component, b2 = anchor x b1. {anchor, b1, b2} is right-handed.
inline TangentBasis tangent_basis(const Vec3& anchor) {
  int k = 0;
  for (int i = 1; i < 3; ++i) {
    if (std::abs(anchor(i)) < std::abs(anchor(k))) k = i;
  }
  TangentBasis tb;
  tb.b1 = anchor.cross(Vec3::Unit(k)).normalized();
  tb.b2 = anchor.cross(tb.b1);
  return tb;
}

template <class T>
Vec3T<T> gp_retract(const Vec3& anchor, const T& w1, const T& w2) {
  const TangentBasis tb = tangent_basis(anchor);
  const Vec3T<T> v = anchor.cast<T>() + tb.b1.cast<T>() * w1 + tb.b2.cast<T>() * w2;
  return v / v.norm();
}

inline Vec3 gp_retract(const Vec3& anchor, double w1, double w2) {
  return gp_retract<double>(anchor, w1, w2);
}

// ---------------------------------------------------------------------------
// Robust kernel

/// IRLS weight of the Huber kernel for a whitened squared residual.
inline double huber_weight(double r_sq, double delta) {
  const double r = std::sqrt(r_sq);
  return r <= delta ? 1.0 : delta / r;
}

/// Huber cost rho(s): s inside the threshold, 2 delta sqrt(s) - delta^2 beyond.
/// A non-positive delta disables the kernel.
inline double huber_cost(double r_sq, double delta) {
  if (delta <= 0.0) return r_sq;
  const double r = std::sqrt(r_sq);
  return r <= delta ? r_sq : 2.0 * delta * r - delta * delta;
}

inline const double kHuber2Dof = std::sqrt(5.99);
inline const double kHuber1Dof = std::sqrt(3.84);

// ---------------------------------------------------------------------------
// Residual functions

template <class T>
bool point_residual(const Mat3T<T>& r_cw, const Vec3T<T>& t_cw, const Vec3T<T>& p_w,
                    const CameraIntrinsics& k, const Vec2& obs, Vec2T<T>& res) {
  const auto px = project_camera_point<T>(Vec3T<T>(r_cw * p_w + t_cw), k);
  if (!px) return false;
  res = *px - obs.cast<T>();
  return true;
}

/// Reprojection residual in pixels; nullopt when the point is behind the camera.
inline std::optional<Vec2> point_residual(const Vec3& p_w, const Pose& t_cw,
                                          const CameraIntrinsics& k, const Vec2& obs) {
  Vec2 r;
  if (!point_residual<double>(t_cw.rotation, t_cw.translation, p_w, k, obs, r)) return std::nullopt;
  return r;
}

/// Signed distances of the observed endpoints to the projected infinite line.
template <class T>
bool line_residual(const Mat3T<T>& r_cw, const Vec3T<T>& t_cw, const Vec3T<T>& n_w,
                   const Vec3T<T>& d_w, const CameraIntrinsics& k, const Segment2D& obs,
                   Vec2T<T>& res) {
  Vec3T<T> n_c, d_c;
  transform_plucker<T>(n_w, d_w, r_cw, t_cw, n_c, d_c);
  const Vec3T<T> l = k.line_matrix().cast<T>() * n_c;
  using std::sqrt;
  const T ab = sqrt(l(0) * l(0) + l(1) * l(1));
  // Same test as project_plucker, on the direction-normalized line.
  const double d_norm = scalar_value(T(d_c.norm()));
  if (!(scalar_value(ab) >= kDegenerateImageLine * d_norm) || scalar_value(ab) == 0.0) return false;
  res(0) = (l(0) * obs.p_start.x() + l(1) * obs.p_start.y() + l(2)) / ab;
  res(1) = (l(0) * obs.p_end.x() + l(1) * obs.p_end.y() + l(2)) / ab;
  return true;
}

/// nullopt when the line projects to a point (degenerate image line).
inline std::optional<Vec2> line_residual(const PluckerLine& l_w, const Pose& t_cw,
                                         const CameraIntrinsics& k, const Segment2D& obs) {
  Vec2 r;
  if (!line_residual<double>(t_cw.rotation, t_cw.translation, l_w.normal, l_w.direction, k, obs, r))
    return std::nullopt;
  return r;
}

/// Incidence of the GP's image vanishing point (spherically normalized) with
/// the segment's line (scaled to ||(a,b)|| = 1).
template <class T>
T vd_align_residual(const Vec3T<T>& gp_w, const Mat3T<T>& r_cw, const CameraIntrinsics& k,
                    const Vec3& seg_line) {
  const Vec3T<T> v_img = k.matrix().cast<T>() * (r_cw * gp_w);
  return seg_line.cast<T>().dot(v_img) / v_img.norm();
}

inline double vd_align_residual(const Vec3& gp_dir, const Pose& t_cw, const CameraIntrinsics& k,
                                const Segment2D& seg) {
  return vd_align_residual<double>(gp_dir, t_cw.rotation, k, segment_line(seg));
}

/// |L_D . V_D - 1| for unit inputs. For sign-aligned unit vectors the dot
/// product never exceeds 1, so this is 1 - L_D . V_D.
inline double struct_residual(const Vec3& line_dir_w, const Vec3& gp_dir) {
  return std::abs(line_dir_w.dot(gp_dir) - 1.0);
}

// ---------------------------------------------------------------------------
// Factors

namespace detail {

template <class T, int N>
void retract_pose_block(const Values& v, int key, const Eigen::Matrix<T, N, 1>& delta, int off,
                        Mat3T<T>& r, Vec3T<T>& t) {
  retract_pose<T>(v.poses.at(key), Vec6T<T>(delta.template segment<6>(off)), r, t);
}

template <class T, int N>
void retract_line_block(const Values& v, int key, const Eigen::Matrix<T, N, 1>& delta, int off,
                        Vec3T<T>& n, Vec3T<T>& d) {
  retract_line<T>(to_orthonormal(v.lines.at(key)), Vec4T<T>(delta.template segment<4>(off)), n, d);
}

template <class T, int N>
Vec3T<T> retract_gp_block(const Values& v, int key, const Eigen::Matrix<T, N, 1>& delta, int off) {
  return gp_retract<T>(v.gps.at(key), delta(off), delta(off + 1));
}

}  // namespace detail

struct PointFactor {
  static constexpr int kResidualDim = 2;
  static constexpr int kTangentDim = 9;
  static constexpr const char* kName = "point";

  int pose_key = 0;
  int point_key = 0;
  Vec2 measurement = Vec2::Zero();
  CameraIntrinsics camera;
  Mat2 sqrt_information = Mat2::Identity();
  double huber_delta = kHuber2Dof;

  std::array<VarRef, 2> blocks() const {
    return {{{VarType::kPose, pose_key}, {VarType::kPoint, point_key}}};
  }

  template <class T>
  bool residual_at(const Values& v, const Eigen::Matrix<T, kTangentDim, 1>& delta,
                   Eigen::Matrix<T, kResidualDim, 1>& res) const {
    Mat3T<T> r;
    Vec3T<T> t;
    detail::retract_pose_block<T>(v, pose_key, delta, 0, r, t);
    const Vec3T<T> p = v.points.at(point_key).template cast<T>() + delta.template segment<3>(6);
    return point_residual<T>(r, t, p, camera, measurement, res);
  }
};

struct LineFactor {
  static constexpr int kResidualDim = 2;
  static constexpr int kTangentDim = 10;
  static constexpr const char* kName = "line";

  int pose_key = 0;
  int line_key = 0;
  Segment2D measurement;
  CameraIntrinsics camera;
  Mat2 sqrt_information = Mat2::Identity();
  double huber_delta = kHuber2Dof;

  std::array<VarRef, 2> blocks() const {
    return {{{VarType::kPose, pose_key}, {VarType::kLine, line_key}}};
  }

  template <class T>
  bool residual_at(const Values& v, const Eigen::Matrix<T, kTangentDim, 1>& delta,
                   Eigen::Matrix<T, kResidualDim, 1>& res) const {
    Mat3T<T> r;
    Vec3T<T> t, n, d;
    detail::retract_pose_block<T>(v, pose_key, delta, 0, r, t);
    detail::retract_line_block<T>(v, line_key, delta, 6, n, d);
    return line_residual<T>(r, t, n, d, camera, measurement, res);
  }
};

struct VdAlignFactor {
  static constexpr int kResidualDim = 1;
  static constexpr int kTangentDim = 8;
  static constexpr const char* kName = "vd_align";

  int pose_key = 0;
  int gp_key = 0;
  Segment2D measurement;
  CameraIntrinsics camera;
  Eigen::Matrix<double, 1, 1> sqrt_information = Eigen::Matrix<double, 1, 1>::Constant(1.0 / 0.02);
  double huber_delta = kHuber1Dof;

  std::array<VarRef, 2> blocks() const {
    return {{{VarType::kPose, pose_key}, {VarType::kGp, gp_key}}};
  }

  template <class T>
  bool residual_at(const Values& v, const Eigen::Matrix<T, kTangentDim, 1>& delta,
                   Eigen::Matrix<T, kResidualDim, 1>& res) const {
    Mat3T<T> r;
    Vec3T<T> t;
    detail::retract_pose_block<T>(v, pose_key, delta, 0, r, t);
    const Vec3T<T> g = detail::retract_gp_block<T>(v, gp_key, delta, 6);
    res(0) = vd_align_residual<T>(g, r, camera, segment_line(measurement));
    return true;
  }
};

struct StructFactor {
  static constexpr int kResidualDim = 1;
  static constexpr int kTangentDim = 6;
  static constexpr const char* kName = "struct";

  int line_key = 0;
  int gp_key = 0;
  /// +1 or -1: orientation of the line's direction relative to the GP, fixed
  /// at association time.
  double sign = 1.0;
  Eigen::Matrix<double, 1, 1> sqrt_information = Eigen::Matrix<double, 1, 1>::Constant(1.0 / 0.01);
  double huber_delta = kHuber1Dof;

  std::array<VarRef, 2> blocks() const {
    return {{{VarType::kLine, line_key}, {VarType::kGp, gp_key}}};
  }

  template <class T>
  bool residual_at(const Values& v, const Eigen::Matrix<T, kTangentDim, 1>& delta,
                   Eigen::Matrix<T, kResidualDim, 1>& res) const {
    Vec3T<T> n, d;
    detail::retract_line_block<T>(v, line_key, delta, 0, n, d);
    const Vec3T<T> g = detail::retract_gp_block<T>(v, gp_key, delta, 4);
    res(0) = T(1.0) - T(sign) * (d / d.norm()).dot(g);
    return true;
  }
};

/// Square-root information (upper Cholesky factor of the inverse covariance).
template <int N>
Eigen::Matrix<double, N, N> sqrt_information_from_covariance(const Eigen::Matrix<double, N, N>& cov) {
  if (!cov.isApprox(cov.transpose(), 1e-12)) {
    throw Error(ErrorCode::kInvalidArgument, "covariance not symmetric");
  }
  Eigen::LLT<Eigen::Matrix<double, N, N>> llt(cov);
  if (llt.info() != Eigen::Success) {
    throw Error(ErrorCode::kInvalidArgument, "covariance not positive definite");
  }
  const Eigen::Matrix<double, N, N> info = llt.solve(Eigen::Matrix<double, N, N>::Identity());
  Eigen::Matrix<double, N, N> u = Eigen::LLT<Eigen::Matrix<double, N, N>>(info).matrixU();
  return u;
}

struct CostBreakdown {
  double point = 0.0;
  double line = 0.0;
  double vd_align = 0.0;
  double structure = 0.0;

  double total() const { return point + line + vd_align + structure; }
};

class FactorGraph {
 public:
  Values values;
  std::vector<PointFactor> point_factors;
  std::vector<LineFactor> line_factors;
  std::vector<VdAlignFactor> vd_factors;
  std::vector<StructFactor> struct_factors;

  void add(const PointFactor& f) { check(f); point_factors.push_back(f); }
  void add(const LineFactor& f) { check(f); line_factors.push_back(f); }
  void add(const VdAlignFactor& f) { check(f); vd_factors.push_back(f); }
  void add(const StructFactor& f) { check(f); struct_factors.push_back(f); }

  template <class Fn>
  void for_each_factor(Fn&& fn) const {
    for (const auto& f : point_factors) fn(f);
    for (const auto& f : line_factors) fn(f);
    for (const auto& f : vd_factors) fn(f);
    for (const auto& f : struct_factors) fn(f);
  }

  std::size_t num_factors() const {
    return point_factors.size() + line_factors.size() + vd_factors.size() + struct_factors.size();
  }

 private:
  template <class F>
  void check(const F& f) const {
    for (const auto& b : f.blocks()) {
      if (!values.contains(b)) {
        throw Error(ErrorCode::kMissingVariable,
                    std::string(to_string(b.type)) + " " + std::to_string(b.key));
      }
    }
    if (!f.sqrt_information.allFinite()) throw Error(ErrorCode::kInvalidArgument, "information");
  }
};

// ---------------------------------------------------------------------------
// Evaluation and linearization

template <class F>
struct FactorLinearization {
  bool active = false;
  Eigen::Matrix<double, F::kResidualDim, 1> residual;
  Eigen::Matrix<double, F::kResidualDim, F::kTangentDim> jacobian;
};

/// Raw (unwhitened) residual at the current state; nullopt when deactivated.
template <class F>
std::optional<Eigen::Matrix<double, F::kResidualDim, 1>> factor_residual(const F& f,
                                                                         const Values& v) {
  Eigen::Matrix<double, F::kResidualDim, 1> r;
  const Eigen::Matrix<double, F::kTangentDim, 1> zero = Eigen::Matrix<double, F::kTangentDim, 1>::Zero();
  if (!f.template residual_at<double>(v, zero, r)) return std::nullopt;
  return r;
}

/// Robust Mahalanobis cost of one factor; 0 when deactivated.
template <class F>
double factor_cost(const F& f, const Values& v) {
  const auto r = factor_residual(f, v);
  if (!r) return 0.0;
  const double s = (f.sqrt_information * *r).squaredNorm();
  return huber_cost(s, f.huber_delta);
}

/// Residual and Jacobian with respect to the local parameterization of every
/// connected block, via forward-mode autodiff.
template <class F>
FactorLinearization<F> linearize(const F& f, const Values& v) {
  using Ad = Eigen::AutoDiffScalar<Eigen::Matrix<double, F::kTangentDim, 1>>;
  Eigen::Matrix<Ad, F::kTangentDim, 1> delta;
  for (int i = 0; i < F::kTangentDim; ++i) delta(i) = Ad(0.0, F::kTangentDim, i);
  Eigen::Matrix<Ad, F::kResidualDim, 1> res;
  FactorLinearization<F> out;
  out.active = f.template residual_at<Ad>(v, delta, res);
  if (!out.active) return out;
  for (int i = 0; i < F::kResidualDim; ++i) {
    out.residual(i) = res(i).value();
    out.jacobian.row(i) = res(i).derivatives().transpose();
  }
  return out;
}

/// Central-difference Jacobian on each block's retraction.
template <class F>
Eigen::Matrix<double, F::kResidualDim, F::kTangentDim> numeric_jacobian(const F& f,
                                                                        const Values& v,
                                                                        double h = 1e-6) {
  if (h <= 0.0) throw Error(ErrorCode::kInvalidArgument, "step must be positive");
  Eigen::Matrix<double, F::kResidualDim, F::kTangentDim> jac;
  for (int j = 0; j < F::kTangentDim; ++j) {
    Eigen::Matrix<double, F::kTangentDim, 1> dp = Eigen::Matrix<double, F::kTangentDim, 1>::Zero();
    Eigen::Matrix<double, F::kTangentDim, 1> dm = dp;
    dp(j) = h;
    dm(j) = -h;
    Eigen::Matrix<double, F::kResidualDim, 1> rp, rm;
    if (!f.template residual_at<double>(v, dp, rp) || !f.template residual_at<double>(v, dm, rm)) {
      throw Error(ErrorCode::kInvalidArgument, "factor inactive near the linearization point");
    }
    jac.col(j) = (rp - rm) / (2.0 * h);
  }
  return jac;
}

inline CostBreakdown cost_breakdown(const FactorGraph& g, const Values& v) {
  CostBreakdown c;
  for (const auto& f : g.point_factors) c.point += factor_cost(f, v);
  for (const auto& f : g.line_factors) c.line += factor_cost(f, v);
  for (const auto& f : g.vd_factors) c.vd_align += factor_cost(f, v);
  for (const auto& f : g.struct_factors) c.structure += factor_cost(f, v);
  return c;
}

/// Sum of robust Mahalanobis costs over all active factors.
inline double total_cost(const FactorGraph& g) { return cost_breakdown(g, g.values).total(); }

}  // namespace gpslam
