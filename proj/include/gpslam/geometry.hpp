#pragma once

// Lie-group and projective geometry: SE(3) poses, pinhole projection,
// Plücker lines with their orthonormal (SO(3) x SO(2)) update, and
// two-view triangulation.
//
// Pose convention: camera-from-world (T_cw). X_c = R_cw * X_w + t_cw.

#include <Eigen/Dense>
#include <Eigen/Geometry>

#include <cmath>
#include <optional>
#include <type_traits>

#include "gpslam/error.hpp"

namespace gpslam {

template <class T> using Vec2T = Eigen::Matrix<T, 2, 1>;
template <class T> using Vec3T = Eigen::Matrix<T, 3, 1>;
template <class T> using Vec4T = Eigen::Matrix<T, 4, 1>;
template <class T> using Vec6T = Eigen::Matrix<T, 6, 1>;
template <class T> using Mat3T = Eigen::Matrix<T, 3, 3>;

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Vec4 = Eigen::Vector4d;
using Vec6 = Eigen::Matrix<double, 6, 1>;
using Mat2 = Eigen::Matrix2d;
using Mat3 = Eigen::Matrix3d;

inline constexpr double kPi = 3.14159265358979323846;
inline constexpr double kDegToRad = kPi / 180.0;
inline constexpr double kRadToDeg = 180.0 / kPi;

/// Minimum camera-frame depth accepted by projection, meters.
inline constexpr double kMinDepth = 1e-6;
/// Image lines with ||(a,b)|| below this are treated as lines at infinity.
inline constexpr double kDegenerateImageLine = 1e-12;

/// Plain double value of a scalar that may be an autodiff type.
template <class T>
double scalar_value(const T& x) {
  if constexpr (std::is_arithmetic_v<T>) {
    return static_cast<double>(x);
  } else {
    return x.value();
  }
}

template <class T>
Mat3T<T> skew(const Vec3T<T>& v) {
  Mat3T<T> s;
  // clang-format off
  s << T(0), -v.z(),  v.y(),
       v.z(),  T(0), -v.x(),
      -v.y(),  v.x(),  T(0);
  // clang-format on
  return s;
}

namespace detail {

// Coefficients A = sin(t)/t, B = (1-cos t)/t^2, C = (t - sin t)/t^3 with
// series fallbacks near zero (keeps autodiff derivatives exact at t = 0).
template <class T>
void rodrigues_coefficients(const T& theta_sq, T& a, T& b, T& c) {
  using std::cos;
  using std::sin;
  using std::sqrt;
  if (scalar_value(theta_sq) < 1e-10) {
    a = T(1.0) - theta_sq / 6.0;
    b = T(0.5) - theta_sq / 24.0;
    c = T(1.0 / 6.0) - theta_sq / 120.0;
  } else {
    const T theta = sqrt(theta_sq);
    const T s = sin(theta);
    a = s / theta;
    b = (T(1.0) - cos(theta)) / theta_sq;
    c = (theta - s) / (theta_sq * theta);
  }
}

}  // namespace detail

/// Rotation matrix for the rotation vector `w` (Rodrigues).
template <class T>
Mat3T<T> so3_exp(const Vec3T<T>& w) {
  T a, b, c;
  detail::rodrigues_coefficients<T>(w.squaredNorm(), a, b, c);
  const Mat3T<T> k = skew<T>(w);
  return Mat3T<T>::Identity() + a * k + b * (k * k);
}

/// Left Jacobian of SO(3); maps the translational part of an se(3) twist.
template <class T>
Mat3T<T> so3_left_jacobian(const Vec3T<T>& w) {
  T a, b, c;
  detail::rodrigues_coefficients<T>(w.squaredNorm(), a, b, c);
  const Mat3T<T> k = skew<T>(w);
  return Mat3T<T>::Identity() + b * k + c * (k * k);
}

inline Vec3 so3_log(const Mat3& r) {
  const Eigen::AngleAxisd aa(r);
  return aa.angle() * aa.axis();
}

/// Re-orthonormalize a nearly orthonormal rotation (nearest rotation via SVD).
inline Mat3 orthonormalize(const Mat3& r) {
  Eigen::JacobiSVD<Mat3> svd(r, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 out = svd.matrixU() * svd.matrixV().transpose();
  if (out.determinant() < 0) {
    Mat3 u = svd.matrixU();
    u.col(2) *= -1.0;
    out = u * svd.matrixV().transpose();
  }
  return out;
}

/// Rigid camera-from-world transform.
struct Pose {
  Mat3 rotation = Mat3::Identity();   // R_cw
  Vec3 translation = Vec3::Zero();    // t_cw, world origin in camera frame

  static Pose identity() { return {}; }

  /// Builds T_cw from a world-frame camera orientation R_wc and center.
  static Pose from_camera_center(const Mat3& r_wc, const Vec3& center) {
    Pose p;
    p.rotation = r_wc.transpose();
    p.translation = -(p.rotation * center);
    return p;
  }

  const Mat3& R_cw() const { return rotation; }
  Mat3 R_wc() const { return rotation.transpose(); }
  Vec3 center() const { return -(rotation.transpose() * translation); }

  Vec3 transform(const Vec3& p_w) const { return rotation * p_w + translation; }

  Pose inverse() const {
    Pose inv;
    inv.rotation = rotation.transpose();
    inv.translation = -(inv.rotation * translation);
    return inv;
  }

  /// (a * b)(x) = a(b(x)).
  friend Pose operator*(const Pose& a, const Pose& b) {
    Pose out;
    out.rotation = a.rotation * b.rotation;
    out.translation = a.rotation * b.translation + a.translation;
    return out;
  }
};

/// Twist ordering is (translation rho, rotation phi).
template <class T>
void se3_exp_components(const Vec6T<T>& twist, Mat3T<T>& r, Vec3T<T>& t) {
  const Vec3T<T> rho = twist.template head<3>();
  const Vec3T<T> phi = twist.template tail<3>();
  r = so3_exp<T>(phi);
  t = so3_left_jacobian<T>(phi) * rho;
}

inline Pose se3_exp(const Vec6& twist) {
  Pose p;
  se3_exp_components<double>(twist, p.rotation, p.translation);
  return p;
}

inline Vec6 se3_log(const Pose& pose) {
  const Vec3 phi = so3_log(pose.rotation);
  const Mat3 v = so3_left_jacobian<double>(phi);
  Vec6 out;
  out.head<3>() = v.lu().solve(pose.translation);
  out.tail<3>() = phi;
  return out;
}

/// Left-perturbation retraction used by the optimizer: exp(delta) * pose.
template <class T>
void retract_pose(const Pose& base, const Vec6T<T>& delta, Mat3T<T>& r, Vec3T<T>& t) {
  Mat3T<T> dr;
  Vec3T<T> dt;
  se3_exp_components<T>(delta, dr, dt);
  r = dr * base.rotation.template cast<T>();
  t = dr * base.translation.template cast<T>() + dt;
}

inline Pose retract_pose(const Pose& base, const Vec6& delta) {
  Pose out;
  retract_pose<double>(base, delta, out.rotation, out.translation);
  out.rotation = orthonormalize(out.rotation);
  return out;
}

struct CameraIntrinsics {
  double fx = 500.0;
  double fy = 500.0;
  double cx = 320.0;
  double cy = 240.0;

  bool valid() const { return fx > 0.0 && fy > 0.0; }

  Mat3 matrix() const {
    Mat3 k;
    k << fx, 0, cx, 0, fy, cy, 0, 0, 1;
    return k;
  }

  Mat3 inverse_matrix() const {
    Mat3 k;
    k << 1.0 / fx, 0, -cx / fx, 0, 1.0 / fy, -cy / fy, 0, 0, 1;
    return k;
  }

  /// Line projection matrix: image line l = K_L * n_c.
  Mat3 line_matrix() const {
    Mat3 k;
    k << fy, 0, 0, 0, fx, 0, -fy * cx, -fx * cy, fx * fy;
    return k;
  }
};

/// Projection of a camera-frame point; nullopt when z <= kMinDepth.
template <class T>
std::optional<Vec2T<T>> project_camera_point(const Vec3T<T>& p_c, const CameraIntrinsics& k) {
  if (scalar_value(p_c.z()) <= kMinDepth) return std::nullopt;
  return Vec2T<T>(k.fx * p_c.x() / p_c.z() + k.cx, k.fy * p_c.y() / p_c.z() + k.cy);
}

inline Vec2 project_point(const Vec3& p_w, const Pose& t_cw, const CameraIntrinsics& k) {
  auto px = project_camera_point<double>(t_cw.transform(p_w), k);
  if (!px) throw Error(ErrorCode::kBehindCamera);
  return *px;
}

/// Unit bearing of pixel `px` in the camera frame.
inline Vec3 back_project(const Vec2& px, const CameraIntrinsics& k) {
  return (k.inverse_matrix() * Vec3(px.x(), px.y(), 1.0)).normalized();
}

/// 3D line as (normal, direction); normal = p x direction for any p on the
/// line. Stored unnormalized.
struct PluckerLine {
  Vec3 normal = Vec3::Zero();
  Vec3 direction = Vec3::UnitZ();

  static PluckerLine from_points(const Vec3& a, const Vec3& b) {
    return {a.cross(b), b - a};
  }
  static PluckerLine from_point_direction(const Vec3& p, const Vec3& d) {
    return {p.cross(d), d};
  }

  /// Scaled so that ||direction|| = 1.
  PluckerLine normalized() const {
    const double s = direction.norm();
    return {normal / s, direction / s};
  }

  Vec3 unit_direction() const { return direction.normalized(); }

  /// Point on the line closest to the origin.
  Vec3 closest_point_to_origin() const {
    return direction.cross(normal) / direction.squaredNorm();
  }

  double distance_to(const Vec3& p) const {
    const PluckerLine u = normalized();
    return (p.cross(u.direction) - u.normal).norm();
  }

  double constraint() const { return normal.dot(direction); }
};

/// True when two lines coincide (normalized form, up to sign).
inline bool same_line(const PluckerLine& a, const PluckerLine& b, double tol) {
  const PluckerLine na = a.normalized();
  PluckerLine nb = b.normalized();
  if (na.direction.dot(nb.direction) < 0) {
    nb.normal = -nb.normal;
    nb.direction = -nb.direction;
  }
  return (na.normal - nb.normal).norm() <= tol && (na.direction - nb.direction).norm() <= tol;
}

template <class T>
void transform_plucker(const Vec3T<T>& n_w, const Vec3T<T>& d_w, const Mat3T<T>& r,
                       const Vec3T<T>& t, Vec3T<T>& n_c, Vec3T<T>& d_c) {
  d_c = r * d_w;
  n_c = r * n_w + skew<T>(t) * d_c;
}

inline PluckerLine transform_plucker(const PluckerLine& l_w, const Pose& t_cw) {
  PluckerLine out;
  transform_plucker<double>(l_w.normal, l_w.direction, t_cw.rotation, t_cw.translation,
                            out.normal, out.direction);
  return out;
}

/// Homogeneous image line (a,b,c) of a camera-frame Plücker line.
inline Vec3 project_plucker(const PluckerLine& l_c, const CameraIntrinsics& k) {
  const PluckerLine u = l_c.normalized();
  const Vec3 l = k.line_matrix() * u.normal;
  if (l.head<2>().norm() < kDegenerateImageLine) throw Error(ErrorCode::kDegenerateLine);
  return l;
}

/// Bartoli-Sturm orthonormal representation: L ~ [w1 * u1, w2 * u2] with
/// W = [[w1, -w2], [w2, w1]].
struct OrthonormalLine {
  Mat3 U = Mat3::Identity();
  Mat2 W = Mat2::Identity();
};

inline OrthonormalLine to_orthonormal(const PluckerLine& line) {
  const double nn = line.normal.norm();
  const double dn = line.direction.norm();
  const Vec3 u2 = line.direction / dn;
  Vec3 u1;
  if (nn > 1e-15 * dn) {
    u1 = line.normal / nn;
  } else {
    // line through the origin: any unit vector orthogonal to the direction
    const Vec3 axis = std::abs(u2.x()) < 0.9 ? Vec3::UnitX() : Vec3::UnitY();
    u1 = u2.cross(axis).normalized();
  }
  // Remove residual non-orthogonality so U is exactly orthonormal.
  u1 = (u1 - u1.dot(u2) * u2).normalized();
  OrthonormalLine o;
  o.U.col(0) = u1;
  o.U.col(1) = u2;
  o.U.col(2) = u1.cross(u2);
  const double s = std::hypot(nn, dn);
  const double w1 = nn / s;
  const double w2 = dn / s;
  o.W << w1, -w2, w2, w1;
  return o;
}

inline PluckerLine to_plucker(const OrthonormalLine& o) {
  return {o.W(0, 0) * o.U.col(0), o.W(1, 0) * o.U.col(1)};
}

template <class T>
Eigen::Matrix<T, 2, 2> so2_exp(const T& angle) {
  using std::cos;
  using std::sin;
  Eigen::Matrix<T, 2, 2> r;
  r << cos(angle), -sin(angle), sin(angle), cos(angle);
  return r;
}

/// Left-multiplies U by exp(delta[0:3]) and W by exp(delta[3]); returns the
/// resulting Plücker vectors.
template <class T>
void retract_line(const OrthonormalLine& o, const Vec4T<T>& delta, Vec3T<T>& n, Vec3T<T>& d) {
  const Mat3T<T> u = so3_exp<T>(Vec3T<T>(delta.template head<3>())) * o.U.template cast<T>();
  const Eigen::Matrix<T, 2, 2> w = so2_exp<T>(delta(3)) * o.W.template cast<T>();
  n = w(0, 0) * u.col(0);
  d = w(1, 0) * u.col(1);
}

inline OrthonormalLine orthonormal_update(const OrthonormalLine& o, const Vec4& delta) {
  OrthonormalLine out;
  out.U = orthonormalize(so3_exp<double>(Vec3(delta.head<3>())) * o.U);
  out.W = so2_exp<double>(delta(3)) * o.W;
  return out;
}

inline PluckerLine retract_line(const PluckerLine& base, const Vec4& delta) {
  return to_plucker(orthonormal_update(to_orthonormal(base), delta));
}

/// 2D line segment observation in pixels.
struct Segment2D {
  Vec2 p_start = Vec2::Zero();
  Vec2 p_end = Vec2::Zero();
  int id = 0;
  std::optional<int> track_id;
  std::optional<int> cluster_label;

  double length() const { return (p_end - p_start).norm(); }
  Vec2 midpoint() const { return 0.5 * (p_start + p_end); }
  Vec2 direction() const { return (p_end - p_start).normalized(); }
};

/// Homogeneous line through the segment endpoints, scaled so ||(a,b)|| = 1.
inline Vec3 segment_line(const Segment2D& seg) {
  const Vec3 l = Vec3(seg.p_start.x(), seg.p_start.y(), 1.0)
                     .cross(Vec3(seg.p_end.x(), seg.p_end.y(), 1.0));
  return l / l.head<2>().norm();
}

/// Minimum angle between the two viewing rays for point triangulation.
inline constexpr double kMinRayAngleDeg = 0.05;
/// Minimum angle between back-projected planes for line triangulation.
inline constexpr double kMinPlaneAngleDeg = 1.0;

/// Midpoint triangulation of a point seen in two views.
inline Vec3 triangulate_point(const Vec2& obs_a, const Vec2& obs_b, const Pose& t_a,
                              const Pose& t_b, const CameraIntrinsics& k) {
  const Vec3 ca = t_a.center();
  const Vec3 cb = t_b.center();
  const Vec3 ra = t_a.R_wc() * back_project(obs_a, k);
  const Vec3 rb = t_b.R_wc() * back_project(obs_b, k);
  const double sin_angle = ra.cross(rb).norm();
  if ((cb - ca).norm() < 1e-9 || sin_angle < std::sin(kMinRayAngleDeg * kDegToRad)) {
    throw Error(ErrorCode::kInsufficientParallax);
  }
  // Closest points ca + s*ra and cb + u*rb.
  const Vec3 w = ca - cb;
  const double b = ra.dot(rb);
  const double d = ra.dot(w);
  const double e = rb.dot(w);
  const double denom = 1.0 - b * b;
  const double s = (b * e - d) / denom;
  const double u = (e - b * d) / denom;
  return 0.5 * ((ca + s * ra) + (cb + u * rb));
}

/// World-frame plane (normal, offset) with normal . X + offset = 0, back-projected
/// from an image segment.
inline Vec4 back_project_segment(const Segment2D& seg, const Pose& t_cw,
                                 const CameraIntrinsics& k) {
  const Vec3 n_c = (k.matrix().transpose() * segment_line(seg)).normalized();
  Vec4 plane;
  plane.head<3>() = t_cw.rotation.transpose() * n_c;
  plane(3) = n_c.dot(t_cw.translation);
  return plane;
}

/// Intersects the two back-projected planes of a segment pair.
inline PluckerLine triangulate_line(const Segment2D& seg_a, const Segment2D& seg_b,
                                    const Pose& t_a, const Pose& t_b,
                                    const CameraIntrinsics& k) {
  const Vec4 pa = back_project_segment(seg_a, t_a, k);
  const Vec4 pb = back_project_segment(seg_b, t_b, k);
  const Vec3 dir = pa.head<3>().cross(pb.head<3>());
  if (dir.norm() < std::sin(kMinPlaneAngleDeg * kDegToRad)) {
    throw Error(ErrorCode::kInsufficientParallax);
  }
  PluckerLine line;
  line.direction = dir;
  line.normal = pa(3) * pb.head<3>() - pb(3) * pa.head<3>();
  return line;
}

/// Point on `line` closest to the viewing ray of pixel `px` in camera `t_cw`.
/// nullopt when the ray is parallel to the line.
inline std::optional<Vec3> closest_point_on_line_to_ray(const PluckerLine& line, const Vec2& px,
                                                        const Pose& t_cw,
                                                        const CameraIntrinsics& k) {
  const PluckerLine u = line.normalized();
  const Vec3 p0 = u.closest_point_to_origin();
  const Vec3 c = t_cw.center();
  const Vec3 r = t_cw.R_wc() * back_project(px, k);
  const Vec3& d = u.direction;
  const double b = d.dot(r);
  const double denom = 1.0 - b * b;
  if (denom < 1e-12) return std::nullopt;
  const Vec3 w = p0 - c;
  const double s = (b * r.dot(w) - d.dot(w)) / denom;
  return p0 + s * d;
}

}  // namespace gpslam
