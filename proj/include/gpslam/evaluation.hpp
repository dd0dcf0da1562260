#pragma once

// Trajectories in TUM format, similarity alignment and absolute trajectory error.

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Geometry>

#include "gpslam/geometry.hpp"

namespace gpslam {

struct Stamped {
  double timestamp = 0.0;
  Pose pose;  // T_cw
};

/// Timestamps strictly increasing.
struct Trajectory {
  std::vector<Stamped> samples;

  std::size_t size() const { return samples.size(); }

  void push_back(double t, const Pose& pose) {
    if (!samples.empty() && !(t > samples.back().timestamp)) {
      throw Error(ErrorCode::kNonMonotonicTimestamps, "at t=" + std::to_string(t));
    }
    samples.push_back({t, pose});
  }
};

inline Trajectory make_trajectory(const std::vector<double>& stamps, const std::vector<Pose>& poses) {
  if (stamps.size() != poses.size()) throw Error(ErrorCode::kInvalidArgument, "stamp/pose count mismatch");
  Trajectory t;
  for (std::size_t i = 0; i < poses.size(); ++i) t.push_back(stamps[i], poses[i]);
  return t;
}

/// One line per pose: `timestamp tx ty tz qx qy qz qw`, camera-to-world.
inline void write_tum(std::ostream& os, const Trajectory& traj) {
  char buf[256];
  for (const auto& s : traj.samples) {
    const Vec3 c = s.pose.center();
    Eigen::Quaterniond q(s.pose.R_wc());
    q.normalize();
    if (q.w() < 0) q.coeffs() *= -1.0;
    std::snprintf(buf, sizeof buf, "%.6f %.12f %.12f %.12f %.12f %.12f %.12f %.12f\n", s.timestamp, c.x(),
                  c.y(), c.z(), q.x(), q.y(), q.z(), q.w());
    os << buf;
  }
}

inline constexpr double kQuaternionNormTol = 1e-3;

/// Blank lines and lines starting with '#' are skipped.
inline Trajectory read_tum(std::istream& is) {
  Trajectory traj;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    std::istringstream ss(line);
    std::vector<double> v;
    std::string tok;
    while (ss >> tok) {
      std::size_t used = 0;
      double x = 0.0;
      try {
        x = std::stod(tok, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used != tok.size() || !std::isfinite(x)) {
        throw Error(ErrorCode::kParseError, "line " + std::to_string(lineno) + ": bad number '" + tok + "'");
      }
      v.push_back(x);
    }
    if (v.size() != 8) {
      throw Error(ErrorCode::kParseError,
                  "line " + std::to_string(lineno) + ": expected 8 fields, got " + std::to_string(v.size()));
    }
    Eigen::Quaterniond q(v[7], v[4], v[5], v[6]);
    if (std::abs(q.norm() - 1.0) > kQuaternionNormTol) {
      throw Error(ErrorCode::kParseError, "line " + std::to_string(lineno) + ": quaternion not unit");
    }
    q.normalize();
    if (!traj.samples.empty() && !(v[0] > traj.samples.back().timestamp)) {
      throw Error(ErrorCode::kNonMonotonicTimestamps, "line " + std::to_string(lineno));
    }
    traj.samples.push_back({v[0], Pose::from_camera_center(q.toRotationMatrix(), Vec3(v[1], v[2], v[3]))});
  }
  return traj;
}

inline void save_tum(const Trajectory& traj, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw Error(ErrorCode::kInvalidArgument, "cannot write " + path);
  write_tum(os, traj);
}

inline Trajectory load_tum(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw Error(ErrorCode::kInvalidArgument, "cannot read " + path);
  return read_tum(is);
}

/// p_ref ≈ s * R * p_est + t
struct Similarity {
  double s = 1.0;
  Mat3 R = Mat3::Identity();
  Vec3 t = Vec3::Zero();

  Vec3 apply(const Vec3& p) const { return s * (R * p) + t; }
};

enum class Alignment { kNone, kSe3, kSim3 };

inline Alignment alignment_from_string(const std::string& s) {
  if (s == "none") return Alignment::kNone;
  if (s == "se3") return Alignment::kSe3;
  if (s == "sim3") return Alignment::kSim3;
  throw Error(ErrorCode::kInvalidArgument, "unknown alignment '" + s + "'");
}

/// Camera centers of samples with exactly equal timestamps, as (est, ref) columns.
inline std::pair<Eigen::Matrix3Xd, Eigen::Matrix3Xd> associate(const Trajectory& est, const Trajectory& ref) {
  std::vector<std::pair<Vec3, Vec3>> pairs;
  std::size_t j = 0;
  for (const auto& e : est.samples) {
    while (j < ref.samples.size() && ref.samples[j].timestamp < e.timestamp) ++j;
    if (j < ref.samples.size() && ref.samples[j].timestamp == e.timestamp) {
      pairs.emplace_back(e.pose.center(), ref.samples[j].pose.center());
    }
  }
  Eigen::Matrix3Xd a(3, pairs.size()), b(3, pairs.size());
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    a.col(static_cast<Eigen::Index>(i)) = pairs[i].first;
    b.col(static_cast<Eigen::Index>(i)) = pairs[i].second;
  }
  return {a, b};
}

inline constexpr double kCollinearTol = 1e-10;

/// Least-squares alignment of associated positions (Umeyama).
inline Similarity umeyama_align(const Eigen::Matrix3Xd& est, const Eigen::Matrix3Xd& ref, bool with_scale) {
  if (est.cols() < 3) throw Error(ErrorCode::kInsufficientPairs, std::to_string(est.cols()) + " pairs");
  for (const Eigen::Matrix3Xd* m : {&est, &ref}) {
    const Eigen::Matrix3Xd centered = m->colwise() - m->rowwise().mean();
    const Vec3 sv = Eigen::JacobiSVD<Eigen::Matrix3Xd>(centered).singularValues();
    if (sv(0) == 0.0 || sv(1) <= kCollinearTol * sv(0)) throw Error(ErrorCode::kDegenerateGeometry, "collinear positions");
  }
  const Eigen::Matrix4d m = Eigen::umeyama(est, ref, with_scale);
  Similarity out;
  out.s = m.topLeftCorner<3, 3>().col(0).norm();
  out.R = m.topLeftCorner<3, 3>() / out.s;
  out.t = m.topRightCorner<3, 1>();
  if (!with_scale) out.s = 1.0;
  return out;
}

inline Similarity umeyama_align(const Trajectory& est, const Trajectory& ref, bool with_scale) {
  const auto [a, b] = associate(est, ref);
  return umeyama_align(a, b, with_scale);
}

/// RMSE of camera-center residuals after the requested alignment.
inline double ate_rmse(const Trajectory& est, const Trajectory& ref, Alignment align = Alignment::kSim3) {
  const auto [a, b] = associate(est, ref);
  if (a.cols() == 0) throw Error(ErrorCode::kInsufficientPairs, "0 pairs");
  Similarity sim;
  if (align != Alignment::kNone) sim = umeyama_align(a, b, align == Alignment::kSim3);
  double sum = 0.0;
  for (Eigen::Index i = 0; i < a.cols(); ++i) sum += (sim.apply(a.col(i)) - b.col(i)).squaredNorm();
  return std::sqrt(sum / static_cast<double>(a.cols()));
}

}  // namespace gpslam
