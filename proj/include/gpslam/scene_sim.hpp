#pragma once

// Deterministic synthetic scenes: landmarks on the faces of a room or a
// central box, smooth camera paths, and per-frame point/segment measurements
// with noise, outliers, a fixed segment budget and flow predictions.

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "gpslam/geometry.hpp"

namespace gpslam {

struct DirectionFamily {
  Vec3 direction = Vec3::UnitX();
  int count = 0;
};

enum class TrajectoryType { kCorridor, kOrbit, kFigure8 };

inline const char* to_string(TrajectoryType t) {
  switch (t) {
    case TrajectoryType::kCorridor: return "corridor";
    case TrajectoryType::kOrbit: return "orbit";
    case TrajectoryType::kFigure8: return "figure8";
  }
  return "?";
}

inline TrajectoryType trajectory_type_from_string(const std::string& s) {
  if (s == "corridor") return TrajectoryType::kCorridor;
  if (s == "orbit") return TrajectoryType::kOrbit;
  if (s == "figure8") return TrajectoryType::kFigure8;
  throw Error(ErrorCode::kInvalidArgument, "unknown trajectory type '" + s + "'");
}

struct TrajectoryConfig {
  TrajectoryType type = TrajectoryType::kCorridor;
  int n_keyframes = 20;
  double spacing = 0.25;  // meters between consecutive keyframes
};

struct NoiseConfig {
  double point_px = 1.0;
  double line_px = 1.0;
  double flow_px = 0.5;
};

struct VisibilityConfig {
  double max_range = 0.0;     // meters; 0 disables the range limit
  int partition_window = -1;  // frames; negative disables partitioning
};

struct InitConfig {
  double rot_deg = 1.0;   // per-axis rotation noise
  double trans_m = 0.05;  // per-axis camera-center noise
};

struct ScenarioConfig {
  std::string name = "corridor";
  std::uint64_t seed = 1;
  int n_points = 200;
  std::vector<DirectionFamily> families{{Vec3::UnitX(), 20}, {Vec3::UnitY(), 20}, {Vec3::UnitZ(), 20}};
  TrajectoryConfig trajectory;
  CameraIntrinsics camera{500.0, 500.0, 320.0, 240.0};
  int width = 640;
  int height = 480;
  NoiseConfig noise;
  double outlier_fraction = 0.0;
  int n_l = 60;  // per-frame segment budget
  VisibilityConfig visibility;
  InitConfig init;

  int n_lines() const {
    int n = 0;
    for (const auto& f : families) n += f.count;
    return n;
  }

  void validate() const {
    auto bad = [](const std::string& what) { throw Error(ErrorCode::kInvalidArgument, what); };
    if (n_points < 0) bad("n_points must be non-negative");
    for (const auto& f : families) {
      if (f.count < 0) bad("family count must be non-negative");
      if (std::abs(f.direction.norm() - 1.0) > 1e-9) bad("family direction must be unit");
    }
    if (trajectory.n_keyframes < 2) bad("n_keyframes must be >= 2");
    if (!(trajectory.spacing > 0)) bad("spacing must be positive");
    if (!camera.valid() || width <= 0 || height <= 0) bad("camera");
    if (noise.point_px < 0 || noise.line_px < 0 || noise.flow_px < 0) bad("noise must be >= 0");
    if (outlier_fraction < 0 || outlier_fraction >= 1) bad("outlier_fraction must be in [0,1)");
    if (n_l < 1) bad("n_l must be >= 1");
    if (visibility.max_range < 0) bad("max_range must be >= 0");
    if (init.rot_deg < 0 || init.trans_m < 0) bad("init noise must be >= 0");
  }
};

/// Independent, reproducible random stream for (seed, stream, index).
inline std::mt19937_64 derived_rng(std::uint64_t seed, std::uint32_t stream, std::uint32_t index = 0) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), stream, index};
  return std::mt19937_64(seq);
}

enum RngStream : std::uint32_t {
  kStreamWorld = 1,
  kStreamRender = 2,
  kStreamFlow = 3,
  kStreamInit = 4,
  kStreamVp = 5,
};

struct WorldLine {
  int id = 0;
  int family_id = 0;
  Vec3 p_start = Vec3::Zero();
  Vec3 p_end = Vec3::Zero();

  PluckerLine plucker() const { return PluckerLine::from_points(p_start, p_end); }
};

struct World {
  std::vector<Vec3> points;
  std::vector<WorldLine> lines;
  std::vector<Vec3> gp_directions;  // one per family, as configured
};

namespace detail {

/// Planar rectangle origin + a*u + b*v, a, b in [0, 1].
struct Face {
  Vec3 origin;
  Vec3 u;
  Vec3 v;

  Vec3 normal() const { return u.cross(v).normalized(); }
  double area() const { return u.cross(v).norm(); }
};

inline constexpr double kOrbitRadius = 4.0;
inline constexpr double kBoxHalf = 1.5;
inline constexpr double kCorridorHalfWidth = 1.5;
inline constexpr double kCorridorHalfHeight = 1.2;

/// Camera orientation looking from `c` at `target`, image y toward world +y.
inline Mat3 look_at(const Vec3& c, const Vec3& target) {
  const Vec3 z = (target - c).normalized();
  const Vec3 x = Vec3::UnitY().cross(z).normalized();
  Mat3 r;
  r.col(0) = x;
  r.col(1) = z.cross(x);
  r.col(2) = z;
  return r;
}

/// Camera poses in the scene frame (before re-anchoring at the first pose).
inline std::vector<Pose> scene_trajectory(const ScenarioConfig& cfg) {
  const int n = cfg.trajectory.n_keyframes;
  const double s = cfg.trajectory.spacing;
  std::vector<Pose> out;
  out.reserve(static_cast<std::size_t>(n));
  switch (cfg.trajectory.type) {
    case TrajectoryType::kCorridor: {
      Vec3 c = Vec3::Zero();
      for (int k = 0; k < n; ++k) {
        const double yaw = 0.05 * std::sin(0.3 * k);
        const double pitch = 0.02 * std::sin(0.2 * k);
        const Mat3 r = so3_exp<double>(Vec3(0, yaw, 0)) * so3_exp<double>(Vec3(pitch, 0, 0));
        out.push_back(Pose::from_camera_center(r, c));
        const Vec3 heading = Vec3(0.15 * std::sin(0.35 * k), 0.05 * std::sin(0.5 * k), 1.0).normalized();
        c += s * heading;
      }
      break;
    }
    case TrajectoryType::kOrbit: {
      const double step = 2.0 * std::asin(std::min(1.0, s / (2.0 * kOrbitRadius)));
      for (int k = 0; k < n; ++k) {
        const double th = step * k;
        const Vec3 c(kOrbitRadius * std::sin(th), 0.0, -kOrbitRadius * std::cos(th));
        out.push_back(Pose::from_camera_center(look_at(c, Vec3::Zero()), c));
      }
      break;
    }
    case TrajectoryType::kFigure8: {
      const double a = 1.5, b = 0.8;
      const double dt = s / std::hypot(a, b);  // speed never exceeds hypot(a, b)
      for (int k = 0; k < n; ++k) {
        const double t = dt * k;
        const Vec3 c(a * std::sin(t), b * std::sin(t) * std::cos(t), -kOrbitRadius);
        out.push_back(Pose::from_camera_center(look_at(c, Vec3::Zero()), c));
      }
      break;
    }
  }
  return out;
}

/// Surfaces that carry landmarks, in the scene frame.
inline std::vector<Face> scene_faces(const ScenarioConfig& cfg) {
  std::vector<Face> f;
  if (cfg.trajectory.type == TrajectoryType::kCorridor) {
    const double w = kCorridorHalfWidth, h = kCorridorHalfHeight;
    const double z0 = -2.0, z1 = cfg.trajectory.spacing * (cfg.trajectory.n_keyframes - 1) + 5.0;
    const Vec3 along(0, 0, z1 - z0);
    f.push_back({Vec3(-w, -h, z0), Vec3(0, 2 * h, 0), along});   // left wall
    f.push_back({Vec3(w, -h, z0), along, Vec3(0, 2 * h, 0)});    // right wall
    f.push_back({Vec3(-w, -h, z0), along, Vec3(2 * w, 0, 0)});   // ceiling (image up)
    f.push_back({Vec3(-w, h, z0), Vec3(2 * w, 0, 0), along});    // floor
    f.push_back({Vec3(-w, -h, z1), Vec3(2 * w, 0, 0), Vec3(0, 2 * h, 0)});  // end wall
  } else {
    const double b = kBoxHalf;
    for (int axis = 0; axis < 3; ++axis) {
      const Vec3 e0 = Vec3::Unit((axis + 1) % 3) * 2 * b;
      const Vec3 e1 = Vec3::Unit((axis + 2) % 3) * 2 * b;
      for (double side : {-b, b}) {
        Vec3 o = Vec3::Constant(-b);
        o(axis) = side;
        f.push_back({o, e0, e1});
      }
    }
  }
  return f;
}

inline std::size_t pick_weighted(std::mt19937_64& rng, const std::vector<double>& w) {
  std::discrete_distribution<std::size_t> d(w.begin(), w.end());
  return d(rng);
}

}  // namespace detail

/// Maps scene coordinates into the world frame, which is the first camera's frame.
inline Pose scene_to_world(const ScenarioConfig& cfg) {
  return detail::scene_trajectory(cfg).front();
}

inline std::vector<Pose> generate_trajectory(const ScenarioConfig& cfg) {
  cfg.validate();
  const auto scene = detail::scene_trajectory(cfg);
  const Pose world_to_scene = scene.front().inverse();
  std::vector<Pose> out;
  out.reserve(scene.size());
  for (const auto& p : scene) out.push_back(p * world_to_scene);
  out.front() = Pose::identity();
  return out;
}

inline World generate_world(const ScenarioConfig& cfg) {
  cfg.validate();
  auto rng = derived_rng(cfg.seed, kStreamWorld);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const auto faces = detail::scene_faces(cfg);
  const Pose to_world = scene_to_world(cfg);

  World w;
  std::vector<double> area;
  for (const auto& f : faces) area.push_back(f.area());
  for (int i = 0; i < cfg.n_points; ++i) {
    const auto& f = faces[detail::pick_weighted(rng, area)];
    const double a = unit(rng), b = unit(rng);
    w.points.push_back(to_world.transform(Vec3(f.origin + a * f.u + b * f.v)));
  }

  int id = 0;
  for (std::size_t fam = 0; fam < cfg.families.size(); ++fam) {
    const Vec3 d_scene = to_world.rotation.transpose() * cfg.families[fam].direction;
    w.gp_directions.push_back(cfg.families[fam].direction);
    std::vector<double> weight;
    for (const auto& f : faces) weight.push_back(std::abs(f.normal().dot(d_scene)) < 0.5 ? f.area() : 0.0);
    if (std::all_of(weight.begin(), weight.end(), [](double x) { return x == 0.0; })) weight = area;
    for (int i = 0; i < cfg.families[fam].count; ++i) {
      const auto& f = faces[detail::pick_weighted(rng, weight)];
      const Vec3 anchor = f.origin + (0.1 + 0.8 * unit(rng)) * f.u + (0.1 + 0.8 * unit(rng)) * f.v;
      const double half = 0.5 * (1.0 + 1.5 * unit(rng));
      WorldLine l;
      l.id = id++;
      l.family_id = static_cast<int>(fam);
      l.p_start = to_world.transform(Vec3(anchor - half * d_scene));
      l.p_end = l.p_start + 2.0 * half * cfg.families[fam].direction;
      w.lines.push_back(l);
    }
  }
  return w;
}

struct PointObservation {
  int landmark_id = 0;
  Vec2 px = Vec2::Zero();
};

struct SegmentTruth {
  int segment_id = 0;
  int line_id = -1;  // -1 for outliers
  int family_id = -1;
  bool outlier = false;
};

struct FrameObservations {
  int frame_id = 0;
  double timestamp = 0.0;
  std::vector<PointObservation> points;
  std::vector<Segment2D> segments;   // detections; track_id unset
  std::vector<Segment2D> predicted;  // flow from frame_id - 1; track_id = source segment id there
  std::vector<std::string> warnings;
};

/// Ground-truth channel; only evaluation reads it.
struct FrameTruth {
  int frame_id = 0;
  std::vector<SegmentTruth> segments;
};

struct Measurements {
  std::vector<FrameObservations> frames;
  std::vector<FrameTruth> truth;
};

inline constexpr double kNearClip = 0.1;
inline constexpr int kMinPointsPerFrame = 8;
inline constexpr double kFrameInterval = 0.1;  // seconds
inline constexpr double kMinOutlierLength = 20.0;

/// Liang-Barsky clip of a 2D segment to [0,w]x[0,h].
inline std::optional<std::pair<Vec2, Vec2>> clip_to_image(const Vec2& a, const Vec2& b, double w, double h) {
  double t0 = 0.0, t1 = 1.0;
  const Vec2 d = b - a;
  const double p[4] = {-d.x(), d.x(), -d.y(), d.y()};
  const double q[4] = {a.x(), w - a.x(), a.y(), h - a.y()};
  for (int i = 0; i < 4; ++i) {
    if (p[i] == 0.0) {
      if (q[i] < 0.0) return std::nullopt;
      continue;
    }
    const double r = q[i] / p[i];
    if (p[i] < 0.0) {
      t0 = std::max(t0, r);
    } else {
      t1 = std::min(t1, r);
    }
    if (t0 > t1) return std::nullopt;
  }
  return std::make_pair(Vec2(a + t0 * d), Vec2(a + t1 * d));
}

namespace detail {

inline bool in_image(const Vec2& px, const ScenarioConfig& cfg) {
  return px.x() >= 0 && px.x() <= cfg.width && px.y() >= 0 && px.y() <= cfg.height;
}

inline std::optional<Vec2> visible_point(const Vec3& p_w, const Pose& pose, const ScenarioConfig& cfg) {
  const Vec3 pc = pose.transform(p_w);
  if (pc.z() < kNearClip) return std::nullopt;
  if (cfg.visibility.max_range > 0 && pc.norm() > cfg.visibility.max_range) return std::nullopt;
  const auto px = project_camera_point<double>(pc, cfg.camera);
  if (!px || !in_image(*px, cfg)) return std::nullopt;
  return px;
}

/// Image segment of a world segment: near-plane clip, projection, image clip.
inline std::optional<std::pair<Vec2, Vec2>> visible_segment(const WorldLine& l, const Pose& pose,
                                                            const ScenarioConfig& cfg) {
  Vec3 a = pose.transform(l.p_start), b = pose.transform(l.p_end);
  if (cfg.visibility.max_range > 0 && (0.5 * (a + b)).norm() > cfg.visibility.max_range) return std::nullopt;
  if (a.z() < kNearClip && b.z() < kNearClip) return std::nullopt;
  if (a.z() < kNearClip) a = a + (kNearClip - a.z()) / (b.z() - a.z()) * (b - a);
  if (b.z() < kNearClip) b = b + (kNearClip - b.z()) / (a.z() - b.z()) * (a - b);
  const Vec2 pa = *project_camera_point<double>(a, cfg.camera);
  const Vec2 pb = *project_camera_point<double>(b, cfg.camera);
  auto clipped = clip_to_image(pa, pb, cfg.width, cfg.height);
  if (!clipped || (clipped->second - clipped->first).norm() < 1.0) return std::nullopt;
  return clipped;
}

/// Landmarks visible in frame f when partitioning is active: those whose
/// home frame (median of the frames that see them) lies within the window.
inline std::vector<std::vector<bool>> apply_partition(const std::vector<std::vector<bool>>& vis, int window) {
  if (window < 0) return vis;
  auto out = vis;
  const std::size_t n_frames = vis.size();
  const std::size_t n_land = n_frames ? vis.front().size() : 0;
  for (std::size_t j = 0; j < n_land; ++j) {
    std::vector<int> seen;
    for (std::size_t f = 0; f < n_frames; ++f) {
      if (vis[f][j]) seen.push_back(static_cast<int>(f));
    }
    if (seen.empty()) continue;
    const int home = seen[(seen.size() - 1) / 2];
    for (std::size_t f = 0; f < n_frames; ++f) {
      out[f][j] = vis[f][j] && std::abs(static_cast<int>(f) - home) <= window;
    }
  }
  return out;
}

}  // namespace detail

inline Measurements render_measurements(const World& world, const std::vector<Pose>& poses,
                                        const ScenarioConfig& cfg) {
  cfg.validate();
  const std::size_t n_frames = poses.size();
  std::vector<std::vector<bool>> point_vis(n_frames, std::vector<bool>(world.points.size()));
  std::vector<std::vector<bool>> line_vis(n_frames, std::vector<bool>(world.lines.size()));
  for (std::size_t f = 0; f < n_frames; ++f) {
    for (std::size_t j = 0; j < world.points.size(); ++j) {
      point_vis[f][j] = detail::visible_point(world.points[j], poses[f], cfg).has_value();
    }
    for (std::size_t j = 0; j < world.lines.size(); ++j) {
      line_vis[f][j] = detail::visible_segment(world.lines[j], poses[f], cfg).has_value();
    }
  }
  point_vis = detail::apply_partition(point_vis, cfg.visibility.partition_window);
  line_vis = detail::apply_partition(line_vis, cfg.visibility.partition_window);

  Measurements m;
  for (std::size_t f = 0; f < n_frames; ++f) {
    auto rng = derived_rng(cfg.seed, kStreamRender, static_cast<std::uint32_t>(f));
    std::normal_distribution<double> gauss(0.0, 1.0);
    FrameObservations obs;
    obs.frame_id = static_cast<int>(f);
    obs.timestamp = kFrameInterval * static_cast<double>(f);
    FrameTruth truth;
    truth.frame_id = obs.frame_id;

    for (std::size_t j = 0; j < world.points.size(); ++j) {
      if (!point_vis[f][j]) continue;
      const Vec2 px = *detail::visible_point(world.points[j], poses[f], cfg);
      obs.points.push_back({static_cast<int>(j), px + cfg.noise.point_px * Vec2(gauss(rng), gauss(rng))});
    }
    if (static_cast<int>(obs.points.size()) < kMinPointsPerFrame) {
      obs.warnings.push_back("empty frame: " + std::to_string(obs.points.size()) + " points visible");
    }

    struct Candidate {
      int line_id;
      Vec2 a, b;
    };
    std::vector<Candidate> cand;
    for (std::size_t j = 0; j < world.lines.size(); ++j) {
      if (!line_vis[f][j]) continue;
      const auto seg = *detail::visible_segment(world.lines[j], poses[f], cfg);
      cand.push_back({static_cast<int>(j), seg.first, seg.second});
    }
    std::stable_sort(cand.begin(), cand.end(), [](const Candidate& x, const Candidate& y) {
      return (x.b - x.a).norm() > (y.b - y.a).norm();
    });
    if (static_cast<int>(cand.size()) > cfg.n_l) cand.resize(static_cast<std::size_t>(cfg.n_l));
    std::sort(cand.begin(), cand.end(), [](const Candidate& x, const Candidate& y) { return x.line_id < y.line_id; });

    const std::size_t n_seg = cand.size();
    const auto n_out = static_cast<std::size_t>(std::llround(cfg.outlier_fraction * static_cast<double>(n_seg)));
    std::vector<std::size_t> order(n_seg);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<bool> is_outlier(n_seg, false);
    for (std::size_t i = 0; i < n_out; ++i) is_outlier[order[i]] = true;

    std::uniform_real_distribution<double> ux(0.0, cfg.width), uy(0.0, cfg.height);
    for (std::size_t i = 0; i < n_seg; ++i) {
      Segment2D s;
      s.id = static_cast<int>(i);
      SegmentTruth t;
      t.segment_id = s.id;
      if (is_outlier[i]) {
        do {
          s.p_start = Vec2(ux(rng), uy(rng));
          s.p_end = Vec2(ux(rng), uy(rng));
        } while (s.length() < kMinOutlierLength);
        t.outlier = true;
      } else {
        s.p_start = cand[i].a + cfg.noise.line_px * Vec2(gauss(rng), gauss(rng));
        s.p_end = cand[i].b + cfg.noise.line_px * Vec2(gauss(rng), gauss(rng));
        t.line_id = cand[i].line_id;
        t.family_id = world.lines[static_cast<std::size_t>(cand[i].line_id)].family_id;
      }
      obs.segments.push_back(s);
      truth.segments.push_back(t);
    }
    m.frames.push_back(std::move(obs));
    m.truth.push_back(std::move(truth));
  }

  // Flow predictions: previous observations carried along their true 3D line.
  for (std::size_t f = 1; f < n_frames; ++f) {
    auto rng = derived_rng(cfg.seed, kStreamFlow, static_cast<std::uint32_t>(f));
    std::normal_distribution<double> gauss(0.0, 1.0);
    const auto& prev = m.frames[f - 1];
    const auto& prev_truth = m.truth[f - 1];
    int next_id = 0;
    for (std::size_t i = 0; i < prev.segments.size(); ++i) {
      const SegmentTruth& t = prev_truth.segments[i];
      if (t.outlier) continue;  // flow has no scene structure to follow
      const PluckerLine line = world.lines[static_cast<std::size_t>(t.line_id)].plucker();
      const Segment2D& s = prev.segments[i];
      const auto a3 = closest_point_on_line_to_ray(line, s.p_start, poses[f - 1], cfg.camera);
      const auto b3 = closest_point_on_line_to_ray(line, s.p_end, poses[f - 1], cfg.camera);
      if (!a3 || !b3) continue;
      const auto a = project_camera_point<double>(poses[f].transform(*a3), cfg.camera);
      const auto b = project_camera_point<double>(poses[f].transform(*b3), cfg.camera);
      if (!a || !b) continue;
      Segment2D p;
      p.id = next_id++;
      p.track_id = s.id;
      p.p_start = *a + cfg.noise.flow_px * Vec2(gauss(rng), gauss(rng));
      p.p_end = *b + cfg.noise.flow_px * Vec2(gauss(rng), gauss(rng));
      m.frames[f].predicted.push_back(p);
    }
  }
  return m;
}

}  // namespace gpslam
