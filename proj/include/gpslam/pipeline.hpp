#pragma once

// End-to-end run on a simulated scenario: perturbed initialization, point
// triangulation, line tracking, two-stage optimization with mapline gating,
// and in gp mode vanishing-point detection and Global Primitive factors.

#include <functional>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "gpslam/evaluation.hpp"
#include "gpslam/global_primitives.hpp"
#include "gpslam/line_association.hpp"
#include "gpslam/optimizer.hpp"
#include "gpslam/scene_sim.hpp"
#include "gpslam/vanishing_points.hpp"

namespace gpslam {

enum class Mode { kLp, kGp };

inline const char* to_string(Mode m) { return m == Mode::kLp ? "lp" : "gp"; }

inline Mode mode_from_string(const std::string& s) {
  if (s == "lp") return Mode::kLp;
  if (s == "gp") return Mode::kGp;
  throw Error(ErrorCode::kInvalidArgument, "unknown mode '" + s + "'");
}

struct PipelineOptions {
  GateThresholds gates;
  KeyframePolicy keyframes;
  MatchParams matching;
  VpDetectionParams vp;
  double fuse_tol_deg = kDefaultFuseTolDeg;
  int min_gp_frames = 2;  // GPs seen in fewer frames add no factors
  double min_line_parallax_deg = 3.0;  // plane angle required to map a line track
  int min_line_observations = 3;
  double min_point_parallax_deg = 1.0;  // ray angle required to map a point
  double min_depth = kNearClip;         // landmarks closer to any observing camera are dropped
  int max_iterations = 100;
  double rel_tol = 1e-6;  // relative cost decrease that ends an optimization stage
};

struct Scenario {
  ScenarioConfig scene;
  PipelineOptions pipeline;
};

struct Metrics {
  std::string scenario;
  Mode mode = Mode::kLp;
  std::uint64_t seed = 0;
  double ate_rmse_m = 0.0;
  double initial_ate_m = 0.0;
  int iters = 0;
  bool converged = false;
  int n_gps = 0;
  CostBreakdown cost_breakdown;
};

/// Landmarks and line tracks assembled from the measurements.
struct MapState {
  std::map<int, Vec3> points;
  std::map<int, std::vector<PointObservation>> point_obs;  // by frame
  std::map<int, PluckerLine> lines;                         // by track id
  std::map<int, LineTrack> tracks;
  std::vector<int> keyframe_events;  // frames at which pending tracks are mapped
};

struct PipelineResult {
  Trajectory ground_truth;
  Trajectory initial;
  Trajectory estimated;
  OptimizationReport first_stage;  // before mapline verification
  OptimizationReport report;       // final stage
  Metrics metrics;
  std::vector<GlobalPrimitive> gps;  // registry contents (gp mode)
  GpAssociationGraph gp_graph;
  std::vector<GateAuditRecord> gate_audit;
  std::vector<std::string> warnings;
  MapState map;  // after verification
  int n_points = 0;
  int n_lines = 0;
};

namespace detail {

/// Rethrows any failure inside `fn` as a stage-labeled error.
template <class Fn>
auto stage(const char* name, Fn&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const Error& e) {
    if (e.code() == ErrorCode::kStageFailure) throw;
    throw Error(ErrorCode::kStageFailure, std::string(name) + ": " + e.what());
  }
}

inline std::vector<Pose> perturb_poses(const std::vector<Pose>& truth, const ScenarioConfig& cfg) {
  auto rng = derived_rng(cfg.seed, kStreamInit);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<Pose> out{truth.front()};
  for (std::size_t k = 1; k < truth.size(); ++k) {
    const Vec3 w = cfg.init.rot_deg * kDegToRad * Vec3(gauss(rng), gauss(rng), gauss(rng));
    const Vec3 dc = cfg.init.trans_m * Vec3(gauss(rng), gauss(rng), gauss(rng));
    out.push_back(Pose::from_camera_center(so3_exp<double>(w) * truth[k].R_wc(), truth[k].center() + dc));
  }
  return out;
}

inline double plane_angle_deg(const Segment2D& a, const Pose& pa, const Segment2D& b, const Pose& pb,
                              const CameraIntrinsics& k) {
  const Vec3 na = back_project_segment(a, pa, k).head<3>();
  const Vec3 nb = back_project_segment(b, pb, k).head<3>();
  return std::atan2(na.cross(nb).norm(), std::abs(na.dot(nb))) * kRadToDeg;
}

struct Tracker {
  std::map<int, LineTrack> tracks;
  std::map<int, int> track_of_prev_detection;  // detection id in the previous frame -> track id
  int next_track = 0;
  int last_keyframe_lines = 0;
};

}  // namespace detail


inline MapState build_map(const Measurements& meas, const std::vector<Pose>& init, const ScenarioConfig& cfg,
                          const PipelineOptions& opt) {
  MapState map;
  const CameraIntrinsics& k = cfg.camera;

  // Points: first and last sightings.
  std::map<int, std::vector<std::pair<int, Vec2>>> sightings;
  for (const auto& f : meas.frames) {
    for (const auto& o : f.points) sightings[o.landmark_id].emplace_back(f.frame_id, o.px);
    map.point_obs[f.frame_id] = f.points;
  }
  for (const auto& [id, s] : sightings) {
    if (s.size() < 2) continue;
    const Pose& pa = init[static_cast<std::size_t>(s.front().first)];
    const Pose& pb = init[static_cast<std::size_t>(s.back().first)];
    const Vec3 ra = pa.R_wc() * back_project(s.front().second, k);
    const Vec3 rb = pb.R_wc() * back_project(s.back().second, k);
    if (std::atan2(ra.cross(rb).norm(), ra.dot(rb)) * kRadToDeg < opt.min_point_parallax_deg) continue;
    try {
      const Vec3 p = triangulate_point(s.front().second, s.back().second, pa, pb, k);
      const bool in_front = std::all_of(s.begin(), s.end(), [&](const auto& o) {
        return init[static_cast<std::size_t>(o.first)].transform(p).z() >= opt.min_depth;
      });
      if (in_front) map.points[id] = p;
    } catch (const Error&) {
    }
  }

  // Lines: flow-guided tracking. Keyframe insertions are recorded; lines are
  // triangulated later from the poses available at that point.
  detail::Tracker tr;
  for (const auto& f : meas.frames) {
    const auto detected = filter_short(f.segments, opt.gates.min_length_px);
    std::vector<Segment2D> predicted;
    for (const auto& p : f.predicted) {
      auto it = tr.track_of_prev_detection.find(p.track_id.value_or(-1));
      if (it == tr.track_of_prev_detection.end()) continue;
      Segment2D q = p;
      q.track_id = it->second;
      predicted.push_back(q);
    }
    const auto matches = match_predicted(predicted, detected, opt.matching);

    std::map<int, int> track_of_detection;
    std::set<int> used;
    for (const auto& m : matches) {
      if (!m.detection_id) continue;  // prediction without a detection: not a measurement
      used.insert(*m.detection_id);
      const Segment2D* det = nullptr;
      const Segment2D* pred = nullptr;
      for (const auto& d : detected) {
        if (d.id == *m.detection_id) det = &d;
      }
      for (const auto& p : predicted) {
        if (p.track_id == m.track_id) pred = &p;
      }
      Segment2D obs = *det;
      try {
        obs = merge_segments(*pred, *det, opt.matching.max_angle_deg);
      } catch (const Error&) {
      }
      obs.track_id = m.track_id;
      tr.tracks[m.track_id].add(f.frame_id, obs);
      track_of_detection[det->id] = m.track_id;
    }
    for (const auto& d : detected) {
      if (used.count(d.id)) continue;
      LineTrack t;
      t.track_id = tr.next_track++;
      Segment2D obs = d;
      obs.track_id = t.track_id;
      t.add(f.frame_id, obs);
      track_of_detection[d.id] = t.track_id;
      tr.tracks[t.track_id] = std::move(t);
    }
    tr.track_of_prev_detection = std::move(track_of_detection);

    std::vector<LineTrack> alive;
    for (const auto& [d, id] : tr.track_of_prev_detection) alive.push_back(tr.tracks.at(id));
    const bool last = f.frame_id == meas.frames.back().frame_id;
    if (keyframe_decision(alive, tr.last_keyframe_lines, opt.keyframes).insert || last) {
      tr.last_keyframe_lines = static_cast<int>(alive.size());
      map.keyframe_events.push_back(f.frame_id);
    }
  }
  map.tracks = std::move(tr.tracks);
  return map;
}

/// Maps every pending track at the first keyframe event where its
/// observations so far give enough parallax: first observation paired with
/// the one whose back-projected plane differs most. Observations that fail
/// mapline verification against the new line are removed, and lines left
/// with too few are not mapped.
inline void triangulate_lines(MapState& map, const std::vector<Pose>& poses, const ScenarioConfig& cfg,
                              const PipelineOptions& opt) {
  const CameraIntrinsics& k = cfg.camera;
  for (auto& [id, t] : map.tracks) {
    if (map.lines.count(id) || t.age() < opt.min_line_observations) continue;
    for (int event : map.keyframe_events) {
      const auto seen = std::count_if(t.observations.begin(), t.observations.end(),
                                      [&](const auto& o) { return o.first <= event; });
      if (seen < opt.min_line_observations) continue;
      const auto& [f0, s0] = t.observations.front();
      const Pose& p0 = poses[static_cast<std::size_t>(f0)];
      double best = -1.0;
      std::size_t best_i = 0;
      for (std::size_t i = 1; i < t.observations.size() && t.observations[i].first <= event; ++i) {
        const auto& [fi, si] = t.observations[i];
        const double a = detail::plane_angle_deg(s0, p0, si, poses[static_cast<std::size_t>(fi)], k);
        if (a > best) {
          best = a;
          best_i = i;
        }
      }
      if (best < opt.min_line_parallax_deg) continue;
      const auto& [fb, sb] = t.observations[best_i];
      PluckerLine line;
      try {
        line = triangulate_line(s0, sb, p0, poses[static_cast<std::size_t>(fb)], k).normalized();
      } catch (const Error&) {
        continue;
      }
      std::vector<std::pair<int, Segment2D>> kept;
      for (const auto& [frame, seg] : t.observations) {
        if (verify_mapline_observation(line, seg, frame, id, poses[static_cast<std::size_t>(frame)], k, opt.gates)) {
          kept.emplace_back(frame, seg);
        }
      }
      if (static_cast<int>(kept.size()) >= opt.min_line_observations) {
        t.observations = std::move(kept);
        map.lines[id] = line;
      }
      break;
    }
  }
}

namespace detail {

inline FactorGraph lp_graph(const MapState& map, const std::vector<Pose>& poses, const ScenarioConfig& cfg) {
  FactorGraph g;
  for (std::size_t i = 0; i < poses.size(); ++i) g.values.poses[static_cast<int>(i)] = poses[i];
  g.values.points = map.points;
  g.values.lines = map.lines;
  for (const auto& [frame, obs] : map.point_obs) {
    for (const auto& o : obs) {
      if (!map.points.count(o.landmark_id)) continue;
      PointFactor f;
      f.pose_key = frame;
      f.point_key = o.landmark_id;
      f.measurement = o.px;
      f.camera = cfg.camera;
      g.add(f);
    }
  }
  for (const auto& [id, line] : map.lines) {
    for (const auto& [frame, seg] : map.tracks.at(id).observations) {
      LineFactor f;
      f.pose_key = frame;
      f.line_key = id;
      f.measurement = seg;
      f.camera = cfg.camera;
      g.add(f);
    }
  }
  return g;
}

inline std::vector<Pose> poses_of(const Values& v) {
  std::vector<Pose> out;
  for (const auto& [k, p] : v.poses) out.push_back(p);
  return out;
}

}  // namespace detail

/// Runs one scenario in the given mode. Throws kStageFailure naming the stage.
inline constexpr int kMinResidualsPerPose = 6;

namespace detail {

/// Every free pose needs at least as many residual rows as it has DOF.
inline void require_constrained(const MapState& map, int n_frames) {
  std::vector<int> rows(static_cast<std::size_t>(n_frames), 0);
  for (const auto& [frame, obs] : map.point_obs) {
    for (const auto& o : obs) rows[static_cast<std::size_t>(frame)] += 2 * static_cast<int>(map.points.count(o.landmark_id));
  }
  for (const auto& [id, t] : map.tracks) {
    if (!map.lines.count(id)) continue;
    for (const auto& [frame, seg] : t.observations) rows[static_cast<std::size_t>(frame)] += 2;
  }
  for (int f = 1; f < n_frames; ++f) {
    if (rows[static_cast<std::size_t>(f)] < kMinResidualsPerPose) {
      throw Error(ErrorCode::kRankDeficient, "frame " + std::to_string(f) + " has " +
                                                 std::to_string(rows[static_cast<std::size_t>(f)]) + " residuals");
    }
  }
}

}  // namespace detail

inline PipelineResult run_pipeline(const Scenario& sc, Mode mode) {
  const ScenarioConfig& cfg = sc.scene;
  const PipelineOptions& opt = sc.pipeline;
  PipelineResult res;

  const auto [truth_poses, meas] = detail::stage("simulate", [&] {
    cfg.validate();
    const World world = generate_world(cfg);
    auto poses = generate_trajectory(cfg);
    auto m = render_measurements(world, poses, cfg);
    return std::make_pair(std::move(poses), std::move(m));
  });
  std::vector<double> stamps;
  for (const auto& f : meas.frames) {
    stamps.push_back(f.timestamp);
    for (const auto& w : f.warnings) res.warnings.push_back("frame " + std::to_string(f.frame_id) + ": " + w);
  }
  const std::vector<Pose> init = detail::perturb_poses(truth_poses, cfg);
  res.ground_truth = make_trajectory(stamps, truth_poses);
  res.initial = make_trajectory(stamps, init);

  MapState map = detail::stage("front-end", [&] { return build_map(meas, init, cfg, opt); });

  OptimizerOptions oo;
  oo.max_iterations = opt.max_iterations;
  oo.rel_tol = opt.rel_tol;
  oo.fixed.insert({VarType::kPose, 0});

  // Points-only refinement gives the poses lines are triangulated from.
  const OptimizationReport coarse = detail::stage("optimize-points", [&] {
    return optimize(detail::lp_graph(map, init, cfg), oo);
  });
  detail::stage("map-lines", [&] {
    for (auto& [id, p] : map.points) p = coarse.values.points.at(id);
    triangulate_lines(map, detail::poses_of(coarse.values), cfg, opt);
    return 0;
  });

  const OptimizationReport first = detail::stage("optimize", [&] {
    return optimize(detail::lp_graph(map, detail::poses_of(coarse.values), cfg), oo);
  });

  // Mapline verification against the first-stage estimate; failing
  // observations are removed, lines left with too few are dropped.
  detail::stage("verify", [&] {
    for (auto it = map.lines.begin(); it != map.lines.end();) {
      const int id = it->first;
      const PluckerLine& est = first.values.lines.at(id);
      LineTrack& t = map.tracks.at(id);
      std::vector<std::pair<int, Segment2D>> kept;
      for (const auto& [frame, seg] : t.observations) {
        if (verify_mapline_observation(est, seg, frame, id, first.values.poses.at(frame), cfg.camera, opt.gates,
                                       &res.gate_audit)) {
          kept.emplace_back(frame, seg);
        }
      }
      t.observations = std::move(kept);
      if (static_cast<int>(t.observations.size()) < opt.min_line_observations) {
        it = map.lines.erase(it);
      } else {
        it->second = est;
        ++it;
      }
    }
    for (auto it = map.points.begin(); it != map.points.end();) {
      const Vec3& p = first.values.points.at(it->first);
      bool in_front = true;
      for (const auto& [frame, obs] : map.point_obs) {
        for (const auto& o : obs) {
          if (o.landmark_id == it->first && first.values.poses.at(frame).transform(p).z() < opt.min_depth) {
            in_front = false;
          }
        }
      }
      if (in_front) {
        it->second = p;
        ++it;
      } else {
        it = map.points.erase(it);
      }
    }
    detail::require_constrained(map, static_cast<int>(meas.frames.size()));
    return 0;
  });

  res.first_stage = first;
  FactorGraph g = detail::lp_graph(map, detail::poses_of(first.values), cfg);

  if (mode == Mode::kGp) {
    detail::stage("global-primitives", [&] {
      GpRegistry reg;
      std::map<std::pair<int, int>, int> gp_of_segment;  // (frame, detection id) -> gp
      std::map<int, std::vector<Segment2D>> frame_segments;
      for (const auto& f : meas.frames) {
        auto segs = filter_short(f.segments, opt.gates.min_length_px);
        auto rng = derived_rng(cfg.seed, kStreamVp, static_cast<std::uint32_t>(f.frame_id));
        std::vector<VanishingPointEstimate> vps;
        try {
          vps = detect_vanishing_points(segs, opt.vp, rng());
        } catch (const Error& e) {
          if (e.code() != ErrorCode::kTooFewSegments) throw;
        }
        const Mat3 r_wc = first.values.poses.at(f.frame_id).R_wc();
        std::vector<LiftedDirection> lifted;
        for (const auto& vp : vps) {
          lifted.push_back({lift_vanishing_point(vp.vp_homogeneous, cfg.camera, r_wc), vp.member_segment_ids});
        }
        for (const auto& m : reg.associate_frame(f.frame_id, lifted, cfg.n_l, opt.fuse_tol_deg)) {
          for (int s : m.segment_ids) gp_of_segment[{f.frame_id, s}] = m.gp_id;
        }
        frame_segments[f.frame_id] = std::move(segs);
      }
      res.gps = reg.primitives();
      res.gp_graph = build_association_graph(res.gps);

      std::set<int> usable;
      for (const auto& gp : res.gps) {
        if (static_cast<int>(gp.frames().size()) >= opt.min_gp_frames) usable.insert(gp.id);
      }
      for (int id : usable) g.values.gps[id] = res.gps[static_cast<std::size_t>(id)].direction;

      // Segment-to-GP alignment, re-checked against the fused direction.
      for (const auto& [key, gp_id] : gp_of_segment) {
        if (!usable.count(gp_id)) continue;
        const auto& [frame, seg_id] = key;
        const auto& segs = frame_segments.at(frame);
        const auto it = std::find_if(segs.begin(), segs.end(), [&](const Segment2D& s) { return s.id == seg_id; });
        const Pose& pose = g.values.poses.at(frame);
        const Vec3 vp = cfg.camera.matrix() * (pose.rotation * g.values.gps.at(gp_id));
        double c = 90.0;
        try {
          c = consensus(*it, vp);
        } catch (const Error&) {
        }
        if (c >= opt.vp.consensus_threshold_deg) continue;
        VdAlignFactor f;
        f.pose_key = frame;
        f.gp_key = gp_id;
        f.measurement = *it;
        f.camera = cfg.camera;
        g.add(f);
      }

      // Line-to-GP parallelism by majority label of the line's observations.
      for (const auto& [id, line] : g.values.lines) {
        std::map<int, int> votes;
        for (const auto& [frame, seg] : map.tracks.at(id).observations) {
          if (auto it = gp_of_segment.find({frame, seg.id}); it != gp_of_segment.end()) ++votes[it->second];
        }
        int best = -1, best_n = 0;
        for (const auto& [gp_id, n] : votes) {
          if (n > best_n) {
            best = gp_id;
            best_n = n;
          }
        }
        if (best < 0 || !usable.count(best)) continue;
        const Vec3 d = line.unit_direction();
        const Vec3& gd = g.values.gps.at(best);
        if (!is_parallel(d, gd, opt.fuse_tol_deg)) continue;
        StructFactor f;
        f.line_key = id;
        f.gp_key = best;
        f.sign = d.dot(gd) < 0 ? -1.0 : 1.0;
        g.add(f);
      }
      res.metrics.n_gps = static_cast<int>(usable.size());
      return 0;
    });
  }

  res.report = detail::stage("optimize", [&] { return optimize(g, oo); });
  res.estimated = make_trajectory(stamps, detail::poses_of(res.report.values));
  res.map = std::move(map);
  res.n_points = static_cast<int>(g.values.points.size());
  res.n_lines = static_cast<int>(g.values.lines.size());

  Metrics& m = res.metrics;
  m.scenario = cfg.name;
  m.mode = mode;
  m.seed = cfg.seed;
  detail::stage("evaluate", [&] {
    m.ate_rmse_m = ate_rmse(res.estimated, res.ground_truth);
    m.initial_ate_m = ate_rmse(res.initial, res.ground_truth);
    return 0;
  });
  m.iters = coarse.iterations + first.iterations + res.report.iterations;
  m.converged = res.report.converged;
  m.cost_breakdown = res.report.final_breakdown;
  return res;
}

struct AblationRow {
  std::uint64_t seed = 0;
  bool ok = false;
  double ate_lp = 0.0;
  double ate_gp = 0.0;
  std::string error;
};

struct AblationReport {
  std::string scenario;
  std::vector<AblationRow> rows;
  double mean_lp = 0.0;
  double mean_gp = 0.0;
  double reduction_pct = 0.0;  // (1 - mean_gp / mean_lp) * 100

  int completed() const {
    return static_cast<int>(std::count_if(rows.begin(), rows.end(), [](const AblationRow& r) { return r.ok; }));
  }
};

inline constexpr double kMinAblationCompletion = 0.8;

/// Both modes on seeds base, base+1, ...; each seed shares world and noise
/// between modes. Failing seeds are recorded; fewer than 80% completing is fatal.
inline AblationReport run_ablation(const Scenario& sc, int n_seeds) {
  if (n_seeds < 2) throw Error(ErrorCode::kInvalidArgument, "ablation needs at least 2 seeds");
  AblationReport rep;
  rep.scenario = sc.scene.name;
  double sum_lp = 0.0, sum_gp = 0.0;
  for (int i = 0; i < n_seeds; ++i) {
    Scenario s = sc;
    s.scene.seed = sc.scene.seed + static_cast<std::uint64_t>(i);
    AblationRow row;
    row.seed = s.scene.seed;
    try {
      row.ate_lp = run_pipeline(s, Mode::kLp).metrics.ate_rmse_m;
      row.ate_gp = run_pipeline(s, Mode::kGp).metrics.ate_rmse_m;
      row.ok = true;
      sum_lp += row.ate_lp;
      sum_gp += row.ate_gp;
    } catch (const Error& e) {
      row.error = e.what();
    }
    rep.rows.push_back(row);
  }
  const int done = rep.completed();
  if (done < kMinAblationCompletion * n_seeds) {
    throw Error(ErrorCode::kStageFailure, "ablation: only " + std::to_string(done) + " of " +
                                              std::to_string(n_seeds) + " seeds completed");
  }
  rep.mean_lp = sum_lp / done;
  rep.mean_gp = sum_gp / done;
  rep.reduction_pct = rep.mean_lp > 0 ? (1.0 - rep.mean_gp / rep.mean_lp) * 100.0 : 0.0;
  return rep;
}

}  // namespace gpslam
