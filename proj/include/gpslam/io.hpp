#pragma once

// JSON scenario configs, JSON-lines observation dumps, metrics and ablation
// reports. Unknown config keys are rejected so typos do not silently fall
// back to defaults.

#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>
#include <string>

#include <json.hpp>

#include "gpslam/pipeline.hpp"

namespace gpslam {

using Json = nlohmann::ordered_json;

namespace detail {

/// Reads optional fields from one JSON object and reports leftovers.
class ObjectReader {
 public:
  ObjectReader(const Json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j.is_object()) fail("expected an object");
  }

  template <class T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const nlohmann::json::exception& e) {
      fail(std::string("field '") + key + "': " + e.what());
    }
  }

  const Json* child(const char* key) {
    seen_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }

  void finish() const {
    for (const auto& [k, v] : j_.items()) {
      if (!seen_.count(k)) fail("unknown field '" + k + "'");
    }
  }

  [[noreturn]] void fail(const std::string& msg) const {
    throw Error(ErrorCode::kParseError, where_ + ": " + msg);
  }

 private:
  const Json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

inline Vec3 vec3_from_json(const Json& j, const std::string& where) {
  if (!j.is_array() || j.size() != 3) throw Error(ErrorCode::kParseError, where + ": expected [x, y, z]");
  try {
    return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
  } catch (const nlohmann::json::exception&) {
    throw Error(ErrorCode::kParseError, where + ": expected numbers");
  }
}

inline Json to_json(const Vec3& v) { return Json::array({v.x(), v.y(), v.z()}); }
inline Json to_json(const Vec2& v) { return Json::array({v.x(), v.y()}); }

}  // namespace detail

inline Scenario scenario_from_json(const Json& j) {
  Scenario sc;
  ScenarioConfig& c = sc.scene;
  detail::ObjectReader r(j, "config");
  r.get("name", c.name);
  r.get("seed", c.seed);
  r.get("n_points", c.n_points);
  if (const Json* fam = r.child("families")) {
    if (!fam->is_array()) r.fail("families must be an array");
    c.families.clear();
    for (std::size_t i = 0; i < fam->size(); ++i) {
      const std::string where = "families[" + std::to_string(i) + "]";
      detail::ObjectReader fr((*fam)[i], where);
      DirectionFamily f;
      if (const Json* d = fr.child("direction")) {
        const Vec3 v = detail::vec3_from_json(*d, where + ".direction");
        if (v.norm() < 1e-12) fr.fail("direction must be non-zero");
        f.direction = v.normalized();
      } else {
        fr.fail("missing direction");
      }
      fr.get("count", f.count);
      fr.finish();
      c.families.push_back(f);
    }
  }
  if (const Json* t = r.child("trajectory")) {
    detail::ObjectReader tr(*t, "trajectory");
    std::string type = to_string(c.trajectory.type);
    tr.get("type", type);
    try {
      c.trajectory.type = trajectory_type_from_string(type);
    } catch (const Error&) {
      tr.fail("unknown type '" + type + "'");
    }
    tr.get("n_keyframes", c.trajectory.n_keyframes);
    tr.get("spacing", c.trajectory.spacing);
    tr.finish();
  }
  if (const Json* cam = r.child("camera")) {
    detail::ObjectReader cr(*cam, "camera");
    cr.get("fx", c.camera.fx);
    cr.get("fy", c.camera.fy);
    cr.get("cx", c.camera.cx);
    cr.get("cy", c.camera.cy);
    cr.get("width", c.width);
    cr.get("height", c.height);
    cr.finish();
  }
  if (const Json* n = r.child("noise")) {
    detail::ObjectReader nr(*n, "noise");
    nr.get("point_px", c.noise.point_px);
    nr.get("line_px", c.noise.line_px);
    nr.get("flow_px", c.noise.flow_px);
    nr.finish();
  }
  r.get("outlier_fraction", c.outlier_fraction);
  r.get("n_l", c.n_l);
  if (const Json* v = r.child("visibility")) {
    detail::ObjectReader vr(*v, "visibility");
    vr.get("max_range", c.visibility.max_range);
    vr.get("partition_window", c.visibility.partition_window);
    vr.finish();
  }
  if (const Json* i = r.child("init")) {
    detail::ObjectReader ir(*i, "init");
    ir.get("rot_deg", c.init.rot_deg);
    ir.get("trans_m", c.init.trans_m);
    ir.finish();
  }
  if (const Json* p = r.child("pipeline")) {
    PipelineOptions& o = sc.pipeline;
    detail::ObjectReader pr(*p, "pipeline");
    if (const Json* g = pr.child("gates")) {
      detail::ObjectReader gr(*g, "pipeline.gates");
      gr.get("min_length_px", o.gates.min_length_px);
      gr.get("midpoint_px", o.gates.midpoint_px);
      gr.get("perpendicular_px", o.gates.perpendicular_px);
      gr.get("sensitivity_deg", o.gates.sensitivity_deg);
      gr.get("overlap_ratio", o.gates.overlap_ratio);
      gr.finish();
    }
    if (const Json* k = pr.child("keyframes")) {
      detail::ObjectReader kr(*k, "pipeline.keyframes");
      kr.get("min_track_age", o.keyframes.min_track_age);
      kr.get("min_persistent_tracks", o.keyframes.min_persistent_tracks);
      kr.get("growth_ratio", o.keyframes.growth_ratio);
      kr.finish();
    }
    if (const Json* m = pr.child("matching")) {
      detail::ObjectReader mr(*m, "pipeline.matching");
      mr.get("max_midpoint_px", o.matching.max_midpoint_px);
      mr.get("max_angle_deg", o.matching.max_angle_deg);
      mr.get("angle_weight", o.matching.angle_weight);
      mr.get("overlap_weight", o.matching.overlap_weight);
      mr.get("predicted_confidence", o.matching.predicted_confidence);
      mr.finish();
    }
    if (const Json* v = pr.child("vp")) {
      detail::ObjectReader vr(*v, "pipeline.vp");
      vr.get("num_hypotheses", o.vp.num_hypotheses);
      vr.get("consensus_threshold_deg", o.vp.consensus_threshold_deg);
      vr.get("min_cluster_size", o.vp.min_cluster_size);
      vr.finish();
    }
    pr.get("fuse_tol_deg", o.fuse_tol_deg);
    pr.get("min_gp_frames", o.min_gp_frames);
    pr.get("min_line_parallax_deg", o.min_line_parallax_deg);
    pr.get("min_point_parallax_deg", o.min_point_parallax_deg);
    pr.get("min_depth", o.min_depth);
    pr.get("max_iterations", o.max_iterations);
    pr.get("rel_tol", o.rel_tol);
    pr.get("min_line_observations", o.min_line_observations);
    pr.finish();
  }
  r.finish();
  try {
    c.validate();
  } catch (const Error& e) {
    throw Error(ErrorCode::kParseError, std::string("config: ") + e.what());
  }
  return sc;
}

inline Scenario load_scenario(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw Error(ErrorCode::kInvalidArgument, "cannot read " + path);
  Json j;
  try {
    j = Json::parse(is);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorCode::kParseError, path + ": " + e.what());
  }
  return scenario_from_json(j);
}

inline Json to_json(const ScenarioConfig& c) {
  Json fam = Json::array();
  for (const auto& f : c.families) fam.push_back({{"direction", detail::to_json(f.direction)}, {"count", f.count}});
  return {{"name", c.name},
          {"seed", c.seed},
          {"n_points", c.n_points},
          {"families", fam},
          {"trajectory",
           {{"type", to_string(c.trajectory.type)},
            {"n_keyframes", c.trajectory.n_keyframes},
            {"spacing", c.trajectory.spacing}}},
          {"camera",
           {{"fx", c.camera.fx},
            {"fy", c.camera.fy},
            {"cx", c.camera.cx},
            {"cy", c.camera.cy},
            {"width", c.width},
            {"height", c.height}}},
          {"noise", {{"point_px", c.noise.point_px}, {"line_px", c.noise.line_px}, {"flow_px", c.noise.flow_px}}},
          {"outlier_fraction", c.outlier_fraction},
          {"n_l", c.n_l},
          {"visibility",
           {{"max_range", c.visibility.max_range}, {"partition_window", c.visibility.partition_window}}},
          {"init", {{"rot_deg", c.init.rot_deg}, {"trans_m", c.init.trans_m}}}};
}

inline Json to_json(const Segment2D& s) {
  Json j{{"id", s.id}, {"p_start", detail::to_json(s.p_start)}, {"p_end", detail::to_json(s.p_end)}};
  if (s.track_id) j["track_id"] = *s.track_id;
  return j;
}

/// One observation record; ground truth is written separately.
inline Json to_json(const FrameObservations& f) {
  Json pts = Json::array();
  for (const auto& o : f.points) pts.push_back({{"landmark_id", o.landmark_id}, {"px", detail::to_json(o.px)}});
  Json segs = Json::array(), pred = Json::array();
  for (const auto& s : f.segments) segs.push_back(to_json(s));
  for (const auto& s : f.predicted) pred.push_back(to_json(s));
  return {{"frame_id", f.frame_id}, {"timestamp", f.timestamp}, {"points", pts},
          {"segments", segs},       {"predicted", pred},         {"warnings", f.warnings}};
}

inline Json to_json(const FrameTruth& t) {
  Json segs = Json::array();
  for (const auto& s : t.segments) {
    segs.push_back({{"segment_id", s.segment_id},
                    {"line_id", s.line_id},
                    {"family_id", s.family_id},
                    {"outlier", s.outlier}});
  }
  return {{"frame_id", t.frame_id}, {"segments", segs}};
}

inline Json to_json(const World& w) {
  Json pts = Json::array(), lines = Json::array(), gps = Json::array();
  for (const auto& p : w.points) pts.push_back(detail::to_json(p));
  for (const auto& l : w.lines) {
    lines.push_back({{"id", l.id},
                     {"family_id", l.family_id},
                     {"p_start", detail::to_json(l.p_start)},
                     {"p_end", detail::to_json(l.p_end)}});
  }
  for (const auto& d : w.gp_directions) gps.push_back(detail::to_json(d));
  return {{"points", pts}, {"lines", lines}, {"gp_directions", gps}};
}

inline Json to_json(const CostBreakdown& c) {
  return {{"point", c.point}, {"line", c.line}, {"vd_align", c.vd_align}, {"struct", c.structure},
          {"total", c.total()}};
}

inline Json to_json(const Metrics& m) {
  return {{"scenario", m.scenario},
          {"mode", to_string(m.mode)},
          {"seed", m.seed},
          {"ate_rmse_m", m.ate_rmse_m},
          {"initial_ate_m", m.initial_ate_m},
          {"iters", m.iters},
          {"converged", m.converged},
          {"n_gps", m.n_gps},
          {"cost_breakdown", to_json(m.cost_breakdown)}};
}

inline Json to_json(const AblationReport& r) {
  Json rows = Json::array();
  for (const auto& row : r.rows) {
    Json j{{"seed", row.seed}, {"ok", row.ok}};
    if (row.ok) {
      j["ate_lp"] = row.ate_lp;
      j["ate_gp"] = row.ate_gp;
    } else {
      j["error"] = row.error;
    }
    rows.push_back(j);
  }
  return {{"scenario", r.scenario},   {"seeds", rows},           {"completed", r.completed()},
          {"mean_ate_lp", r.mean_lp}, {"mean_ate_gp", r.mean_gp}, {"reduction_pct", r.reduction_pct}};
}

inline std::string format_double(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

inline void write_ablation_csv(std::ostream& os, const AblationReport& r) {
  os << "seed,ok,ate_lp,ate_gp\n";
  for (const auto& row : r.rows) {
    os << row.seed << ',' << (row.ok ? 1 : 0) << ',' << (row.ok ? format_double(row.ate_lp) : "") << ','
       << (row.ok ? format_double(row.ate_gp) : "") << '\n';
  }
  os << "mean,," << format_double(r.mean_lp) << ',' << format_double(r.mean_gp) << '\n';
}

inline void write_metrics_csv(std::ostream& os, const Metrics& m) {
  os << "scenario,mode,seed,ate_rmse_m,initial_ate_m,iters,converged,n_gps,cost_point,cost_line,cost_vd_align,"
        "cost_struct\n";
  os << m.scenario << ',' << to_string(m.mode) << ',' << m.seed << ',' << format_double(m.ate_rmse_m) << ','
     << format_double(m.initial_ate_m) << ',' << m.iters << ',' << (m.converged ? 1 : 0) << ',' << m.n_gps << ','
     << format_double(m.cost_breakdown.point) << ',' << format_double(m.cost_breakdown.line) << ','
     << format_double(m.cost_breakdown.vd_align) << ',' << format_double(m.cost_breakdown.structure) << '\n';
}

}  // namespace gpslam
