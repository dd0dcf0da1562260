#pragma once

// Line tracks: flow-prediction matching, fragment merging, mapline
// verification gates and the line-driven keyframe policy.

#include <algorithm>
#include <cstdio>
#include <map>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "gpslam/geometry.hpp"

namespace gpslam {

struct GateThresholds {
  double min_length_px = 15.0;          // tau_s
  double midpoint_px = 4.0;             // theta_thre (named "angular" upstream, it is a pixel distance)
  double perpendicular_px = 3.0;        // d_thre
  double sensitivity_deg = 30.0;        // alpha_thre
  double overlap_ratio = 0.3;           // r_thre

  void validate() const {
    if (min_length_px < 0 || midpoint_px <= 0 || perpendicular_px <= 0 || sensitivity_deg <= 0 ||
        overlap_ratio <= 0 || overlap_ratio > 1) {
      throw Error(ErrorCode::kInvalidArgument, "gate thresholds");
    }
  }
};

inline std::vector<Segment2D> filter_short(std::span<const Segment2D> segments, double min_length) {
  std::vector<Segment2D> out;
  for (const auto& s : segments) {
    if (s.length() >= min_length) out.push_back(s);
  }
  return out;
}

/// Undirected angle between two 2D directions, degrees in [0, 90].
inline double undirected_angle_2d(const Vec2& a, const Vec2& b) {
  return std::atan2(std::abs(a.x() * b.y() - a.y() * b.x()), std::abs(a.dot(b))) * kRadToDeg;
}

struct GateResult {
  bool pass = true;
  std::string reason;  // empty when passing
  double value = 0.0;
};

/// Midpoint distance and max endpoint-to-line distance checks.
inline GateResult reprojection_gate(const Vec2& p_ori_mid, const Vec2& p_proj_mid, double d_s,
                                    double d_e, double midpoint_thre, double perpendicular_thre) {
  const double mid = (p_ori_mid - p_proj_mid).norm();
  if (mid > midpoint_thre) return {false, "midpoint", mid};
  const double d = std::max(d_s, d_e);
  if (d > perpendicular_thre) return {false, "perpendicular", d};
  return {true, "", d};
}

/// Displacement of the projected midpoint measured against the line direction.
/// Along-line sliding (alpha near 0) is unobservable and fails.
inline GateResult sensitivity_gate(const Vec2& v_ori, const Vec2& p_ori_mid,
                                   const Vec2& p_proj_mid, double alpha_thre_deg) {
  const Vec2 disp = p_proj_mid - p_ori_mid;
  if (disp.norm() < 1e-6) return {true, "", 0.0};
  const double cos_alpha = std::min(1.0, std::abs(v_ori.dot(disp.normalized())));
  const double alpha = std::acos(cos_alpha) * kRadToDeg;
  const double excess = 90.0 - alpha;
  if (excess > alpha_thre_deg) return {false, "sensitivity", excess};
  return {true, "", excess};
}

/// Overlap of the projected segment with the original, as a fraction of the
/// original's length (negative when disjoint).
inline double overlap_ratio(const Vec2& p_ori_s, const Vec2& p_ori_e, const Vec2& p_proj_s,
                            const Vec2& p_proj_e) {
  const Vec2 d = p_ori_e - p_ori_s;
  const double l_ori = d.norm();
  if (l_ori <= 0.0) throw Error(ErrorCode::kInvalidArgument, "zero-length original segment");
  const Vec2 v_ori = d / l_ori;
  const double r1 = (p_proj_s - p_ori_s).dot(v_ori) / l_ori;
  const double r2 = (p_proj_e - p_ori_s).dot(v_ori) / l_ori;
  const double lo = std::min(r1, r2);
  const double hi = std::max(r1, r2);
  return std::min(hi, 1.0) - std::max(lo, 0.0);
}

inline GateResult overlap_gate(const Vec2& p_ori_s, const Vec2& p_ori_e, const Vec2& p_proj_s,
                               const Vec2& p_proj_e, double r_thre) {
  const double r = overlap_ratio(p_ori_s, p_ori_e, p_proj_s, p_proj_e);
  if (r < r_thre) return {false, "overlap", r};
  return {true, "", r};
}

struct MatchParams {
  double max_midpoint_px = 10.0;   // g_mid
  double max_angle_deg = 3.0;      // g_ang
  double angle_weight = 0.5;       // w_a
  double overlap_weight = 0.5;     // w_o
  /// Score multiplier for the flow prediction when no reference is available.
  double predicted_confidence = 0.9;
};

enum class MatchSource { kDetected, kPredicted };

struct TrackMatch {
  int track_id = 0;
  Segment2D segment;
  MatchSource source = MatchSource::kDetected;
  double score = 0.0;  // pair score; 0 for unmatched predictions
  std::optional<int> detection_id;  // paired detection, whichever representation was kept
};

/// Score of `candidate` as a measurement of `reference`; nullopt outside the gates.
inline std::optional<double> match_score(const Segment2D& reference, const Segment2D& candidate,
                                         const MatchParams& params) {
  const double mid = (reference.midpoint() - candidate.midpoint()).norm();
  const double angle = undirected_angle_2d(reference.p_end - reference.p_start,
                                           candidate.p_end - candidate.p_start);
  if (mid >= params.max_midpoint_px || angle >= params.max_angle_deg) return std::nullopt;
  const double r = std::clamp(
      overlap_ratio(reference.p_start, reference.p_end, candidate.p_start, candidate.p_end), 0.0,
      1.0);
  return params.angle_weight * (1.0 - angle / params.max_angle_deg) + params.overlap_weight * r;
}

/// Pairs flow-predicted segments (carrying track ids) with detections.
/// Pairs are taken greedily by descending score, one-to-one. For each pair the
/// representation scoring higher against the track's reference (from
/// `references`, keyed by track id) is kept; without a reference the
/// prediction's score is discounted by `predicted_confidence`. Unmatched
/// predictions continue as predicted-only.
inline std::vector<TrackMatch> match_predicted(std::span<const Segment2D> predicted,
                                               std::span<const Segment2D> detected,
                                               const MatchParams& params,
                                               const std::map<int, Segment2D>& references = {}) {
  struct Pair {
    double score;
    std::size_t p, d;
  };
  std::vector<Pair> pairs;
  for (std::size_t p = 0; p < predicted.size(); ++p) {
    for (std::size_t d = 0; d < detected.size(); ++d) {
      if (auto s = match_score(predicted[p], detected[d], params)) pairs.push_back({*s, p, d});
    }
  }
  std::stable_sort(pairs.begin(), pairs.end(), [&](const Pair& a, const Pair& b) {
    if (a.score != b.score) return a.score > b.score;
    const int ta = predicted[a.p].track_id.value_or(0), tb = predicted[b.p].track_id.value_or(0);
    if (ta != tb) return ta < tb;
    return detected[a.d].id < detected[b.d].id;
  });
  std::vector<bool> p_used(predicted.size(), false), d_used(detected.size(), false);
  std::vector<TrackMatch> out;
  for (const auto& pr : pairs) {
    if (p_used[pr.p] || d_used[pr.d]) continue;
    p_used[pr.p] = d_used[pr.d] = true;
    const Segment2D& pred = predicted[pr.p];
    const int track = pred.track_id.value_or(-1);
    double det_score = pr.score;
    double pred_score = pr.score * params.predicted_confidence;
    if (auto it = references.find(track); it != references.end()) {
      det_score = match_score(it->second, detected[pr.d], params).value_or(0.0);
      pred_score = match_score(it->second, pred, params).value_or(0.0);
    }
    TrackMatch m;
    m.track_id = track;
    m.score = pr.score;
    m.detection_id = detected[pr.d].id;
    if (det_score >= pred_score) {
      m.segment = detected[pr.d];
      m.source = MatchSource::kDetected;
    } else {
      m.segment = pred;
      m.source = MatchSource::kPredicted;
    }
    m.segment.track_id = track;
    out.push_back(std::move(m));
  }
  for (std::size_t p = 0; p < predicted.size(); ++p) {
    if (p_used[p]) continue;
    TrackMatch m;
    m.track_id = predicted[p].track_id.value_or(-1);
    m.segment = predicted[p];
    m.source = MatchSource::kPredicted;
    out.push_back(std::move(m));
  }
  std::sort(out.begin(), out.end(),
            [](const TrackMatch& a, const TrackMatch& b) { return a.track_id < b.track_id; });
  return out;
}

/// Extends `curr` over the extent of both segments along curr's infinite
/// line. Endpoints outside the image are kept.
inline Segment2D merge_segments(const Segment2D& prev, const Segment2D& curr,
                                double max_angle_deg = 3.0) {
  if (undirected_angle_2d(prev.p_end - prev.p_start, curr.p_end - curr.p_start) >= max_angle_deg) {
    throw Error(ErrorCode::kNotCollinear);
  }
  const Vec2 origin = curr.p_start;
  const Vec2 dir = curr.direction();
  double lo = 0.0, hi = 0.0;
  bool first = true;
  for (const Vec2& p : {prev.p_start, prev.p_end, curr.p_start, curr.p_end}) {
    const double t = (p - origin).dot(dir);
    if (first) {
      lo = hi = t;
      first = false;
    } else {
      lo = std::min(lo, t);
      hi = std::max(hi, t);
    }
  }
  Segment2D out = curr;
  out.p_start = origin + lo * dir;
  out.p_end = origin + hi * dir;
  return out;
}

struct LineTrack {
  int track_id = 0;
  std::vector<std::pair<int, Segment2D>> observations;  // (frame_id, segment), frame increasing
  bool merged_flag = false;

  int age() const { return static_cast<int>(observations.size()); }
  int last_frame() const { return observations.empty() ? -1 : observations.back().first; }

  void add(int frame_id, const Segment2D& seg) {
    if (!observations.empty() && frame_id <= observations.back().first) {
      throw Error(ErrorCode::kInvalidArgument, "track observations must increase in frame order");
    }
    observations.emplace_back(frame_id, seg);
  }
};

struct KeyframePolicy {
  int min_track_age = 5;          // T_age
  int min_persistent_tracks = 10; // n_persist
  double growth_ratio = 0.3;      // rho
};

struct KeyframeDecision {
  bool insert = false;
  std::string reason;  // "persistence", "growth" or empty
};

/// `tracks` are the tracks alive in the current frame.
inline KeyframeDecision keyframe_decision(std::span<const LineTrack> tracks,
                                          int last_keyframe_line_count,
                                          const KeyframePolicy& policy) {
  const auto persistent = std::count_if(tracks.begin(), tracks.end(), [&](const LineTrack& t) {
    return t.age() >= policy.min_track_age;
  });
  if (persistent >= policy.min_persistent_tracks) return {true, "persistence"};
  const double count = static_cast<double>(tracks.size());
  if (count > 0 && count >= (1.0 + policy.growth_ratio) * last_keyframe_line_count) {
    return {true, "growth"};
  }
  return {false, ""};
}

struct GateAuditRecord {
  int frame_id = 0;
  int track_id = 0;
  std::string gate;
  double value = 0.0;
  double threshold = 0.0;
  bool pass = true;
};

inline void write_gate_audit_csv(std::ostream& os, std::span<const GateAuditRecord> records) {
  os << "frame_id,track_id,gate,value,threshold,verdict\n";
  char buf[64];
  for (const auto& r : records) {
    os << r.frame_id << ',' << r.track_id << ',' << r.gate << ',';
    std::snprintf(buf, sizeof(buf), "%.9g", r.value);
    os << buf << ',';
    std::snprintf(buf, sizeof(buf), "%.9g", r.threshold);
    os << buf << ',' << (r.pass ? "pass" : "fail") << '\n';
  }
}

/// Runs all mapline gates for one observation of a 3D line. The projected
/// counterpart of each observed endpoint is the reprojection of the mapline
/// point closest to that endpoint's viewing ray. Appends one audit record per
/// gate evaluated and returns whether every gate passed.
inline bool verify_mapline_observation(const PluckerLine& line_w, const Segment2D& obs,
                                       int frame_id, int track_id, const Pose& t_cw,
                                       const CameraIntrinsics& k, const GateThresholds& th,
                                       std::vector<GateAuditRecord>* audit = nullptr) {
  auto record = [&](const std::string& gate, double value, double threshold, bool pass) {
    if (audit) audit->push_back({frame_id, track_id, gate, value, threshold, pass});
  };
  Vec3 l;
  try {
    l = project_plucker(transform_plucker(line_w, t_cw), k);
  } catch (const Error&) {
    record("projection", 0.0, 0.0, false);
    return false;
  }
  l /= l.head<2>().norm();
  const double d_s = std::abs(l.dot(Vec3(obs.p_start.x(), obs.p_start.y(), 1.0)));
  const double d_e = std::abs(l.dot(Vec3(obs.p_end.x(), obs.p_end.y(), 1.0)));

  const auto ps3 = closest_point_on_line_to_ray(line_w, obs.p_start, t_cw, k);
  const auto pe3 = closest_point_on_line_to_ray(line_w, obs.p_end, t_cw, k);
  std::optional<Vec2> ps, pe;
  if (ps3 && pe3) {
    ps = project_camera_point<double>(t_cw.transform(*ps3), k);
    pe = project_camera_point<double>(t_cw.transform(*pe3), k);
  }
  if (!ps || !pe) {
    record("projection", 0.0, 0.0, false);
    return false;
  }
  const Vec2 p_ori_mid = obs.midpoint();
  const Vec2 p_proj_mid = 0.5 * (*ps + *pe);

  const double mid = (p_ori_mid - p_proj_mid).norm();
  const double d = std::max(d_s, d_e);
  const GateResult rep = reprojection_gate(p_ori_mid, p_proj_mid, d_s, d_e, th.midpoint_px,
                                           th.perpendicular_px);
  record("reprojection_midpoint", mid, th.midpoint_px, mid <= th.midpoint_px);
  record("reprojection_perpendicular", d, th.perpendicular_px, d <= th.perpendicular_px);

  const Vec2 v_ori = Vec2(l.y(), -l.x()).normalized();
  const GateResult sen = sensitivity_gate(v_ori, p_ori_mid, p_proj_mid, th.sensitivity_deg);
  record("sensitivity", sen.value, th.sensitivity_deg, sen.pass);

  bool ovl_pass = false;
  double r = -1.0;
  if (obs.length() > 0.0) {
    const GateResult ovl = overlap_gate(obs.p_start, obs.p_end, *ps, *pe, th.overlap_ratio);
    ovl_pass = ovl.pass;
    r = ovl.value;
  }
  record("overlap", r, th.overlap_ratio, ovl_pass);
  return rep.pass && sen.pass && ovl_pass;
}

}  // namespace gpslam
