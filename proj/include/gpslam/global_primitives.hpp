#pragma once

// Registry of Global Primitives: world-frame vanishing directions shared by
// every frame that observes them, refined by support-weighted fusion.

#include <algorithm>
#include <set>
#include <span>
#include <vector>

#include "gpslam/geometry.hpp"
#include "gpslam/vanishing_points.hpp"

namespace gpslam {

struct GpAssociation {
  int frame_id = 0;
  std::vector<int> segment_ids;
  int frame_line_budget = 1;  // N_l at association time

  double weight() const {
    return static_cast<double>(segment_ids.size()) / static_cast<double>(frame_line_budget);
  }
};

struct GlobalPrimitive {
  int id = 0;
  Vec3 direction = Vec3::UnitX();  // unit, sign-canonical
  double support_weight = 0.0;
  std::vector<GpAssociation> associations;

  std::vector<int> frames() const {
    std::set<int> f;
    for (const auto& a : associations) f.insert(a.frame_id);
    return {f.begin(), f.end()};
  }

  /// Support recomputed from the associations.
  double recomputed_support() const {
    double s = 0.0;
    for (const auto& a : associations) s += a.weight();
    return s;
  }
};

/// Unsigned angle between two directions, degrees in [0, 90].
inline double undirected_angle_deg(const Vec3& a, const Vec3& b) {
  return std::atan2(a.cross(b).norm(), std::abs(a.dot(b))) * kRadToDeg;
}

inline bool is_parallel(const Vec3& d1, const Vec3& d2, double tol_deg) {
  return undirected_angle_deg(d1, d2) < tol_deg;
}

inline constexpr double kDefaultFuseTolDeg = 5.0;

/// Pairwise support-weighted fusion of two parallel vanishing directions:
/// normalize((N_i / N_l) d_i + (N_j / N_l) d_j) with d_j sign-aligned to d_i.
inline Vec3 fuse_directions(const Vec3& d_i, int n_i, const Vec3& d_j, int n_j, int n_l,
                            double fuse_tol_deg = kDefaultFuseTolDeg) {
  if (n_i < 1 || n_j < 1 || n_l < std::max(n_i, n_j)) {
    throw Error(ErrorCode::kInvalidArgument, "fusion counts");
  }
  if (!is_parallel(d_i, d_j, fuse_tol_deg)) throw Error(ErrorCode::kNotParallel);
  const Vec3 aligned = d_i.dot(d_j) < 0 ? Vec3(-d_j) : d_j;
  const double nl = static_cast<double>(n_l);
  const Vec3 sum = (n_i / nl) * d_i + (n_j / nl) * aligned;
  return canonicalize_sign(sum.normalized());
}

/// A frame's lifted vanishing direction and the segments supporting it.
struct LiftedDirection {
  Vec3 direction = Vec3::UnitX();
  std::vector<int> segment_ids;
};

struct GpMatch {
  int gp_id = 0;
  std::vector<int> segment_ids;
};

/// Single-writer registry of Global Primitives.
class GpRegistry {
 public:
  const std::vector<GlobalPrimitive>& primitives() const { return primitives_; }
  std::size_t size() const { return primitives_.size(); }

  const GlobalPrimitive& at(int gp_id) const { return primitives_.at(static_cast<std::size_t>(gp_id)); }

  /// Fuses each lifted direction into the closest parallel primitive (within
  /// fuse_tol_deg) or opens a new one. Returns the association made for each
  /// input, in input order.
  std::vector<GpMatch> associate_frame(int frame_id, std::span<const LiftedDirection> lifted,
                                       int frame_line_budget,
                                       double fuse_tol_deg = kDefaultFuseTolDeg) {
    if (frame_line_budget < 1) throw Error(ErrorCode::kInvalidArgument, "N_l must be >= 1");
    std::vector<GpMatch> matches;
    for (const auto& l : lifted) {
      const double w_new =
          static_cast<double>(l.segment_ids.size()) / static_cast<double>(frame_line_budget);
      int best = -1;
      double best_angle = fuse_tol_deg;
      for (const auto& gp : primitives_) {
        const double a = undirected_angle_deg(gp.direction, l.direction);
        if (a < best_angle) {
          best_angle = a;
          best = gp.id;
        }
      }
      GpAssociation assoc{frame_id, l.segment_ids, frame_line_budget};
      if (best < 0) {
        GlobalPrimitive gp;
        gp.id = static_cast<int>(primitives_.size());
        gp.direction = canonicalize_sign(l.direction.normalized());
        gp.support_weight = w_new;
        gp.associations.push_back(std::move(assoc));
        primitives_.push_back(std::move(gp));
        best = primitives_.back().id;
      } else {
        GlobalPrimitive& gp = primitives_[static_cast<std::size_t>(best)];
        const Vec3 aligned = gp.direction.dot(l.direction) < 0 ? Vec3(-l.direction) : l.direction;
        gp.direction = canonicalize_sign((gp.support_weight * gp.direction + w_new * aligned).normalized());
        gp.support_weight += w_new;
        gp.associations.push_back(std::move(assoc));
      }
      matches.push_back({best, l.segment_ids});
    }
    return matches;
  }

 private:
  std::vector<GlobalPrimitive> primitives_;
};

struct GpEdge {
  int frame_a = 0;  // frame_a < frame_b
  int frame_b = 0;
  int gp_id = 0;

  friend bool operator==(const GpEdge&, const GpEdge&) = default;
};

struct GpAssociationGraph {
  std::vector<int> nodes;  // sorted frame ids
  std::vector<GpEdge> edges;

  bool has_edge(int a, int b) const {
    const int lo = std::min(a, b), hi = std::max(a, b);
    return std::any_of(edges.begin(), edges.end(),
                       [&](const GpEdge& e) { return e.frame_a == lo && e.frame_b == hi; });
  }
};

/// Complete graph over the frames of each primitive, one edge set per GP.
inline GpAssociationGraph build_association_graph(std::span<const GlobalPrimitive> registry) {
  GpAssociationGraph g;
  std::set<int> nodes;
  for (const auto& gp : registry) {
    const auto frames = gp.frames();
    nodes.insert(frames.begin(), frames.end());
    for (std::size_t i = 0; i < frames.size(); ++i) {
      for (std::size_t j = i + 1; j < frames.size(); ++j) {
        g.edges.push_back({frames[i], frames[j], gp.id});
      }
    }
  }
  g.nodes.assign(nodes.begin(), nodes.end());
  return g;
}

}  // namespace gpslam
