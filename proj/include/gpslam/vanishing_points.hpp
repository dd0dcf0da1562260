#pragma once

// Vanishing point detection from 2D segments: random pairwise hypotheses,
// J-Linkage clustering over preference sets, least-squares refinement and
// lifting to a world-frame vanishing direction.

#include <algorithm>
#include <cstdint>
#include <map>
#include <random>
#include <span>
#include <vector>

#include "gpslam/geometry.hpp"

namespace gpslam {

struct VanishingPointEstimate {
  Vec3 vp_homogeneous = Vec3::UnitZ();   // unit norm
  std::vector<int> member_segment_ids;   // sorted
  double residual_rms = 0.0;             // degrees
};

struct VpDetectionParams {
  int num_hypotheses = 500;
  double consensus_threshold_deg = 2.0;
  int min_cluster_size = 3;
};

/// Flips `v` so that its first largest-magnitude component is positive.
inline Vec3 canonicalize_sign(const Vec3& v) {
  int idx = 0;
  for (int i = 1; i < 3; ++i) {
    if (std::abs(v(i)) > std::abs(v(idx))) idx = i;
  }
  return v(idx) < 0 ? Vec3(-v) : v;
}

inline std::vector<Vec3> sample_vp_hypotheses(std::span<const Segment2D> segments, int count,
                                              std::uint64_t rng_seed) {
  if (segments.size() < 2) throw Error(ErrorCode::kTooFewSegments);
  if (count < 1) throw Error(ErrorCode::kInvalidArgument, "hypothesis count must be >= 1");
  std::vector<Vec3> lines;
  lines.reserve(segments.size());
  for (const auto& s : segments) lines.push_back(segment_line(s));

  std::mt19937_64 rng(rng_seed);
  std::uniform_int_distribution<std::size_t> pick(0, segments.size() - 1);
  std::vector<Vec3> hypotheses;
  hypotheses.reserve(static_cast<std::size_t>(count));
  // Identical lines give no intersection; bounded retries keep this total.
  int attempts = 0;
  const int max_attempts = 20 * count + 100;
  while (static_cast<int>(hypotheses.size()) < count && attempts++ < max_attempts) {
    const std::size_t i = pick(rng);
    const std::size_t j = pick(rng);
    if (i == j) continue;
    const Vec3 h = lines[i].cross(lines[j]);
    const double n = h.norm();
    if (n < 1e-12) continue;
    hypotheses.push_back(h / n);
  }
  return hypotheses;
}

/// Angle (degrees, in [0, 90]) between the segment and the ray from its
/// midpoint toward `vp`. VPs with |w| < 1e-9 are treated as directions.
inline double consensus(const Segment2D& seg, const Vec3& vp) {
  const Vec3 v = vp.normalized();
  Vec2 ray;
  if (std::abs(v.z()) < 1e-9) {
    ray = v.head<2>();
  } else {
    ray = v.head<2>() / v.z() - seg.midpoint();
    if (ray.norm() < 1e-9) throw Error(ErrorCode::kVpAtMidpoint);
  }
  const Vec2 d = seg.p_end - seg.p_start;
  const double cross = std::abs(d.x() * ray.y() - d.y() * ray.x());
  const double dot = std::abs(d.dot(ray));
  return std::atan2(cross, dot) * kRadToDeg;
}

namespace detail {

class Bitset {
 public:
  explicit Bitset(std::size_t bits = 0) : words_((bits + 63) / 64, 0) {}

  void set(std::size_t i) { words_[i / 64] |= (std::uint64_t{1} << (i % 64)); }

  std::size_t count() const {
    std::size_t c = 0;
    for (auto w : words_) c += static_cast<std::size_t>(__builtin_popcountll(w));
    return c;
  }

  Bitset operator&(const Bitset& o) const {
    Bitset out = *this;
    for (std::size_t i = 0; i < words_.size(); ++i) out.words_[i] &= o.words_[i];
    return out;
  }

  std::size_t intersection_count(const Bitset& o) const {
    std::size_t c = 0;
    for (std::size_t i = 0; i < words_.size(); ++i)
      c += static_cast<std::size_t>(__builtin_popcountll(words_[i] & o.words_[i]));
    return c;
  }

  std::size_t union_count(const Bitset& o) const {
    std::size_t c = 0;
    for (std::size_t i = 0; i < words_.size(); ++i)
      c += static_cast<std::size_t>(__builtin_popcountll(words_[i] | o.words_[i]));
    return c;
  }

 private:
  std::vector<std::uint64_t> words_;
};

}  // namespace detail

/// J-Linkage: agglomerative merging of clusters by Jaccard distance between
/// their preference sets. A merged cluster's preference set is the
/// intersection of its parts; merging stops once every pair is at distance 1.
/// Ties are broken by segment ids, so the partition does not depend on input
/// order. Returns disjoint sorted id sets of size >= min_cluster_size.
inline std::vector<std::vector<int>> jlinkage_cluster(std::span<const Segment2D> segments,
                                                      std::span<const Vec3> hypotheses,
                                                      double consensus_threshold_deg,
                                                      int min_cluster_size) {
  if (segments.empty() || hypotheses.empty()) {
    throw Error(ErrorCode::kInvalidArgument, "jlinkage needs segments and hypotheses");
  }
  struct Cluster {
    detail::Bitset preference;
    std::vector<int> ids;
    int key;  // smallest member id
  };
  std::vector<Cluster> clusters;
  clusters.reserve(segments.size());
  for (const auto& seg : segments) {
    Cluster c{detail::Bitset(hypotheses.size()), {seg.id}, seg.id};
    for (std::size_t h = 0; h < hypotheses.size(); ++h) {
      double angle;
      try {
        angle = consensus(seg, hypotheses[h]);
      } catch (const Error&) {
        continue;  // hypothesis at the midpoint: undefined direction
      }
      if (angle < consensus_threshold_deg) c.preference.set(h);
    }
    clusters.push_back(std::move(c));
  }
  std::sort(clusters.begin(), clusters.end(),
            [](const Cluster& a, const Cluster& b) { return a.key < b.key; });

  while (clusters.size() > 1) {
    std::size_t best_i = 0, best_j = 0;
    std::size_t best_inter = 0, best_union = 1;  // similarity 0 means distance 1
    bool found = false;
    for (std::size_t i = 0; i < clusters.size(); ++i) {
      for (std::size_t j = i + 1; j < clusters.size(); ++j) {
        const std::size_t inter = clusters[i].preference.intersection_count(clusters[j].preference);
        if (inter == 0) continue;
        const std::size_t uni = clusters[i].preference.union_count(clusters[j].preference);
        // Higher similarity inter/uni wins; exact integer comparison.
        if (!found || inter * best_union > best_inter * uni) {
          best_i = i;
          best_j = j;
          best_inter = inter;
          best_union = uni;
          found = true;
        }
      }
    }
    if (!found) break;
    Cluster& a = clusters[best_i];
    Cluster& b = clusters[best_j];
    a.preference = a.preference & b.preference;
    a.ids.insert(a.ids.end(), b.ids.begin(), b.ids.end());
    a.key = std::min(a.key, b.key);
    clusters.erase(clusters.begin() + static_cast<std::ptrdiff_t>(best_j));
    std::sort(clusters.begin(), clusters.end(),
              [](const Cluster& x, const Cluster& y) { return x.key < y.key; });
  }

  std::vector<std::vector<int>> out;
  for (auto& c : clusters) {
    if (static_cast<int>(c.ids.size()) < min_cluster_size) continue;
    std::sort(c.ids.begin(), c.ids.end());
    out.push_back(std::move(c.ids));
  }
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) {
    return a.size() != b.size() ? a.size() > b.size() : a.front() < b.front();
  });
  return out;
}

/// Least-squares VP of a cluster: smallest right singular vector of the
/// stacked lines (each scaled to ||(a,b)|| = 1).
inline VanishingPointEstimate refine_vp(std::span<const Segment2D> cluster) {
  if (cluster.size() < 2) throw Error(ErrorCode::kInvalidArgument, "cluster needs >= 2 segments");
  Eigen::MatrixXd a(static_cast<Eigen::Index>(cluster.size()), 3);
  for (std::size_t i = 0; i < cluster.size(); ++i) {
    a.row(static_cast<Eigen::Index>(i)) = segment_line(cluster[i]).transpose();
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeFullV);
  const auto& sv = svd.singularValues();
  if (sv.size() < 2 || sv(1) <= 1e-12 * sv(0)) throw Error(ErrorCode::kRankDeficient);

  VanishingPointEstimate est;
  est.vp_homogeneous = canonicalize_sign(svd.matrixV().col(2).normalized());
  double sum_sq = 0.0;
  for (const auto& seg : cluster) {
    est.member_segment_ids.push_back(seg.id);
    double angle = 90.0;
    try {
      angle = consensus(seg, est.vp_homogeneous);
    } catch (const Error&) {
    }
    sum_sq += angle * angle;
  }
  std::sort(est.member_segment_ids.begin(), est.member_segment_ids.end());
  est.residual_rms = std::sqrt(sum_sq / static_cast<double>(cluster.size()));
  return est;
}

/// World-frame unit vanishing direction: normalize(R_wc * normalize(K^-1 vp)),
/// sign-canonicalized.
inline Vec3 lift_vanishing_point(const Vec3& vp, const CameraIntrinsics& k, const Mat3& r_wc) {
  const Vec3 d_c = (k.inverse_matrix() * vp).normalized();
  return canonicalize_sign((r_wc * d_c).normalized());
}

/// Full per-frame detection: hypotheses, clustering, refinement. Segments in
/// `segments` get their cluster_label set (index into the returned list).
inline std::vector<VanishingPointEstimate> detect_vanishing_points(
    std::vector<Segment2D>& segments, const VpDetectionParams& params, std::uint64_t rng_seed) {
  for (auto& s : segments) s.cluster_label.reset();
  if (segments.size() < 2) return {};
  const auto hypotheses = sample_vp_hypotheses(segments, params.num_hypotheses, rng_seed);
  if (hypotheses.empty()) return {};
  const auto clusters = jlinkage_cluster(segments, hypotheses, params.consensus_threshold_deg,
                                         params.min_cluster_size);
  std::map<int, std::size_t> index_of;
  for (std::size_t i = 0; i < segments.size(); ++i) index_of[segments[i].id] = i;

  std::vector<VanishingPointEstimate> out;
  for (const auto& ids : clusters) {
    std::vector<Segment2D> members;
    for (int id : ids) members.push_back(segments[index_of.at(id)]);
    VanishingPointEstimate est;
    try {
      est = refine_vp(members);
    } catch (const Error&) {
      continue;
    }
    const int label = static_cast<int>(out.size());
    for (int id : ids) segments[index_of.at(id)].cluster_label = label;
    out.push_back(std::move(est));
  }
  return out;
}

}  // namespace gpslam
