#include <gtest/gtest.h>

#include <set>

#include "gpslam/scene_sim.hpp"
#include "test_support.hpp"

namespace gpslam {

void PrintTo(TrajectoryType t, std::ostream* os) { *os << to_string(t); }

namespace {

using testing::rotation_angle;

ScenarioConfig noiseless(ScenarioConfig c = {}) {
  c.noise = {0.0, 0.0, 0.0};
  return c;
}

TEST(SceneSim, DefaultCorridorWorld) {
  const ScenarioConfig cfg;
  const World w = generate_world(cfg);
  EXPECT_EQ(w.points.size(), 200u);
  ASSERT_EQ(w.lines.size(), 60u);
  ASSERT_EQ(w.gp_directions.size(), 3u);
  for (const auto& l : w.lines) {
    const Vec3 d = (l.p_end - l.p_start).normalized();
    EXPECT_LT((d - w.gp_directions[static_cast<std::size_t>(l.family_id)]).norm(), 1e-12) << l.id;
    const double len = (l.p_end - l.p_start).norm();
    EXPECT_GE(len, 1.0 - 1e-12);
    EXPECT_LE(len, 2.5 + 1e-12);
  }
  EXPECT_EQ(std::count_if(w.lines.begin(), w.lines.end(), [](const WorldLine& l) { return l.family_id == 1; }), 20);
}

TEST(SceneSim, Deterministic) {
  ScenarioConfig cfg;
  cfg.outlier_fraction = 0.2;
  const World a = generate_world(cfg), b = generate_world(cfg);
  ASSERT_EQ(a.points.size(), b.points.size());
  for (std::size_t i = 0; i < a.points.size(); ++i) EXPECT_EQ(a.points[i], b.points[i]);
  const auto poses = generate_trajectory(cfg);
  const auto ma = render_measurements(a, poses, cfg), mb = render_measurements(b, poses, cfg);
  for (std::size_t f = 0; f < ma.frames.size(); ++f) {
    ASSERT_EQ(ma.frames[f].segments.size(), mb.frames[f].segments.size());
    for (std::size_t i = 0; i < ma.frames[f].segments.size(); ++i) {
      EXPECT_EQ(ma.frames[f].segments[i].p_start, mb.frames[f].segments[i].p_start);
    }
    ASSERT_EQ(ma.frames[f].predicted.size(), mb.frames[f].predicted.size());
  }
  cfg.seed = 2;
  EXPECT_NE(generate_world(cfg).points.front(), a.points.front());
}

TEST(SceneSim, CorridorPathLength) {
  ScenarioConfig cfg;
  cfg.trajectory = {TrajectoryType::kCorridor, 20, 0.25};
  const auto poses = generate_trajectory(cfg);
  ASSERT_EQ(poses.size(), 20u);
  double len = 0.0;
  for (std::size_t k = 1; k < poses.size(); ++k) len += (poses[k].center() - poses[k - 1].center()).norm();
  EXPECT_NEAR(len, 4.75, 1e-9);
}

class TrajectoryShape : public ::testing::TestWithParam<TrajectoryType> {};

TEST_P(TrajectoryShape, SmoothAndAnchored) {
  ScenarioConfig cfg;
  cfg.trajectory = {GetParam(), 30, 0.3};
  const auto poses = generate_trajectory(cfg);
  EXPECT_LT(rotation_angle(poses[0].rotation, Mat3::Identity()), 1e-12);
  EXPECT_LT(poses[0].translation.norm(), 1e-12);
  for (std::size_t k = 1; k < poses.size(); ++k) {
    EXPECT_LT(rotation_angle(poses[k].rotation, poses[k - 1].rotation), 10.0 * kDegToRad) << k;
    EXPECT_LE((poses[k].center() - poses[k - 1].center()).norm(), 0.3 * (1 + 1e-9)) << k;
    EXPECT_GT((poses[k].center() - poses[k - 1].center()).norm(), 0.0);
  }
}

INSTANTIATE_TEST_SUITE_P(All, TrajectoryShape,
                         ::testing::Values(TrajectoryType::kCorridor, TrajectoryType::kOrbit,
                                           TrajectoryType::kFigure8),
                         [](const auto& info) { return std::string(to_string(info.param)); });

TEST(SceneSim, NoiselessObservationsAreExact) {
  const ScenarioConfig cfg = noiseless();
  const World w = generate_world(cfg);
  const auto poses = generate_trajectory(cfg);
  const auto m = render_measurements(w, poses, cfg);
  for (const auto& f : m.frames) {
    const Pose& pose = poses[static_cast<std::size_t>(f.frame_id)];
    EXPECT_GE(f.points.size(), 8u);
    for (const auto& o : f.points) {
      const Vec2 px = project_point(w.points[static_cast<std::size_t>(o.landmark_id)], pose, cfg.camera);
      EXPECT_LT((px - o.px).norm(), 1e-9);
      EXPECT_GE(o.px.x(), 0.0);
      EXPECT_LE(o.px.y(), cfg.height);
    }
    const auto& truth = m.truth[static_cast<std::size_t>(f.frame_id)];
    ASSERT_EQ(truth.segments.size(), f.segments.size());
    EXPECT_LE(static_cast<int>(f.segments.size()), cfg.n_l);
    for (std::size_t i = 0; i < f.segments.size(); ++i) {
      const auto& l = w.lines[static_cast<std::size_t>(truth.segments[i].line_id)];
      const Vec3 img = project_plucker(transform_plucker(l.plucker(), pose), cfg.camera);
      const double scale = img.head<2>().norm();
      for (const Vec2& p : {f.segments[i].p_start, f.segments[i].p_end}) {
        EXPECT_LT(std::abs(img.dot(Vec3(p.x(), p.y(), 1.0))) / scale, 1e-6);
      }
      EXPECT_FALSE(f.segments[i].track_id.has_value());
    }
  }
}

TEST(SceneSim, NoiselessPredictionsLieOnTrueLines) {
  const ScenarioConfig cfg = noiseless();
  const World w = generate_world(cfg);
  const auto poses = generate_trajectory(cfg);
  const auto m = render_measurements(w, poses, cfg);
  EXPECT_TRUE(m.frames[0].predicted.empty());
  std::size_t checked = 0;
  for (std::size_t f = 1; f < m.frames.size(); ++f) {
    for (const auto& p : m.frames[f].predicted) {
      ASSERT_TRUE(p.track_id.has_value());
      const auto& src = m.truth[f - 1].segments[static_cast<std::size_t>(*p.track_id)];
      const auto& l = w.lines[static_cast<std::size_t>(src.line_id)];
      const Vec3 img = project_plucker(transform_plucker(l.plucker(), poses[f]), cfg.camera);
      const double scale = img.head<2>().norm();
      EXPECT_LT(std::abs(img.dot(Vec3(p.p_start.x(), p.p_start.y(), 1.0))) / scale, 1e-6);
      ++checked;
    }
  }
  EXPECT_GT(checked, 100u);
}

TEST(SceneSim, OutlierFraction) {
  ScenarioConfig cfg;
  cfg.n_l = 50;
  cfg.outlier_fraction = 0.2;
  for (auto& f : cfg.families) f.count = 40;
  const World w = generate_world(cfg);
  const auto poses = generate_trajectory(cfg);
  const auto m = render_measurements(w, poses, cfg);
  for (const auto& t : m.truth) {
    const auto n = t.segments.size();
    const auto out = std::count_if(t.segments.begin(), t.segments.end(), [](const SegmentTruth& s) { return s.outlier; });
    EXPECT_EQ(out, std::llround(0.2 * static_cast<double>(n)));
    if (n == 50) {
      EXPECT_EQ(out, 10);
    }
  }
  EXPECT_EQ(m.truth[0].segments.size(), 50u);
}

TEST(SceneSim, PartitionedFramesAreDisjoint) {
  ScenarioConfig cfg = noiseless();
  cfg.trajectory = {TrajectoryType::kCorridor, 60, 0.25};
  cfg.n_points = 400;
  cfg.visibility = {4.0, 5};
  const World w = generate_world(cfg);
  const auto m = render_measurements(w, generate_trajectory(cfg), cfg);
  auto points_of = [&](int f) {
    std::set<int> s;
    for (const auto& o : m.frames[static_cast<std::size_t>(f)].points) s.insert(o.landmark_id);
    return s;
  };
  auto lines_of = [&](int f) {
    std::set<int> s;
    for (const auto& t : m.truth[static_cast<std::size_t>(f)].segments) s.insert(t.line_id);
    return s;
  };
  const auto a = points_of(1), b = points_of(50);
  EXPECT_FALSE(a.empty());
  EXPECT_FALSE(b.empty());
  for (int id : a) EXPECT_EQ(b.count(id), 0u);
  for (int id : lines_of(1)) EXPECT_EQ(lines_of(50).count(id), 0u);
}

TEST(SceneSim, SparseFrameWarns) {
  ScenarioConfig cfg;
  cfg.n_points = 3;
  const auto m = render_measurements(generate_world(cfg), generate_trajectory(cfg), cfg);
  ASSERT_FALSE(m.frames[0].warnings.empty());
  EXPECT_NE(m.frames[0].warnings[0].find("empty frame"), std::string::npos);
}

TEST(SceneSim, ClipToImage) {
  const auto c = clip_to_image(Vec2(-10, 50), Vec2(110, 50), 100, 100);
  ASSERT_TRUE(c);
  EXPECT_NEAR(c->first.x(), 0.0, 1e-12);
  EXPECT_NEAR(c->second.x(), 100.0, 1e-12);
  EXPECT_FALSE(clip_to_image(Vec2(-10, -5), Vec2(-1, -50), 100, 100));
}

TEST(SceneSim, InvalidConfig) {
  ScenarioConfig cfg;
  cfg.trajectory.n_keyframes = 1;
  EXPECT_THROW(generate_trajectory(cfg), Error);
  cfg = {};
  cfg.outlier_fraction = 1.0;
  EXPECT_THROW(generate_world(cfg), Error);
}

}  // namespace
}  // namespace gpslam
