#include <gtest/gtest.h>

#include <Eigen/Geometry>

#include "gpslam/optimizer.hpp"
#include "gpslam/vanishing_points.hpp"
#include "test_support.hpp"

namespace gpslam {
namespace {

using testing::make_segment;
using testing::rotation_angle;

const CameraIntrinsics kCam{500.0, 500.0, 320.0, 240.0};

struct Problem {
  FactorGraph graph;
  Values truth;
};

/// Five poses observing points and x-aligned lines tied to one GP.
/// `world` re-expresses every ground-truth quantity in another world frame
/// (x_new = world * x_old) without changing any measurement.
Problem make_problem(unsigned seed, double px_noise, double init_rot_deg, double init_trans,
                     const Pose& world = Pose::identity()) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> ux(-3, 3), uy(-2, 2), uz(4, 8);
  std::normal_distribution<double> n(0.0, 1.0);
  Problem p;
  const Pose to_old = world.inverse();
  for (int i = 0; i < 5; ++i) {
    const Mat3 r_wc = so3_exp<double>(Vec3(0.02 * i, -0.03 * i, 0.01 * i));
    p.truth.poses[i] = Pose::from_camera_center(r_wc, Vec3(0.3 * i, 0.05 * i * i, 0.1 * i)) * to_old;
  }
  for (int j = 0; j < 40; ++j) p.truth.points[j] = world.transform(Vec3(ux(rng), uy(rng), uz(rng)));
  std::vector<std::pair<Vec3, Vec3>> ends;
  for (int j = 0; j < 6; ++j) {
    const Vec3 a(-1.5 + 0.2 * ux(rng), uy(rng), uz(rng));
    ends.emplace_back(world.transform(a), world.transform(Vec3(a + Vec3(3.0, 0, 0))));
    p.truth.lines[j] = PluckerLine::from_points(ends.back().first, ends.back().second);
  }
  p.truth.gps[0] = canonicalize_sign(Vec3(world.rotation * Vec3::UnitX()));

  Values init;
  for (const auto& [k, pose] : p.truth.poses) {
    if (k == 0) {
      init.poses[k] = pose;
      continue;
    }
    const Vec3 w(n(rng), n(rng), n(rng));
    const Vec3 dt(n(rng), n(rng), n(rng));
    Pose q = Pose::from_camera_center(so3_exp<double>(Vec3(world.rotation * w * init_rot_deg * kDegToRad)) *
                                          pose.R_wc(),
                                      pose.center() + world.rotation * dt * init_trans);
    init.poses[k] = q;
  }
  for (const auto& [k, pt] : p.truth.points) init.points[k] = pt + world.rotation * Vec3(n(rng), n(rng), n(rng)) * 0.05;
  for (const auto& [k, l] : p.truth.lines) {
    init.lines[k] = PluckerLine::from_points(ends[k].first + world.rotation * Vec3(n(rng), n(rng), n(rng)) * 0.05,
                                             ends[k].second + world.rotation * Vec3(n(rng), n(rng), n(rng)) * 0.05);
  }
  init.gps[0] = canonicalize_sign(Vec3(world.rotation * so3_exp<double>(Vec3(0, 0.02, 0.01)) * Vec3::UnitX()));
  p.graph.values = init;

  for (const auto& [i, pose] : p.truth.poses) {
    for (const auto& [j, pt] : p.truth.points) {
      PointFactor f;
      f.pose_key = i;
      f.point_key = j;
      f.camera = kCam;
      f.measurement = project_point(pt, pose, kCam) + px_noise * Vec2(n(rng), n(rng));
      p.graph.add(f);
    }
    for (const auto& [j, l] : p.truth.lines) {
      Segment2D s = make_segment(project_point(ends[j].first, pose, kCam) + px_noise * Vec2(n(rng), n(rng)),
                                 project_point(ends[j].second, pose, kCam) + px_noise * Vec2(n(rng), n(rng)), j);
      LineFactor lf;
      lf.pose_key = i;
      lf.line_key = j;
      lf.camera = kCam;
      lf.measurement = s;
      p.graph.add(lf);
      VdAlignFactor vf;
      vf.pose_key = i;
      vf.gp_key = 0;
      vf.camera = kCam;
      vf.measurement = s;
      p.graph.add(vf);
    }
  }
  for (const auto& [j, l] : p.truth.lines) {
    StructFactor sf;
    sf.line_key = j;
    sf.sign = l.direction.dot(p.truth.gps[0]) < 0 ? -1.0 : 1.0;
    p.graph.add(sf);
  }
  return p;
}

OptimizerOptions fix_first_pose() {
  OptimizerOptions o;
  o.fixed.insert({VarType::kPose, 0});
  return o;
}

TEST(Optimize, StationaryAtGroundTruth) {
  Problem p = make_problem(1, 0.0, 0.0, 0.0);
  p.graph.values = p.truth;
  const auto rep = optimize(p.graph, fix_first_pose());
  EXPECT_TRUE(rep.converged);
  EXPECT_LE(rep.iterations, 2);
  EXPECT_LT(rep.final_cost, 1e-12);
  for (const auto& [k, pose] : p.truth.poses) {
    EXPECT_LT(rotation_angle(pose.rotation, rep.values.poses.at(k).rotation), 1e-12);
    EXPECT_LT((pose.translation - rep.values.poses.at(k).translation).norm(), 1e-12);
  }
}

TEST(Optimize, PnpRecovery) {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const Pose truth = Pose::from_camera_center(so3_exp<double>(Vec3(0.1, -0.2, 0.05)), Vec3(0.5, -0.2, 0.3));
  FactorGraph g;
  OptimizerOptions opt;
  for (int j = 0; j < 50; ++j) {
    const Vec3 pc = (3.0 + 5.0 * u(rng)) * back_project(Vec2(20 + 600 * u(rng), 20 + 440 * u(rng)), kCam);
    g.values.points[j] = truth.inverse().transform(pc);
    opt.fixed.insert({VarType::kPoint, j});
  }
  const Vec3 axis = Vec3(0.3, 0.9, -0.2).normalized();
  g.values.poses[0] = Pose::from_camera_center(so3_exp<double>(Vec3(axis * kDegToRad)) * truth.R_wc(),
                                               truth.center() + Vec3(0.03, -0.04, 0.0));
  for (int j = 0; j < 50; ++j) {
    PointFactor f;
    f.point_key = j;
    f.camera = kCam;
    f.measurement = project_point(g.values.points[j], truth, kCam);
    g.add(f);
  }
  const auto rep = optimize(g, opt);
  EXPECT_TRUE(rep.converged);
  const Pose& est = rep.values.poses.at(0);
  EXPECT_LT(rotation_angle(est.rotation, truth.rotation), 1e-6);
  EXPECT_LT((est.center() - truth.center()).norm(), 1e-6);
}

TEST(Optimize, GaugeMustBeFixed) {
  Problem p = make_problem(3, 0.5, 1.0, 0.05);
  try {
    optimize(p.graph, {});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kGaugeUnfixed);
  }
  OptimizerOptions only_gp;
  only_gp.fixed.insert({VarType::kGp, 0});
  EXPECT_THROW(optimize(p.graph, only_gp), Error);
}

TEST(Optimize, CostTraceMonotoneAndGpUnit) {
  Problem p = make_problem(4, 1.0, 2.0, 0.1);
  const auto rep = optimize(p.graph, fix_first_pose());
  ASSERT_GE(rep.cost_trace.size(), 2u);
  for (std::size_t i = 1; i < rep.cost_trace.size(); ++i) EXPECT_LE(rep.cost_trace[i], rep.cost_trace[i - 1]);
  EXPECT_LE(rep.final_cost, rep.initial_cost);
  EXPECT_LT(rep.final_cost, 0.1 * rep.initial_cost);
  EXPECT_TRUE(rep.gp_unit_norm_held);
  EXPECT_NEAR(rep.values.gps.at(0).norm(), 1.0, 1e-12);
  EXPECT_NEAR(rep.final_cost, rep.final_breakdown.total(), 1e-12);
  EXPECT_GT(rep.final_breakdown.vd_align, 0.0);
}

TEST(Optimize, Deterministic) {
  Problem p = make_problem(5, 1.0, 2.0, 0.1);
  const auto a = optimize(p.graph, fix_first_pose());
  const auto b = optimize(p.graph, fix_first_pose());
  EXPECT_EQ(a.final_cost, b.final_cost);
  EXPECT_EQ(a.iterations, b.iterations);
  for (const auto& [k, pose] : a.values.poses) EXPECT_EQ(pose.translation, b.values.poses.at(k).translation);
}

TEST(Optimize, HugeDampingGivesTinyStep) {
  Problem p = make_problem(6, 1.0, 2.0, 0.1);
  const VariableIndex index(p.graph, fix_first_pose().fixed);
  const auto ne = build_normal_equations(p.graph, p.graph.values, index);
  double prev = std::numeric_limits<double>::infinity();
  for (double lambda : {1e-4, 1e0, 1e4, 1e8, 1e12}) {
    Eigen::VectorXd dx;
    ASSERT_TRUE(solve_damped(ne, lambda, dx));
    EXPECT_LT(dx.norm(), prev);
    prev = dx.norm();
  }
  EXPECT_LT(prev, 1e-9);
}

TEST(Optimize, EquivariantUnderWorldTransform) {
  const Pose world = Pose::from_camera_center(so3_exp<double>(Vec3(0.4, -0.7, 1.1)), Vec3(2.0, -1.0, 0.5));
  OptimizerOptions opt = fix_first_pose();
  opt.rel_tol = 1e-15;
  opt.max_iterations = 300;
  const Problem a = make_problem(7, 0.5, 1.0, 0.05);
  const Problem b = make_problem(7, 0.5, 1.0, 0.05, world);
  const auto ra = optimize(a.graph, opt);
  const auto rb = optimize(b.graph, opt);
  // Fixing one pose leaves the monocular scale free, so centers are compared
  // after a similarity alignment.
  const Pose to_old = world.inverse();
  Eigen::Matrix3Xd src(3, ra.values.poses.size()), dst(3, ra.values.poses.size());
  int c = 0;
  for (const auto& [k, pose] : ra.values.poses) {
    const Pose mapped = pose * to_old;
    EXPECT_LT(rotation_angle(mapped.rotation, rb.values.poses.at(k).rotation), 1e-6) << k;
    src.col(c) = mapped.center();
    dst.col(c++) = rb.values.poses.at(k).center();
  }
  const Eigen::Matrix4d sim = Eigen::umeyama(src, dst, true);
  for (int i = 0; i < c; ++i) {
    const Vec3 aligned = sim.topLeftCorner<3, 3>() * src.col(i) + sim.topRightCorner<3, 1>();
    EXPECT_LT((aligned - dst.col(i)).norm(), 1e-6) << i;
  }
  EXPECT_NEAR(ra.final_cost, rb.final_cost, 1e-6 * std::max(1.0, ra.final_cost));
}

}  // namespace
}  // namespace gpslam
