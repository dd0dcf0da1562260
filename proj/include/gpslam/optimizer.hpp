#pragma once

// Levenberg-Marquardt over a FactorGraph with Huber-reweighted normal
// equations assembled sparsely and solved by simplicial LDLT.

#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>

#include <algorithm>
#include <map>
#include <set>
#include <vector>

#include "gpslam/factor_graph.hpp"

namespace gpslam {

struct OptimizerOptions {
  int max_iterations = 100;
  double lambda_init = 1e-4;
  double lambda_scale = 10.0;
  double rel_tol = 1e-8;
  double abs_tol = 1e-10;   // gradient infinity norm
  double step_tol = 1e-12;  // absolute step norm
  std::set<VarRef> fixed;
};

struct OptimizationReport {
  Values values;
  double initial_cost = 0.0;
  double final_cost = 0.0;
  int iterations = 0;
  bool converged = false;
  CostBreakdown initial_breakdown;
  CostBreakdown final_breakdown;
  std::vector<double> cost_trace;  // cost after each accepted step, starting with the initial cost
  bool gp_unit_norm_held = true;
};

/// Maps free variables to columns of the reduced system.
class VariableIndex {
 public:
  VariableIndex(const FactorGraph& g, const std::set<VarRef>& fixed) {
    std::set<VarRef> touched;
    g.for_each_factor([&](const auto& f) {
      for (const auto& b : f.blocks()) touched.insert(b);
    });
    for (const auto& v : touched) {
      if (fixed.count(v)) continue;
      offsets_[v] = size_;
      size_ += tangent_dim(v.type);
    }
  }

  int size() const { return size_; }

  /// Column offset, or -1 when the variable is fixed or untouched.
  int offset(const VarRef& v) const {
    auto it = offsets_.find(v);
    return it == offsets_.end() ? -1 : it->second;
  }

  const std::map<VarRef, int>& offsets() const { return offsets_; }

 private:
  std::map<VarRef, int> offsets_;
  int size_ = 0;
};

/// Applies a stacked tangent step to every free variable.
inline Values retract_values(const Values& v, const VariableIndex& index, const Eigen::VectorXd& dx) {
  Values out = v;
  for (const auto& [ref, off] : index.offsets()) {
    switch (ref.type) {
      case VarType::kPose:
        out.poses[ref.key] = retract_pose(v.poses.at(ref.key), Vec6(dx.segment<6>(off)));
        break;
      case VarType::kPoint:
        out.points[ref.key] = v.points.at(ref.key) + dx.segment<3>(off);
        break;
      case VarType::kLine:
        out.lines[ref.key] = retract_line(v.lines.at(ref.key), Vec4(dx.segment<4>(off)));
        break;
      case VarType::kGp:
        out.gps[ref.key] = gp_retract(v.gps.at(ref.key), dx(off), dx(off + 1));
        break;
    }
  }
  return out;
}

struct NormalEquations {
  Eigen::SparseMatrix<double> hessian;  // J^T W J, upper and lower
  Eigen::VectorXd gradient;             // J^T W r
};

/// Gauss-Newton normal equations with Huber IRLS weights.
inline NormalEquations build_normal_equations(const FactorGraph& g, const Values& v,
                                              const VariableIndex& index) {
  std::vector<Eigen::Triplet<double>> trip;
  Eigen::VectorXd grad = Eigen::VectorXd::Zero(index.size());
  g.for_each_factor([&](const auto& f) {
    const auto lin = linearize(f, v);
    if (!lin.active) return;
    const auto r = (f.sqrt_information * lin.residual).eval();
    const auto j = (f.sqrt_information * lin.jacobian).eval();
    const double w = f.huber_delta > 0 ? huber_weight(r.squaredNorm(), f.huber_delta) : 1.0;
    const auto blocks = f.blocks();
    int col_a = 0;
    for (const auto& a : blocks) {
      const int da = tangent_dim(a.type);
      const int oa = index.offset(a);
      if (oa >= 0) {
        grad.segment(oa, da) += w * j.middleCols(col_a, da).transpose() * r;
        int col_b = 0;
        for (const auto& b : blocks) {
          const int db = tangent_dim(b.type);
          const int ob = index.offset(b);
          if (ob >= 0) {
            const Eigen::MatrixXd hab = w * j.middleCols(col_a, da).transpose() * j.middleCols(col_b, db);
            for (int r0 = 0; r0 < da; ++r0)
              for (int c0 = 0; c0 < db; ++c0) trip.emplace_back(oa + r0, ob + c0, hab(r0, c0));
          }
          col_b += db;
        }
      }
      col_a += da;
    }
  });
  NormalEquations ne;
  ne.hessian.resize(index.size(), index.size());
  ne.hessian.setFromTriplets(trip.begin(), trip.end());
  ne.gradient = std::move(grad);
  return ne;
}

/// Solves (H + lambda * D) dx = -g with D = clamped diag(H).
/// Returns false when the factorization fails.
inline bool solve_damped(const NormalEquations& ne, double lambda, Eigen::VectorXd& dx) {
  Eigen::SparseMatrix<double> a = ne.hessian;
  for (int i = 0; i < a.rows(); ++i) {
    const double d = std::clamp(ne.hessian.coeff(i, i), 1e-6, 1e32);
    a.coeffRef(i, i) += lambda * d;
  }
  Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> ldlt;
  ldlt.compute(a);
  if (ldlt.info() != Eigen::Success) return false;
  dx = ldlt.solve(-ne.gradient);
  return ldlt.info() == Eigen::Success && dx.allFinite();
}

inline bool gps_unit(const Values& v) {
  return std::all_of(v.gps.begin(), v.gps.end(),
                     [](const auto& kv) { return std::abs(kv.second.norm() - 1.0) < 1e-12; });
}

/// Minimizes the total robust cost of `g` starting from `g.values`.
/// When the graph has poses, at least one pose, point or line must be held
/// fixed to anchor the world frame (GP directions alone leave translation free).
inline OptimizationReport optimize(const FactorGraph& g, const OptimizerOptions& opt) {
  if (!g.values.poses.empty()) {
    const bool anchored = std::any_of(opt.fixed.begin(), opt.fixed.end(), [&](const VarRef& r) {
      return r.type != VarType::kGp && g.values.contains(r);
    });
    if (!anchored) throw Error(ErrorCode::kGaugeUnfixed);
  }
  const VariableIndex index(g, opt.fixed);

  OptimizationReport rep;
  rep.values = g.values;
  rep.initial_breakdown = cost_breakdown(g, rep.values);
  rep.initial_cost = rep.initial_breakdown.total();
  double cost = rep.initial_cost;
  rep.cost_trace.push_back(cost);
  double lambda = opt.lambda_init;

  if (index.size() == 0) {
    rep.converged = true;
  }
  for (int iter = 0; iter < opt.max_iterations && !rep.converged; ++iter) {
    const NormalEquations ne = build_normal_equations(g, rep.values, index);
    rep.iterations = iter + 1;
    if (ne.gradient.lpNorm<Eigen::Infinity>() < opt.abs_tol) {
      rep.converged = true;
      break;
    }
    bool accepted = false;
    while (!accepted) {
      Eigen::VectorXd dx;
      if (!solve_damped(ne, lambda, dx)) {
        lambda *= opt.lambda_scale;
        if (lambda > 1e16) break;
        continue;
      }
      Values candidate = retract_values(rep.values, index, dx);
      rep.gp_unit_norm_held = rep.gp_unit_norm_held && gps_unit(candidate);
      const double new_cost = cost_breakdown(g, candidate).total();
      if (new_cost < cost) {
        const double rel = (cost - new_cost) / std::max(cost, 1e-300);
        rep.values = std::move(candidate);
        cost = new_cost;
        rep.cost_trace.push_back(cost);
        lambda = std::max(lambda / opt.lambda_scale, 1e-12);
        accepted = true;
        if (rel < opt.rel_tol || dx.norm() < opt.step_tol) rep.converged = true;
      } else {
        lambda *= opt.lambda_scale;
        if (lambda > 1e16) break;
        if (dx.norm() < opt.step_tol) break;
      }
    }
    if (!accepted) {
      // No decrease is achievable: stationary up to numerical precision.
      rep.converged = true;
    }
  }
  rep.final_breakdown = cost_breakdown(g, rep.values);
  rep.final_cost = rep.final_breakdown.total();
  return rep;
}

}  // namespace gpslam
