#pragma once

#include <limits>
#include <utility>
#include <vector>

#include "stepmppi/env.hpp"

namespace stepmppi {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

/// lower <= sum_k coeff_k x[index_k] <= upper, softened as
/// weight * max(0, violation)^2.
struct LinearConstraint {
  std::vector<std::pair<int, double>> terms;
  double lower = -kInf;
  double upper = kInf;
  double weight = 0.0;

  double value(const ConstVecRef& x) const {
    double v = 0.0;
    for (const auto& [i, c] : terms) v += c * x[i];
    return v;
  }
  /// Signed excess over the nearest violated side (0 inside).
  double violation(double v) const {
    if (v > upper) return v - upper;
    if (v < lower) return v - lower;
    return 0.0;
  }
};

/// Everything the stage cost c(x_{h+1}, u_h; r_{h+1}) needs for one step.
struct CostContext {
  Vec target;          ///< reference state r
  Vec u_ref;           ///< nominal input
  Vec state_weight;    ///< diagonal of Q
  Vec input_weight;    ///< diagonal of R
  std::vector<LinearConstraint> constraints;  ///< on x_{h+1}
  Vec u_lower;         ///< soft input bounds (empty: none)
  Vec u_upper;
  double input_bound_weight = 0.0;
  Vec preview;         ///< exogenous features for the policy; unused by the cost

  void validate(int nx, int nu) const {
    if (target.size() != nx || state_weight.size() != nx)
      throw InvalidArgument("CostContext: target/state_weight must have state_dim entries");
    if (u_ref.size() != nu || input_weight.size() != nu)
      throw InvalidArgument("CostContext: u_ref/input_weight must have input_dim entries");
    if ((state_weight.array() < 0.0).any() || (input_weight.array() < 0.0).any())
      throw InvalidArgument("CostContext: weights must be nonnegative");
    if (input_bound_weight < 0.0) throw InvalidArgument("CostContext: penalty weight must be >= 0");
    if (input_bound_weight > 0.0 && (u_lower.size() != nu || u_upper.size() != nu))
      throw InvalidArgument("CostContext: soft input bounds must have input_dim entries");
    for (const auto& c : constraints) {
      if (c.weight < 0.0) throw InvalidArgument("CostContext: penalty weight must be >= 0");
      if (!(c.lower <= c.upper)) throw InvalidArgument("CostContext: constraint lower > upper");
      for (const auto& [i, coeff] : c.terms)
        if (i < 0 || i >= nx) throw InvalidArgument("CostContext: constraint index out of range");
    }
  }
};

namespace detail {
inline void check_cost_dims(const ConstVecRef& x, const ConstVecRef& u, const CostContext& ctx) {
  if (x.size() != ctx.target.size() || x.size() != ctx.state_weight.size() ||
      u.size() != ctx.u_ref.size() || u.size() != ctx.input_weight.size())
    throw InvalidArgument("stage_cost: dimension mismatch");
}
}  // namespace detail

/// ||x_next - r||_Q^2 + ||u - u_ref||_R^2 + sum of one-sided quadratic penalties.
inline double stage_cost(const ConstVecRef& x_next, const ConstVecRef& u, const CostContext& ctx) {
  detail::check_cost_dims(x_next, u, ctx);
  double c = 0.0;
  for (long i = 0; i < x_next.size(); ++i) {
    const double w = ctx.state_weight[i];
    if (w != 0.0) {
      const double e = x_next[i] - ctx.target[i];
      c += w * e * e;
    }
  }
  for (long i = 0; i < u.size(); ++i) {
    const double e = u[i] - ctx.u_ref[i];
    c += ctx.input_weight[i] * e * e;
  }
  for (const auto& con : ctx.constraints) {
    const double v = con.violation(con.value(x_next));
    c += con.weight * v * v;
  }
  if (ctx.input_bound_weight > 0.0) {
    for (long i = 0; i < u.size(); ++i) {
      const double v = u[i] > ctx.u_upper[i] ? u[i] - ctx.u_upper[i]
                       : u[i] < ctx.u_lower[i] ? u[i] - ctx.u_lower[i]
                                               : 0.0;
      c += ctx.input_bound_weight * v * v;
    }
  }
  return c;
}

/// (dc/dx_next, dc/du).
inline std::pair<Vec, Vec> stage_cost_grads(const ConstVecRef& x_next, const ConstVecRef& u,
                                            const CostContext& ctx) {
  detail::check_cost_dims(x_next, u, ctx);
  Vec gx = 2.0 * ctx.state_weight.cwiseProduct(x_next - ctx.target);
  Vec gu = 2.0 * ctx.input_weight.cwiseProduct(u - ctx.u_ref);
  for (const auto& con : ctx.constraints) {
    const double v = con.violation(con.value(x_next));
    if (v == 0.0) continue;
    for (const auto& [i, coeff] : con.terms) gx[i] += 2.0 * con.weight * v * coeff;
  }
  if (ctx.input_bound_weight > 0.0) {
    for (long i = 0; i < u.size(); ++i) {
      const double v = u[i] > ctx.u_upper[i] ? u[i] - ctx.u_upper[i]
                       : u[i] < ctx.u_lower[i] ? u[i] - ctx.u_lower[i]
                                               : 0.0;
      gu[i] += 2.0 * ctx.input_bound_weight * v;
    }
  }
  return {std::move(gx), std::move(gu)};
}

/// True if any hard-interpreted constraint is breached by more than tol.
inline bool violates(const ConstVecRef& x_next, const ConstVecRef& u, const CostContext& ctx,
                     double tol = 1e-9) {
  for (const auto& con : ctx.constraints)
    if (con.weight > 0.0 && std::abs(con.violation(con.value(x_next))) > tol) return true;
  if (ctx.input_bound_weight > 0.0)
    for (long i = 0; i < u.size(); ++i)
      if (u[i] > ctx.u_upper[i] + tol || u[i] < ctx.u_lower[i] - tol) return true;
  return false;
}

/// sum_{h=0}^{H-1} c(x_{h+1}, u_h; ctx_h) where ctx_h holds r_{h+1}.
inline double total_cost(const std::vector<Vec>& traj_x, const std::vector<Vec>& traj_u,
                         const std::vector<CostContext>& ctx_seq) {
  if (traj_u.size() != ctx_seq.size() || traj_x.size() != traj_u.size() + 1)
    throw InvalidArgument("total_cost: expected H+1 states, H inputs and H contexts");
  double c = 0.0;
  for (size_t h = 0; h < traj_u.size(); ++h) c += stage_cost(traj_x[h + 1], traj_u[h], ctx_seq[h]);
  return c;
}

/// Total derivative of u -> c(f(x, u; xi), u; r): dc/du + (dc/dx_next) df/du.
inline Vec grad_u_through_dynamics(const SystemModel& model, const Vec& x, const Vec& u,
                                   const Vec& xi, const CostContext& ctx) {
  const Vec x_next = model.step(x, u, xi);
  auto [gx, gu] = stage_cost_grads(x_next, u, ctx);
  return gu + model.vjp_u(x, u, xi, gx);
}

}  // namespace stepmppi
