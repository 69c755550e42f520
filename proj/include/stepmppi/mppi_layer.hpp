#pragma once

#include <vector>

#include "stepmppi/cost.hpp"
#include "stepmppi/env.hpp"
#include "stepmppi/rng.hpp"

namespace stepmppi {

/// Per-step sampling distribution z = (mu, L).
struct DistributionParams {
  Vec mu;
  Mat L;

  int dim() const { return static_cast<int>(mu.size()); }
};

/// Everything the backward pass needs from one forward evaluation.
struct LayerTape {
  Vec x;        ///< x_h
  Vec xi;       ///< xi_h
  Mat eps;      ///< n_u x K
  Mat u;        ///< n_u x K samples
  Mat x_next;   ///< n_x x K
  Vec costs;    ///< s^(k)
  Vec weights;  ///< w_k
  Mat grad_u;   ///< n_u x K, total derivative of s^(k) w.r.t. u^(k)
  Mat grad_xn;  ///< n_x x K, dc/dx_next at each sample
  double lambda = 1.0;
  Vec output;   ///< sum_k w_k u^(k)

  int samples() const { return static_cast<int>(u.cols()); }
};

/// Single-step MPPI update with caller-supplied noises (n_u x K).
inline Vec layer_forward(const DistributionParams& z, const Vec& x, const Vec& xi, const CostContext& ctx_next,
                         const SystemModel& model, const Mat& eps, double lambda, LayerTape* tape = nullptr) {
  const int nu = model.input_dim();
  const int k_count = static_cast<int>(eps.cols());
  if (z.mu.size() != nu || z.L.rows() != nu || z.L.cols() != nu || eps.rows() != nu)
    throw InvalidArgument("layer_forward: distribution/noise dimension mismatch");
  if (k_count < 1) throw InvalidArgument("layer_forward: K must be >= 1");
  if (x.size() != model.state_dim()) throw InvalidArgument("layer_forward: state dimension mismatch");

  Mat u = (z.L.triangularView<Eigen::Lower>() * eps).colwise() + z.mu;
  Mat xn(model.state_dim(), k_count);
  Vec costs(k_count);
  for (int k = 0; k < k_count; ++k) {
    auto col = xn.col(k);
    model.step_into(x, u.col(k), xi, col);
    if (!col.allFinite())
      throw DivergedState("layer_forward: non-finite state for sample " + std::to_string(k), k);
    costs[k] = stage_cost(col, u.col(k), ctx_next);
  }
  const Vec w = softmax_neg_scaled(costs, lambda);
  Vec out = u * w;
  if (tape) {
    tape->x = x;
    tape->xi = xi;
    tape->eps = eps;
    tape->grad_u.resize(nu, k_count);
    tape->grad_xn.resize(model.state_dim(), k_count);
    for (int k = 0; k < k_count; ++k) {
      auto [gx, gu] = stage_cost_grads(xn.col(k), u.col(k), ctx_next);
      tape->grad_u.col(k) = gu + model.vjp_u(x, u.col(k), xi, gx);
      tape->grad_xn.col(k) = gx;
    }
    tape->u = std::move(u);
    tape->x_next = std::move(xn);
    tape->costs = std::move(costs);
    tape->weights = w;
    tape->lambda = lambda;
    tape->output = out;
  }
  return out;
}

/// Draws K standard-normal noise columns from `rng`.
inline Mat draw_noise(RngStream& rng, int nu, int k_count) {
  Mat eps(nu, k_count);
  for (int k = 0; k < k_count; ++k)
    for (int i = 0; i < nu; ++i) eps(i, k) = rng.normal();
  return eps;
}

inline Vec layer_forward(const DistributionParams& z, const Vec& x, const Vec& xi, const CostContext& ctx_next,
                         const SystemModel& model, int k_count, double lambda, RngStream& rng,
                         LayerTape* tape = nullptr) {
  return layer_forward(z, x, xi, ctx_next, model, draw_noise(rng, model.input_dim(), k_count), lambda, tape);
}

namespace detail {
inline void check_tape(const LayerTape& t, const DistributionParams& z, double lambda) {
  if (t.samples() < 1 || t.u.rows() != z.dim() || t.eps.rows() != z.dim() || t.weights.size() != t.samples())
    throw InvalidArgument("layer: tape does not match the distribution parameters");
  if (lambda != t.lambda) throw InvalidArgument("layer: lambda differs from the forward pass");
}
}  // namespace detail

struct LayerJacobians {
  Mat J_mu;  ///< n_u x n_u
  Mat J_L;   ///< n_u x tri_size(n_u), columns over packed lower entries of L
};

/// Dense Jacobians of the layer output w.r.t. mu and the lower entries of L,
/// with the noises held fixed.
inline LayerJacobians layer_backward(const LayerTape& t, const DistributionParams& z, double lambda) {
  detail::check_tape(t, z, lambda);
  const int nu = z.dim();
  const int kc = t.samples();
  const Vec& w = t.weights;
  const Vec g_bar = t.grad_u * w;
  LayerJacobians j{Mat::Identity(nu, nu), Mat::Zero(nu, tri_size(nu))};
  for (int k = 0; k < kc; ++k)
    j.J_mu.noalias() -= (w[k] / lambda) * t.u.col(k) * (t.grad_u.col(k) - g_bar).transpose();
  for (int r = 0; r < nu; ++r) {
    for (int c = 0; c <= r; ++c) {
      const int col = tri_index(r, c);
      double ge_bar = 0.0;
      for (int k = 0; k < kc; ++k) ge_bar += w[k] * t.grad_u(r, k) * t.eps(c, k);
      Vec d = Vec::Zero(nu);
      for (int k = 0; k < kc; ++k) {
        d[r] += w[k] * t.eps(c, k);
        d.noalias() -= (w[k] / lambda) * (t.grad_u(r, k) * t.eps(c, k) - ge_bar) * t.u.col(k);
      }
      j.J_L.col(col) = d;
    }
  }
  return j;
}

struct LayerGrads {
  Vec grad_mu;
  Mat grad_L;  ///< lower triangular
  Vec grad_x;  ///< through the sample costs' dependence on x_h (empty unless requested)
};

/// v^T J for upstream v, without forming J_L. With `model` given, also the
/// gradient w.r.t. the layer's state input.
inline LayerGrads layer_vjp(const LayerTape& t, const DistributionParams& z, double lambda, const Vec& v,
                            const SystemModel* model = nullptr) {
  detail::check_tape(t, z, lambda);
  if (v.size() != z.dim()) throw InvalidArgument("layer_vjp: upstream dimension mismatch");
  const int kc = t.samples();
  const Vec& w = t.weights;
  const Vec beta = t.u.transpose() * v;
  const double beta_bar = w.dot(beta);
  // a_k = w_k (beta_k - beta_bar) / lambda
  const Vec a = w.cwiseProduct((beta.array() - beta_bar).matrix()) / lambda;
  LayerGrads g;
  g.grad_mu = v - t.grad_u * a;
  const Mat left = v * w.transpose() - t.grad_u * a.asDiagonal();  // n_u x K
  g.grad_L = (left * t.eps.transpose()).triangularView<Eigen::Lower>();
  if (model) {
    g.grad_x = Vec::Zero(t.x.size());
    for (int k = 0; k < kc; ++k) {
      if (a[k] == 0.0) continue;
      g.grad_x.noalias() -= a[k] * model->vjp_x(t.x, t.u.col(k), t.xi, t.grad_xn.col(k));
    }
  }
  return g;
}

}  // namespace stepmppi
