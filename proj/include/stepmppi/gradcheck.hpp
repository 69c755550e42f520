#pragma once

#include <string>
#include <vector>

#include "stepmppi/benchmark.hpp"
#include "stepmppi/mppi_layer.hpp"
#include "stepmppi/policy.hpp"
#include "stepmppi/training.hpp"

namespace stepmppi {

struct GradcheckReport {
  std::string scope;
  double tolerance = 0.0;
  std::vector<double> errors;  ///< max relative error per trial

  double worst() const {
    double w = 0.0;
    for (double e : errors) w = std::max(w, e);
    return w;
  }
  bool passed() const { return !errors.empty() && worst() < tolerance; }
};

/// Random layer instance on a double integrator with n_u axes.
struct LayerInstance {
  std::shared_ptr<DoubleIntegrator> model;
  CostContext ctx;
  DistributionParams z;
  Vec x;
  Mat eps;
  double lambda = 1.0;
};

inline LayerInstance random_layer_instance(int nu, int k, RngStream& rng) {
  LayerInstance li;
  li.model = std::make_shared<DoubleIntegrator>(nu, 0.1, 10.0);
  const int nx = 2 * nu;
  li.ctx.target = Vec(nx);
  li.ctx.state_weight = Vec(nx);
  for (int i = 0; i < nx; ++i) {
    li.ctx.target[i] = rng.uniform(-0.5, 0.5);
    li.ctx.state_weight[i] = rng.uniform(0.5, 2.0);
  }
  li.ctx.u_ref = Vec::Zero(nu);
  li.ctx.input_weight = Vec::Constant(nu, 0.1);
  li.x = Vec(nx);
  for (int i = 0; i < nx; ++i) li.x[i] = rng.uniform(-1.0, 1.0);
  li.z.mu = Vec(nu);
  li.z.L = Mat::Zero(nu, nu);
  for (int i = 0; i < nu; ++i) {
    li.z.mu[i] = rng.uniform(-1.0, 1.0);
    li.z.L(i, i) = rng.uniform(0.3, 1.0);
    for (int j = 0; j < i; ++j) li.z.L(i, j) = rng.uniform(-0.3, 0.3);
  }
  li.eps = draw_noise(rng, nu, k);
  li.lambda = rng.uniform(0.5, 2.0);
  return li;
}

/// Finite-difference Jacobians of the layer output w.r.t. mu and packed L.
inline LayerJacobians layer_fd_jacobians(const LayerInstance& li, double h = 1e-6) {
  const int nu = li.z.dim();
  const Vec xi;
  auto out_mu = [&](const Vec& mu) {
    DistributionParams z{mu, li.z.L};
    return layer_forward(z, li.x, xi, li.ctx, *li.model, li.eps, li.lambda);
  };
  auto out_l = [&](const Vec& packed) {
    DistributionParams z{li.z.mu, unpack_lower(packed, nu)};
    return layer_forward(z, li.x, xi, li.ctx, *li.model, li.eps, li.lambda);
  };
  return {finite_diff_jacobian(out_mu, li.z.mu, h), finite_diff_jacobian(out_l, pack_lower(li.z.L), h)};
}

/// Analytic vs finite-difference layer Jacobians over n_u in {1,2,3} and
/// K in {1,4,16}, cycling.
inline GradcheckReport gradcheck_layer(int trials, double tol, std::uint64_t seed) {
  GradcheckReport rep{"layer", tol, {}};
  const RngStream root(seed, "gradcheck-layer");
  const int nus[] = {1, 2, 3};
  const int ks[] = {1, 4, 16};
  for (int t = 0; t < trials; ++t) {
    RngStream rng = root.derive(static_cast<std::uint64_t>(t));
    const LayerInstance li = random_layer_instance(nus[t % 3], ks[(t / 3) % 3], rng);
    LayerTape tape;
    layer_forward(li.z, li.x, Vec(), li.ctx, *li.model, li.eps, li.lambda, &tape);
    const LayerJacobians an = layer_backward(tape, li.z, li.lambda);
    const LayerJacobians fd = layer_fd_jacobians(li);
    rep.errors.push_back(std::max(max_rel_error(an.J_mu, fd.J_mu), max_rel_error(an.J_L, fd.J_L)));
  }
  return rep;
}

/// Gradient of phi = a . mu + sum_{i>=j} B_ij L_ij w.r.t. all parameters and
/// the input, on random small networks.
inline GradcheckReport gradcheck_policy(int trials, double tol, std::uint64_t seed) {
  GradcheckReport rep{"policy", tol, {}};
  const RngStream root(seed, "gradcheck-policy");
  for (int t = 0; t < trials; ++t) {
    RngStream rng = root.derive(static_cast<std::uint64_t>(t));
    PolicyShape s;
    s.input_dim = 2 + t % 4;
    s.output_dim = 1 + t % 3;
    s.hidden = {8 + t % 9, 6 + t % 5};
    s.cholesky_head = t % 4 != 3;
    const Vec lo = Vec::Constant(s.output_dim, -2.0), hi = Vec::Constant(s.output_dim, 3.0);
    PolicyParams p = policy_init(s, lo, hi, rng, 0.5, 1.0);
    for (auto* l : p.layers()) {
      for (long i = 0; i < l->b.size(); ++i) l->b[i] = rng.uniform(-0.5, 0.5);
    }
    const Vec in = rng.normal_vec(s.input_dim);
    const Vec a = rng.normal_vec(s.output_dim);
    Mat b = Mat::Zero(s.output_dim, s.output_dim);
    if (s.cholesky_head)
      for (int i = 0; i < s.output_dim; ++i)
        for (int j = 0; j <= i; ++j) b(i, j) = rng.normal();

    auto phi = [&](const PolicyParams& pp, const Vec& x) {
      if (!pp.shape.cholesky_head) return a.dot(dpc_forward(pp, x));
      const DistributionParams z = policy_forward(pp, x);
      return a.dot(z.mu) + b.cwiseProduct(z.L).sum();
    };
    PolicyTape tape;
    if (s.cholesky_head)
      policy_forward(p, in, &tape);
    else
      dpc_forward(p, in, &tape);
    const PolicyGrads g = policy_backward(p, tape, a, s.cholesky_head ? b : Mat());

    const Vec theta = p.flat();
    auto f_theta = [&](const Vec& th) {
      PolicyParams q = p;
      q.set_flat(th);
      Vec r(1);
      r[0] = phi(q, in);
      return r;
    };
    auto f_in = [&](const Vec& x) {
      Vec r(1);
      r[0] = phi(p, x);
      return r;
    };
    const Mat fd_t = finite_diff_jacobian(f_theta, theta, 1e-6);
    const Mat fd_i = finite_diff_jacobian(f_in, in, 1e-6);
    rep.errors.push_back(std::max(max_rel_error(g.params.transpose(), fd_t), max_rel_error(g.input.transpose(), fd_i)));
  }
  return rep;
}

/// Full rollout-loss gradient over all policy parameters against central
/// differences with frozen noise.
inline double rollout_gradient_error(const Benchmark& bench, const TrainConfig& cfg, const Task& task,
                                     std::uint64_t seed, double h = 1e-6) {
  RngStream init(seed, "gradcheck-rollout-init");
  const PolicyShape shape = policy_shape_for(bench, cfg);
  const SystemModel& m = bench.model();
  Vec sigma0 = cfg.sigma0.size() ? cfg.sigma0 : Vec(0.25 * m.u_half());
  PolicyParams p = policy_init(shape, m.u_min(), m.u_max(), init, sigma0, cfg.mean_scale);
  const Normalization norm = Normalization::identity(shape.input_dim);
  const RngStream noise(seed, "gradcheck-rollout-noise");
  auto loss = [&](const PolicyParams& q) {
    return cfg.method == Method::StepMppi ? stepmppi_rollout_loss(bench, q, norm, task, cfg, noise)
                                          : dpc_rollout_loss(bench, q, norm, task, cfg);
  };
  const RolloutLoss r = loss(p);
  const Vec theta = p.flat();
  auto f = [&](const Vec& th) {
    PolicyParams q = p;
    q.set_flat(th);
    Vec v(1);
    v[0] = loss(q).loss;
    return v;
  };
  const Mat fd = finite_diff_jacobian(f, theta, h);
  return max_rel_error(r.grad.transpose(), fd);
}

/// Step-MPPI (H = 5, K = 4, 2 x 16 net) and DPC (H = 3) rollouts on the
/// double integrator.
inline GradcheckReport gradcheck_rollout(int trials, double tol, std::uint64_t seed) {
  GradcheckReport rep{"rollout", tol, {}};
  const auto bench = build_benchmark("double_integrator", {{"axes", 2}});
  const RngStream root(seed, "gradcheck-rollout");
  for (int t = 0; t < trials; ++t) {
    RngStream rng = root.derive(static_cast<std::uint64_t>(t));
    const Task task = bench->sample_task(rng, "id");
    TrainConfig cfg;
    cfg.hidden = {16, 16};
    cfg.gamma = 1e-2;
    cfg.method = t % 2 == 0 ? Method::StepMppi : Method::Dpc;
    cfg.horizon = cfg.method == Method::StepMppi ? 5 : 3;
    cfg.samples = 4;
    rep.errors.push_back(rollout_gradient_error(*bench, cfg, task, seed * 1000 + static_cast<std::uint64_t>(t)));
  }
  return rep;
}

}  // namespace stepmppi
