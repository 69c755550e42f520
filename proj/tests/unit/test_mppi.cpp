#include <gtest/gtest.h>

#include <cmath>

#include "stepmppi/benchmark.hpp"
#include "stepmppi/gradcheck.hpp"
#include "stepmppi/mppi.hpp"
#include "stepmppi/mppi_layer.hpp"

using namespace stepmppi;

namespace {

Vec v(std::initializer_list<double> xs) {
  Vec out(static_cast<long>(xs.size()));
  long i = 0;
  for (double x : xs) out[i++] = x;
  return out;
}

CostContext zero_cost(int nx, int nu) {
  CostContext c;
  c.target = Vec::Zero(nx);
  c.state_weight = Vec::Zero(nx);
  c.u_ref = Vec::Zero(nu);
  c.input_weight = Vec::Zero(nu);
  return c;
}

CostContext di_cost() {
  CostContext c;
  c.target = Vec::Zero(2);
  c.state_weight = v({1.0, 0.1});
  c.u_ref = Vec::Zero(1);
  c.input_weight = v({0.1});
  return c;
}

SampleSet sample_set(std::vector<Mat> controls) {
  SampleSet s;
  s.noises.assign(controls.size(), Mat::Zero(controls[0].rows(), controls[0].cols()));
  s.controls = std::move(controls);
  return s;
}

Mat row(std::initializer_list<double> xs) { return v(xs).transpose(); }

}  // namespace

// --- multi-step MPPI -------------------------------------------------------

TEST(SampleSequences, FloorCovarianceCollapsesToMean) {
  DoubleIntegrator m(2, 0.1, 10.0);
  const MppiPlan plan = MppiPlan::constant(5, v({0.3, -0.7}), kDiagFloor * Mat::Identity(2, 2));
  const SampleSet s = sample_sequences(plan, 50, RngStream(1), m);
  for (const auto& u : s.controls)
    for (int h = 0; h < 5; ++h) EXPECT_LT((u.col(h) - plan.mean[h]).cwiseAbs().maxCoeff(), 1e-2);
}

TEST(SampleSequences, SeedReproducible) {
  DoubleIntegrator m(1, 0.1, 10.0);
  const MppiPlan plan = MppiPlan::constant(4, v({0.0}), Mat::Identity(1, 1));
  const SampleSet a = sample_sequences(plan, 20, RngStream(3, "s"), m), b = sample_sequences(plan, 20, RngStream(3, "s"), m);
  for (int i = 0; i < 20; ++i) {
    EXPECT_EQ(a.controls[i], b.controls[i]);
    EXPECT_EQ(a.noises[i], b.noises[i]);
  }
}

TEST(SampleSequences, SampleMeanWithinCltBound) {
  DoubleIntegrator m(2, 0.1, 100.0);
  const Vec mu = v({0.5, -1.0});
  Mat l(2, 2);
  l << 1.0, 0.0, 0.4, 0.8;
  const MppiPlan plan = MppiPlan::constant(3, mu, l);
  const int n = 100000;
  const SampleSet s = sample_sequences(plan, n, RngStream(9), m);
  const Vec sd = (l * l.transpose()).diagonal().cwiseSqrt();
  for (int h = 0; h < 3; ++h) {
    Vec mean = Vec::Zero(2);
    for (const auto& u : s.controls) mean += u.col(h);
    mean /= n;
    for (int i = 0; i < 2; ++i) EXPECT_LT(std::abs(mean[i] - mu[i]), 4.0 * sd[i] / std::sqrt(n));
  }
}

TEST(SampleSequences, SamplesRespectInputBounds) {
  DoubleIntegrator m(1, 0.1, 0.5);
  const SampleSet s = sample_sequences(MppiPlan::constant(6, v({0.4}), 3.0 * Mat::Identity(1, 1)), 200, RngStream(2), m);
  for (const auto& u : s.controls) EXPECT_LE(u.cwiseAbs().maxCoeff(), 0.5);
}

TEST(RolloutAndWeight, SingleSampleHasUnitWeight) {
  DoubleIntegrator m(1, 0.1, 10.0);
  const RolloutResult r = rollout_and_weight(m, v({1, 0}), sample_set({row({0.3, 0.1})}),
                                             std::vector<CostContext>(2, di_cost()), std::vector<Vec>(2), 1.0);
  EXPECT_EQ(r.weights, v({1.0}));
}

TEST(RolloutAndWeight, IdenticalSamplesSplitEvenly) {
  DoubleIntegrator m(1, 0.1, 10.0);
  const RolloutResult r = rollout_and_weight(m, v({1, 0}), sample_set({row({0.3, 0.1}), row({0.3, 0.1})}),
                                             std::vector<CostContext>(2, di_cost()), std::vector<Vec>(2), 1.0);
  EXPECT_DOUBLE_EQ(r.weights[0], 0.5);
  EXPECT_DOUBLE_EQ(r.weights[1], 0.5);
}

TEST(RolloutAndWeight, HandComputedCostsAndWeights) {
  DoubleIntegrator m(1, 0.1, 10.0);
  const std::vector<double> us = {-1.0, 0.0, 2.0};
  std::vector<Mat> seqs;
  for (double u : us) seqs.push_back(row({u}));
  const double lambda = 0.05;
  const RolloutResult r =
      rollout_and_weight(m, v({1, 0}), sample_set(seqs), {di_cost()}, std::vector<Vec>(1), lambda);
  Vec costs(3);
  for (int i = 0; i < 3; ++i) {
    const double p = 1.0 + 0.005 * us[i], vel = 0.1 * us[i];
    costs[i] = p * p + 0.1 * vel * vel + 0.1 * us[i] * us[i];
  }
  EXPECT_LT((r.costs - costs).cwiseAbs().maxCoeff(), 1e-14);
  EXPECT_LT((r.weights - softmax_neg_scaled(costs, lambda)).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(UpdatePlan, SymmetricSamplesKeepMean) {
  const MppiPlan plan = MppiPlan::constant(2, v({0.7}), Mat::Identity(1, 1));
  const MppiPlan next = update_plan(plan, sample_set({row({0.9, 0.2}), row({0.5, -0.2})}), v({0.5, 0.5}), MppiConfig{});
  EXPECT_NEAR(next.mean[0][0], 0.7, 1e-15);
  EXPECT_NEAR(next.mean[1][0], 0.0, 1e-15);
}

TEST(UpdatePlan, PointMassSelectsSample) {
  const MppiPlan plan = MppiPlan::constant(3, v({0.0}), Mat::Identity(1, 1));
  const MppiPlan next =
      update_plan(plan, sample_set({row({1, 2, 3}), row({4, 5, 6}), row({7, 8, 9})}), v({0, 1, 0}), MppiConfig{});
  for (int h = 0; h < 3; ++h) EXPECT_DOUBLE_EQ(next.mean[h][0], 4.0 + h);
}

TEST(UpdatePlan, ConvexCombination) {
  const MppiPlan plan = MppiPlan::constant(1, v({0.0}), Mat::Identity(1, 1));
  const MppiPlan next = update_plan(plan, sample_set({row({1}), row({-2}), row({4})}), v({0.2, 0.3, 0.5}), MppiConfig{});
  EXPECT_NEAR(next.mean[0][0], 0.2 - 0.6 + 2.0, 1e-15);
}

TEST(UpdatePlan, CovarianceAroundNewMeanWithFloor) {
  MppiConfig cfg;
  cfg.update_covariance = true;
  const MppiPlan plan = MppiPlan::constant(1, v({0.0}), Mat::Identity(1, 1));
  const MppiPlan next = update_plan(plan, sample_set({row({1}), row({3})}), v({0.5, 0.5}), cfg);
  // variance 1 around mean 2, plus floor^2
  EXPECT_NEAR(next.chol[0](0, 0), std::sqrt(1.0 + kDiagFloor * kDiagFloor), 1e-12);
}

TEST(UpdatePlan, RejectsUnnormalizedWeights) {
  const MppiPlan plan = MppiPlan::constant(1, v({0.0}), Mat::Identity(1, 1));
  EXPECT_THROW(update_plan(plan, sample_set({row({1}), row({3})}), v({0.5, 0.6}), MppiConfig{}), InvalidArgument);
}

TEST(ShiftPlan, RepeatsLastEntry) {
  MppiPlan plan = MppiPlan::constant(3, v({0.0}), Mat::Identity(1, 1));
  for (int h = 0; h < 3; ++h) plan.mean[h][0] = h + 1.0;
  shift_plan(plan);
  EXPECT_EQ(plan.mean[0][0], 2.0);
  EXPECT_EQ(plan.mean[1][0], 3.0);
  EXPECT_EQ(plan.mean[2][0], 3.0);
}

TEST(MppiSolver, ZeroCostKeepsMeanInExpectation) {
  auto m = std::make_shared<DoubleIntegrator>(1, 0.1, 100.0);
  MppiConfig cfg;
  cfg.horizon = 4;
  cfg.samples = 20000;
  cfg.sigma = v({1.0});
  cfg.warm_start = false;
  MppiSolver solver(m, cfg);
  const Vec u = solver.control(v({1, 0}), std::vector<CostContext>(4, zero_cost(2, 1)), std::vector<Vec>(4), RngStream(5));
  EXPECT_LT(std::abs(u[0]), 4.0 / std::sqrt(20000.0));
}

TEST(MppiSolver, DrivesDoubleIntegratorTowardOrigin) {
  auto m = std::make_shared<DoubleIntegrator>(1, 0.1, 10.0);
  MppiConfig cfg;
  cfg.horizon = 20;
  cfg.samples = 512;
  cfg.lambda = 0.3;
  cfg.sigma = v({1.0});
  MppiSolver solver(m, cfg);
  Vec x = v({1.0, 0.0});
  for (int t = 0; t < 60; ++t)
    x = m->step(x, solver.control(x, std::vector<CostContext>(20, di_cost()), std::vector<Vec>(20), RngStream(1).derive(t)),
                Vec());
  EXPECT_LT(x.norm(), 0.1);
}

TEST(MppiSolver, DeterministicTrace) {
  auto run = [] {
    auto m = std::make_shared<DoubleIntegrator>(1, 0.1, 10.0);
    MppiConfig cfg;
    cfg.horizon = 8;
    cfg.samples = 64;
    MppiSolver solver(m, cfg);
    Vec x = v({1.0, 0.0});
    std::vector<double> trace;
    for (int t = 0; t < 10; ++t) {
      const Vec u = solver.control(x, std::vector<CostContext>(8, di_cost()), std::vector<Vec>(8), RngStream(4).derive(t));
      trace.push_back(u[0]);
      x = m->step(x, u, Vec());
    }
    return trace;
  };
  EXPECT_EQ(run(), run());
}

TEST(MppiConfig, Validation) {
  MppiConfig c;
  c.lambda = 0.0;
  EXPECT_THROW(c.validate(1), InvalidArgument);
  c = MppiConfig{};
  c.sigma = v({1.0, -1.0});
  EXPECT_THROW(c.validate(2), InvalidArgument);
}

// --- single-step layer -----------------------------------------------------

TEST(LayerForward, SingleSampleIsReparameterizedDraw) {
  DoubleIntegrator m(2, 0.1, 10.0);
  Mat l(2, 2);
  l << 0.5, 0, 0.2, 0.3;
  const DistributionParams z{v({0.1, -0.2}), l};
  Mat eps(2, 1);
  eps << 0.7, -1.1;
  CostContext ctx = zero_cost(4, 2);
  ctx.state_weight = Vec::Ones(4);
  const Vec u = layer_forward(z, v({1, 2, 3, 4}), Vec(), ctx, m, eps, 1.0);
  EXPECT_LT((u - (z.mu + l * eps.col(0))).norm(), 1e-15);
}

TEST(LayerForward, EqualCostsGiveSampleMean) {
  DoubleIntegrator m(1, 0.1, 10.0);
  RngStream rng(3);
  const Mat eps = draw_noise(rng, 1, 10);
  const DistributionParams z{v({0.4}), 0.6 * Mat::Identity(1, 1)};
  const Vec u = layer_forward(z, v({0, 0}), Vec(), zero_cost(2, 1), m, eps, 1.0);
  EXPECT_NEAR(u[0], 0.4 + 0.6 * eps.mean(), 1e-15);
}

TEST(LayerForward, HandEvaluatedThreeSamples) {
  DoubleIntegrator m(1, 0.1, 10.0);
  const DistributionParams z{v({0.5}), 2.0 * Mat::Identity(1, 1)};
  Mat eps(1, 3);
  eps << -1.0, 0.0, 1.0;
  const Vec x = v({1.0, -0.5});
  const double lambda = 0.1;
  LayerTape tape;
  const Vec out = layer_forward(z, x, Vec(), di_cost(), m, eps, lambda, &tape);
  double s[3], u[3], wsum = 0.0;
  for (int k = 0; k < 3; ++k) {
    u[k] = 0.5 + 2.0 * eps(0, k);
    const double p = 1.0 - 0.05 + 0.005 * u[k], vel = -0.5 + 0.1 * u[k];
    s[k] = p * p + 0.1 * vel * vel + 0.1 * u[k] * u[k];
  }
  const double smin = std::min({s[0], s[1], s[2]});
  double num = 0.0;
  for (int k = 0; k < 3; ++k) {
    const double e = std::exp(-(s[k] - smin) / lambda);
    wsum += e;
    num += e * u[k];
  }
  EXPECT_NEAR(out[0], num / wsum, 1e-14);
  EXPECT_NEAR(tape.costs[1], s[1], 1e-15);
}

TEST(LayerForward, DivergedSampleReportsIndex) {
  DoubleIntegrator m(1, 0.1, 10.0);
  Mat eps(1, 2);
  eps << 0.0, INFINITY;
  try {
    layer_forward(DistributionParams{v({0.0}), Mat::Identity(1, 1)}, v({0, 0}), Vec(), di_cost(), m, eps, 1.0);
    FAIL() << "expected DivergedState";
  } catch (const DivergedState& e) {
    EXPECT_NE(std::string(e.what()).find("sample 1"), std::string::npos) << e.what();
  }
}

TEST(LayerBackward, SingleSampleJacobians) {
  RngStream rng(4);
  LayerInstance li = random_layer_instance(3, 1, rng);
  LayerTape tape;
  layer_forward(li.z, li.x, Vec(), li.ctx, *li.model, li.eps, li.lambda, &tape);
  const LayerJacobians j = layer_backward(tape, li.z, li.lambda);
  EXPECT_LT((j.J_mu - Mat::Identity(3, 3)).cwiseAbs().maxCoeff(), 1e-15);
  // J_L . dL = dL eps
  const Vec dl = rng.normal_vec(6);
  EXPECT_LT((j.J_L * dl - unpack_lower(dl, 3) * li.eps.col(0)).norm(), 1e-14);
}

TEST(LayerBackward, ZeroCostGivesIdentity) {
  DoubleIntegrator m(2, 0.1, 10.0);
  RngStream rng(6);
  const DistributionParams z{v({0.2, 0.1}), Mat::Identity(2, 2)};
  LayerTape tape;
  layer_forward(z, v({0, 0, 0, 0}), Vec(), zero_cost(4, 2), m, draw_noise(rng, 2, 8), 1.0, &tape);
  const LayerJacobians j = layer_backward(tape, z, 1.0);
  EXPECT_LT((j.J_mu - Mat::Identity(2, 2)).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(LayerBackward, MatchesFiniteDifferences) {
  const GradcheckReport r = gradcheck_layer(20, 1e-5, 77);
  EXPECT_TRUE(r.passed()) << r.worst();
}

TEST(LayerBackward, LargeTemperatureLimit) {
  RngStream rng(10);
  LayerInstance li = random_layer_instance(2, 16, rng);
  li.lambda = 1e8;
  LayerTape tape;
  layer_forward(li.z, li.x, Vec(), li.ctx, *li.model, li.eps, li.lambda, &tape);
  EXPECT_LT((layer_backward(tape, li.z, li.lambda).J_mu - Mat::Identity(2, 2)).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(LayerBackward, TapeMismatchThrows) {
  RngStream rng(12);
  LayerInstance li = random_layer_instance(2, 4, rng);
  LayerTape tape;
  layer_forward(li.z, li.x, Vec(), li.ctx, *li.model, li.eps, li.lambda, &tape);
  EXPECT_THROW(layer_backward(tape, li.z, li.lambda * 2.0), InvalidArgument);
  DistributionParams other{v({0.0, 0.0, 0.0}), Mat::Identity(3, 3)};
  EXPECT_THROW(layer_backward(tape, other, li.lambda), InvalidArgument);
}

TEST(LayerVjp, ZeroUpstreamAndBasisRows) {
  RngStream rng(14);
  LayerInstance li = random_layer_instance(3, 16, rng);
  LayerTape tape;
  layer_forward(li.z, li.x, Vec(), li.ctx, *li.model, li.eps, li.lambda, &tape);
  const LayerGrads zero = layer_vjp(tape, li.z, li.lambda, Vec::Zero(3));
  EXPECT_EQ(zero.grad_mu.norm() + zero.grad_L.norm(), 0.0);
  const LayerJacobians j = layer_backward(tape, li.z, li.lambda);
  for (int i = 0; i < 3; ++i) {
    const LayerGrads g = layer_vjp(tape, li.z, li.lambda, Vec::Unit(3, i));
    EXPECT_LT((g.grad_mu.transpose() - j.J_mu.row(i)).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(LayerVjp, MatchesDenseContraction) {
  RngStream rng(15);
  for (int trial = 0; trial < 30; ++trial) {
    LayerInstance li = random_layer_instance(1 + trial % 3, 1 + trial % 16, rng);
    LayerTape tape;
    layer_forward(li.z, li.x, Vec(), li.ctx, *li.model, li.eps, li.lambda, &tape);
    const LayerJacobians j = layer_backward(tape, li.z, li.lambda);
    const Vec up = rng.normal_vec(li.z.dim());
    const LayerGrads g = layer_vjp(tape, li.z, li.lambda, up);
    EXPECT_LT((g.grad_mu - j.J_mu.transpose() * up).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_LT((pack_lower(g.grad_L) - j.J_L.transpose() * up).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(LayerVjp, StateGradientMatchesFiniteDifferences) {
  RngStream rng(16);
  for (int trial = 0; trial < 10; ++trial) {
    LayerInstance li = random_layer_instance(2, 8, rng);
    LayerTape tape;
    layer_forward(li.z, li.x, Vec(), li.ctx, *li.model, li.eps, li.lambda, &tape);
    const Vec up = rng.normal_vec(2);
    const Vec gx = layer_vjp(tape, li.z, li.lambda, up, li.model.get()).grad_x;
    auto f = [&](const Vec& x) {
      Vec o(1);
      o[0] = up.dot(layer_forward(li.z, x, Vec(), li.ctx, *li.model, li.eps, li.lambda));
      return o;
    };
    EXPECT_LT(max_rel_error(gx.transpose(), finite_diff_jacobian(f, li.x)), 1e-6);
  }
}
