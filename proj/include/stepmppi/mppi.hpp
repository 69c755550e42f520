#pragma once

#include <algorithm>
#include <vector>

#include "stepmppi/cost.hpp"
#include "stepmppi/env.hpp"
#include "stepmppi/parallel.hpp"
#include "stepmppi/rng.hpp"

namespace stepmppi {

struct MppiConfig {
  int horizon = 20;
  int samples = 1024;
  double lambda = 1.0;
  Vec sigma;  ///< initial per-channel sampling std (empty: 0.5 * half range)
  int iterations = 1;
  bool update_covariance = false;
  bool warm_start = true;
  double diag_floor = kDiagFloor;

  void validate(int nu) const {
    if (horizon < 1 || samples < 1 || iterations < 1)
      throw InvalidArgument("MppiConfig: horizon, samples and iterations must be >= 1");
    if (!(lambda > 0.0)) throw InvalidArgument("MppiConfig: lambda must be positive");
    if (sigma.size() != 0 && (sigma.size() != nu || (sigma.array() <= 0.0).any()))
      throw InvalidArgument("MppiConfig: sigma must have input_dim positive entries");
  }
};

/// Mean and Cholesky factor per horizon step.
struct MppiPlan {
  std::vector<Vec> mean;
  std::vector<Mat> chol;

  int horizon() const { return static_cast<int>(mean.size()); }

  static MppiPlan constant(int horizon, const Vec& mu, const Mat& l) {
    return {std::vector<Vec>(horizon, mu), std::vector<Mat>(horizon, l)};
  }
};

/// N sampled sequences: column h of controls[i] is u_{t+h}^{(i)}, noises alike.
struct SampleSet {
  std::vector<Mat> noises;
  std::vector<Mat> controls;

  int size() const { return static_cast<int>(controls.size()); }
};

/// Draws N sequences u = mu + L eps and clamps them to the model bounds.
/// Sample i uses the stream rng.derive(i), so results do not depend on the
/// worker count.
inline SampleSet sample_sequences(const MppiPlan& plan, int n, const RngStream& rng, const SystemModel& model) {
  const int hz = plan.horizon();
  const int nu = model.input_dim();
  if (hz < 1 || n < 1) throw InvalidArgument("sample_sequences: empty plan or sample count");
  SampleSet s;
  s.noises.assign(n, Mat(nu, hz));
  s.controls.assign(n, Mat(nu, hz));
  parallel_for(n, [&](int i) {
    RngStream r = rng.derive(static_cast<std::uint64_t>(i));
    Mat& eps = s.noises[i];
    Mat& u = s.controls[i];
    for (int h = 0; h < hz; ++h) {
      for (int j = 0; j < nu; ++j) eps(j, h) = r.normal();
      u.col(h) = plan.mean[h] + plan.chol[h].triangularView<Eigen::Lower>() * eps.col(h);
      u.col(h) = u.col(h).cwiseMax(model.u_min()).cwiseMin(model.u_max());
    }
  });
  return s;
}

struct RolloutResult {
  Vec costs;
  Vec weights;
};

/// Total cost of each sequence from x0, then softmax weights.
inline RolloutResult rollout_and_weight(const SystemModel& model, const Vec& x0, const SampleSet& samples,
                                        const std::vector<CostContext>& ctx_seq, const std::vector<Vec>& xis,
                                        double lambda) {
  const int n = samples.size();
  if (n < 1) throw InvalidArgument("rollout_and_weight: no samples");
  const int hz = static_cast<int>(samples.controls[0].cols());
  if (static_cast<int>(ctx_seq.size()) < hz || static_cast<int>(xis.size()) < hz)
    throw InvalidArgument("rollout_and_weight: contexts shorter than the horizon");
  RolloutResult r{Vec(n), Vec()};
  parallel_for(n, [&](int i) {
    const Mat& u = samples.controls[i];
    if (u.cols() != hz) throw InvalidArgument("rollout_and_weight: sequences must share the horizon");
    Vec x = x0, xn(x0.size());
    double c = 0.0;
    for (int h = 0; h < hz; ++h) {
      model.step_into(x, u.col(h), xis[h], xn);
      if (!xn.allFinite())
        throw DivergedState("rollout_and_weight: non-finite state in sample " + std::to_string(i), h);
      c += stage_cost(xn, u.col(h), ctx_seq[h]);
      x.swap(xn);
    }
    r.costs[i] = c;
  });
  r.weights = softmax_neg_scaled(r.costs, lambda);
  return r;
}

/// Weighted mean per step; optionally the weighted covariance around the new
/// mean plus floor^2 I.
inline MppiPlan update_plan(const MppiPlan& plan, const SampleSet& samples, const Vec& weights,
                            const MppiConfig& cfg) {
  const int n = samples.size();
  if (weights.size() != n) throw InvalidArgument("update_plan: weight count mismatch");
  if (std::abs(weights.sum() - 1.0) > 1e-9) throw InvalidArgument("update_plan: weights must sum to 1");
  MppiPlan out = plan;
  const int hz = plan.horizon();
  for (int h = 0; h < hz; ++h) {
    Vec m = Vec::Zero(plan.mean[h].size());
    for (int i = 0; i < n; ++i) m.noalias() += weights[i] * samples.controls[i].col(h);
    out.mean[h] = m;
    if (cfg.update_covariance) {
      Mat cov = cfg.diag_floor * cfg.diag_floor * Mat::Identity(m.size(), m.size());
      for (int i = 0; i < n; ++i) {
        const Vec d = samples.controls[i].col(h) - m;
        cov.noalias() += weights[i] * d * d.transpose();
      }
      out.chol[h] = CholeskyFactor::from_covariance(cov, cfg.diag_floor).matrix();
    }
  }
  return out;
}

/// Drops the first entry and repeats the last one.
inline void shift_plan(MppiPlan& plan) {
  std::rotate(plan.mean.begin(), plan.mean.begin() + 1, plan.mean.end());
  std::rotate(plan.chol.begin(), plan.chol.begin() + 1, plan.chol.end());
  const int hz = plan.horizon();
  if (hz > 1) {
    plan.mean[hz - 1] = plan.mean[hz - 2];
    plan.chol[hz - 1] = plan.chol[hz - 2];
  }
}

struct MppiDiagnostics {
  double best_cost = 0.0;
  double worst_cost = 0.0;
  double mean_cost = 0.0;
  double effective_sample_size = 0.0;
};

/// Receding-horizon MPPI. The plan persists across calls (warm start).
class MppiSolver {
 public:
  MppiSolver(ModelPtr model, MppiConfig cfg) : model_(std::move(model)), cfg_(std::move(cfg)) {
    const int nu = model_->input_dim();
    cfg_.validate(nu);
    if (cfg_.sigma.size() == 0) cfg_.sigma = 0.5 * model_->u_half();
    reset();
  }

  const MppiConfig& config() const { return cfg_; }
  const MppiPlan& plan() const { return plan_; }
  const MppiDiagnostics& diagnostics() const { return diag_; }

  void reset() {
    plan_ = MppiPlan::constant(cfg_.horizon, model_->u_mid(), cfg_.sigma.asDiagonal().toDenseMatrix());
  }
  void set_plan(MppiPlan plan) {
    if (plan.horizon() != cfg_.horizon) throw InvalidArgument("MppiSolver: plan horizon mismatch");
    plan_ = std::move(plan);
  }

  /// Runs the configured iterations at x, returns the first mean and shifts.
  /// `rng` must be distinct per call for independent draws.
  Vec control(const Vec& x, const std::vector<CostContext>& ctx_seq, const std::vector<Vec>& xis,
              const RngStream& rng) {
    for (int it = 0; it < cfg_.iterations; ++it) {
      const SampleSet s = sample_sequences(plan_, cfg_.samples, rng.derive(static_cast<std::uint64_t>(it)), *model_);
      const RolloutResult r = rollout_and_weight(*model_, x, s, ctx_seq, xis, cfg_.lambda);
      plan_ = update_plan(plan_, s, r.weights, cfg_);
      diag_ = {r.costs.minCoeff(), r.costs.maxCoeff(), r.costs.mean(), 1.0 / r.weights.squaredNorm()};
    }
    Vec u = plan_.mean.front();
    if (cfg_.warm_start)
      shift_plan(plan_);
    else
      reset();
    return u;
  }

 private:
  ModelPtr model_;
  MppiConfig cfg_;
  MppiPlan plan_;
  MppiDiagnostics diag_;
};

}  // namespace stepmppi
