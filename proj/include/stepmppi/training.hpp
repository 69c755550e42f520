#pragma once

#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <string>
#include <vector>

#include "stepmppi/benchmark.hpp"
#include "stepmppi/checkpoint.hpp"
#include "stepmppi/mppi_layer.hpp"
#include "stepmppi/parallel.hpp"
#include "stepmppi/policy.hpp"

namespace stepmppi {

using Dataset = std::vector<Task>;

enum class Method { StepMppi, Dpc };

inline const char* to_string(Method m) { return m == Method::StepMppi ? "step_mppi" : "dpc"; }

struct TrainConfig {
  Method method = Method::StepMppi;
  int horizon = 20;
  int batch = 16;
  int epochs = 50;
  int dataset_size = 256;
  double lr = 1e-3;
  bool cosine_decay = false;  ///< anneal lr to 0 over the run
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps_adam = 1e-8;
  double gamma = 1e-3;   ///< entropy weight
  double lambda = 1.0;   ///< layer temperature
  int samples = 64;      ///< K during training
  double clip_norm = 10.0;
  bool truncated_bptt = false;
  std::vector<int> hidden = {64, 64};
  Vec sigma0;            ///< initial sampling std per channel (empty: 0.25 * half range)
  double mean_scale = 1.0;
  std::uint64_t seed = 0;

  void validate() const {
    if (horizon < 1 || batch < 1 || epochs < 1 || dataset_size < 1 || samples < 1)
      throw InvalidArgument("TrainConfig: horizon, batch, epochs, dataset_size and samples must be >= 1");
    if (!(lr > 0.0) || !(lambda > 0.0) || !(clip_norm > 0.0) || !(eps_adam > 0.0))
      throw InvalidArgument("TrainConfig: lr, lambda, clip_norm and eps_adam must be positive");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
      throw InvalidArgument("TrainConfig: Adam betas must lie in [0, 1)");
    if (gamma < 0.0) throw InvalidArgument("TrainConfig: gamma must be >= 0");
  }
};

/// Draws M admissible tasks; each instance uses rng.derive(i) and retries up
/// to `max_retries` times.
inline Dataset generate_dataset(const Benchmark& bench, int m, const RngStream& rng, std::string_view variant = "id",
                                int max_retries = 100) {
  if (m < 1) throw InvalidArgument("generate_dataset: M must be >= 1");
  Dataset d;
  d.reserve(m);
  for (int i = 0; i < m; ++i) {
    RngStream r = rng.derive(static_cast<std::uint64_t>(i));
    bool ok = false;
    for (int attempt = 0; attempt <= max_retries && !ok; ++attempt) {
      Task t = bench.sample_task(r, variant);
      if (bench.admissible(t)) {
        d.push_back(std::move(t));
        ok = true;
      }
    }
    if (!ok) throw Error("generate_dataset: no admissible instance after " + std::to_string(max_retries) + " retries");
  }
  return d;
}

/// Normalization from the features at each instance's initial state.
inline Normalization fit_normalization(const Benchmark& bench, const Dataset& data) {
  if (data.empty()) throw InvalidArgument("fit_normalization: empty dataset");
  const int fd = bench.feature_dim();
  Mat f(fd, static_cast<long>(data.size()));
  for (size_t i = 0; i < data.size(); ++i)
    f.col(static_cast<long>(i)) = bench.features(data[i].x0, bench.context(data[i], 1), bench.xi(data[i], 0));
  return Normalization::fit(f, bench.feature_std_floor());
}

struct RolloutLoss {
  double loss = 0.0;
  double stage_cost = 0.0;  ///< mean over the horizon
  double entropy = 0.0;     ///< mean over the horizon
  Vec grad;
};

/// (1/H) sum_h [c(x_{h+1}, u_h) - gamma H(z_h)] through policy -> layer ->
/// dynamics, with its exact gradient by backpropagation through time. Noise
/// for step h comes from rng.derive(h).
inline RolloutLoss stepmppi_rollout_loss(const Benchmark& bench, const PolicyParams& params,
                                         const Normalization& norm, const Task& task, const TrainConfig& cfg,
                                         const RngStream& rng) {
  const SystemModel& model = bench.model();
  const int hz = cfg.horizon;
  const double inv_h = 1.0 / hz;
  std::vector<Vec> xs(hz + 1), us(hz), xis(hz);
  std::vector<CostContext> ctxs(hz);
  std::vector<DistributionParams> zs(hz);
  std::vector<PolicyTape> ptapes(hz);
  std::vector<LayerTape> ltapes(hz);
  RolloutLoss r;
  xs[0] = task.x0;
  for (int h = 0; h < hz; ++h) {
    ctxs[h] = bench.context(task, h + 1);
    xis[h] = bench.xi(task, h);
    const Vec in = norm.apply(bench.features(xs[h], ctxs[h], xis[h]));
    zs[h] = policy_forward(params, in, &ptapes[h]);
    RngStream noise = rng.derive(static_cast<std::uint64_t>(h));
    const Mat eps = draw_noise(noise, model.input_dim(), cfg.samples);
    us[h] = layer_forward(zs[h], xs[h], xis[h], ctxs[h], model, eps, cfg.lambda, &ltapes[h]);
    xs[h + 1] = model.step(xs[h], us[h], xis[h], h);
    const double c = stage_cost(xs[h + 1], us[h], ctxs[h]);
    const double ent = gaussian_entropy(zs[h].L);
    r.stage_cost += c * inv_h;
    r.entropy += ent * inv_h;
  }
  r.loss = r.stage_cost - cfg.gamma * r.entropy;

  r.grad = Vec::Zero(params.size());
  Vec a_next = Vec::Zero(model.state_dim());
  for (int h = hz - 1; h >= 0; --h) {
    auto [gx, gu] = stage_cost_grads(xs[h + 1], us[h], ctxs[h]);
    const Vec a = a_next + inv_h * gx;
    const Vec a_u = inv_h * gu + model.vjp_u(xs[h], us[h], xis[h], a);
    const LayerGrads lg =
        layer_vjp(ltapes[h], zs[h], cfg.lambda, a_u, cfg.truncated_bptt ? nullptr : &model);
    Mat g_l = lg.grad_L;
    if (cfg.gamma != 0.0) g_l -= (cfg.gamma * inv_h) * entropy_grad_L(zs[h].L);
    const PolicyGrads pg = policy_backward(params, ptapes[h], lg.grad_mu, g_l);
    r.grad += pg.params;
    if (cfg.truncated_bptt) {
      a_next.setZero();
    } else {
      a_next = model.vjp_x(xs[h], us[h], xis[h], a) + lg.grad_x +
               bench.features_vjp_x(xs[h], ctxs[h], xis[h], norm.backprop(pg.input));
    }
  }
  return r;
}

/// Deterministic counterpart: u_h = policy mean, no sampling and no entropy.
inline RolloutLoss dpc_rollout_loss(const Benchmark& bench, const PolicyParams& params, const Normalization& norm,
                                    const Task& task, const TrainConfig& cfg) {
  const SystemModel& model = bench.model();
  const int hz = cfg.horizon;
  const double inv_h = 1.0 / hz;
  std::vector<Vec> xs(hz + 1), us(hz), xis(hz);
  std::vector<CostContext> ctxs(hz);
  std::vector<PolicyTape> tapes(hz);
  RolloutLoss r;
  xs[0] = task.x0;
  for (int h = 0; h < hz; ++h) {
    ctxs[h] = bench.context(task, h + 1);
    xis[h] = bench.xi(task, h);
    us[h] = dpc_forward(params, norm.apply(bench.features(xs[h], ctxs[h], xis[h])), &tapes[h]);
    xs[h + 1] = model.step(xs[h], us[h], xis[h], h);
    r.stage_cost += stage_cost(xs[h + 1], us[h], ctxs[h]) * inv_h;
  }
  r.loss = r.stage_cost;
  r.grad = Vec::Zero(params.size());
  Vec a_next = Vec::Zero(model.state_dim());
  for (int h = hz - 1; h >= 0; --h) {
    auto [gx, gu] = stage_cost_grads(xs[h + 1], us[h], ctxs[h]);
    const Vec a = a_next + inv_h * gx;
    const Vec a_u = inv_h * gu + model.vjp_u(xs[h], us[h], xis[h], a);
    const PolicyGrads pg = policy_backward(params, tapes[h], a_u);
    r.grad += pg.params;
    if (cfg.truncated_bptt)
      a_next.setZero();
    else
      a_next = model.vjp_x(xs[h], us[h], xis[h], a) +
               bench.features_vjp_x(xs[h], ctxs[h], xis[h], norm.backprop(pg.input));
  }
  return r;
}

/// Adam with bias correction; the gradient is first clipped to a global norm.
struct AdamState {
  Vec m;
  Vec v;
  long t = 0;

  explicit AdamState(long n = 0) : m(Vec::Zero(n)), v(Vec::Zero(n)) {}
};

/// Returns the pre-clip gradient norm.
inline double adam_step(Vec& params, AdamState& s, Vec grad, double lr, double beta1, double beta2, double eps,
                        double clip_norm = kInf) {
  if (grad.size() != params.size() || s.m.size() != params.size())
    throw InvalidArgument("adam_step: size mismatch");
  const double norm = grad.norm();
  if (!std::isfinite(norm)) throw NumericOverflow("adam_step: non-finite gradient");
  if (norm > clip_norm) grad *= clip_norm / norm;
  ++s.t;
  s.m = beta1 * s.m + (1.0 - beta1) * grad;
  s.v = beta2 * s.v + (1.0 - beta2) * grad.cwiseAbs2();
  const double c1 = 1.0 - std::pow(beta1, static_cast<double>(s.t));
  const double c2 = 1.0 - std::pow(beta2, static_cast<double>(s.t));
  params.array() -= lr * (s.m.array() / c1) / ((s.v.array() / c2).sqrt() + eps);
  return norm;
}

struct EpochRecord {
  int epoch = 0;
  double loss = 0.0;
  double stage_cost = 0.0;
  double entropy = 0.0;
  double grad_norm = 0.0;  ///< mean pre-clip batch gradient norm
  double wall_s = 0.0;
  int skipped = 0;
};

struct TrainReport {
  std::vector<EpochRecord> epochs;

  void write_csv(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw Error("TrainReport: cannot open '" + path + "'");
    write_csv(out, true);
  }
  void write_csv(std::ostream& out, bool with_time) const {
    out.precision(17);
    out << "epoch,loss,stage_cost,entropy,grad_norm,skipped" << (with_time ? ",wall_s" : "") << '\n';
    for (const auto& e : epochs) {
      out << e.epoch << ',' << e.loss << ',' << e.stage_cost << ',' << e.entropy << ',' << e.grad_norm << ','
          << e.skipped;
      if (with_time) out << ',' << e.wall_s;
      out << '\n';
    }
  }
};

struct TrainResult {
  Checkpoint checkpoint;
  TrainReport report;
};

inline PolicyShape policy_shape_for(const Benchmark& bench, const TrainConfig& cfg) {
  PolicyShape s;
  s.input_dim = bench.feature_dim();
  s.hidden = cfg.hidden;
  s.output_dim = bench.model().input_dim();
  s.cholesky_head = cfg.method == Method::StepMppi;
  return s;
}

inline json train_config_json(const TrainConfig& c) {
  json j = {{"method", to_string(c.method)}, {"horizon", c.horizon},   {"batch", c.batch},
            {"epochs", c.epochs},            {"dataset_size", c.dataset_size},
            {"lr", c.lr},                    {"cosine_decay", c.cosine_decay},
            {"beta1", c.beta1},              {"beta2", c.beta2},       {"eps_adam", c.eps_adam},
            {"gamma", c.gamma},              {"lambda", c.lambda},     {"samples", c.samples},
            {"clip_norm", c.clip_norm},      {"truncated_bptt", c.truncated_bptt},
            {"hidden", c.hidden},            {"mean_scale", c.mean_scale}, {"seed", c.seed}};
  j["sigma0"] = std::vector<double>(c.sigma0.data(), c.sigma0.data() + c.sigma0.size());
  return j;
}

/// Mini-batch training. Instances whose rollout diverges are skipped and
/// counted; more than half skipped in an epoch aborts.
inline TrainResult train(const Benchmark& bench, const TrainConfig& cfg_in, const Dataset& data,
                         std::ostream* log = nullptr) {
  TrainConfig cfg = cfg_in;
  cfg.validate();
  if (data.empty()) throw InvalidArgument("train: empty dataset");
  const SystemModel& model = bench.model();
  if (cfg.sigma0.size() == 0) cfg.sigma0 = 0.25 * model.u_half();

  const RngStream root(cfg.seed, "train");
  RngStream init_rng = root.derive("init");
  const PolicyShape shape = policy_shape_for(bench, cfg);
  PolicyParams params = policy_init(shape, model.u_min(), model.u_max(), init_rng, cfg.sigma0, cfg.mean_scale);
  const Normalization norm = fit_normalization(bench, data);

  Vec theta = params.flat();
  AdamState adam(theta.size());
  TrainResult result;
  const int n = static_cast<int>(data.size());
  const long total_steps = static_cast<long>(cfg.epochs) * ((n + cfg.batch - 1) / cfg.batch);
  long step = 0;

  for (int e = 0; e < cfg.epochs; ++e) {
    const auto t0 = std::chrono::steady_clock::now();
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    RngStream shuffle = root.derive("shuffle").derive(static_cast<std::uint64_t>(e));
    for (int i = n - 1; i > 0; --i) std::swap(order[i], order[shuffle.next_u64() % static_cast<std::uint64_t>(i + 1)]);
    const RngStream noise = root.derive("noise").derive(static_cast<std::uint64_t>(e));

    EpochRecord rec;
    rec.epoch = e + 1;
    int used = 0, batches = 0;
    for (int b0 = 0; b0 < n; b0 += cfg.batch) {
      const int bn = std::min(cfg.batch, n - b0);
      std::vector<RolloutLoss> out(bn);
      std::vector<char> ok(bn, 1);
      params.set_flat(theta);
      parallel_for(bn, [&](int i) {
        const int idx = order[b0 + i];
        try {
          out[i] = cfg.method == Method::StepMppi
                       ? stepmppi_rollout_loss(bench, params, norm, data[idx], cfg,
                                               noise.derive(static_cast<std::uint64_t>(idx)))
                       : dpc_rollout_loss(bench, params, norm, data[idx], cfg);
          if (!std::isfinite(out[i].loss) || !out[i].grad.allFinite()) ok[i] = 0;
        } catch (const DivergedState&) {
          ok[i] = 0;
        } catch (const NumericOverflow&) {
          ok[i] = 0;
        }
      });
      Vec g = Vec::Zero(theta.size());
      int cnt = 0;
      for (int i = 0; i < bn; ++i) {
        if (!ok[i]) {
          ++rec.skipped;
          continue;
        }
        g += out[i].grad;
        rec.loss += out[i].loss;
        rec.stage_cost += out[i].stage_cost;
        rec.entropy += out[i].entropy;
        ++cnt;
      }
      used += cnt;
      ++step;
      if (cnt == 0) continue;
      g /= cnt;
      double lr = cfg.lr;
      if (cfg.cosine_decay)
        lr *= 0.5 * (1.0 + std::cos(std::numbers::pi * static_cast<double>(step - 1) / total_steps));
      rec.grad_norm += adam_step(theta, adam, g, lr, cfg.beta1, cfg.beta2, cfg.eps_adam, cfg.clip_norm);
      ++batches;
    }
    if (2 * rec.skipped > n)
      throw Error("train: " + std::to_string(rec.skipped) + " of " + std::to_string(n) +
                  " instances diverged in epoch " + std::to_string(e + 1) + "; aborting");
    if (used > 0) {
      rec.loss /= used;
      rec.stage_cost /= used;
      rec.entropy /= used;
    }
    if (batches > 0) rec.grad_norm /= batches;
    rec.wall_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.report.epochs.push_back(rec);
    if (log)
      *log << "epoch " << rec.epoch << " loss " << rec.loss << " cost " << rec.stage_cost << " entropy "
           << rec.entropy << " |g| " << rec.grad_norm << " skipped " << rec.skipped << '\n';
  }
  params.set_flat(theta);
  json cfg_json = train_config_json(cfg);
  cfg_json["env"] = bench.name();
  cfg_json["env_params"] = bench.config();
  result.checkpoint.params = std::move(params);
  result.checkpoint.norm = norm;
  result.checkpoint.metadata = {{"env", bench.name()}, {"train", cfg_json}};
  result.checkpoint.hash = config_hash(cfg_json);
  return result;
}

}  // namespace stepmppi
