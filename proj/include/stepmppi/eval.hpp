#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <numeric>
#include <ostream>
#include <string>
#include <vector>

#include "stepmppi/benchmark.hpp"
#include "stepmppi/checkpoint.hpp"
#include "stepmppi/mppi.hpp"
#include "stepmppi/mppi_layer.hpp"
#include "stepmppi/parallel.hpp"
#include "stepmppi/policy.hpp"

namespace stepmppi {

/// A feedback law evaluated once per control step.
class Controller {
 public:
  virtual ~Controller() = default;
  virtual std::string name() const = 0;
  /// Called before each episode. `rng` is this episode's controller stream.
  virtual void reset(const Benchmark&, const Task&, const RngStream&) {}
  virtual Vec act(const Benchmark& bench, const Task& task, const Vec& x, long t) = 0;
};

using ControllerPtr = std::unique_ptr<Controller>;
using ControllerFactory = std::function<ControllerPtr()>;

/// Fixed input, e.g. all traffic gates open.
class ConstantController final : public Controller {
 public:
  ConstantController(std::string name, Vec u) : name_(std::move(name)), u_(std::move(u)) {}
  std::string name() const override { return name_; }
  Vec act(const Benchmark&, const Task&, const Vec&, long) override { return u_; }

 private:
  std::string name_;
  Vec u_;
};

/// u_t = -K_t x_t (K_t held at the last gain past the end).
class LinearFeedbackController final : public Controller {
 public:
  explicit LinearFeedbackController(std::vector<Mat> gains, std::string name = "linear_feedback")
      : gains_(std::move(gains)), name_(std::move(name)) {
    if (gains_.empty()) throw InvalidArgument("LinearFeedbackController: no gains");
  }
  std::string name() const override { return name_; }
  Vec act(const Benchmark&, const Task&, const Vec& x, long t) override {
    const size_t i = std::min(static_cast<size_t>(std::max(0L, t)), gains_.size() - 1);
    return -gains_[i] * x;
  }

 private:
  std::vector<Mat> gains_;
  std::string name_;
};

class MppiController final : public Controller {
 public:
  explicit MppiController(MppiConfig cfg, std::string name = "mppi") : cfg_(std::move(cfg)), name_(std::move(name)) {}
  std::string name() const override { return name_; }
  void reset(const Benchmark& bench, const Task&, const RngStream& rng) override {
    solver_ = std::make_unique<MppiSolver>(bench.model_ptr(), cfg_);
    rng_ = rng;
  }
  Vec act(const Benchmark& bench, const Task& task, const Vec& x, long t) override {
    if (!solver_) throw InvalidArgument("MppiController: act before reset");
    const int hz = cfg_.horizon;
    return solver_->control(x, bench.contexts(task, t, hz), bench.xis(task, t, hz),
                            rng_.derive(static_cast<std::uint64_t>(t)));
  }
  const MppiSolver* solver() const { return solver_.get(); }

 private:
  MppiConfig cfg_;
  std::string name_;
  std::unique_ptr<MppiSolver> solver_;
  RngStream rng_{0};
};

namespace detail {
inline void check_policy_fits(const Benchmark& bench, const PolicyParams& p) {
  if (p.input_dim() != bench.feature_dim() || p.output_dim() != bench.model().input_dim())
    throw InvalidArgument("controller: checkpoint dimensions do not match environment '" + bench.name() + "'");
}
}  // namespace detail

/// Deterministic policy mean.
class DpcController final : public Controller {
 public:
  explicit DpcController(Checkpoint ckpt, std::string name = "dpc") : ck_(std::move(ckpt)), name_(std::move(name)) {}
  std::string name() const override { return name_; }
  void reset(const Benchmark& bench, const Task&, const RngStream&) override {
    detail::check_policy_fits(bench, ck_.params);
  }
  Vec act(const Benchmark& bench, const Task& task, const Vec& x, long t) override {
    return dpc_forward(ck_.params, ck_.norm.apply(bench.features(x, bench.context(task, t + 1), bench.xi(task, t))));
  }

 private:
  Checkpoint ck_;
  std::string name_;
};

/// Policy distribution followed by one single-step MPPI update with K samples.
class StepMppiController final : public Controller {
 public:
  StepMppiController(Checkpoint ckpt, int samples, double lambda, std::string name = "step_mppi")
      : ck_(std::move(ckpt)), samples_(samples), lambda_(lambda), name_(std::move(name)) {
    if (samples_ < 1 || !(lambda_ > 0.0)) throw InvalidArgument("StepMppiController: K >= 1 and lambda > 0 required");
    if (!ck_.params.shape.cholesky_head)
      throw InvalidArgument("StepMppiController: checkpoint has no Cholesky head");
  }
  std::string name() const override { return name_; }
  void reset(const Benchmark& bench, const Task&, const RngStream& rng) override {
    detail::check_policy_fits(bench, ck_.params);
    rng_ = rng;
  }
  Vec act(const Benchmark& bench, const Task& task, const Vec& x, long t) override {
    const CostContext ctx = bench.context(task, t + 1);
    const Vec xi = bench.xi(task, t);
    const DistributionParams z = policy_forward(ck_.params, ck_.norm.apply(bench.features(x, ctx, xi)));
    RngStream r = rng_.derive(static_cast<std::uint64_t>(t));
    return layer_forward(z, x, xi, ctx, bench.model(), samples_, lambda_, r);
  }

 private:
  Checkpoint ck_;
  int samples_;
  double lambda_;
  std::string name_;
  RngStream rng_{0};
};

// ---------------------------------------------------------------------------

struct ClosedLoopResult {
  std::vector<Vec> states;    ///< x_0 .. x_T
  std::vector<Vec> controls;  ///< u_0 .. u_{T-1}, after clamping
  std::vector<double> costs;  ///< c(x_{t+1}, u_t; r_{t+1})
  std::vector<double> latency_ms;
  std::vector<long> violation_steps;
  EpisodeStatus status = EpisodeStatus::Running;
  std::string failure_reason;

  long steps() const { return static_cast<long>(controls.size()); }
};

/// controller -> clamp -> step until `steps`, divergence or termination.
/// Latency covers the controller call only.
inline ClosedLoopResult run_closed_loop(const Benchmark& bench, Controller& ctrl, const Task& task, int steps,
                                        const RngStream& rng) {
  if (steps < 1) throw InvalidArgument("run_closed_loop: steps must be >= 1");
  const SystemModel& model = bench.model();
  if (task.x0.size() != model.state_dim()) throw InvalidArgument("run_closed_loop: x0 dimension mismatch");
  ctrl.reset(bench, task, rng.derive("controller"));
  ClosedLoopResult r;
  r.states.push_back(task.x0);
  EpisodeMonitor mon;
  for (long t = 0; t < steps; ++t) {
    const Vec& x = r.states.back();
    const CostContext ctx = bench.context(task, t + 1);
    const Vec xi = bench.xi(task, t);
    Vec u;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      u = ctrl.act(bench, task, x, t);
    } catch (const DivergedState& e) {
      r.status = EpisodeStatus::Failure;
      r.failure_reason = e.what();
      break;
    }
    const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    r.latency_ms.push_back(std::max(ms, 1e-9));
    if (!u.allFinite()) {
      r.status = EpisodeStatus::Failure;
      r.failure_reason = "controller produced a non-finite input at step " + std::to_string(t);
      break;
    }
    u = model.clamp_input(u);
    Vec xn;
    try {
      xn = model.step(x, u, xi, t);
    } catch (const DivergedState& e) {
      r.status = EpisodeStatus::Failure;
      r.failure_reason = e.what();
      break;
    }
    r.costs.push_back(stage_cost(xn, u, ctx));
    if (violates(xn, u, ctx)) r.violation_steps.push_back(t);
    r.controls.push_back(std::move(u));
    r.states.push_back(std::move(xn));
    r.status = bench.monitor(task, r.states.back(), t + 1, mon);
    if (r.status != EpisodeStatus::Running) break;
  }
  if (r.status == EpisodeStatus::Running) r.status = EpisodeStatus::Timeout;
  return r;
}

struct MetricSummary {
  double total_cost = 0.0;
  long steps = 0;
  long violations = 0;
  bool success = false;
  std::string status;
  double mean_cte = 0.0, median_cte = 0.0, max_cte = 0.0;  ///< absolute cross-track error
  double final_accumulation = 0.0;                          ///< vehicles
  double tvh = 0.0;                                         ///< vehicle hours
  double mean_latency_ms = 0.0, median_latency_ms = 0.0;

  /// Deterministic metrics by name (timing excluded).
  std::map<std::string, double> values() const {
    return {{"total_cost", total_cost},
            {"steps", static_cast<double>(steps)},
            {"violations", static_cast<double>(violations)},
            {"success", success ? 1.0 : 0.0},
            {"mean_cte", mean_cte},
            {"median_cte", median_cte},
            {"max_cte", max_cte},
            {"final_accumulation", final_accumulation},
            {"tvh", tvh}};
  }
};

inline double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  const size_t m = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + static_cast<long>(m), v.end());
  const double hi = v[m];
  if (v.size() % 2) return hi;
  return 0.5 * (hi + *std::max_element(v.begin(), v.begin() + static_cast<long>(m)));
}

/// Cross-track errors of x_1..x_T against the track (absolute values).
inline std::vector<double> cross_track_errors(const TrackGeometry& track, const std::vector<Vec>& states) {
  std::vector<double> e;
  for (size_t k = 1; k < states.size(); ++k) e.push_back(std::abs(track.project(states[k][0], states[k][1]).lateral));
  return e;
}

/// TVH = sum_{k=0}^{T-1} ||x_k||_1 dt / 3600.
inline double total_vehicle_hours(const std::vector<Vec>& states, double dt) {
  double s = 0.0;
  for (size_t k = 0; k + 1 < states.size(); ++k) s += states[k].lpNorm<1>();
  return s * dt / 3600.0;
}

inline MetricSummary compute_metrics(const ClosedLoopResult& r, const Benchmark& bench) {
  MetricSummary m;
  for (double c : r.costs) m.total_cost += c;
  m.steps = r.steps();
  m.violations = static_cast<long>(r.violation_steps.size());
  m.success = r.status == EpisodeStatus::Success;
  m.status = to_string(r.status);
  if (const auto* bike = dynamic_cast<const BicycleBenchmark*>(&bench)) {
    const auto e = cross_track_errors(bike->track(), r.states);
    if (!e.empty()) {
      m.mean_cte = std::accumulate(e.begin(), e.end(), 0.0) / static_cast<double>(e.size());
      m.median_cte = median(e);
      m.max_cte = *std::max_element(e.begin(), e.end());
    }
  }
  if (dynamic_cast<const TrafficBenchmark*>(&bench)) {
    m.final_accumulation = r.states.back().sum();
    m.tvh = total_vehicle_hours(r.states, bench.model().dt());
  }
  if (!r.latency_ms.empty()) {
    m.mean_latency_ms = std::accumulate(r.latency_ms.begin(), r.latency_ms.end(), 0.0) /
                        static_cast<double>(r.latency_ms.size());
    m.median_latency_ms = median(r.latency_ms);
  }
  return m;
}

// ---------------------------------------------------------------------------

struct NamedController {
  std::string name;
  ControllerFactory make;
};

/// metric(left) op factor * metric(right), evaluated on per-controller means.
struct OrderingAssertion {
  std::string metric;
  std::string left;
  std::string op = "<";  ///< "<" or "<="
  std::string right;
  double factor = 1.0;
};

struct Aggregate {
  std::map<std::string, double> mean;
  std::map<std::string, double> std;
  double mean_latency_ms = 0.0;
  double median_latency_ms = 0.0;
};

struct Comparison {
  std::vector<std::string> controllers;
  std::vector<std::vector<MetricSummary>> episodes;  ///< [controller][episode]
  std::vector<Aggregate> aggregates;
  std::vector<std::pair<OrderingAssertion, bool>> checks;
  std::uint64_t seed = 0;

  const Aggregate& of(const std::string& name) const {
    for (size_t i = 0; i < controllers.size(); ++i)
      if (controllers[i] == name) return aggregates[i];
    throw NotFound("compare: no controller named '" + name + "'");
  }
  bool all_passed() const {
    return std::all_of(checks.begin(), checks.end(), [](const auto& c) { return c.second; });
  }
};

inline Aggregate aggregate(const std::vector<MetricSummary>& eps) {
  Aggregate a;
  if (eps.empty()) return a;
  const double n = static_cast<double>(eps.size());
  for (const auto& [k, v] : eps.front().values()) {
    double s = 0.0, s2 = 0.0;
    for (const auto& e : eps) {
      const double x = e.values().at(k);
      s += x;
      s2 += x * x;
    }
    a.mean[k] = s / n;
    a.std[k] = std::sqrt(std::max(0.0, s2 / n - (s / n) * (s / n)));
  }
  std::vector<double> lat;
  for (const auto& e : eps) {
    a.mean_latency_ms += e.mean_latency_ms / n;
    lat.push_back(e.median_latency_ms);
  }
  a.median_latency_ms = median(lat);
  return a;
}

/// Runs every controller on the same tasks. Episode i uses the stream
/// RngStream(seed, "compare").derive(i) regardless of controller.
inline Comparison compare(const Benchmark& bench, const std::vector<NamedController>& ctrls,
                          const std::vector<Task>& tasks, std::uint64_t seed, int steps = 0,
                          const std::vector<OrderingAssertion>& assertions = {}, bool parallel_episodes = true) {
  if (ctrls.empty() || tasks.empty()) throw InvalidArgument("compare: need controllers and tasks");
  if (steps <= 0) steps = bench.episode_steps();
  Comparison c;
  c.seed = seed;
  const RngStream root(seed, "compare");
  const int n = static_cast<int>(tasks.size());
  for (const auto& nc : ctrls) {
    std::vector<MetricSummary> eps(n);
    auto run = [&](int i) {
      ControllerPtr ctrl = nc.make();
      const ClosedLoopResult r = run_closed_loop(bench, *ctrl, tasks[i], steps, root.derive(static_cast<std::uint64_t>(i)));
      eps[i] = compute_metrics(r, bench);
    };
    if (parallel_episodes)
      parallel_for(n, run);
    else
      for (int i = 0; i < n; ++i) run(i);
    c.controllers.push_back(nc.name);
    c.aggregates.push_back(aggregate(eps));
    c.episodes.push_back(std::move(eps));
  }
  for (const auto& a : assertions) {
    const double l = c.of(a.left).mean.at(a.metric);
    const double r = a.factor * c.of(a.right).mean.at(a.metric);
    bool ok;
    if (a.op == "<")
      ok = l < r;
    else if (a.op == "<=")
      ok = l <= r;
    else
      throw InvalidArgument("compare: unsupported operator '" + a.op + "'");
    c.checks.emplace_back(a, ok);
  }
  return c;
}

// ---------------------------------------------------------------------------
// Export

inline constexpr const char* kEpisodeCsvHeader =
    "controller,episode,status,success,steps,total_cost,violations,mean_cte,median_cte,max_cte,"
    "final_accumulation,tvh";

/// One row per (controller, episode). Deterministic columns only.
inline void write_episodes_csv(std::ostream& out, const Comparison& c) {
  out.precision(17);
  out << kEpisodeCsvHeader << '\n';
  for (size_t k = 0; k < c.controllers.size(); ++k)
    for (size_t i = 0; i < c.episodes[k].size(); ++i) {
      const auto& m = c.episodes[k][i];
      out << c.controllers[k] << ',' << i << ',' << m.status << ',' << (m.success ? 1 : 0) << ',' << m.steps << ','
          << m.total_cost << ',' << m.violations << ',' << m.mean_cte << ',' << m.median_cte << ',' << m.max_cte
          << ',' << m.final_accumulation << ',' << m.tvh << '\n';
    }
}

inline void write_timing_csv(std::ostream& out, const Comparison& c) {
  out << "controller,episode,mean_latency_ms,median_latency_ms\n";
  for (size_t k = 0; k < c.controllers.size(); ++k)
    for (size_t i = 0; i < c.episodes[k].size(); ++i)
      out << c.controllers[k] << ',' << i << ',' << c.episodes[k][i].mean_latency_ms << ','
          << c.episodes[k][i].median_latency_ms << '\n';
}

inline json comparison_summary(const Comparison& c, const json& run_config) {
  json j;
  j["config_hash"] = config_hash(run_config);
  j["seed"] = c.seed;
  j["episodes"] = c.episodes.empty() ? 0 : c.episodes.front().size();
  json ctrls = json::object();
  for (size_t k = 0; k < c.controllers.size(); ++k) {
    const auto& a = c.aggregates[k];
    json m = json::object();
    for (const auto& [name, v] : a.mean) m[name] = {{"mean", v}, {"std", a.std.at(name)}};
    m["mean_latency_ms"] = a.mean_latency_ms;
    m["median_latency_ms"] = a.median_latency_ms;
    ctrls[c.controllers[k]] = m;
  }
  j["controllers"] = ctrls;
  json checks = json::array();
  for (const auto& [a, ok] : c.checks)
    checks.push_back({{"metric", a.metric}, {"left", a.left}, {"op", a.op}, {"right", a.right},
                      {"factor", a.factor}, {"passed", ok}});
  j["assertions"] = checks;
  return j;
}

/// Long-format trace: t, x_0.., u_0.., cost. Row t holds x_t and u_t.
inline void write_trace_csv(std::ostream& out, const ClosedLoopResult& r) {
  out.precision(17);
  const long nx = r.states.front().size();
  const long nu = r.controls.empty() ? 0 : r.controls.front().size();
  out << "t";
  for (long i = 0; i < nx; ++i) out << ",x" << i;
  for (long i = 0; i < nu; ++i) out << ",u" << i;
  out << ",cost\n";
  for (size_t t = 0; t < r.states.size(); ++t) {
    out << t;
    for (long i = 0; i < nx; ++i) out << ',' << r.states[t][i];
    for (long i = 0; i < nu; ++i) {
      out << ',';
      if (t < r.controls.size()) out << r.controls[t][i];
    }
    out << ',';
    if (t < r.costs.size()) out << r.costs[t];
    out << '\n';
  }
}

inline void write_file(const std::string& path, const std::function<void(std::ostream&)>& fn) {
  std::ofstream out(path);
  if (!out) throw Error("cannot open '" + path + "' for writing");
  fn(out);
  if (!out) throw Error("write failed for '" + path + "'");
}

}  // namespace stepmppi
