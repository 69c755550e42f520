// Acceptance suite: one PASS/FAIL line per criterion. Optional arguments
// select criteria by number, e.g. `acceptance 1 3 9`.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <numbers>
#include <set>
#include <sstream>
#include <string>

#include "stepmppi/stepmppi.hpp"
#include "support/lqr_oracle.hpp"

using namespace stepmppi;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// Tolerances and budgets.
constexpr double kLayerTol = 1e-5;
constexpr double kLayerBudgetS = 10.0;
constexpr double kRolloutTol = 1e-4;
constexpr double kRolloutBudgetS = 60.0;
constexpr double kEntropyTol = 1e-6;
constexpr double kEntropyClosedTol = 1e-12;
constexpr double kMppiOracleRatio = 1.05;
constexpr double kStepOracleRatio = 1.10;
constexpr double kOracleBudgetS = 600.0;
constexpr double kTrafficFactor = 5.0;
constexpr double kTrafficBudgetS = 900.0;
constexpr double kLatencyMargin = 2.0;  // each controller at least this many times slower than the previous
constexpr int kLatencySteps = 500;
constexpr double kTrackBudgetS = 1200.0;
constexpr int kPropertyCases = 1000;
constexpr double kSoftmaxTol = 1e-12;
constexpr double kHullTol = 1e-12;
constexpr double kZeroSumTol = 1e-12;

double mean_of(const Comparison& c, const std::string& name, const std::string& metric) {
  return c.of(name).mean.at(metric);
}

NamedController named(std::string name, std::function<ControllerPtr()> f) { return {std::move(name), std::move(f)}; }

// ---------------------------------------------------------------------------

Outcome layer_jacobians() {
  const auto t0 = std::chrono::steady_clock::now();
  const GradcheckReport r = gradcheck_layer(50, kLayerTol, 2024);
  const double s = seconds_since(t0);
  return {r.passed() && s < kLayerBudgetS,
          fmt("layer Jacobians on %zu instances: worst rel err %.2e (tol %.0e), %.1f s", r.errors.size(), r.worst(),
              kLayerTol, s)};
}

Outcome rollout_gradient() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto bench = build_benchmark("double_integrator");
  TrainConfig cfg;
  cfg.method = Method::StepMppi;
  cfg.horizon = 5;
  cfg.samples = 4;
  cfg.hidden = {16, 16};
  cfg.gamma = 1e-2;
  double worst = 0.0;
  RngStream rng(31, "rollout-tasks");
  for (int trial = 0; trial < 3; ++trial) {
    const Task task = bench->sample_task(rng, "id");
    worst = std::max(worst, rollout_gradient_error(*bench, cfg, task, 100 + static_cast<std::uint64_t>(trial)));
  }
  const double s = seconds_since(t0);
  return {worst < kRolloutTol && s < kRolloutBudgetS,
          fmt("BPTT gradient (H=5, K=4, 2x16): worst rel err %.2e (tol %.0e), %.1f s", worst, kRolloutTol, s)};
}

Outcome entropy() {
  RngStream rng(77, "entropy");
  double worst = 0.0;
  for (int trial = 0; trial < 40; ++trial) {
    const int d = 1 + trial % 4;
    Mat l = Mat::Zero(d, d);
    for (int i = 0; i < d; ++i) {
      l(i, i) = rng.uniform(0.3, 2.0);
      for (int j = 0; j < i; ++j) l(i, j) = rng.uniform(-0.7, 0.7);
    }
    auto f = [d](const Vec& p) {
      Vec out(1);
      out[0] = gaussian_entropy(unpack_lower(p, d));
      return out;
    };
    worst = std::max(worst, max_rel_error(pack_lower(entropy_grad_L(l)).transpose(), finite_diff_jacobian(f, pack_lower(l))));
  }
  const double closed = std::abs(gaussian_entropy(CholeskyFactor::identity(2)) -
                                 std::log(2.0 * std::numbers::pi * std::numbers::e));
  return {worst < kEntropyTol && closed <= kEntropyClosedTol,
          fmt("entropy gradient worst rel err %.2e (tol %.0e); |H(I_2) - log(2 pi e)| = %.1e", worst, kEntropyTol,
              closed)};
}

Outcome oracle() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto bench = build_benchmark("double_integrator");
  const auto& di = dynamic_cast<const DoubleIntegrator&>(bench->model());
  const CostContext ctx = bench->context(Task{}, 1);
  const int steps = bench->episode_steps();
  const auto lqr = testing::solve_lqr(di.a_matrix(), di.b_matrix(), ctx.state_weight.asDiagonal(),
                                      ctx.input_weight.asDiagonal(), steps);
  const auto tasks = generate_dataset(*bench, 50, RngStream(4, "oracle-episodes"));
  double oracle_cost = 0.0;
  for (const auto& t : tasks) oracle_cost += lqr.cost(t.x0);

  MppiConfig mc;
  mc.horizon = 20;
  mc.samples = 4096;
  mc.iterations = 3;
  mc.lambda = 0.3;
  mc.sigma = Vec::Constant(1, 1.0);

  TrainConfig tc;
  tc.horizon = steps;
  tc.epochs = 20;
  tc.dataset_size = 128;
  tc.hidden = {32, 32};
  tc.sigma0 = Vec::Constant(1, 0.5);
  tc.cosine_decay = true;
  tc.seed = 1;
  const TrainResult tr = train(*bench, tc, generate_dataset(*bench, tc.dataset_size, RngStream(1, "dataset")));
  const Checkpoint ck = tr.checkpoint;

  const Comparison c = compare(*bench,
                               {named("mppi", [mc] { return std::make_unique<MppiController>(mc); }),
                                named("step_mppi", [ck] { return std::make_unique<StepMppiController>(ck, 64, 1.0); })},
                               tasks, 4);
  const double n = static_cast<double>(tasks.size());
  const double mppi = mean_of(c, "mppi", "total_cost") * n / oracle_cost;
  const double step = mean_of(c, "step_mppi", "total_cost") * n / oracle_cost;
  const double s = seconds_since(t0);
  return {mppi <= kMppiOracleRatio && step <= kStepOracleRatio && s < kOracleBudgetS,
          fmt("cost / LQR oracle over 50 seeds: MPPI %.4f (<= %.2f), Step-MPPI K=64 %.4f (<= %.2f), %.0f s", mppi,
              kMppiOracleRatio, step, kStepOracleRatio, s)};
}

Checkpoint train_traffic(const Benchmark& bench, Method m) {
  TrainConfig tc;
  tc.method = m;
  tc.horizon = 40;
  tc.epochs = 30;
  tc.lr = 3e-3;
  tc.dataset_size = 64;
  tc.cosine_decay = true;
  tc.seed = 1;
  return train(bench, tc, generate_dataset(bench, tc.dataset_size, RngStream(1, "dataset"))).checkpoint;
}

Outcome traffic() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto bench = build_benchmark("traffic_grid");
  const Checkpoint dpc = train_traffic(*bench, Method::Dpc);
  const Checkpoint step = train_traffic(*bench, Method::StepMppi);
  const Vec open = bench->model().u_max();
  const std::vector<NamedController> ctrls = {
      named("baseline", [open] { return std::make_unique<ConstantController>("baseline", open); }),
      named("dpc", [dpc] { return std::make_unique<DpcController>(dpc); }),
      named("step_mppi", [step] { return std::make_unique<StepMppiController>(step, 64, 1.0); })};
  const Comparison id = compare(*bench, ctrls, generate_dataset(*bench, 20, RngStream(5, "traffic-episodes"), "id"), 5);
  const Comparison ood = compare(*bench, ctrls, generate_dataset(*bench, 20, RngStream(5, "traffic-episodes"), "ood"), 5);
  const std::string fa = "final_accumulation";
  const double base = mean_of(id, "baseline", fa), d = mean_of(id, "dpc", fa), sm = mean_of(id, "step_mppi", fa);
  const double d_ood = mean_of(ood, "dpc", fa), sm_ood = mean_of(ood, "step_mppi", fa);
  const double s = seconds_since(t0);
  return {sm < base / kTrafficFactor && d < base / kTrafficFactor && sm_ood < d_ood && s < kTrafficBudgetS,
          fmt("final accumulation ID: baseline %.0f, DPC %.0f, Step-MPPI %.0f (< %.0f); OOD: DPC %.0f, Step-MPPI "
              "%.0f; %.0f s",
              base, d, sm, base / kTrafficFactor, d_ood, sm_ood, s)};
}

const Checkpoint& bicycle_policy(const Benchmark& bench) {
  static const Checkpoint ck = [&] {
    TrainConfig tc;
    tc.horizon = 20;
    tc.epochs = 100;
    tc.dataset_size = 128;
    tc.cosine_decay = true;
    tc.seed = 1;
    return train(bench, tc, generate_dataset(bench, tc.dataset_size, RngStream(1, "dataset"))).checkpoint;
  }();
  return ck;
}

double mean_latency(const Benchmark& bench, Controller& ctrl, int steps) {
  std::vector<double> lat;
  RngStream rng(6, "latency");
  for (std::uint64_t ep = 0; static_cast<int>(lat.size()) < steps; ++ep) {
    RngStream r = rng.derive(ep);
    const Task task = bench.sample_task(r, "id");
    const ClosedLoopResult res = run_closed_loop(bench, ctrl, task, bench.episode_steps(), r);
    lat.insert(lat.end(), res.latency_ms.begin(), res.latency_ms.end());
  }
  lat.resize(steps);
  return std::accumulate(lat.begin(), lat.end(), 0.0) / steps;
}

Outcome latency() {
  const auto bench = build_benchmark("bicycle_track");
  const Checkpoint& ck = bicycle_policy(*bench);
  DpcController dpc(ck);
  StepMppiController step(ck, 512, 1.0);
  MppiConfig mc;
  mc.samples = 8192;
  mc.horizon = 40;
  MppiController mppi(mc);
  const double a = mean_latency(*bench, dpc, kLatencySteps);
  const double b = mean_latency(*bench, step, kLatencySteps);
  const double c = mean_latency(*bench, mppi, kLatencySteps);
  return {a * kLatencyMargin < b && b * kLatencyMargin < c,
          fmt("mean ms/step over %d steps: DPC %.4f < Step-MPPI K=512 %.4f < MPPI N=8192 H=40 %.3f (margin %.0fx)",
              kLatencySteps, a, b, c, kLatencyMargin)};
}

Outcome track() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto bench = build_benchmark("bicycle_track");
  const Checkpoint ck = bicycle_policy(*bench);
  MppiConfig mc;
  mc.samples = 16 * 64;
  mc.horizon = 20;
  const std::vector<NamedController> ctrls = {
      named("step_mppi", [ck] { return std::make_unique<StepMppiController>(ck, 64, 1.0); }),
      named("mppi", [mc] { return std::make_unique<MppiController>(mc); })};
  const Comparison c = compare(*bench, ctrls, generate_dataset(*bench, 20, RngStream(8, "laps"), "id"), 8);
  const auto& eps = c.episodes[0];
  const long laps = std::count_if(eps.begin(), eps.end(), [](const MetricSummary& m) { return m.success; });
  long departures = 0;
  for (const auto& m : eps) departures += m.violations;
  const double step_cte = mean_of(c, "step_mppi", "mean_cte"), mppi_cte = mean_of(c, "mppi", "mean_cte");
  const double s = seconds_since(t0);
  return {laps == 20 && departures == 0 && mppi_cte >= step_cte && s < kTrackBudgetS,
          fmt("Step-MPPI laps %ld/20, constraint violations %ld; mean |CTE| Step-MPPI %.4f m <= MPPI N=1024 %.4f m; "
              "%.0f s",
              laps, departures, step_cte, mppi_cte, s)};
}

struct Artifacts {
  std::string checkpoint, train_csv, episodes_csv, trace;
};

Artifacts determinism_run() {
  const auto bench = build_benchmark("double_integrator", {{"axes", 2}});
  TrainConfig tc;
  tc.horizon = 10;
  tc.epochs = 3;
  tc.dataset_size = 32;
  tc.hidden = {16, 16};
  tc.seed = 9;
  const TrainResult tr = train(*bench, tc, generate_dataset(*bench, tc.dataset_size, RngStream(9, "dataset")));
  Artifacts a;
  a.checkpoint = checkpoint_to_json(tr.checkpoint).dump();
  std::ostringstream csv;
  tr.report.write_csv(csv, false);
  a.train_csv = csv.str();
  const Checkpoint ck = tr.checkpoint;
  MppiConfig mc;
  mc.samples = 256;
  const std::vector<NamedController> ctrls = {
      named("step_mppi", [ck] { return std::make_unique<StepMppiController>(ck, 32, 1.0); }),
      named("mppi", [mc] { return std::make_unique<MppiController>(mc); })};
  const auto tasks = generate_dataset(*bench, 4, RngStream(9, "episodes"));
  std::ostringstream ep;
  write_episodes_csv(ep, compare(*bench, ctrls, tasks, 9));
  a.episodes_csv = ep.str();
  std::ostringstream tr_out;
  for (const auto& nc : ctrls) {
    ControllerPtr ctrl = nc.make();
    write_trace_csv(tr_out, run_closed_loop(*bench, *ctrl, tasks[0], 30, RngStream(9, "trace")));
  }
  a.trace = tr_out.str();
  return a;
}

Outcome determinism() {
  const Artifacts a = determinism_run(), b = determinism_run();
  const bool ck = a.checkpoint == b.checkpoint, csv = a.train_csv == b.train_csv && a.episodes_csv == b.episodes_csv,
             trace = a.trace == b.trace;
  return {ck && csv && trace, fmt("identical checkpoint %s, CSV bodies %s, control traces %s", ck ? "yes" : "no",
                                  csv ? "yes" : "no", trace ? "yes" : "no")};
}

Outcome invariants() {
  RngStream rng(2025, "invariants");
  int fails[5] = {0, 0, 0, 0, 0};
  for (int c = 0; c < kPropertyCases; ++c) {
    RngStream r = rng.derive(static_cast<std::uint64_t>(c));
    // softmax normalization and shift invariance
    {
      const int n = 1 + static_cast<int>(r.uniform(0, 50));
      Vec s(n);
      const double scale = std::pow(10.0, r.uniform(-3, 4));
      for (int i = 0; i < n; ++i) s[i] = scale * r.normal();
      const double lambda = std::pow(10.0, r.uniform(-2, 2));
      const Vec w = softmax_neg_scaled(s, lambda);
      const Vec ws = softmax_neg_scaled((s.array() + r.uniform(-1e3, 1e3)).matrix(), lambda);
      if (std::abs(w.sum() - 1.0) > kSoftmaxTol || (w.array() < 0.0).any() ||
          (w - ws).cwiseAbs().maxCoeff() > 1e-9)
        ++fails[0];
    }
    // convex-hull containment of MPPI updates
    {
      const int nu = 1 + c % 3, hz = 1 + c % 5, n = 2 + c % 30;
      DoubleIntegrator model(nu, 0.1, 5.0);
      MppiConfig cfg;
      cfg.update_covariance = c % 2 == 0;
      const MppiPlan plan = MppiPlan::constant(hz, r.normal_vec(nu), Mat::Identity(nu, nu) * r.uniform(0.1, 3.0));
      const SampleSet set = sample_sequences(plan, n, r.derive("samples"), model);
      Vec costs(n);
      for (int i = 0; i < n; ++i) costs[i] = std::abs(r.normal()) * 10.0;
      const MppiPlan next = update_plan(plan, set, softmax_neg_scaled(costs, r.uniform(0.01, 10.0)), cfg);
      for (int h = 0; h < hz; ++h) {
        Vec lo = set.controls[0].col(h), hi = lo;
        for (int i = 1; i < n; ++i) {
          lo = lo.cwiseMin(set.controls[i].col(h));
          hi = hi.cwiseMax(set.controls[i].col(h));
        }
        if ((next.mean[h].array() < lo.array() - kHullTol).any() || (next.mean[h].array() > hi.array() + kHullTol).any())
          ++fails[1];
      }
    }
    // weight-gradient zero sum over the samples of one layer evaluation
    {
      const LayerInstance li = random_layer_instance(1 + c % 3, 1 + c % 16, r);
      LayerTape tape;
      layer_forward(li.z, li.x, Vec(), li.ctx, *li.model, li.eps, li.lambda, &tape);
      const int nu = li.z.dim(), kc = tape.samples();
      const Vec& w = tape.weights;
      // ds_k/dmu = g_k; ds_k/dL_rc = g_k,r eps_kc
      Mat ds(kc, nu + tri_size(nu));
      for (int k = 0; k < kc; ++k) {
        ds.row(k).head(nu) = tape.grad_u.col(k).transpose();
        for (int rr = 0; rr < nu; ++rr)
          for (int cc = 0; cc <= rr; ++cc) ds(k, nu + tri_index(rr, cc)) = tape.grad_u(rr, k) * tape.eps(cc, k);
      }
      const Eigen::RowVectorXd ds_bar = w.transpose() * ds;
      Mat dw(kc, ds.cols());
      for (int k = 0; k < kc; ++k) dw.row(k) = -(w[k] / li.lambda) * (ds.row(k) - ds_bar);
      const double scale = 1.0 + dw.cwiseAbs().maxCoeff();
      if (dw.colwise().sum().cwiseAbs().maxCoeff() > kZeroSumTol * scale) ++fails[2];
    }
    // tanh bound containment
    {
      PolicyShape shape;
      shape.input_dim = 3;
      shape.hidden = {8, 8};
      shape.output_dim = 1 + c % 3;
      const Vec u_min = Vec::Constant(shape.output_dim, -r.uniform(0.1, 5.0));
      const Vec u_max = Vec::Constant(shape.output_dim, r.uniform(0.1, 5.0));
      PolicyParams p = policy_init(shape, u_min, u_max, r, 0.5);
      p.set_flat(p.flat() * std::pow(10.0, r.uniform(0, 2)));
      const Vec in = r.normal_vec(3) * std::pow(10.0, r.uniform(-1, 3));
      const Vec mu = policy_forward(p, in).mu, d = dpc_forward(p, in);
      if ((mu.array() < u_min.array()).any() || (mu.array() > u_max.array()).any() ||
          (d.array() < u_min.array()).any() || (d.array() > u_max.array()).any())
        ++fails[3];
      // Cholesky diagonal floor, from the policy head and from covariance updates
      const Mat l = policy_forward(p, in).L;
      const Mat a = r.normal_vec(shape.output_dim) * r.normal_vec(shape.output_dim).transpose();
      const Mat cov = a * a.transpose() * (c % 2 ? 0.0 : 1e-12);
      if (l.diagonal().minCoeff() < kDiagFloor ||
          CholeskyFactor::from_covariance(cov).matrix().diagonal().minCoeff() < kDiagFloor)
        ++fails[4];
    }
  }
  const int total = fails[0] + fails[1] + fails[2] + fails[3] + fails[4];
  return {total == 0, fmt("%d cases each; failures: softmax %d, convex hull %d, weight zero-sum %d, tanh bounds %d, "
                          "Cholesky floor %d",
                          kPropertyCases, fails[0], fails[1], fails[2], fails[3], fails[4])};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria = {
      {"layer Jacobians", layer_jacobians}, {"BPTT gradient", rollout_gradient},
      {"entropy", entropy},                 {"LQR oracle", oracle},
      {"traffic ordering", traffic},        {"runtime ordering", latency},
      {"constraint behavior", track},       {"determinism", determinism},
      {"invariants", invariants}};
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));
  bool all = true;
  for (size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!only.empty() && !only.count(id)) continue;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    std::printf("%s criterion %d (%s): %s\n", o.pass ? "PASS" : "FAIL", id, criteria[i].first, o.detail.c_str());
    std::fflush(stdout);
    all = all && o.pass;
  }
  return all ? 0 : 1;
}
