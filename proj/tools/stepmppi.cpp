#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "stepmppi/stepmppi.hpp"

using namespace stepmppi;
namespace fs = std::filesystem;

namespace {

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string env;
  std::string controller;
  std::string method;
};

json load_run(const Common& c) {
  json run = c.config.empty() ? json::object() : load_json(c.config);
  if (!c.env.empty()) {
    if (!run.contains("env") || run["env"].value("name", std::string()) != c.env)
      run["env"] = {{"name", c.env}, {"params", json::object()}};
  }
  if (!run.contains("env")) throw InvalidArgument("no environment given (use --config or --env)");
  if (c.seed) run["seed"] = *c.seed;
  if (!c.out.empty()) run["out"] = c.out;
  return run;
}

std::string out_dir(const json& run) {
  const std::string d = run.value("out", std::string("runs/out"));
  fs::create_directories(d);
  return d;
}

std::vector<Task> episode_tasks(const Benchmark& bench, const json& run) {
  const int episodes = run.value("episodes", 20);
  const std::uint64_t seed = run.value("seed", std::uint64_t{0});
  const std::string variant = run.value("variant", std::string("id"));
  return generate_dataset(bench, episodes, RngStream(seed, "episodes"), variant);
}

std::vector<NamedController> controllers_from(const json& run, const Benchmark& bench, const std::string& select) {
  std::vector<NamedController> out;
  if (!run.contains("controllers")) throw InvalidArgument("config: missing 'controllers' list");
  for (const auto& spec : run.at("controllers")) {
    const std::string type = spec.at("type");
    const std::string name = spec.value("name", type);
    if (!select.empty() && select != name && select != type) continue;
    out.push_back(make_controller(spec, bench));
  }
  if (out.empty()) throw NotFound("no controller matches '" + select + "'");
  return out;
}

void print_table(const Comparison& c) {
  std::printf("%-14s %14s %14s %12s %10s %12s %10s\n", "controller", "total_cost", "final_accum", "tvh",
              "mean_cte", "violations", "lat_ms");
  for (size_t i = 0; i < c.controllers.size(); ++i) {
    const auto& a = c.aggregates[i];
    std::printf("%-14s %14.4f %14.2f %12.3f %10.4f %12.2f %10.4f\n", c.controllers[i].c_str(),
                a.mean.at("total_cost"), a.mean.at("final_accumulation"), a.mean.at("tvh"), a.mean.at("mean_cte"),
                a.mean.at("violations"), a.mean_latency_ms);
  }
  for (const auto& [a, ok] : c.checks)
    std::printf("%s: %s(%s) %s %g * %s(%s)\n", ok ? "PASS" : "FAIL", a.metric.c_str(), a.left.c_str(),
                a.op.c_str(), a.factor, a.metric.c_str(), a.right.c_str());
}

int cmd_train(const Common& c) {
  const json run = load_run(c);
  const auto bench = benchmark_from_config(run);
  json tj = run.value("train", json::object());
  if (c.seed) tj["seed"] = *c.seed;
  if (!c.method.empty()) tj["method"] = c.method;
  const TrainConfig cfg = parse_train_config(tj);
  const Dataset data = generate_dataset(*bench, cfg.dataset_size, RngStream(cfg.seed, "dataset"), "id");
  const TrainResult r = train(*bench, cfg, data, &std::cout);
  const std::string dir = out_dir(run);
  const std::string ck = dir + "/" + run.value("checkpoint_name", std::string(to_string(cfg.method)) + ".json");
  checkpoint_save(r.checkpoint, ck);
  r.report.write_csv(dir + "/" + std::string(to_string(cfg.method)) + "_train.csv");
  std::cout << "checkpoint " << ck << " hash " << r.checkpoint.hash << '\n';
  return 0;
}

int run_compare(const Common& c, bool single) {
  const json run = load_run(c);
  const auto bench = benchmark_from_config(run);
  const auto ctrls = controllers_from(run, *bench, c.controller);
  if (single && ctrls.size() != 1 && c.controller.empty())
    std::cerr << "note: evaluating all " << ctrls.size() << " controllers\n";
  const auto tasks = episode_tasks(*bench, run);
  const std::uint64_t seed = run.value("seed", std::uint64_t{0});
  const auto asserts = single ? std::vector<OrderingAssertion>{} : parse_assertions(run.value("assertions", json()));
  const Comparison cmp = compare(*bench, ctrls, tasks, seed, run.value("steps", 0), asserts);
  const std::string dir = out_dir(run);
  write_file(dir + "/episodes.csv", [&](std::ostream& o) { write_episodes_csv(o, cmp); });
  write_file(dir + "/timing.csv", [&](std::ostream& o) { write_timing_csv(o, cmp); });
  write_file(dir + "/summary.json", [&](std::ostream& o) { o << comparison_summary(cmp, run).dump(2) << '\n'; });
  if (single) {
    for (const auto& nc : ctrls) {
      ControllerPtr ctrl = nc.make();
      const ClosedLoopResult r = run_closed_loop(*bench, *ctrl, tasks.front(), run.value("steps", 0) > 0
                                                                                   ? run.value("steps", 0)
                                                                                   : bench->episode_steps(),
                                                 RngStream(seed, "compare").derive(std::uint64_t{0}));
      write_file(dir + "/trace_" + nc.name + ".csv", [&](std::ostream& o) { write_trace_csv(o, r); });
    }
  }
  print_table(cmp);
  return cmp.all_passed() ? 0 : 1;
}

int cmd_gradcheck(const std::string& scope, int trials, double tol, std::uint64_t seed) {
  std::vector<GradcheckReport> reps;
  if (scope == "layer" || scope == "all") reps.push_back(gradcheck_layer(trials, tol, seed));
  if (scope == "policy" || scope == "all") reps.push_back(gradcheck_policy(trials, tol, seed));
  if (scope == "rollout" || scope == "all") reps.push_back(gradcheck_rollout(trials, tol, seed));
  if (reps.empty()) throw InvalidArgument("gradcheck: scope must be layer, policy, rollout or all");
  bool ok = true;
  for (const auto& r : reps) {
    for (size_t i = 0; i < r.errors.size(); ++i) std::printf("%s trial %zu max_rel_err %.3e\n", r.scope.c_str(), i, r.errors[i]);
    std::printf("%s: %s (worst %.3e, tol %.1e)\n", r.scope.c_str(), r.passed() ? "PASS" : "FAIL", r.worst(),
                r.tolerance);
    ok = ok && r.passed();
  }
  return ok ? 0 : 1;
}

int cmd_dataset(const Common& c, int size, const std::string& variant) {
  const json run = load_run(c);
  const auto bench = benchmark_from_config(run);
  const std::uint64_t seed = run.value("seed", std::uint64_t{0});
  const Dataset d = generate_dataset(*bench, size, RngStream(seed, "dataset"), variant);
  json j;
  j["env"] = bench->name();
  j["variant"] = variant;
  j["seed"] = seed;
  json tasks = json::array();
  for (const auto& t : d)
    tasks.push_back({{"x0", detail::vec_json(t.x0)}, {"params", detail::vec_json(t.params)}});
  j["tasks"] = tasks;
  const std::string path = out_dir(run) + "/dataset_" + variant + ".json";
  write_file(path, [&](std::ostream& o) { o << j.dump(1) << '\n'; });
  std::cout << "wrote " << d.size() << " tasks to " << path << '\n';
  return 0;
}

void add_common(CLI::App* app, Common& c) {
  app->add_option("--config", c.config, "JSON run configuration");
  app->add_option("--seed", c.seed, "Seed override");
  app->add_option("--out", c.out, "Output directory");
  app->add_option("--env", c.env, "Environment override (double_integrator, bicycle_track, traffic_grid)");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Step-MPPI toolkit: sampling-based MPC, DPC and learned single-step MPPI"};
  app.require_subcommand(1);
  Common common;

  auto* train_cmd = app.add_subcommand("train", "Train a Step-MPPI or DPC policy");
  add_common(train_cmd, common);
  train_cmd->add_option("--method", common.method, "Override train.method")->check(CLI::IsMember({"step_mppi", "dpc"}));

  auto* eval_cmd = app.add_subcommand("eval", "Closed-loop evaluation of one controller");
  add_common(eval_cmd, common);
  eval_cmd->add_option("--controller", common.controller, "Controller name or type from the config");

  auto* cmp_cmd = app.add_subcommand("compare", "Compare controllers on shared tasks");
  add_common(cmp_cmd, common);
  cmp_cmd->add_option("--controller", common.controller, "Restrict to one controller");

  std::string scope = "all";
  int trials = 10;
  double tol = 1e-5;
  std::uint64_t gc_seed = 0;
  auto* gc_cmd = app.add_subcommand("gradcheck", "Finite-difference verification of analytic gradients");
  gc_cmd->add_option("--scope", scope, "layer | policy | rollout | all")->check(
      CLI::IsMember({"layer", "policy", "rollout", "all"}));
  gc_cmd->add_option("--trials", trials, "Trials per scope")->check(CLI::PositiveNumber);
  gc_cmd->add_option("--tolerance", tol, "Maximum relative error");
  gc_cmd->add_option("--seed", gc_seed, "Seed");

  int size = 100;
  std::string variant = "id";
  auto* ds_cmd = app.add_subcommand("dataset", "Sample and export task instances");
  add_common(ds_cmd, common);
  ds_cmd->add_option("--size", size, "Number of instances")->check(CLI::PositiveNumber);
  ds_cmd->add_option("--variant", variant, "id | ood")->check(CLI::IsMember({"id", "ood"}));

  CLI11_PARSE(app, argc, argv);
  try {
    if (*train_cmd) return cmd_train(common);
    if (*eval_cmd) return run_compare(common, true);
    if (*cmp_cmd) return run_compare(common, false);
    if (*gc_cmd) return cmd_gradcheck(scope, trials, tol, gc_seed);
    if (*ds_cmd) return cmd_dataset(common, size, variant);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
