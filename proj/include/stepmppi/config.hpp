#pragma once

#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "stepmppi/benchmark.hpp"
#include "stepmppi/eval.hpp"
#include "stepmppi/training.hpp"

namespace stepmppi {

/// Reads a JSON config file.
inline json load_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw NotFound("config: cannot open '" + path + "'");
  try {
    return json::parse(in, nullptr, true, true);
  } catch (const json::exception& e) {
    throw FormatError("config: '" + path + "' is not valid JSON: " + e.what());
  }
}

namespace detail {
inline Vec vec_or(const json& j, const char* key, const Vec& fallback) {
  if (!j.contains(key)) return fallback;
  const json& v = j.at(key);
  if (v.is_number()) return Vec::Constant(1, v.get<double>());
  return json_vec(v);
}
}  // namespace detail

inline TrainConfig parse_train_config(const json& j) {
  try {
    TrainConfig c;
    const std::string method = j.value("method", std::string("step_mppi"));
    if (method == "step_mppi")
      c.method = Method::StepMppi;
    else if (method == "dpc")
      c.method = Method::Dpc;
    else
      throw InvalidArgument("train: unknown method '" + method + "' (expected step_mppi or dpc)");
    c.horizon = j.value("horizon", c.horizon);
    c.batch = j.value("batch", c.batch);
    c.epochs = j.value("epochs", c.epochs);
    c.dataset_size = j.value("dataset_size", c.dataset_size);
    c.lr = j.value("lr", c.lr);
    c.cosine_decay = j.value("cosine_decay", c.cosine_decay);
    c.beta1 = j.value("beta1", c.beta1);
    c.beta2 = j.value("beta2", c.beta2);
    c.eps_adam = j.value("eps_adam", c.eps_adam);
    c.gamma = j.value("gamma", c.gamma);
    c.lambda = j.value("lambda", c.lambda);
    c.samples = j.value("samples", c.samples);
    c.clip_norm = j.value("clip_norm", c.clip_norm);
    c.truncated_bptt = j.value("truncated_bptt", c.truncated_bptt);
    c.hidden = j.value("hidden", c.hidden);
    c.sigma0 = detail::vec_or(j, "sigma0", c.sigma0);
    c.mean_scale = j.value("mean_scale", c.mean_scale);
    c.seed = j.value("seed", c.seed);
    c.validate();
    return c;
  } catch (const json::exception& e) {
    throw FormatError(std::string("train config: ") + e.what());
  }
}

inline MppiConfig parse_mppi_config(const json& j) {
  try {
    MppiConfig c;
    c.horizon = j.value("horizon", c.horizon);
    c.samples = j.value("samples", c.samples);
    c.lambda = j.value("lambda", c.lambda);
    c.sigma = detail::vec_or(j, "sigma", c.sigma);
    c.iterations = j.value("iterations", c.iterations);
    c.update_covariance = j.value("update_covariance", c.update_covariance);
    c.warm_start = j.value("warm_start", c.warm_start);
    c.diag_floor = j.value("diag_floor", c.diag_floor);
    return c;
  } catch (const json::exception& e) {
    throw FormatError(std::string("mppi config: ") + e.what());
  }
}

/// Controller spec: {"type": "baseline" | "mppi" | "dpc" | "step_mppi", ...}.
/// A scalar "sigma" is broadcast to every input channel.
inline NamedController make_controller(const json& spec, const Benchmark& bench) {
  try {
    const std::string type = spec.at("type").get<std::string>();
    const std::string name = spec.value("name", type);
    const SystemModel& m = bench.model();
    if (type == "baseline") {
      const std::string level = spec.value("level", std::string("upper"));
      Vec u = level == "upper" ? m.u_max() : level == "lower" ? m.u_min() : m.u_mid();
      if (level != "upper" && level != "lower" && level != "mid")
        throw InvalidArgument("baseline: level must be upper, lower or mid");
      return {name, [name, u] { return std::make_unique<ConstantController>(name, u); }};
    }
    if (type == "mppi") {
      MppiConfig c = parse_mppi_config(spec);
      if (c.sigma.size() == 1 && m.input_dim() > 1) c.sigma = Vec::Constant(m.input_dim(), c.sigma[0]);
      c.validate(m.input_dim());
      return {name, [name, c] { return std::make_unique<MppiController>(c, name); }};
    }
    if (type == "dpc" || type == "step_mppi") {
      const Checkpoint ck = checkpoint_load(spec.at("checkpoint").get<std::string>());
      detail::check_policy_fits(bench, ck.params);
      if (type == "dpc") return {name, [name, ck] { return std::make_unique<DpcController>(ck, name); }};
      const int k = spec.value("samples", 64);
      double lambda = 1.0;
      if (ck.metadata.contains("train")) lambda = ck.metadata["train"].value("lambda", lambda);
      lambda = spec.value("lambda", lambda);
      return {name, [name, ck, k, lambda] { return std::make_unique<StepMppiController>(ck, k, lambda, name); }};
    }
    throw InvalidArgument("unknown controller type '" + type + "' (expected baseline, mppi, dpc or step_mppi)");
  } catch (const json::exception& e) {
    throw FormatError(std::string("controller spec: ") + e.what());
  }
}

inline std::vector<OrderingAssertion> parse_assertions(const json& j) {
  std::vector<OrderingAssertion> out;
  if (!j.is_array()) return out;
  for (const auto& a : j) {
    OrderingAssertion o;
    o.metric = a.at("metric");
    o.left = a.at("left");
    o.right = a.at("right");
    o.op = a.value("op", o.op);
    o.factor = a.value("factor", o.factor);
    out.push_back(o);
  }
  return out;
}

inline BenchmarkPtr benchmark_from_config(const json& run) {
  if (!run.contains("env")) throw InvalidArgument("config: missing 'env' section");
  const json& e = run.at("env");
  return build_benchmark(e.at("name").get<std::string>(), e.value("params", json::object()));
}

}  // namespace stepmppi
