#pragma once

#include <cmath>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "stepmppi/cost.hpp"
#include "stepmppi/env.hpp"
#include "stepmppi/rng.hpp"
#include "stepmppi/track.hpp"
#include "stepmppi/traffic.hpp"

namespace stepmppi {

using json = nlohmann::json;

/// One problem instance: initial state plus the parameters that generate its
/// per-step references r_k and model parameters xi_k.
struct Task {
  Vec x0;
  Vec params;
};

enum class EpisodeStatus { Running, Success, Failure, Timeout };

inline const char* to_string(EpisodeStatus s) {
  switch (s) {
    case EpisodeStatus::Running: return "running";
    case EpisodeStatus::Success: return "success";
    case EpisodeStatus::Failure: return "failure";
    case EpisodeStatus::Timeout: return "timeout";
  }
  return "?";
}

/// Per-episode bookkeeping for termination checks.
struct EpisodeMonitor {
  double progress = 0.0;
  double last_s = 0.0;
  bool started = false;
};

/// A registered environment: dynamics, cost contexts, policy feature map,
/// task samplers and episode termination.
class Benchmark {
 public:
  virtual ~Benchmark() = default;

  virtual std::string name() const = 0;
  const SystemModel& model() const { return *model_; }
  ModelPtr model_ptr() const { return model_; }
  const json& config() const { return config_; }

  /// Context for the transition that produces x_k (holds r_k), k >= 1.
  virtual CostContext context(const Task& task, long k) const = 0;
  /// Model parameters xi_k used in x_{k+1} = f(x_k, u_k; xi_k).
  virtual Vec xi(const Task&, long) const { return Vec(); }

  std::vector<CostContext> contexts(const Task& task, long t, int horizon) const {
    std::vector<CostContext> out;
    out.reserve(horizon);
    for (int h = 0; h < horizon; ++h) out.push_back(context(task, t + h + 1));
    return out;
  }
  std::vector<Vec> xis(const Task& task, long t, int horizon) const {
    std::vector<Vec> out;
    out.reserve(horizon);
    for (int h = 0; h < horizon; ++h) out.push_back(xi(task, t + h));
    return out;
  }

  /// Policy input before normalization: a differentiable function of x.
  virtual Vec features(const Vec& x, const CostContext& ctx_next, const Vec& xi) const {
    Vec f(x.size() + ctx_next.target.size() + ctx_next.preview.size() + xi.size());
    f << x, ctx_next.target, ctx_next.preview, xi;
    return f;
  }
  /// w^T d features / dx.
  virtual Vec features_vjp_x(const Vec& x, const CostContext&, const Vec&, const Vec& w) const {
    return w.head(x.size());
  }
  int feature_dim() const {
    Task t = sample_task_at(0);
    return static_cast<int>(features(t.x0, context(t, 1), xi(t, 0)).size());
  }

  /// Draws a task. `variant` selects the initial-condition distribution
  /// ("id" for training, "ood" for the shifted evaluation distribution).
  virtual Task sample_task(RngStream& rng, std::string_view variant = "id") const = 0;
  virtual bool admissible(const Task& task) const { return task.x0.allFinite(); }

  virtual int episode_steps() const = 0;

  /// Status after transition t -> t+1 produced x_next.
  virtual EpisodeStatus monitor(const Task&, const Vec&, long t_next, EpisodeMonitor&) const {
    return t_next >= episode_steps() ? EpisodeStatus::Success : EpisodeStatus::Running;
  }

  /// Default policy-input normalization floor on per-feature std.
  virtual double feature_std_floor() const { return 1e-2; }

 protected:
  Benchmark(ModelPtr model, json config) : model_(std::move(model)), config_(std::move(config)) {}

  Task sample_task_at(std::uint64_t seed) const {
    RngStream rng(seed, "feature-probe");
    return sample_task(rng);
  }

  ModelPtr model_;
  json config_;
};

using BenchmarkPtr = std::shared_ptr<const Benchmark>;

namespace detail {
template <typename T>
T get_or(const json& j, const char* key, T fallback) {
  return j.contains(key) ? j.at(key).get<T>() : fallback;
}
inline Vec to_vec(const std::vector<double>& v) { return Eigen::Map<const Vec>(v.data(), v.size()); }
}  // namespace detail

// ---------------------------------------------------------------------------

/// Regulation of point masses to the origin.
class DoubleIntegratorBenchmark final : public Benchmark {
 public:
  struct Params {
    int axes = 1;
    double dt = 0.1;
    double accel_limit = 10.0;
    double q_pos = 1.0;
    double q_vel = 0.1;
    double r = 0.1;
    double init_pos = 1.0;   ///< x0 ~ U[-init_pos, init_pos]
    double init_vel = 1.0;
    double ood_scale = 2.0;
    int episode_steps = 60;
    double goal_radius = 0.05;
  };

  explicit DoubleIntegratorBenchmark(const json& cfg)
      : DoubleIntegratorBenchmark(parse(cfg), cfg) {}

  std::string name() const override { return "double_integrator"; }
  const Params& params() const { return p_; }

  CostContext context(const Task&, long) const override { return ctx_; }

  Task sample_task(RngStream& rng, std::string_view variant) const override {
    const double s = variant == "ood" ? p_.ood_scale : 1.0;
    Task t{Vec(2 * p_.axes), Vec()};
    for (int i = 0; i < p_.axes; ++i) {
      t.x0[i] = rng.uniform(-s * p_.init_pos, s * p_.init_pos);
      t.x0[p_.axes + i] = rng.uniform(-s * p_.init_vel, s * p_.init_vel);
    }
    return t;
  }

  int episode_steps() const override { return p_.episode_steps; }

  /// Runs the full step budget; success if the final state is inside the goal ball.
  EpisodeStatus monitor(const Task&, const Vec& x, long t_next, EpisodeMonitor&) const override {
    if (t_next < episode_steps()) return EpisodeStatus::Running;
    return x.norm() <= p_.goal_radius ? EpisodeStatus::Success : EpisodeStatus::Timeout;
  }

  double feature_std_floor() const override { return 0.1; }

 private:
  DoubleIntegratorBenchmark(Params p, const json& cfg)
      : Benchmark(std::make_shared<DoubleIntegrator>(p.axes, p.dt, p.accel_limit), cfg), p_(p) {
    const int nx = 2 * p_.axes, nu = p_.axes;
    ctx_.target = Vec::Zero(nx);
    ctx_.u_ref = Vec::Zero(nu);
    ctx_.state_weight = Vec(nx);
    ctx_.state_weight.head(nu).setConstant(p_.q_pos);
    ctx_.state_weight.tail(nu).setConstant(p_.q_vel);
    ctx_.input_weight = Vec::Constant(nu, p_.r);
    ctx_.validate(nx, nu);
  }

  static Params parse(const json& j) {
    Params p;
    p.axes = detail::get_or(j, "axes", p.axes);
    p.dt = detail::get_or(j, "dt", p.dt);
    p.accel_limit = detail::get_or(j, "accel_limit", p.accel_limit);
    p.q_pos = detail::get_or(j, "q_pos", p.q_pos);
    p.q_vel = detail::get_or(j, "q_vel", p.q_vel);
    p.r = detail::get_or(j, "r", p.r);
    p.init_pos = detail::get_or(j, "init_pos", p.init_pos);
    p.init_vel = detail::get_or(j, "init_vel", p.init_vel);
    p.ood_scale = detail::get_or(j, "ood_scale", p.ood_scale);
    p.episode_steps = detail::get_or(j, "episode_steps", p.episode_steps);
    p.goal_radius = detail::get_or(j, "goal_radius", p.goal_radius);
    if (p.axes < 1) throw InvalidArgument("double_integrator: axes must be >= 1");
    return p;
  }

  Params p_;
  CostContext ctx_;
};

// ---------------------------------------------------------------------------

/// Kinematic bicycle following a time-indexed reference around a closed track
/// with linear border constraints.
class BicycleBenchmark final : public Benchmark {
 public:
  struct Params {
    double dt = 0.05;
    double wheelbase = 0.33;
    double accel_limit = 4.0;
    double steer_limit = 0.4;
    double speed = 4.0;  ///< reference speed
    double half_width = 0.6;
    double track_ax = 12.0, track_by = 6.0, track_c = 1.5;
    int track_k = 3;
    int track_points = 1000;
    double q_pos = 10.0, q_vel = 1.0, q_heading = 1.0;
    double r_accel = 0.01, r_steer = 0.1;
    double border_weight = 1000.0;
    double v_min = 0.5, v_max = 8.0;
    double speed_weight = 100.0;
    double init_lateral = 0.2, init_heading = 0.1, init_speed = 0.3;
    double ood_scale = 2.0;
    std::vector<int> preview_steps = {5, 10, 20};
    double lap_margin = 1.3;  ///< episode length = margin * lap time
  };

  explicit BicycleBenchmark(const json& cfg) : BicycleBenchmark(parse(cfg), cfg) {}

  std::string name() const override { return "bicycle_track"; }
  const Params& params() const { return p_; }
  const TrackGeometry& track() const { return track_; }

  double arc_at(const Task& task, long k) const { return task.params[0] + p_.speed * p_.dt * k; }

  CostContext context(const Task& task, long k) const override {
    const double s = arc_at(task, k);
    const auto w = track_.at(s);
    CostContext c = base_;
    c.target = Vec(4);
    c.target << w.x, w.y, w.speed, w.heading;
    const auto hs = track_.half_space(s);
    c.constraints[0].terms = {{0, hs.a}, {1, hs.b}};
    c.constraints[0].lower = hs.c_right;
    c.constraints[0].upper = hs.c_left;
    c.preview = Vec(p_.preview_steps.size());
    for (size_t i = 0; i < p_.preview_steps.size(); ++i)
      c.preview[static_cast<long>(i)] = track_.at(s + p_.speed * p_.dt * p_.preview_steps[i]).heading - w.heading;
    return c;
  }

  /// [e_lon, e_lat, e_heading, v, v_ref, preview...], target errors in the body frame.
  Vec features(const Vec& x, const CostContext& ctx, const Vec&) const override {
    const double c = std::cos(x[3]), s = std::sin(x[3]);
    const double dx = ctx.target[0] - x[0], dy = ctx.target[1] - x[1];
    Vec f(5 + ctx.preview.size());
    f[0] = c * dx + s * dy;
    f[1] = -s * dx + c * dy;
    f[2] = ctx.target[3] - x[3];
    f[3] = x[2];
    f[4] = ctx.target[2];
    f.tail(ctx.preview.size()) = ctx.preview;
    return f;
  }

  Vec features_vjp_x(const Vec& x, const CostContext& ctx, const Vec&, const Vec& w) const override {
    const double c = std::cos(x[3]), s = std::sin(x[3]);
    const double dx = ctx.target[0] - x[0], dy = ctx.target[1] - x[1];
    const double lon = c * dx + s * dy, lat = -s * dx + c * dy;
    Vec g = Vec::Zero(4);
    g[0] = -c * w[0] + s * w[1];
    g[1] = -s * w[0] - c * w[1];
    g[2] = w[3];
    g[3] = lat * w[0] - lon * w[1] - w[2];
    return g;
  }

  Task sample_task(RngStream& rng, std::string_view variant) const override {
    const double k = variant == "ood" ? p_.ood_scale : 1.0;
    const double s0 = rng.uniform(0.0, track_.length());
    const auto w = track_.at(s0);
    const double lat = k * rng.uniform(-p_.init_lateral, p_.init_lateral);
    Task t{Vec(4), Vec(1)};
    t.params[0] = s0;
    t.x0 << w.x - std::sin(w.heading) * lat, w.y + std::cos(w.heading) * lat,
        p_.speed + k * rng.uniform(-p_.init_speed, p_.init_speed),
        w.heading + k * rng.uniform(-p_.init_heading, p_.init_heading);
    return t;
  }

  bool admissible(const Task& t) const override {
    if (!t.x0.allFinite()) return false;
    return std::abs(track_.project(t.x0[0], t.x0[1]).lateral) < p_.half_width;
  }

  int episode_steps() const override {
    return static_cast<int>(std::ceil(p_.lap_margin * track_.length() / (p_.speed * p_.dt)));
  }

  /// Failure on border departure, success after one full lap of progress.
  EpisodeStatus monitor(const Task& task, const Vec& x, long t_next, EpisodeMonitor& m) const override {
    const auto proj = track_.project(x[0], x[1]);
    if (!m.started) {
      m.started = true;
      m.last_s = task.params[0];
    }
    const double len = track_.length();
    m.progress += std::remainder(proj.s - m.last_s, len);
    m.last_s = proj.s;
    if (std::abs(proj.lateral) > p_.half_width) return EpisodeStatus::Failure;
    if (m.progress >= len) return EpisodeStatus::Success;
    if (t_next >= episode_steps()) return EpisodeStatus::Timeout;
    return EpisodeStatus::Running;
  }

  double feature_std_floor() const override { return 0.05; }

 private:
  BicycleBenchmark(Params p, const json& cfg)
      : Benchmark(std::make_shared<KinematicBicycle>(p.dt, p.wheelbase,
                                                     Vec2(-p.accel_limit, -p.steer_limit),
                                                     Vec2(p.accel_limit, p.steer_limit)),
                  cfg),
        p_(p),
        track_(TrackGeometry::parametric(p.track_ax, p.track_by, p.track_c, p.track_k, p.track_points,
                                         p.speed, p.half_width)) {
    base_.u_ref = Vec::Zero(2);
    base_.state_weight = Vec(4);
    base_.state_weight << p_.q_pos, p_.q_pos, p_.q_vel, p_.q_heading;
    base_.input_weight = Vec(2);
    base_.input_weight << p_.r_accel, p_.r_steer;
    LinearConstraint border;
    border.weight = p_.border_weight;
    LinearConstraint speed;
    speed.terms = {{2, 1.0}};
    speed.lower = p_.v_min;
    speed.upper = p_.v_max;
    speed.weight = p_.speed_weight;
    base_.constraints = {border, speed};
  }

  static Vec Vec2(double a, double b) {
    Vec v(2);
    v << a, b;
    return v;
  }

  static Params parse(const json& j) {
    Params p;
    p.dt = detail::get_or(j, "dt", p.dt);
    p.wheelbase = detail::get_or(j, "wheelbase", p.wheelbase);
    p.accel_limit = detail::get_or(j, "accel_limit", p.accel_limit);
    p.steer_limit = detail::get_or(j, "steer_limit", p.steer_limit);
    p.speed = detail::get_or(j, "speed", p.speed);
    p.half_width = detail::get_or(j, "half_width", p.half_width);
    p.track_ax = detail::get_or(j, "track_ax", p.track_ax);
    p.track_by = detail::get_or(j, "track_by", p.track_by);
    p.track_c = detail::get_or(j, "track_c", p.track_c);
    p.track_k = detail::get_or(j, "track_k", p.track_k);
    p.track_points = detail::get_or(j, "track_points", p.track_points);
    p.q_pos = detail::get_or(j, "q_pos", p.q_pos);
    p.q_vel = detail::get_or(j, "q_vel", p.q_vel);
    p.q_heading = detail::get_or(j, "q_heading", p.q_heading);
    p.r_accel = detail::get_or(j, "r_accel", p.r_accel);
    p.r_steer = detail::get_or(j, "r_steer", p.r_steer);
    p.border_weight = detail::get_or(j, "border_weight", p.border_weight);
    p.v_min = detail::get_or(j, "v_min", p.v_min);
    p.v_max = detail::get_or(j, "v_max", p.v_max);
    p.speed_weight = detail::get_or(j, "speed_weight", p.speed_weight);
    p.init_lateral = detail::get_or(j, "init_lateral", p.init_lateral);
    p.init_heading = detail::get_or(j, "init_heading", p.init_heading);
    p.init_speed = detail::get_or(j, "init_speed", p.init_speed);
    p.ood_scale = detail::get_or(j, "ood_scale", p.ood_scale);
    p.preview_steps = detail::get_or(j, "preview_steps", p.preview_steps);
    p.lap_margin = detail::get_or(j, "lap_margin", p.lap_margin);
    if (!(p.speed > 0.0)) throw InvalidArgument("bicycle_track: speed must be positive");
    return p;
  }

  Params p_;
  TrackGeometry track_;
  CostContext base_;
};

// ---------------------------------------------------------------------------

/// Perimeter control on a grid of MFD regions: dissipate accumulated traffic.
class TrafficBenchmark final : public Benchmark {
 public:
  struct Params {
    int rows = 4, cols = 4;
    double free_flow_slope = 0.008;  ///< veh/s per vehicle at low accumulation
    double jam = 13000.0;
    double demand_rate = 0.02;       ///< veh/s per OD pair
    double demand_decay_steps = 20.0;
    double dt = 60.0;
    double u_lo = 0.1, u_hi = 1.0;
    double q = 1e-6;                 ///< per-cell quadratic accumulation weight
    double safe_fraction = 0.45;     ///< region-total soft limit as fraction of jam
    double region_weight = 1e-5;
    double gate_weight = 10.0;       ///< soft gate-bound penalty
    std::vector<std::array<int, 2>> hot_cells = {{1, 5}, {0, 6}, {5, 0}, {6, 1}};
    double hot_mean = 4000.0, hot_std = 100.0;
    double ood_mean = 5000.0, ood_std = 200.0;
    double cell_mean = 150.0, cell_std = 20.0;
    double clip_max = 15000.0;
    int episode_steps = 40;
  };

  explicit TrafficBenchmark(const json& cfg) : TrafficBenchmark(parse(cfg), cfg) {}

  std::string name() const override { return "traffic_grid"; }
  const Params& params() const { return p_; }
  const TrafficNetwork& network() const { return *net_; }
  std::shared_ptr<const TrafficNetwork> network_ptr() const { return net_; }

  CostContext context(const Task&, long) const override { return ctx_; }
  Vec xi(const Task&, long k) const override {
    Vec v(1);
    v[0] = net_->demand_scale(static_cast<double>(k));
    return v;
  }

  Vec features(const Vec& x, const CostContext&, const Vec& xi) const override {
    Vec f(x.size() + xi.size());
    f << x, xi;
    return f;
  }

  Task sample_task(RngStream& rng, std::string_view variant) const override {
    const int r = net_->regions();
    Task t{Vec(r * r), Vec()};
    for (int k = 0; k < r * r; ++k) t.x0[k] = std::clamp(rng.normal(p_.cell_mean, p_.cell_std), 0.0, p_.clip_max);
    const bool ood = variant == "ood";
    for (const auto& hc : p_.hot_cells) {
      const double v = ood ? rng.normal(p_.ood_mean, p_.ood_std) : rng.normal(p_.hot_mean, p_.hot_std);
      t.x0[hc[0] * r + hc[1]] = std::clamp(v, 0.0, p_.clip_max);
    }
    return t;
  }

  bool admissible(const Task& t) const override { return t.x0.allFinite() && (t.x0.array() >= 0.0).all(); }

  int episode_steps() const override { return p_.episode_steps; }
  double feature_std_floor() const override { return 1000.0; }

 private:
  TrafficBenchmark(Params p, const json& cfg)
      : TrafficBenchmark(p, cfg, make_network(p, cfg)) {}

  TrafficBenchmark(Params p, const json& cfg, std::shared_ptr<const TrafficNetwork> net)
      : Benchmark(std::make_shared<TrafficModel>(net), cfg), p_(std::move(p)), net_(std::move(net)) {
    const int r = net_->regions();
    const int nu = net_->num_gates();
    for (const auto& hc : p_.hot_cells)
      if (hc[0] < 0 || hc[0] >= r || hc[1] < 0 || hc[1] >= r)
        throw InvalidArgument("traffic_grid: hot cell index out of range");
    ctx_.target = Vec::Zero(r * r);
    ctx_.state_weight = Vec::Constant(r * r, p_.q);
    ctx_.u_ref = Vec::Zero(nu);
    ctx_.input_weight = Vec::Zero(nu);
    ctx_.u_lower = Vec::Constant(nu, net_->spec().u_lo);
    ctx_.u_upper = Vec::Constant(nu, net_->spec().u_hi);
    ctx_.input_bound_weight = p_.gate_weight;
    for (int i = 0; i < r; ++i) {
      LinearConstraint c;
      for (int j = 0; j < r; ++j) c.terms.emplace_back(i * r + j, 1.0);
      c.upper = p_.safe_fraction * net_->jam(i);
      c.weight = p_.region_weight;
      ctx_.constraints.push_back(std::move(c));
    }
    ctx_.validate(r * r, nu);
  }

  static std::shared_ptr<const TrafficNetwork> make_network(const Params& p, const json& cfg);

  static Params parse(const json& j) {
    Params p;
    p.rows = detail::get_or(j, "rows", p.rows);
    p.cols = detail::get_or(j, "cols", p.cols);
    p.free_flow_slope = detail::get_or(j, "free_flow_slope", p.free_flow_slope);
    p.jam = detail::get_or(j, "jam", p.jam);
    p.demand_rate = detail::get_or(j, "demand_rate", p.demand_rate);
    p.demand_decay_steps = detail::get_or(j, "demand_decay_steps", p.demand_decay_steps);
    p.dt = detail::get_or(j, "dt", p.dt);
    p.u_lo = detail::get_or(j, "u_lo", p.u_lo);
    p.u_hi = detail::get_or(j, "u_hi", p.u_hi);
    p.q = detail::get_or(j, "q", p.q);
    p.safe_fraction = detail::get_or(j, "safe_fraction", p.safe_fraction);
    p.region_weight = detail::get_or(j, "region_weight", p.region_weight);
    p.gate_weight = detail::get_or(j, "gate_weight", p.gate_weight);
    p.hot_cells = detail::get_or(j, "hot_cells", p.hot_cells);
    p.hot_mean = detail::get_or(j, "hot_mean", p.hot_mean);
    p.hot_std = detail::get_or(j, "hot_std", p.hot_std);
    p.ood_mean = detail::get_or(j, "ood_mean", p.ood_mean);
    p.ood_std = detail::get_or(j, "ood_std", p.ood_std);
    p.cell_mean = detail::get_or(j, "cell_mean", p.cell_mean);
    p.cell_std = detail::get_or(j, "cell_std", p.cell_std);
    p.clip_max = detail::get_or(j, "clip_max", p.clip_max);
    p.episode_steps = detail::get_or(j, "episode_steps", p.episode_steps);
    return p;
  }

  Params p_;
  std::shared_ptr<const TrafficNetwork> net_;
  CostContext ctx_;
};

// ---------------------------------------------------------------------------

json network_to_json(const TrafficNetwork& net);
TrafficNetwork::Spec network_spec_from_json(const json& j);

inline json network_to_json(const TrafficNetwork& net) {
  const auto& s = net.spec();
  json j;
  j["regions"] = s.regions;
  j["neighbors"] = s.neighbors;
  json mfd = json::array();
  for (const auto& m : s.mfd) mfd.push_back({m.a, m.b, m.c});
  j["mfd"] = mfd;
  json routing = json::array();
  const int r = s.regions;
  for (int i = 0; i < r; ++i)
    for (int h = 0; h < r; ++h)
      for (int k = 0; k < r; ++k)
        if (net.theta(i, h, k) != 0.0) routing.push_back({i, h, k, net.theta(i, h, k)});
  j["routing"] = routing;
  j["demand"] = s.demand;
  j["demand_decay_steps"] = s.demand_decay_steps;
  j["u_lo"] = s.u_lo;
  j["u_hi"] = s.u_hi;
  j["dt"] = s.dt;
  j["eps_empty"] = s.eps_empty;
  return j;
}

inline TrafficNetwork::Spec network_spec_from_json(const json& j) {
  try {
    TrafficNetwork::Spec s;
    s.regions = j.at("regions").get<int>();
    const int r = s.regions;
    if (r < 1) throw InvalidArgument("network: regions must be >= 1");
    s.neighbors = j.at("neighbors").get<std::vector<std::vector<int>>>();
    for (const auto& m : j.at("mfd")) s.mfd.push_back({m.at(0).get<double>(), m.at(1).get<double>(), m.at(2).get<double>()});
    s.routing.assign(static_cast<size_t>(r) * r * r, 0.0);
    for (const auto& e : j.at("routing")) {
      const int i = e.at(0), h = e.at(1), k = e.at(2);
      if (i < 0 || i >= r || h < 0 || h >= r || k < 0 || k >= r)
        throw InvalidArgument("network: routing index out of range");
      s.routing[(static_cast<size_t>(i) * r + h) * r + k] = e.at(3).get<double>();
    }
    s.demand = j.at("demand").get<std::vector<double>>();
    s.demand_decay_steps = j.value("demand_decay_steps", 0.0);
    s.u_lo = j.value("u_lo", 0.1);
    s.u_hi = j.value("u_hi", 1.0);
    s.dt = j.value("dt", 60.0);
    s.eps_empty = j.value("eps_empty", 1e-6);
    return s;
  } catch (const json::exception& e) {
    throw FormatError(std::string("network: malformed description: ") + e.what());
  }
}

inline std::shared_ptr<const TrafficNetwork> TrafficBenchmark::make_network(const Params& p, const json& cfg) {
  if (cfg.contains("network")) return std::make_shared<TrafficNetwork>(network_spec_from_json(cfg.at("network")));
  auto spec = TrafficNetwork::grid_spec(p.rows, p.cols, p.free_flow_slope, p.jam, p.demand_rate,
                                        p.demand_decay_steps, p.dt);
  spec.u_lo = p.u_lo;
  spec.u_hi = p.u_hi;
  return std::make_shared<TrafficNetwork>(std::move(spec));
}

// ---------------------------------------------------------------------------

inline const std::vector<std::string>& registered_benchmarks() {
  static const std::vector<std::string> names = {"double_integrator", "bicycle_track", "traffic_grid"};
  return names;
}

/// Environment registry. `cfg` holds environment parameters (missing keys take
/// defaults).
inline BenchmarkPtr build_benchmark(const std::string& name, const json& cfg = json::object()) {
  if (name == "double_integrator") return std::make_shared<DoubleIntegratorBenchmark>(cfg);
  if (name == "bicycle_track") return std::make_shared<BicycleBenchmark>(cfg);
  if (name == "traffic_grid") return std::make_shared<TrafficBenchmark>(cfg);
  std::string known;
  for (const auto& n : registered_benchmarks()) known += (known.empty() ? "" : ", ") + n;
  throw NotFound("unknown environment '" + name + "'; registered: " + known);
}

}  // namespace stepmppi
