#pragma once

#include <algorithm>
#include <cmath>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "stepmppi/env.hpp"

namespace stepmppi {

/// Cubic macroscopic fundamental diagram g(n) = a n^3 + b n^2 + c n, taken as
/// zero beyond its first positive root (the jam accumulation).
struct Mfd {
  double a = 0.0, b = 0.0, c = 0.0;

  /// Symmetric-shoulder cubic c n (1 - n / n_jam)^2: peak at n_jam / 3, double
  /// root (zero slope) at n_jam.
  static Mfd from_peak(double free_flow_slope, double jam) {
    return {free_flow_slope / (jam * jam), -2.0 * free_flow_slope / jam, free_flow_slope};
  }

  /// Smallest positive root of a n^2 + b n + c, +inf if none.
  double jam() const {
    if (a == 0.0) return b < 0.0 ? -c / b : INFINITY;
    double disc = b * b - 4.0 * a * c;
    if (disc < 0.0 && disc > -1e-9 * b * b) disc = 0.0;  // rounding at a double root
    if (disc < 0.0) return INFINITY;
    const double sq = std::sqrt(disc);
    double r1 = (-b - sq) / (2.0 * a), r2 = (-b + sq) / (2.0 * a);
    if (r1 > r2) std::swap(r1, r2);
    if (r1 > 0.0) return r1;
    if (r2 > 0.0) return r2;
    return INFINITY;
  }

  double value(double n, double jam_n) const {
    if (n <= 0.0 || n >= jam_n) return 0.0;
    return std::max(0.0, ((a * n + b) * n + c) * n);
  }

  double slope(double n, double jam_n) const {
    if (n <= 0.0 || n >= jam_n) return 0.0;
    if (((a * n + b) * n + c) * n < 0.0) return 0.0;
    return (3.0 * a * n + 2.0 * b) * n + c;
  }
};

/// Multi-region network with accumulations x_ij (region i, destination j),
/// MFD outflow per region, routing fractions theta_ihj and perimeter gates
/// u_ih on every directed adjacency i -> h. Immutable after construction.
class TrafficNetwork {
 public:
  struct Spec {
    int regions = 0;
    std::vector<std::vector<int>> neighbors;
    std::vector<Mfd> mfd;
    /// theta[(i * R + h) * R + j]; zero unless h is a neighbor of i and j != i.
    std::vector<double> routing;
    /// Base demand d_ij in veh/s, row-major R x R.
    std::vector<double> demand;
    /// Demand scale max(0, 1 - t / demand_decay_steps); <= 0 keeps demand constant.
    double demand_decay_steps = 0.0;
    double u_lo = 0.1;
    double u_hi = 1.0;
    double dt = 60.0;
    double eps_empty = 1e-6;
  };

  explicit TrafficNetwork(Spec spec) : s_(std::move(spec)) { validate_and_index(); }

  const Spec& spec() const { return s_; }
  int regions() const { return s_.regions; }
  int num_gates() const { return static_cast<int>(edges_.size()); }
  const std::vector<std::pair<int, int>>& gates() const { return edges_; }
  int gate_index(int from, int to) const {
    for (int e : out_edges_[from])
      if (edges_[e].second == to) return e;
    return -1;
  }
  double jam(int region) const { return jam_[region]; }
  double dt() const { return s_.dt; }

  double theta(int i, int h, int j) const {
    const int r = s_.regions;
    return s_.routing[(static_cast<size_t>(i) * r + h) * r + j];
  }

  double demand_scale(double t) const {
    if (s_.demand_decay_steps <= 0.0) return 1.0;
    return std::max(0.0, 1.0 - t / s_.demand_decay_steps);
  }

  double mfd(int i, double n) const { return s_.mfd[i].value(n, jam_[i]); }

  /// Forward-Euler step on flattened accumulations (row-major R x R), gate
  /// vector indexed like gates(). Result clamped at zero.
  void step_into(const ConstVecRef& x, const ConstVecRef& gates, double demand_scale,
                 Eigen::Ref<Vec> out) const {
    thread_local std::vector<double> share;
    euler_unclamped(x, gates, demand_scale, share, out);
    for (long k = 0; k < out.size(); ++k) out[k] = std::max(0.0, out[k]);
  }

  /// Adjoint of step_into: given w = dL/dout returns (dL/dx, dL/dgates).
  std::pair<Vec, Vec> adjoint(const Vec& x, const Vec& gates, double demand_scale,
                              const Vec& w) const {
    const int r = s_.regions;
    const double h = s_.dt;
    std::vector<double> share;
    Vec pre(r * r);
    euler_unclamped(x, gates, demand_scale, share, pre);
    Vec wp(r * r);
    for (int k = 0; k < r * r; ++k) wp[k] = pre[k] > 0.0 ? w[k] : 0.0;

    // adjoint on share_ij = x_ij g(n_i) / n_i
    std::vector<double> as(static_cast<size_t>(r) * r, 0.0);
    Vec gu = Vec::Zero(num_gates());
    for (int i = 0; i < r; ++i) as[i * r + i] -= h * wp[i * r + i];
    for (size_t e = 0; e < edges_.size(); ++e) {
      const auto [i, to] = edges_[e];
      const double gate = gates[static_cast<long>(e)];
      const double* th = &s_.routing[(static_cast<size_t>(i) * r + to) * r];
      double acc = 0.0;
      for (int j : routed_[e]) {
        const double diff = wp[to * r + j] - wp[i * r + j];
        as[i * r + j] += h * gate * th[j] * diff;
        acc += h * th[j] * share[i * r + j] * diff;
      }
      gu[static_cast<long>(e)] = acc;
    }
    Vec gx = wp;
    for (int i = 0; i < r; ++i) {
      double n = 0.0;
      for (int j = 0; j < r; ++j) n += x[i * r + j];
      if (n < s_.eps_empty) continue;
      const double g = mfd(i, n);
      const double dg = s_.mfd[i].slope(n, jam_[i]);
      double an = 0.0;
      for (int j = 0; j < r; ++j) {
        const double a = as[i * r + j];
        gx[i * r + j] += a * g / n;
        an += a * x[i * r + j] * (dg / n - g / (n * n));
      }
      for (int j = 0; j < r; ++j) gx[i * r + j] += an;
    }
    return {gx, gu};
  }

  /// Gate matrix (R x R, entry (i, h) = u_ih) to gate vector.
  Vec gates_from_matrix(const Mat& u) const {
    Vec g(num_gates());
    for (size_t e = 0; e < edges_.size(); ++e) g[static_cast<long>(e)] = u(edges_[e].first, edges_[e].second);
    return g;
  }

  /// Forward-Euler step on the accumulation matrix at time index t.
  Mat traffic_step(const Mat& x, const Mat& u, int t) const {
    const int r = s_.regions;
    if (x.rows() != r || x.cols() != r || u.rows() != r || u.cols() != r)
      throw InvalidArgument("traffic_step: matrices must be R x R");
    if ((x.array() < 0.0).any()) throw InvalidArgument("traffic_step: negative accumulation");
    Mat xt = x.transpose();  // row-major flatten
    Vec flat = Eigen::Map<const Vec>(xt.data(), r * r);
    Vec out(r * r);
    step_into(flat, gates_from_matrix(u), demand_scale(t), out);
    Mat res(r, r);
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < r; ++j) res(i, j) = out[i * r + j];
    return res;
  }

  /// Default perimeter-control benchmark: rows x cols grid, shortest-path
  /// routing split evenly over neighbors that reduce the Manhattan distance.
  static Spec grid_spec(int rows, int cols, double free_flow_slope, double jam, double demand_rate,
                        double demand_decay_steps, double dt) {
    Spec s;
    const int r = rows * cols;
    s.regions = r;
    s.neighbors.assign(r, {});
    auto rc = [cols](int i) { return std::pair{i / cols, i % cols}; };
    for (int i = 0; i < r; ++i) {
      const auto [ri, ci] = rc(i);
      const int dr[] = {-1, 1, 0, 0}, dc[] = {0, 0, -1, 1};
      for (int k = 0; k < 4; ++k) {
        const int rr = ri + dr[k], cc = ci + dc[k];
        if (rr >= 0 && rr < rows && cc >= 0 && cc < cols) s.neighbors[i].push_back(rr * cols + cc);
      }
    }
    auto dist = [&](int a, int b) {
      const auto [ra, ca] = rc(a);
      const auto [rb, cb] = rc(b);
      return std::abs(ra - rb) + std::abs(ca - cb);
    };
    s.routing.assign(static_cast<size_t>(r) * r * r, 0.0);
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < r; ++j) {
        if (i == j) continue;
        std::vector<int> next;
        for (int h : s.neighbors[i])
          if (dist(h, j) < dist(i, j)) next.push_back(h);
        for (int h : next) s.routing[(static_cast<size_t>(i) * r + h) * r + j] = 1.0 / next.size();
      }
    s.mfd.assign(r, Mfd::from_peak(free_flow_slope, jam));
    s.demand.assign(static_cast<size_t>(r) * r, demand_rate);
    s.demand_decay_steps = demand_decay_steps;
    s.dt = dt;
    return s;
  }

 private:
  void euler_unclamped(const ConstVecRef& x, const ConstVecRef& gates, double demand_scale,
                       std::vector<double>& share, Eigen::Ref<Vec> out) const {
    const int r = s_.regions;
    const double h = s_.dt;
    share.assign(static_cast<size_t>(r) * r, 0.0);
    for (int i = 0; i < r; ++i) {
      double n = 0.0;
      for (int j = 0; j < r; ++j) n += x[i * r + j];
      if (n < s_.eps_empty) continue;
      const double g = mfd(i, n) / n;
      for (int j = 0; j < r; ++j) share[i * r + j] = x[i * r + j] * g;
    }
    for (int k = 0; k < r * r; ++k) out[k] = x[k] + h * demand_scale * s_.demand[k];
    for (int i = 0; i < r; ++i) out[i * r + i] -= h * share[i * r + i];
    for (size_t e = 0; e < edges_.size(); ++e) {
      const auto [i, to] = edges_[e];
      const double gate = h * gates[static_cast<long>(e)];
      const double* th = &s_.routing[(static_cast<size_t>(i) * r + to) * r];
      for (int j : routed_[e]) {
        const double m = gate * th[j] * share[i * r + j];
        out[i * r + j] -= m;
        out[to * r + j] += m;
      }
    }
  }

  void validate_and_index() {
    const int r = s_.regions;
    if (r < 1) throw InvalidArgument("TrafficNetwork: at least one region required");
    if (static_cast<int>(s_.neighbors.size()) != r || static_cast<int>(s_.mfd.size()) != r)
      throw InvalidArgument("TrafficNetwork: neighbors/mfd must have one entry per region");
    if (s_.routing.size() != static_cast<size_t>(r) * r * r)
      throw InvalidArgument("TrafficNetwork: routing must have R^3 entries");
    if (s_.demand.size() != static_cast<size_t>(r) * r)
      throw InvalidArgument("TrafficNetwork: demand must have R^2 entries");
    if (!(s_.dt > 0.0)) throw InvalidArgument("TrafficNetwork: dt must be positive");
    if (!(s_.u_lo < s_.u_hi)) throw InvalidArgument("TrafficNetwork: u_lo must be < u_hi");
    for (double d : s_.demand)
      if (!(d >= 0.0) || !std::isfinite(d)) throw InvalidArgument("TrafficNetwork: negative demand");
    for (int i = 0; i < r; ++i) {
      for (int h : s_.neighbors[i]) {
        if (h < 0 || h >= r || h == i)
          throw InvalidArgument("TrafficNetwork: invalid neighbor of region " + std::to_string(i));
        const auto& nh = s_.neighbors[h];
        if (std::find(nh.begin(), nh.end(), i) == nh.end())
          throw InvalidArgument("TrafficNetwork: adjacency must be symmetric");
      }
    }
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < r; ++j) {
        double sum = 0.0;
        for (int h = 0; h < r; ++h) {
          const double th = theta(i, h, j);
          if (!(th >= 0.0 && th <= 1.0))
            throw InvalidArgument("TrafficNetwork: routing fraction outside [0, 1]");
          const auto& ni = s_.neighbors[i];
          const bool adjacent = std::find(ni.begin(), ni.end(), h) != ni.end();
          if (th != 0.0 && (!adjacent || j == i))
            throw InvalidArgument("TrafficNetwork: routing through a non-neighbor or for own destination");
          sum += th;
        }
        if (j != i && std::abs(sum - 1.0) > 1e-9)
          throw InvalidArgument("TrafficNetwork: routing fractions for (" + std::to_string(i) + ", " +
                                std::to_string(j) + ") do not sum to 1");
      }
    jam_.resize(r);
    for (int i = 0; i < r; ++i) {
      jam_[i] = s_.mfd[i].jam();
      if (!(s_.mfd[i].c >= 0.0)) throw InvalidArgument("TrafficNetwork: MFD slope at zero must be >= 0");
    }
    out_edges_.assign(r, {});
    edges_.clear();
    routed_.clear();
    for (int i = 0; i < r; ++i)
      for (int h : s_.neighbors[i]) {
        out_edges_[i].push_back(static_cast<int>(edges_.size()));
        edges_.emplace_back(i, h);
        std::vector<int> js;
        for (int j = 0; j < r; ++j)
          if (theta(i, h, j) != 0.0) js.push_back(j);
        routed_.push_back(std::move(js));
      }
  }

  Spec s_;
  std::vector<double> jam_;
  std::vector<std::pair<int, int>> edges_;
  std::vector<std::vector<int>> out_edges_;
  std::vector<std::vector<int>> routed_;
};

/// SystemModel view of a traffic network: state is the flattened accumulation
/// matrix, input the gate vector, xi = [demand scale].
class TrafficModel final : public SystemModel {
 public:
  explicit TrafficModel(std::shared_ptr<const TrafficNetwork> net)
      : SystemModel(net->regions() * net->regions(), net->num_gates(), net->dt(),
                    Vec::Constant(net->num_gates(), net->spec().u_lo),
                    Vec::Constant(net->num_gates(), net->spec().u_hi)),
        net_(std::move(net)) {}

  std::string name() const override { return "traffic_grid"; }
  const TrafficNetwork& network() const { return *net_; }

  void step_into(const ConstVecRef& x, const ConstVecRef& u, const Vec& xi,
                 Eigen::Ref<Vec> out) const override {
    net_->step_into(x, u, xi.size() > 0 ? xi[0] : 1.0, out);
  }

  Vec vjp_x(const Vec& x, const Vec& u, const Vec& xi, const Vec& w) const override {
    return net_->adjoint(x, u, scale(xi), w).first;
  }
  Vec vjp_u(const Vec& x, const Vec& u, const Vec& xi, const Vec& w) const override {
    return net_->adjoint(x, u, scale(xi), w).second;
  }

  Mat jac_x(const Vec& x, const Vec& u, const Vec& xi) const override {
    Mat j(state_dim(), state_dim());
    for (int k = 0; k < state_dim(); ++k) j.row(k) = vjp_x(x, u, xi, Vec::Unit(state_dim(), k)).transpose();
    return j;
  }
  Mat jac_u(const Vec& x, const Vec& u, const Vec& xi) const override {
    Mat j(state_dim(), input_dim());
    for (int k = 0; k < state_dim(); ++k) j.row(k) = vjp_u(x, u, xi, Vec::Unit(state_dim(), k)).transpose();
    return j;
  }

 private:
  static double scale(const Vec& xi) { return xi.size() > 0 ? xi[0] : 1.0; }
  std::shared_ptr<const TrafficNetwork> net_;
};

}  // namespace stepmppi
