#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "stepmppi/mppi_layer.hpp"
#include "stepmppi/rng.hpp"

namespace stepmppi {

enum class Activation { Tanh, Identity };

inline const char* to_string(Activation a) { return a == Activation::Tanh ? "tanh" : "identity"; }

inline Activation activation_from_string(const std::string& s) {
  if (s == "tanh") return Activation::Tanh;
  if (s == "identity") return Activation::Identity;
  throw InvalidArgument("unknown activation '" + s + "'");
}

struct PolicyShape {
  int input_dim = 0;
  std::vector<int> hidden = {64, 64};
  int output_dim = 0;          ///< n_u
  bool cholesky_head = true;   ///< false for the deterministic (DPC) policy
  Activation activation = Activation::Tanh;

  void validate() const {
    if (input_dim < 1 || output_dim < 1) throw InvalidArgument("PolicyShape: dimensions must be >= 1");
    for (int h : hidden)
      if (h < 1) throw InvalidArgument("PolicyShape: hidden widths must be >= 1");
  }
  bool operator==(const PolicyShape&) const = default;
};

/// Dense layer y = W a + b.
struct DenseLayer {
  Mat W;
  Vec b;
};

/// MLP backbone plus mean head and (optionally) Cholesky head. The flat layout
/// is, per layer in order backbone..., mean, cholesky: W row-major, then b.
struct PolicyParams {
  PolicyShape shape;
  std::vector<DenseLayer> backbone;
  DenseLayer mean_head;
  DenseLayer chol_head;
  Vec u_min;
  Vec u_max;

  int input_dim() const { return shape.input_dim; }
  int output_dim() const { return shape.output_dim; }

  std::vector<const DenseLayer*> layers() const {
    std::vector<const DenseLayer*> out;
    for (const auto& l : backbone) out.push_back(&l);
    out.push_back(&mean_head);
    if (shape.cholesky_head) out.push_back(&chol_head);
    return out;
  }
  std::vector<DenseLayer*> layers() {
    std::vector<DenseLayer*> out;
    for (auto& l : backbone) out.push_back(&l);
    out.push_back(&mean_head);
    if (shape.cholesky_head) out.push_back(&chol_head);
    return out;
  }

  long size() const {
    long n = 0;
    for (const auto* l : layers()) n += l->W.size() + l->b.size();
    return n;
  }

  Vec flat() const {
    Vec v(size());
    long o = 0;
    for (const auto* l : layers()) {
      for (long r = 0; r < l->W.rows(); ++r)
        for (long c = 0; c < l->W.cols(); ++c) v[o++] = l->W(r, c);
      for (long i = 0; i < l->b.size(); ++i) v[o++] = l->b[i];
    }
    return v;
  }

  void set_flat(const Vec& v) {
    if (v.size() != size()) throw InvalidArgument("PolicyParams: flat vector size mismatch");
    long o = 0;
    for (auto* l : layers()) {
      for (long r = 0; r < l->W.rows(); ++r)
        for (long c = 0; c < l->W.cols(); ++c) l->W(r, c) = v[o++];
      for (long i = 0; i < l->b.size(); ++i) l->b[i] = v[o++];
    }
  }

  /// All-zero parameters of the given shape.
  static PolicyParams zeros(const PolicyShape& shape, Vec u_min, Vec u_max) {
    shape.validate();
    if (u_min.size() != shape.output_dim || u_max.size() != shape.output_dim)
      throw InvalidArgument("PolicyParams: bounds must have output_dim entries");
    for (int i = 0; i < shape.output_dim; ++i)
      if (!(u_min[i] < u_max[i])) throw InvalidArgument("PolicyParams: u_min must be < u_max");
    PolicyParams p;
    p.shape = shape;
    int prev = shape.input_dim;
    for (int h : shape.hidden) {
      p.backbone.push_back({Mat::Zero(h, prev), Vec::Zero(h)});
      prev = h;
    }
    p.mean_head = {Mat::Zero(shape.output_dim, prev), Vec::Zero(shape.output_dim)};
    if (shape.cholesky_head) {
      const int t = tri_size(shape.output_dim);
      p.chol_head = {Mat::Zero(t, prev), Vec::Zero(t)};
    }
    p.u_min = std::move(u_min);
    p.u_max = std::move(u_max);
    return p;
  }
};

/// Per-feature standardization (x - mean) / std.
struct Normalization {
  Vec mean;
  Vec std;

  static Normalization identity(int n) { return {Vec::Zero(n), Vec::Ones(n)}; }

  /// Statistics of the rows of `samples` (one feature vector per column), with
  /// std floored at `floor`.
  static Normalization fit(const Mat& samples, double floor) {
    if (samples.cols() < 1) throw InvalidArgument("Normalization: no samples");
    Normalization n;
    n.mean = samples.rowwise().mean();
    const Mat centered = samples.colwise() - n.mean;
    n.std = (centered.array().square().rowwise().sum() / static_cast<double>(samples.cols())).sqrt().matrix();
    n.std = n.std.cwiseMax(floor);
    return n;
  }

  Vec apply(const Vec& f) const {
    if (f.size() != mean.size()) throw InvalidArgument("Normalization: feature dimension mismatch");
    return (f - mean).cwiseQuotient(std);
  }
  /// Maps a gradient w.r.t. normalized input back to raw features.
  Vec backprop(const Vec& g) const { return g.cwiseQuotient(std); }
};

struct PolicyTape {
  Vec input;
  std::vector<Vec> hidden;  ///< post-activation outputs of each backbone layer
  Vec mean_pre;
  Vec chol_pre;
};

namespace detail {
inline void activate(Vec& v, Activation a) {
  if (a == Activation::Tanh) v = v.array().tanh().matrix();
}
inline void check_finite(const Vec& v, const std::string& layer) {
  if (!v.allFinite()) throw NumericOverflow("policy: non-finite activation in " + layer);
}
inline const Vec& backbone_forward(const PolicyParams& p, const Vec& input, PolicyTape& tape) {
  if (input.size() != p.input_dim()) throw InvalidArgument("policy: input dimension mismatch");
  tape.input = input;
  tape.hidden.resize(p.backbone.size());
  const Vec* a = &tape.input;
  for (size_t l = 0; l < p.backbone.size(); ++l) {
    Vec h = p.backbone[l].W * *a + p.backbone[l].b;
    detail::activate(h, p.shape.activation);
    check_finite(h, "backbone layer " + std::to_string(l));
    tape.hidden[l] = std::move(h);
    a = &tape.hidden[l];
  }
  return *a;
}
inline Vec squash_mean(const PolicyParams& p, const Vec& pre) {
  const Vec mid = 0.5 * (p.u_min + p.u_max), half = 0.5 * (p.u_max - p.u_min);
  return (mid + half.cwiseProduct(pre.array().tanh().matrix())).cwiseMax(p.u_min).cwiseMin(p.u_max);
}
}  // namespace detail

/// z = (u_mid + u_half * tanh(mean head), L) with L diagonal softplus(.) + floor.
inline DistributionParams policy_forward(const PolicyParams& p, const Vec& input, PolicyTape* tape_out = nullptr) {
  if (!p.shape.cholesky_head) throw InvalidArgument("policy_forward: parameters have no Cholesky head");
  PolicyTape local;
  PolicyTape& tape = tape_out ? *tape_out : local;
  const Vec& a = detail::backbone_forward(p, input, tape);
  tape.mean_pre = p.mean_head.W * a + p.mean_head.b;
  tape.chol_pre = p.chol_head.W * a + p.chol_head.b;
  detail::check_finite(tape.mean_pre, "mean head");
  detail::check_finite(tape.chol_pre, "cholesky head");
  const int nu = p.output_dim();
  DistributionParams z{detail::squash_mean(p, tape.mean_pre), Mat::Zero(nu, nu)};
  for (int i = 0; i < nu; ++i) {
    for (int j = 0; j < i; ++j) z.L(i, j) = tape.chol_pre[tri_index(i, j)];
    z.L(i, i) = softplus(tape.chol_pre[tri_index(i, i)]) + kDiagFloor;
  }
  return z;
}

/// Deterministic control: backbone and mean head only.
inline Vec dpc_forward(const PolicyParams& p, const Vec& input, PolicyTape* tape_out = nullptr) {
  PolicyTape local;
  PolicyTape& tape = tape_out ? *tape_out : local;
  const Vec& a = detail::backbone_forward(p, input, tape);
  tape.mean_pre = p.mean_head.W * a + p.mean_head.b;
  detail::check_finite(tape.mean_pre, "mean head");
  tape.chol_pre.resize(0);
  return detail::squash_mean(p, tape.mean_pre);
}

struct PolicyGrads {
  Vec params;  ///< flat, same layout as PolicyParams::flat
  Vec input;
};

/// Reverse pass. `grad_L` may be empty (no Cholesky contribution); only its
/// lower triangle is read.
inline PolicyGrads policy_backward(const PolicyParams& p, const PolicyTape& tape, const Vec& grad_mu,
                                   const Mat& grad_L = Mat()) {
  const int nu = p.output_dim();
  if (grad_mu.size() != nu) throw InvalidArgument("policy_backward: grad_mu dimension mismatch");
  if (tape.input.size() != p.input_dim() || tape.hidden.size() != p.backbone.size() || tape.mean_pre.size() != nu)
    throw InvalidArgument("policy_backward: tape does not match parameters");
  const bool use_l = grad_L.size() > 0;
  if (use_l && (!p.shape.cholesky_head || grad_L.rows() != nu || grad_L.cols() != nu ||
                tape.chol_pre.size() != tri_size(nu)))
    throw InvalidArgument("policy_backward: grad_L does not match the Cholesky head");

  PolicyGrads g{Vec::Zero(p.size()), Vec()};
  // offsets of each layer block in the flat vector
  std::vector<long> off;
  long o = 0;
  for (const auto* l : p.layers()) {
    off.push_back(o);
    o += l->W.size() + l->b.size();
  }
  auto write = [&](size_t li, const DenseLayer& l, const Vec& delta, const Vec& a) {
    long k = off[li];
    for (long r = 0; r < l.W.rows(); ++r)
      for (long c = 0; c < l.W.cols(); ++c) g.params[k++] = delta[r] * a[c];
    for (long r = 0; r < l.b.size(); ++r) g.params[k++] = delta[r];
  };

  const Vec& top = tape.hidden.empty() ? tape.input : tape.hidden.back();
  const size_t nb = p.backbone.size();

  const Vec half = 0.5 * (p.u_max - p.u_min);
  const Vec t = tape.mean_pre.array().tanh().matrix();
  const Vec d_mean = grad_mu.cwiseProduct(half).cwiseProduct((1.0 - t.array().square()).matrix());
  write(nb, p.mean_head, d_mean, top);
  Vec da = p.mean_head.W.transpose() * d_mean;

  if (use_l) {
    Vec d_chol(tri_size(nu));
    for (int i = 0; i < nu; ++i) {
      for (int j = 0; j < i; ++j) d_chol[tri_index(i, j)] = grad_L(i, j);
      d_chol[tri_index(i, i)] = grad_L(i, i) * sigmoid(tape.chol_pre[tri_index(i, i)]);
    }
    write(nb + 1, p.chol_head, d_chol, top);
    da.noalias() += p.chol_head.W.transpose() * d_chol;
  }

  for (size_t l = nb; l-- > 0;) {
    Vec delta = da;
    if (p.shape.activation == Activation::Tanh)
      delta = delta.cwiseProduct((1.0 - tape.hidden[l].array().square()).matrix());
    const Vec& a_prev = l == 0 ? tape.input : tape.hidden[l - 1];
    write(l, p.backbone[l], delta, a_prev);
    da = p.backbone[l].W.transpose() * delta;
  }
  g.input = std::move(da);
  return g;
}

/// Fan-in uniform initialization. The Cholesky head bias puts the initial
/// diagonal at sigma0 (per channel); `mean_scale` scales the mean head weights.
inline PolicyParams policy_init(const PolicyShape& shape, Vec u_min, Vec u_max, RngStream& rng, const Vec& sigma0,
                                double mean_scale = 1.0) {
  if (shape.cholesky_head && (sigma0.size() != shape.output_dim || (sigma0.array() <= kDiagFloor).any()))
    throw InvalidArgument("policy_init: sigma0 must have output_dim entries above the diagonal floor");
  PolicyParams p = PolicyParams::zeros(shape, std::move(u_min), std::move(u_max));
  for (auto* l : p.layers()) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(l->W.cols()));
    for (long r = 0; r < l->W.rows(); ++r)
      for (long c = 0; c < l->W.cols(); ++c) l->W(r, c) = rng.uniform(-bound, bound);
    for (long i = 0; i < l->b.size(); ++i) l->b[i] = rng.uniform(-bound, bound);
  }
  p.mean_head.W *= mean_scale;
  p.mean_head.b.setZero();
  if (shape.cholesky_head) {
    p.chol_head.W *= 0.1;
    p.chol_head.b.setZero();
    for (int i = 0; i < shape.output_dim; ++i)
      p.chol_head.b[tri_index(i, i)] = softplus_inverse(sigma0[i] - kDiagFloor);
  }
  return p;
}

inline PolicyParams policy_init(const PolicyShape& shape, Vec u_min, Vec u_max, RngStream& rng, double sigma0 = 0.5,
                                double mean_scale = 1.0) {
  return policy_init(shape, std::move(u_min), std::move(u_max), rng, Vec::Constant(shape.output_dim, sigma0),
                     mean_scale);
}

}  // namespace stepmppi
