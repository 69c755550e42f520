#pragma once

#include <cmath>
#include <memory>
#include <string>

#include "stepmppi/numerics.hpp"

namespace stepmppi {

using ConstVecRef = Eigen::Ref<const Vec>;

/// Discrete-time dynamics x_{t+1} = f(x_t, u_t; xi_t).
///
/// Implementations override step_into (allocation-free) and, when available,
/// the analytic Jacobians. The default Jacobians fall back to central finite
/// differences of step_into.
class SystemModel {
 public:
  SystemModel(int state_dim, int input_dim, double dt, Vec u_min, Vec u_max)
      : nx_(state_dim), nu_(input_dim), dt_(dt), u_min_(std::move(u_min)), u_max_(std::move(u_max)) {
    if (nx_ < 1 || nu_ < 1) throw InvalidArgument("SystemModel: dimensions must be >= 1");
    if (!(dt_ > 0.0)) throw InvalidArgument("SystemModel: dt must be positive");
    if (u_min_.size() != nu_ || u_max_.size() != nu_)
      throw InvalidArgument("SystemModel: input bounds must have input_dim entries");
    for (int i = 0; i < nu_; ++i)
      if (!(u_min_[i] < u_max_[i]))
        throw InvalidArgument("SystemModel: u_min must be < u_max componentwise");
  }
  virtual ~SystemModel() = default;

  virtual std::string name() const = 0;

  int state_dim() const { return nx_; }
  int input_dim() const { return nu_; }
  double dt() const { return dt_; }
  const Vec& u_min() const { return u_min_; }
  const Vec& u_max() const { return u_max_; }
  Vec u_mid() const { return 0.5 * (u_min_ + u_max_); }
  Vec u_half() const { return 0.5 * (u_max_ - u_min_); }

  /// One integration step written to `out`. No validation, no allocation.
  virtual void step_into(const ConstVecRef& x, const ConstVecRef& u, const Vec& xi,
                         Eigen::Ref<Vec> out) const = 0;

  /// Checked step: throws DivergedState if the result is non-finite.
  Vec step(const ConstVecRef& x, const ConstVecRef& u, const Vec& xi, long t = -1) const {
    check_dims(x, u);
    Vec out(nx_);
    step_into(x, u, xi, out);
    if (!out.allFinite())
      throw DivergedState(name() + ": non-finite state after integration at step " +
                              std::to_string(t),
                          t);
    return out;
  }

  virtual Mat jac_x(const Vec& x, const Vec& u, const Vec& xi) const {
    return finite_diff_jacobian([&](const Vec& xx) { return raw_step(xx, u, xi); }, x, 1e-6);
  }

  virtual Mat jac_u(const Vec& x, const Vec& u, const Vec& xi) const {
    return finite_diff_jacobian([&](const Vec& uu) { return raw_step(x, uu, xi); }, u, 1e-6);
  }

  /// w^T df/dx and w^T df/du. Models with cheap structured adjoints override these.
  virtual Vec vjp_x(const Vec& x, const Vec& u, const Vec& xi, const Vec& w) const {
    return jac_x(x, u, xi).transpose() * w;
  }
  virtual Vec vjp_u(const Vec& x, const Vec& u, const Vec& xi, const Vec& w) const {
    return jac_u(x, u, xi).transpose() * w;
  }

  Vec clamp_input(const Vec& u) const { return u.cwiseMax(u_min_).cwiseMin(u_max_); }

 protected:
  Vec raw_step(const Vec& x, const Vec& u, const Vec& xi) const {
    Vec out(nx_);
    step_into(x, u, xi, out);
    return out;
  }

  void check_dims(const ConstVecRef& x, const ConstVecRef& u) const {
    if (x.size() != nx_ || u.size() != nu_)
      throw InvalidArgument(name() + ": state/input dimension mismatch");
  }

 private:
  int nx_;
  int nu_;
  double dt_;
  Vec u_min_;
  Vec u_max_;
};

using ModelPtr = std::shared_ptr<const SystemModel>;

/// Point masses along `axes` independent axes with acceleration inputs, exact
/// zero-order-hold discretization. State [p_1..p_d, v_1..v_d], input [a_1..a_d].
class DoubleIntegrator final : public SystemModel {
 public:
  DoubleIntegrator(int axes, double dt, double accel_limit)
      : SystemModel(2 * axes, axes, dt, Vec::Constant(axes, -accel_limit),
                    Vec::Constant(axes, accel_limit)),
        axes_(axes) {}

  std::string name() const override { return "double_integrator"; }
  int axes() const { return axes_; }

  void step_into(const ConstVecRef& x, const ConstVecRef& u, const Vec&,
                 Eigen::Ref<Vec> out) const override {
    const double h = dt();
    for (int i = 0; i < axes_; ++i) {
      const double p = x[i], v = x[axes_ + i], a = u[i];
      out[i] = p + v * h + 0.5 * a * h * h;
      out[axes_ + i] = v + a * h;
    }
  }

  Mat jac_x(const Vec&, const Vec&, const Vec&) const override { return a_matrix(); }
  Mat jac_u(const Vec&, const Vec&, const Vec&) const override { return b_matrix(); }

  Mat a_matrix() const {
    Mat a = Mat::Identity(state_dim(), state_dim());
    a.topRightCorner(axes_, axes_) = dt() * Mat::Identity(axes_, axes_);
    return a;
  }
  Mat b_matrix() const {
    Mat b(state_dim(), axes_);
    b.topRows(axes_) = 0.5 * dt() * dt() * Mat::Identity(axes_, axes_);
    b.bottomRows(axes_) = dt() * Mat::Identity(axes_, axes_);
    return b;
  }

 private:
  int axes_;
};

/// Kinematic single-track vehicle, RK4. State [p_x, p_y, v, psi], input
/// [acceleration, steering angle].
class KinematicBicycle final : public SystemModel {
 public:
  KinematicBicycle(double dt, double wheelbase, Vec u_min, Vec u_max)
      : SystemModel(4, 2, dt, std::move(u_min), std::move(u_max)), wheelbase_(wheelbase) {
    if (!(wheelbase_ > 0.0)) throw InvalidArgument("KinematicBicycle: wheelbase must be positive");
    if (this->u_min()[1] <= -std::numbers::pi / 2 || this->u_max()[1] >= std::numbers::pi / 2)
      throw InvalidArgument("KinematicBicycle: steering bounds must lie inside (-pi/2, pi/2)");
  }

  std::string name() const override { return "bicycle"; }
  double wheelbase() const { return wheelbase_; }

  void step_into(const ConstVecRef& x, const ConstVecRef& u, const Vec&,
                 Eigen::Ref<Vec> out) const override {
    const double h = dt();
    Eigen::Vector4d s = x;
    const Eigen::Vector4d k1 = rhs(s, u[0], u[1]);
    const Eigen::Vector4d k2 = rhs(s + 0.5 * h * k1, u[0], u[1]);
    const Eigen::Vector4d k3 = rhs(s + 0.5 * h * k2, u[0], u[1]);
    const Eigen::Vector4d k4 = rhs(s + h * k3, u[0], u[1]);
    out = s + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
  }

  Mat jac_x(const Vec& x, const Vec& u, const Vec&) const override { return jacobians(x, u).first; }
  Mat jac_u(const Vec& x, const Vec& u, const Vec&) const override { return jacobians(x, u).second; }

  /// Forward-mode differentiation through the four RK4 stages.
  std::pair<Mat, Mat> jacobians(const Vec& x, const Vec& u) const {
    using M4 = Eigen::Matrix4d;
    using M42 = Eigen::Matrix<double, 4, 2>;
    const double h = dt(), a = u[0], d = u[1];
    const Eigen::Vector4d s = x;
    const Eigen::Vector4d k1 = rhs(s, a, d);
    const Eigen::Vector4d s2 = s + 0.5 * h * k1;
    const Eigen::Vector4d k2 = rhs(s2, a, d);
    const Eigen::Vector4d s3 = s + 0.5 * h * k2;
    const Eigen::Vector4d k3 = rhs(s3, a, d);
    const Eigen::Vector4d s4 = s + h * k3;

    const M4 i4 = M4::Identity();
    const M4 dk1x = rhs_x(s, d);
    const M4 dk2x = rhs_x(s2, d) * (i4 + 0.5 * h * dk1x);
    const M4 dk3x = rhs_x(s3, d) * (i4 + 0.5 * h * dk2x);
    const M4 dk4x = rhs_x(s4, d) * (i4 + h * dk3x);
    const M42 dk1u = rhs_u(s, d);
    const M42 dk2u = rhs_x(s2, d) * (0.5 * h * dk1u) + rhs_u(s2, d);
    const M42 dk3u = rhs_x(s3, d) * (0.5 * h * dk2u) + rhs_u(s3, d);
    const M42 dk4u = rhs_x(s4, d) * (h * dk3u) + rhs_u(s4, d);
    Mat jx = i4 + (h / 6.0) * (dk1x + 2.0 * dk2x + 2.0 * dk3x + dk4x);
    Mat ju = (h / 6.0) * (dk1u + 2.0 * dk2u + 2.0 * dk3u + dk4u);
    return {jx, ju};
  }

 private:
  Eigen::Vector4d rhs(const Eigen::Vector4d& s, double accel, double steer) const {
    return {s[2] * std::cos(s[3]), s[2] * std::sin(s[3]), accel,
            s[2] * std::tan(steer) / wheelbase_};
  }

  Eigen::Matrix4d rhs_x(const Eigen::Vector4d& s, double steer) const {
    Eigen::Matrix4d m = Eigen::Matrix4d::Zero();
    m(0, 2) = std::cos(s[3]);
    m(0, 3) = -s[2] * std::sin(s[3]);
    m(1, 2) = std::sin(s[3]);
    m(1, 3) = s[2] * std::cos(s[3]);
    m(3, 2) = std::tan(steer) / wheelbase_;
    return m;
  }

  Eigen::Matrix<double, 4, 2> rhs_u(const Eigen::Vector4d& s, double steer) const {
    Eigen::Matrix<double, 4, 2> m = Eigen::Matrix<double, 4, 2>::Zero();
    m(2, 0) = 1.0;
    const double c = std::cos(steer);
    m(3, 1) = s[2] / (wheelbase_ * c * c);
    return m;
  }

  double wheelbase_;
};

}  // namespace stepmppi
