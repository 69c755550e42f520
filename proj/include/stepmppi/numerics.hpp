#pragma once

#include <cmath>
#include <functional>
#include <numbers>
#include <string>

#include <Eigen/Dense>

#include "stepmppi/errors.hpp"

namespace stepmppi {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

/// Lower bound on the diagonal of every Cholesky factor the library produces
/// (policy heads, covariance updates).
inline constexpr double kDiagFloor = 1e-4;

template <typename Derived>
bool all_finite(const Eigen::MatrixBase<Derived>& m) {
  return m.allFinite();
}

/// Number of entries on and below the diagonal of an n x n matrix.
constexpr int tri_size(int n) { return n * (n + 1) / 2; }

/// Row-major packed index of the lower-triangular entry (row, col), col <= row.
constexpr int tri_index(int row, int col) { return row * (row + 1) / 2 + col; }

inline Vec pack_lower(const Mat& m) {
  const int n = static_cast<int>(m.rows());
  Vec out(tri_size(n));
  for (int i = 0; i < n; ++i)
    for (int j = 0; j <= i; ++j) out[tri_index(i, j)] = m(i, j);
  return out;
}

inline Mat unpack_lower(const Vec& packed, int n) {
  if (packed.size() != tri_size(n))
    throw InvalidArgument("unpack_lower: packed size does not match dimension");
  Mat out = Mat::Zero(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j <= i; ++j) out(i, j) = packed[tri_index(i, j)];
  return out;
}

/// Lower-triangular factor L of a covariance L L^T. Strictly upper entries are
/// zero and the diagonal is strictly positive; producers additionally keep the
/// diagonal at or above kDiagFloor.
class CholeskyFactor {
 public:
  CholeskyFactor() = default;

  explicit CholeskyFactor(Mat lower) : m_(std::move(lower)) {
    if (m_.rows() != m_.cols() || m_.rows() < 1)
      throw InvalidArgument("CholeskyFactor: matrix must be square and non-empty");
    if (!m_.allFinite()) throw InvalidArgument("CholeskyFactor: non-finite entry");
    for (int i = 0; i < dim(); ++i) {
      if (!(m_(i, i) > 0.0))
        throw InvalidArgument("CholeskyFactor: diagonal entry " + std::to_string(i) +
                              " is not positive");
      for (int j = i + 1; j < dim(); ++j)
        if (m_(i, j) != 0.0)
          throw InvalidArgument("CholeskyFactor: nonzero strictly-upper entry");
    }
  }

  static CholeskyFactor identity(int n, double scale = 1.0) {
    return CholeskyFactor(Mat::Identity(n, n) * scale);
  }

  static CholeskyFactor diagonal(const Vec& sigma) {
    return CholeskyFactor(Mat(sigma.asDiagonal()));
  }

  /// Factor of a symmetric positive (semi)definite matrix. `floor` is added
  /// as floor^2 * I before factoring when the plain factorization fails or
  /// yields a diagonal below `floor`.
  static CholeskyFactor from_covariance(const Mat& cov, double floor = kDiagFloor) {
    Eigen::LLT<Mat> llt(cov);
    if (llt.info() == Eigen::Success) {
      Mat l = llt.matrixL();
      if (l.diagonal().minCoeff() >= floor) return CholeskyFactor(std::move(l));
    }
    Mat reg = cov + floor * floor * Mat::Identity(cov.rows(), cov.cols());
    Eigen::LLT<Mat> llt2(reg);
    if (llt2.info() != Eigen::Success)
      throw SingularMatrix("CholeskyFactor: covariance is not positive semidefinite");
    Mat l = llt2.matrixL();
    for (int i = 0; i < l.rows(); ++i) l(i, i) = std::max(l(i, i), floor);
    return CholeskyFactor(std::move(l));
  }

  int dim() const { return static_cast<int>(m_.rows()); }
  const Mat& matrix() const { return m_; }
  Mat covariance() const { return m_ * m_.transpose(); }

 private:
  Mat m_;
};

/// w_k = exp(-c_k / lambda) / sum_j exp(-c_j / lambda), evaluated after
/// subtracting min(c).
inline Vec softmax_neg_scaled(const Vec& costs, double lambda) {
  if (!(lambda > 0.0) || !std::isfinite(lambda))
    throw InvalidArgument("softmax_neg_scaled: lambda must be positive and finite");
  if (costs.size() < 1) throw InvalidArgument("softmax_neg_scaled: empty cost vector");
  if (!costs.allFinite()) throw InvalidArgument("softmax_neg_scaled: non-finite cost");
  const double lo = costs.minCoeff();
  Vec w = (-(costs.array() - lo) / lambda).exp().matrix();
  return w / w.sum();
}

/// mu + L eps.
inline Vec reparam_sample(const Vec& mu, const CholeskyFactor& l, const Vec& eps) {
  if (mu.size() != l.dim() || eps.size() != l.dim())
    throw InvalidArgument("reparam_sample: dimension mismatch");
  return mu + l.matrix().triangularView<Eigen::Lower>() * eps;
}

/// Differential entropy of N(mu, L L^T): (d/2) log(2 pi e) + sum_i log L_ii.
inline double gaussian_entropy(const Mat& l) {
  const int d = static_cast<int>(l.rows());
  if (l.cols() != d || d < 1) throw InvalidArgument("gaussian_entropy: L must be square");
  double h = 0.5 * d * std::log(2.0 * std::numbers::pi * std::numbers::e);
  for (int i = 0; i < d; ++i) {
    if (!(l(i, i) > 0.0))
      throw InvalidArgument("gaussian_entropy: nonpositive diagonal entry");
    h += std::log(l(i, i));
  }
  return h;
}

inline double gaussian_entropy(const CholeskyFactor& l) { return gaussian_entropy(l.matrix()); }

/// (L^{-1})^T restricted to the lower triangle. For triangular L the strictly
/// lower part of (L^{-1})^T is zero, so the result is diag(1 / L_ii).
inline Mat entropy_grad_L(const Mat& l) {
  const int d = static_cast<int>(l.rows());
  if (l.cols() != d || d < 1) throw InvalidArgument("entropy_grad_L: L must be square");
  for (int i = 0; i < d; ++i)
    if (l(i, i) == 0.0 || !std::isfinite(l(i, i)))
      throw SingularMatrix("entropy_grad_L: L is singular");
  Mat inv = l.triangularView<Eigen::Lower>().solve(Mat::Identity(d, d));
  Mat g = inv.transpose();
  return g.triangularView<Eigen::Lower>();
}

inline Mat entropy_grad_L(const CholeskyFactor& l) { return entropy_grad_L(l.matrix()); }

using VectorFunction = std::function<Vec(const Vec&)>;

/// Central-difference Jacobian, column i = (f(x + h e_i) - f(x - h e_i)) / 2h.
inline Mat finite_diff_jacobian(const VectorFunction& f, const Vec& x0, double h = 1e-6) {
  if (!(h > 0.0)) throw InvalidArgument("finite_diff_jacobian: step must be positive");
  Mat jac;
  Vec x = x0;
  for (int i = 0; i < x0.size(); ++i) {
    x[i] = x0[i] + h;
    const Vec fp = f(x);
    x[i] = x0[i] - h;
    const Vec fm = f(x);
    x[i] = x0[i];
    if (!fp.allFinite() || !fm.allFinite())
      throw EvaluationError("finite_diff_jacobian: function returned non-finite values");
    if (i == 0) jac.resize(fp.size(), x0.size());
    jac.col(i) = (fp - fm) / (2.0 * h);
  }
  if (x0.size() == 0) jac.resize(f(x0).size(), 0);
  return jac;
}

/// max |a - b| / max(max |b|, floor). Scale-aware relative error used by all
/// gradient checks.
inline double max_rel_error(const Mat& actual, const Mat& expected, double floor = 1e-8) {
  if (actual.rows() != expected.rows() || actual.cols() != expected.cols())
    throw InvalidArgument("max_rel_error: shape mismatch");
  if (actual.size() == 0) return 0.0;
  const double num = (actual - expected).cwiseAbs().maxCoeff();
  const double den = std::max(expected.cwiseAbs().maxCoeff(), floor);
  return num / den;
}

inline double softplus(double x) {
  return x > 30.0 ? x : std::log1p(std::exp(x));
}

inline double sigmoid(double x) {
  return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

/// Inverse of softplus for y > 0.
inline double softplus_inverse(double y) {
  if (!(y > 0.0)) throw InvalidArgument("softplus_inverse: argument must be positive");
  return y > 30.0 ? y : std::log(std::expm1(y));
}

}  // namespace stepmppi
