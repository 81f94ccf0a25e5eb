#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include "biaslens/error.hpp"

namespace biaslens {

template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

using Vector = VectorX<double>;
using Matrix = MatrixX<double>;
using Mask = std::vector<bool>;

template <typename Derived>
bool all_finite(const Eigen::MatrixBase<Derived>& v) {
  return v.allFinite();
}

/// Cosine of the angle between u and v, clamped to [-1, 1].
template <typename DerivedA, typename DerivedB>
typename DerivedA::Scalar cosine(const Eigen::MatrixBase<DerivedA>& u,
                                 const Eigen::MatrixBase<DerivedB>& v) {
  using Scalar = typename DerivedA::Scalar;
  if (u.size() != v.size()) {
    throw InvalidArgument("cosine: dimension mismatch (" + std::to_string(u.size()) + " vs " +
                          std::to_string(v.size()) + ")");
  }
  const Scalar nu = u.norm();
  const Scalar nv = v.norm();
  if (!(nu > Scalar(0)) || !(nv > Scalar(0))) {
    throw InvalidArgument("cosine: zero-norm input");
  }
  const Scalar c = u.dot(v) / (nu * nv);
  return std::clamp(c, Scalar(-1), Scalar(1));
}

template <typename Derived>
VectorX<typename Derived::Scalar> l2_normalize(const Eigen::MatrixBase<Derived>& v) {
  using Scalar = typename Derived::Scalar;
  const Scalar n = v.norm();
  if (!(n > Scalar(0))) {
    throw InvalidArgument("l2_normalize: zero norm");
  }
  return v / n;
}

/// 1-D Wasserstein-1 distance between two empirical distributions
/// (integral of |F_a - F_b| over the merged support).
double wasserstein1(std::span<const double> a, std::span<const double> b);

/// Average (fractional) ranks, 1-based; tied values share the mean rank.
std::vector<double> average_ranks(std::span<const double> xs);

double pearson(std::span<const double> xs, std::span<const double> ys);

/// Spearman rank correlation with average ranks for ties.
double spearman(std::span<const double> xs, std::span<const double> ys);

/// Regularized incomplete beta I_x(a, b), continued fraction to 1e-12.
double incomplete_beta(double a, double b, double x);

/// Two-sided tail probability P(|T| >= |t|) for Student's t with `df` degrees of freedom.
double student_t_two_sided_p(double t, double df);

struct TTestResult {
  double t;
  double p;
  double df;
};

/// Pooled-variance two-sample t-test (two-sided).
TTestResult student_t_two_sample(std::span<const double> a, std::span<const double> b);

/// Area under the cumulative capture curve of `relevant` dimensions when
/// dimensions are scanned by descending value (ties: ascending index).
double salience_auc(std::span<const double> values, const Mask& relevant);

template <typename Derived>
double salience_auc(const Eigen::MatrixBase<Derived>& values, const Mask& relevant) {
  const Vector v = values.template cast<double>();
  return salience_auc(std::span<const double>(v.data(), static_cast<std::size_t>(v.size())), relevant);
}

/// Curve points (x, y) behind salience_auc, n + 1 of them starting at (0, 0).
std::vector<std::pair<double, double>> salience_curve(std::span<const double> values, const Mask& relevant);

inline std::span<const double> as_span(const Vector& v) {
  return {v.data(), static_cast<std::size_t>(v.size())};
}

}  // namespace biaslens
