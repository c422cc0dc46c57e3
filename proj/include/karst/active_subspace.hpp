#pragma once

// Gradient-based active subspace estimation: Monte Carlo estimate of the
// averaged gradient outer product C, its sorted eigendecomposition with
// bootstrap variability bands, global sensitivity scores, and a polynomial
// response surface on the active variables.
//
// The linear-algebra core is templated on the scalar type and works on
// gradient matrices with one sample per column.

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "karst/error.hpp"
#include "karst/parallel.hpp"
#include "karst/random.hpp"

namespace karst::subspace {

template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

/// ceil(beta * m * ln n). Prints a warning for beta outside [2, 10].
std::size_t recommended_sample_count(double beta, int m, int n);

struct GradientSample {
  Eigen::VectorXd x;
  double f = 0;
  Eigen::VectorXd g;
};

/// Evaluations of the scalar field per gradient sample: center plus two per coordinate.
constexpr std::size_t evaluations_per_gradient(int n) { return 2 * static_cast<std::size_t>(n) + 1; }

/// Finite-difference gradient on the box [-1,1]^n. Central differences in the
/// interior; within h of a face a one-sided second-order stencil is used
/// instead. Always performs exactly 2n+1 evaluations of f. Returns nullopt if
/// any evaluation is non-finite.
template <typename Field>
std::optional<GradientSample> misfit_gradient(const Eigen::VectorXd& x, Field&& f, double h) {
  const Eigen::Index n = x.size();
  GradientSample s{x, f(x), Eigen::VectorXd::Zero(n)};
  bool finite = std::isfinite(s.f);
  Eigen::VectorXd probe = x;
  auto at = [&](Eigen::Index j, double offset) {
    probe(j) = x(j) + offset;
    const double v = f(probe);
    probe(j) = x(j);
    finite = finite && std::isfinite(v);
    return v;
  };
  for (Eigen::Index j = 0; j < n; ++j) {
    if (x(j) + h > 1.0) {
      const double m1 = at(j, -h), m2 = at(j, -2 * h);
      s.g(j) = (3 * s.f - 4 * m1 + m2) / (2 * h);
    } else if (x(j) - h < -1.0) {
      const double p1 = at(j, h), p2 = at(j, 2 * h);
      s.g(j) = (-3 * s.f + 4 * p1 - p2) / (2 * h);
    } else {
      const double p = at(j, h), m = at(j, -h);
      s.g(j) = (p - m) / (2 * h);
    }
  }
  if (!finite) return std::nullopt;
  return s;
}

struct GradientSweep {
  std::vector<GradientSample> samples;
  std::size_t failed = 0;
};

/// Gradient samples at the columns of xs, evaluated in parallel. Failed
/// samples are dropped; more than 1% failures throws Error(Numerical).
template <typename Field>
GradientSweep gradient_sweep(const Eigen::MatrixXd& xs, const Field& f, double h, unsigned workers) {
  std::vector<std::optional<GradientSample>> slots(static_cast<std::size_t>(xs.cols()));
  parallel_for(slots.size(), workers, [&](std::size_t i) {
    slots[i] = misfit_gradient(xs.col(static_cast<Eigen::Index>(i)), f, h);
  });
  GradientSweep sweep;
  for (auto& s : slots) {
    if (s) sweep.samples.push_back(std::move(*s));
    else ++sweep.failed;
  }
  if (sweep.failed * 100 > slots.size())
    throw Error(ErrorKind::Numerical, "gradient sweep: " + std::to_string(sweep.failed) + " of " +
                                          std::to_string(slots.size()) +
                                          " samples had non-finite misfit values (limit 1%)");
  return sweep;
}

/// Gradients as columns of an n x N matrix.
Eigen::MatrixXd gradient_matrix(const std::vector<GradientSample>& samples);

/// C = (1/N) sum g g^T for the columns g of `gradients`. The result is
/// exactly symmetric.
template <typename Derived>
Matrix<typename Derived::Scalar> estimate_c_matrix(const Eigen::MatrixBase<Derived>& gradients) {
  using Scalar = typename Derived::Scalar;
  if (gradients.cols() == 0) throw Error(ErrorKind::InvalidInput, "estimate_c_matrix: no gradient samples");
  const Eigen::Index n = gradients.rows();
  Matrix<Scalar> c = Matrix<Scalar>::Zero(n, n);
  c.template selfadjointView<Eigen::Lower>().rankUpdate(gradients, Scalar(1) / Scalar(gradients.cols()));
  c.template triangularView<Eigen::StrictlyUpper>() = c.transpose();
  return c;
}

template <typename Scalar>
struct SubspaceDecomposition {
  Vector<Scalar> eigenvalues;   // descending
  Matrix<Scalar> eigenvectors;  // orthonormal columns
  Eigen::Index k = 0;
  Vector<Scalar> band_min;  // bootstrap bands, empty until computed
  Vector<Scalar> band_max;

  Eigen::Index dim() const { return eigenvectors.rows(); }
  auto W1() const { return eigenvectors.leftCols(k); }
  auto W2() const { return eigenvectors.rightCols(dim() - k); }
};

/// Flips each column so its largest-magnitude entry (first on ties) is positive.
template <typename Derived>
void normalize_signs(Eigen::MatrixBase<Derived>& vectors) {
  for (Eigen::Index j = 0; j < vectors.cols(); ++j) {
    Eigen::Index imax = 0;
    vectors.col(j).cwiseAbs().maxCoeff(&imax);
    if (vectors(imax, j) < 0) vectors.col(j) *= -1;
  }
}

template <typename Derived>
Vector<typename Derived::Scalar> sorted_eigenvalues(const Eigen::MatrixBase<Derived>& c) {
  Eigen::SelfAdjointEigenSolver<Matrix<typename Derived::Scalar>> solver(c, Eigen::EigenvaluesOnly);
  return solver.eigenvalues().reverse();
}

/// Sorted eigendecomposition of a symmetric matrix split after column k.
template <typename Derived>
SubspaceDecomposition<typename Derived::Scalar> decompose(const Eigen::MatrixBase<Derived>& c, Eigen::Index k) {
  using Scalar = typename Derived::Scalar;
  const Eigen::Index n = c.rows();
  if (c.cols() != n) throw Error(ErrorKind::InvalidInput, "decompose: matrix is not square");
  if (k <= 0 || k >= n)
    throw Error(ErrorKind::Domain, "decompose: split index must satisfy 0 < k < " + std::to_string(n));
  const Scalar scale = std::max(Scalar(1), c.cwiseAbs().maxCoeff());
  const Scalar asym = (c - c.transpose()).cwiseAbs().maxCoeff();
  if (asym > Scalar(1e-8) * scale)
    throw Error(ErrorKind::InvalidInput, "decompose: matrix is not symmetric");

  Eigen::SelfAdjointEigenSolver<Matrix<Scalar>> solver(c);
  if (solver.info() != Eigen::Success) throw Error(ErrorKind::Numerical, "decompose: eigensolver failed");
  SubspaceDecomposition<Scalar> d;
  d.eigenvalues = solver.eigenvalues().reverse();
  d.eigenvectors = solver.eigenvectors().rowwise().reverse();
  normalize_signs(d.eigenvectors);
  d.k = k;
  return d;
}

template <typename Scalar>
struct EigenBands {
  Vector<Scalar> min;
  Vector<Scalar> max;
};

/// Eigenvalue variability from B bootstrap replicates of the gradient
/// columns. Bands are seeded with the full-sample estimate, so they always
/// contain it.
template <typename Derived>
EigenBands<typename Derived::Scalar> bootstrap_bands(const Eigen::MatrixBase<Derived>& gradients, int replicates,
                                                     std::uint64_t seed) {
  using Scalar = typename Derived::Scalar;
  if (replicates < 100) throw Error(ErrorKind::Domain, "bootstrap_bands: at least 100 replicates required");
  const Eigen::Index n = gradients.rows(), count = gradients.cols();
  const Vector<Scalar> point = sorted_eigenvalues(estimate_c_matrix(gradients));
  EigenBands<Scalar> bands{point, point};
  Rng rng(seed);
  std::uniform_int_distribution<Eigen::Index> pick(0, count - 1);
  Matrix<Scalar> resampled(n, count);
  for (int b = 0; b < replicates; ++b) {
    for (Eigen::Index j = 0; j < count; ++j) resampled.col(j) = gradients.col(pick(rng));
    const Vector<Scalar> ev = sorted_eigenvalues(estimate_c_matrix(resampled));
    bands.min = bands.min.cwiseMin(ev);
    bands.max = bands.max.cwiseMax(ev);
  }
  return bands;
}

/// s_i = sum_{j<m} lambda_j w_ij^2, unnormalized.
template <typename DerivedL, typename DerivedW>
Vector<typename DerivedL::Scalar> sensitivity_scores(const Eigen::MatrixBase<DerivedL>& eigenvalues,
                                                     const Eigen::MatrixBase<DerivedW>& eigenvectors, Eigen::Index m) {
  if (m <= 0 || m > eigenvalues.size())
    throw Error(ErrorKind::Domain, "sensitivity_scores: need 0 < m <= n");
  return eigenvectors.leftCols(m).cwiseAbs2() * eigenvalues.head(m);
}

/// Sensitivity scores divided by their maximum; all zeros stay zero.
template <typename DerivedL, typename DerivedW>
Vector<typename DerivedL::Scalar> global_sensitivities(const Eigen::MatrixBase<DerivedL>& eigenvalues,
                                                       const Eigen::MatrixBase<DerivedW>& eigenvectors, Eigen::Index m) {
  auto s = sensitivity_scores(eigenvalues, eigenvectors, m);
  const auto top = s.maxCoeff();
  if (top > 0) s /= top;
  return s;
}

/// Exponent tuples of all monomials of total degree <= degree in k variables,
/// graded lexicographic: by total degree, then by exponent of the first
/// variable descending, then the second, and so on.
std::vector<std::vector<int>> monomial_exponents(int k, int degree);

/// Polynomial response surface in the active variables y = W1^T x.
struct PolySurrogate {
  int k = 0;
  int degree = 0;
  std::vector<std::vector<int>> exponents;
  Eigen::VectorXd coefficients;
  double r2_train = 1;
  double r2_test = 1;
  std::size_t n_train = 0;
  std::size_t n_test = 0;

  std::size_t size() const { return exponents.size(); }
  double evaluate(const Eigen::Ref<const Eigen::VectorXd>& y) const;
  /// f(x) ~ G(W1^T x).
  double evaluate_full(const Eigen::Ref<const Eigen::VectorXd>& x, const Eigen::Ref<const Eigen::MatrixXd>& w1) const {
    return evaluate(w1.transpose() * x);
  }
};

/// Design matrix with one row per column of ys.
Eigen::MatrixXd design_matrix(const Eigen::Ref<const Eigen::MatrixXd>& ys,
                              const std::vector<std::vector<int>>& exponents);

/// Coefficient of determination; 1 by convention for a zero-variance target.
double r_squared(const Eigen::Ref<const Eigen::VectorXd>& target, const Eigen::Ref<const Eigen::VectorXd>& prediction);

/// Least-squares fit of a total-degree polynomial in W1^T x. Every fifth
/// sample (index % 5 == 4) is held out to report r2_test; the coefficients
/// come from the remaining 80%. Requires at least twice as many samples as
/// coefficients; throws Error(Numerical) on a rank-deficient design.
PolySurrogate fit_response_surface(const Eigen::Ref<const Eigen::MatrixXd>& xs,
                                   const Eigen::Ref<const Eigen::VectorXd>& fs,
                                   const Eigen::Ref<const Eigen::MatrixXd>& w1, int degree);

}  // namespace karst::subspace
