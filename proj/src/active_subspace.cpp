#include "karst/active_subspace.hpp"

#include <cmath>
#include <functional>
#include <iostream>
#include <limits>

namespace karst::subspace {

std::size_t recommended_sample_count(double beta, int m, int n) {
  if (m < 0 || n <= 0 || m > n) throw Error(ErrorKind::Domain, "recommended_sample_count: need 0 <= m <= n");
  if (beta < 2 || beta > 10)
    std::cerr << "warning: sampling factor " << beta << " outside the recommended range [2, 10]\n";
  if (m == 0) return 0;
  return static_cast<std::size_t>(std::ceil(beta * m * std::log(static_cast<double>(n))));
}

Eigen::MatrixXd gradient_matrix(const std::vector<GradientSample>& samples) {
  if (samples.empty()) return {};
  Eigen::MatrixXd g(samples.front().g.size(), static_cast<Eigen::Index>(samples.size()));
  for (std::size_t j = 0; j < samples.size(); ++j) g.col(static_cast<Eigen::Index>(j)) = samples[j].g;
  return g;
}

std::vector<std::vector<int>> monomial_exponents(int k, int degree) {
  std::vector<std::vector<int>> out;
  std::vector<int> current(static_cast<std::size_t>(k), 0);
  // Fill variables left to right, giving earlier variables the larger share first.
  std::function<void(int, int)> fill = [&](int var, int remaining) {
    if (var == k - 1) {
      current[static_cast<std::size_t>(var)] = remaining;
      out.push_back(current);
      return;
    }
    for (int e = remaining; e >= 0; --e) {
      current[static_cast<std::size_t>(var)] = e;
      fill(var + 1, remaining - e);
    }
  };
  for (int total = 0; total <= degree; ++total) {
    if (k == 0) {
      if (total == 0) out.emplace_back();
      continue;
    }
    fill(0, total);
  }
  return out;
}

Eigen::MatrixXd design_matrix(const Eigen::Ref<const Eigen::MatrixXd>& ys, const std::vector<std::vector<int>>& exponents) {
  const Eigen::Index m = ys.cols(), k = ys.rows();
  int degree = 0;
  for (const auto& e : exponents)
    for (int v : e) degree = std::max(degree, v);
  Eigen::MatrixXd a(m, static_cast<Eigen::Index>(exponents.size()));
  // powers(p * k + j, i) = y_j^p for sample i
  Eigen::MatrixXd powers((degree + 1) * k, m);
  for (Eigen::Index j = 0; j < k; ++j) {
    powers.row(j).setOnes();
    for (int p = 1; p <= degree; ++p) powers.row(p * k + j) = powers.row((p - 1) * k + j).cwiseProduct(ys.row(j));
  }
  for (std::size_t c = 0; c < exponents.size(); ++c) {
    auto col = a.col(static_cast<Eigen::Index>(c));
    col.setOnes();
    for (Eigen::Index j = 0; j < k; ++j) {
      const int p = exponents[c][static_cast<std::size_t>(j)];
      if (p > 0) col = col.cwiseProduct(powers.row(p * k + j).transpose());
    }
  }
  return a;
}

double PolySurrogate::evaluate(const Eigen::Ref<const Eigen::VectorXd>& y) const {
  double sum = 0;
  for (std::size_t c = 0; c < exponents.size(); ++c) {
    double term = coefficients(static_cast<Eigen::Index>(c));
    for (int j = 0; j < k; ++j) {
      const int p = exponents[c][static_cast<std::size_t>(j)];
      for (int q = 0; q < p; ++q) term *= y(j);
    }
    sum += term;
  }
  return sum;
}

double r_squared(const Eigen::Ref<const Eigen::VectorXd>& target, const Eigen::Ref<const Eigen::VectorXd>& prediction) {
  const double ss_res = (target - prediction).squaredNorm();
  const double ss_tot = (target.array() - target.mean()).matrix().squaredNorm();
  if (ss_tot == 0) return 1.0;
  return 1.0 - ss_res / ss_tot;
}

PolySurrogate fit_response_surface(const Eigen::Ref<const Eigen::MatrixXd>& xs, const Eigen::Ref<const Eigen::VectorXd>& fs,
                                   const Eigen::Ref<const Eigen::MatrixXd>& w1, int degree) {
  if (degree < 1) throw Error(ErrorKind::Domain, "fit_response_surface: degree must be at least 1");
  if (xs.cols() != fs.size() || xs.rows() != w1.rows())
    throw Error(ErrorKind::InvalidInput, "fit_response_surface: inconsistent sample dimensions");
  PolySurrogate s;
  s.k = static_cast<int>(w1.cols());
  s.degree = degree;
  s.exponents = monomial_exponents(s.k, degree);
  const auto n_coef = static_cast<Eigen::Index>(s.size());
  const Eigen::Index m = xs.cols();
  if (m < 2 * n_coef)
    throw Error(ErrorKind::Domain, "fit_response_surface: " + std::to_string(m) + " samples for " +
                                       std::to_string(n_coef) + " coefficients; need at least twice as many");

  const Eigen::MatrixXd ys = w1.transpose() * xs;
  std::vector<Eigen::Index> train, test;
  for (Eigen::Index i = 0; i < m; ++i) (i % 5 == 4 ? test : train).push_back(i);
  const Eigen::MatrixXd y_train = ys(Eigen::all, train);
  const Eigen::VectorXd f_train = fs(train);
  s.n_train = train.size();
  s.n_test = test.size();

  Eigen::MatrixXd a = design_matrix(y_train, s.exponents);
  Eigen::VectorXd scale = a.colwise().norm().transpose();
  for (Eigen::Index c = 0; c < scale.size(); ++c)
    if (scale(c) == 0) scale(c) = 1;
  a = a * scale.cwiseInverse().asDiagonal();
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(a);
  qr.setThreshold(1e-12);
  if (qr.rank() < n_coef)
    throw Error(ErrorKind::Numerical, "fit_response_surface: rank-deficient design matrix (rank " +
                                          std::to_string(qr.rank()) + " of " + std::to_string(n_coef) + " columns)");
  s.coefficients = scale.cwiseInverse().asDiagonal() * qr.solve(f_train);

  auto predict = [&](const Eigen::MatrixXd& y) {
    Eigen::VectorXd out(y.cols());
    for (Eigen::Index i = 0; i < y.cols(); ++i) out(i) = s.evaluate(y.col(i));
    return out;
  };
  s.r2_train = r_squared(f_train, predict(y_train));
  if (!test.empty()) {
    const Eigen::MatrixXd y_test = ys(Eigen::all, test);
    s.r2_test = r_squared(fs(test), predict(y_test));
  } else {
    s.r2_test = s.r2_train;
  }
  return s;
}

}  // namespace karst::subspace
