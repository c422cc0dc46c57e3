#include "karst/bayes.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "karst/error.hpp"
#include "karst/parallel.hpp"
#include "karst/random.hpp"

namespace karst::bayes {

ObservationSet ObservationSet::make(Eigen::VectorXd d, double noise, int warmup_days) {
  if (!(noise > 0)) throw Error(ErrorKind::Config, "noise level must be positive");
  if (d.size() == 0) throw Error(ErrorKind::InvalidInput, "no observations");
  if (warmup_days < 0 || warmup_days >= d.size())
    throw Error(ErrorKind::Config, "warm-up period must be shorter than the observation record");
  std::vector<double> sorted(d.data(), d.data() + d.size());
  const auto mid = sorted.begin() + static_cast<std::ptrdiff_t>(sorted.size() / 2);
  std::nth_element(sorted.begin(), mid, sorted.end());
  const double floor = 0.01 * *mid;
  ObservationSet obs;
  obs.noise = noise;
  obs.warmup_days = warmup_days;
  obs.gamma_diag = d.unaryExpr([&](double v) {
    const double s = noise * std::max(v, floor);
    return s * s;
  });
  if (!(obs.gamma_diag.minCoeff() > 0))
    throw Error(ErrorKind::InvalidInput, "observations yield a non-positive noise variance");
  obs.d = std::move(d);
  return obs;
}

double data_misfit(std::span<const double> sim, const ObservationSet& obs) {
  if (sim.size() != static_cast<std::size_t>(obs.d.size()))
    throw Error(ErrorKind::InvalidInput, "misfit: simulation and observation lengths differ");
  double sum = 0;
  for (std::size_t i = static_cast<std::size_t>(obs.warmup_days); i < sim.size(); ++i) {
    const auto ii = static_cast<Eigen::Index>(i);
    const double r = obs.d(ii) - sim[i];
    sum += r * r / obs.gamma_diag(ii);
  }
  return std::isfinite(sum) ? 0.5 * sum : std::numeric_limits<double>::quiet_NaN();
}

model::ModelState ForwardProblem::initial_state(const model::PhysicalParams& p) const {
  if (empty_stores) return {};
  return model::initial_state(p, meta, obs.d.size() > 0 ? std::optional<double>(obs.d(0)) : std::nullopt);
}

model::DischargeSeries ForwardProblem::discharge(const Eigen::Ref<const Eigen::VectorXd>& x, bool with_components) const {
  const auto p = params::to_physical(x, prior);
  return model::simulate(p, meta, input, initial_state(p), with_components);
}

double ForwardProblem::misfit(const Eigen::Ref<const Eigen::VectorXd>& x) const {
  try {
    return data_misfit(discharge(x).total_m3d, obs);
  } catch (const Error&) {
    return std::numeric_limits<double>::quiet_NaN();
  }
}

// ---------------------------------------------------------------------------
// Kernel density estimate

namespace {

double quantile_sorted(const std::vector<double>& values, double q) {
  const double h = (static_cast<double>(values.size()) - 1) * q;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (h - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

constexpr int kMaxGridDim = 6;
constexpr int kCellBits = 10;

double robust_scale(const Eigen::Ref<const Eigen::VectorXd>& v) {
  const double n = static_cast<double>(v.size());
  const double mean = v.mean();
  const double sd = std::sqrt((v.array() - mean).square().sum() / std::max(1.0, n - 1));
  std::vector<double> s(v.data(), v.data() + v.size());
  std::sort(s.begin(), s.end());
  const double iqr = quantile_sorted(s, 0.75) - quantile_sorted(s, 0.25);
  return iqr > 0 ? std::min(sd, iqr / 1.349) : sd;
}

}  // namespace

GaussianKde::GaussianKde(Eigen::MatrixXd points, BandwidthRule /*rule*/) : points_(std::move(points)) {
  const Eigen::Index d = points_.rows(), m = points_.cols();
  if (d == 0 || m < 2) throw Error(ErrorKind::InvalidInput, "kde: need at least two reference points");
  bandwidth_.resize(d);
  const double n = static_cast<double>(m);
  for (Eigen::Index j = 0; j < d; ++j) {
    const Eigen::VectorXd row = points_.row(j).transpose();
    double h;
    if (d == 1) {
      h = 0.9 * robust_scale(row) * std::pow(n, -0.2);
    } else {
      const double sd = std::sqrt((row.array() - row.mean()).square().sum() / (n - 1));
      h = sd * std::pow(4.0 / ((static_cast<double>(d) + 2) * n), 1.0 / (static_cast<double>(d) + 4));
    }
    bandwidth_(j) = h > 0 ? h : 1e-12;
  }
  norm_ = 1.0 / (n * bandwidth_.prod() * std::pow(2 * std::numbers::pi, 0.5 * static_cast<double>(d)));

  if (d > kMaxGridDim) return;
  origin_ = points_.rowwise().minCoeff();
  const Eigen::VectorXd width = cutoff_ * bandwidth_;
  const Eigen::VectorXd span = points_.rowwise().maxCoeff() - origin_;
  for (Eigen::Index j = 0; j < d; ++j)
    if (span(j) / width(j) >= (1 << kCellBits) - 2) return;

  std::vector<std::uint64_t> keys(static_cast<std::size_t>(m));
  for (Eigen::Index i = 0; i < m; ++i) {
    const Eigen::VectorXi cell =
        ((points_.col(i) - origin_).array() / width.array()).floor().cast<int>().matrix();
    keys[static_cast<std::size_t>(i)] = cell_key(cell);
  }
  order_.resize(static_cast<std::size_t>(m));
  std::iota(order_.begin(), order_.end(), 0);
  std::stable_sort(order_.begin(), order_.end(), [&](std::size_t a, std::size_t b) { return keys[a] < keys[b]; });
  Eigen::MatrixXd sorted(d, m);
  for (std::size_t i = 0; i < order_.size(); ++i)
    sorted.col(static_cast<Eigen::Index>(i)) = points_.col(static_cast<Eigen::Index>(order_[i]));
  points_ = std::move(sorted);
  for (std::size_t i = 0; i < order_.size();) {
    std::size_t j = i;
    const std::uint64_t key = keys[order_[i]];
    while (j < order_.size() && keys[order_[j]] == key) ++j;
    cells_.emplace(key, std::make_pair(i, j));
    i = j;
  }
  gridded_ = true;
}

std::uint64_t GaussianKde::cell_key(const Eigen::Ref<const Eigen::VectorXi>& cell) const {
  std::uint64_t key = 0;
  for (Eigen::Index j = 0; j < cell.size(); ++j) {
    // +1 so neighbors of the first cell stay non-negative
    key = (key << kCellBits) | static_cast<std::uint64_t>(cell(j) + 1);
  }
  return key;
}

double GaussianKde::kernel_sum(const Eigen::Ref<const Eigen::VectorXd>& y) const {
  const Eigen::Index d = dim();
  const double cut2 = cutoff_ * cutoff_;
  const Eigen::VectorXd inv_h = bandwidth_.cwiseInverse();
  auto accumulate = [&](std::size_t begin, std::size_t end) {
    double sum = 0;
    for (std::size_t i = begin; i < end; ++i) {
      double r2 = 0;
      const double* p = points_.data() + static_cast<Eigen::Index>(i) * d;
      for (Eigen::Index j = 0; j < d && r2 < cut2; ++j) {
        const double u = (y(j) - p[j]) * inv_h(j);
        r2 += u * u;
      }
      if (r2 < cut2) sum += std::exp(-0.5 * r2);
    }
    return sum;
  };
  if (!gridded_) return accumulate(0, static_cast<std::size_t>(points_.cols()));

  const Eigen::VectorXd width = cutoff_ * bandwidth_;
  const Eigen::ArrayXd position = ((y - origin_).array() / width.array()).floor();
  // Outside the populated grid (or NaN): no reference point within the cutoff.
  if (!((position >= -1.0).all() && (position <= (1 << kCellBits) - 3).all())) return 0.0;
  const Eigen::VectorXi center = position.cast<int>().matrix();

  double sum = 0;
  Eigen::VectorXi offset = Eigen::VectorXi::Constant(d, -1);
  const auto combos = static_cast<int>(std::pow(3, static_cast<double>(d)));
  for (int c = 0; c < combos; ++c) {
    int rem = c;
    for (Eigen::Index j = 0; j < d; ++j) {
      offset(j) = rem % 3 - 1;
      rem /= 3;
    }
    const Eigen::VectorXi cell = center + offset;
    if ((cell.array() < -1).any()) continue;
    const auto it = cells_.find(cell_key(cell));
    if (it != cells_.end()) sum += accumulate(it->second.first, it->second.second);
  }
  return sum;
}

double GaussianKde::operator()(const Eigen::Ref<const Eigen::VectorXd>& y) const {
  if (y.size() != dim()) throw Error(ErrorKind::InvalidInput, "kde: dimension mismatch");
  return norm_ * kernel_sum(y);
}

double GaussianKde::log_density(const Eigen::Ref<const Eigen::VectorXd>& y) const {
  const double v = (*this)(y);
  return v > 0 ? std::log(v) : -std::numeric_limits<double>::infinity();
}

Eigen::VectorXd GaussianKde::sample(Rng& rng) const {
  std::uniform_int_distribution<Eigen::Index> pick(0, points_.cols() - 1);
  std::normal_distribution<double> normal;
  Eigen::VectorXd y = points_.col(pick(rng));
  for (Eigen::Index j = 0; j < y.size(); ++j) y(j) += bandwidth_(j) * normal(rng);
  return y;
}

GaussianKde estimate_marginal_prior(const Eigen::Ref<const Eigen::MatrixXd>& w1, std::size_t n_samples,
                                    std::uint64_t seed, BandwidthRule rule) {
  if (n_samples < 10000) throw Error(ErrorKind::Domain, "marginal prior KDE needs at least 1e4 prior draws");
  const Eigen::Index n = w1.rows();
  Rng rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Eigen::MatrixXd xs(n, static_cast<Eigen::Index>(n_samples));
  for (Eigen::Index c = 0; c < xs.cols(); ++c)
    for (Eigen::Index r = 0; r < n; ++r) xs(r, c) = u(rng);
  return GaussianKde(w1.transpose() * xs, rule);
}

// ---------------------------------------------------------------------------
// Markov chains

MarkovChain mh_active(const ScalarField& misfit, const ScalarField& log_density, const Eigen::VectorXd& start,
                      const MhOptions& options) {
  if (options.steps <= options.burn_in) throw Error(ErrorKind::Config, "chain length must exceed the burn-in");
  if (!(options.proposal_std > 0)) throw Error(ErrorKind::Config, "proposal standard deviation must be positive");
  const Eigen::Index k = start.size();
  Rng rng(options.seed);
  std::normal_distribution<double> normal;
  std::uniform_real_distribution<double> unit;

  auto log_target = [&](const Eigen::VectorXd& y) {
    const double ld = log_density(y);
    if (!(ld > -std::numeric_limits<double>::infinity())) return -std::numeric_limits<double>::infinity();
    return -misfit(y) + ld;
  };

  MarkovChain chain;
  chain.burn_in = options.burn_in;
  chain.states.resize(k, static_cast<Eigen::Index>(options.steps));
  Eigen::VectorXd y = start;
  double lp = log_target(y);
  if (!std::isfinite(lp)) throw Error(ErrorKind::Domain, "mh_active: start point has zero density; choose another start");

  constexpr std::size_t kWindow = 100;
  constexpr double kTargetRate = 0.35;
  double sigma = options.proposal_std;
  std::size_t window_accepts = 0;
  Eigen::VectorXd proposal(k);
  for (std::size_t t = 0; t < options.steps; ++t) {
    for (Eigen::Index j = 0; j < k; ++j) proposal(j) = y(j) + sigma * normal(rng);
    const double lp_new = log_target(proposal);
    const double u = 1.0 - unit(rng);  // (0, 1]
    const bool accept = std::log(u) <= lp_new - lp;
    if (accept) {
      y = proposal;
      lp = lp_new;
    }
    chain.states.col(static_cast<Eigen::Index>(t)) = y;
    if (t < options.burn_in) {
      window_accepts += accept;
      if (options.auto_tune && (t + 1) % kWindow == 0) {
        const double rate = static_cast<double>(window_accepts) / kWindow;
        sigma *= std::exp(2.0 * (rate - kTargetRate));
        window_accepts = 0;
      }
    } else if (accept) {
      ++chain.accepted;
    }
  }
  chain.proposal_std = sigma;
  return chain;
}

EssResult effective_sample_size(const Eigen::Ref<const Eigen::MatrixXd>& states) {
  const Eigen::Index k = states.rows(), n = states.cols();
  if (n < 100) throw Error(ErrorKind::Domain, "effective_sample_size: chain must have at least 100 states");
  const Eigen::Index cap = std::max<Eigen::Index>(1, n / 50);
  EssResult r;
  r.per_component.resize(k);
  r.max_lag.resize(k);
  for (Eigen::Index l = 0; l < k; ++l) {
    const Eigen::VectorXd c = (states.row(l).array() - states.row(l).mean()).matrix().transpose();
    const double var = c.squaredNorm() / static_cast<double>(n);
    double sum = 0;
    Eigen::Index lag = 1;
    for (; lag <= cap; ++lag) {
      const double rj =
          var > 0 ? c.head(n - lag).dot(c.tail(n - lag)) / static_cast<double>(n) / var : 1.0;
      if (rj < 0.05) break;
      sum += rj;
    }
    r.max_lag(l) = static_cast<int>(lag - 1);
    r.per_component(l) = static_cast<double>(n) / (1.0 + 2.0 * sum);
  }
  r.min = r.per_component.minCoeff();
  return r;
}

Eigen::MatrixXd thin(const Eigen::Ref<const Eigen::MatrixXd>& states, std::size_t target, std::size_t* stride) {
  const auto n = static_cast<std::size_t>(states.cols());
  if (target == 0 || target > n)
    throw Error(ErrorKind::Domain, "thin: target " + std::to_string(target) + " not in [1, " + std::to_string(n) + "]");
  const std::size_t p = n / target;
  if (stride) *stride = p;
  Eigen::MatrixXd out(states.rows(), static_cast<Eigen::Index>(target));
  for (std::size_t i = 0; i < target; ++i)
    out.col(static_cast<Eigen::Index>(i)) = states.col(static_cast<Eigen::Index>(i * p));
  return out;
}

// ---------------------------------------------------------------------------
// Inactive variables

std::optional<Eigen::VectorXd> feasible_point(const Eigen::Ref<const Eigen::VectorXd>& y,
                                              const Eigen::Ref<const Eigen::MatrixXd>& w1) {
  // Alternating projections between {x : W1^T x = y} and the box.
  Eigen::VectorXd x = w1 * y;
  for (int it = 0; it < 20000; ++it) {
    const Eigen::VectorXd b = x.cwiseMax(-1.0).cwiseMin(1.0);
    const double gap = (b - x).cwiseAbs().maxCoeff();
    if (gap <= 1e-13) return x;
    x = b - w1 * (w1.transpose() * b - y);
  }
  if ((x.cwiseAbs().array() - 1.0).maxCoeff() <= 1e-10) return x;
  return std::nullopt;
}

Eigen::MatrixXd sample_inactive(const Eigen::Ref<const Eigen::VectorXd>& y,
                                const subspace::SubspaceDecomposition<double>& w, std::size_t n_z, std::uint64_t seed,
                                const InactiveOptions& options) {
  const Eigen::MatrixXd w1 = w.W1();
  const Eigen::MatrixXd w2 = w.W2();
  const Eigen::Index m = w2.cols();
  const auto start = feasible_point(y, w1);
  if (!start) throw Error(ErrorKind::Domain, "sample_inactive: the prior slice for this active value is empty");
  const Eigen::VectorXd base = w1 * y;
  Eigen::VectorXd z = w2.transpose() * *start;
  Eigen::MatrixXd out(m, static_cast<Eigen::Index>(n_z));
  if (m == 0) return out;

  const double sigma =
      options.proposal_std > 0 ? options.proposal_std : 2.38 * std::sqrt(1.0 / 3.0) / std::sqrt(static_cast<double>(m));
  Rng rng(seed);
  std::normal_distribution<double> normal;
  Eigen::VectorXd proposal(m);
  auto advance = [&] {
    for (Eigen::Index j = 0; j < m; ++j) proposal(j) = z(j) + sigma * normal(rng);
    if ((base + w2 * proposal).cwiseAbs().maxCoeff() <= 1.0) z = proposal;
  };
  for (std::size_t t = 0; t < options.burn_in; ++t) advance();
  const std::size_t thinning = std::max<std::size_t>(1, options.thinning);
  for (std::size_t s = 0; s < n_z; ++s) {
    for (std::size_t t = 0; t < thinning; ++t) advance();
    out.col(static_cast<Eigen::Index>(s)) = z;
  }
  return out;
}

Eigen::VectorXd lift(const Eigen::Ref<const Eigen::VectorXd>& y, const Eigen::Ref<const Eigen::VectorXd>& z,
                     const subspace::SubspaceDecomposition<double>& w) {
  if (y.size() != w.k || z.size() != w.dim() - w.k) throw Error(ErrorKind::InvalidInput, "lift: dimension mismatch");
  Eigen::VectorXd x = w.W1() * y + w.W2() * z;
  if ((x.cwiseAbs().array() - 1.0).maxCoeff() > 1e-9)
    throw Error(ErrorKind::Domain, "lift: lifted point leaves the prior hypercube");
  // absorb rounding at the faces
  return x.cwiseMax(-1.0).cwiseMin(1.0);
}

// ---------------------------------------------------------------------------
// Push-forward

double quantile(std::vector<double> values, double q) {
  if (values.empty()) throw Error(ErrorKind::InvalidInput, "quantile of an empty set");
  std::sort(values.begin(), values.end());
  return quantile_sorted(values, q);
}

PushForwardBands push_forward(const Eigen::Ref<const Eigen::MatrixXd>& xs,
                              const std::function<std::vector<double>(const Eigen::VectorXd&)>& simulate, double q_lo,
                              double q_hi, unsigned workers) {
  if (xs.cols() == 0) throw Error(ErrorKind::InvalidInput, "push_forward: empty ensemble");
  std::vector<std::optional<std::vector<double>>> runs(static_cast<std::size_t>(xs.cols()));
  parallel_for(runs.size(), workers, [&](std::size_t i) {
    try {
      auto q = simulate(xs.col(static_cast<Eigen::Index>(i)));
      if (std::all_of(q.begin(), q.end(), [](double v) { return std::isfinite(v); })) runs[i] = std::move(q);
    } catch (const Error&) {
    }
  });
  PushForwardBands bands;
  std::vector<const std::vector<double>*> ok;
  for (const auto& r : runs) {
    if (r) ok.push_back(&*r);
    else ++bands.failed;
  }
  if (ok.empty()) throw Error(ErrorKind::Numerical, "push_forward: every simulation failed");
  bands.used = ok.size();
  const std::size_t days = ok.front()->size();
  bands.lo.resize(static_cast<Eigen::Index>(days));
  bands.median.resizeLike(bands.lo);
  bands.hi.resizeLike(bands.lo);
  bands.mean.resizeLike(bands.lo);
  std::vector<double> column(ok.size());
  for (std::size_t t = 0; t < days; ++t) {
    for (std::size_t s = 0; s < ok.size(); ++s) column[s] = (*ok[s])[t];
    std::sort(column.begin(), column.end());
    const auto ti = static_cast<Eigen::Index>(t);
    bands.lo(ti) = quantile_sorted(column, q_lo);
    bands.median(ti) = quantile_sorted(column, 0.5);
    bands.hi(ti) = quantile_sorted(column, q_hi);
    bands.mean(ti) = std::accumulate(column.begin(), column.end(), 0.0) / static_cast<double>(column.size());
  }
  return bands;
}

}  // namespace karst::bayes
