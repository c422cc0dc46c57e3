#pragma once

// Bayesian inversion in the active subspace: Gaussian data misfit, a KDE of
// the marginal prior on the active variables, random-walk Metropolis-Hastings
// on the surrogate posterior, chain diagnostics and thinning, sampling of the
// inactive variables on the prior slice, lifting, and push-forward bands.

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>

#include "karst/active_subspace.hpp"
#include "karst/model.hpp"
#include "karst/parameter_space.hpp"

namespace karst::bayes {

struct ObservationSet {
  Eigen::VectorXd d;           // observed discharge, m^3/d
  double noise = 0.05;         // relative noise level
  Eigen::VectorXd gamma_diag;  // noise variances
  int warmup_days = 0;         // leading days excluded from the misfit

  /// Gamma_ii = (noise * max(d_i, 1% of median(d)))^2.
  static ObservationSet make(Eigen::VectorXd d, double noise, int warmup_days);
};

/// 0.5 * sum over post-warm-up days of (d_i - sim_i)^2 / Gamma_ii. Returns
/// NaN if the simulation holds non-finite values.
double data_misfit(std::span<const double> sim, const ObservationSet& obs);

/// Parameter-to-observation map and misfit for the LuKARS model on fixed forcing.
struct ForwardProblem {
  model::EffectiveInputSeries input;
  model::CatchmentMeta meta;
  params::PriorSpec prior;
  ObservationSet obs;
  bool empty_stores = false;  // start from zero storage instead of the default state

  model::ModelState initial_state(const model::PhysicalParams& p) const;
  /// Simulated spring discharge for calibration coordinates x.
  model::DischargeSeries discharge(const Eigen::Ref<const Eigen::VectorXd>& x, bool with_components = false) const;
  /// Misfit for x; NaN when the model cannot be evaluated.
  double misfit(const Eigen::Ref<const Eigen::VectorXd>& x) const;
};

enum class BandwidthRule { Silverman };

/// Gaussian product-kernel density estimate with per-dimension bandwidths.
/// Kernels are truncated at five bandwidths; for up to six dimensions the
/// reference points are binned on a grid so only nearby points are visited.
class GaussianKde {
 public:
  GaussianKde(Eigen::MatrixXd points, BandwidthRule rule = BandwidthRule::Silverman);

  double operator()(const Eigen::Ref<const Eigen::VectorXd>& y) const;
  double log_density(const Eigen::Ref<const Eigen::VectorXd>& y) const;

  const Eigen::VectorXd& bandwidth() const { return bandwidth_; }
  const Eigen::MatrixXd& points() const { return points_; }
  Eigen::Index dim() const { return points_.rows(); }

  /// One draw from the estimated density.
  Eigen::VectorXd sample(Rng& rng) const;

 private:
  double kernel_sum(const Eigen::Ref<const Eigen::VectorXd>& y) const;

  Eigen::MatrixXd points_;
  Eigen::VectorXd bandwidth_;
  double norm_ = 0;
  bool gridded_ = false;
  double cutoff_ = 5.0;
  Eigen::VectorXd origin_;
  std::vector<std::size_t> order_;
  std::unordered_map<std::uint64_t, std::pair<std::size_t, std::size_t>> cells_;
  std::uint64_t cell_key(const Eigen::Ref<const Eigen::VectorXi>& cell) const;
};

/// KDE of W1^T x over n uniform prior draws.
GaussianKde estimate_marginal_prior(const Eigen::Ref<const Eigen::MatrixXd>& w1, std::size_t n_samples,
                                    std::uint64_t seed, BandwidthRule rule = BandwidthRule::Silverman);

struct MarkovChain {
  Eigen::MatrixXd states;  // one state per column, burn-in included
  std::size_t burn_in = 0;
  std::size_t accepted = 0;  // after burn-in
  double proposal_std = 0;   // value used after burn-in

  std::size_t size() const { return static_cast<std::size_t>(states.cols()); }
  double acceptance_rate() const {
    const auto kept = size() - burn_in;
    return kept ? static_cast<double>(accepted) / static_cast<double>(kept) : 0.0;
  }
  auto kept() const { return states.rightCols(states.cols() - static_cast<Eigen::Index>(burn_in)); }
};

struct MhOptions {
  double proposal_std = 0.0707;  // sqrt(0.005)
  std::size_t steps = 100000;
  std::size_t burn_in = 10000;
  bool auto_tune = true;  // adapt proposal_std during burn-in toward 35% acceptance
  std::uint64_t seed = 0;
};

using ScalarField = std::function<double(const Eigen::Ref<const Eigen::VectorXd>&)>;

/// Random-walk Metropolis-Hastings targeting exp(-misfit(y)) * density(y).
/// `log_density` returns log of the (unnormalized) prior density and may be
/// -inf outside its support. Throws Error(Domain) if the start point has zero
/// density.
MarkovChain mh_active(const ScalarField& misfit, const ScalarField& log_density, const Eigen::VectorXd& start,
                      const MhOptions& options);

struct EssResult {
  Eigen::VectorXd per_component;
  Eigen::VectorXi max_lag;
  double min = 0;
};

/// ESS per component as N / (1 + 2 sum_{j<J} r_j), where J is the first lag
/// with r_J < 0.05, capped at N/50.
EssResult effective_sample_size(const Eigen::Ref<const Eigen::MatrixXd>& states);

/// Stride floor(N / target); returns `target` states, the i-th taken at i*stride.
Eigen::MatrixXd thin(const Eigen::Ref<const Eigen::MatrixXd>& states, std::size_t target, std::size_t* stride = nullptr);

struct InactiveOptions {
  std::size_t burn_in = 500;
  std::size_t thinning = 10;
  double proposal_std = 0;  // 0 selects 2.38 * sqrt(1/3) / sqrt(n - k)
};

/// Point x in [-1,1]^n with W1^T x = y, or nullopt if the slice is empty.
std::optional<Eigen::VectorXd> feasible_point(const Eigen::Ref<const Eigen::VectorXd>& y,
                                              const Eigen::Ref<const Eigen::MatrixXd>& w1);

/// Metropolis-Hastings on z with the hypercube indicator of W1 y + W2 z as
/// target. Returns n_z samples as columns. Throws Error(Domain) if the
/// slice is empty.
Eigen::MatrixXd sample_inactive(const Eigen::Ref<const Eigen::VectorXd>& y,
                                const subspace::SubspaceDecomposition<double>& w, std::size_t n_z,
                                std::uint64_t seed, const InactiveOptions& options = {});

/// x = W1 y + W2 z, clamped to [-1,1]^n. Throws Error(Domain) if x leaves the
/// hypercube by more than 1e-9.
Eigen::VectorXd lift(const Eigen::Ref<const Eigen::VectorXd>& y, const Eigen::Ref<const Eigen::VectorXd>& z,
                     const subspace::SubspaceDecomposition<double>& w);

struct PosteriorEnsemble {
  Eigen::MatrixXd x;  // full-space samples, one per column
  Eigen::MatrixXd y;  // active provenance
  Eigen::MatrixXd z;  // inactive provenance
  double ess = 0;
  std::size_t stride = 1;
  std::size_t infeasible = 0;  // active states whose slice was empty

  std::size_t size() const { return static_cast<std::size_t>(x.cols()); }
};

struct PushForwardBands {
  Eigen::VectorXd lo, median, hi, mean;
  std::size_t used = 0;
  std::size_t failed = 0;
};

/// Per-day empirical quantiles of simulate(x) over the ensemble columns.
/// Quantiles use linear interpolation between order statistics.
PushForwardBands push_forward(const Eigen::Ref<const Eigen::MatrixXd>& xs,
                              const std::function<std::vector<double>(const Eigen::VectorXd&)>& simulate,
                              double q_lo = 0.125, double q_hi = 0.875, unsigned workers = 1);

double quantile(std::vector<double> values, double q);

}  // namespace karst::bayes
