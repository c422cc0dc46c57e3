#pragma once

// End-to-end orchestration: data loading, gradient sweep and subspace
// artifacts, surrogate inversion, push-forward bands, synthetic twin data.
// Every stage reads and writes plain CSV or key-value files in one
// output directory.

#include <atomic>
#include <chrono>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "karst/active_subspace.hpp"
#include "karst/bayes.hpp"
#include "karst/io.hpp"
#include "karst/model.hpp"
#include "karst/parameter_space.hpp"

namespace karst::pipeline {

struct PipelineConfig {
  // inputs
  std::string forcing_path;          // date,precip_mm,temp_c
  std::string effective_input_path;  // alternative to forcing: date,s1_mm,s2_mm,s3_mm
  std::string obs_path;              // date,q_obs_m3d
  std::string model_config_path;     // key-value catchment and preprocessing settings
  std::string prior_path;            // empty selects the built-in prior table
  std::string params_path;           // simulate: one row of x_* or physical columns
  std::string subspace_dir;          // invert: reuse artifacts from this directory
  std::string ensemble_path;         // pushforward input
  std::string out_dir = ".";

  double noise = 0.05;
  std::size_t n_gradients = 1000;
  double fd_step = 1e-4;
  int k = 4;
  int degree = 4;
  int bootstrap = 500;
  std::size_t surrogate_extra = 0;  // additional prior draws for the response-surface fit
  std::size_t steps = 100000;
  std::size_t burn_in = 10000;
  double proposal_std = 0.07071067811865475;  // sqrt(0.005)
  bool auto_tune = true;
  std::size_t kde_samples = 100000;
  std::size_t inactive_per_active = 1;
  std::size_t inactive_burn_in = 500;
  std::size_t inactive_thinning = 10;
  double band_lo = 0.125;
  double band_hi = 0.875;
  std::uint64_t seed = 1;
  unsigned workers = 1;

  int years = 3;                 // synthetic forcing length
  double truth_halfwidth = 0.5;  // synthetic truth drawn from U[-w, w]^21

  /// Throws Error(Config) for non-positive counts, k outside (0, 21),
  /// noise <= 0 or burn_in >= steps.
  void validate() const;
};

class RunLedger {
 public:
  std::atomic<std::uint64_t> forward_evaluations{0};

  void record_stage(const std::string& name, double seconds) { stages_.emplace_back(name, seconds); }
  void record_seed(const std::string& name, std::uint64_t seed) { seeds_.emplace_back(name, seed); }
  void record_artifact(const std::string& path);
  void record_value(const std::string& key, const std::string& value) { values_.emplace_back(key, value); }

  const std::vector<std::pair<std::string, double>>& stages() const { return stages_; }
  const std::vector<std::pair<std::string, std::string>>& artifacts() const { return artifacts_; }
  void write(const std::string& path) const;

  /// Records the wall-clock time of a scope as one stage.
  class Timer {
   public:
    Timer(RunLedger& ledger, std::string name)
        : ledger_(ledger), name_(std::move(name)), start_(std::chrono::steady_clock::now()) {}
    ~Timer() {
      ledger_.record_stage(name_, std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count());
    }

   private:
    RunLedger& ledger_;
    std::string name_;
    std::chrono::steady_clock::time_point start_;
  };

 private:
  std::vector<std::pair<std::string, double>> stages_;
  std::vector<std::pair<std::string, std::uint64_t>> seeds_;
  std::vector<std::pair<std::string, std::string>> artifacts_;
  std::vector<std::pair<std::string, std::string>> values_;
};

params::PriorSpec load_prior(const PipelineConfig& cfg);
model::EffectiveInputSeries load_input(const PipelineConfig& cfg, const io::ModelConfig& mc);

/// Forward problem from the configured files. Observation dates must match
/// the forcing dates.
bayes::ForwardProblem load_problem(const PipelineConfig& cfg);

struct SubspaceResult {
  std::vector<subspace::GradientSample> samples;
  std::size_t failed = 0;
  subspace::SubspaceDecomposition<double> decomposition;
  Eigen::VectorXd sensitivities;  // normalized over the first k eigenpairs
};

SubspaceResult run_subspace(const bayes::ForwardProblem& fp, const PipelineConfig& cfg, RunLedger& ledger);
void write_subspace(const std::string& dir, const SubspaceResult& r, RunLedger& ledger);
/// Reads gradients.csv and eigen*.csv written by write_subspace.
SubspaceResult read_subspace(const std::string& dir, int k);

struct InvertResult {
  subspace::PolySurrogate surrogate;
  bayes::MarkovChain chain;
  bayes::EssResult ess;
  bayes::PosteriorEnsemble ensemble;
};

InvertResult run_invert(const bayes::ForwardProblem& fp, const SubspaceResult& sub, const PipelineConfig& cfg,
                        RunLedger& ledger);
/// posterior.csv, active_chain.csv, surrogate.csv and diagnostics.txt
/// (chain, surrogate and ensemble summaries plus the eigenvalue table).
void write_invert(const std::string& dir, const bayes::ForwardProblem& fp, const SubspaceResult& sub,
                  const InvertResult& r, RunLedger& ledger);

/// Calibration coordinates of an ensemble CSV (columns x_*).
Eigen::MatrixXd read_ensemble(const std::string& path, std::size_t expected_days);

bayes::PushForwardBands run_pushforward(const bayes::ForwardProblem& fp, const Eigen::MatrixXd& xs,
                                        const PipelineConfig& cfg, RunLedger& ledger);
/// date,obs,lo95,hi95,post_median,post_lo,post_hi,post_mean
void write_bands(const std::string& path, const bayes::ForwardProblem& fp, const bayes::PushForwardBands& b,
                 const std::vector<model::Date>& dates);

/// Seasonal temperature with noise; wet-day precipitation plus storms.
model::ForcingSeries generate_forcing(int years, model::Date start, std::uint64_t seed);

struct SyntheticResult {
  model::ForcingSeries forcing;
  io::ModelConfig model_config;
  Eigen::VectorXd truth_x;
  model::DischargeSeries noiseless;
  io::Observations obs;
};

SyntheticResult run_synthetic(const PipelineConfig& cfg);

/// Subcommand bodies: read inputs, run the stage, write artifacts and
/// ledger.txt into cfg.out_dir.
void cmd_simulate(const PipelineConfig& cfg);
void cmd_subspace(const PipelineConfig& cfg);
void cmd_invert(const PipelineConfig& cfg);
void cmd_pushforward(const PipelineConfig& cfg);
void cmd_synthetic(const PipelineConfig& cfg);

}  // namespace karst::pipeline
