// karstas: command-line front end for the karst-spring calibration pipeline.

#include <iostream>

#include "CLI11.hpp"
#include "karst/error.hpp"
#include "karst/pipeline.hpp"

namespace {

using karst::pipeline::PipelineConfig;

void add_data_flags(CLI::App* app, PipelineConfig& c) {
  app->add_option("--forcing", c.forcing_path, "Daily forcing CSV (date,precip_mm,temp_c)");
  app->add_option("--effective-input", c.effective_input_path, "Precomputed source terms CSV (date,s1_mm,s2_mm,s3_mm)");
  app->add_option("--obs", c.obs_path, "Observed discharge CSV (date,q_obs_m3d)");
  app->add_option("--model-config", c.model_config_path, "Catchment and preprocessing key-value file")->required();
  app->add_option("--prior", c.prior_path, "Prior table (name lb ub unit scale); default: built-in table");
  app->add_option("--out", c.out_dir, "Output directory")->capture_default_str();
}

void add_inference_flags(CLI::App* app, PipelineConfig& c) {
  app->add_option("--noise", c.noise, "Relative observation noise level")->capture_default_str();
  app->add_option("--workers", c.workers, "Worker threads")->capture_default_str();
  app->add_option("--seed", c.seed, "Root seed")->capture_default_str();
}

void add_subspace_flags(CLI::App* app, PipelineConfig& c) {
  app->add_option("--gradients", c.n_gradients, "Gradient sample count N")->capture_default_str();
  app->add_option("--fd-step", c.fd_step, "Finite-difference step")->capture_default_str();
  app->add_option("--k", c.k, "Active subspace dimension")->capture_default_str();
  app->add_option("--bootstrap", c.bootstrap, "Bootstrap replicates for eigenvalue bands")->capture_default_str();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Karst spring model calibration with active subspaces"};
  app.set_config("--config", "", "Configuration file (INI/TOML); command-line flags take precedence");
  app.require_subcommand(1);
  PipelineConfig c;

  auto* simulate = app.add_subcommand("simulate", "Run the model for one parameter set");
  add_data_flags(simulate, c);
  simulate->add_option("--params", c.params_path, "CSV with one row of x_* or physical parameter columns")->required();

  auto* subspace = app.add_subcommand("subspace", "Gradient sweep, eigen-decomposition and sensitivities");
  add_data_flags(subspace, c);
  add_inference_flags(subspace, c);
  add_subspace_flags(subspace, c);

  auto* invert = app.add_subcommand("invert", "Surrogate fit, active-variable chain and posterior ensemble");
  add_data_flags(invert, c);
  add_inference_flags(invert, c);
  add_subspace_flags(invert, c);
  invert->add_option("--subspace-dir", c.subspace_dir, "Reuse subspace artifacts from this directory");
  invert->add_option("--degree", c.degree, "Response-surface total degree")->capture_default_str();
  invert->add_option("--surrogate-extra", c.surrogate_extra, "Extra prior draws for the response surface")
      ->capture_default_str();
  invert->add_option("--steps", c.steps, "Chain length including burn-in")->capture_default_str();
  invert->add_option("--burn-in", c.burn_in, "Burn-in steps")->capture_default_str();
  invert->add_option("--proposal-std", c.proposal_std, "Initial proposal standard deviation")->capture_default_str();
  invert->add_flag("!--no-auto-tune", c.auto_tune, "Keep the proposal std fixed during burn-in");
  invert->add_option("--kde-samples", c.kde_samples, "Prior draws for the marginal density")->capture_default_str();
  invert->add_option("--inactive-per-active", c.inactive_per_active, "Inactive samples per active state")
      ->capture_default_str();

  auto* pushforward = app.add_subcommand("pushforward", "Per-day quantile bands of the posterior discharge");
  add_data_flags(pushforward, c);
  add_inference_flags(pushforward, c);
  pushforward->add_option("--ensemble", c.ensemble_path, "Posterior ensemble CSV")->required();
  pushforward->add_option("--band-lo", c.band_lo, "Lower posterior quantile")->capture_default_str();
  pushforward->add_option("--band-hi", c.band_hi, "Upper posterior quantile")->capture_default_str();

  auto* synthetic = app.add_subcommand("synthetic", "Generate a synthetic twin data set");
  synthetic->add_option("--out", c.out_dir, "Output directory")->capture_default_str();
  synthetic->add_option("--prior", c.prior_path, "Prior table; default: built-in table");
  synthetic->add_option("--noise", c.noise, "Relative noise added to the discharge")->capture_default_str();
  synthetic->add_option("--years", c.years, "Length of the forcing series")->capture_default_str();
  synthetic->add_option("--seed", c.seed, "Root seed")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    namespace p = karst::pipeline;
    if (simulate->parsed()) p::cmd_simulate(c);
    else if (subspace->parsed()) p::cmd_subspace(c);
    else if (invert->parsed()) p::cmd_invert(c);
    else if (pushforward->parsed()) p::cmd_pushforward(c);
    else if (synthetic->parsed()) p::cmd_synthetic(c);
  } catch (const karst::Error& e) {
    std::cerr << "karstas: " << karst::to_string(e.kind()) << ": " << e.what() << '\n';
    return static_cast<int>(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "karstas: internal error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
