#include "karst/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numbers>

#include "karst/error.hpp"
#include "karst/parallel.hpp"
#include "karst/random.hpp"

namespace karst::pipeline {

namespace fs = std::filesystem;
using io::format_double;

namespace {

std::string join(const std::string& dir, const std::string& file) { return (fs::path(dir) / file).string(); }

void config_error(bool bad, const std::string& what) {
  if (bad) throw Error(ErrorKind::Config, what);
}

std::vector<std::string> numbered(const std::string& prefix, Eigen::Index n) {
  std::vector<std::string> v;
  for (Eigen::Index i = 1; i <= n; ++i) v.push_back(prefix + std::to_string(i));
  return v;
}

std::vector<std::string> prefixed(const std::string& prefix, const std::vector<std::string>& names) {
  std::vector<std::string> v;
  for (const auto& n : names) v.push_back(prefix + n);
  return v;
}

std::string seed_hex(std::uint64_t s) {
  char buf[19];
  std::snprintf(buf, sizeof buf, "0x%016llx", static_cast<unsigned long long>(s));
  return buf;
}

}  // namespace

void PipelineConfig::validate() const {
  config_error(n_gradients == 0, "gradient sample count must be positive");
  config_error(!(fd_step > 0), "finite-difference step must be positive");
  config_error(k <= 0 || k >= params::kDim, "subspace dimension k must satisfy 0 < k < 21");
  config_error(degree <= 0, "surrogate degree must be positive");
  config_error(bootstrap <= 0, "bootstrap replicate count must be positive");
  config_error(steps == 0, "chain length must be positive");
  config_error(burn_in >= steps, "burn-in (" + std::to_string(burn_in) + ") must be shorter than the chain (" +
                                     std::to_string(steps) + " steps)");
  config_error(!(proposal_std > 0), "proposal std must be positive");
  config_error(!(noise > 0), "noise level must be positive");
  config_error(kde_samples == 0 || inactive_per_active == 0 || inactive_thinning == 0,
               "sample counts must be positive");
  config_error(!(band_lo >= 0 && band_lo < band_hi && band_hi <= 1), "band quantiles must satisfy 0 <= lo < hi <= 1");
  config_error(workers == 0, "worker count must be positive");
  config_error(years <= 0, "synthetic forcing length must be positive");
}

void RunLedger::record_artifact(const std::string& path) {
  artifacts_.emplace_back(fs::path(path).filename().string(), io::file_checksum(path));
}

void RunLedger::write(const std::string& path) const {
  std::vector<std::pair<std::string, std::string>> e;
  e.emplace_back("forward_evaluations", std::to_string(forward_evaluations.load()));
  for (const auto& [k, v] : values_) e.emplace_back(k, v);
  for (const auto& [k, v] : seeds_) e.emplace_back("seed." + k, seed_hex(v));
  for (const auto& [k, v] : stages_) e.emplace_back("seconds." + k, format_double(v));
  for (const auto& [k, v] : artifacts_) e.emplace_back("fnv1a." + k, v);
  io::write_key_values(path, e);
}

// ---------------------------------------------------------------------------
// Loading

params::PriorSpec load_prior(const PipelineConfig& cfg) {
  return cfg.prior_path.empty() ? params::PriorSpec::kerschbaum() : params::read_prior(cfg.prior_path);
}

model::EffectiveInputSeries load_input(const PipelineConfig& cfg, const io::ModelConfig& mc) {
  if (!cfg.effective_input_path.empty()) return io::read_effective_input(cfg.effective_input_path);
  config_error(cfg.forcing_path.empty(), "either a forcing file or an effective-input file is required");
  return model::preprocess_forcing(io::read_forcing(cfg.forcing_path), mc.forcing);
}

bayes::ForwardProblem load_problem(const PipelineConfig& cfg) {
  config_error(cfg.model_config_path.empty(), "a model config file is required");
  config_error(cfg.obs_path.empty(), "an observation file is required");
  const auto mc = io::read_model_config(cfg.model_config_path);
  auto input = load_input(cfg, mc);
  const auto obs = io::read_observations(cfg.obs_path);
  if (obs.dates != input.dates)
    throw Error(ErrorKind::InvalidInput, "observation dates (" + std::to_string(obs.dates.size()) +
                                             " rows) do not match the forcing dates (" +
                                             std::to_string(input.dates.size()) + " rows)");
  if (static_cast<int>(input.size()) <= mc.forcing.warmup_days)
    throw Error(ErrorKind::Config, "series is not longer than the warm-up period");
  Eigen::VectorXd d = Eigen::Map<const Eigen::VectorXd>(obs.q_m3d.data(), static_cast<Eigen::Index>(obs.q_m3d.size()));
  return bayes::ForwardProblem{std::move(input), mc.catchment, load_prior(cfg),
                               bayes::ObservationSet::make(std::move(d), cfg.noise, mc.forcing.warmup_days), mc.empty_stores};
}

// ---------------------------------------------------------------------------
// Subspace stage

SubspaceResult run_subspace(const bayes::ForwardProblem& fp, const PipelineConfig& cfg, RunLedger& ledger) {
  RunLedger::Timer timer(ledger, "subspace");
  const auto draw_seed = derive_seed(cfg.seed, Stage::GradientDraws);
  const auto boot_seed = derive_seed(cfg.seed, Stage::Bootstrap);
  ledger.record_seed("gradient_draws", draw_seed);
  ledger.record_seed("bootstrap", boot_seed);

  const Eigen::MatrixXd xs = params::sample_prior(cfg.n_gradients, draw_seed);
  auto counted = [&](const Eigen::VectorXd& x) {
    ledger.forward_evaluations.fetch_add(1, std::memory_order_relaxed);
    return fp.misfit(x);
  };
  auto sweep = subspace::gradient_sweep(xs, counted, cfg.fd_step, cfg.workers);

  SubspaceResult r;
  r.failed = sweep.failed;
  r.samples = std::move(sweep.samples);
  const Eigen::MatrixXd g = subspace::gradient_matrix(r.samples);
  r.decomposition = subspace::decompose(subspace::estimate_c_matrix(g), cfg.k);
  const auto bands = subspace::bootstrap_bands(g, cfg.bootstrap, boot_seed);
  r.decomposition.band_min = bands.min;
  r.decomposition.band_max = bands.max;
  r.sensitivities = subspace::global_sensitivities(r.decomposition.eigenvalues, r.decomposition.eigenvectors, cfg.k);
  ledger.record_value("gradient_samples", std::to_string(r.samples.size()));
  ledger.record_value("gradient_failures", std::to_string(r.failed));
  ledger.record_value("expected_gradient_evaluations",
                      std::to_string(cfg.n_gradients * subspace::evaluations_per_gradient(params::kDim)));
  return r;
}

void write_subspace(const std::string& dir, const SubspaceResult& r, RunLedger& ledger) {
  const auto& d = r.decomposition;
  const Eigen::Index n = d.dim();
  const auto& names = params::calibration_names();
  {
    io::CsvWriter w(join(dir, "eigenvalues.csv"), {"index", "eigenvalue", "band_min", "band_max"});
    for (Eigen::Index i = 0; i < n; ++i) {
      w.cell(std::to_string(i + 1)).cell(d.eigenvalues(i)).cell(d.band_min(i)).cell(d.band_max(i));
      w.end_row();
    }
  }
  {
    auto header = numbered("w_", n);
    header.insert(header.begin(), "coordinate");
    io::CsvWriter w(join(dir, "eigenvectors.csv"), header);
    for (Eigen::Index i = 0; i < n; ++i) {
      w.cell(names[static_cast<std::size_t>(i)]);
      for (Eigen::Index j = 0; j < n; ++j) w.cell(d.eigenvectors(i, j));
      w.end_row();
    }
  }
  {
    io::CsvWriter w(join(dir, "sensitivities.csv"), {"coordinate", "sensitivity"});
    for (Eigen::Index i = 0; i < n; ++i) {
      w.cell(names[static_cast<std::size_t>(i)]).cell(r.sensitivities(i));
      w.end_row();
    }
  }
  {
    auto header = names;
    header.emplace_back("misfit");
    for (const auto& g : prefixed("g_", names)) header.push_back(g);
    io::CsvWriter w(join(dir, "gradients.csv"), header);
    for (const auto& s : r.samples) {
      for (Eigen::Index i = 0; i < n; ++i) w.cell(s.x(i));
      w.cell(s.f);
      for (Eigen::Index i = 0; i < n; ++i) w.cell(s.g(i));
      w.end_row();
    }
  }
  for (const char* f : {"eigenvalues.csv", "eigenvectors.csv", "sensitivities.csv", "gradients.csv"})
    ledger.record_artifact(join(dir, f));
}

SubspaceResult read_subspace(const std::string& dir, int k) {
  const auto& names = params::calibration_names();
  SubspaceResult r;
  const auto ev = io::read_csv(join(dir, "eigenvalues.csv"));
  const auto vec = io::read_csv(join(dir, "eigenvectors.csv"));
  const auto grad = io::read_csv(join(dir, "gradients.csv"));
  auto& d = r.decomposition;
  const auto to_vec = [](const std::vector<double>& v) {
    return Eigen::VectorXd(Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size())));
  };
  d.eigenvalues = to_vec(ev.numbers("eigenvalue"));
  d.band_min = to_vec(ev.numbers("band_min"));
  d.band_max = to_vec(ev.numbers("band_max"));
  // eigenvectors.csv has one row per coordinate, so the columns read back transposed
  d.eigenvectors = io::read_columns(vec, numbered("w_", params::kDim)).transpose();
  if (d.eigenvalues.size() != params::kDim || d.eigenvectors.rows() != params::kDim)
    throw Error(ErrorKind::InvalidInput, dir + ": subspace artifacts must describe 21 coordinates");
  if (k <= 0 || k >= params::kDim) throw Error(ErrorKind::Config, "subspace dimension k must satisfy 0 < k < 21");
  d.k = k;
  r.sensitivities = subspace::global_sensitivities(d.eigenvalues, d.eigenvectors, k);

  const Eigen::MatrixXd xs = io::read_columns(grad, names);
  const Eigen::MatrixXd gs = io::read_columns(grad, prefixed("g_", names));
  const auto fs = grad.numbers("misfit");
  for (Eigen::Index j = 0; j < xs.cols(); ++j) r.samples.push_back({xs.col(j), fs[static_cast<std::size_t>(j)], gs.col(j)});
  return r;
}

// ---------------------------------------------------------------------------
// Inversion stage

InvertResult run_invert(const bayes::ForwardProblem& fp, const SubspaceResult& sub, const PipelineConfig& cfg,
                        RunLedger& ledger) {
  cfg.validate();
  InvertResult r;
  const auto& w = sub.decomposition;
  const Eigen::MatrixXd w1 = w.W1();

  // Response surface on the gradient-sweep centers plus optional extra draws.
  {
    RunLedger::Timer timer(ledger, "surrogate");
    const std::size_t n_grad = sub.samples.size();
    Eigen::MatrixXd xs(params::kDim, static_cast<Eigen::Index>(n_grad + cfg.surrogate_extra));
    Eigen::VectorXd fs(xs.cols());
    for (std::size_t j = 0; j < n_grad; ++j) {
      xs.col(static_cast<Eigen::Index>(j)) = sub.samples[j].x;
      fs(static_cast<Eigen::Index>(j)) = sub.samples[j].f;
    }
    if (cfg.surrogate_extra > 0) {
      const auto seed = derive_seed(cfg.seed, Stage::SurrogateDraws);
      ledger.record_seed("surrogate_draws", seed);
      const Eigen::MatrixXd extra = params::sample_prior(cfg.surrogate_extra, seed);
      xs.rightCols(extra.cols()) = extra;
      parallel_for(cfg.surrogate_extra, cfg.workers, [&](std::size_t j) {
        ledger.forward_evaluations.fetch_add(1, std::memory_order_relaxed);
        fs(static_cast<Eigen::Index>(n_grad + j)) = fp.misfit(extra.col(static_cast<Eigen::Index>(j)));
      });
      if (!fs.allFinite()) throw Error(ErrorKind::Numerical, "surrogate training misfit is not finite");
    }
    r.surrogate = subspace::fit_response_surface(xs, fs, w1, cfg.degree);
  }

  // Marginal prior and active-variable chain.
  {
    RunLedger::Timer timer(ledger, "active_chain");
    const auto kde_seed = derive_seed(cfg.seed, Stage::KdeDraws);
    const auto chain_seed = derive_seed(cfg.seed, Stage::ActiveChain);
    ledger.record_seed("kde_draws", kde_seed);
    ledger.record_seed("active_chain", chain_seed);
    const auto kde = bayes::estimate_marginal_prior(w1, cfg.kde_samples, kde_seed);

    std::size_t best = 0;
    for (std::size_t j = 1; j < sub.samples.size(); ++j)
      if (sub.samples[j].f < sub.samples[best].f) best = j;
    const Eigen::VectorXd start = w1.transpose() * sub.samples[best].x;

    bayes::MhOptions opt;
    opt.proposal_std = cfg.proposal_std;
    opt.steps = cfg.steps;
    opt.burn_in = cfg.burn_in;
    opt.auto_tune = cfg.auto_tune;
    opt.seed = chain_seed;
    const auto& surrogate = r.surrogate;
    r.chain = bayes::mh_active([&](const Eigen::Ref<const Eigen::VectorXd>& y) { return surrogate.evaluate(y); },
                               [&](const Eigen::Ref<const Eigen::VectorXd>& y) { return kde.log_density(y); }, start,
                               opt);
  }

  // Thin to the effective sample size, then fill in the inactive variables.
  {
    RunLedger::Timer timer(ledger, "inactive");
    const Eigen::MatrixXd kept = r.chain.kept();
    r.ess = bayes::effective_sample_size(kept);
    const auto target = std::clamp<std::size_t>(static_cast<std::size_t>(std::floor(r.ess.min)), 1,
                                                static_cast<std::size_t>(kept.cols()));
    auto& ens = r.ensemble;
    ens.ess = r.ess.min;
    ens.y = bayes::thin(kept, target, &ens.stride);

    const auto inactive_root = derive_seed(cfg.seed, Stage::InactiveChains);
    ledger.record_seed("inactive_chains", inactive_root);
    bayes::InactiveOptions iopt;
    iopt.burn_in = cfg.inactive_burn_in;
    iopt.thinning = cfg.inactive_thinning;
    std::vector<std::optional<Eigen::MatrixXd>> zs(target);
    parallel_for(target, cfg.workers, [&](std::size_t i) {
      try {
        zs[i] = bayes::sample_inactive(ens.y.col(static_cast<Eigen::Index>(i)), w, cfg.inactive_per_active,
                                       derive_seed(cfg.seed, Stage::InactiveChains, i), iopt);
      } catch (const Error& e) {
        if (e.kind() != ErrorKind::Domain) throw;
      }
    });
    std::size_t count = 0;
    for (const auto& z : zs) count += z ? static_cast<std::size_t>(z->cols()) : 0;
    ens.x.resize(params::kDim, static_cast<Eigen::Index>(count));
    ens.z.resize(params::kDim - w.k, static_cast<Eigen::Index>(count));
    Eigen::MatrixXd ys(w.k, static_cast<Eigen::Index>(count));
    Eigen::Index c = 0;
    for (std::size_t i = 0; i < target; ++i) {
      if (!zs[i]) {
        ++ens.infeasible;
        continue;
      }
      const Eigen::VectorXd y = ens.y.col(static_cast<Eigen::Index>(i));
      for (Eigen::Index j = 0; j < zs[i]->cols(); ++j, ++c) {
        ens.x.col(c) = bayes::lift(y, zs[i]->col(j), w);
        ens.z.col(c) = zs[i]->col(j);
        ys.col(c) = y;
      }
    }
    ens.y = std::move(ys);
    if (ens.size() == 0) throw Error(ErrorKind::Numerical, "posterior ensemble is empty: every active state was infeasible");
  }
  return r;
}

void write_invert(const std::string& dir, const bayes::ForwardProblem& fp, const SubspaceResult& sub,
                  const InvertResult& r, RunLedger& ledger) {
  const auto& ens = r.ensemble;
  const auto& xnames = params::calibration_names();
  const auto& pnames = params::physical_names();
  const Eigen::Index k = ens.y.rows();
  Eigen::MatrixXd phys(params::kDim, ens.x.cols());
  for (Eigen::Index j = 0; j < ens.x.cols(); ++j) phys.col(j) = params::flatten(params::to_physical(ens.x.col(j), fp.prior));

  const std::string ens_path = join(dir, "posterior.csv");
  {
    std::ofstream(ens_path, std::ios::binary) << "# days=" << fp.input.size() << '\n';
    std::vector<std::string> header = {"sample"};
    header.insert(header.end(), pnames.begin(), pnames.end());
    for (const auto& n : numbered("y_", k)) header.push_back(n);
    header.insert(header.end(), xnames.begin(), xnames.end());
    for (const auto& n : numbered("z_", ens.z.rows())) header.push_back(n);
    std::ofstream out(ens_path, std::ios::binary | std::ios::app);
    for (std::size_t i = 0; i < header.size(); ++i) out << (i ? "," : "") << header[i];
    out << '\n';
    for (Eigen::Index j = 0; j < ens.x.cols(); ++j) {
      out << j;
      for (Eigen::Index i = 0; i < phys.rows(); ++i) out << ',' << format_double(phys(i, j));
      for (Eigen::Index i = 0; i < k; ++i) out << ',' << format_double(ens.y(i, j));
      for (Eigen::Index i = 0; i < ens.x.rows(); ++i) out << ',' << format_double(ens.x(i, j));
      for (Eigen::Index i = 0; i < ens.z.rows(); ++i) out << ',' << format_double(ens.z(i, j));
      out << '\n';
    }
  }

  const std::string chain_path = join(dir, "active_chain.csv");
  {
    const Eigen::MatrixXd kept = r.chain.kept();
    const auto n = std::max<std::size_t>(1, static_cast<std::size_t>(kept.cols()) / std::max<std::size_t>(1, ens.stride));
    io::write_columns(chain_path, numbered("y_", k), bayes::thin(kept, n));
  }

  const std::string surrogate_path = join(dir, "surrogate.csv");
  {
    auto header = numbered("p_", r.surrogate.k);
    header.emplace_back("coefficient");
    io::CsvWriter w(surrogate_path, header);
    for (std::size_t c = 0; c < r.surrogate.size(); ++c) {
      for (int p : r.surrogate.exponents[c]) w.cell(std::to_string(p));
      w.cell(r.surrogate.coefficients(static_cast<Eigen::Index>(c)));
      w.end_row();
    }
  }

  std::vector<std::pair<std::string, std::string>> diag = {
      {"days", std::to_string(fp.input.size())},
      {"acceptance_rate", format_double(r.chain.acceptance_rate())},
      {"proposal_std", format_double(r.chain.proposal_std)},
      {"chain_steps", std::to_string(r.chain.size())},
      {"burn_in", std::to_string(r.chain.burn_in)},
      {"ess_min", format_double(r.ess.min)},
      {"thinning_stride", std::to_string(ens.stride)},
      {"surrogate_coefficients", std::to_string(r.surrogate.size())},
      {"r2_train", format_double(r.surrogate.r2_train)},
      {"r2_test", format_double(r.surrogate.r2_test)},
      {"ensemble_size", std::to_string(ens.size())},
      {"infeasible_active_states", std::to_string(ens.infeasible)},
  };
  for (Eigen::Index i = 0; i < k; ++i) diag.emplace_back("ess_y_" + std::to_string(i + 1), format_double(r.ess.per_component(i)));
  auto moments = [&](const Eigen::MatrixXd& m, const std::vector<std::string>& names) {
    const Eigen::VectorXd mean = m.rowwise().mean();
    const Eigen::MatrixXd centered = m.colwise() - mean;
    const double denom = std::max<double>(1, static_cast<double>(m.cols()) - 1);
    const Eigen::VectorXd sd = (centered.rowwise().squaredNorm() / denom).cwiseSqrt();
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
      diag.emplace_back("mean." + names[static_cast<std::size_t>(i)], format_double(mean(i)));
      diag.emplace_back("std." + names[static_cast<std::size_t>(i)], format_double(sd(i)));
    }
  };
  moments(ens.x, xnames);
  moments(phys, pnames);
  const auto& d = sub.decomposition;
  for (Eigen::Index i = 0; i < d.eigenvalues.size(); ++i) {
    const auto n = std::to_string(i + 1);
    diag.emplace_back("eigenvalue." + n, format_double(d.eigenvalues(i)));
    if (d.band_min.size() == d.eigenvalues.size()) {
      diag.emplace_back("eigenvalue_band_min." + n, format_double(d.band_min(i)));
      diag.emplace_back("eigenvalue_band_max." + n, format_double(d.band_max(i)));
    }
  }
  const std::string diag_path = join(dir, "diagnostics.txt");
  io::write_key_values(diag_path, diag);
  for (const auto& p : {ens_path, chain_path, surrogate_path, diag_path}) ledger.record_artifact(p);
}

Eigen::MatrixXd read_ensemble(const std::string& path, std::size_t expected_days) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::InvalidInput, "cannot open " + path);
  std::string first;
  std::getline(in, first);
  const std::string tag = "# days=";
  if (first.rfind(tag, 0) == 0) {
    const auto days = std::stoull(first.substr(tag.size()));
    if (days != expected_days)
      throw Error(ErrorKind::InvalidInput, path + ": ensemble was built on " + std::to_string(days) +
                                               " days but the forcing has " + std::to_string(expected_days));
  }
  const auto table = io::read_csv(path);
  if (table.rows.empty()) throw Error(ErrorKind::InvalidInput, path + ": ensemble is empty");
  return io::read_columns(table, params::calibration_names());
}

// ---------------------------------------------------------------------------
// Push-forward

bayes::PushForwardBands run_pushforward(const bayes::ForwardProblem& fp, const Eigen::MatrixXd& xs,
                                        const PipelineConfig& cfg, RunLedger& ledger) {
  RunLedger::Timer timer(ledger, "pushforward");
  return bayes::push_forward(
      xs,
      [&](const Eigen::VectorXd& x) {
        ledger.forward_evaluations.fetch_add(1, std::memory_order_relaxed);
        return fp.discharge(x).total_m3d;
      },
      cfg.band_lo, cfg.band_hi, cfg.workers);
}

void write_bands(const std::string& path, const bayes::ForwardProblem& fp, const bayes::PushForwardBands& b,
                 const std::vector<model::Date>& dates) {
  io::CsvWriter w(path, {"date", "obs", "lo95", "hi95", "post_median", "post_lo", "post_hi", "post_mean"});
  for (std::size_t t = 0; t < dates.size(); ++t) {
    const auto i = static_cast<Eigen::Index>(t);
    const double d = fp.obs.d(i), sd = std::sqrt(fp.obs.gamma_diag(i));
    w.cell(io::format_date(dates[t])).cell(d).cell(std::max(0.0, d - 1.96 * sd)).cell(d + 1.96 * sd);
    w.cell(b.median(i)).cell(b.lo(i)).cell(b.hi(i)).cell(b.mean(i));
    w.end_row();
  }
}

// ---------------------------------------------------------------------------
// Synthetic twin

model::ForcingSeries generate_forcing(int years, model::Date start, std::uint64_t seed) {
  using namespace std::chrono;
  Rng rng(seed);
  std::normal_distribution<double> temp_noise(0.0, 2.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::exponential_distribution<double> wet_amount(1.0 / 7.0);
  std::exponential_distribution<double> storm_amount(1.0 / 35.0);
  const auto end = sys_days{year_month_day{start}.year() / year_month_day{start}.month() / year_month_day{start}.day() +
                            std::chrono::years{years}};
  model::ForcingSeries f;
  for (auto d = start; d < end; d += days{1}) {
    const double doy = static_cast<double>((d - sys_days{year_month_day{d}.year() / January / 1}).count());
    const double season = std::sin(2 * std::numbers::pi * (doy - 110.0) / 365.25);
    f.dates.push_back(d);
    f.temp_c.push_back(8.0 + 9.0 * season + temp_noise(rng));
    // Wetter summers; occasional convective or frontal storms.
    const double p_wet = 0.42 + 0.08 * season;
    double p = unit(rng) < p_wet ? wet_amount(rng) : 0.0;
    if (unit(rng) < 0.03 + 0.015 * season) p += storm_amount(rng);
    f.precip_mm.push_back(p);
  }
  return f;
}

SyntheticResult run_synthetic(const PipelineConfig& cfg) {
  config_error(!(cfg.noise >= 0), "noise level must be non-negative");
  config_error(cfg.years <= 0, "synthetic forcing length must be positive");
  config_error(!(cfg.truth_halfwidth > 0 && cfg.truth_halfwidth <= 1), "truth half-width must lie in (0, 1]");
  SyntheticResult r;
  const auto root = derive_seed(cfg.seed, Stage::Synthetic);
  r.forcing = generate_forcing(cfg.years, model::Date{std::chrono::year{2006} / 1 / 1}, derive_seed(root, Stage::Synthetic, 1));
  r.model_config.catchment = model::CatchmentMeta::synthetic_default();
  r.model_config.forcing.pet_method = model::PetMethod::Thornthwaite;
  const auto prior = load_prior(cfg);

  Rng rng(derive_seed(root, Stage::Synthetic, 2));
  std::uniform_real_distribution<double> truth(-cfg.truth_halfwidth, cfg.truth_halfwidth);
  r.truth_x.resize(params::kDim);
  for (Eigen::Index i = 0; i < params::kDim; ++i) r.truth_x(i) = truth(rng);

  const auto eff = model::preprocess_forcing(r.forcing, r.model_config.forcing);
  const auto p = params::to_physical(r.truth_x, prior);
  // Start the baseflow reservoir near its long-run level: half the mean
  // catchment recharge leaves as baseflow.
  double mean_source = 0;
  for (int i = 0; i < model::kHydrotopes; ++i) {
    double s = 0;
    for (double v : eff.source_mm[i]) s += v;
    mean_source += s / static_cast<double>(eff.size()) * r.model_config.catchment.area_m2[i];
  }
  const double q0 = 0.5 * mean_source * model::kModelUnitToM3;
  // The inversion rebuilds the baseflow level from the first observation, so
  // the truth run starts from that same reconstruction.
  const auto& meta = r.model_config.catchment;
  const double d0 = model::simulate(p, meta, eff, model::initial_state(p, meta, q0)).total_m3d.front();
  r.noiseless = model::simulate(p, meta, eff, model::initial_state(p, meta, d0), true);

  std::normal_distribution<double> noise(0.0, 1.0);
  r.obs.dates = r.noiseless.dates;
  r.obs.q_m3d.resize(r.noiseless.size());
  for (std::size_t t = 0; t < r.noiseless.size(); ++t) {
    const double q = r.noiseless.total_m3d[t];
    r.obs.q_m3d[t] = t == 0 ? d0 : std::max(0.0, q * (1.0 + cfg.noise * noise(rng)));
  }
  return r;
}

// ---------------------------------------------------------------------------
// Commands

namespace {

void prepare_out_dir(const PipelineConfig& cfg) { fs::create_directories(cfg.out_dir); }

void finish(const PipelineConfig& cfg, const RunLedger& ledger) { ledger.write(join(cfg.out_dir, "ledger.txt")); }

Eigen::VectorXd read_params(const std::string& path, const params::PriorSpec& prior) {
  const auto t = io::read_csv(path);
  if (t.rows.empty()) throw Error(ErrorKind::InvalidInput, path + ": no parameter row");
  const auto& xn = params::calibration_names();
  if (t.has_column(xn.front())) return io::read_columns(t, xn).col(0);
  const Eigen::VectorXd phys = io::read_columns(t, params::physical_names()).col(0);
  const auto p = params::unflatten(phys);
  if (const auto v = params::check_constraints(p); !v.empty())
    throw Error(ErrorKind::InvalidParameter, path + ": violated ordering " + v.front());
  return params::to_calibration(p, prior);
}

}  // namespace

void cmd_simulate(const PipelineConfig& cfg) {
  config_error(cfg.model_config_path.empty(), "a model config file is required");
  config_error(cfg.params_path.empty(), "a parameter file is required");
  prepare_out_dir(cfg);
  RunLedger ledger;
  const auto mc = io::read_model_config(cfg.model_config_path);
  const auto input = load_input(cfg, mc);
  const auto prior = load_prior(cfg);
  const auto x = read_params(cfg.params_path, prior);
  const auto p = params::to_physical(x, prior);

  std::optional<io::Observations> obs;
  if (!cfg.obs_path.empty()) {
    obs = io::read_observations(cfg.obs_path);
    if (obs->dates != input.dates) throw Error(ErrorKind::InvalidInput, "observation dates do not match the forcing dates");
  }
  const auto init = mc.empty_stores ? model::ModelState{}
                                    : model::initial_state(p, mc.catchment, obs && !obs->q_m3d.empty()
                                                                                ? std::optional<double>(obs->q_m3d.front())
                                                                                : std::nullopt);
  const auto q = model::simulate(p, mc.catchment, input, init, true);
  ledger.forward_evaluations = 1;
  const auto path = join(cfg.out_dir, "discharge.csv");
  io::write_discharge(path, q);
  ledger.record_artifact(path);
  if (obs) {
    const auto skip = static_cast<std::size_t>(std::min<int>(mc.forcing.warmup_days, static_cast<int>(q.size()) - 1));
    const double e = model::nse(std::span(q.total_m3d).subspan(skip), std::span(obs->q_m3d).subspan(skip));
    std::cout << "NSE = " << format_double(e) << '\n';
    ledger.record_value("nse", format_double(e));
  }
  finish(cfg, ledger);
}

void cmd_subspace(const PipelineConfig& cfg) {
  cfg.validate();
  prepare_out_dir(cfg);
  RunLedger ledger;
  const auto fp = load_problem(cfg);
  const auto r = run_subspace(fp, cfg, ledger);
  write_subspace(cfg.out_dir, r, ledger);
  std::cout << "forward evaluations: " << ledger.forward_evaluations.load() << '\n';
  finish(cfg, ledger);
}

void cmd_invert(const PipelineConfig& cfg) {
  cfg.validate();
  prepare_out_dir(cfg);
  RunLedger ledger;
  const auto fp = load_problem(cfg);
  SubspaceResult sub;
  if (!cfg.subspace_dir.empty()) {
    sub = read_subspace(cfg.subspace_dir, cfg.k);
  } else {
    sub = run_subspace(fp, cfg, ledger);
    write_subspace(cfg.out_dir, sub, ledger);
  }
  const auto r = run_invert(fp, sub, cfg, ledger);
  write_invert(cfg.out_dir, fp, sub, r, ledger);
  std::cout << "acceptance rate " << format_double(r.chain.acceptance_rate()) << ", ESS " << format_double(r.ess.min)
            << ", r2 " << format_double(r.surrogate.r2_test) << ", ensemble " << r.ensemble.size() << '\n';
  finish(cfg, ledger);
}

void cmd_pushforward(const PipelineConfig& cfg) {
  config_error(cfg.ensemble_path.empty(), "an ensemble file is required");
  prepare_out_dir(cfg);
  RunLedger ledger;
  const auto fp = load_problem(cfg);
  const auto xs = read_ensemble(cfg.ensemble_path, fp.input.size());
  const auto bands = run_pushforward(fp, xs, cfg, ledger);
  const auto path = join(cfg.out_dir, "bands.csv");
  write_bands(path, fp, bands, fp.input.dates);
  ledger.record_artifact(path);
  ledger.record_value("ensemble_used", std::to_string(bands.used));
  ledger.record_value("ensemble_failed", std::to_string(bands.failed));
  finish(cfg, ledger);
}

void cmd_synthetic(const PipelineConfig& cfg) {
  prepare_out_dir(cfg);
  RunLedger ledger;
  ledger.record_seed("synthetic", derive_seed(cfg.seed, Stage::Synthetic));
  const auto r = run_synthetic(cfg);
  const auto prior = load_prior(cfg);
  const std::vector<std::string> files = {"forcing.csv", "obs.csv", "truth.csv", "truth_discharge.csv", "model.cfg",
                                          "prior.txt"};
  io::write_forcing(join(cfg.out_dir, files[0]), r.forcing);
  io::write_observations(join(cfg.out_dir, files[1]), r.obs);
  {
    auto header = params::calibration_names();
    const auto& pn = params::physical_names();
    header.insert(header.end(), pn.begin(), pn.end());
    io::CsvWriter w(join(cfg.out_dir, files[2]), header);
    for (Eigen::Index i = 0; i < params::kDim; ++i) w.cell(r.truth_x(i));
    const Eigen::VectorXd phys = params::flatten(params::to_physical(r.truth_x, prior));
    for (Eigen::Index i = 0; i < params::kDim; ++i) w.cell(phys(i));
    w.end_row();
  }
  io::write_discharge(join(cfg.out_dir, files[3]), r.noiseless);
  io::write_model_config(join(cfg.out_dir, files[4]), r.model_config);
  params::write_prior(join(cfg.out_dir, files[5]), prior);
  ledger.forward_evaluations = 1;
  for (const auto& f : files) ledger.record_artifact(join(cfg.out_dir, f));
  finish(cfg, ledger);
}

}  // namespace karst::pipeline
