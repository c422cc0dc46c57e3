#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "karst/error.hpp"
#include "karst/io.hpp"
#include "karst/pipeline.hpp"

using namespace karst;
using namespace karst::pipeline;
namespace fs = std::filesystem;

namespace {

std::string scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("karst_pipeline_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir.string();
}

std::string scratch_path(const std::string& name) { return (fs::temp_directory_path() / ("karst_pipeline_" + name)).string(); }

std::string in(const std::string& dir, const std::string& file) { return (fs::path(dir) / file).string(); }

// One-year synthetic twin, shared by the tests below.
const std::string& twin_dir() {
  static const std::string dir = [] {
    PipelineConfig c;
    c.out_dir = scratch("twin");
    c.years = 1;
    c.seed = 3;
    cmd_synthetic(c);
    return c.out_dir;
  }();
  return dir;
}

PipelineConfig small_config(const std::string& out) {
  PipelineConfig c;
  c.forcing_path = in(twin_dir(), "forcing.csv");
  c.obs_path = in(twin_dir(), "obs.csv");
  c.model_config_path = in(twin_dir(), "model.cfg");
  c.out_dir = out;
  c.n_gradients = 40;
  c.bootstrap = 100;
  c.k = 2;
  c.degree = 2;
  c.steps = 4000;
  c.burn_in = 1000;
  c.kde_samples = 10000;
  c.inactive_burn_in = 50;
  c.inactive_thinning = 2;
  return c;
}

io::KeyValues ledger_of(const std::string& dir) { return io::read_key_values(in(dir, "ledger.txt")); }

ErrorKind kind_of(auto&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("expected an error");
  return ErrorKind::Numerical;
}

int run_cli(const std::string& args) {
  const int status = std::system((std::string(KARST_CLI) + " " + args + " >/dev/null 2>&1").c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST_SUITE("synthetic twin") {
  TEST_CASE("noise-free observations equal the simulation and give zero misfit") {
    PipelineConfig c;
    c.years = 1;
    c.seed = 5;
    c.noise = 0;
    const auto r = run_synthetic(c);
    // day 0 carries the value the baseflow level was rebuilt from
    CHECK(r.obs.q_m3d[0] == doctest::Approx(r.noiseless.total_m3d[0]).epsilon(1e-12));
    CHECK(std::equal(r.obs.q_m3d.begin() + 1, r.obs.q_m3d.end(), r.noiseless.total_m3d.begin() + 1));
    Eigen::VectorXd d = Eigen::Map<const Eigen::VectorXd>(r.obs.q_m3d.data(), static_cast<Eigen::Index>(r.obs.q_m3d.size()));
    const bayes::ForwardProblem fp{model::preprocess_forcing(r.forcing, r.model_config.forcing), r.model_config.catchment,
                                   params::PriorSpec::kerschbaum(),
                                   bayes::ObservationSet::make(d, 0.05, r.model_config.forcing.warmup_days)};
    CHECK(fp.misfit(r.truth_x) == 0.0);
    CHECK(r.truth_x.cwiseAbs().maxCoeff() <= 0.5);
  }

  TEST_CASE("noise has the requested relative size") {
    PipelineConfig c;
    c.years = 3;
    c.seed = 8;
    c.noise = 0.05;
    const auto r = run_synthetic(c);
    std::vector<double> rel;
    for (std::size_t t = 1; t < r.obs.q_m3d.size(); ++t) rel.push_back(r.obs.q_m3d[t] / r.noiseless.total_m3d[t] - 1);
    double mean = 0, sq = 0;
    for (double v : rel) mean += v;
    mean /= static_cast<double>(rel.size());
    for (double v : rel) sq += (v - mean) * (v - mean);
    const double sd = std::sqrt(sq / static_cast<double>(rel.size() - 1));
    CHECK(sd == doctest::Approx(0.05).epsilon(0.05));
  }

  TEST_CASE("a fixed seed reproduces every file") {
    PipelineConfig c;
    c.years = 1;
    c.seed = 3;
    c.out_dir = scratch("twin_repeat");
    cmd_synthetic(c);
    for (const char* f : {"forcing.csv", "obs.csv", "truth.csv", "truth_discharge.csv", "model.cfg", "prior.txt"})
      CHECK(io::file_checksum(in(c.out_dir, f)) == io::file_checksum(in(twin_dir(), f)));
    c.seed = 4;
    c.out_dir = scratch("twin_other");
    cmd_synthetic(c);
    CHECK(io::file_checksum(in(c.out_dir, "obs.csv")) != io::file_checksum(in(twin_dir(), "obs.csv")));
  }

  TEST_CASE("forcing generator") {
    const auto f = generate_forcing(2, model::Date{std::chrono::year{2006} / 1 / 1}, 1);
    CHECK(f.size() == 730);
    f.validate();
    double summer = 0, winter = 0;
    for (std::size_t t = 0; t < 31; ++t) {
      winter += f.temp_c[t];
      summer += f.temp_c[t + 181];
    }
    CHECK(summer > winter + 31 * 10);
  }
}

TEST_SUITE("stages") {
  TEST_CASE("subspace run counts N(2n+1) forward evaluations") {
    auto c = small_config(scratch("subspace"));
    cmd_subspace(c);
    const auto l = ledger_of(c.out_dir);
    CHECK(l.at("forward_evaluations") == std::to_string(40 * 43));
    CHECK(l.at("expected_gradient_evaluations") == std::to_string(40 * 43));
    for (const char* f : {"eigenvalues.csv", "eigenvectors.csv", "sensitivities.csv", "gradients.csv"})
      CHECK(fs::exists(in(c.out_dir, f)));

    const auto r = read_subspace(c.out_dir, 2);
    CHECK(r.samples.size() == 40);
    const Eigen::MatrixXd w = r.decomposition.eigenvectors;
    CHECK((w.transpose() * w - Eigen::MatrixXd::Identity(21, 21)).cwiseAbs().maxCoeff() < 1e-12);
    CHECK(r.sensitivities.maxCoeff() == 1.0);
  }

  TEST_CASE("inversion is reproducible and reuses subspace artifacts exactly") {
    const auto sub_dir = scratch("inv_sub");
    auto c = small_config(sub_dir);
    cmd_subspace(c);

    c.out_dir = scratch("inv_all_a");
    cmd_invert(c);
    c.out_dir = scratch("inv_all_b");
    cmd_invert(c);
    c.out_dir = scratch("inv_reuse");
    c.subspace_dir = sub_dir;
    cmd_invert(c);

    for (const char* f : {"posterior.csv", "active_chain.csv", "surrogate.csv", "diagnostics.txt"}) {
      const auto a = io::file_checksum(in(scratch_path("inv_all_a"), f));
      CHECK(a == io::file_checksum(in(scratch_path("inv_all_b"), f)));
      CHECK(a == io::file_checksum(in(scratch_path("inv_reuse"), f)));
    }
    const auto diag = io::read_key_values(in(c.out_dir, "diagnostics.txt"));
    CHECK(diag.count("eigenvalue.21"));
    CHECK(diag.at("surrogate_coefficients") == "6");
    CHECK(std::stoul(diag.at("ensemble_size")) >= 1);
    CHECK(ledger_of(c.out_dir).at("forward_evaluations") == "0");
  }

  TEST_CASE("huge noise recovers the prior") {
    auto c = small_config(scratch("prior_only"));
    c.noise = 1e6;
    c.steps = 60000;
    c.burn_in = 5000;
    c.kde_samples = 20000;
    c.inactive_per_active = 4;
    c.inactive_burn_in = 500;
    c.inactive_thinning = 10;
    RunLedger ledger;
    const auto fp = load_problem(c);
    const auto sub = run_subspace(fp, c, ledger);
    const auto r = run_invert(fp, sub, c, ledger);
    const Eigen::MatrixXd& x = r.ensemble.x;
    REQUIRE(x.cols() >= 2000);
    const Eigen::VectorXd mean = x.rowwise().mean();
    const Eigen::VectorXd sd = ((x.colwise() - mean).rowwise().squaredNorm() / static_cast<double>(x.cols() - 1)).cwiseSqrt();
    for (Eigen::Index i = 0; i < 21; ++i) {
      CAPTURE(i);
      CAPTURE(sd(i));
      CHECK(std::abs(mean(i)) < 0.02);
      CHECK(std::abs(sd(i) - 1 / std::sqrt(3.0)) < 0.02);
    }
  }

  TEST_CASE("a misfit driven only by the interflow rates ranks them first") {
    const auto prior = params::PriorSpec::kerschbaum();
    const auto f = [&](const Eigen::VectorXd& x) {
      const auto p = params::to_physical(x, prior);
      double s = 0;
      for (int i = 0; i < 3; ++i) s += std::pow(std::log(p.hyd[i].k_is) - 2.0, 2);
      return s;
    };
    const auto sweep = subspace::gradient_sweep(params::sample_prior(300, 12), f, 1e-4, 1);
    const Eigen::MatrixXd g = subspace::gradient_matrix(sweep.samples);
    const auto d = subspace::decompose(subspace::estimate_c_matrix(g), 3);
    const Eigen::VectorXd s = subspace::global_sensitivities(d.eigenvalues, d.eigenvectors, 3);
    std::vector<int> order(21);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int a, int b) { return s(a) > s(b); });
    std::vector<int> top(order.begin(), order.begin() + 3);
    std::sort(top.begin(), top.end());
    CHECK(top == std::vector<int>{4, 11, 18});
  }

  TEST_CASE("configuration errors") {
    auto c = small_config(scratch("bad_config"));
    c.burn_in = c.steps;
    CHECK(kind_of([&] { cmd_invert(c); }) == ErrorKind::Config);
    c = small_config(scratch("bad_k"));
    c.k = 21;
    CHECK(kind_of([&] { c.validate(); }) == ErrorKind::Config);
    c = small_config(scratch("bad_noise"));
    c.noise = 0;
    CHECK(kind_of([&] { cmd_subspace(c); }) == ErrorKind::Config);
    c = small_config(scratch("no_obs"));
    c.obs_path.clear();
    CHECK(kind_of([&] { load_problem(c); }) == ErrorKind::Config);
  }
}

TEST_SUITE("push-forward") {
  std::string write_ensemble(const std::string& dir, const Eigen::MatrixXd& xs, std::size_t days) {
    const auto path = in(dir, "posterior.csv");
    std::ofstream(path) << "# days=" << days << '\n';
    {
      std::ofstream out(path, std::ios::app);
      const auto& n = params::calibration_names();
      for (std::size_t i = 0; i < n.size(); ++i) out << (i ? "," : "") << n[i];
      out << '\n';
      for (Eigen::Index j = 0; j < xs.cols(); ++j) {
        for (Eigen::Index i = 0; i < xs.rows(); ++i) out << (i ? "," : "") << io::format_double(xs(i, j));
        out << '\n';
      }
    }
    return path;
  }

  TEST_CASE("single and repeated samples give degenerate bands") {
    const auto dir = scratch("bands");
    auto c = small_config(dir);
    const auto fp = load_problem(c);
    const Eigen::VectorXd x = Eigen::VectorXd::Constant(21, 0.1);
    for (int copies : {1, 5}) {
      c.ensemble_path = write_ensemble(dir, x.replicate(1, copies), fp.input.size());
      cmd_pushforward(c);
      const auto t = io::read_csv(in(dir, "bands.csv"));
      const auto lo = t.numbers("post_lo"), hi = t.numbers("post_hi"), med = t.numbers("post_median");
      CHECK(lo == hi);
      CHECK(med == lo);
      const auto q = fp.discharge(x).total_m3d;
      CHECK(med == q);
      const auto obs = t.numbers("obs"), lo95 = t.numbers("lo95");
      for (std::size_t i = 0; i < obs.size(); ++i) CHECK(lo95[i] <= obs[i]);
      CHECK(ledger_of(dir).at("forward_evaluations") == std::to_string(copies));
    }
  }

  TEST_CASE("ensemble built on a different record is rejected") {
    const auto dir = scratch("bands_mismatch");
    auto c = small_config(dir);
    c.ensemble_path = write_ensemble(dir, Eigen::VectorXd::Zero(21), 10);
    CHECK(kind_of([&] { cmd_pushforward(c); }) == ErrorKind::InvalidInput);
  }
}

TEST_SUITE("simulate") {
  TEST_CASE("zero forcing gives an all-zero discharge file") {
    const auto dir = scratch("zero");
    {
      std::ofstream f(in(dir, "input.csv"));
      f << "date,s1_mm,s2_mm,s3_mm\n";
      for (int d = 1; d <= 20; ++d) f << "2010-03-" << (d < 10 ? "0" : "") << d << ",0,0,0\n";
    }
    {
      std::ofstream p(in(dir, "params.csv"));
      const auto& n = params::calibration_names();
      for (std::size_t i = 0; i < n.size(); ++i) p << (i ? "," : "") << n[i];
      p << '\n';
      for (std::size_t i = 0; i < n.size(); ++i) p << (i ? "," : "") << "0";
      p << '\n';
    }
    {
      auto mc = io::read_model_config(in(twin_dir(), "model.cfg"));
      mc.empty_stores = true;
      io::write_model_config(in(dir, "model.cfg"), mc);
    }
    PipelineConfig c;
    c.effective_input_path = in(dir, "input.csv");
    c.params_path = in(dir, "params.csv");
    c.model_config_path = in(dir, "model.cfg");
    c.out_dir = dir;
    cmd_simulate(c);
    const auto t = io::read_csv(in(dir, "discharge.csv"));
    REQUIRE(t.rows.size() == 20);
    for (std::size_t r = 0; r < t.rows.size(); ++r)
      for (std::size_t col = 1; col < t.header.size(); ++col) CHECK(t.number(r, col) == 0.0);
  }

  TEST_CASE("physical parameter rows reproduce the truth discharge") {
    const auto dir = scratch("truth_sim");
    PipelineConfig c;
    c.forcing_path = in(twin_dir(), "forcing.csv");
    c.obs_path = in(twin_dir(), "obs.csv");
    c.model_config_path = in(twin_dir(), "model.cfg");
    c.params_path = in(twin_dir(), "truth.csv");
    c.out_dir = dir;
    cmd_simulate(c);
    const auto a = io::read_csv(in(dir, "discharge.csv")).numbers("q_total_m3d");
    const auto b = io::read_csv(in(twin_dir(), "truth_discharge.csv")).numbers("q_total_m3d");
    CHECK(a == b);
    CHECK(ledger_of(dir).count("nse"));
  }
}

TEST_SUITE("command line") {
  TEST_CASE("exit codes follow the error kind") {
    const auto dir = scratch("cli");
    const std::string data = " --model-config " + in(twin_dir(), "model.cfg") + " --forcing " +
                             in(twin_dir(), "forcing.csv") + " --obs " + in(twin_dir(), "obs.csv") + " --out " + dir;
    CHECK(run_cli("invert" + data + " --steps 100 --burn-in 100") == 6);
    CHECK(run_cli("simulate --model-config " + in(twin_dir(), "model.cfg") + " --forcing /nonexistent.csv --params " +
                  in(twin_dir(), "truth.csv") + " --out " + dir) == 2);
    {
      std::ofstream bad(in(dir, "bad.csv"));
      const auto& n = params::calibration_names();
      for (std::size_t i = 0; i < n.size(); ++i) bad << (i ? "," : "") << n[i];
      bad << '\n';
      for (std::size_t i = 0; i < n.size(); ++i) bad << (i ? "," : "") << (i == 3 ? "1.5" : "0");
      bad << '\n';
    }
    CHECK(run_cli("simulate --model-config " + in(twin_dir(), "model.cfg") + " --forcing " + in(twin_dir(), "forcing.csv") +
                  " --params " + in(dir, "bad.csv") + " --out " + dir) == 4);
    CHECK(run_cli("synthetic --years 1 --out " + dir) == 0);
    CHECK(fs::exists(in(dir, "ledger.txt")));
  }
}
