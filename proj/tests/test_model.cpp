#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "karst/error.hpp"
#include "karst/io.hpp"
#include "karst/model.hpp"
#include "karst/parameter_space.hpp"
#include "karst/pipeline.hpp"

using namespace karst;
using namespace karst::model;

namespace {

Date day(int offset) { return Date{std::chrono::year{2010} / 1 / 1} + std::chrono::days{offset}; }

ForcingSeries forcing(std::vector<double> precip, std::vector<double> temp) {
  ForcingSeries f;
  for (std::size_t i = 0; i < precip.size(); ++i) f.dates.push_back(day(static_cast<int>(i)));
  f.precip_mm = std::move(precip);
  f.temp_c = std::move(temp);
  return f;
}

PhysicalParams reference_params() {
  return params::to_physical(Eigen::VectorXd::Zero(params::kDim), params::PriorSpec::kerschbaum());
}

HydrotopeParams linear_store(double k_is) {
  HydrotopeParams h;
  h.k_hyd = 100;
  h.e_min = 10;
  h.e_max = 1000;
  h.alpha = 1;
  h.k_is = k_is;
  h.k_sec = 0;
  h.e_sec = 1e9;
  return h;
}

EffectiveInputSeries constant_input(std::size_t n, double s) {
  EffectiveInputSeries e;
  for (std::size_t i = 0; i < n; ++i) e.dates.push_back(day(static_cast<int>(i)));
  for (auto& v : e.source_mm) v.assign(n, s);
  e.snow_mm.assign(n, 0);
  e.melt_mm.assign(n, 0);
  e.pet_mm.assign(n, 0);
  return e;
}

}  // namespace

TEST_SUITE("preprocess_forcing") {
  TEST_CASE("sub-zero days accumulate all precipitation as snow") {
    const auto f = forcing(std::vector<double>(5, 10.0), std::vector<double>(5, -5.0));
    const auto e = preprocess_forcing(f, ForcingConfig{});
    for (std::size_t i = 0; i < 5; ++i) {
      CHECK(e.source_mm[0][i] == 0.0);
      CHECK(e.snow_mm[i] == doctest::Approx(10.0 * static_cast<double>(i + 1)));
    }
  }

  TEST_CASE("zero degree-day coefficient gives no melt") {
    const auto f = forcing({20, 0, 0, 0}, {-3, 5, 10, 15});
    ForcingConfig cfg;
    cfg.c_m = 0;
    const auto e = preprocess_forcing(f, cfg);
    for (double m : e.melt_mm) CHECK(m == 0.0);
    CHECK(e.snow_mm.back() == 20.0);
  }

  TEST_CASE("three-day degree-day recurrence") {
    const auto f = forcing({10, 0, 0}, {-2, 2, 2});
    ForcingConfig cfg;
    cfg.c_m = 2;
    cfg.t0 = 0;
    const auto e = preprocess_forcing(f, cfg);
    CHECK(e.melt_mm == std::vector<double>{0, 4, 4});
    CHECK(e.snow_mm == std::vector<double>{10, 6, 2});
    CHECK(e.source_mm[1] == std::vector<double>{0, 4, 4});
  }

  TEST_CASE("interception caps at the daily capacity and never exceeds rain") {
    const auto f = forcing({1, 5}, {10, 10});
    ForcingConfig cfg;
    cfg.interception_mm = 2;
    const auto e = preprocess_forcing(f, cfg);
    CHECK(e.source_mm[0] == std::vector<double>{0, 3});
  }

  TEST_CASE("snow store is mass conserving on random forcing") {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> p(0, 20), t(-10, 10);
    std::vector<double> precip(400), temp(400);
    for (std::size_t i = 0; i < 400; ++i) {
      precip[i] = p(rng);
      temp[i] = t(rng);
    }
    const auto f = forcing(precip, temp);
    const auto e = preprocess_forcing(f, ForcingConfig{});
    double snowfall = 0, melt = 0;
    for (std::size_t i = 0; i < 400; ++i) {
      if (temp[i] < 0) snowfall += precip[i];
      melt += e.melt_mm[i];
      CHECK(e.snow_mm[i] >= 0);
    }
    CHECK(snowfall - melt == doctest::Approx(e.snow_mm.back()).epsilon(1e-12));
  }

  TEST_CASE("gaps and negative precipitation are rejected") {
    auto f = forcing({1, 2, 3}, {1, 1, 1});
    f.dates[2] = day(5);
    CHECK_THROWS_AS(preprocess_forcing(f, ForcingConfig{}), Error);
    auto g = forcing({1, -2, 3}, {1, 1, 1});
    try {
      preprocess_forcing(g, ForcingConfig{});
      FAIL("expected an error");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::InvalidInput);
    }
  }

  TEST_CASE("thornthwaite PET is zero in freezing months and sums to the monthly value") {
    std::vector<double> precip(365, 0.0), temp(365);
    for (int i = 0; i < 365; ++i) temp[static_cast<std::size_t>(i)] = i < 31 ? -4.0 : 12.0;
    const auto f = forcing(precip, temp);
    const auto pet = thornthwaite_pet(f);
    for (int i = 0; i < 31; ++i) CHECK(pet[static_cast<std::size_t>(i)] == 0.0);
    // February: 28 equal days whose total is the unadjusted monthly value
    double feb = 0;
    for (int i = 31; i < 59; ++i) feb += pet[static_cast<std::size_t>(i)];
    const double heat = 11 * std::pow(12.0 / 5.0, 1.514);
    const double a = 6.75e-7 * std::pow(heat, 3) - 7.71e-5 * heat * heat + 1.792e-2 * heat + 0.49239;
    CHECK(feb == doctest::Approx(16 * std::pow(120.0 / heat, a)).epsilon(1e-12));
  }
}

TEST_SUITE("fluxes") {
  const auto meta = CatchmentMeta::synthetic_default();

  TEST_CASE("quickflow examples") {
    const auto p = reference_params().hyd[1];
    CHECK(quickflow(p.e_max + 10, false, p, meta, 1) == 0.0);
    CHECK(quickflow(p.e_min, true, p, meta, 1) == 0.0);
    CHECK(quickflow(p.e_max, true, p, meta, 1) == doctest::Approx(p.k_hyd / meta.l_hyd_m[1] * meta.area_m2[1]));
    auto bad = p;
    bad.e_max = bad.e_min;
    try {
      quickflow(1, true, bad, meta, 1);
      FAIL("expected an error");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::InvalidParameter);
    }
  }

  TEST_CASE("linear discharges") {
    auto p = reference_params().hyd[0];
    CHECK(linear_discharges(0, p, meta, 0).q_is == 0.0);
    CHECK(linear_discharges(0, p, meta, 0).q_sec == 0.0);
    CHECK(linear_discharges(p.e_sec, p, meta, 0).q_sec == 0.0);
    CatchmentMeta m = meta;
    m.area_m2[0] = 1e6;
    p.k_is = 0.05;
    CHECK(linear_discharges(40, p, m, 0).q_is == doctest::Approx(2e6));
  }

  TEST_CASE("interflow is linear and monotone in the level") {
    const auto p = reference_params().hyd[2];
    double prev = -1;
    for (double e = 0; e <= 500; e += 7.5) {
      const double q = linear_discharges(e, p, meta, 2).q_is;
      CHECK(q > prev);
      CHECK(q == doctest::Approx(linear_discharges(1, p, meta, 2).q_is * e).epsilon(1e-12));
      prev = q;
    }
  }

  TEST_CASE("indicator hysteresis rules") {
    const auto p = reference_params().hyd[0];
    CHECK(update_indicator(false, p.e_max, p));
    CHECK_FALSE(update_indicator(true, p.e_min, p));
    CHECK_FALSE(update_indicator(false, 0.5 * (p.e_min + p.e_max), p));
    CHECK(update_indicator(true, 0.5 * (p.e_min + p.e_max), p));
  }

  TEST_CASE("triangular sweep yields 0 -> 1 -> 0 without chattering") {
    const auto p = reference_params().hyd[1];
    std::vector<double> levels;
    for (double e = 0; e <= p.e_max + 20; e += 0.5) levels.push_back(e);
    for (double e = p.e_max + 20; e >= 0; e -= 0.5) levels.push_back(e);
    bool active = false;
    std::vector<bool> seq{active};
    for (double e : levels) {
      const bool next = update_indicator(active, e, p);
      if (next != active) seq.push_back(next);
      active = next;
    }
    CHECK(seq == std::vector<bool>{false, true, false});
  }
}

TEST_SUITE("step") {
  const auto meta = CatchmentMeta::synthetic_default();

  TEST_CASE("dry system is a fixed point") {
    const auto p = reference_params();
    const ModelState s{};
    const std::array<double, 3> zero{};
    const auto r = step(s, zero, p, meta);
    for (int i = 0; i < 3; ++i) {
      CHECK(r.state.e_mm[i] == 0.0);
      CHECK(r.fluxes.q_hyd[i] == 0.0);
      CHECK(r.fluxes.q_is[i] == 0.0);
      CHECK(r.fluxes.q_sec[i] == 0.0);
    }
    CHECK(r.fluxes.spring() == 0.0);
  }

  TEST_CASE("linear store converges to S / k_is") {
    PhysicalParams p;
    p.hyd.fill(linear_store(0.05));
    ModelState s{};
    const std::array<double, 3> source{5, 5, 5};
    for (int n = 0; n < 2000; ++n) s = step(s, source, p, meta).state;
    for (int i = 0; i < 3; ++i) CHECK(s.e_mm[i] == doctest::Approx(100.0).epsilon(1e-12));
  }

  TEST_CASE("random steps keep storages and fluxes non-negative and balance exactly when unclipped") {
    const auto prior = params::PriorSpec::kerschbaum();
    const Eigen::MatrixXd xs = params::sample_prior(100, 11);
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> level(0, 400), src(0, 60), base(0, 2000);
    std::bernoulli_distribution coin(0.5), dry(0.2);
    int unclipped = 0;
    for (int trial = 0; trial < 10000; ++trial) {
      const auto p = params::to_physical(xs.col(trial % 100), prior);
      ModelState s;
      std::array<double, 3> source{};
      for (int i = 0; i < 3; ++i) {
        s.e_mm[i] = dry(rng) ? 0.0 : level(rng);
        s.active[i] = coin(rng);
        source[i] = dry(rng) ? 0.0 : src(rng);
      }
      s.e_b_mm = base(rng);
      const auto r = step(s, source, p, meta);
      double recharge = 0;
      for (int i = 0; i < 3; ++i) {
        CHECK(r.state.e_mm[i] >= 0);
        CHECK(r.fluxes.q_hyd[i] >= 0);
        CHECK(r.fluxes.q_is[i] >= 0);
        CHECK(r.fluxes.q_sec[i] >= 0);
        const double out = (r.fluxes.q_hyd[i] + r.fluxes.q_is[i] + r.fluxes.q_sec[i]) / meta.area_m2[i];
        const double raw = s.e_mm[i] + source[i] - out;
        if (raw > 0) {
          ++unclipped;
          CHECK(std::abs((r.state.e_mm[i] - s.e_mm[i]) - (source[i] - out)) < 1e-10);
        }
        recharge += r.fluxes.q_is[i];
      }
      CHECK(r.state.e_b_mm >= 0);
      CHECK(r.fluxes.q_b >= 0);
      if (s.e_b_mm + (recharge - r.fluxes.q_b) / meta.total_area_m2 > 0)
        CHECK(std::abs((r.state.e_b_mm - s.e_b_mm) - (recharge - r.fluxes.q_b) / meta.total_area_m2) < 1e-10);
    }
    CHECK(unclipped > 1000);
  }
}

TEST_SUITE("simulate") {
  const auto meta = CatchmentMeta::synthetic_default();

  TEST_CASE("zero forcing and empty stores give zero discharge") {
    const auto p = reference_params();
    const auto q = simulate(p, meta, constant_input(50, 0.0), ModelState{}, true);
    for (double v : q.total_m3d) CHECK(v == 0.0);
  }

  TEST_CASE("unreachable secondary outlet gives a zero trace") {
    auto p = reference_params();
    for (auto& h : p.hyd) h.k_sec = 0;
    const auto q = simulate(p, meta, constant_input(200, 12.0), initial_state(p, meta), true);
    for (const auto& trace : q.q_sec_m3d)
      for (double v : trace) CHECK(v == 0.0);
  }

  TEST_CASE("total discharge is quickflow plus baseflow and excludes the secondary outlet") {
    const auto p = reference_params();
    const auto q = simulate(p, meta, constant_input(300, 15.0), initial_state(p, meta, 3000.0), true);
    bool any_sec = false;
    for (std::size_t t = 0; t < q.size(); ++t) {
      const double sum = q.q_hyd_m3d[0][t] + q.q_hyd_m3d[1][t] + q.q_hyd_m3d[2][t] + q.q_b_m3d[t];
      CHECK(q.total_m3d[t] == doctest::Approx(sum).epsilon(1e-14));
      any_sec = any_sec || q.q_sec_m3d[0][t] > 0;
      CHECK(q.total_m3d[t] >= 0);
    }
    CHECK(any_sec);
  }

  TEST_CASE("initial baseflow matches the first observation") {
    const auto p = reference_params();
    const auto s = initial_state(p, meta, 4321.0);
    CHECK(meta.k_b * s.e_b_mm * meta.total_area_m2 * kModelUnitToM3 == doctest::Approx(4321.0));
    for (int i = 0; i < 3; ++i) {
      CHECK(s.e_mm[i] == p.hyd[i].e_min);
      CHECK_FALSE(s.active[i]);
    }
    CHECK(initial_state(p, meta).e_b_mm == 0.0);
  }

  TEST_CASE("constraint violations are rejected") {
    auto p = reference_params();
    p.hyd[2].k_hyd = p.hyd[1].k_hyd * 2;
    try {
      simulate(p, meta, constant_input(3, 1.0), initial_state(p, meta));
      FAIL("expected an error");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::InvalidParameter);
    }
  }

  TEST_CASE("repeat runs are bit-identical") {
    const auto f = pipeline::generate_forcing(3, Date{std::chrono::year{2006} / 1 / 1}, 17);
    ForcingConfig cfg;
    cfg.pet_method = PetMethod::Thornthwaite;
    const auto eff = preprocess_forcing(f, cfg);
    const auto p = reference_params();
    const auto a = simulate(p, meta, eff, initial_state(p, meta, 5000.0), true);
    const auto b = simulate(p, meta, eff, initial_state(p, meta, 5000.0), true);
    CHECK(a.total_m3d == b.total_m3d);
    CHECK(a.q_b_m3d == b.q_b_m3d);
  }

  TEST_CASE("golden discharge file is reproduced byte for byte") {
    const auto f = pipeline::generate_forcing(3, Date{std::chrono::year{2006} / 1 / 1}, 17);
    ForcingConfig cfg;
    cfg.pet_method = PetMethod::Thornthwaite;
    const auto eff = preprocess_forcing(f, cfg);
    const auto p = reference_params();
    const auto q = simulate(p, meta, eff, initial_state(p, meta, 5000.0), true);
    const auto out = (std::filesystem::temp_directory_path() / "karst_golden_check.csv").string();
    io::write_discharge(out, q);
    const std::string golden = std::string(KARST_FIXTURE_DIR) + "/golden_discharge.csv";
    if (std::getenv("KARST_REGENERATE_GOLDEN")) std::filesystem::copy_file(out, golden, std::filesystem::copy_options::overwrite_existing);
    auto slurp = [](const std::string& path) {
      std::ifstream in(path, std::ios::binary);
      std::stringstream ss;
      ss << in.rdbuf();
      return ss.str();
    };
    const auto expected = slurp(golden);
    REQUIRE_FALSE(expected.empty());
    CHECK(slurp(out) == expected);
  }
}

TEST_SUITE("nse") {
  TEST_CASE("perfect, mean and offset predictions") {
    const std::vector<double> obs{3, 7, 1, 9, 4, 6};
    CHECK(nse(obs, obs) == 1.0);
    const std::vector<double> mean(6, 5.0);
    CHECK(nse(mean, obs) == doctest::Approx(0.0).epsilon(1e-15));
    std::vector<double> shifted = obs;
    for (auto& v : shifted) v += 1.5;
    double ss = 0;
    for (double v : obs) ss += (v - 5.0) * (v - 5.0);
    CHECK(nse(shifted, obs) == doctest::Approx(1 - 6 * 1.5 * 1.5 / ss));
  }

  TEST_CASE("constant observations are a domain error") {
    const std::vector<double> obs(4, 2.0), sim{1, 2, 3, 4};
    try {
      nse(sim, obs);
      FAIL("expected an error");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::Domain);
    }
  }
}
