#include "karst/model.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "karst/error.hpp"
#include "karst/parameter_space.hpp"

namespace karst::model {

void ForcingSeries::validate() const {
  if (precip_mm.size() != dates.size() || temp_c.size() != dates.size())
    throw Error(ErrorKind::InvalidInput, "forcing columns have unequal lengths");
  for (std::size_t i = 1; i < dates.size(); ++i) {
    if ((dates[i] - dates[i - 1]).count() != 1)
      throw Error(ErrorKind::InvalidInput, "forcing dates are not consecutive days at row " + std::to_string(i + 1));
  }
  for (std::size_t i = 0; i < precip_mm.size(); ++i) {
    if (!(precip_mm[i] >= 0))
      throw Error(ErrorKind::InvalidInput, "negative or missing precipitation at row " + std::to_string(i + 1));
    if (!std::isfinite(temp_c[i]))
      throw Error(ErrorKind::InvalidInput, "non-finite temperature at row " + std::to_string(i + 1));
  }
}

void CatchmentMeta::validate() const {
  double sum = 0;
  for (int i = 0; i < kHydrotopes; ++i) {
    if (!(area_m2[i] > 0) || !(l_hyd_m[i] > 0))
      throw Error(ErrorKind::InvalidParameter, "hydrotope areas and distances must be positive");
    sum += area_m2[i];
  }
  if (!(total_area_m2 > 0) || !(k_b > 0))
    throw Error(ErrorKind::InvalidParameter, "total area and baseflow coefficient must be positive");
  if (sum > total_area_m2 * (1 + 1e-12))
    throw Error(ErrorKind::InvalidParameter, "hydrotope areas exceed the total recharge area");
}

CatchmentMeta CatchmentMeta::synthetic_default() {
  CatchmentMeta m;
  m.total_area_m2 = 2.5e6;
  m.area_m2 = {0.13 * m.total_area_m2, 0.56 * m.total_area_m2, 0.27 * m.total_area_m2};
  m.l_hyd_m = {1000.0, 1000.0, 1000.0};
  m.k_b = 0.01;
  return m;
}

std::vector<double> thornthwaite_pet(const ForcingSeries& raw) {
  using namespace std::chrono;
  const std::size_t n = raw.size();
  std::vector<double> pet(n, 0.0);
  if (n == 0) return pet;

  // Climatological monthly means drive the heat index; each actual month
  // uses its own mean temperature.
  std::array<double, 12> clim_sum{}, clim_count{};
  std::map<std::pair<int, unsigned>, std::pair<double, int>> months;
  for (std::size_t i = 0; i < n; ++i) {
    const year_month_day ymd{raw.dates[i]};
    const unsigned m = static_cast<unsigned>(ymd.month()) - 1;
    clim_sum[m] += raw.temp_c[i];
    clim_count[m] += 1;
    auto& acc = months[{static_cast<int>(ymd.year()), m}];
    acc.first += raw.temp_c[i];
    acc.second += 1;
  }
  double heat = 0;
  for (int m = 0; m < 12; ++m) {
    if (clim_count[m] == 0) continue;
    const double t = clim_sum[m] / clim_count[m];
    if (t > 0) heat += std::pow(t / 5.0, 1.514);
  }
  if (heat <= 0) return pet;
  const double a = 6.75e-7 * heat * heat * heat - 7.71e-5 * heat * heat + 1.792e-2 * heat + 0.49239;

  for (std::size_t i = 0; i < n; ++i) {
    const year_month_day ymd{raw.dates[i]};
    const unsigned m = static_cast<unsigned>(ymd.month()) - 1;
    const auto& acc = months[{static_cast<int>(ymd.year()), m}];
    const double t = acc.first / acc.second;
    if (t <= 0) continue;
    const double monthly = 16.0 * std::pow(10.0 * t / heat, a);
    const unsigned days = static_cast<unsigned>(year_month_day_last{ymd.year(), month_day_last{ymd.month()}}.day());
    pet[i] = monthly / days;
  }
  return pet;
}

EffectiveInputSeries preprocess_forcing(const ForcingSeries& raw, const ForcingConfig& cfg) {
  raw.validate();
  if (cfg.c_m < 0 || cfg.interception_mm < 0)
    throw Error(ErrorKind::Config, "degree-day coefficient and interception capacity must be non-negative");
  const std::size_t n = raw.size();
  EffectiveInputSeries eff;
  eff.dates = raw.dates;
  eff.snow_mm.resize(n);
  eff.melt_mm.resize(n);
  eff.pet_mm = cfg.pet_method == PetMethod::Thornthwaite ? thornthwaite_pet(raw) : std::vector<double>(n, 0.0);
  std::vector<double> source(n);

  double snow = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double t = raw.temp_c[i];
    const double p = raw.precip_mm[i];
    double rain = 0;
    if (t < cfg.t0) snow += p;
    else rain = p;
    const double melt = std::min(snow, cfg.c_m * std::max(0.0, t - cfg.t0));
    snow -= melt;
    const double intercepted = std::min(rain, cfg.interception_mm);
    source[i] = std::max(0.0, rain + melt - intercepted - eff.pet_mm[i]);
    eff.snow_mm[i] = snow;
    eff.melt_mm[i] = melt;
  }
  for (auto& s : eff.source_mm) s = source;
  return eff;
}

namespace {

void require_band(const HydrotopeParams& p) {
  if (!(p.e_max > p.e_min)) throw Error(ErrorKind::InvalidParameter, "quickflow requires e_max > e_min");
}

}  // namespace

double quickflow(double e_mm, bool active, const HydrotopeParams& p, const CatchmentMeta& meta, int i) {
  require_band(p);
  if (!active) return 0.0;
  const double fill = std::max(0.0, e_mm - p.e_min) / (p.e_max - p.e_min);
  return std::pow(fill, p.alpha) * (p.k_hyd / meta.l_hyd_m[i]) * meta.area_m2[i];
}

LinearDischarges linear_discharges(double e_mm, const HydrotopeParams& p, const CatchmentMeta& meta, int i) {
  const double a = meta.area_m2[i];
  return {p.k_is * e_mm * a, p.k_sec * std::max(0.0, e_mm - p.e_sec) * a};
}

StepResult step(const ModelState& state, std::span<const double, kHydrotopes> source_mm, const PhysicalParams& p,
                const CatchmentMeta& meta) {
  StepResult r;
  double recharge = 0;
  for (int i = 0; i < kHydrotopes; ++i) {
    const auto& h = p.hyd[i];
    const double e = state.e_mm[i];
    const double a = meta.area_m2[i];
    const auto lin = linear_discharges(e, h, meta, i);
    const double q_hyd = quickflow(e, state.active[i], h, meta, i);
    r.fluxes.q_hyd[i] = q_hyd;
    r.fluxes.q_is[i] = lin.q_is;
    r.fluxes.q_sec[i] = lin.q_sec;
    recharge += lin.q_is;
    const double next = std::max(0.0, e + (source_mm[i] - (lin.q_sec + lin.q_is + q_hyd) / a));
    r.state.e_mm[i] = next;
    r.state.active[i] = update_indicator(state.active[i], next, h);
  }
  const double area = meta.total_area_m2;
  r.fluxes.q_b = meta.k_b * state.e_b_mm * area;
  r.state.e_b_mm = std::max(0.0, state.e_b_mm + (recharge - r.fluxes.q_b) / area);
  return r;
}

ModelState initial_state(const PhysicalParams& p, const CatchmentMeta& meta, std::optional<double> first_obs_m3d) {
  ModelState s;
  for (int i = 0; i < kHydrotopes; ++i) s.e_mm[i] = p.hyd[i].e_min;
  if (first_obs_m3d && *first_obs_m3d > 0)
    s.e_b_mm = *first_obs_m3d / kModelUnitToM3 / (meta.k_b * meta.total_area_m2);
  return s;
}

DischargeSeries simulate(const PhysicalParams& p, const CatchmentMeta& meta, const EffectiveInputSeries& eff,
                         const ModelState& init, bool with_components) {
  if (const auto violated = params::check_constraints(p); !violated.empty())
    throw Error(ErrorKind::InvalidParameter, "parameter constraint violated: " + violated.front());
  meta.validate();
  const std::size_t n = eff.size();
  for (const auto& s : eff.source_mm) {
    if (s.size() != n) throw Error(ErrorKind::InvalidInput, "effective input columns have unequal lengths");
  }

  DischargeSeries out;
  out.dates = eff.dates;
  out.total_m3d.resize(n);
  out.has_components = with_components;
  if (with_components) {
    for (int i = 0; i < kHydrotopes; ++i) {
      out.q_hyd_m3d[i].resize(n);
      out.q_is_m3d[i].resize(n);
      out.q_sec_m3d[i].resize(n);
    }
    out.q_b_m3d.resize(n);
  }

  ModelState state = init;
  std::array<double, kHydrotopes> source{};
  for (std::size_t t = 0; t < n; ++t) {
    for (int i = 0; i < kHydrotopes; ++i) source[i] = eff.source_mm[i][t];
    const StepResult r = step(state, source, p, meta);
    out.total_m3d[t] = r.fluxes.spring() * kModelUnitToM3;
    if (with_components) {
      for (int i = 0; i < kHydrotopes; ++i) {
        out.q_hyd_m3d[i][t] = r.fluxes.q_hyd[i] * kModelUnitToM3;
        out.q_is_m3d[i][t] = r.fluxes.q_is[i] * kModelUnitToM3;
        out.q_sec_m3d[i][t] = r.fluxes.q_sec[i] * kModelUnitToM3;
      }
      out.q_b_m3d[t] = r.fluxes.q_b * kModelUnitToM3;
    }
    state = r.state;
  }
  return out;
}

double nse(std::span<const double> sim, std::span<const double> obs) {
  if (sim.size() != obs.size() || obs.empty())
    throw Error(ErrorKind::InvalidInput, "nse: series must be non-empty and of equal length");
  const double mean = std::accumulate(obs.begin(), obs.end(), 0.0) / static_cast<double>(obs.size());
  double num = 0, den = 0;
  for (std::size_t i = 0; i < obs.size(); ++i) {
    num += (sim[i] - obs[i]) * (sim[i] - obs[i]);
    den += (obs[i] - mean) * (obs[i] - mean);
  }
  if (den == 0) throw Error(ErrorKind::Domain, "nse: observations are constant");
  return 1.0 - num / den;
}

}  // namespace karst::model
