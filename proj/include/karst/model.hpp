#pragma once

// Lumped karst-spring model: three hydrotope buckets with hysteretic
// quickflow, secondary and infiltration outflow, and a shared linear
// baseflow reservoir draining to the spring.
//
// Internal units are (mm, m^2, day). Fluxes returned by the flux functions
// are in model units of mm*m^2/d, so Q/a is directly a rate in mm/d. Spring
// discharge series are reported in m^3/d (and l/s on demand).

#include <array>
#include <chrono>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace karst::model {

inline constexpr int kHydrotopes = 3;

/// One model-unit flux (mm*m^2/d) in m^3/d.
inline constexpr double kModelUnitToM3 = 1e-3;

inline constexpr double m3d_to_ls(double q_m3d) { return q_m3d * 1000.0 / 86400.0; }

using Date = std::chrono::sys_days;

struct ForcingSeries {
  std::vector<Date> dates;
  std::vector<double> precip_mm;
  std::vector<double> temp_c;

  std::size_t size() const { return dates.size(); }

  /// Throws Error(InvalidInput) on unequal columns, gaps, or negative precipitation.
  void validate() const;
};

enum class PetMethod { None, Thornthwaite };

struct ForcingConfig {
  double c_m = 3.0;              // degree-day coefficient, mm/(degC d)
  double t0 = 0.0;               // melt / snowfall threshold, degC
  double interception_mm = 0.0;  // daily interception capacity on rain
  PetMethod pet_method = PetMethod::None;
  int warmup_days = 90;
};

/// Source term S_i per hydrotope plus the snow store trace.
struct EffectiveInputSeries {
  std::vector<Date> dates;
  std::array<std::vector<double>, kHydrotopes> source_mm;
  std::vector<double> snow_mm;  // store at end of day
  std::vector<double> melt_mm;
  std::vector<double> pet_mm;

  std::size_t size() const { return dates.size(); }
};

struct HydrotopeParams {
  double k_hyd = 0;  // m^2/d
  double e_min = 0;  // mm
  double e_max = 0;  // mm
  double alpha = 0;
  double k_is = 0;   // 1/d in model units
  double k_sec = 0;  // 1/d in model units
  double e_sec = 0;  // mm
};

struct PhysicalParams {
  std::array<HydrotopeParams, kHydrotopes> hyd;
};

struct CatchmentMeta {
  std::array<double, kHydrotopes> area_m2{};
  double total_area_m2 = 0;
  std::array<double, kHydrotopes> l_hyd_m{};
  double k_b = 0;  // 1/d

  void validate() const;

  /// Defaults for the synthetic-twin harness only: a 2.5 km^2 recharge area
  /// split 13/56/27 %, l_hyd = 1000 m, k_b = 0.01 1/d.
  static CatchmentMeta synthetic_default();
};

struct ModelState {
  std::array<double, kHydrotopes> e_mm{};
  double e_b_mm = 0;
  std::array<bool, kHydrotopes> active{};
};

/// Fluxes in model units (mm*m^2/d).
struct Fluxes {
  std::array<double, kHydrotopes> q_hyd{};
  std::array<double, kHydrotopes> q_is{};
  std::array<double, kHydrotopes> q_sec{};
  double q_b = 0;

  double spring() const { return q_hyd[0] + q_hyd[1] + q_hyd[2] + q_b; }
};

struct DischargeSeries {
  std::vector<Date> dates;
  std::vector<double> total_m3d;

  // Component traces in m^3/d, filled only when requested.
  bool has_components = false;
  std::array<std::vector<double>, kHydrotopes> q_hyd_m3d;
  std::array<std::vector<double>, kHydrotopes> q_is_m3d;
  std::array<std::vector<double>, kHydrotopes> q_sec_m3d;
  std::vector<double> q_b_m3d;

  std::size_t size() const { return total_m3d.size(); }
};

EffectiveInputSeries preprocess_forcing(const ForcingSeries& raw, const ForcingConfig& cfg);

/// Daily potential evapotranspiration (mm/d) from unadjusted monthly
/// Thornthwaite values spread evenly over the days of each month.
std::vector<double> thornthwaite_pet(const ForcingSeries& raw);

double quickflow(double e_mm, bool active, const HydrotopeParams& p, const CatchmentMeta& meta, int i);

struct LinearDischarges {
  double q_is = 0;
  double q_sec = 0;
};

LinearDischarges linear_discharges(double e_mm, const HydrotopeParams& p, const CatchmentMeta& meta, int i);

/// Hysteresis switch: on once the level reaches e_max, off once it falls to e_min.
constexpr bool update_indicator(bool active, double e_next, const HydrotopeParams& p) {
  return active ? e_next > p.e_min : e_next >= p.e_max;
}

struct StepResult {
  ModelState state;
  Fluxes fluxes;  // evaluated on the pre-step levels
};

StepResult step(const ModelState& state, std::span<const double, kHydrotopes> source_mm,
                const PhysicalParams& p, const CatchmentMeta& meta);

/// Levels at e_min, quickflow off, baseflow level matching the first observed
/// discharge when given, else empty.
ModelState initial_state(const PhysicalParams& p, const CatchmentMeta& meta,
                         std::optional<double> first_obs_m3d = std::nullopt);

DischargeSeries simulate(const PhysicalParams& p, const CatchmentMeta& meta,
                         const EffectiveInputSeries& eff, const ModelState& init,
                         bool with_components = false);

/// Nash-Sutcliffe efficiency. Throws Error(Domain) for constant observations.
double nse(std::span<const double> sim, std::span<const double> obs);

}  // namespace karst::model
