#pragma once

// Mapping between the normalized, independent calibration coordinates
// x in [-1,1]^21 and constrained physical LuKARS parameters.
//
// Coordinate layout, one block of seven per hydrotope:
//   Hyd 1:   k_hyd (log), e_min, de = e_max - e_min, alpha, k_is (log), k_sec (log), e_sec
//   Hyd 2/3: the same seven slots, each a fraction of the interval left
//            admissible by the previous hydrotope's realized value.
// Parameters that must not increase from Hyd 1 to Hyd 3 (k_hyd, alpha,
// k_is, k_sec) form decreasing chains; e_min and e_sec form increasing
// chains. e_max is never coupled directly; its ordering follows from the
// coupled e_min and the de intervals.

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "karst/model.hpp"

namespace karst::params {

inline constexpr int kSlots = 7;
inline constexpr int kDim = model::kHydrotopes * kSlots;

enum class Slot { KHyd = 0, EMin = 1, EMax = 2, Alpha = 3, KIs = 4, KSec = 5, ESec = 6 };
enum class Scale { Linear, Log };

struct PriorEntry {
  std::string name;
  double lb = 0;
  double ub = 0;
  std::string unit;
  Scale scale = Scale::Linear;
};

/// Prior bounds for the 21 physical parameters, in physical order
/// (per hydrotope: k_hyd, e_min, e_max, alpha, k_is, k_sec, e_sec).
struct PriorSpec {
  std::vector<PriorEntry> entries;

  const PriorEntry& at(int hydrotope, Slot slot) const {
    return entries[static_cast<std::size_t>(hydrotope * kSlots + static_cast<int>(slot))];
  }

  /// Throws Error(InvalidInput) unless there are 21 entries with lb < ub and
  /// strictly positive bounds on log-scale entries.
  void validate() const;

  /// Kerschbaum prior intervals.
  static PriorSpec kerschbaum();
};

PriorSpec read_prior(const std::string& path);
void write_prior(const std::string& path, const PriorSpec& prior);

/// Column names of a calibration vector, in coordinate order, prefixed "x_"
/// so they never collide with physical names (e.g. x_k_hyd_1, x_dk_hyd_12, x_de_2).
const std::vector<std::string>& calibration_names();
/// Column names of the physical parameter vector, in physical order.
const std::vector<std::string>& physical_names();

/// Physical parameters flattened in physical order.
Eigen::VectorXd flatten(const model::PhysicalParams& p);
model::PhysicalParams unflatten(const Eigen::Ref<const Eigen::VectorXd>& v);

/// Throws Error(Domain) if any coordinate is outside [-1,1].
model::PhysicalParams to_physical(const Eigen::Ref<const Eigen::VectorXd>& x, const PriorSpec& prior);

/// Inverse of to_physical for parameters inside the prior support.
Eigen::VectorXd to_calibration(const model::PhysicalParams& p, const PriorSpec& prior);

/// Names of violated ordering relations, e.g. "k_hyd_2 >= k_hyd_3".
std::vector<std::string> check_constraints(const model::PhysicalParams& p);

/// n i.i.d. uniform draws on [-1,1]^21, one per column.
Eigen::MatrixXd sample_prior(std::size_t n, std::uint64_t seed);

}  // namespace karst::params
