#include "karst/parameter_space.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include "karst/error.hpp"
#include "karst/random.hpp"

namespace karst::params {

using model::HydrotopeParams;
using model::kHydrotopes;
using model::PhysicalParams;

namespace {

constexpr std::array<const char*, kSlots> kSlotNames = {"k_hyd", "e_min", "e_max", "alpha", "k_is", "k_sec", "e_sec"};

// Ordering direction of each slot across hydrotopes. e_max is handled
// through de = e_max - e_min.
enum class Chain { Decreasing, Increasing, Width };
constexpr std::array<Chain, kSlots> kChain = {Chain::Decreasing, Chain::Increasing, Chain::Width, Chain::Decreasing,
                                              Chain::Decreasing, Chain::Decreasing, Chain::Increasing};

double& slot_ref(HydrotopeParams& h, int s) {
  switch (static_cast<Slot>(s)) {
    case Slot::KHyd: return h.k_hyd;
    case Slot::EMin: return h.e_min;
    case Slot::EMax: return h.e_max;
    case Slot::Alpha: return h.alpha;
    case Slot::KIs: return h.k_is;
    case Slot::KSec: return h.k_sec;
    case Slot::ESec: return h.e_sec;
  }
  return h.k_hyd;
}

double slot_value(const HydrotopeParams& h, int s) { return slot_ref(const_cast<HydrotopeParams&>(h), s); }

double forward_scale(const PriorEntry& e, double v) { return e.scale == Scale::Log ? std::log(v) : v; }
double inverse_scale(const PriorEntry& e, double t) { return e.scale == Scale::Log ? std::exp(t) : t; }

Scale parse_scale(const std::string& s, int line) {
  if (s == "linear") return Scale::Linear;
  if (s == "log") return Scale::Log;
  throw Error(ErrorKind::InvalidInput, "prior line " + std::to_string(line) + ": unknown scale '" + s + "'");
}

// Admissible interval in transformed units for coupled slot s of hydrotope
// i, given the realized transformed value of hydrotope i-1.
std::pair<double, double> coupled_interval(Chain chain, double lb, double ub, double prev) {
  if (chain == Chain::Decreasing) return {lb, std::min(ub, prev)};
  return {std::max(prev, lb), ub};
}

}  // namespace

void PriorSpec::validate() const {
  if (entries.size() != static_cast<std::size_t>(kDim))
    throw Error(ErrorKind::InvalidInput, "prior must list exactly 21 parameters");
  for (const auto& e : entries) {
    if (!(e.lb < e.ub)) throw Error(ErrorKind::InvalidInput, "prior '" + e.name + "': lower bound must be below upper");
    if (e.scale == Scale::Log && !(e.lb > 0))
      throw Error(ErrorKind::InvalidInput, "prior '" + e.name + "': log scale needs positive bounds");
  }
  for (int i = 0; i < kHydrotopes; ++i) {
    const auto& lo = at(i, Slot::EMin);
    const auto& hi = at(i, Slot::EMax);
    if (hi.lb - lo.lb > hi.ub - lo.ub)
      throw Error(ErrorKind::InvalidInput, "prior: e_max - e_min interval is empty for hydrotope " + std::to_string(i + 1));
  }
}

PriorSpec PriorSpec::kerschbaum() {
  struct Row {
    double lb, ub;
  };
  // clang-format off
  const std::array<Row, kDim> rows = {{
      {9, 900},       {10, 50},   {15, 75},   {0.7, 1.6}, {0.002, 0.2},     {0.0095, 0.95}, {25, 70},
      {8.5, 850},     {40, 80},   {80, 160},  {0.5, 1.3}, {0.00055, 0.055}, {0.0023, 0.23}, {130, 220},
      {7.7, 770},     {75, 120},  {160, 255}, {0.2, 0.7}, {0.00025, 0.025}, {0.0015, 0.15}, {320, 450},
  }};
  // clang-format on
  constexpr std::array<const char*, kSlots> units = {"m2/d", "mm", "mm", "-", "m/(mm*d)", "m/(mm*d)", "mm"};
  PriorSpec prior;
  for (int j = 0; j < kDim; ++j) {
    const int s = j % kSlots;
    const bool log = s == 0 || s == 4 || s == 5;
    prior.entries.push_back({physical_names()[static_cast<std::size_t>(j)], rows[static_cast<std::size_t>(j)].lb,
                             rows[static_cast<std::size_t>(j)].ub, units[static_cast<std::size_t>(s)],
                             log ? Scale::Log : Scale::Linear});
  }
  return prior;
}

PriorSpec read_prior(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::InvalidInput, "cannot open prior file " + path);
  PriorSpec prior;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    std::istringstream ss(line);
    PriorEntry e;
    std::string scale;
    if (!(ss >> e.name)) continue;
    if (e.name == "name") continue;  // header row
    if (!(ss >> e.lb >> e.ub >> e.unit >> scale))
      throw Error(ErrorKind::InvalidInput, path + ":" + std::to_string(lineno) + ": expected 'name lb ub unit scale'");
    e.scale = parse_scale(scale, lineno);
    prior.entries.push_back(e);
  }
  prior.validate();
  for (std::size_t j = 0; j < prior.entries.size(); ++j) {
    if (prior.entries[j].name != physical_names()[j])
      throw Error(ErrorKind::InvalidInput, "prior row " + std::to_string(j + 1) + " must be '" + physical_names()[j] +
                                               "', found '" + prior.entries[j].name + "'");
  }
  return prior;
}

void write_prior(const std::string& path, const PriorSpec& prior) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::InvalidInput, "cannot write prior file " + path);
  out << "# name lb ub unit scale\n";
  out.precision(17);
  for (const auto& e : prior.entries)
    out << e.name << ' ' << e.lb << ' ' << e.ub << ' ' << e.unit << ' '
        << (e.scale == Scale::Log ? "log" : "linear") << '\n';
}

const std::vector<std::string>& calibration_names() {
  static const std::vector<std::string> names = [] {
    constexpr std::array<const char*, kSlots> first = {"k_hyd_1", "e_min_1", "de_1", "alpha_1",
                                                       "k_is_1",  "k_sec_1", "e_sec_1"};
    constexpr std::array<const char*, kSlots> coupled = {"dk_hyd", "de_min", "de", "dalpha", "dk_is", "dk_sec", "de_sec"};
    std::vector<std::string> v;
    for (const char* name : first) v.push_back(std::string("x_") + name);
    for (const char* pair : {"12", "23"}) {
      for (int s = 0; s < kSlots; ++s)
        v.push_back("x_" + std::string(coupled[static_cast<std::size_t>(s)]) + "_" +
                    (s == 2 ? std::string(1, pair[1]) : pair));
    }
    return v;
  }();
  return names;
}

const std::vector<std::string>& physical_names() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> v;
    for (int i = 1; i <= kHydrotopes; ++i)
      for (const char* s : kSlotNames) v.push_back(std::string(s) + "_" + std::to_string(i));
    return v;
  }();
  return names;
}

Eigen::VectorXd flatten(const PhysicalParams& p) {
  Eigen::VectorXd v(kDim);
  for (int i = 0; i < kHydrotopes; ++i)
    for (int s = 0; s < kSlots; ++s) v(i * kSlots + s) = slot_value(p.hyd[i], s);
  return v;
}

PhysicalParams unflatten(const Eigen::Ref<const Eigen::VectorXd>& v) {
  if (v.size() != kDim) throw Error(ErrorKind::InvalidInput, "physical parameter vector must have 21 entries");
  PhysicalParams p;
  for (int i = 0; i < kHydrotopes; ++i)
    for (int s = 0; s < kSlots; ++s) slot_ref(p.hyd[i], s) = v(i * kSlots + s);
  return p;
}

PhysicalParams to_physical(const Eigen::Ref<const Eigen::VectorXd>& x, const PriorSpec& prior) {
  if (x.size() != kDim) throw Error(ErrorKind::InvalidInput, "calibration vector must have 21 entries");
  for (Eigen::Index j = 0; j < kDim; ++j) {
    if (!(x(j) >= -1.0 && x(j) <= 1.0))
      throw Error(ErrorKind::Domain, "calibration coordinate " + calibration_names()[static_cast<std::size_t>(j)] +
                                         " outside [-1,1]");
  }
  PhysicalParams p;
  std::array<double, kSlots> prev{};  // transformed values of the previous hydrotope
  for (int i = 0; i < kHydrotopes; ++i) {
    for (int s = 0; s < kSlots; ++s) {
      const double u = 0.5 * (x(i * kSlots + s) + 1.0);
      const auto& e = prior.at(i, static_cast<Slot>(s));
      if (kChain[static_cast<std::size_t>(s)] == Chain::Width) continue;
      const double lb = forward_scale(e, e.lb), ub = forward_scale(e, e.ub);
      double t;
      if (i == 0) {
        t = lb + u * (ub - lb);
      } else {
        const auto [lo, hi] = coupled_interval(kChain[static_cast<std::size_t>(s)], lb, ub, prev[static_cast<std::size_t>(s)]);
        t = lo + u * (hi - lo);
      }
      prev[static_cast<std::size_t>(s)] = t;
      slot_ref(p.hyd[i], s) = inverse_scale(e, t);
    }
    const auto& lo = prior.at(i, Slot::EMin);
    const auto& hi = prior.at(i, Slot::EMax);
    const double w_lb = hi.lb - lo.lb, w_ub = hi.ub - lo.ub;
    const double u = 0.5 * (x(i * kSlots + static_cast<int>(Slot::EMax)) + 1.0);
    p.hyd[i].e_max = p.hyd[i].e_min + (w_lb + u * (w_ub - w_lb));
  }
  return p;
}

Eigen::VectorXd to_calibration(const PhysicalParams& p, const PriorSpec& prior) {
  Eigen::VectorXd x(kDim);
  auto normalized = [](double t, double lo, double hi) { return hi > lo ? 2.0 * (t - lo) / (hi - lo) - 1.0 : -1.0; };
  std::array<double, kSlots> prev{};
  for (int i = 0; i < kHydrotopes; ++i) {
    for (int s = 0; s < kSlots; ++s) {
      if (kChain[static_cast<std::size_t>(s)] == Chain::Width) continue;
      const auto& e = prior.at(i, static_cast<Slot>(s));
      const double lb = forward_scale(e, e.lb), ub = forward_scale(e, e.ub);
      const double t = forward_scale(e, slot_value(p.hyd[i], s));
      if (i == 0) {
        x(i * kSlots + s) = normalized(t, lb, ub);
      } else {
        const auto [lo, hi] = coupled_interval(kChain[static_cast<std::size_t>(s)], lb, ub, prev[static_cast<std::size_t>(s)]);
        x(i * kSlots + s) = normalized(t, lo, hi);
      }
      prev[static_cast<std::size_t>(s)] = t;
    }
    const auto& lo = prior.at(i, Slot::EMin);
    const auto& hi = prior.at(i, Slot::EMax);
    x(i * kSlots + static_cast<int>(Slot::EMax)) =
        normalized(p.hyd[i].e_max - p.hyd[i].e_min, hi.lb - lo.lb, hi.ub - lo.ub);
  }
  return x;
}

std::vector<std::string> check_constraints(const PhysicalParams& p) {
  std::vector<std::string> violated;
  for (int s = 0; s < kSlots; ++s) {
    // e_max orders like e_min; the remaining increasing slots are e_min, e_sec.
    const bool increasing = kChain[static_cast<std::size_t>(s)] != Chain::Decreasing;
    for (int i = 0; i + 1 < kHydrotopes; ++i) {
      const double a = slot_value(p.hyd[i], s), b = slot_value(p.hyd[i + 1], s);
      const bool ok = increasing ? a <= b : a >= b;
      if (!ok) {
        const std::string lhs = std::string(kSlotNames[static_cast<std::size_t>(s)]) + "_" + std::to_string(i + 1);
        const std::string rhs = std::string(kSlotNames[static_cast<std::size_t>(s)]) + "_" + std::to_string(i + 2);
        violated.push_back(lhs + (increasing ? " <= " : " >= ") + rhs);
      }
    }
  }
  for (int i = 0; i < kHydrotopes; ++i) {
    if (!(p.hyd[i].e_min <= p.hyd[i].e_max))
      violated.push_back("e_min_" + std::to_string(i + 1) + " <= e_max_" + std::to_string(i + 1));
  }
  return violated;
}

Eigen::MatrixXd sample_prior(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Eigen::MatrixXd xs(kDim, static_cast<Eigen::Index>(n));
  for (Eigen::Index c = 0; c < xs.cols(); ++c)
    for (Eigen::Index r = 0; r < kDim; ++r) xs(r, c) = u(rng);
  return xs;
}

}  // namespace karst::params
