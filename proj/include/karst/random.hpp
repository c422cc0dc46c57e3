#pragma once

#include <cstdint>
#include <random>

namespace karst {

using Rng = std::mt19937_64;

/// splitmix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Stage identifiers for seed derivation. Every random stream in the
/// pipeline is derive_seed(root, stage, task).
enum class Stage : std::uint64_t {
  Synthetic = 1,
  GradientDraws = 2,
  Bootstrap = 3,
  SurrogateDraws = 4,
  KdeDraws = 5,
  ActiveChain = 6,
  InactiveChains = 7,
};

constexpr std::uint64_t derive_seed(std::uint64_t root, Stage stage, std::uint64_t task = 0) {
  return mix64(mix64(mix64(root) ^ static_cast<std::uint64_t>(stage)) ^ task);
}

}  // namespace karst
