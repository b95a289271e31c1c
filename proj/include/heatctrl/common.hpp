#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace heatctrl {

// Invalid input or violated precondition (maps to CLI exit code 1).
struct SpecError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Solver failed to converge where the contract treats that as fatal
// (maps to CLI exit code 2).
struct SolverError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// SplitMix64 step; used to derive independent per-sample seeds from one
// run seed so parallel sample loops stay deterministic.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t index) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (index + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace heatctrl
