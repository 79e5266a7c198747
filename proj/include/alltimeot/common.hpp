#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <functional>
#include <random>
#include <stdexcept>
#include <string>

namespace alltimeot {

/// Point cloud: one particle per row, one spatial coordinate per column.
using Points = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

using Rng = std::mt19937_64;

/// Invalid configuration value (bandwidth, weights, counts, ...).
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Caller broke an alignment or size precondition.
class ContractViolation : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

class OptimizerError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class SimulationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Velocity field evaluated for every row of `x` at a common time `t`.
using DriftField = std::function<Points(double t, const Points& x)>;

/// splitmix64 finalizer; the mixing step behind every derived seed.
inline std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Derive an independent stream seed from a master seed and a path of tags,
/// e.g. derive_seed(master, {stage, member}). Order of tags matters.
inline std::uint64_t derive_seed(std::uint64_t master, std::initializer_list<std::uint64_t> path) {
  std::uint64_t s = mix64(master);
  for (auto tag : path) s = mix64(s ^ mix64(tag + 0x632be59bd9b4e019ULL));
  return s;
}

inline Rng make_rng(std::uint64_t master, std::initializer_list<std::uint64_t> path) {
  return Rng(derive_seed(master, path));
}

/// Stage tags used with derive_seed.
namespace stage {
inline constexpr std::uint64_t batches = 1;
inline constexpr std::uint64_t init = 2;
inline constexpr std::uint64_t simulate = 3;
inline constexpr std::uint64_t reference = 4;
inline constexpr std::uint64_t metrics = 5;
inline constexpr std::uint64_t baseline = 6;
inline constexpr std::uint64_t adaptive = 7;
inline constexpr std::uint64_t initial_state = 8;
}  // namespace stage

}  // namespace alltimeot
