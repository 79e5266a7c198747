#pragma once

#include "alltimeot/common.hpp"

#include <string>
#include <vector>

namespace alltimeot {

struct SimulationConfig {
  int steps = 1000;
  double T = 1.0;
  double sigma = 0.0;
  std::vector<double> snapshot_times = {0.0, 0.25, 0.5, 0.75, 1.0};
  /// Particles are advanced in fixed blocks; SDE noise is seeded per block so
  /// results do not depend on how blocks are spread over workers.
  int block_size = 4096;
  int threads = 1;

  void validate() const;
};

struct Snapshots {
  std::vector<double> times;
  std::vector<Points> states;

  const Points& at(double t) const;
};

/// Time grid actually stepped: T/steps spacing with snapshot times inserted.
std::vector<double> step_grid(const SimulationConfig& config);

/// Explicit Euler X_{k+1} = X_k + dt u(t_k, X_k).
Snapshots simulate_ode(const DriftField& drift, const Points& x0, const SimulationConfig& config);

/// Euler-Maruyama X_{k+1} = X_k + dt u(t_k, X_k) + sigma sqrt(dt) xi_k.
Snapshots simulate_sde(const DriftField& drift, const Points& x0, const SimulationConfig& config, Rng& rng);

/// CSV with columns time, particle, x1..xd.
void write_snapshots_csv(const std::string& path, const Snapshots& snaps);

}  // namespace alltimeot
