#include "alltimeot/simulators.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace alltimeot {

void SimulationConfig::validate() const {
  if (steps < 1) throw ConfigError("simulation needs at least one step");
  if (!(T > 0.0)) throw ConfigError("simulation horizon must be positive");
  if (!(sigma >= 0.0)) throw ConfigError("sigma must be nonnegative");
  if (block_size < 1) throw ConfigError("block size must be >= 1");
  if (threads < 1) throw ConfigError("threads must be >= 1");
  if (!std::is_sorted(snapshot_times.begin(), snapshot_times.end())) throw ConfigError("snapshot times must be sorted");
  for (double t : snapshot_times)
    if (!(t >= 0.0 && t <= T)) throw ConfigError("snapshot time outside [0, T]");
}

const Points& Snapshots::at(double t) const {
  for (std::size_t i = 0; i < times.size(); ++i)
    if (std::abs(times[i] - t) <= 1e-12) return states[i];
  throw std::out_of_range("no snapshot at the requested time");
}

std::vector<double> step_grid(const SimulationConfig& cfg) {
  std::vector<double> grid;
  grid.reserve(cfg.steps + 1 + cfg.snapshot_times.size());
  for (int k = 0; k <= cfg.steps; ++k) grid.push_back(cfg.T * k / cfg.steps);
  for (double t : cfg.snapshot_times) grid.push_back(t);
  std::sort(grid.begin(), grid.end());
  std::vector<double> out;
  for (double t : grid)
    if (out.empty() || t - out.back() > 1e-12 * cfg.T) out.push_back(t);
  return out;
}

namespace {

Snapshots run(const DriftField& drift, const Points& x0, const SimulationConfig& cfg, std::uint64_t noise_seed) {
  cfg.validate();
  const std::vector<double> grid = step_grid(cfg);
  const Eigen::Index n = x0.rows();
  const int d = static_cast<int>(x0.cols());
  Snapshots snaps;
  snaps.times = cfg.snapshot_times;
  snaps.states.assign(cfg.snapshot_times.size(), Points(n, d));

  // snapshot index for each grid node (or -1)
  std::vector<std::vector<std::size_t>> snap_at(grid.size());
  for (std::size_t s = 0; s < cfg.snapshot_times.size(); ++s) {
    auto it = std::min_element(grid.begin(), grid.end(), [&](double a, double b) {
      return std::abs(a - cfg.snapshot_times[s]) < std::abs(b - cfg.snapshot_times[s]);
    });
    snap_at[static_cast<std::size_t>(it - grid.begin())].push_back(s);
  }

  const Eigen::Index nblocks = (n + cfg.block_size - 1) / cfg.block_size;
  std::vector<std::string> errors(static_cast<std::size_t>(nblocks));

#ifdef _OPENMP
#pragma omp parallel for schedule(static) num_threads(cfg.threads)
#endif
  for (Eigen::Index b = 0; b < nblocks; ++b) {
    const Eigen::Index lo = b * cfg.block_size;
    const Eigen::Index len = std::min<Eigen::Index>(cfg.block_size, n - lo);
    Points x = x0.middleRows(lo, len);
    Rng rng(derive_seed(noise_seed, {static_cast<std::uint64_t>(b)}));
    std::normal_distribution<double> normal(0.0, 1.0);
    try {
      for (std::size_t k = 0; k < grid.size(); ++k) {
        for (std::size_t s : snap_at[k]) snaps.states[s].middleRows(lo, len) = x;
        if (k + 1 == grid.size()) break;
        const double dt = grid[k + 1] - grid[k];
        Points u = drift(grid[k], x);
        if (u.rows() != len || u.cols() != d) throw ContractViolation("drift returned the wrong shape");
        x += dt * u;
        if (cfg.sigma > 0.0) {
          const double scale = cfg.sigma * std::sqrt(dt);
          for (Eigen::Index i = 0; i < len; ++i)
            for (int j = 0; j < d; ++j) x(i, j) += scale * normal(rng);
        }
        for (Eigen::Index i = 0; i < len; ++i) {
          if (!x.row(i).allFinite()) {
            std::ostringstream os;
            os << "non-finite state for particle " << lo + i << " at step " << k + 1 << " (t=" << grid[k + 1] << ")";
            throw SimulationError(os.str());
          }
        }
      }
    } catch (const std::exception& e) {
      errors[static_cast<std::size_t>(b)] = e.what();
    }
  }
  for (const auto& e : errors)
    if (!e.empty()) throw SimulationError(e);
  return snaps;
}

}  // namespace

Snapshots simulate_ode(const DriftField& drift, const Points& x0, const SimulationConfig& config) {
  SimulationConfig cfg = config;
  cfg.sigma = 0.0;
  return run(drift, x0, cfg, 0);
}

Snapshots simulate_sde(const DriftField& drift, const Points& x0, const SimulationConfig& config, Rng& rng) {
  const std::uint64_t seed = rng();
  return run(drift, x0, config, seed);
}

void write_snapshots_csv(const std::string& path, const Snapshots& snaps) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  out << std::setprecision(17);
  const int d = snaps.states.empty() ? 0 : static_cast<int>(snaps.states.front().cols());
  out << "time,particle";
  for (int j = 0; j < d; ++j) out << ",x" << j + 1;
  out << '\n';
  for (std::size_t s = 0; s < snaps.times.size(); ++s) {
    const Points& x = snaps.states[s];
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      out << snaps.times[s] << ',' << i;
      for (int j = 0; j < d; ++j) out << ',' << x(i, j);
      out << '\n';
    }
  }
}

}  // namespace alltimeot
