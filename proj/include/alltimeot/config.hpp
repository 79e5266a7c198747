#pragma once

#include "alltimeot/baselines.hpp"
#include "alltimeot/drift_models.hpp"
#include "alltimeot/marginal_flows.hpp"
#include "alltimeot/metrics.hpp"
#include "alltimeot/optimizers.hpp"
#include "alltimeot/penalty_estimator.hpp"

#include <json.hpp>

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace alltimeot {

using Json = nlohmann::json;

struct SamplingConfig {
  int M = 50;
  int N = 25;
  int N0 = 50;
  TimeMode time_mode = TimeMode::grid;
  int ensemble = 30;  ///< K_ens pre-cached batches
};

struct NamedModel {
  std::string name;
  ModelSpec spec;
};

struct OptimizerSettings {
  /// "auto" picks the quasi-Newton method for dictionaries and the adaptive one for MLPs.
  std::string method = "auto";
  QuasiNewtonConfig qn;
  FirstOrderConfig adaptive;
};

struct EvalConfig {
  std::vector<double> times = {0.0, 0.25, 0.5, 0.75, 1.0};
  GridSpec grid;
  /// Monte-Carlo drift MSE over a box instead of the tensor grid.
  bool monte_carlo = false;
  int mc_points = 2000;
  int mc_slices = 15;
  double mc_lo = -3.0, mc_hi = 3.0;
  int particles = 5000;
  int steps = 1000;
  int projections = 200;
  int mmd_max_points = 5000;
  double mmd_h = 1.0;
  /// Also evaluate the true drift and the zero drift.
  bool references = true;
  /// Emit drift slices and marginal histograms for plotting.
  bool plot_data = true;
};

struct BaselineConfig {
  std::vector<std::string> methods = {"wot", "mmot", "flow_matching"};
  std::vector<int> wot_snapshots = {5, 10, 20, 50};
  std::vector<int> mmot_snapshots = {5};
  int per_snapshot = 200;
  int sim_particles = 2000;
  int sim_steps = 200;
  WotOptions wot;
  MmotOptions mmot;
  /// "drift_mse" scores MMOT cells against the true drift, "objective" by their own loss.
  std::string mmot_select = "drift_mse";
  FlowMatchingOptions flow_matching;
  std::string flow_matching_features = "quad_t_1d";
};

struct SweepConfig {
  std::vector<int> M = {10, 15, 20, 30, 50};
  std::vector<int> N = {5, 10, 15, 25, 40};
  std::vector<double> lambda = {1e1, 1e2, 1e3, 1e4, 1e5};
};

struct ExperimentConfig {
  std::string experiment = "exp1";
  MarginalFlow flow;
  std::vector<NamedModel> models;
  LossConfig loss;
  SamplingConfig sampling;
  OptimizerSettings optimizer;
  bool quadratic_cache = true;
  std::uint64_t seed = 0;
  /// Independent realizations; realization r uses seed + r.
  int repeats = 1;
  int threads = 1;
  EvalConfig eval;
  BaselineConfig baselines;
  SweepConfig sweep;
  std::vector<int> dims = {1, 2, 3, 5, 8, 10};

  std::vector<std::uint64_t> seeds() const;
  void validate() const;
};

const std::vector<std::string>& experiment_names();

/// Built-in defaults for a named experiment.
ExperimentConfig default_config(const std::string& experiment);

Json to_json(const ExperimentConfig& config);
ExperimentConfig config_from_json(const Json& j);

/// Set a dotted path ("loss.lambda=5000", "models.0.features=tanh_1d"). The value
/// is parsed as JSON when possible and kept as a string otherwise.
void apply_override(Json& j, const std::string& assignment);

/// Defaults for `experiment`, then the file at `path` (a partial JSON object),
/// then the overrides, then the seed. Unknown keys are rejected.
ExperimentConfig load_config(const std::string& experiment, const std::optional<std::string>& path,
                             const std::vector<std::string>& overrides, std::optional<std::uint64_t> seed);

/// 64-bit FNV-1a of the canonical JSON serialization.
std::uint64_t config_hash(const ExperimentConfig& config);

}  // namespace alltimeot
