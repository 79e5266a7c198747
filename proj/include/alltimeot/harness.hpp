#pragma once

#include "alltimeot/config.hpp"
#include "alltimeot/simulators.hpp"

#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <vector>

namespace alltimeot {

/// Marginal metrics of one simulated method at one evaluation time. W2 is NaN for d > 1.
struct MetricRow {
  std::string experiment, method;
  std::uint64_t seed = 0;
  double t = 0.0;
  double W2 = 0.0, SW2 = 0.0, MMD = 0.0;
};

struct DriftRow {
  std::string experiment, method;
  std::uint64_t seed = 0;
  double drift_mse_total = 0.0;
  double drift_mse_per_component = 0.0;
};

struct SweepRow {
  std::string param;
  double value = 0.0;
  double mse_mean = 0.0, mse_std = 0.0;
  double time_s = 0.0;
};

struct FitRecord {
  std::string method;
  std::uint64_t seed = 0;
  std::string optimizer;
  Vector params;
  double loss = 0.0;
  int iterations = 0;
  bool converged = false;
  double seconds = 0.0;
};

struct StageFailure {
  std::string stage, method;
  std::uint64_t seed = 0;
  std::string message;
};

/// Drift along the first coordinate (other coordinates at 0) for plotting.
struct SliceRow {
  std::string method;
  double t = 0.0, x = 0.0;
  Vector u;
};

/// Density histogram of the first coordinate of a simulated marginal.
struct HistogramRow {
  std::string method;
  double t = 0.0, lo = 0.0, hi = 0.0, density = 0.0;
};

struct ExperimentReport {
  ExperimentConfig config;
  std::vector<std::uint64_t> seeds;
  std::vector<MetricRow> metrics;
  std::vector<DriftRow> drift;
  std::vector<SweepRow> sweep;
  std::vector<FitRecord> fits;
  std::vector<StageFailure> failures;
  std::vector<SliceRow> slices;
  std::vector<HistogramRow> histograms;
  /// Wall-clock seconds per stage, summed over seeds and methods.
  std::map<std::string, double> timings;
  /// Convention values chosen at run time (Sinkhorn epsilons, MMOT selection, ...).
  Json notes = Json::object();

  bool complete() const { return failures.empty(); }
};

/// Per-method aggregates: median over seeds of the per-seed mean metrics and drift MSE.
struct MethodSummary {
  std::string method;
  int seeds = 0;
  double mean_W2 = 0.0, max_W2 = 0.0, mean_SW2 = 0.0, mean_MMD = 0.0;
  double drift_mse_total = 0.0, drift_mse_per_component = 0.0;
  /// W2 at the last evaluation time.
  double final_W2 = 0.0;
};

std::vector<MethodSummary> summarize(const ExperimentReport& report);
const MethodSummary& find_summary(const std::vector<MethodSummary>& summaries, const std::string& method);

/// A trained drift model with its record.
struct FittedModel {
  std::unique_ptr<DriftModel> model;
  FitRecord record;
};

/// Draws the ensemble for `seed`, initializes member `member` and minimizes the ensemble loss.
FittedModel fit_model(const ExperimentConfig& config, const NamedModel& model, std::uint64_t seed, int member);

/// Simulates `drift` from a fresh draw of mu_0 and compares against reference
/// samples at every evaluation time. `member` selects the noise and metric streams.
std::vector<MetricRow> evaluate_marginals(const ExperimentConfig& config, const DriftField& drift,
                                          const std::string& method, std::uint64_t seed, int member,
                                          int particles, int steps, std::vector<HistogramRow>* histograms = nullptr);

DriftRow evaluate_drift(const ExperimentConfig& config, const DriftField& drift, const std::string& method,
                        std::uint64_t seed, int member);

/// Dispatches on config.experiment.
ExperimentReport run_experiment(const ExperimentConfig& config);

/// Trains every configured model per seed, then simulates and scores it.
ExperimentReport run_fit_experiment(const ExperimentConfig& config);
/// One-at-a-time sweeps of M, N and lambda around the configured values.
ExperimentReport run_sensitivity(const ExperimentConfig& config);
/// Affine fits on the translation flow for every d in config.dims.
ExperimentReport run_dimension_scan(const ExperimentConfig& config);
/// WOT, MMOT and flow matching on the configured flow.
ExperimentReport run_baselines(const ExperimentConfig& config);

}  // namespace alltimeot
