#pragma once

#include "alltimeot/harness.hpp"

#include <string>
#include <vector>

namespace alltimeot {

inline constexpr const char* kVersion = "0.3.0";

/// Decimal with 17 significant digits; NaN as "nan".
std::string format_double(double v);

void write_metrics_csv(const std::string& path, const std::vector<MetricRow>& rows);
void write_drift_csv(const std::string& path, const std::vector<DriftRow>& rows);
void write_sweep_csv(const std::string& path, const std::vector<SweepRow>& rows);

std::vector<MetricRow> read_metrics_csv(const std::string& path);
std::vector<DriftRow> read_drift_csv(const std::string& path);
std::vector<SweepRow> read_sweep_csv(const std::string& path);

/// Conventions every run depends on (grid sizes, epsilons, projection counts, ...).
Json conventions(const ExperimentConfig& config);
Json make_manifest(const ExperimentReport& report);

/// Throws std::runtime_error naming the first missing or mistyped field.
void validate_manifest(const Json& manifest);

/// Writes metrics.csv, drift.csv, sweep.csv, drift_slices.csv, histogram.csv,
/// config.json (replayable with --config) and manifest.json into out_dir.
void emit_tables(const ExperimentReport& report, const std::string& out_dir);

}  // namespace alltimeot
