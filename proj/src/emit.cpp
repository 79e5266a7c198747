#include "alltimeot/emit.hpp"

#include <Eigen/Core>

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <sys/utsname.h>

namespace alltimeot {

namespace {

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  return out;
}

std::vector<std::vector<std::string>> read_csv(const std::string& path, const std::string& expected_header) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path);
  std::string line;
  if (!std::getline(in, line) || line != expected_header) throw std::runtime_error(path + ": unexpected header");
  std::vector<std::vector<std::string>> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    rows.push_back(std::move(cells));
  }
  return rows;
}

double parse_double(const std::string& s) {
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (end == s.c_str() || *end != '\0') throw std::runtime_error("not a number: " + s);
  return v;
}

std::uint64_t parse_u64(const std::string& s) { return std::stoull(s); }

void expect_cols(const std::vector<std::string>& row, std::size_t n) {
  if (row.size() != n) throw std::runtime_error("CSV row has the wrong number of columns");
}

const char* kMetricsHeader = "experiment,method,seed,t,W2,SW2,MMD";
const char* kDriftHeader = "experiment,method,seed,drift_mse_total,drift_mse_per_component";
const char* kSweepHeader = "param,value,mse_mean,mse_std,time_s";

Json nan_safe(double v) { return std::isfinite(v) ? Json(v) : Json(nullptr); }

Json environment(const ExperimentConfig& config) {
  Json env;
#ifdef __VERSION__
  env["compiler"] = __VERSION__;
#endif
  env["cplusplus"] = static_cast<long>(__cplusplus);
  env["eigen"] = std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                 std::to_string(EIGEN_MINOR_VERSION);
#ifdef _OPENMP
  env["openmp"] = static_cast<long>(_OPENMP);
#else
  env["openmp"] = nullptr;
#endif
  struct utsname u;
  if (uname(&u) == 0) {
    env["system"] = u.sysname;
    env["release"] = u.release;
    env["machine"] = u.machine;
  }
  env["threads"] = config.threads;
  return env;
}

}  // namespace

std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void write_metrics_csv(const std::string& path, const std::vector<MetricRow>& rows) {
  auto out = open_out(path);
  out << kMetricsHeader << '\n';
  for (const auto& r : rows)
    out << r.experiment << ',' << r.method << ',' << r.seed << ',' << format_double(r.t) << ',' << format_double(r.W2)
        << ',' << format_double(r.SW2) << ',' << format_double(r.MMD) << '\n';
}

void write_drift_csv(const std::string& path, const std::vector<DriftRow>& rows) {
  auto out = open_out(path);
  out << kDriftHeader << '\n';
  for (const auto& r : rows)
    out << r.experiment << ',' << r.method << ',' << r.seed << ',' << format_double(r.drift_mse_total) << ','
        << format_double(r.drift_mse_per_component) << '\n';
}

void write_sweep_csv(const std::string& path, const std::vector<SweepRow>& rows) {
  auto out = open_out(path);
  out << kSweepHeader << '\n';
  for (const auto& r : rows)
    out << r.param << ',' << format_double(r.value) << ',' << format_double(r.mse_mean) << ','
        << format_double(r.mse_std) << ',' << format_double(r.time_s) << '\n';
}

std::vector<MetricRow> read_metrics_csv(const std::string& path) {
  std::vector<MetricRow> out;
  for (const auto& c : read_csv(path, kMetricsHeader)) {
    expect_cols(c, 7);
    out.push_back({c[0], c[1], parse_u64(c[2]), parse_double(c[3]), parse_double(c[4]), parse_double(c[5]),
                   parse_double(c[6])});
  }
  return out;
}

std::vector<DriftRow> read_drift_csv(const std::string& path) {
  std::vector<DriftRow> out;
  for (const auto& c : read_csv(path, kDriftHeader)) {
    expect_cols(c, 5);
    out.push_back({c[0], c[1], parse_u64(c[2]), parse_double(c[3]), parse_double(c[4])});
  }
  return out;
}

std::vector<SweepRow> read_sweep_csv(const std::string& path) {
  std::vector<SweepRow> out;
  for (const auto& c : read_csv(path, kSweepHeader)) {
    expect_cols(c, 5);
    out.push_back({c[0], parse_double(c[1]), parse_double(c[2]), parse_double(c[3]), parse_double(c[4])});
  }
  return out;
}

Json conventions(const ExperimentConfig& c) {
  const auto& g = c.eval.grid;
  const auto& b = c.baselines;
  return {
      {"batch_times", c.sampling.time_mode == TimeMode::grid ? "midpoints T(m+1/2)/M" : "iid uniform on [0, T]"},
      {"same_slice_mask", c.loss.same_slice_mask},
      {"kernel", {{"profile", "gaussian"}, {"h", c.loss.kernel.h}}},
      {"evaluation_times", c.eval.times},
      {"drift_mse",
       c.eval.monte_carlo
           ? Json{{"mode", "monte_carlo"},
                  {"points_per_slice", c.eval.mc_points},
                  {"slices", c.eval.mc_slices},
                  {"box", {c.eval.mc_lo, c.eval.mc_hi}}}
           : Json{{"mode", "grid"},
                  {"nt", g.nt},
                  {"nx_per_axis", g.nx},
                  {"t_range", {g.t_lo, g.t_hi}},
                  {"x_lo", std::vector<double>(g.x_lo.data(), g.x_lo.data() + g.x_lo.size())},
                  {"x_hi", std::vector<double>(g.x_hi.data(), g.x_hi.data() + g.x_hi.size())}}},
      {"simulation",
       {{"scheme", c.loss.sigma > 0 ? "euler_maruyama" : "explicit_euler"},
        {"particles", c.eval.particles},
        {"steps", c.eval.steps}}},
      {"w2", "exact 1-d quantile coupling; quantile levels (i+1/2)/n for unequal sizes"},
      {"sliced_w2_projections", c.eval.projections},
      {"mmd", {{"estimator", "V-statistic"}, {"bandwidth", c.eval.mmd_h}, {"max_points", c.eval.mmd_max_points}, {"subsample", "first rows"}}},
      {"sinkhorn",
       {{"epsilon", b.wot.epsilon > 0 ? Json(b.wot.epsilon) : Json(nullptr)},
        {"epsilon_scale_of_mean_cost", b.wot.eps_scale},
        {"max_iter", b.wot.max_iter},
        {"tol", b.wot.tol}}},
      {"wot_extension", "nearest source sample; piecewise constant in time"},
      {"baseline_snapshot_times", "linspace(0, T, count) inclusive"},
      {"mmot_drift", "piecewise constant per segment from consecutive affine maps"},
      {"baseline_simulation", {{"particles", b.sim_particles}, {"steps", b.sim_steps}}},
      {"seed_derivation",
       {{"mixer", "splitmix64"},
        {"realization", "seed + r"},
        {"stages",
         {{"batches", stage::batches},
          {"init", stage::init},
          {"simulate", stage::simulate},
          {"reference", stage::reference},
          {"metrics", stage::metrics},
          {"baseline", stage::baseline},
          {"adaptive", stage::adaptive},
          {"initial_state", stage::initial_state}}}}},
      {"float_format", "17 significant digits"},
  };
}

Json make_manifest(const ExperimentReport& report) {
  const ExperimentConfig& c = report.config;
  char hash[24];
  std::snprintf(hash, sizeof hash, "%016llx", static_cast<unsigned long long>(config_hash(c)));
  Json fits = Json::array();
  for (const auto& f : report.fits)
    fits.push_back({{"method", f.method},
                    {"seed", f.seed},
                    {"optimizer", f.optimizer},
                    {"params", std::vector<double>(f.params.data(), f.params.data() + f.params.size())},
                    {"loss", nan_safe(f.loss)},
                    {"iterations", f.iterations},
                    {"converged", f.converged},
                    {"seconds", f.seconds}});
  Json failures = Json::array();
  for (const auto& f : report.failures)
    failures.push_back({{"stage", f.stage}, {"method", f.method}, {"seed", f.seed}, {"message", f.message}});
  Json summary = Json::array();
  for (const auto& s : summarize(report))
    summary.push_back({{"method", s.method},
                       {"seeds", s.seeds},
                       {"mean_W2", nan_safe(s.mean_W2)},
                       {"max_W2", nan_safe(s.max_W2)},
                       {"final_W2", nan_safe(s.final_W2)},
                       {"mean_SW2", nan_safe(s.mean_SW2)},
                       {"mean_MMD", nan_safe(s.mean_MMD)},
                       {"drift_mse_total", nan_safe(s.drift_mse_total)},
                       {"drift_mse_per_component", nan_safe(s.drift_mse_per_component)}});
  return {
      {"version", kVersion},
      {"experiment", c.experiment},
      {"config", to_json(c)},
      {"config_hash", hash},
      {"seeds", report.seeds},
      {"environment", environment(c)},
      {"conventions", conventions(c)},
      {"complete", report.complete()},
      {"failures", failures},
      {"fits", fits},
      {"summary", summary},
      {"timings", report.timings},
      {"notes", report.notes},
  };
}

void validate_manifest(const Json& m) {
  auto need = [&](const char* key, bool ok) {
    if (!m.contains(key)) throw std::runtime_error(std::string("manifest lacks ") + key);
    if (!ok) throw std::runtime_error(std::string("manifest field has the wrong type: ") + key);
  };
  if (!m.is_object()) throw std::runtime_error("manifest is not an object");
  need("version", m.contains("version") && m["version"].is_string());
  need("experiment", m.contains("experiment") && m["experiment"].is_string());
  need("config", m.contains("config") && m["config"].is_object());
  need("config_hash", m.contains("config_hash") && m["config_hash"].is_string() && m["config_hash"].get<std::string>().size() == 16);
  need("seeds", m.contains("seeds") && m["seeds"].is_array());
  need("environment", m.contains("environment") && m["environment"].is_object());
  need("conventions", m.contains("conventions") && m["conventions"].is_object());
  need("complete", m.contains("complete") && m["complete"].is_boolean());
  need("failures", m.contains("failures") && m["failures"].is_array());
  need("fits", m.contains("fits") && m["fits"].is_array());
  need("timings", m.contains("timings") && m["timings"].is_object());
  for (const auto& f : m["fits"])
    if (!f.contains("method") || !f.contains("seed") || !f.contains("params") || !f["params"].is_array())
      throw std::runtime_error("manifest fit entry is malformed");
}

void emit_tables(const ExperimentReport& report, const std::string& out_dir) {
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw std::runtime_error("cannot create " + out_dir + ": " + ec.message());
  const std::filesystem::path dir(out_dir);
  write_metrics_csv((dir / "metrics.csv").string(), report.metrics);
  write_drift_csv((dir / "drift.csv").string(), report.drift);
  if (!report.sweep.empty()) write_sweep_csv((dir / "sweep.csv").string(), report.sweep);

  if (!report.slices.empty()) {
    auto out = open_out((dir / "drift_slices.csv").string());
    out << "method,t,x,component,u\n";
    for (const auto& s : report.slices)
      for (Eigen::Index j = 0; j < s.u.size(); ++j)
        out << s.method << ',' << format_double(s.t) << ',' << format_double(s.x) << ',' << j + 1 << ','
            << format_double(s.u(j)) << '\n';
  }
  if (!report.histograms.empty()) {
    auto out = open_out((dir / "histogram.csv").string());
    out << "method,t,bin_lo,bin_hi,density\n";
    for (const auto& h : report.histograms)
      out << h.method << ',' << format_double(h.t) << ',' << format_double(h.lo) << ',' << format_double(h.hi) << ','
          << format_double(h.density) << '\n';
  }
  {
    auto out = open_out((dir / "config.json").string());
    out << to_json(report.config).dump(2) << '\n';
  }
  auto out = open_out((dir / "manifest.json").string());
  out << make_manifest(report).dump(2) << '\n';
}

}  // namespace alltimeot
