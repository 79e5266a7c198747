#include <doctest.h>

#include "alltimeot/emit.hpp"
#include "alltimeot/harness.hpp"

#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <random>

using namespace alltimeot;

namespace {

std::string temp_dir(const std::string& name) {
  const auto p = std::filesystem::temp_directory_path() / name;
  std::filesystem::remove_all(p);
  return p.string();
}

/// exp1 shrunk to run in well under a second.
ExperimentConfig tiny_exp1() {
  ExperimentConfig c = default_config("exp1");
  c.sampling = {8, 5, 10, TimeMode::grid, 2};
  c.optimizer.qn.restarts = 2;
  c.repeats = 2;
  c.eval.particles = 300;
  c.eval.steps = 40;
  c.eval.projections = 10;
  c.eval.grid.nt = 5;
  c.eval.grid.nx = 9;
  return c;
}

bool same_bits(double a, double b) { return std::memcmp(&a, &b, sizeof a) == 0; }

}  // namespace

TEST_CASE("17 significant digits round-trip every double exactly") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> mant(-1.0, 1.0);
  std::uniform_int_distribution<int> expo(-300, 300);
  for (int i = 0; i < 20000; ++i) {
    const double v = std::ldexp(mant(rng), expo(rng));
    CHECK(same_bits(std::strtod(format_double(v).c_str(), nullptr), v));
  }
  for (double v : {0.0, -0.0, 1.0, 0.1, 1e-320, std::numeric_limits<double>::max(), std::numeric_limits<double>::min()})
    CHECK(same_bits(std::strtod(format_double(v).c_str(), nullptr), v));
  CHECK(format_double(std::numeric_limits<double>::quiet_NaN()) == "nan");
}

TEST_CASE("CSV tables read back exactly") {
  const std::string dir = temp_dir("alltimeot_csv_test");
  std::filesystem::create_directories(dir);
  std::vector<MetricRow> m = {{"exp1", "affine", 7, 0.25, 0.1 / 3, std::sqrt(2.0), 1e-17},
                              {"exp4", "true", 8, 1.0, std::numeric_limits<double>::quiet_NaN(), 0.5, 0.25}};
  std::vector<DriftRow> d = {{"exp2", "quad_t", 0, 0.635123456789, 0.635123456789 / 3}};
  std::vector<SweepRow> s = {{"lambda", 1e5, 0.104, 0.013, 2.0 / 7}};
  write_metrics_csv(dir + "/m.csv", m);
  write_drift_csv(dir + "/d.csv", d);
  write_sweep_csv(dir + "/s.csv", s);
  auto m2 = read_metrics_csv(dir + "/m.csv");
  auto d2 = read_drift_csv(dir + "/d.csv");
  auto s2 = read_sweep_csv(dir + "/s.csv");
  REQUIRE(m2.size() == 2);
  CHECK(m2[0].method == "affine");
  CHECK(m2[0].seed == 7);
  CHECK(same_bits(m2[0].W2, m[0].W2));
  CHECK(same_bits(m2[0].SW2, m[0].SW2));
  CHECK(same_bits(m2[0].MMD, m[0].MMD));
  CHECK(std::isnan(m2[1].W2));
  REQUIRE(d2.size() == 1);
  CHECK(same_bits(d2[0].drift_mse_per_component, d[0].drift_mse_per_component));
  REQUIRE(s2.size() == 1);
  CHECK(same_bits(s2[0].time_s, s[0].time_s));
  CHECK_THROWS(read_drift_csv(dir + "/m.csv"));
}

TEST_CASE("fit experiment: rows, references and manifest") {
  const ExperimentConfig c = tiny_exp1();
  const ExperimentReport r = run_experiment(c);
  CHECK(r.complete());
  CHECK(r.seeds == std::vector<std::uint64_t>{0, 1});
  // affine, true, zero for each seed
  CHECK(r.drift.size() == 6);
  CHECK(r.metrics.size() == 6 * c.eval.times.size());
  CHECK(r.fits.size() == 2);
  for (const auto& row : r.drift)
    if (row.method == "true") CHECK(row.drift_mse_total == 0.0);
  const auto sums = summarize(r);
  CHECK(find_summary(sums, "zero").drift_mse_total == doctest::Approx(4.0));
  CHECK(find_summary(sums, "true").mean_W2 < find_summary(sums, "zero").mean_W2);
  CHECK_THROWS(find_summary(sums, "mlp"));
  CHECK(!r.slices.empty());
  CHECK(!r.histograms.empty());

  const Json m = make_manifest(r);
  CHECK_NOTHROW(validate_manifest(m));
  CHECK(m["conventions"]["sliced_w2_projections"] == 10);
  Json broken = m;
  broken.erase("seeds");
  CHECK_THROWS(validate_manifest(broken));
}

TEST_CASE("replay from the emitted config reproduces every metric bit for bit") {
  const std::string dir = temp_dir("alltimeot_replay_test");
  const ExperimentReport first = run_experiment(tiny_exp1());
  emit_tables(first, dir);
  for (const char* f : {"metrics.csv", "drift.csv", "manifest.json", "config.json", "drift_slices.csv", "histogram.csv"})
    CHECK(std::filesystem::exists(dir + "/" + f));
  std::ifstream in(dir + "/manifest.json");
  CHECK_NOTHROW(validate_manifest(Json::parse(in)));

  const ExperimentConfig again = load_config("exp1", dir + "/config.json", {}, std::nullopt);
  CHECK(config_hash(again) == config_hash(first.config));
  const std::string dir2 = temp_dir("alltimeot_replay_test2");
  emit_tables(run_experiment(again), dir2);
  auto read = [](const std::string& p) {
    std::ifstream f(p);
    return std::string(std::istreambuf_iterator<char>(f), {});
  };
  CHECK(read(dir + "/metrics.csv") == read(dir2 + "/metrics.csv"));
  CHECK(read(dir + "/drift.csv") == read(dir2 + "/drift.csv"));
  CHECK(read(dir + "/drift_slices.csv") == read(dir2 + "/drift_slices.csv"));
}

TEST_CASE("a failing model is recorded and the others still run") {
  ExperimentConfig c = tiny_exp1();
  c.repeats = 1;
  NamedModel bad;
  bad.name = "wrong_dim";
  bad.spec.features = "affine_d";
  bad.spec.d = 2;
  c.models.insert(c.models.begin(), bad);
  const ExperimentReport r = run_experiment(c);
  CHECK_FALSE(r.complete());
  REQUIRE(r.failures.size() == 1);
  CHECK(r.failures[0].stage == "fit");
  CHECK(r.failures[0].method == "wrong_dim");
  CHECK(find_summary(summarize(r), "affine").seeds == 1);
}

TEST_CASE("fit_model is deterministic per seed and member") {
  const ExperimentConfig c = tiny_exp1();
  auto a = fit_model(c, c.models[0], 5, 0);
  auto b = fit_model(c, c.models[0], 5, 0);
  auto other = fit_model(c, c.models[0], 6, 0);
  CHECK(a.record.params == b.record.params);
  CHECK(a.record.params != other.record.params);
  CHECK(a.record.optimizer == "qn");
}

TEST_CASE("adaptive optimizer paths agree with and without the cached quadratic") {
  ExperimentConfig c = tiny_exp1();
  c.optimizer.method = "adaptive";
  c.optimizer.adaptive.iterations = 50;
  c.optimizer.adaptive.batches_per_step = 1;
  for (const char* family : {"dictionary", "mlp"}) {
    NamedModel nm;
    nm.name = family;
    nm.spec.family = family;
    nm.spec.hidden = {4};
    c.quadratic_cache = true;
    auto cached = fit_model(c, nm, 2, 0);
    c.quadratic_cache = false;
    auto direct = fit_model(c, nm, 2, 0);
    INFO(family);
    CHECK((cached.record.params - direct.record.params).norm() <= 1e-8 * (1.0 + direct.record.params.norm()));
    CHECK(cached.record.loss == doctest::Approx(direct.record.loss).epsilon(1e-9));
  }
}

TEST_CASE("sweeps and scans emit one row per cell") {
  ExperimentConfig c = default_config("sensitivity");
  c.sampling = {6, 4, 8, TimeMode::grid, 2};
  c.repeats = 2;
  c.sweep.M = {4, 6};
  c.sweep.N = {3};
  c.sweep.lambda = {10.0, 1000.0};
  c.eval.grid.nt = 5;
  c.eval.grid.nx = 9;
  const ExperimentReport s = run_experiment(c);
  REQUIRE(s.sweep.size() == 5);
  CHECK(s.sweep[0].param == "M");
  CHECK(s.sweep[4].param == "lambda");
  // such small batches can make the loss unbounded; those seeds become recorded failures
  CHECK(s.drift.size() + s.failures.size() == 10);
  for (const auto& f : s.failures) CHECK(f.message.find("unbounded") != std::string::npos);
  for (const auto& row : s.sweep) {
    if (std::isnan(row.mse_mean)) continue;
    CHECK(std::isfinite(row.mse_mean));
    CHECK(row.mse_std >= 0.0);
  }

  ExperimentConfig d = default_config("dimscan");
  d.sampling = {6, 4, 8, TimeMode::grid, 2};
  d.repeats = 1;
  d.dims = {1, 3};
  d.eval.mc_points = 50;
  d.eval.mc_slices = 3;
  const ExperimentReport scan = run_experiment(d);
  CHECK(scan.complete());
  REQUIRE(scan.sweep.size() == 4);
  CHECK(scan.sweep[2].param == "d");
  CHECK(scan.sweep[2].value == 3.0);
  CHECK(scan.sweep[3].mse_mean == doctest::Approx(3.0 * scan.sweep[2].mse_mean));
}

TEST_CASE("baseline suite runs every method and isolates failures") {
  ExperimentConfig c = default_config("baselines");
  c.repeats = 1;
  c.baselines.wot_snapshots = {3};
  c.baselines.mmot_snapshots = {3};
  c.baselines.mmot.lambdas = {1e3};
  c.baselines.mmot.alphas = {1.0};
  c.baselines.mmot.inits = 1;
  c.baselines.per_snapshot = 40;
  c.baselines.sim_particles = 100;
  c.baselines.sim_steps = 20;
  c.baselines.flow_matching.pairs = 500;
  c.eval.grid.nt = 5;
  c.eval.grid.nx = 9;
  c.eval.references = true;
  const ExperimentReport r = run_experiment(c);
  CHECK(r.complete());
  const auto sums = summarize(r);
  for (const char* m : {"wot_M3", "mmot_N3", "flow_matching", "zero"}) CHECK_NOTHROW(find_summary(sums, m));
  CHECK(r.notes.contains("wot"));
  CHECK(r.notes.contains("mmot"));

  c.baselines.wot.max_iter = 1;
  c.baselines.wot.tol = 1e-300;
  c.baselines.methods = {"wot", "flow_matching"};
  const ExperimentReport broken = run_experiment(c);
  CHECK(find_summary(summarize(broken), "flow_matching").seeds == 1);
}
