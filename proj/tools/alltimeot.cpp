#include "alltimeot/config.hpp"
#include "alltimeot/emit.hpp"
#include "alltimeot/harness.hpp"

#include <CLI11.hpp>

#include <cmath>
#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

using namespace alltimeot;

namespace {

void print_summary(const ExperimentReport& report) {
  for (const auto& s : summarize(report)) {
    std::printf("%-18s seeds=%d", s.method.c_str(), s.seeds);
    if (!std::isnan(s.drift_mse_total)) std::printf("  mse=%.4g (per comp %.4g)", s.drift_mse_total, s.drift_mse_per_component);
    if (!std::isnan(s.mean_W2)) std::printf("  W2=%.4g max=%.4g", s.mean_W2, s.max_W2);
    if (!std::isnan(s.mean_SW2)) std::printf("  SW2=%.4g MMD=%.4g", s.mean_SW2, s.mean_MMD);
    std::printf("\n");
  }
  for (const auto& r : report.sweep)
    std::printf("%-8s %-10g mse=%.4g +- %.3g  time=%.3gs\n", r.param.c_str(), r.value, r.mse_mean, r.mse_std, r.time_s);
  for (const auto& f : report.failures)
    std::printf("FAILED %s [%s, seed %llu]: %s\n", f.stage.c_str(), f.method.c_str(),
                static_cast<unsigned long long>(f.seed), f.message.c_str());
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"All-time optimal transport drift estimation experiments"};
  std::string experiment;
  std::optional<std::string> config_path;
  std::optional<std::uint64_t> seed;
  std::string out_dir;
  std::vector<std::string> overrides;
  bool print_config = false;

  app.add_option("experiment", experiment, "Experiment to run")
      ->required()
      ->check(CLI::IsMember(experiment_names()));
  app.add_option("--config", config_path, "JSON config (partial; merged over the experiment defaults)");
  app.add_option("--seed", seed, "Master seed; realization r uses seed + r");
  app.add_option("--out", out_dir, "Output directory (default results/<experiment>)");
  app.add_option("--override", overrides, "Dotted key assignment, e.g. loss.lambda=5000")->take_all();
  app.add_flag("--print-config", print_config, "Print the resolved config and exit");
  CLI11_PARSE(app, argc, argv);

  try {
    const ExperimentConfig config = load_config(experiment, config_path, overrides, seed);
    if (print_config) {
      std::cout << to_json(config).dump(2) << '\n';
      return 0;
    }
    if (out_dir.empty()) out_dir = "results/" + experiment;
    const ExperimentReport report = run_experiment(config);
    emit_tables(report, out_dir);
    print_summary(report);
    std::printf("wrote %s (%.1fs)\n", out_dir.c_str(), report.timings.at("total"));
    return report.complete() ? 0 : 2;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
