#include "alltimeot/harness.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <sstream>

namespace alltimeot {

namespace {

constexpr int kTrueMember = 100;
constexpr int kZeroMember = 101;
constexpr int kWotMember = 200;
constexpr int kMmotMember = 300;
constexpr int kFlowMatchingMember = 400;
constexpr int kHistogramBins = 60;
constexpr int kSlicePoints = 81;

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

std::uint64_t tag(int v) { return static_cast<std::uint64_t>(v); }

double median(std::vector<double> v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

DriftField zero_field(int d) {
  return [d](double, const Points& x) { return Points::Zero(x.rows(), d); };
}

Points head_rows(const Points& x, int n) { return x.topRows(std::min<Eigen::Index>(x.rows(), n)); }

Vector as_vec(const Points& p) { return Eigen::Map<const Vector>(p.data(), p.size()); }

Points as_points(const Vector& v, int d) {
  return Eigen::Map<const Points>(v.data(), v.size() / d, d);
}

std::string resolve_method(const ExperimentConfig& config, const DriftModel& model) {
  if (config.optimizer.method != "auto") return config.optimizer.method;
  return model.linear_in_params() ? "qn" : "adaptive";
}

/// Calls `body`, recording a failure under `stage` instead of propagating.
template <class F>
bool guarded(ExperimentReport& report, const std::string& stage, const std::string& method, std::uint64_t seed,
             F&& body) {
  try {
    body();
    return true;
  } catch (const std::exception& e) {
    report.failures.push_back({stage, method, seed, e.what()});
    return false;
  }
}

void add_slices(const ExperimentConfig& config, const DriftField& drift, const std::string& method,
                ExperimentReport& report) {
  const int d = config.flow.dim();
  const double lo = config.eval.grid.x_lo.size() ? config.eval.grid.x_lo(0) : config.eval.mc_lo;
  const double hi = config.eval.grid.x_hi.size() ? config.eval.grid.x_hi(0) : config.eval.mc_hi;
  const std::vector<double> xs = linspace(lo, hi, kSlicePoints);
  Points x = Points::Zero(kSlicePoints, d);
  for (int i = 0; i < kSlicePoints; ++i) x(i, 0) = xs[i];
  for (double t : config.eval.times) {
    const Points u = drift(t, x);
    for (int i = 0; i < kSlicePoints; ++i) report.slices.push_back({method, t, xs[i], u.row(i).transpose()});
  }
}

void add_histograms(const ExperimentConfig& config, const std::string& method, double t, const Points& x,
                    std::vector<HistogramRow>& out) {
  const double lo = config.eval.grid.x_lo.size() ? config.eval.grid.x_lo(0) : config.eval.mc_lo;
  const double hi = config.eval.grid.x_hi.size() ? config.eval.grid.x_hi(0) : config.eval.mc_hi;
  const double width = (hi - lo) / kHistogramBins;
  std::vector<double> counts(kHistogramBins, 0.0);
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const double v = x(i, 0);
    if (v < lo || v > hi) continue;
    const int b = std::min(kHistogramBins - 1, static_cast<int>((v - lo) / width));
    counts[b] += 1.0;
  }
  for (int b = 0; b < kHistogramBins; ++b)
    out.push_back({method, t, lo + b * width, lo + (b + 1) * width, counts[b] / (x.rows() * width)});
}

LossConfig loss_for(const ExperimentConfig& config) {
  LossConfig loss = config.loss;
  loss.T = config.flow.T;
  loss.threads = config.threads;
  return loss;
}

/// A quadratic with a negative curvature direction has no minimizer.
void require_bounded(const QuadraticLoss& q) {
  const Vector eig = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(q.H, Eigen::EigenvaluesOnly).eigenvalues();
  if (eig.size() && eig(0) < -1e-10 * std::max(1.0, eig(eig.size() - 1))) {
    std::ostringstream os;
    os << "ensemble loss is unbounded below (smallest curvature " << eig(0) << ")";
    throw OptimizerError(os.str());
  }
}

/// Per-batch objective for the adaptive optimizer, backed by a cached quadratic when possible.
StochasticObjective batch_objective(const ExperimentConfig& config, const DriftModel& prototype,
                                    const std::vector<SampleBatch>& batches, const LossConfig& loss) {
  const bool cache = config.quadratic_cache;
  if (cache && prototype.linear_in_params()) {
    auto quads = std::make_shared<std::vector<QuadraticLoss>>();
    for (const auto& b : batches) quads->push_back(build_quadratic(prototype, {b}, loss));
    return [quads](const Vector& w, int k, Vector& grad) {
      const QuadraticLoss& q = (*quads)[k];
      grad = q.gradient(w);
      return q.value(w);
    };
  }
  auto model = std::shared_ptr<DriftModel>(prototype.clone());
  auto times = std::make_shared<std::vector<Vector>>();
  for (const auto& b : batches) times->push_back(b.point_times());
  if (cache) {
    auto quads = std::make_shared<std::vector<QuadraticLoss>>();
    for (const auto& b : batches) quads->push_back(drift_value_quadratic(b, loss));
    return [model, times, quads, &batches](const Vector& w, int k, Vector& grad) {
      model->set_params(w);
      const SampleBatch& b = batches[k];
      const Vector u = as_vec(model->evaluate((*times)[k], b.x));
      const QuadraticLoss& q = (*quads)[k];
      const Vector gu = q.gradient(u);
      grad = model->backprop((*times)[k], b.x, as_points(gu, b.dim()));
      return q.value(u);
    };
  }
  return [model, &batches, loss](const Vector& w, int k, Vector& grad) {
    model->set_params(w);
    LossValue lv = total_loss(*model, batches[k], loss, true);
    grad = lv.grad;
    return lv.value;
  };
}

}  // namespace

// ---------------------------------------------------------------------------

FittedModel fit_model(const ExperimentConfig& config, const NamedModel& named, std::uint64_t seed, int member) {
  const auto start = Clock::now();
  const SamplingConfig& s = config.sampling;
  const LossConfig loss = loss_for(config);
  const std::vector<SampleBatch> batches =
      draw_batches(config.flow, s.M, s.N, s.N0, s.time_mode, s.ensemble, derive_seed(seed, {stage::batches}));
  Rng init_rng = make_rng(seed, {stage::init, tag(member)});
  FittedModel out;
  out.model = init_model(named.spec, init_rng);
  if (out.model->dim() != config.flow.dim()) throw ConfigError("model " + named.name + " has the wrong dimension");
  DriftModel& model = *out.model;
  FitRecord& rec = out.record;
  rec.method = named.name;
  rec.seed = seed;
  rec.optimizer = resolve_method(config, model);

  if (rec.optimizer == "qn") {
    Objective f;
    auto work = std::shared_ptr<DriftModel>(model.clone());
    if (config.quadratic_cache && model.linear_in_params()) {
      auto q = std::make_shared<QuadraticLoss>(build_quadratic(model, batches, loss));
      require_bounded(*q);
      f = [q](const Vector& w, Vector& grad) {
        grad = q->gradient(w);
        return q->value(w);
      };
    } else {
      f = [work, &batches, &loss](const Vector& w, Vector& grad) {
        work->set_params(w);
        LossValue lv = ensemble_loss(*work, batches, loss, true);
        grad = lv.grad;
        return lv.value;
      };
    }
    std::vector<Vector> starts = {model.params()};
    for (int r = 1; r < config.optimizer.qn.restarts; ++r) {
      randomize(*work, init_rng);
      starts.push_back(work->params());
    }
    QuasiNewtonConfig qn = config.optimizer.qn;
    qn.restarts = 1;
    MultiStartResult res = minimize_qn_multistart(f, starts, qn);
    model.set_params(res.best.w);
    rec.loss = res.best.f;
    rec.iterations = 0;
    for (const auto& run : res.runs) rec.iterations += run.iterations;
    rec.converged = res.best.converged;
  } else {
    StochasticObjective f = batch_objective(config, model, batches, loss);
    Rng adam_rng = make_rng(seed, {stage::adaptive, tag(member)});
    AdaptiveResult res = minimize_adaptive(f, model.params(), config.optimizer.adaptive, s.ensemble, adam_rng);
    model.set_params(res.w);
    Vector g;
    double total = 0.0;
    for (int k = 0; k < s.ensemble; ++k) total += f(res.w, k, g);
    rec.loss = total / s.ensemble;
    rec.iterations = config.optimizer.adaptive.iterations;
    rec.converged = res.skipped == 0;
  }
  if (!model.params().allFinite() || !std::isfinite(rec.loss))
    throw OptimizerError("fit of " + named.name + " diverged");
  rec.params = model.params();
  rec.seconds = seconds_since(start);
  return out;
}

std::vector<MetricRow> evaluate_marginals(const ExperimentConfig& config, const DriftField& drift,
                                          const std::string& method, std::uint64_t seed, int member,
                                          int particles, int steps, std::vector<HistogramRow>* histograms) {
  const MarginalFlow& flow = config.flow;
  SimulationConfig sim;
  sim.steps = steps;
  sim.T = flow.T;
  sim.sigma = config.loss.sigma;
  sim.snapshot_times = config.eval.times;
  sim.threads = config.threads;
  Rng init_rng = make_rng(seed, {stage::initial_state});
  const Points x0 = sample(flow, 0.0, particles, init_rng);
  Snapshots snaps;
  if (sim.sigma > 0.0) {
    Rng noise = make_rng(seed, {stage::simulate, tag(member)});
    snaps = simulate_sde(drift, x0, sim, noise);
  } else {
    snaps = simulate_ode(drift, x0, sim);
  }
  const RadialKernel mmd_kernel{KernelProfile::gaussian, config.eval.mmd_h};
  std::vector<MetricRow> rows;
  for (std::size_t i = 0; i < config.eval.times.size(); ++i) {
    const double t = config.eval.times[i];
    Rng ref_rng = make_rng(seed, {stage::reference, tag(static_cast<int>(i))});
    const Points ref = sample(flow, t, particles, ref_rng);
    const Points& sim_x = snaps.at(t);
    Rng proj_rng = make_rng(seed, {stage::metrics, tag(member), tag(static_cast<int>(i))});
    MetricRow row;
    row.experiment = config.experiment;
    row.method = method;
    row.seed = seed;
    row.t = t;
    row.W2 = flow.dim() == 1 ? w2_1d(sim_x, ref) : std::numeric_limits<double>::quiet_NaN();
    row.SW2 = sliced_w2(sim_x, ref, config.eval.projections, proj_rng);
    row.MMD = mmd(head_rows(sim_x, config.eval.mmd_max_points), head_rows(ref, config.eval.mmd_max_points), mmd_kernel);
    rows.push_back(row);
    if (histograms) add_histograms(config, method, t, sim_x, *histograms);
  }
  return rows;
}

DriftRow evaluate_drift(const ExperimentConfig& config, const DriftField& drift, const std::string& method,
                        std::uint64_t seed, int member) {
  const DriftField truth = true_drift_field(config.flow);
  const int d = config.flow.dim();
  DriftMse mse;
  if (config.eval.monte_carlo) {
    McSpec spec;
    spec.times = linspace(0.0, config.flow.T, config.eval.mc_slices);
    spec.x_lo = Vector::Constant(d, config.eval.mc_lo);
    spec.x_hi = Vector::Constant(d, config.eval.mc_hi);
    spec.points_per_time = config.eval.mc_points;
    Rng rng = make_rng(seed, {stage::metrics, tag(member), 1000});
    mse = drift_mc_mse(drift, truth, spec, rng);
  } else {
    if (config.eval.grid.x_lo.size() != d) throw ConfigError("evaluation grid dimension differs from the flow");
    mse = drift_grid_mse(drift, truth, config.eval.grid);
  }
  return {config.experiment, method, seed, mse.total, mse.per_component};
}

// ---------------------------------------------------------------------------

std::vector<MethodSummary> summarize(const ExperimentReport& report) {
  std::vector<std::string> order;
  auto note = [&](const std::string& m) {
    if (std::find(order.begin(), order.end(), m) == order.end()) order.push_back(m);
  };
  for (const auto& r : report.drift) note(r.method);
  for (const auto& r : report.metrics) note(r.method);

  std::vector<MethodSummary> out;
  for (const auto& method : order) {
    std::vector<std::uint64_t> seeds;
    for (const auto& r : report.metrics)
      if (r.method == method && std::find(seeds.begin(), seeds.end(), r.seed) == seeds.end()) seeds.push_back(r.seed);
    std::vector<double> w2, w2max, sw2, mmd_v, w2last, total, per;
    for (auto s : seeds) {
      double a = 0, b = 0, c = 0, mx = -std::numeric_limits<double>::infinity(), last = 0, tl = -1;
      int n = 0;
      for (const auto& r : report.metrics) {
        if (r.method != method || r.seed != s) continue;
        a += r.W2;
        b += r.SW2;
        c += r.MMD;
        mx = std::max(mx, r.W2);
        if (r.t >= tl) {
          tl = r.t;
          last = r.W2;
        }
        ++n;
      }
      w2.push_back(a / n);
      sw2.push_back(b / n);
      mmd_v.push_back(c / n);
      w2max.push_back(mx);
      w2last.push_back(last);
    }
    for (const auto& r : report.drift) {
      if (r.method != method) continue;
      total.push_back(r.drift_mse_total);
      per.push_back(r.drift_mse_per_component);
    }
    MethodSummary m;
    m.method = method;
    m.seeds = static_cast<int>(std::max(seeds.size(), total.size()));
    m.mean_W2 = median(w2);
    m.max_W2 = median(w2max);
    m.mean_SW2 = median(sw2);
    m.mean_MMD = median(mmd_v);
    m.final_W2 = median(w2last);
    m.drift_mse_total = median(total);
    m.drift_mse_per_component = median(per);
    out.push_back(m);
  }
  return out;
}

const MethodSummary& find_summary(const std::vector<MethodSummary>& summaries, const std::string& method) {
  for (const auto& s : summaries)
    if (s.method == method) return s;
  throw std::out_of_range("no results for method " + method);
}

// ---------------------------------------------------------------------------

ExperimentReport run_fit_experiment(const ExperimentConfig& config) {
  config.validate();
  ExperimentReport report;
  report.config = config;
  report.seeds = config.seeds();
  const int d = config.flow.dim();
  std::vector<HistogramRow>* hist = nullptr;

  for (std::size_t si = 0; si < report.seeds.size(); ++si) {
    const std::uint64_t seed = report.seeds[si];
    const bool plots = config.eval.plot_data && si == 0;
    hist = plots ? &report.histograms : nullptr;

    for (std::size_t j = 0; j < config.models.size(); ++j) {
      const NamedModel& nm = config.models[j];
      const int member = static_cast<int>(j);
      FittedModel fitted;
      auto t0 = Clock::now();
      if (!guarded(report, "fit", nm.name, seed, [&] { fitted = fit_model(config, nm, seed, member); })) continue;
      report.timings["fit"] += seconds_since(t0);
      report.fits.push_back(fitted.record);
      const DriftField field = fitted.model->as_field();

      t0 = Clock::now();
      guarded(report, "drift_mse", nm.name, seed,
              [&] { report.drift.push_back(evaluate_drift(config, field, nm.name, seed, member)); });
      report.timings["drift_mse"] += seconds_since(t0);

      t0 = Clock::now();
      guarded(report, "simulate", nm.name, seed, [&] {
        auto rows = evaluate_marginals(config, field, nm.name, seed, member, config.eval.particles, config.eval.steps,
                                       hist);
        report.metrics.insert(report.metrics.end(), rows.begin(), rows.end());
      });
      report.timings["simulate"] += seconds_since(t0);
      if (plots) add_slices(config, field, nm.name, report);
    }

    if (!config.eval.references) continue;
    const std::pair<std::string, DriftField> refs[] = {{"true", true_drift_field(config.flow)}, {"zero", zero_field(d)}};
    for (int r = 0; r < 2; ++r) {
      const auto& [name, field] = refs[r];
      const int member = r == 0 ? kTrueMember : kZeroMember;
      auto t0 = Clock::now();
      guarded(report, "drift_mse", name, seed,
              [&] { report.drift.push_back(evaluate_drift(config, field, name, seed, member)); });
      guarded(report, "simulate", name, seed, [&] {
        auto rows = evaluate_marginals(config, field, name, seed, member, config.eval.particles, config.eval.steps,
                                       hist);
        report.metrics.insert(report.metrics.end(), rows.begin(), rows.end());
      });
      report.timings["references"] += seconds_since(t0);
      if (plots) add_slices(config, field, name, report);
    }
  }
  return report;
}

ExperimentReport run_sensitivity(const ExperimentConfig& config) {
  config.validate();
  if (config.models.empty()) throw ConfigError("sensitivity needs a model");
  ExperimentReport report;
  report.config = config;
  report.seeds = config.seeds();
  const NamedModel& nm = config.models.front();

  auto run_cell = [&](const std::string& param, double value, ExperimentConfig cell) {
    std::ostringstream label;
    label << param << "=" << value;
    std::vector<double> mse, secs;
    for (auto seed : report.seeds) {
      guarded(report, "sweep " + label.str(), nm.name, seed, [&] {
        cell.validate();
        FittedModel fitted = fit_model(cell, nm, seed, 0);
        DriftRow row = evaluate_drift(cell, fitted.model->as_field(), label.str(), seed, 0);
        report.drift.push_back(row);
        fitted.record.method = label.str();
        report.fits.push_back(fitted.record);
        mse.push_back(row.drift_mse_total);
        secs.push_back(fitted.record.seconds);
      });
    }
    SweepRow row;
    row.param = param;
    row.value = value;
    const double n = static_cast<double>(mse.size());
    if (mse.empty()) {
      row.mse_mean = row.mse_std = row.time_s = std::numeric_limits<double>::quiet_NaN();
    } else {
      double sum = 0, sq = 0, ts = 0;
      for (std::size_t i = 0; i < mse.size(); ++i) {
        sum += mse[i];
        ts += secs[i];
      }
      row.mse_mean = sum / n;
      for (double v : mse) sq += (v - row.mse_mean) * (v - row.mse_mean);
      row.mse_std = mse.size() > 1 ? std::sqrt(sq / (n - 1)) : 0.0;
      row.time_s = ts / n;
    }
    report.sweep.push_back(row);
  };

  const auto t0 = Clock::now();
  for (int M : config.sweep.M) {
    ExperimentConfig c = config;
    c.sampling.M = M;
    run_cell("M", M, c);
  }
  for (int N : config.sweep.N) {
    ExperimentConfig c = config;
    c.sampling.N = N;
    run_cell("N", N, c);
  }
  for (double lambda : config.sweep.lambda) {
    ExperimentConfig c = config;
    c.loss.lambda = lambda;
    run_cell("lambda", lambda, c);
  }
  report.timings["sweep"] = seconds_since(t0);
  return report;
}

ExperimentReport run_dimension_scan(const ExperimentConfig& config) {
  config.validate();
  ExperimentReport report;
  report.config = config;
  report.seeds = config.seeds();
  const auto start = Clock::now();

  for (int d : config.dims) {
    ExperimentConfig c = config;
    c.flow.kind = FlowKind::gauss_translate_nd;
    c.flow.d = d;
    c.eval.monte_carlo = true;
    c.eval.grid.x_lo = Vector::Constant(d, c.eval.mc_lo);
    c.eval.grid.x_hi = Vector::Constant(d, c.eval.mc_hi);
    NamedModel nm;
    nm.name = "affine_d" + std::to_string(d);
    nm.spec.features = "affine_d";
    nm.spec.d = d;
    c.models = {nm};

    std::vector<double> total, per, secs;
    for (auto seed : report.seeds) {
      guarded(report, "dimension scan", nm.name, seed, [&] {
        c.validate();
        FittedModel fitted = fit_model(c, nm, seed, 0);
        DriftRow row = evaluate_drift(c, fitted.model->as_field(), nm.name, seed, 0);
        report.drift.push_back(row);
        report.fits.push_back(fitted.record);
        total.push_back(row.drift_mse_total);
        per.push_back(row.drift_mse_per_component);
        secs.push_back(fitted.record.seconds);
      });
    }
    auto mean_std = [](const std::vector<double>& v) {
      if (v.empty()) return std::pair{std::numeric_limits<double>::quiet_NaN(), std::numeric_limits<double>::quiet_NaN()};
      double m = 0, sq = 0;
      for (double x : v) m += x;
      m /= static_cast<double>(v.size());
      for (double x : v) sq += (x - m) * (x - m);
      return std::pair{m, v.size() > 1 ? std::sqrt(sq / static_cast<double>(v.size() - 1)) : 0.0};
    };
    const auto [pm, ps] = mean_std(per);
    const auto [tm, tsd] = mean_std(total);
    const auto [sm, ss] = mean_std(secs);
    (void)ss;
    report.sweep.push_back({"d", static_cast<double>(d), pm, ps, sm});
    report.sweep.push_back({"d_total", static_cast<double>(d), tm, tsd, sm});
  }
  report.timings["scan"] = seconds_since(start);
  return report;
}

ExperimentReport run_baselines(const ExperimentConfig& config) {
  config.validate();
  ExperimentReport report;
  report.config = config;
  report.seeds = config.seeds();
  const BaselineConfig& bc = config.baselines;
  const MarginalFlow& flow = config.flow;
  const DriftField truth = true_drift_field(flow);
  const int n = bc.per_snapshot;
  auto uses = [&](const std::string& m) { return std::find(bc.methods.begin(), bc.methods.end(), m) != bc.methods.end(); };

  auto snapshots = [&](std::uint64_t seed, int family, int count) {
    std::vector<Snapshot> out;
    const std::vector<double> times = linspace(0.0, flow.T, count);
    for (int k = 0; k < count; ++k) {
      Rng rng = make_rng(seed, {stage::baseline, tag(family), tag(count), tag(k)});
      out.push_back({times[k], sample(flow, times[k], n, rng)});
    }
    return out;
  };
  auto score_method = [&](const DriftField& field, const std::string& name, std::uint64_t seed, int member) {
    auto t0 = Clock::now();
    guarded(report, "drift_mse", name, seed,
            [&] { report.drift.push_back(evaluate_drift(config, field, name, seed, member)); });
    guarded(report, "simulate", name, seed, [&] {
      auto rows = evaluate_marginals(config, field, name, seed, member, bc.sim_particles, bc.sim_steps);
      report.metrics.insert(report.metrics.end(), rows.begin(), rows.end());
    });
    report.timings["evaluate"] += seconds_since(t0);
    if (config.eval.plot_data && seed == report.seeds.front()) add_slices(config, field, name, report);
  };

  for (auto seed : report.seeds) {
    const std::string seed_key = std::to_string(seed);
    if (uses("wot")) {
      for (int M : bc.wot_snapshots) {
        const std::string name = "wot_M" + std::to_string(M);
        std::shared_ptr<WotDrift> wot;
        auto t0 = Clock::now();
        if (!guarded(report, "wot", name, seed,
                     [&] { wot = std::make_shared<WotDrift>(snapshots(seed, 1, M), bc.wot); }))
          continue;
        report.timings["wot"] += seconds_since(t0);
        Json eps = Json::array();
        for (const auto& c : wot->couplings()) eps.push_back(c.epsilon);
        report.notes["wot"][seed_key][name] = {{"epsilon", eps}, {"converged", wot->all_converged()}};
        score_method(wot->as_field(), name, seed, kWotMember + M);
      }
    }
    if (uses("mmot")) {
      for (int N : bc.mmot_snapshots) {
        const std::string name = "mmot_N" + std::to_string(N);
        MmotResult res;
        auto t0 = Clock::now();
        const bool ok = guarded(report, "mmot", name, seed, [&] {
          MmotScore score;
          if (bc.mmot_select == "drift_mse")
            score = [&](const AffineMapChain& maps, const MmotCell&) {
              return drift_grid_mse(maps.as_field(), truth, config.eval.grid).total;
            };
          Rng rng = make_rng(seed, {stage::baseline, 2, tag(N), 999});
          res = mmot_affine_fit(snapshots(seed, 2, N), config.loss.kernel, bc.mmot, rng, score);
          if (!res.cells.at(res.best).ok) throw OptimizerError("every MMOT cell failed");
        });
        report.timings["mmot"] += seconds_since(t0);
        if (!ok) continue;
        Json cells = Json::array();
        for (const auto& c : res.cells)
          cells.push_back({{"lambda", c.lambda_m},
                           {"alpha", c.alpha},
                           {"init", c.init},
                           {"ok", c.ok},
                           {"objective", c.ok ? Json(c.objective) : Json(nullptr)},
                           {"score", c.ok ? Json(c.score) : Json(nullptr)},
                           {"error", c.error}});
        report.notes["mmot"][seed_key][name] = {{"selected", res.best}, {"select_by", bc.mmot_select}, {"cells", cells}};
        score_method(res.maps().as_field(), name, seed, kMmotMember + N);
      }
    }
    if (uses("flow_matching")) {
      const std::string name = "flow_matching";
      std::unique_ptr<DriftModel> model;
      auto t0 = Clock::now();
      const bool ok = guarded(report, "flow_matching", name, seed, [&] {
        ModelSpec spec;
        spec.features = bc.flow_matching_features;
        spec.d = flow.dim();
        model = make_model(spec);
        Rng r0 = make_rng(seed, {stage::baseline, 3, 0}), r1 = make_rng(seed, {stage::baseline, 3, 1});
        const Points mu0 = sample(flow, 0.0, n, r0), mu1 = sample(flow, flow.T, n, r1);
        Rng rng = make_rng(seed, {stage::baseline, 3, 2});
        flow_matching_fit(mu0, mu1, *model, bc.flow_matching, rng, flow.T);
      });
      report.timings["flow_matching"] += seconds_since(t0);
      if (ok) {
        FitRecord rec;
        rec.method = name;
        rec.seed = seed;
        rec.optimizer = "least_squares";
        rec.params = model->params();
        rec.converged = true;
        report.fits.push_back(rec);
        score_method(model->as_field(), name, seed, kFlowMatchingMember);
      }
    }
    if (config.eval.references) score_method(zero_field(flow.dim()), "zero", seed, kZeroMember);
  }
  return report;
}

ExperimentReport run_experiment(const ExperimentConfig& config) {
  const auto start = Clock::now();
  ExperimentReport report;
  if (config.experiment == "sensitivity")
    report = run_sensitivity(config);
  else if (config.experiment == "dimscan")
    report = run_dimension_scan(config);
  else if (config.experiment == "baselines")
    report = run_baselines(config);
  else
    report = run_fit_experiment(config);
  report.timings["total"] = seconds_since(start);
  return report;
}

}  // namespace alltimeot
