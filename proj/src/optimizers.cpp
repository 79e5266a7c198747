#include "alltimeot/optimizers.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <numbers>
#include <numeric>
#include <sstream>

namespace alltimeot {

void QuasiNewtonConfig::validate() const {
  if (memory < 1) throw ConfigError("L-BFGS memory must be >= 1");
  if (!(gtol > 0.0)) throw ConfigError("gradient tolerance must be positive");
  if (ftol < 0.0) throw ConfigError("ftol must be nonnegative");
  if (max_iter < 0) throw ConfigError("max_iter must be nonnegative");
  if (restarts < 1) throw ConfigError("restarts must be >= 1");
}

namespace {

double eval_checked(const Objective& f, const Vector& w, Vector& g, int iter) {
  const double v = f(w, g);
  if (!std::isfinite(v) || !g.allFinite()) {
    std::ostringstream os;
    os << "non-finite objective or gradient at iteration " << iter;
    throw OptimizerError(os.str());
  }
  return v;
}

/// Two-loop recursion: returns H_k * g for the stored curvature pairs.
Vector two_loop(const std::deque<Vector>& S, const std::deque<Vector>& Y, const std::deque<double>& rho,
                const Vector& g) {
  Vector q = g;
  const std::size_t m = S.size();
  std::vector<double> alpha(m);
  for (std::size_t i = m; i-- > 0;) {
    alpha[i] = rho[i] * S[i].dot(q);
    q -= alpha[i] * Y[i];
  }
  if (m > 0) q *= S.back().dot(Y.back()) / Y.back().squaredNorm();
  for (std::size_t i = 0; i < m; ++i) {
    const double beta = rho[i] * Y[i].dot(q);
    q += (alpha[i] - beta) * S[i];
  }
  return q;
}

}  // namespace

QnResult minimize_qn(const Objective& f, const Vector& w0, const QuasiNewtonConfig& cfg) {
  cfg.validate();
  QnResult r;
  Vector w = w0;
  Vector g(w.size());
  double fx = eval_checked(f, w, g, 0);
  r.evaluations = 1;
  r.f0 = fx;
  std::deque<Vector> S, Y;
  std::deque<double> rho;
  constexpr double c1 = 1e-4;

  auto finish = [&](bool ok, const char* why) {
    r.w = w;
    r.f = fx;
    r.grad_inf = g.size() ? g.cwiseAbs().maxCoeff() : 0.0;
    r.converged = ok;
    r.reason = why;
    return r;
  };

  if (w.size() == 0 || g.cwiseAbs().maxCoeff() <= cfg.gtol) return finish(true, "gradient tolerance");

  for (int it = 0; it < cfg.max_iter; ++it) {
    Vector dir = -two_loop(S, Y, rho, g);
    double slope = g.dot(dir);
    if (!(slope < 0.0)) {
      S.clear(), Y.clear(), rho.clear();
      dir = -g;
      slope = -g.squaredNorm();
    }
    double step = 1.0;
    if (S.empty()) step = std::min(1.0, 1.0 / std::max(dir.norm(), 1e-300));

    Vector w_new, g_new(w.size());
    double f_new = 0.0;
    bool accepted = false;
    for (int ls = 0; ls < cfg.max_linesearch; ++ls) {
      w_new = w + step * dir;
      f_new = eval_checked(f, w_new, g_new, it + 1);
      ++r.evaluations;
      if (f_new <= fx + c1 * step * slope) {
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) {
      if (!S.empty()) {
        // discard curvature memory and retry along steepest descent next round
        S.clear(), Y.clear(), rho.clear();
        continue;
      }
      r.iterations = it;
      return finish(false, "line search failed");
    }

    Vector s = w_new - w;
    Vector y = g_new - g;
    const double sy = s.dot(y);
    if (sy > 1e-12 * s.norm() * y.norm()) {
      if (static_cast<int>(S.size()) == cfg.memory) S.pop_front(), Y.pop_front(), rho.pop_front();
      S.push_back(s);
      Y.push_back(y);
      rho.push_back(1.0 / sy);
    }
    const double f_old = fx;
    w = std::move(w_new);
    g = g_new;
    fx = f_new;
    r.trace.push_back(fx);
    r.iterations = it + 1;

    if (g.cwiseAbs().maxCoeff() <= cfg.gtol) return finish(true, "gradient tolerance");
    if ((f_old - fx) <= cfg.ftol * std::max({std::abs(f_old), std::abs(fx), 1.0}))
      return finish(true, "relative decrease below ftol");
  }
  return finish(false, "max iterations");
}

MultiStartResult minimize_qn_multistart(const Objective& f, const std::vector<Vector>& starts,
                                        const QuasiNewtonConfig& config) {
  if (starts.empty()) throw ConfigError("multistart needs at least one start");
  MultiStartResult out;
  for (const auto& w0 : starts) out.runs.push_back(minimize_qn(f, w0, config));
  for (std::size_t i = 1; i < out.runs.size(); ++i)
    if (out.runs[i].f < out.runs[out.best_index].f) out.best_index = i;
  out.best = out.runs[out.best_index];
  return out;
}

// ---------------------------------------------------------------------------

void FirstOrderConfig::validate() const {
  if (iterations < 1) throw ConfigError("iterations must be >= 1");
  if (!(lr_initial > 0.0) || !(lr_final > 0.0)) throw ConfigError("step sizes must be positive");
  if (lr_final > lr_initial) throw ConfigError("final step size must not exceed the initial one");
  if (batches_per_step < 1) throw ConfigError("batches_per_step must be >= 1");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("moment decay out of range");
}

double FirstOrderConfig::learning_rate(int step) const {
  const double frac = iterations > 1 ? static_cast<double>(step) / (iterations - 1) : 1.0;
  return lr_final + 0.5 * (lr_initial - lr_final) * (1.0 + std::cos(std::numbers::pi * frac));
}

AdaptiveResult minimize_adaptive(const StochasticObjective& f, const Vector& w0, const FirstOrderConfig& cfg,
                                 int pool_size, Rng& rng) {
  cfg.validate();
  if (pool_size < 1) throw ConfigError("batch pool is empty");
  AdaptiveResult r;
  Vector w = w0;
  Vector m = Vector::Zero(w.size()), v = Vector::Zero(w.size());
  std::vector<int> order(pool_size);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  std::size_t cursor = 0;
  Vector g(w.size()), gsum(w.size());
  int updates = 0;
  const int max_skips = static_cast<int>(std::floor(cfg.max_skip_fraction * cfg.iterations));

  for (int step = 0; step < cfg.iterations; ++step) {
    gsum.setZero();
    double fsum = 0.0;
    for (int b = 0; b < cfg.batches_per_step; ++b) {
      if (cursor == order.size()) {
        std::shuffle(order.begin(), order.end(), rng);
        cursor = 0;
      }
      fsum += f(w, order[cursor++], g);
      gsum += g;
    }
    gsum /= cfg.batches_per_step;
    const double fmean = fsum / cfg.batches_per_step;
    if (!std::isfinite(fmean) || !gsum.allFinite()) {
      ++r.skipped;
      r.trace.push_back(fmean);
      if (r.skipped > max_skips) {
        std::ostringstream os;
        os << "adaptive optimizer skipped " << r.skipped << " of " << step + 1 << " steps (non-finite gradient)";
        throw OptimizerError(os.str());
      }
      continue;
    }
    ++updates;
    m = cfg.beta1 * m + (1.0 - cfg.beta1) * gsum;
    v = cfg.beta2 * v + (1.0 - cfg.beta2) * gsum.cwiseAbs2();
    const double bc1 = 1.0 - std::pow(cfg.beta1, updates);
    const double bc2 = 1.0 - std::pow(cfg.beta2, updates);
    const double lr = cfg.learning_rate(step);
    w.array() -= lr * (m.array() / bc1) / ((v.array() / bc2).sqrt() + cfg.eps);
    r.trace.push_back(fmean);
  }
  r.w = w;
  return r;
}

}  // namespace alltimeot
