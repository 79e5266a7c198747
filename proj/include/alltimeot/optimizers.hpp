#pragma once

#include "alltimeot/common.hpp"

#include <functional>
#include <string>
#include <vector>

namespace alltimeot {

/// Returns f(w) and writes the gradient into `grad`.
using Objective = std::function<double(const Vector& w, Vector& grad)>;

struct QuasiNewtonConfig {
  int memory = 10;
  double gtol = 1e-6;    ///< stop when max |g_i| <= gtol
  double ftol = 2.2e-9;  ///< stop when the relative decrease of f falls below ftol
  int max_iter = 500;
  int restarts = 1;
  int max_linesearch = 40;

  void validate() const;
};

struct QnResult {
  Vector w;
  double f = 0.0;
  double f0 = 0.0;
  double grad_inf = 0.0;
  int iterations = 0;
  int evaluations = 0;
  bool converged = false;
  std::string reason;
  std::vector<double> trace;  ///< f after every accepted iterate
};

/// Limited-memory BFGS with backtracking Armijo line search. Unconstrained.
/// Throws OptimizerError when the objective returns a non-finite value.
QnResult minimize_qn(const Objective& f, const Vector& w0, const QuasiNewtonConfig& config);

struct MultiStartResult {
  QnResult best;
  std::size_t best_index = 0;
  std::vector<QnResult> runs;
};

/// Runs minimize_qn from every start and keeps the lowest final value.
MultiStartResult minimize_qn_multistart(const Objective& f, const std::vector<Vector>& starts,
                                        const QuasiNewtonConfig& config);

struct FirstOrderConfig {
  int iterations = 4000;
  double lr_initial = 3e-3;
  double lr_final = 1e-5;
  int batches_per_step = 3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double max_skip_fraction = 0.01;

  void validate() const;
  /// Half-cosine interpolation from lr_initial (step 0) to lr_final (last step).
  double learning_rate(int step) const;
};

/// f(w, batch_index, grad) for one member of the pre-cached pool.
using StochasticObjective = std::function<double(const Vector& w, int batch_index, Vector& grad)>;

struct AdaptiveResult {
  Vector w;
  std::vector<double> trace;  ///< mean loss over the batches of each step
  int skipped = 0;
};

/// Adam over a pool of `pool_size` batches. Each step averages the gradients of
/// `batches_per_step` batches taken in order from a shuffled rotation of the pool;
/// the rotation is reshuffled whenever it is exhausted.
AdaptiveResult minimize_adaptive(const StochasticObjective& f, const Vector& w0, const FirstOrderConfig& config,
                                 int pool_size, Rng& rng);

}  // namespace alltimeot
