#pragma once

#include "alltimeot/common.hpp"
#include "alltimeot/drift_models.hpp"
#include "alltimeot/kernel_ops.hpp"
#include "alltimeot/marginal_flows.hpp"

#include <vector>

namespace alltimeot {

enum class TimeMode { grid, iid_uniform };

TimeMode parse_time_mode(const std::string& name);
std::string to_string(TimeMode mode);

/// M time slices with N particles each, plus N0 particles from mu_0.
/// Row p = m * N + i of `x` holds particle i of slice m.
struct SampleBatch {
  double T = 1.0;
  int N = 0;
  Vector times;  ///< length M
  Points x;      ///< M*N rows
  Points x0;     ///< N0 rows

  int M() const { return static_cast<int>(times.size()); }
  int size() const { return static_cast<int>(x.rows()); }
  int dim() const { return static_cast<int>(x.cols()); }
  /// Time of every flat row.
  Vector point_times() const;
  void validate() const;
};

/// Grid mode places slice m at the midpoint of the m-th of M equal subintervals.
SampleBatch draw_batch(const MarginalFlow& flow, int M, int N, int N0, TimeMode mode, Rng& rng);
std::vector<SampleBatch> draw_batches(const MarginalFlow& flow, int M, int N, int N0, TimeMode mode, int count,
                                      std::uint64_t master_seed);

struct LossConfig {
  double lambda = 1000.0;
  double sigma = 0.0;
  double T = 1.0;
  RadialKernel kernel;
  /// Also drop same-slice cross pairs from the pair sums (default keeps them).
  bool same_slice_mask = false;
  /// Workers for the pair sums; results are reproducible for a fixed count.
  int threads = 1;

  void validate() const;
};

/// T/(MN) sum_p |u_p|^2
double kinetic_energy(const SampleBatch& batch, const Points& u, double T);

/// Penalty estimate and, optionally, its gradient with respect to each drift value u_p.
struct PenaltyValue {
  double value = 0.0;
  Points grad;  ///< MN x d, empty when not requested
};

/// Three-sum estimator of the time-integrated squared residual norm. Only drift
/// values at batch points enter: the boundary sum applies the generator at y_p.
PenaltyValue penalty_qhat(const SampleBatch& batch, const Points& u, const LossConfig& config, bool with_grad);
double penalty_qhat(const SampleBatch& batch, const Points& u, const LossConfig& config);

struct LossValue {
  double value = 0.0;
  double kinetic = 0.0;
  double penalty = 0.0;
  Vector grad;  ///< parameter gradient, empty when not requested
};

/// kinetic + lambda * penalty for a model on one batch.
LossValue total_loss(const DriftModel& model, const SampleBatch& batch, const LossConfig& config,
                     bool with_grad = false);
LossValue loss_gradient(const DriftModel& model, const SampleBatch& batch, const LossConfig& config);
/// Mean of per-batch losses and gradients.
LossValue ensemble_loss(const DriftModel& model, const std::vector<SampleBatch>& batches, const LossConfig& config,
                        bool with_grad = true);

/// Exact quadratic form of the ensemble loss for a model that is linear in its
/// parameters: L(w) = c + g.w + 1/2 w'Hw.
struct QuadraticLoss {
  double c = 0.0;
  Vector g;
  Eigen::MatrixXd H;

  double value(const Vector& w) const { return c + g.dot(w) + 0.5 * w.dot(H * w); }
  Vector gradient(const Vector& w) const { return g + H * w; }
};

/// Built from P+1 gradient evaluations of the ensemble loss.
QuadraticLoss build_quadratic(const DriftModel& model, const std::vector<SampleBatch>& batches,
                              const LossConfig& config);

/// Kinetic energy plus lambda times the estimator as an exact quadratic in the
/// drift values U at the batch points (vec(U) taken row-major, size n*d). Lets
/// nonlinear models reuse one batch without revisiting the pair sums.
QuadraticLoss drift_value_quadratic(const SampleBatch& batch, const LossConfig& config);

struct BiasProbeRow {
  int M = 0;
  double mean = 0.0;
  double stderr_ = 0.0;
};

struct BiasProbeResult {
  std::vector<BiasProbeRow> rows;
  double intercept = 0.0;
  double slope = 0.0;  ///< coefficient of 1/M
  double r2 = 0.0;
};

/// Mean penalty of a fixed constant drift versus M, with a least-squares fit mean = c0 + c1/M.
BiasProbeResult bias_probe(const MarginalFlow& flow, const Vector& u, const std::vector<int>& M_list, int N, int N0,
                           int seeds, TimeMode mode, const LossConfig& config, std::uint64_t master_seed);

}  // namespace alltimeot
