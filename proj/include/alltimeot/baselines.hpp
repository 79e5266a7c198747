#pragma once

#include "alltimeot/common.hpp"
#include "alltimeot/drift_models.hpp"
#include "alltimeot/kernel_ops.hpp"
#include "alltimeot/optimizers.hpp"

#include <functional>
#include <vector>

namespace alltimeot {

/// Entropic coupling pi_ij = a_i b_j exp((f_i + g_j - C_ij) / eps).
struct EntropicCoupling {
  Eigen::MatrixXd cost;
  Vector a, b;
  Vector f, g;
  double epsilon = 0.0;
  bool converged = false;
  double violation = 0.0;  ///< max abs deviation of row and column sums from a, b
  int iterations = 0;

  Eigen::MatrixXd plan() const;
};

/// Log-domain Sinkhorn. Every exponential goes through log-sum-exp.
EntropicCoupling sinkhorn_log(const Eigen::MatrixXd& cost, const Vector& a, const Vector& b, double epsilon,
                              int max_iter = 10000, double tol = 1e-6);

/// Squared Euclidean cost between the rows of x and y.
Eigen::MatrixXd squared_distance_cost(const Points& x, const Points& y);

struct Snapshot {
  double t = 0.0;
  Points x;
};

struct WotOptions {
  /// Absolute regularization; when <= 0 it is eps_scale times the mean cost of each pair.
  double epsilon = 0.0;
  double eps_scale = 0.05;
  int max_iter = 10000;
  double tol = 1e-6;
};

/// Piecewise-constant finite-difference drift from chained entropic couplings.
class WotDrift {
 public:
  WotDrift(std::vector<Snapshot> snapshots, const WotOptions& options = {});

  /// Drift on [t_k, t_{k+1}) at the sample nearest to each row of x; the last
  /// segment also covers t = t_K.
  Points evaluate(double t, const Points& x) const;
  DriftField as_field() const;

  std::size_t segments() const { return sources_.size(); }
  const std::vector<EntropicCoupling>& couplings() const { return couplings_; }
  bool all_converged() const;

 private:
  std::vector<double> times_;
  std::vector<Points> sources_;
  std::vector<Points> velocities_;
  std::vector<EntropicCoupling> couplings_;
};

/// Draws n_out pairs (i, j) with probability pi_ij and emits (1-s) x_i + s y_j.
/// Throws when the coupling did not converge.
Points mccann_interpolate(const EntropicCoupling& coupling, const Points& source, const Points& target, double s,
                          Rng& rng, int n_out);

/// Maps T_k(x) = A_k x + b_k anchored at snapshot times, with T_0 the identity.
struct AffineMapChain {
  std::vector<double> times;
  std::vector<Eigen::MatrixXd> A;
  std::vector<Vector> b;

  Points apply(std::size_t k, const Points& x) const;
  /// (A_k A_{k-1}^{-1} (x - b_{k-1}) + b_k - x) / (t_k - t_{k-1}) on [t_{k-1}, t_k).
  Points drift(double t, const Points& x) const;
  DriftField as_field() const;
};

struct MmotCell {
  double lambda_m = 0.0;
  double alpha = 0.0;
  int init = 0;
  bool ok = false;
  std::string error;
  double objective = 0.0;
  double score = 0.0;
  AffineMapChain maps;
};

struct MmotOptions {
  std::vector<double> lambdas = {1e3, 1e4, 1e5};
  std::vector<double> alphas = {0.5, 1.0, 2.0};
  int inits = 3;
  double init_scale = 0.1;  ///< random perturbation of the identity start
  QuasiNewtonConfig optimizer;
};

struct MmotResult {
  std::vector<MmotCell> cells;
  std::size_t best = 0;
  const AffineMapChain& maps() const { return cells.at(best).maps; }
};

/// Objective of one grid cell for a flat parameter vector {A_1, b_1, ..., A_K, b_K}.
double mmot_objective(const std::vector<Snapshot>& snapshots, const Vector& params, double lambda_m,
                      const RadialKernel& kernel, Vector* grad);

AffineMapChain mmot_fit_cell(const std::vector<Snapshot>& snapshots, double lambda_m, double alpha,
                             const RadialKernel& kernel, const Vector& init, const QuasiNewtonConfig& optimizer,
                             double* objective = nullptr);

/// Lower score wins. The default score is the cell's own objective value.
using MmotScore = std::function<double(const AffineMapChain&, const MmotCell&)>;

/// Fits every (lambda_m, alpha, init) cell; a failing cell is recorded and skipped.
MmotResult mmot_affine_fit(const std::vector<Snapshot>& snapshots, const RadialKernel& kernel,
                           const MmotOptions& options, Rng& rng, const MmotScore& score = {});

struct FlowMatchingOptions {
  int pairs = 20000;
  QuasiNewtonConfig optimizer;
};

/// Least squares fit of u(t, (1-t) X0 + t X1) to X1 - X0 with t ~ U[0, T] and
/// X0, X1 drawn independently from the two samples.
void flow_matching_fit(const Points& mu0, const Points& mu1, DriftModel& model, const FlowMatchingOptions& options,
                       Rng& rng, double T = 1.0);

}  // namespace alltimeot
