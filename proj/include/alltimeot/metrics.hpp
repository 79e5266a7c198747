#pragma once

#include "alltimeot/common.hpp"
#include "alltimeot/kernel_ops.hpp"

#include <vector>

namespace alltimeot {

/// Exact 1-d W2 between empirical measures. Samples of different size are
/// compared after resampling the larger one to the smaller size by
/// interpolating its sorted quantiles at levels (i + 1/2)/n.
double w2_1d(const Vector& a, const Vector& b);
double w2_1d(const Points& a, const Points& b);

/// Root-mean of squared 1-d W2 along random unit directions. In d = 1 every
/// direction is +-1, so the result is w2_1d for any projection count.
double sliced_w2(const Points& a, const Points& b, int n_projections, Rng& rng);

/// Biased (V-statistic) MMD with kernel K, square-rooted after clamping at 0.
double mmd(const Points& a, const Points& b, const RadialKernel& kernel);
double mmd_squared(const Points& a, const Points& b, const RadialKernel& kernel);

/// Rectangular evaluation region: tensor grid or Monte-Carlo points.
struct GridSpec {
  double t_lo = 0.0, t_hi = 1.0;
  int nt = 41;
  Vector x_lo, x_hi;  ///< one entry per spatial dimension
  int nx = 81;        ///< points per spatial axis

  void validate() const;
};

struct McSpec {
  std::vector<double> times;
  Vector x_lo, x_hi;
  int points_per_time = 2000;
};

struct DriftMse {
  double total = 0.0;
  double per_component = 0.0;  ///< total / d
  Vector by_component;         ///< mean squared error of each output coordinate
};

DriftMse drift_grid_mse(const DriftField& model, const DriftField& truth, const GridSpec& grid);
DriftMse drift_mc_mse(const DriftField& model, const DriftField& truth, const McSpec& spec, Rng& rng);

struct FloorReport {
  double w2 = 0.0;   ///< only meaningful in d = 1
  double sw2 = 0.0;
  double mmd = 0.0;
};

/// Metrics between two random halves of one sample.
FloorReport mc_floor(const Points& sample, Rng& rng, const RadialKernel& kernel, int n_projections = 200);

/// Evenly spaced values lo..hi inclusive.
std::vector<double> linspace(double lo, double hi, int n);

}  // namespace alltimeot
