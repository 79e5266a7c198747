#include "alltimeot/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace alltimeot {

namespace {

std::vector<double> sorted(const Vector& v) {
  std::vector<double> s(v.data(), v.data() + v.size());
  std::sort(s.begin(), s.end());
  return s;
}

/// Quantiles of a sorted sample at levels (i + 1/2)/n, linearly interpolated.
std::vector<double> resample_quantiles(const std::vector<double>& s, std::size_t n) {
  const std::size_t m = s.size();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double pos = (i + 0.5) / n * m - 0.5;
    if (pos <= 0.0) {
      out[i] = s.front();
    } else if (pos >= m - 1) {
      out[i] = s.back();
    } else {
      const auto lo = static_cast<std::size_t>(pos);
      const double frac = pos - lo;
      out[i] = (1.0 - frac) * s[lo] + frac * s[lo + 1];
    }
  }
  return out;
}

double w2_sorted(std::vector<double> a, std::vector<double> b) {
  if (a.size() != b.size()) {
    if (a.size() > b.size()) a = resample_quantiles(a, b.size());
    else b = resample_quantiles(b, a.size());
  }
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s / a.size());
}

double kernel_block_mean(const Points& a, const Points& b, const RadialKernel& kernel) {
  const double c = -0.5 * kernel.a();
  const Eigen::Index d = a.cols();
  double total = 0.0;
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    const double* ai = a.data() + i * d;
    double row = 0.0;
    for (Eigen::Index j = 0; j < b.rows(); ++j) {
      const double* bj = b.data() + j * d;
      double r2 = 0.0;
      for (Eigen::Index k = 0; k < d; ++k) r2 += (ai[k] - bj[k]) * (ai[k] - bj[k]);
      row += std::exp(c * r2);
    }
    total += row;
  }
  return total / (static_cast<double>(a.rows()) * b.rows());
}

DriftMse accumulate(const Points& diff_sq_sum, double count) {
  DriftMse r;
  r.by_component = diff_sq_sum.row(0).transpose() / count;
  r.total = r.by_component.sum();
  r.per_component = r.total / r.by_component.size();
  return r;
}

}  // namespace

double w2_1d(const Vector& a, const Vector& b) {
  if (a.size() == 0 || b.size() == 0) throw ContractViolation("w2_1d: empty sample");
  return w2_sorted(sorted(a), sorted(b));
}

double w2_1d(const Points& a, const Points& b) {
  if (a.cols() != 1 || b.cols() != 1) throw ContractViolation("w2_1d expects one-dimensional samples");
  return w2_1d(Vector(a.col(0)), Vector(b.col(0)));
}

double sliced_w2(const Points& a, const Points& b, int n_projections, Rng& rng) {
  if (a.cols() != b.cols()) throw ContractViolation("sliced_w2: dimension mismatch");
  if (a.rows() == 0 || b.rows() == 0) throw ContractViolation("sliced_w2: empty sample");
  if (n_projections < 1) throw ConfigError("sliced_w2 needs at least one projection");
  const int d = static_cast<int>(a.cols());
  if (d == 1) return w2_1d(a, b);
  std::normal_distribution<double> normal(0.0, 1.0);
  double acc = 0.0;
  for (int k = 0; k < n_projections; ++k) {
    Vector dir(d);
    for (int j = 0; j < d; ++j) dir(j) = normal(rng);
    dir.normalize();
    const double w = w2_1d(Vector(a * dir), Vector(b * dir));
    acc += w * w;
  }
  return std::sqrt(acc / n_projections);
}

double mmd_squared(const Points& a, const Points& b, const RadialKernel& kernel) {
  kernel.validate();
  if (a.rows() == 0 || b.rows() == 0) throw ContractViolation("mmd: empty sample");
  if (a.cols() != b.cols()) throw ContractViolation("mmd: dimension mismatch");
  return kernel_block_mean(a, a, kernel) + kernel_block_mean(b, b, kernel) - 2.0 * kernel_block_mean(a, b, kernel);
}

double mmd(const Points& a, const Points& b, const RadialKernel& kernel) {
  return std::sqrt(std::max(0.0, mmd_squared(a, b, kernel)));
}

void GridSpec::validate() const {
  if (nt < 1 || nx < 1) throw ConfigError("grid needs at least one point per axis");
  if (x_lo.size() == 0 || x_lo.size() != x_hi.size()) throw ConfigError("grid spatial bounds malformed");
  if (t_hi < t_lo || (x_hi - x_lo).minCoeff() < 0.0) throw ConfigError("grid region is inverted");
  if ((nt > 1 && !(t_hi > t_lo)) || (nx > 1 && !((x_hi - x_lo).minCoeff() > 0.0)))
    throw ConfigError("grid region is degenerate");
}

std::vector<double> linspace(double lo, double hi, int n) {
  std::vector<double> v(n);
  for (int i = 0; i < n; ++i) v[i] = n == 1 ? lo : lo + (hi - lo) * i / (n - 1);
  return v;
}

DriftMse drift_grid_mse(const DriftField& model, const DriftField& truth, const GridSpec& grid) {
  grid.validate();
  const int d = static_cast<int>(grid.x_lo.size());
  std::vector<std::vector<double>> axes(d);
  Eigen::Index npts = 1;
  for (int j = 0; j < d; ++j) {
    axes[j] = linspace(grid.x_lo(j), grid.x_hi(j), grid.nx);
    npts *= grid.nx;
  }
  Points x(npts, d);
  for (Eigen::Index i = 0; i < npts; ++i) {
    Eigen::Index rem = i;
    for (int j = d - 1; j >= 0; --j) {
      x(i, j) = axes[j][rem % grid.nx];
      rem /= grid.nx;
    }
  }
  Points sq = Points::Zero(1, d);
  for (double t : linspace(grid.t_lo, grid.t_hi, grid.nt)) {
    const Points diff = model(t, x) - truth(t, x);
    sq += diff.array().square().colwise().sum().matrix();
  }
  return accumulate(sq, static_cast<double>(npts) * grid.nt);
}

DriftMse drift_mc_mse(const DriftField& model, const DriftField& truth, const McSpec& spec, Rng& rng) {
  const int d = static_cast<int>(spec.x_lo.size());
  if (d == 0 || spec.x_hi.size() != d || spec.times.empty() || spec.points_per_time < 1)
    throw ConfigError("Monte-Carlo region is degenerate");
  if ((spec.x_hi - spec.x_lo).minCoeff() <= 0.0) throw ConfigError("Monte-Carlo region is degenerate");
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  Points sq = Points::Zero(1, d);
  for (double t : spec.times) {
    Points x(spec.points_per_time, d);
    for (int i = 0; i < spec.points_per_time; ++i)
      for (int j = 0; j < d; ++j) x(i, j) = spec.x_lo(j) + (spec.x_hi(j) - spec.x_lo(j)) * unif(rng);
    const Points diff = model(t, x) - truth(t, x);
    sq += diff.array().square().colwise().sum().matrix();
  }
  return accumulate(sq, static_cast<double>(spec.points_per_time) * spec.times.size());
}

FloorReport mc_floor(const Points& sample, Rng& rng, const RadialKernel& kernel, int n_projections) {
  if (sample.rows() < 4) throw ContractViolation("mc_floor needs at least 4 points");
  std::vector<Eigen::Index> idx(sample.rows());
  std::iota(idx.begin(), idx.end(), 0);
  std::shuffle(idx.begin(), idx.end(), rng);
  const Eigen::Index half = sample.rows() / 2;
  Points a(half, sample.cols()), b(half, sample.cols());
  for (Eigen::Index i = 0; i < half; ++i) {
    a.row(i) = sample.row(idx[i]);
    b.row(i) = sample.row(idx[half + i]);
  }
  FloorReport r;
  if (sample.cols() == 1) r.w2 = w2_1d(a, b);
  r.sw2 = sliced_w2(a, b, n_projections, rng);
  r.mmd = mmd(a, b, kernel);
  return r;
}

}  // namespace alltimeot
