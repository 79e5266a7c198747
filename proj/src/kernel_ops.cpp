#include "alltimeot/kernel_ops.hpp"

#include <cmath>

namespace alltimeot {

PhiLadder phi_ladder_sq(double r2, const RadialKernel& kernel, int order) {
  kernel.validate();
  if (order != 2 && order != 4) throw ConfigError("ladder order must be 2 or 4");
  if (r2 < 0.0) throw ContractViolation("phi_ladder: negative radius");
  const double a = kernel.a();
  PhiLadder L;
  L.order = order;
  L.phi = std::exp(-0.5 * a * r2);
  L.phi1 = -a * L.phi;
  L.phi2 = -a * L.phi1;
  if (order == 4) {
    L.phi3 = -a * L.phi2;
    L.phi4 = -a * L.phi3;
  }
  return L;
}

PhiLadder phi_ladder(double r, const RadialKernel& kernel, int order) {
  if (r < 0.0) throw ContractViolation("phi_ladder: negative radius");
  return phi_ladder_sq(r * r, kernel, order);
}

namespace {

void check_dims(std::span<const double> u, const SpaceTimePoint& y, const SpaceTimePoint& y2) {
  if (u.size() != y.x.size() || y.x.size() != y2.x.size() || u.empty())
    throw ContractViolation("operator inputs must share spatial dimension");
}

struct Geometry {
  double dt = 0, q = 0, r2 = 0;
};

Geometry geometry(const SpaceTimePoint& y, const SpaceTimePoint& y2) {
  Geometry g;
  g.dt = y.t - y2.t;
  for (std::size_t i = 0; i < y.x.size(); ++i) {
    const double dx = y.x[i] - y2.x[i];
    g.q += dx * dx;
  }
  g.r2 = g.dt * g.dt + g.q;
  return g;
}

double dot_dx(std::span<const double> u, const SpaceTimePoint& y, const SpaceTimePoint& y2) {
  double s = 0;
  for (std::size_t i = 0; i < u.size(); ++i) s += u[i] * (y.x[i] - y2.x[i]);
  return s;
}

}  // namespace

double apply_A(std::span<const double> u, const SpaceTimePoint& y, const SpaceTimePoint& y2, double sigma,
               const RadialKernel& kernel) {
  check_dims(u, y, y2);
  if (sigma < 0.0) throw ConfigError("sigma must be nonnegative");
  const Geometry g = geometry(y, y2);
  const PhiLadder L = phi_ladder_sq(g.r2, kernel, 2);
  const double tau = g.dt + dot_dx(u, y, y2);
  double v = L.phi1 * tau;
  if (sigma > 0.0) {
    const double s = 0.5 * sigma * sigma;
    v += s * (static_cast<double>(u.size()) * L.phi1 + g.q * L.phi2);
  }
  return v;
}

double apply_AA(std::span<const double> u, std::span<const double> u2, const SpaceTimePoint& y,
                const SpaceTimePoint& y2, double sigma, const RadialKernel& kernel, int ladder_order) {
  check_dims(u, y, y2);
  if (u2.size() != u.size()) throw ContractViolation("operator inputs must share spatial dimension");
  if (sigma < 0.0) throw ConfigError("sigma must be nonnegative");
  if (sigma > 0.0 && ladder_order < 4) throw ConfigError("sigma > 0 requires a fourth-order derivative ladder");
  if (ladder_order != 2 && ladder_order != 4) throw ConfigError("ladder order must be 2 or 4");
  kernel.validate();
  const Geometry g = geometry(y, y2);
  const long double a = kernel.a();
  detail::WideLadder L;
  L.phi = std::exp(-0.5L * a * g.r2);
  L.phi1 = -a * L.phi;
  L.phi2 = -a * L.phi1;
  L.phi3 = -a * L.phi2;
  L.phi4 = -a * L.phi3;
  const double tau = g.dt + dot_dx(u, y, y2);
  const double tau2 = g.dt + dot_dx(u2, y, y2);
  double uu2 = 0, du_dx = 0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    uu2 += u[i] * u2[i];
    du_dx += (u[i] - u2[i]) * (y.x[i] - y2.x[i]);
  }
  const long double s = 0.5L * sigma * sigma;
  return static_cast<double>(detail::aa_from_scalars<detail::WideLadder, long double>(
      L, tau, tau2, uu2, du_dx, g.q, static_cast<int>(u.size()), s));
}

double apply_AA_gaussian_fast(std::span<const double> u, std::span<const double> u2, const SpaceTimePoint& y,
                              const SpaceTimePoint& y2, const RadialKernel& kernel) {
  if (kernel.profile != KernelProfile::gaussian) throw ConfigError("fast path supports the Gaussian profile only");
  check_dims(u, y, y2);
  if (u2.size() != u.size()) throw ContractViolation("operator inputs must share spatial dimension");
  kernel.validate();
  const double a = kernel.a();
  const Geometry g = geometry(y, y2);
  const double K = std::exp(-0.5 * a * g.r2);
  const double tau = g.dt + dot_dx(u, y, y2);
  const double tau2 = g.dt + dot_dx(u2, y, y2);
  double uu2 = 0;
  for (std::size_t i = 0; i < u.size(); ++i) uu2 += u[i] * u2[i];
  const long double al = a;
  return static_cast<double>((-al * al * tau * tau2 + al * (1.0L + uu2)) * K);
}

}  // namespace alltimeot
