#pragma once

#include "alltimeot/common.hpp"

#include <cmath>
#include <span>

namespace alltimeot {

enum class KernelProfile { gaussian };

/// Isotropic radial kernel on space-time R^{d+1}.
struct RadialKernel {
  KernelProfile profile = KernelProfile::gaussian;
  double h = 1.0;

  void validate() const {
    if (!(h > 0.0) || !std::isfinite(h)) throw ConfigError("kernel bandwidth must be positive and finite");
  }
  double a() const { return 1.0 / (h * h); }
  double eval(double r2) const { return std::exp(-0.5 * r2 * a()); }
};

/// phi(r) and phi_{k+1} = phi_k'(r) / r. Entries above `order` are left at zero.
struct PhiLadder {
  double phi = 0, phi1 = 0, phi2 = 0, phi3 = 0, phi4 = 0;
  int order = 0;
};

namespace detail {

struct WideLadder {
  long double phi = 0, phi1 = 0, phi2 = 0, phi3 = 0, phi4 = 0;
};

}  // namespace detail

PhiLadder phi_ladder(double r, const RadialKernel& kernel, int order = 4);
/// Same ladder from the squared radius, so pair loops never take a square root.
PhiLadder phi_ladder_sq(double r2, const RadialKernel& kernel, int order = 4);

/// Space-time point y = (t, x).
struct SpaceTimePoint {
  double t = 0.0;
  std::span<const double> x;
};

/// A^u_y K(y2, y): generator with drift u applied in the y slot.
/// `u`, `y.x`, `y2.x` must share the same length.
double apply_A(std::span<const double> u, const SpaceTimePoint& y, const SpaceTimePoint& y2, double sigma,
               const RadialKernel& kernel);

/// A^u_y A^{u2}_{y2} K(y, y2). With sigma > 0 the ladder must carry order 4;
/// `ladder_order` lets callers request a truncated ladder, which is rejected.
double apply_AA(std::span<const double> u, std::span<const double> u2, const SpaceTimePoint& y,
                const SpaceTimePoint& y2, double sigma, const RadialKernel& kernel, int ladder_order = 4);

/// Gaussian sigma = 0 closed form [-a^2 tau tau' + a (1 + u.u')] K.
double apply_AA_gaussian_fast(std::span<const double> u, std::span<const double> u2, const SpaceTimePoint& y,
                              const SpaceTimePoint& y2, const RadialKernel& kernel);

namespace detail {

/// Shared pieces of the double-operator expression for one pair, computed from
/// the ladder and geometric scalars.
///
/// Derivation for sigma > 0 with s = sigma^2/2, D = y - y2, tau = D_t + u.D_x,
/// tau2 = D_t + u2.D_x, q = |D_x|^2:
///   A_{y2} K     = -phi1 tau2 + s (d phi1 + q phi2)
///   A_y A_{y2} K = -phi2 tau tau2 - phi1 (1 + u.u2)
///                  + s (u - u2).D_x [(d+2) phi2 + q phi3]
///                  + s^2 [d(d+2) phi2 + 2(d+2) q phi3 + q^2 phi4]
/// Cross terms in D_t cancel between the two Laplacian contributions.
/// The scalar API instantiates it in long double: the first two terms can cancel
/// to a small fraction of either one.
template <class Ladder, class R>
R aa_from_scalars(const Ladder& L, R tau, R tau2, R uu2, R du_dx, R q, int d, R s) {
  R v = -L.phi2 * tau * tau2 - L.phi1 * (1.0 + uu2);
  if (s != 0.0) {
    v += s * du_dx * ((d + 2) * L.phi2 + q * L.phi3);
    v += s * s * (d * (d + 2) * L.phi2 + 2.0 * (d + 2) * q * L.phi3 + q * q * L.phi4);
  }
  return v;
}

}  // namespace detail

}  // namespace alltimeot
