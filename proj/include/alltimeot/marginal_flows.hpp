#pragma once

#include "alltimeot/common.hpp"

#include <string>
#include <string_view>

namespace alltimeot {

enum class FlowKind {
  gauss_translate_1d,
  roundtrip_1d,
  bimodal_merge_1d,
  gauss_translate_2d,
  bifurcation_2d,
  gauss_translate_nd,
  stochastic_gauss_1d,
};

FlowKind parse_flow_kind(std::string_view name);
std::string to_string(FlowKind kind);

/// Synthetic marginal family mu_t on [0, T] with a closed-form optimal drift.
///
/// gauss_translate_1d   N(-1 + 2s, 1)                      u* = 2/T
/// roundtrip_1d         N(2 sin(pi s), 1)                  u* = (2 pi / T) cos(pi s)
/// bimodal_merge_1d     1/2 N(-a(1-s), 1) + 1/2 N(a(1-s), 1)  u* = -(a/T) tanh(a (1-s) x)
/// gauss_translate_2d   N((-1 + 2s, s/2), I)               u* = (2, 1/2)/T
/// bifurcation_2d       bimodal in x1, N(0,1) in x2        u* = (-(a/T) tanh(a (1-s) x1), 0)
/// gauss_translate_nd   N(s/sqrt(d) 1_d, I_d)              u* = 1_d / (T sqrt(d))
/// stochastic_gauss_1d  N(-1 + 2s, 1) with diffusion sigma u* = 2/T + (sigma^2/2)(m(s) - x)
///
/// where s = t/T.
struct MarginalFlow {
  FlowKind kind = FlowKind::gauss_translate_1d;
  double T = 1.0;
  int d = 1;                ///< only read for gauss_translate_nd
  double separation = 2.0;  ///< mode offset a for the merging mixtures
  double sigma = 1.0;       ///< diffusion level, only read for stochastic_gauss_1d

  int dim() const;
  /// Diffusion level of the reference process (zero for every deterministic kind).
  double diffusion() const;
};

MarginalFlow make_flow(FlowKind kind, int d = 1);

/// n iid draws from mu_t, one per row.
Points sample(const MarginalFlow& flow, double t, int n, Rng& rng);

/// Optimal drift at a single point.
Vector true_drift_at(const MarginalFlow& flow, double t, const Eigen::Ref<const Vector>& x);
/// Optimal drift for every row of `x`.
Points true_drift(const MarginalFlow& flow, double t, const Points& x);
DriftField true_drift_field(const MarginalFlow& flow);

double density(const MarginalFlow& flow, double t, const Eigen::Ref<const Vector>& x);

}  // namespace alltimeot
