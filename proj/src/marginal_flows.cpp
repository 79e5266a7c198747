#include "alltimeot/marginal_flows.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace alltimeot {

namespace {

constexpr double pi = std::numbers::pi;

struct KindName {
  FlowKind kind;
  const char* name;
};

constexpr KindName kind_names[] = {
    {FlowKind::gauss_translate_1d, "gauss_translate_1d"}, {FlowKind::roundtrip_1d, "roundtrip_1d"},
    {FlowKind::bimodal_merge_1d, "bimodal_merge_1d"},     {FlowKind::gauss_translate_2d, "gauss_translate_2d"},
    {FlowKind::bifurcation_2d, "bifurcation_2d"},         {FlowKind::gauss_translate_nd, "gauss_translate_nd"},
    {FlowKind::stochastic_gauss_1d, "stochastic_gauss_1d"},
};

double normal_pdf(double x, double mean) {
  const double z = x - mean;
  return std::exp(-0.5 * z * z) / std::sqrt(2.0 * pi);
}

void check_time(const MarginalFlow& flow, double t) {
  if (!(flow.T > 0.0)) throw ConfigError("flow horizon must be positive");
  if (!(t >= 0.0 && t <= flow.T)) throw std::out_of_range("time outside [0, T]");
}

/// Mean of the Gaussian families at scaled time s = t/T.
Vector gaussian_mean(const MarginalFlow& f, double s) {
  switch (f.kind) {
    case FlowKind::gauss_translate_1d:
    case FlowKind::stochastic_gauss_1d:
      return Vector::Constant(1, -1.0 + 2.0 * s);
    case FlowKind::roundtrip_1d:
      return Vector::Constant(1, 2.0 * std::sin(pi * s));
    case FlowKind::gauss_translate_2d: {
      Vector m(2);
      m << -1.0 + 2.0 * s, 0.5 * s;
      return m;
    }
    case FlowKind::gauss_translate_nd:
      return Vector::Constant(f.d, s / std::sqrt(static_cast<double>(f.d)));
    default:
      throw std::logic_error("not a Gaussian family");
  }
}

bool is_mixture(FlowKind k) { return k == FlowKind::bimodal_merge_1d || k == FlowKind::bifurcation_2d; }

}  // namespace

FlowKind parse_flow_kind(std::string_view name) {
  for (const auto& kn : kind_names)
    if (name == kn.name) return kn.kind;
  throw ConfigError("unknown flow kind: " + std::string(name));
}

std::string to_string(FlowKind kind) {
  for (const auto& kn : kind_names)
    if (kn.kind == kind) return kn.name;
  return "unknown";
}

int MarginalFlow::dim() const {
  switch (kind) {
    case FlowKind::gauss_translate_2d:
    case FlowKind::bifurcation_2d:
      return 2;
    case FlowKind::gauss_translate_nd:
      if (d < 1) throw ConfigError("flow dimension must be >= 1");
      return d;
    default:
      return 1;
  }
}

double MarginalFlow::diffusion() const { return kind == FlowKind::stochastic_gauss_1d ? sigma : 0.0; }

MarginalFlow make_flow(FlowKind kind, int d) {
  MarginalFlow f;
  f.kind = kind;
  f.d = d;
  return f;
}

Points sample(const MarginalFlow& flow, double t, int n, Rng& rng) {
  check_time(flow, t);
  if (n < 0) throw ContractViolation("sample count must be nonnegative");
  const int d = flow.dim();
  const double s = t / flow.T;
  std::normal_distribution<double> normal(0.0, 1.0);
  Points x(n, d);
  if (is_mixture(flow.kind)) {
    const double m = flow.separation * (1.0 - s);
    std::bernoulli_distribution coin(0.5);
    for (int i = 0; i < n; ++i) {
      const double sign = coin(rng) ? 1.0 : -1.0;
      x(i, 0) = sign * m + normal(rng);
      for (int j = 1; j < d; ++j) x(i, j) = normal(rng);
    }
    return x;
  }
  const Vector mean = gaussian_mean(flow, s);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) x(i, j) = mean(j) + normal(rng);
  return x;
}

Vector true_drift_at(const MarginalFlow& flow, double t, const Eigen::Ref<const Vector>& x) {
  const int d = flow.dim();
  if (x.size() != d) throw ContractViolation("true_drift: dimension mismatch");
  const double T = flow.T;
  const double s = t / T;
  Vector u = Vector::Zero(d);
  switch (flow.kind) {
    case FlowKind::gauss_translate_1d:
      u(0) = 2.0 / T;
      break;
    case FlowKind::roundtrip_1d:
      u(0) = 2.0 * pi / T * std::cos(pi * s);
      break;
    case FlowKind::bimodal_merge_1d:
    case FlowKind::bifurcation_2d: {
      const double a = flow.separation;
      u(0) = -(a / T) * std::tanh(a * (1.0 - s) * x(0));
      break;
    }
    case FlowKind::gauss_translate_2d:
      u << 2.0 / T, 0.5 / T;
      break;
    case FlowKind::gauss_translate_nd:
      u.setConstant(1.0 / (T * std::sqrt(static_cast<double>(d))));
      break;
    case FlowKind::stochastic_gauss_1d: {
      const double m = -1.0 + 2.0 * s;
      u(0) = 2.0 / T + 0.5 * flow.sigma * flow.sigma * (m - x(0));
      break;
    }
  }
  return u;
}

Points true_drift(const MarginalFlow& flow, double t, const Points& x) {
  Points u(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) u.row(i) = true_drift_at(flow, t, Vector(x.row(i).transpose())).transpose();
  return u;
}

DriftField true_drift_field(const MarginalFlow& flow) {
  return [flow](double t, const Points& x) { return true_drift(flow, t, x); };
}

double density(const MarginalFlow& flow, double t, const Eigen::Ref<const Vector>& x) {
  check_time(flow, t);
  const int d = flow.dim();
  if (x.size() != d) throw ContractViolation("density: dimension mismatch");
  const double s = t / flow.T;
  if (is_mixture(flow.kind)) {
    const double m = flow.separation * (1.0 - s);
    double p = 0.5 * normal_pdf(x(0), -m) + 0.5 * normal_pdf(x(0), m);
    for (int j = 1; j < d; ++j) p *= normal_pdf(x(j), 0.0);
    return p;
  }
  const Vector mean = gaussian_mean(flow, s);
  double p = 1.0;
  for (int j = 0; j < d; ++j) p *= normal_pdf(x(j), mean(j));
  return p;
}

}  // namespace alltimeot
