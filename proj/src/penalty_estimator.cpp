#include "alltimeot/penalty_estimator.hpp"

#include <algorithm>
#include <cmath>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace alltimeot {

TimeMode parse_time_mode(const std::string& name) {
  if (name == "grid") return TimeMode::grid;
  if (name == "iid_uniform" || name == "iid") return TimeMode::iid_uniform;
  throw ConfigError("unknown time mode: " + name);
}

std::string to_string(TimeMode mode) { return mode == TimeMode::grid ? "grid" : "iid_uniform"; }

Vector SampleBatch::point_times() const {
  Vector t(size());
  for (int m = 0; m < M(); ++m) t.segment(static_cast<Eigen::Index>(m) * N, N).setConstant(times(m));
  return t;
}

void SampleBatch::validate() const {
  if (N < 1 || M() < 1 || x0.rows() < 1) throw ContractViolation("batch needs M, N, N0 >= 1");
  if (x.rows() != static_cast<Eigen::Index>(M()) * N) throw ContractViolation("batch rows != M*N");
  if (x0.cols() != x.cols()) throw ContractViolation("batch dimension mismatch between slices and x0");
  for (int m = 0; m < M(); ++m)
    if (!(times(m) >= 0.0 && times(m) <= T)) throw ContractViolation("batch time outside [0, T]");
}

SampleBatch draw_batch(const MarginalFlow& flow, int M, int N, int N0, TimeMode mode, Rng& rng) {
  if (M < 1 || N < 1 || N0 < 1) throw ConfigError("draw_batch requires M, N, N0 >= 1");
  SampleBatch b;
  b.T = flow.T;
  b.N = N;
  b.times.resize(M);
  if (mode == TimeMode::grid) {
    for (int m = 0; m < M; ++m) b.times(m) = flow.T * (m + 0.5) / M;
  } else {
    std::uniform_real_distribution<double> unif(0.0, flow.T);
    for (int m = 0; m < M; ++m) b.times(m) = unif(rng);
  }
  b.x.resize(static_cast<Eigen::Index>(M) * N, flow.dim());
  for (int m = 0; m < M; ++m) b.x.middleRows(static_cast<Eigen::Index>(m) * N, N) = sample(flow, b.times(m), N, rng);
  b.x0 = sample(flow, 0.0, N0, rng);
  return b;
}

std::vector<SampleBatch> draw_batches(const MarginalFlow& flow, int M, int N, int N0, TimeMode mode, int count,
                                      std::uint64_t master_seed) {
  std::vector<SampleBatch> out;
  out.reserve(count);
  for (int k = 0; k < count; ++k) {
    Rng rng = make_rng(master_seed, {stage::batches, static_cast<std::uint64_t>(k)});
    out.push_back(draw_batch(flow, M, N, N0, mode, rng));
  }
  return out;
}

void LossConfig::validate() const {
  if (!(lambda > 0.0)) throw ConfigError("lambda must be positive");
  if (!(sigma >= 0.0)) throw ConfigError("sigma must be nonnegative");
  if (!(T > 0.0)) throw ConfigError("horizon must be positive");
  if (threads < 1) throw ConfigError("threads must be >= 1");
  kernel.validate();
}

double kinetic_energy(const SampleBatch& batch, const Points& u, double T) {
  if (u.rows() != batch.size() || u.cols() != batch.dim()) throw ContractViolation("drift values misaligned with batch");
  return T / batch.size() * u.squaredNorm();
}

namespace {

struct Sums {
  double s1 = 0, s2 = 0, s3 = 0;
};

struct Ctx {
  const double* x;
  const double* u;
  const double* z;
  const double* tp;  // per-row time
  int n, n0, d, N;
  double T, a, s;
  bool mask;
  double c1, c2, c3;  // only used for gradients
};

/// Accumulates all pair (p, q > p) and boundary (p, k) terms for row p.
template <int D, bool Sigma, bool Grad>
void row_terms(const Ctx& c, int p, Sums& acc, double* g) {
  const int d = D > 0 ? D : c.d;
  const double a = c.a, s = c.s;
  const double* xp = c.x + static_cast<std::ptrdiff_t>(p) * d;
  const double* up = c.u + static_cast<std::ptrdiff_t>(p) * d;
  const double tp = c.tp[p];
  const int slice_p = p / c.N;
  double gp[D > 0 ? D : 16];
  double* gpp = gp;
  std::vector<double> gp_dyn;
  if (Grad) {
    if (D <= 0 && d > 16) {
      gp_dyn.assign(d, 0.0);
      gpp = gp_dyn.data();
    } else {
      for (int j = 0; j < d; ++j) gp[j] = 0.0;
    }
  }
  double dx[D > 0 ? D : 16];
  std::vector<double> dx_dyn;
  double* dxp = dx;
  if (D <= 0 && d > 16) {
    dx_dyn.resize(d);
    dxp = dx_dyn.data();
  }

  double s1 = 0, s2 = 0, s3 = 0;
  for (int q = p + 1; q < c.n; ++q) {
    const bool same_slice = (q / c.N) == slice_p;
    if (c.mask && same_slice) continue;
    const double* xq = c.x + static_cast<std::ptrdiff_t>(q) * d;
    const double* uq = c.u + static_cast<std::ptrdiff_t>(q) * d;
    const double tq = c.tp[q];
    const double dt = tp - tq;
    double q2 = 0, udx_p = 0, udx_q = 0, uu = 0;
    for (int j = 0; j < d; ++j) {
      const double v = xp[j] - xq[j];
      dxp[j] = v;
      q2 += v * v;
      udx_p += up[j] * v;
      udx_q += uq[j] * v;
      uu += up[j] * uq[j];
    }
    const double K = std::exp(-0.5 * a * (dt * dt + q2));
    const double taup = dt + udx_p, tauq = dt + udx_q;
    const double w = c.T - std::max(tp, tq);
    const double phi1 = -a * K, phi2 = a * a * K;
    double aa = -phi2 * taup * tauq - phi1 * (1.0 + uu);
    double B = 0, S = 0;
    if constexpr (Sigma) {
      const double phi3 = -a * phi2, phi4 = -a * phi3;
      B = (d + 2) * phi2 + q2 * phi3;
      S = d * phi1 + q2 * phi2;
      aa += s * (udx_p - udx_q) * B + s * s * (d * (d + 2) * phi2 + 2.0 * (d + 2) * q2 * phi3 + q2 * q2 * phi4);
    }
    s1 += w * aa;
    const bool p_first = tp <= tq, q_first = tq <= tp;
    if (p_first) s3 += phi1 * taup + s * S;
    if (q_first) s3 += -phi1 * tauq + s * S;
    if constexpr (Grad) {
      const double beta = -2.0 * c.c1 * w * phi1;
      double alpha_p = 2.0 * c.c1 * w * (-phi2 * tauq + s * B);
      double alpha_q = 2.0 * c.c1 * w * (-phi2 * taup - s * B);
      if (p_first) alpha_p -= c.c3 * phi1;
      if (q_first) alpha_q += c.c3 * phi1;
      double* gq = g + static_cast<std::ptrdiff_t>(q) * d;
      for (int j = 0; j < d; ++j) {
        gpp[j] += alpha_p * dxp[j] + beta * uq[j];
        gq[j] += alpha_q * dxp[j] + beta * up[j];
      }
    }
  }

  const double wb = c.T - tp;
  for (int k = 0; k < c.n0; ++k) {
    const double* zk = c.z + static_cast<std::ptrdiff_t>(k) * d;
    double q2 = 0, udx = 0;
    for (int j = 0; j < d; ++j) {
      const double v = xp[j] - zk[j];
      dxp[j] = v;
      q2 += v * v;
      udx += up[j] * v;
    }
    const double K = std::exp(-0.5 * a * (tp * tp + q2));
    const double phi1 = -a * K;
    double A = phi1 * (tp + udx);
    if constexpr (Sigma) A += s * (d * phi1 + q2 * a * a * K);
    s2 += wb * A;
    if constexpr (Grad) {
      const double coef = c.c2 * wb * phi1;
      for (int j = 0; j < d; ++j) gpp[j] += coef * dxp[j];
    }
  }
  acc.s1 += s1;
  acc.s2 += s2;
  acc.s3 += s3;
  if constexpr (Grad) {
    double* gpr = g + static_cast<std::ptrdiff_t>(p) * d;
    for (int j = 0; j < d; ++j) gpr[j] += gpp[j];
  }
}

template <int D, bool Sigma, bool Grad>
Sums run_rows(const Ctx& c, int threads, double* g) {
  constexpr int chunk = 8;
  if (threads <= 1) {
    Sums acc;
    for (int p = 0; p < c.n; ++p) row_terms<D, Sigma, Grad>(c, p, acc, g);
    return acc;
  }
  const std::size_t gsize = static_cast<std::size_t>(c.n) * c.d;
  std::vector<Sums> partial(threads);
  std::vector<std::vector<double>> gbuf(threads);
#ifdef _OPENMP
#pragma omp parallel num_threads(threads)
  {
    const int tid = omp_get_thread_num();
    const int nt = omp_get_num_threads();
    if (Grad) gbuf[tid].assign(gsize, 0.0);
    Sums acc;
    // fixed round-robin chunk assignment so the partition depends only on the thread count
    for (int start = tid * chunk; start < c.n; start += nt * chunk)
      for (int p = start; p < std::min(c.n, start + chunk); ++p)
        row_terms<D, Sigma, Grad>(c, p, acc, Grad ? gbuf[tid].data() : nullptr);
    partial[tid] = acc;
  }
#else
  gbuf[0].assign(gsize, 0.0);
  for (int p = 0; p < c.n; ++p) row_terms<D, Sigma, Grad>(c, p, partial[0], Grad ? gbuf[0].data() : nullptr);
#endif
  Sums total;
  for (int t = 0; t < threads; ++t) {
    total.s1 += partial[t].s1;
    total.s2 += partial[t].s2;
    total.s3 += partial[t].s3;
    if (Grad && !gbuf[t].empty())
      for (std::size_t i = 0; i < gsize; ++i) g[i] += gbuf[t][i];
  }
  return total;
}

template <bool Sigma, bool Grad>
Sums dispatch_dim(const Ctx& c, int threads, double* g) {
  switch (c.d) {
    case 1: return run_rows<1, Sigma, Grad>(c, threads, g);
    case 2: return run_rows<2, Sigma, Grad>(c, threads, g);
    default: return run_rows<-1, Sigma, Grad>(c, threads, g);
  }
}

}  // namespace

PenaltyValue penalty_qhat(const SampleBatch& batch, const Points& u, const LossConfig& config, bool with_grad) {
  batch.validate();
  config.validate();
  if (u.rows() != batch.size() || u.cols() != batch.dim()) throw ContractViolation("drift values misaligned with batch");
  if (config.kernel.profile != KernelProfile::gaussian) throw ConfigError("only the Gaussian profile is supported");
  const Vector tp = batch.point_times();
  const double n = batch.size();
  const double T = config.T;

  Ctx c{};
  c.x = batch.x.data();
  c.u = u.data();
  c.z = batch.x0.data();
  c.tp = tp.data();
  c.n = batch.size();
  c.n0 = static_cast<int>(batch.x0.rows());
  c.d = batch.dim();
  c.N = batch.N;
  c.T = T;
  c.a = config.kernel.a();
  c.s = 0.5 * config.sigma * config.sigma;
  c.mask = config.same_slice_mask;
  c.c1 = T * T / (n * n);
  c.c2 = 2.0 * T / (n * c.n0);
  c.c3 = 2.0 * T * T / (n * n);

  PenaltyValue out;
  double* g = nullptr;
  if (with_grad) {
    out.grad = Points::Zero(batch.size(), batch.dim());
    g = out.grad.data();
  }
  const bool sigma = config.sigma > 0.0;
  Sums S;
  if (sigma)
    S = with_grad ? dispatch_dim<true, true>(c, config.threads, g) : dispatch_dim<true, false>(c, config.threads, g);
  else
    S = with_grad ? dispatch_dim<false, true>(c, config.threads, g) : dispatch_dim<false, false>(c, config.threads, g);
  out.value = 2.0 * c.c1 * S.s1 + c.c2 * S.s2 - c.c3 * S.s3;
  return out;
}

double penalty_qhat(const SampleBatch& batch, const Points& u, const LossConfig& config) {
  return penalty_qhat(batch, u, config, false).value;
}

LossValue total_loss(const DriftModel& model, const SampleBatch& batch, const LossConfig& config, bool with_grad) {
  if (model.dim() != batch.dim()) throw ContractViolation("model and batch dimension differ");
  const Vector t = batch.point_times();
  const Points u = model.evaluate(t, batch.x);
  LossValue out;
  out.kinetic = kinetic_energy(batch, u, config.T);
  PenaltyValue pen = penalty_qhat(batch, u, config, with_grad);
  out.penalty = pen.value;
  out.value = out.kinetic + config.lambda * out.penalty;
  if (with_grad) {
    Points cot = (2.0 * config.T / batch.size()) * u + config.lambda * pen.grad;
    out.grad = model.backprop(t, batch.x, cot);
  }
  return out;
}

LossValue loss_gradient(const DriftModel& model, const SampleBatch& batch, const LossConfig& config) {
  return total_loss(model, batch, config, true);
}

LossValue ensemble_loss(const DriftModel& model, const std::vector<SampleBatch>& batches, const LossConfig& config,
                        bool with_grad) {
  if (batches.empty()) throw ContractViolation("ensemble_loss: empty batch list");
  LossValue out;
  if (with_grad) out.grad = Vector::Zero(model.num_params());
  for (const auto& b : batches) {
    LossValue lv = total_loss(model, b, config, with_grad);
    out.value += lv.value;
    out.kinetic += lv.kinetic;
    out.penalty += lv.penalty;
    if (with_grad) out.grad += lv.grad;
  }
  const double k = static_cast<double>(batches.size());
  out.value /= k;
  out.kinetic /= k;
  out.penalty /= k;
  if (with_grad) out.grad /= k;
  return out;
}

QuadraticLoss build_quadratic(const DriftModel& model, const std::vector<SampleBatch>& batches,
                              const LossConfig& config) {
  if (!model.linear_in_params()) throw ConfigError("quadratic form needs a model linear in its parameters");
  auto m = model.clone();
  const int P = m->num_params();
  QuadraticLoss q;
  m->set_params(Vector::Zero(P));
  LossValue base = ensemble_loss(*m, batches, config, true);
  q.c = base.value;
  q.g = base.grad;
  q.H.resize(P, P);
  for (int j = 0; j < P; ++j) {
    Vector e = Vector::Zero(P);
    e(j) = 1.0;
    m->set_params(e);
    q.H.col(j) = ensemble_loss(*m, batches, config, true).grad - q.g;
  }
  q.H = 0.5 * (q.H + q.H.transpose()).eval();
  return q;
}

QuadraticLoss drift_value_quadratic(const SampleBatch& batch, const LossConfig& config) {
  batch.validate();
  config.validate();
  const int n = batch.size(), d = batch.dim(), n0 = static_cast<int>(batch.x0.rows());
  const Vector tp = batch.point_times();
  const double T = config.T, a = config.kernel.a(), s = 0.5 * config.sigma * config.sigma;
  const double c1 = T * T / (static_cast<double>(n) * n);
  const double c2 = 2.0 * T / (static_cast<double>(n) * n0);
  const double c3 = 2.0 * T * T / (static_cast<double>(n) * n);
  const double lam = config.lambda;

  QuadraticLoss q;
  q.c = lam * penalty_qhat(batch, Points::Zero(n, d), config);
  q.g = Vector::Zero(static_cast<Eigen::Index>(n) * d);
  q.H = Eigen::MatrixXd::Zero(q.g.size(), q.g.size());
  q.H.diagonal().setConstant(2.0 * T / n);
  Vector dx(d);
  for (int p = 0; p < n; ++p) {
    const auto xp = batch.x.row(p);
    for (int r = p + 1; r < n; ++r) {
      if (config.same_slice_mask && r / batch.N == p / batch.N) continue;
      dx = (xp - batch.x.row(r)).transpose();
      const double dt = tp(p) - tp(r), q2 = dx.squaredNorm();
      const double K = std::exp(-0.5 * a * (dt * dt + q2));
      const double phi1 = -a * K, phi2 = a * a * K, phi3 = -a * phi2;
      const double w = lam * 2.0 * c1 * (T - std::max(tp(p), tp(r)));
      const double B = s > 0.0 ? (d + 2) * phi2 + q2 * phi3 : 0.0;
      double lin_p = w * (-phi2 * dt + s * B), lin_r = w * (-phi2 * dt - s * B);
      if (tp(p) <= tp(r)) lin_p -= lam * c3 * phi1;
      if (tp(r) <= tp(p)) lin_r += lam * c3 * phi1;
      q.g.segment(static_cast<Eigen::Index>(p) * d, d) += lin_p * dx;
      q.g.segment(static_cast<Eigen::Index>(r) * d, d) += lin_r * dx;
      Eigen::MatrixXd blk = -w * phi2 * dx * dx.transpose();
      blk.diagonal().array() -= w * phi1;
      q.H.block(static_cast<Eigen::Index>(p) * d, static_cast<Eigen::Index>(r) * d, d, d) = blk;
      q.H.block(static_cast<Eigen::Index>(r) * d, static_cast<Eigen::Index>(p) * d, d, d) = blk;
    }
    const double wb = lam * c2 * (T - tp(p));
    for (int k = 0; k < n0; ++k) {
      dx = (xp - batch.x0.row(k)).transpose();
      const double K = std::exp(-0.5 * a * (tp(p) * tp(p) + dx.squaredNorm()));
      q.g.segment(static_cast<Eigen::Index>(p) * d, d) += wb * (-a * K) * dx;
    }
  }
  return q;
}

BiasProbeResult bias_probe(const MarginalFlow& flow, const Vector& u, const std::vector<int>& M_list, int N, int N0,
                           int seeds, TimeMode mode, const LossConfig& config, std::uint64_t master_seed) {
  if (M_list.size() < 2 || seeds < 2) throw ConfigError("bias probe needs >= 2 values of M and >= 2 seeds");
  if (u.size() != flow.dim()) throw ContractViolation("bias probe drift has wrong dimension");
  BiasProbeResult res;
  for (std::size_t i = 0; i < M_list.size(); ++i) {
    const int M = M_list[i];
    double sum = 0, sumsq = 0;
    for (int k = 0; k < seeds; ++k) {
      Rng rng = make_rng(master_seed, {stage::batches, static_cast<std::uint64_t>(M), static_cast<std::uint64_t>(k)});
      SampleBatch b = draw_batch(flow, M, N, N0, mode, rng);
      Points U = u.transpose().replicate(b.size(), 1);
      const double v = penalty_qhat(b, U, config);
      sum += v;
      sumsq += v * v;
    }
    BiasProbeRow row;
    row.M = M;
    row.mean = sum / seeds;
    const double var = std::max(0.0, (sumsq - seeds * row.mean * row.mean) / (seeds - 1));
    row.stderr_ = std::sqrt(var / seeds);
    res.rows.push_back(row);
  }
  // ordinary least squares of mean on 1/M
  const double n = static_cast<double>(res.rows.size());
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (const auto& r : res.rows) {
    const double x = 1.0 / r.M;
    sx += x;
    sy += r.mean;
    sxx += x * x;
    sxy += x * r.mean;
  }
  res.slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
  res.intercept = (sy - res.slope * sx) / n;
  double ss_res = 0, ss_tot = 0;
  const double ybar = sy / n;
  for (const auto& r : res.rows) {
    const double fit = res.intercept + res.slope / r.M;
    ss_res += (r.mean - fit) * (r.mean - fit);
    ss_tot += (r.mean - ybar) * (r.mean - ybar);
  }
  res.r2 = ss_tot > 0 ? 1.0 - ss_res / ss_tot : 1.0;
  return res;
}

}  // namespace alltimeot
