#include "alltimeot/baselines.hpp"

#include <Eigen/LU>

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <vector>

namespace alltimeot {

namespace {

double logsumexp(const double* v, Eigen::Index n, Eigen::Index stride) {
  double mx = -std::numeric_limits<double>::infinity();
  for (Eigen::Index i = 0; i < n; ++i) mx = std::max(mx, v[i * stride]);
  if (!std::isfinite(mx)) return mx;
  double s = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) s += std::exp(v[i * stride] - mx);
  return mx + std::log(s);
}

}  // namespace

Eigen::MatrixXd EntropicCoupling::plan() const {
  Eigen::MatrixXd P(cost.rows(), cost.cols());
  for (Eigen::Index i = 0; i < P.rows(); ++i)
    for (Eigen::Index j = 0; j < P.cols(); ++j)
      P(i, j) = std::exp(std::log(a(i)) + std::log(b(j)) + (f(i) + g(j) - cost(i, j)) / epsilon);
  return P;
}

EntropicCoupling sinkhorn_log(const Eigen::MatrixXd& cost, const Vector& a, const Vector& b, double epsilon,
                              int max_iter, double tol) {
  const Eigen::Index n = cost.rows(), m = cost.cols();
  if (n == 0 || m == 0 || a.size() != n || b.size() != m) throw ContractViolation("sinkhorn: shape mismatch");
  if (!(epsilon > 0.0)) throw ConfigError("sinkhorn: epsilon must be positive");
  if (!cost.allFinite()) throw ContractViolation("sinkhorn: cost must be finite");
  if ((a.array() <= 0).any() || (b.array() <= 0).any()) throw ContractViolation("sinkhorn: weights must be positive");
  if (std::abs(a.sum() - 1.0) > 1e-9 || std::abs(b.sum() - 1.0) > 1e-9)
    throw ContractViolation("sinkhorn: weights must sum to 1");

  EntropicCoupling c;
  c.cost = cost;
  c.a = a;
  c.b = b;
  c.epsilon = epsilon;
  c.f = Vector::Zero(n);
  c.g = Vector::Zero(m);
  const Vector loga = a.array().log(), logb = b.array().log();
  // K(i, j) = -C_ij / eps, kept in both storage orders so each reduction is contiguous
  const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> Kr = -cost / epsilon;
  const Eigen::MatrixXd Kc = Kr;
  std::vector<double> buf(static_cast<std::size_t>(std::max(n, m)));

  // row LSE of log b_j + g_j / eps + K(i, j); the f update and the row-sum check share it
  auto row_lse = [&](Eigen::Index i) {
    const double* k = Kr.data() + i * m;
    for (Eigen::Index j = 0; j < m; ++j) buf[j] = logb(j) + c.g(j) / epsilon + k[j];
    return logsumexp(buf.data(), m, 1);
  };

  Vector lse(n);
  for (Eigen::Index i = 0; i < n; ++i) lse(i) = row_lse(i);
  for (int it = 1; it <= max_iter; ++it) {
    for (Eigen::Index i = 0; i < n; ++i) c.f(i) = -epsilon * lse(i);
    for (Eigen::Index j = 0; j < m; ++j) {
      const double* k = Kc.data() + j * n;
      for (Eigen::Index i = 0; i < n; ++i) buf[i] = loga(i) + c.f(i) / epsilon + k[i];
      c.g(j) = -epsilon * logsumexp(buf.data(), n, 1);
    }
    c.iterations = it;
    // column sums are exact after the g update; check the rows
    double viol = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      lse(i) = row_lse(i);
      viol = std::max(viol, std::abs(a(i) * std::exp(lse(i) + c.f(i) / epsilon) - a(i)));
    }
    c.violation = viol;
    if (viol <= tol) {
      c.converged = true;
      break;
    }
  }
  return c;
}

Eigen::MatrixXd squared_distance_cost(const Points& x, const Points& y) {
  if (x.cols() != y.cols()) throw ContractViolation("cost: dimension mismatch");
  Eigen::MatrixXd C(x.rows(), y.rows());
  for (Eigen::Index i = 0; i < x.rows(); ++i)
    for (Eigen::Index j = 0; j < y.rows(); ++j) C(i, j) = (x.row(i) - y.row(j)).squaredNorm();
  return C;
}

// ---------------------------------------------------------------------------

WotDrift::WotDrift(std::vector<Snapshot> snapshots, const WotOptions& opt) {
  if (snapshots.size() < 2) throw ConfigError("WOT needs at least two snapshots");
  std::sort(snapshots.begin(), snapshots.end(), [](const Snapshot& l, const Snapshot& r) { return l.t < r.t; });
  for (std::size_t k = 0; k + 1 < snapshots.size(); ++k) {
    const Points& x = snapshots[k].x;
    const Points& y = snapshots[k + 1].x;
    const double dt = snapshots[k + 1].t - snapshots[k].t;
    if (!(dt > 0.0)) throw ConfigError("WOT snapshots need distinct times");
    Eigen::MatrixXd C = squared_distance_cost(x, y);
    const double eps = opt.epsilon > 0.0 ? opt.epsilon : opt.eps_scale * C.mean();
    Vector a = Vector::Constant(x.rows(), 1.0 / x.rows());
    Vector b = Vector::Constant(y.rows(), 1.0 / y.rows());
    EntropicCoupling c = sinkhorn_log(C, a, b, eps > 0.0 ? eps : 1e-12, opt.max_iter, opt.tol);
    const Eigen::MatrixXd P = c.plan();
    Points v(x.rows(), x.cols());
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      const double mass = P.row(i).sum();
      v.row(i) = ((P.row(i) * y) / mass - x.row(i)) / dt;
    }
    times_.push_back(snapshots[k].t);
    sources_.push_back(x);
    velocities_.push_back(std::move(v));
    couplings_.push_back(std::move(c));
  }
  times_.push_back(snapshots.back().t);
}

bool WotDrift::all_converged() const {
  return std::all_of(couplings_.begin(), couplings_.end(), [](const EntropicCoupling& c) { return c.converged; });
}

Points WotDrift::evaluate(double t, const Points& x) const {
  std::size_t k = 0;
  while (k + 1 < sources_.size() && t >= times_[k + 1]) ++k;
  const Points& src = sources_[k];
  const Points& vel = velocities_[k];
  if (x.cols() != src.cols()) throw ContractViolation("WOT drift: dimension mismatch");
  Points u(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    Eigen::Index best = 0;
    double bd = std::numeric_limits<double>::infinity();
    for (Eigen::Index j = 0; j < src.rows(); ++j) {
      const double dd = (src.row(j) - x.row(i)).squaredNorm();
      if (dd < bd) bd = dd, best = j;
    }
    u.row(i) = vel.row(best);
  }
  return u;
}

DriftField WotDrift::as_field() const {
  auto self = std::make_shared<WotDrift>(*this);
  return [self](double t, const Points& x) { return self->evaluate(t, x); };
}

Points mccann_interpolate(const EntropicCoupling& coupling, const Points& source, const Points& target, double s,
                          Rng& rng, int n_out) {
  if (!coupling.converged) throw ConfigError("refusing to interpolate along an unconverged coupling");
  if (!(s >= 0.0 && s <= 1.0)) throw ConfigError("interpolation fraction must lie in [0, 1]");
  const Eigen::MatrixXd P = coupling.plan();
  if (P.rows() != source.rows() || P.cols() != target.rows() || source.cols() != target.cols())
    throw ContractViolation("McCann interpolation: shape mismatch");
  std::vector<double> cdf(static_cast<std::size_t>(P.size()));
  double acc = 0.0;
  for (Eigen::Index i = 0; i < P.rows(); ++i)
    for (Eigen::Index j = 0; j < P.cols(); ++j) cdf[static_cast<std::size_t>(i * P.cols() + j)] = (acc += P(i, j));
  std::uniform_real_distribution<double> unif(0.0, acc);
  Points out(n_out, source.cols());
  for (int k = 0; k < n_out; ++k) {
    const auto it = std::upper_bound(cdf.begin(), cdf.end(), unif(rng));
    const auto flat = static_cast<Eigen::Index>(std::min<std::size_t>(it - cdf.begin(), cdf.size() - 1));
    const Eigen::Index i = flat / P.cols(), j = flat % P.cols();
    out.row(k) = (1.0 - s) * source.row(i) + s * target.row(j);
  }
  return out;
}

// ---------------------------------------------------------------------------

Points AffineMapChain::apply(std::size_t k, const Points& x) const {
  return (x * A.at(k).transpose()).rowwise() + b.at(k).transpose();
}

Points AffineMapChain::drift(double t, const Points& x) const {
  if (times.size() < 2) throw ContractViolation("affine chain needs two anchors");
  std::size_t k = 1;
  while (k + 1 < times.size() && t >= times[k]) ++k;
  const double dt = times[k] - times[k - 1];
  const Eigen::MatrixXd M = A[k] * A[k - 1].inverse();
  Points pre = x.rowwise() - b[k - 1].transpose();
  Points y = (pre * M.transpose()).rowwise() + b[k].transpose();
  return (y - x) / dt;
}

DriftField AffineMapChain::as_field() const {
  auto self = std::make_shared<AffineMapChain>(*this);
  return [self](double t, const Points& x) { return self->drift(t, x); };
}

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// MMD^2(Y, Z) up to the Z-Z block, with its gradient in Y.
double mmd_sq_partial(const Points& Y, const Points& Z, double zz_mean, const RadialKernel& kernel, Points* gY) {
  const Eigen::Index n = Y.rows(), m = Z.rows(), d = Y.cols();
  const double a = kernel.a();
  double yy = 0.0, yz = 0.0;
  if (gY) gY->setZero(n, d);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = i + 1; j < n; ++j) {
      double r2 = 0;
      for (Eigen::Index k = 0; k < d; ++k) r2 += (Y(i, k) - Y(j, k)) * (Y(i, k) - Y(j, k));
      const double K = std::exp(-0.5 * a * r2);
      yy += 2.0 * K;
      if (gY) {
        // d/dY_i of 2K/n^2 = -2 a (Y_i - Y_j) K / n^2
        const double c = -2.0 * a * K / (static_cast<double>(n) * n);
        for (Eigen::Index k = 0; k < d; ++k) {
          const double diff = Y(i, k) - Y(j, k);
          (*gY)(i, k) += c * diff;
          (*gY)(j, k) -= c * diff;
        }
      }
    }
    yy += 1.0;
    for (Eigen::Index j = 0; j < m; ++j) {
      double r2 = 0;
      for (Eigen::Index k = 0; k < d; ++k) r2 += (Y(i, k) - Z(j, k)) * (Y(i, k) - Z(j, k));
      const double K = std::exp(-0.5 * a * r2);
      yz += K;
      if (gY) {
        const double c = 2.0 * a * K / (static_cast<double>(n) * m);
        for (Eigen::Index k = 0; k < d; ++k) (*gY)(i, k) += c * (Y(i, k) - Z(j, k));
      }
    }
  }
  return yy / (static_cast<double>(n) * n) + zz_mean - 2.0 * yz / (static_cast<double>(n) * m);
}

double zz_block_mean(const Points& Z, const RadialKernel& kernel) {
  const double a = kernel.a();
  double s = 0;
  for (Eigen::Index i = 0; i < Z.rows(); ++i)
    for (Eigen::Index j = 0; j < Z.rows(); ++j) s += std::exp(-0.5 * a * (Z.row(i) - Z.row(j)).squaredNorm());
  return s / (static_cast<double>(Z.rows()) * Z.rows());
}

struct MmotProblem {
  const std::vector<Snapshot>* snaps;
  std::vector<double> zz;
  double lambda_m;
  RadialKernel kernel;
};

AffineMapChain unpack(const std::vector<Snapshot>& snaps, const Vector& p) {
  const int d = static_cast<int>(snaps.front().x.cols());
  AffineMapChain ch;
  for (const auto& s : snaps) ch.times.push_back(s.t);
  ch.A.push_back(Eigen::MatrixXd::Identity(d, d));
  ch.b.push_back(Vector::Zero(d));
  Eigen::Index off = 0;
  for (std::size_t k = 1; k < snaps.size(); ++k) {
    ch.A.push_back(Eigen::Map<const RowMat>(p.data() + off, d, d));
    off += d * d;
    ch.b.push_back(p.segment(off, d));
    off += d;
  }
  return ch;
}

double mmot_eval(const MmotProblem& pr, const Vector& p, Vector* grad) {
  const auto& snaps = *pr.snaps;
  const Points& x0 = snaps.front().x;
  const int d = static_cast<int>(x0.cols());
  const Eigen::Index n = x0.rows();
  const AffineMapChain ch = unpack(snaps, p);
  std::vector<Points> Y(snaps.size());
  for (std::size_t k = 0; k < snaps.size(); ++k) Y[k] = ch.apply(k, x0);
  std::vector<Points> gY(snaps.size(), Points::Zero(n, d));
  double total = 0.0;
  for (std::size_t k = 1; k < snaps.size(); ++k) {
    const double dt = snaps[k].t - snaps[k - 1].t;
    const Points diff = Y[k] - Y[k - 1];
    total += diff.squaredNorm() / (n * dt);
    if (grad) {
      gY[k] += 2.0 * diff / (n * dt);
      gY[k - 1] -= 2.0 * diff / (n * dt);
    }
    Points gm;
    total += pr.lambda_m * mmd_sq_partial(Y[k], snaps[k].x, pr.zz[k], pr.kernel, grad ? &gm : nullptr);
    if (grad) gY[k] += pr.lambda_m * gm;
  }
  if (grad) {
    grad->setZero(p.size());
    Eigen::Index off = 0;
    for (std::size_t k = 1; k < snaps.size(); ++k) {
      RowMat gA = gY[k].transpose() * x0;
      Eigen::Map<RowMat>(grad->data() + off, d, d) = gA;
      off += d * d;
      grad->segment(off, d) = gY[k].colwise().sum().transpose();
      off += d;
    }
  }
  return total;
}

MmotProblem make_problem(const std::vector<Snapshot>& snaps, double lambda_m, const RadialKernel& kernel) {
  if (snaps.size() < 2) throw ConfigError("MMOT needs at least two snapshots");
  MmotProblem pr{&snaps, {}, lambda_m, kernel};
  for (const auto& s : snaps) pr.zz.push_back(zz_block_mean(s.x, kernel));
  return pr;
}

}  // namespace

double mmot_objective(const std::vector<Snapshot>& snapshots, const Vector& params, double lambda_m,
                      const RadialKernel& kernel, Vector* grad) {
  return mmot_eval(make_problem(snapshots, lambda_m, kernel), params, grad);
}

AffineMapChain mmot_fit_cell(const std::vector<Snapshot>& snapshots, double lambda_m, double alpha,
                             const RadialKernel& kernel, const Vector& init, const QuasiNewtonConfig& optimizer,
                             double* objective) {
  RadialKernel k = kernel;
  k.h = kernel.h * alpha;
  k.validate();
  const MmotProblem pr = make_problem(snapshots, lambda_m, k);
  Objective f = [&pr](const Vector& w, Vector& g) { return mmot_eval(pr, w, &g); };
  QnResult r = minimize_qn(f, init, optimizer);
  if (objective) *objective = r.f;
  return unpack(snapshots, r.w);
}

MmotResult mmot_affine_fit(const std::vector<Snapshot>& snapshots, const RadialKernel& kernel,
                           const MmotOptions& options, Rng& rng, const MmotScore& score) {
  if (snapshots.size() < 2) throw ConfigError("MMOT needs at least two snapshots");
  const int d = static_cast<int>(snapshots.front().x.cols());
  const Eigen::Index P = static_cast<Eigen::Index>(snapshots.size() - 1) * (d * d + d);
  std::uniform_real_distribution<double> unif(-options.init_scale, options.init_scale);
  std::vector<Vector> inits;
  for (int i = 0; i < options.inits; ++i) {
    Vector w(P);
    Eigen::Index off = 0;
    for (std::size_t k = 1; k < snapshots.size(); ++k) {
      for (int r = 0; r < d; ++r)
        for (int c = 0; c < d; ++c) w(off++) = (r == c ? 1.0 : 0.0) + unif(rng);
      for (int r = 0; r < d; ++r) w(off++) = unif(rng);
    }
    inits.push_back(w);
  }
  MmotResult res;
  bool any = false;
  for (double lam : options.lambdas) {
    for (double alpha : options.alphas) {
      for (int i = 0; i < options.inits; ++i) {
        MmotCell cell;
        cell.lambda_m = lam;
        cell.alpha = alpha;
        cell.init = i;
        try {
          cell.maps = mmot_fit_cell(snapshots, lam, alpha, kernel, inits[i], options.optimizer, &cell.objective);
          cell.score = score ? score(cell.maps, cell) : cell.objective;
          cell.ok = std::isfinite(cell.score);
          if (!cell.ok) cell.error = "non-finite score";
        } catch (const std::exception& e) {
          cell.ok = false;
          cell.error = e.what();
        }
        res.cells.push_back(std::move(cell));
        const std::size_t idx = res.cells.size() - 1;
        if (res.cells[idx].ok && (!any || res.cells[idx].score < res.cells[res.best].score)) {
          res.best = idx;
          any = true;
        }
      }
    }
  }
  if (!any) throw OptimizerError("every MMOT grid cell failed");
  return res;
}

// ---------------------------------------------------------------------------

void flow_matching_fit(const Points& mu0, const Points& mu1, DriftModel& model, const FlowMatchingOptions& options,
                       Rng& rng, double T) {
  if (mu0.rows() == 0 || mu1.rows() == 0 || mu0.cols() != mu1.cols() || mu0.cols() != model.dim())
    throw ContractViolation("flow matching: sample shape mismatch");
  if (options.pairs < 1) throw ConfigError("flow matching needs at least one pair");
  const int n = options.pairs;
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::uniform_int_distribution<Eigen::Index> pick0(0, mu0.rows() - 1), pick1(0, mu1.rows() - 1);
  Vector t(n);
  Points xt(n, mu0.cols()), target(n, mu0.cols());
  for (int i = 0; i < n; ++i) {
    const double s = unif(rng);
    const auto i0 = pick0(rng), i1 = pick1(rng);
    t(i) = s * T;
    xt.row(i) = (1.0 - s) * mu0.row(i0) + s * mu1.row(i1);
    target.row(i) = (mu1.row(i1) - mu0.row(i0)) / T;
  }
  auto work = model.clone();
  Objective f = [&](const Vector& w, Vector& g) {
    work->set_params(w);
    const Points r = work->evaluate(t, xt) - target;
    g = work->backprop(t, xt, (2.0 / n) * r);
    return r.squaredNorm() / n;
  };
  QnResult res = minimize_qn(f, model.params(), options.optimizer);
  model.set_params(res.w);
}

}  // namespace alltimeot
