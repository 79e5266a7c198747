#include <doctest.h>

#include "alltimeot/baselines.hpp"
#include "alltimeot/marginal_flows.hpp"
#include "alltimeot/metrics.hpp"
#include "oracles.hpp"

#include <cmath>
#include <numbers>

using namespace alltimeot;

namespace {

Vector uniform_weights(Eigen::Index n) { return Vector::Constant(n, 1.0 / static_cast<double>(n)); }

std::vector<Snapshot> flow_snapshots(const MarginalFlow& flow, int count, int n, Rng& rng) {
  std::vector<Snapshot> out;
  for (double t : linspace(0.0, flow.T, count)) out.push_back({t, sample(flow, t, n, rng)});
  return out;
}

GridSpec unit_grid() {
  GridSpec g;
  g.x_lo = Vector::Constant(1, -4.0);
  g.x_hi = Vector::Constant(1, 4.0);
  return g;
}

}  // namespace

TEST_CASE("Sinkhorn on a single point") {
  Eigen::MatrixXd C(1, 1);
  C << 3.0;
  auto c = sinkhorn_log(C, Vector::Ones(1), Vector::Ones(1), 0.1);
  CHECK(c.converged);
  CHECK(c.plan()(0, 0) == doctest::Approx(1.0));
}

TEST_CASE("Sinkhorn with a small epsilon concentrates on the assignment") {
  Eigen::MatrixXd C(2, 2);
  C << 0, 1, 1, 0;
  auto c = sinkhorn_log(C, uniform_weights(2), uniform_weights(2), 0.01);
  CHECK(c.converged);
  CHECK(c.plan().diagonal().sum() >= 0.99);
}

TEST_CASE("Sinkhorn marginals on random instances") {
  Rng rng(1);
  std::uniform_int_distribution<int> size(1, 30);
  std::uniform_real_distribution<double> u(0.1, 1.0);
  for (int rep = 0; rep < 50; ++rep) {
    const int n = size(rng), m = size(rng);
    Points x(n, 2), y(m, 2);
    for (auto& v : x.reshaped()) v = 3 * u(rng);
    for (auto& v : y.reshaped()) v = 3 * u(rng);
    Vector a(n), b(m);
    for (auto& v : a) v = u(rng);
    for (auto& v : b) v = u(rng);
    a /= a.sum();
    b /= b.sum();
    auto c = sinkhorn_log(squared_distance_cost(x, y), a, b, 0.05 + 0.5 * u(rng));
    const Eigen::MatrixXd P = c.plan();
    CHECK(c.converged);
    CHECK(c.violation <= 1e-6);
    CHECK((P.rowwise().sum() - a).cwiseAbs().maxCoeff() <= 1e-6);
    CHECK((P.colwise().sum().transpose() - b).cwiseAbs().maxCoeff() <= 1e-6);
    CHECK(std::abs(P.sum() - 1.0) <= 1e-8);
    CHECK(P.minCoeff() >= 0.0);
  }
}

TEST_CASE("Sinkhorn survives extreme cost scales and rejects bad input") {
  Eigen::MatrixXd C(2, 2);
  C << 0, 1e6, 1e6, 0;
  auto c = sinkhorn_log(C, uniform_weights(2), uniform_weights(2), 1e-3);
  CHECK(c.plan().allFinite());
  CHECK(c.converged);
  Vector bad(2);
  bad << 0.3, 0.3;
  CHECK_THROWS(sinkhorn_log(C, bad, uniform_weights(2), 0.1));
  CHECK_THROWS(sinkhorn_log(C, uniform_weights(2), uniform_weights(2), 0.0));
}

TEST_CASE("Sinkhorn reports non-convergence through the flag") {
  Rng rng(2);
  Points x(20, 1), y(20, 1);
  std::normal_distribution<double> nd;
  for (auto& v : x.reshaped()) v = nd(rng);
  for (auto& v : y.reshaped()) v = nd(rng) + 3;
  auto c = sinkhorn_log(squared_distance_cost(x, y), uniform_weights(20), uniform_weights(20), 1e-3, 2, 1e-12);
  CHECK_FALSE(c.converged);
  CHECK(c.violation > 1e-12);
  CHECK_THROWS_AS(mccann_interpolate(c, x, y, 0.5, rng, 10), ConfigError);
}

TEST_CASE("WOT drift on identical snapshots is near zero") {
  Rng rng(3);
  Points x = sample(make_flow(FlowKind::gauss_translate_1d), 0.0, 100, rng);
  WotOptions opt;
  opt.epsilon = 1e-3;
  WotDrift w({{0.0, x}, {1.0, x}}, opt);
  CHECK(w.all_converged());
  Points u = w.evaluate(0.5, x);
  CHECK(u.cwiseAbs().maxCoeff() <= 0.1);
  CHECK_THROWS_AS(WotDrift({{0.0, x}}), ConfigError);
}

TEST_CASE("WOT recovers a translation velocity") {
  Rng rng(4);
  const double c = 1.5, dt = 0.5;
  std::normal_distribution<double> nd;
  Points x(500, 1);
  for (auto& v : x.reshaped()) v = nd(rng);
  Points y(500, 1);
  for (auto& v : y.reshaped()) v = nd(rng) + c;
  WotDrift w({{0.0, x}, {dt, y}});
  Points bulk(21, 1);
  for (int i = 0; i < 21; ++i) bulk(i, 0) = -1.0 + 0.1 * i;
  Points u = w.evaluate(0.2, bulk);
  for (int i = 0; i < 21; ++i) CHECK(std::abs(u(i, 0) - c / dt) <= 0.15 * c / dt);
}

TEST_CASE("WOT drift error is amplified by dense snapshots on the roundtrip flow") {
  auto flow = make_flow(FlowKind::roundtrip_1d);
  const auto truth = true_drift_field(flow);
  std::vector<double> mse;
  for (int M : {5, 50}) {
    Rng rng = make_rng(1, {static_cast<std::uint64_t>(M)});
    WotDrift w(flow_snapshots(flow, M, 200, rng));
    CHECK(w.all_converged());
    mse.push_back(drift_grid_mse(w.as_field(), truth, unit_grid()).total);
    MESSAGE("M=" << M << " WOT drift MSE " << mse.back());
  }
  CHECK(mse[1] >= 5 * mse[0]);
}

TEST_CASE("McCann interpolation endpoints and midpoint") {
  Rng rng(6);
  std::normal_distribution<double> nd;
  Points x(200, 1), y(200, 1);
  for (auto& v : x.reshaped()) v = nd(rng);
  y = x.array() + 4.0;
  auto c = sinkhorn_log(squared_distance_cost(x, y), uniform_weights(200), uniform_weights(200), 0.05);
  REQUIRE(c.converged);
  Points s0 = mccann_interpolate(c, x, y, 0.0, rng, 1000);
  Points s1 = mccann_interpolate(c, x, y, 1.0, rng, 1000);
  CHECK(w2_1d(s0, x) <= 0.15);
  CHECK(w2_1d(s1, y) <= 0.15);
  Points mid = mccann_interpolate(c, x, y, 0.5, rng, 1000);
  Points shifted = x.array() + 2.0;
  CHECK(w2_1d(mid, shifted) <= 0.15);
  CHECK_THROWS(mccann_interpolate(c, x, y, 1.5, rng, 10));
}

TEST_CASE("MMOT objective gradient matches finite differences") {
  Rng rng(7);
  for (FlowKind k : {FlowKind::roundtrip_1d, FlowKind::gauss_translate_2d}) {
    auto flow = make_flow(k);
    auto snaps = flow_snapshots(flow, 3, 12, rng);
    const int d = flow.dim();
    const Eigen::Index P = 2 * (d * d + d);
    std::uniform_real_distribution<double> u(-0.5, 0.5);
    Vector w(P);
    for (auto& v : w) v = 1.0 + u(rng);
    RadialKernel kern{KernelProfile::gaussian, 0.8};
    Vector g;
    mmot_objective(snaps, w, 100.0, kern, &g);
    auto f = [&](const Vector& p) { return mmot_objective(snaps, p, 100.0, kern, nullptr); };
    CHECK(oracle::rel_err(g, oracle::fd_gradient(f, w, 1e-6)) <= 1e-6);
  }
}

TEST_CASE("MMOT on identical snapshots returns the identity") {
  Rng rng(8);
  Points x = sample(make_flow(FlowKind::gauss_translate_2d), 0.0, 60, rng);
  std::vector<Snapshot> snaps = {{0.0, x}, {0.5, x}, {1.0, x}};
  MmotOptions opt;
  opt.lambdas = {1e3};
  opt.alphas = {1.0};
  opt.inits = 2;
  auto res = mmot_affine_fit(snaps, RadialKernel{KernelProfile::gaussian, 1.0}, opt, rng);
  const auto& ch = res.maps();
  for (std::size_t k = 1; k < 3; ++k) {
    CHECK((ch.A[k] - Eigen::MatrixXd::Identity(2, 2)).cwiseAbs().maxCoeff() <= 0.05);
    CHECK(ch.b[k].cwiseAbs().maxCoeff() <= 0.05);
  }
  Points u = ch.drift(0.3, x);
  CHECK(u.cwiseAbs().maxCoeff() <= 0.2);
}

TEST_CASE("MMOT affine fit tracks the roundtrip flow with five snapshots") {
  Rng rng(9);
  auto flow = make_flow(FlowKind::roundtrip_1d);
  auto snaps = flow_snapshots(flow, 5, 200, rng);
  MmotOptions opt;
  opt.lambdas = {1e4};
  opt.alphas = {1.0};
  opt.inits = 1;
  auto res = mmot_affine_fit(snaps, RadialKernel{KernelProfile::gaussian, 1.0}, opt, rng);
  const double mse = drift_grid_mse(res.maps().as_field(), true_drift_field(flow), unit_grid()).total;

  // Exact translation maps give the smallest error any chain of this form can reach,
  // because the induced drift is constant in time on each segment.
  AffineMapChain exact;
  for (const auto& s : snaps) {
    exact.times.push_back(s.t);
    exact.A.push_back(Eigen::MatrixXd::Identity(1, 1));
    exact.b.push_back(Vector::Constant(1, 2.0 * std::sin(std::numbers::pi * s.t)));
  }
  const double floor = drift_grid_mse(exact.as_field(), true_drift_field(flow), unit_grid()).total;
  MESSAGE("MMOT roundtrip drift MSE " << mse << ", exact-chain floor " << floor);
  CHECK(mse <= floor + 0.5);
}

TEST_CASE("MMOT shrinks the merging mixture") {
  auto flow = make_flow(FlowKind::bimodal_merge_1d);
  for (int count : {3, 5}) {
    Rng rng = make_rng(10, {static_cast<std::uint64_t>(count)});
    auto snaps = flow_snapshots(flow, count, 200, rng);
    MmotOptions opt;
    opt.lambdas = {1e4};
    opt.alphas = {1.0};
    opt.inits = 1;
    auto res = mmot_affine_fit(snaps, RadialKernel{KernelProfile::gaussian, 1.0}, opt, rng);
    const auto& ch = res.maps();
    for (std::size_t k = 1; k < ch.A.size(); ++k) {
      MESSAGE(count << " snapshots: A_" << k << " = " << ch.A[k](0, 0));
      CHECK(ch.A[k](0, 0) < ch.A[k - 1](0, 0));
    }
    // the map anchored at t = 1/2 sits in the shrinkage band
    const double mid = ch.A[(ch.A.size() - 1) / 2](0, 0);
    CHECK(mid >= 0.45);
    CHECK(mid <= 0.65);
  }
}

TEST_CASE("a failing MMOT cell is isolated") {
  Rng rng(11);
  auto flow = make_flow(FlowKind::gauss_translate_1d);
  auto snaps = flow_snapshots(flow, 3, 30, rng);
  MmotOptions opt;
  opt.lambdas = {1e2, 1e3};
  opt.alphas = {1.0};
  opt.inits = 1;
  MmotScore score = [](const AffineMapChain&, const MmotCell& c) {
    if (c.lambda_m < 500) throw std::runtime_error("scripted failure");
    return c.objective;
  };
  auto res = mmot_affine_fit(snaps, RadialKernel{KernelProfile::gaussian, 1.0}, opt, rng, score);
  REQUIRE(res.cells.size() == 2);
  CHECK_FALSE(res.cells[0].ok);
  CHECK(res.cells[0].error == "scripted failure");
  CHECK(res.cells[1].ok);
  CHECK(res.best == 1);
}

TEST_CASE("flow matching") {
  Rng rng(12);
  auto flow = make_flow(FlowKind::gauss_translate_1d);
  Points a = sample(flow, 0.0, 2000, rng), b = sample(flow, 1.0, 2000, rng);
  FeatureDictionary aff(FeatureSet::affine_1d, 1);
  flow_matching_fit(a, b, aff, {}, rng);
  Vector t = Vector::Constant(21, 0.5);
  Points x(21, 1);
  for (int i = 0; i < 21; ++i) x(i, 0) = -1.0 + 0.1 * i;
  Points u = aff.evaluate(t, x);
  CHECK(std::abs(u.mean() - 2.0) <= 0.1);

  auto rt = make_flow(FlowKind::roundtrip_1d);
  Points r0 = sample(rt, 0.0, 2000, rng), r1 = sample(rt, 1.0, 2000, rng);
  FeatureDictionary q(FeatureSet::quad_t_1d, 1);
  Rng s1(13), s2(13);
  flow_matching_fit(r0, r1, q, {}, s1);
  const double mse = drift_grid_mse(q.as_field(), true_drift_field(rt), unit_grid()).total;
  MESSAGE("flow matching roundtrip MSE " << mse);
  CHECK(mse >= 19.0);
  CHECK(mse <= 21.0);
  FeatureDictionary q2(FeatureSet::quad_t_1d, 1);
  flow_matching_fit(r0, r1, q2, {}, s2);
  CHECK(q.params() == q2.params());
}
