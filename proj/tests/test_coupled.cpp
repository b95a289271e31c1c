#include <cmath>
#include <vector>

#include <Eigen/Dense>
#include <doctest.h>

#include "heatctrl/common.hpp"
#include "heatctrl/coupled.hpp"
#include "heatctrl/grid.hpp"
#include "heatctrl/pde.hpp"
#include "test_util.hpp"

using namespace heatctrl;

namespace {

struct Instance {
  Grid g;
  Regions r;
};

Instance make_instance(int n_cells, int n_steps, double horizon = 0.5) {
  Instance inst{make_grid(0.0, 1.0, n_cells, horizon, n_steps), {}};
  inst.r.omega = make_mask(inst.g, "omega", 0.1, 0.4);
  inst.r.O = make_mask(inst.g, "O", 0.6, 0.9);
  inst.r.O_d = make_mask(inst.g, "O_d", 0.3, 0.7);
  validate_geometry(inst.g, inst.r);
  return inst;
}

double rel_field_err(const Grid& g, const SpaceTimeField& got, const SpaceTimeField& want) {
  SpaceTimeField d = got;
  for (std::size_t k = 0; k < d.data.size(); ++k) d.data[k] -= want.data[k];
  const double base = norm_Q(g, want);
  return norm_Q(g, d) / (base > 1e-300 ? base : 1.0);
}

}  // namespace

TEST_CASE("robust parameter validation and contraction warning") {
  RobustParams p;
  CHECK_NOTHROW(p.validate());
  CHECK_FALSE(p.contraction_warning());  // 1/1 + 1/1 = 2, not above the default threshold
  p.gamma = 0.5;
  CHECK(p.contraction_warning());  // 1 + 4 = 5
  p.gamma = -1.0;
  CHECK_THROWS_AS(p.validate(), SpecError);
  p.gamma = 1.0;
  p.ell = 0.0;
  CHECK_THROWS_AS(p.validate(), SpecError);
}

TEST_CASE("optimality system: zero data gives the zero pair in one sweep") {
  Instance inst = make_instance(16, 16);
  RobustParams params;
  OptimalitySolution sol =
      solve_optimality_system(inst.g, inst.r, constant_potential(inst.g, 0.0),
                              constant_potential(inst.g, 0.0), zero_field(inst.g),
                              std::vector<double>(static_cast<std::size_t>(inst.g.n_interior()), 0.0),
                              zero_field(inst.g), params);
  CHECK(sol.report.converged);
  CHECK(sol.report.iterations == 1);
  CHECK(sol.y.sup_norm() == 0.0);
  CHECK(sol.q.sup_norm() == 0.0);
}

TEST_CASE("optimality system: huge ell and gamma decouple the sweep") {
  Instance inst = make_instance(24, 24);
  RobustParams params;
  params.ell = 1e6;
  params.gamma = 1e6;
  auto eng = testutil::rng(42);
  Potential a = make_potential(inst.g, testutil::smooth_field(inst.g, eng));
  Potential c = make_potential(inst.g, testutil::smooth_field(inst.g, eng));
  SpaceTimeField h = testutil::smooth_field(inst.g, eng);
  std::vector<double> y0 = testutil::sine_vector(inst.g);
  SpaceTimeField yd = zero_field(inst.g);

  SweepOpts opts;
  opts.tol = 1e-13;
  OptimalitySolution sol = solve_optimality_system(inst.g, inst.r, a, c, h, y0, yd, params, opts);
  REQUIRE(sol.report.converged);

  SpaceTimeField h_masked = h;
  for (int n = 0; n <= inst.g.n_steps; ++n) {
    for (int i = 0; i < inst.g.n_interior(); ++i) {
      if (!inst.r.omega.contains(i)) h_masked.at(n, i) = 0.0;
    }
  }
  SpaceTimeField y_plain = solve_forward_linear(inst.g, a, h_masked, y0);
  CHECK(rel_field_err(inst.g, sol.y, y_plain) <= 1e-9);

  // The adjoint of the decoupled state: backward solve driven by y restricted
  // to the tracking region.
  SpaceTimeField track = zero_field(inst.g);
  for (int n = 0; n <= inst.g.n_steps; ++n) {
    for (int i = 0; i < inst.g.n_interior(); ++i) {
      if (inst.r.O_d.contains(i)) track.at(n, i) = y_plain.at(n, i);
    }
  }
  SpaceTimeField q_plain = solve_backward_linear(
      inst.g, c, track, std::vector<double>(static_cast<std::size_t>(inst.g.n_interior()), 0.0));
  CHECK(rel_field_err(inst.g, sol.q, q_plain) <= 1e-9);
}

TEST_CASE("optimality system agrees with the monolithic dense oracle") {
  Instance inst = make_instance(16, 16);
  RobustParams params;  // ell = gamma = 1: strong coupling
  auto eng = testutil::rng(43);
  MidField a = mid_average(inst.g, testutil::smooth_field(inst.g, eng));
  MidField c = mid_average(inst.g, testutil::smooth_field(inst.g, eng));
  SpaceTimeField h = testutil::smooth_field(inst.g, eng);
  SpaceTimeField yd = testutil::smooth_field(inst.g, eng);
  std::vector<double> y0 = testutil::random_vector(inst.g, eng);

  SweepOpts opts;
  opts.tol = 1e-12;
  OptimalitySolution sweep =
      solve_optimality_system(inst.g, inst.r, a, c, h, y0, yd, params, opts);
  REQUIRE(sweep.report.converged);
  CHECK(sweep.report.final_residual <= opts.tol);

  MonolithicSolution mono = solve_monolithic(inst.g, inst.r, a, c, h, y0, yd, params);
  CHECK_FALSE(mono.conditioning_warning);
  CHECK(rel_field_err(inst.g, sweep.y, mono.first) <= 1e-8);
  CHECK(rel_field_err(inst.g, sweep.q, mono.second) <= 1e-8);
}

TEST_CASE("adjoint pair agrees with the monolithic dense oracle") {
  Instance inst = make_instance(16, 16);
  RobustParams params;
  auto eng = testutil::rng(44);
  MidField a = mid_average(inst.g, testutil::smooth_field(inst.g, eng));
  MidField c = mid_average(inst.g, testutil::smooth_field(inst.g, eng));
  std::vector<double> phiT = testutil::random_vector(inst.g, eng);

  SweepOpts opts;
  opts.tol = 1e-12;
  AdjointPairSolution sweep = solve_adjoint_pair(inst.g, inst.r, a, c, phiT, params, opts);
  REQUIRE(sweep.report.converged);

  MonolithicSolution mono = solve_monolithic(inst.g, inst.r, a, c, phiT, params);
  CHECK(rel_field_err(inst.g, sweep.phi, mono.first) <= 1e-8);
  CHECK(rel_field_err(inst.g, sweep.theta, mono.second) <= 1e-8);
}

TEST_CASE("adjoint pair: zero terminal data gives the zero pair") {
  Instance inst = make_instance(16, 16);
  RobustParams params;
  AdjointPairSolution sol = solve_adjoint_pair(
      inst.g, inst.r, constant_potential(inst.g, 0.0), constant_potential(inst.g, 0.0),
      std::vector<double>(static_cast<std::size_t>(inst.g.n_interior()), 0.0), params);
  CHECK(sol.report.converged);
  CHECK(sol.report.iterations == 1);
  CHECK(sol.phi.sup_norm() == 0.0);
  CHECK(sol.theta.sup_norm() == 0.0);
}

TEST_CASE("duality identity links the two coupled systems") {
  Instance inst = make_instance(16, 16);
  RobustParams params;
  auto eng = testutil::rng(45);
  MidField a = mid_average(inst.g, testutil::smooth_field(inst.g, eng));
  MidField c = mid_average(inst.g, testutil::smooth_field(inst.g, eng));
  SweepOpts opts;
  opts.tol = 1e-12;

  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    SpaceTimeField h = testutil::random_field(inst.g, eng);
    SpaceTimeField yd = testutil::random_field(inst.g, eng);
    std::vector<double> y0 = testutil::random_vector(inst.g, eng);
    std::vector<double> phiT = testutil::random_vector(inst.g, eng);

    OptimalitySolution opt = solve_optimality_system(inst.g, inst.r, a, c, h, y0, yd, params, opts);
    AdjointPairSolution adj = solve_adjoint_pair(inst.g, inst.r, a, c, phiT, params, opts);
    REQUIRE(opt.report.converged);
    REQUIRE(adj.report.converged);

    const double lhs = inner_product_Omega(inst.g, slice(opt.y, inst.g.n_steps), phiT);
    const double t1 = inner_product_Omega(inst.g, y0, slice(adj.phi, 0));
    const double t2 = inner_product_Q(inst.g, h, adj.phi, &inst.r.omega);
    const double t3 = inner_product_Q(inst.g, yd, adj.theta, &inst.r.O_d);
    const double rhs = t1 + t2 - t3;
    const double scale =
        std::abs(lhs) + std::abs(t1) + std::abs(t2) + std::abs(t3) + 1e-30;
    worst = std::max(worst, std::abs(lhs - rhs) / scale);
  }
  CHECK(worst <= 1e-10);
}

TEST_CASE("duality identity survives frozen coupling coefficients") {
  Instance inst = make_instance(16, 16);
  RobustParams params;
  auto eng = testutil::rng(46);
  MidField a = mid_average(inst.g, testutil::smooth_field(inst.g, eng));
  MidField c = mid_average(inst.g, testutil::smooth_field(inst.g, eng));

  CouplingCoefficients coeffs;
  coeffs.sigma = MidField(inst.g.n_steps, inst.g.n_interior());
  coeffs.rho = MidField(inst.g.n_steps, inst.g.n_interior());
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (auto& v : coeffs.sigma.data) v = unit(eng);
  for (auto& v : coeffs.rho.data) v = unit(eng);

  SweepOpts opts;
  opts.tol = 1e-12;
  double worst = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    SpaceTimeField h = testutil::random_field(inst.g, eng);
    SpaceTimeField yd = testutil::random_field(inst.g, eng);
    std::vector<double> y0 = testutil::random_vector(inst.g, eng);
    std::vector<double> phiT = testutil::random_vector(inst.g, eng);

    OptimalitySolution opt =
        solve_optimality_system(inst.g, inst.r, a, c, h, y0, yd, params, opts, &coeffs);
    AdjointPairSolution adj = solve_adjoint_pair(inst.g, inst.r, a, c, phiT, params, opts, &coeffs);
    REQUIRE(opt.report.converged);
    REQUIRE(adj.report.converged);

    const double lhs = inner_product_Omega(inst.g, slice(opt.y, inst.g.n_steps), phiT);
    const double t1 = inner_product_Omega(inst.g, y0, slice(adj.phi, 0));
    const double t2 = inner_product_Q(inst.g, h, adj.phi, &inst.r.omega);
    const double t3 = inner_product_Q(inst.g, yd, adj.theta, &inst.r.O_d);
    const double scale = std::abs(lhs) + std::abs(t1) + std::abs(t2) + std::abs(t3) + 1e-30;
    worst = std::max(worst, std::abs(lhs - (t1 + t2 - t3)) / scale);
  }
  CHECK(worst <= 1e-10);
}

TEST_CASE("identity coupling coefficients reproduce the unconstrained sweep bitwise") {
  Instance inst = make_instance(16, 16);
  RobustParams params;
  auto eng = testutil::rng(47);
  MidField a = mid_average(inst.g, testutil::smooth_field(inst.g, eng));
  MidField c = mid_average(inst.g, testutil::smooth_field(inst.g, eng));
  SpaceTimeField h = testutil::smooth_field(inst.g, eng);
  SpaceTimeField yd = testutil::smooth_field(inst.g, eng);
  std::vector<double> y0 = testutil::random_vector(inst.g, eng);

  CouplingCoefficients ones;
  ones.sigma = MidField(inst.g.n_steps, inst.g.n_interior());
  ones.rho = MidField(inst.g.n_steps, inst.g.n_interior());
  std::fill(ones.sigma.data.begin(), ones.sigma.data.end(), 1.0);
  std::fill(ones.rho.data.begin(), ones.rho.data.end(), 1.0);

  OptimalitySolution plain = solve_optimality_system(inst.g, inst.r, a, c, h, y0, yd, params);
  OptimalitySolution with1 =
      solve_optimality_system(inst.g, inst.r, a, c, h, y0, yd, params, {}, &ones);
  REQUIRE(plain.y.data.size() == with1.y.data.size());
  for (std::size_t k = 0; k < plain.y.data.size(); ++k) {
    CHECK(plain.y.data[k] == with1.y.data[k]);
    CHECK(plain.q.data[k] == with1.q.data[k]);
  }
}

TEST_CASE("sweep residuals contract monotonically for parameters above the warning threshold") {
  Instance inst = make_instance(24, 24);
  RobustParams params;  // ell = gamma = 1 is at the default threshold boundary
  CHECK_FALSE(params.contraction_warning());
  auto eng = testutil::rng(48);
  MidField a = mid_average(inst.g, testutil::smooth_field(inst.g, eng));
  MidField c = mid_average(inst.g, testutil::smooth_field(inst.g, eng));
  SpaceTimeField h = testutil::smooth_field(inst.g, eng);
  SpaceTimeField yd = testutil::smooth_field(inst.g, eng);
  std::vector<double> y0 = testutil::random_vector(inst.g, eng);

  SweepOpts opts;
  opts.tol = 1e-13;
  OptimalitySolution sol = solve_optimality_system(inst.g, inst.r, a, c, h, y0, yd, params, opts);
  REQUIRE(sol.report.converged);
  REQUIRE(sol.report.residual_history.size() >= 3);
  for (std::size_t k = 2; k < sol.report.residual_history.size(); ++k) {
    CHECK(sol.report.residual_history[k] < sol.report.residual_history[k - 1]);
  }
}

TEST_CASE("semilinear optimality system reduces to the linear one for linear f") {
  Instance inst = make_instance(16, 16);
  RobustParams params;
  auto eng = testutil::rng(49);
  SpaceTimeField h = testutil::smooth_field(inst.g, eng);
  SpaceTimeField yd = testutil::smooth_field(inst.g, eng);
  std::vector<double> y0 = testutil::sine_vector(inst.g);
  const double aval = 0.8;

  SweepOpts opts;
  opts.tol = 1e-12;
  OptimalitySolution lin =
      solve_optimality_system(inst.g, inst.r, constant_potential(inst.g, aval),
                              constant_potential(inst.g, aval), h, y0, yd, params, opts);
  OptimalitySolution semi = solve_optimality_system_semilinear(
      inst.g, inst.r, linear_nonlinearity(aval), h, y0, yd, params, opts);
  REQUIRE(lin.report.converged);
  REQUIRE(semi.report.converged);
  CHECK(rel_field_err(inst.g, semi.y, lin.y) <= 1e-9);
  CHECK(rel_field_err(inst.g, semi.q, lin.q) <= 1e-9);
}

TEST_CASE("semilinear optimality system solves the tanh-coupled equations") {
  Instance inst = make_instance(16, 16);
  RobustParams params;
  Nonlinearity f = tanh_nonlinearity(1.0);
  auto eng = testutil::rng(50);
  SpaceTimeField h = testutil::smooth_field(inst.g, eng);
  SpaceTimeField yd = testutil::smooth_field(inst.g, eng);
  std::vector<double> y0 = testutil::sine_vector(inst.g);

  SweepOpts opts;
  opts.tol = 1e-12;
  OptimalitySolution sol =
      solve_optimality_system_semilinear(inst.g, inst.r, f, h, y0, yd, params, opts);
  REQUIRE(sol.report.converged);

  // Independent residual check: the returned y must solve the semilinear
  // forward equation with the coupling source built from the returned q,
  // and q must solve the backward equation to within the sweep residual.
  SpaceTimeField src(inst.g.n_time_nodes(), inst.g.n_interior());
  for (int n = 0; n <= inst.g.n_steps; ++n) {
    for (int i = 0; i < inst.g.n_interior(); ++i) {
      double v = sol.q.at(n, i);
      double s = v;  // 1/gamma^2 = 1
      if (inst.r.O.contains(i)) s -= v;  // 1/ell^2 = 1
      if (inst.r.omega.contains(i)) s += h.at(n, i);
      src.at(n, i) = s;
    }
  }
  SpaceTimeField y_check = solve_forward_semilinear(inst.g, f, src, y0).y;
  CHECK(testutil::sup_diff(sol.y, y_check) <= 1e-11);

  MidField cpot = linearization_potential(inst.g, f, sol.y);
  SpaceTimeField track = zero_field(inst.g);
  for (int n = 0; n <= inst.g.n_steps; ++n) {
    for (int i = 0; i < inst.g.n_interior(); ++i) {
      if (inst.r.O_d.contains(i)) track.at(n, i) = sol.y.at(n, i) - yd.at(n, i);
    }
  }
  SpaceTimeField q_check = cn_backward(
      inst.g, cpot, mid_average(inst.g, track),
      std::vector<double>(static_cast<std::size_t>(inst.g.n_interior()), 0.0));
  CHECK(testutil::sup_diff(sol.q, q_check) <= 10 * sol.report.final_residual + 1e-12);
}

TEST_CASE("monolithic cap and conditioning warning") {
  Instance inst = make_instance(16, 16);
  RobustParams params;
  MidField a = mid_zero(inst.g);
  MidField c = mid_zero(inst.g);
  SpaceTimeField h = zero_field(inst.g);
  SpaceTimeField yd = zero_field(inst.g);
  std::vector<double> y0(static_cast<std::size_t>(inst.g.n_interior()), 0.0);

  CHECK_THROWS_AS(
      solve_monolithic(inst.g, inst.r, a, c, h, y0, yd, params, nullptr, 100), SpecError);

  MonolithicSolution ok = solve_monolithic(inst.g, inst.r, a, c, h, y0, yd, params);
  CHECK(ok.first.sup_norm() == 0.0);
  CHECK(ok.second.sup_norm() == 0.0);
  CHECK_FALSE(ok.conditioning_warning);
  CHECK(ok.rcond > 1e-10);
}

namespace {

// Independent dense assembly of the optimality-system matrix as a function of
// u = 1/γ², used to locate a value of γ that makes the block system singular.
Eigen::MatrixXd assemble_for_u(const Instance& inst, double inv_l2, double u) {
  const Grid& g = inst.g;
  const int m = g.n_interior();
  const int N = g.n_steps;
  const int dim = 2 * N * m;
  const double idt = 1.0 / g.dt;
  const double lap = 1.0 / (g.dx * g.dx);
  Eigen::MatrixXd M = Eigen::MatrixXd::Zero(dim, dim);
  const auto col_y = [&](int level) { return (level >= 1) ? (level - 1) * m : -1; };
  const auto col_q = [&](int level) { return (level <= N - 1) ? (N + level) * m : -1; };
  const auto add_block = [&](int row0, int col0, int i, double diag) {
    M(row0 + i, col0 + i) += diag;
    if (i > 0) M(row0 + i, col0 + i - 1) += -0.5 * lap;
    if (i + 1 < m) M(row0 + i, col0 + i + 1) += -0.5 * lap;
  };
  for (int n = 0; n < N; ++n) {
    const int row_y = n * m;
    const int row_q = (N + n) * m;
    for (int i = 0; i < m; ++i) {
      add_block(row_y, col_y(n + 1), i, idt + lap);
      if (col_y(n) >= 0) add_block(row_y, col_y(n), i, -idt + lap);
      const double w = (inst.r.O.contains(i) ? inv_l2 : 0.0) - u;
      if (col_q(n) >= 0) M(row_y + i, col_q(n) + i) += 0.5 * w;
      if (col_q(n + 1) >= 0) M(row_y + i, col_q(n + 1) + i) += 0.5 * w;

      add_block(row_q, col_q(n), i, idt + lap);
      if (col_q(n + 1) >= 0) add_block(row_q, col_q(n + 1), i, -idt + lap);
      if (inst.r.O_d.contains(i)) {
        if (col_y(n) >= 0) M(row_q + i, col_y(n) + i) += -0.5;
        M(row_q + i, col_y(n + 1) + i) += -0.5;
      }
    }
  }
  return M;
}

int det_sign(const Eigen::MatrixXd& M) {
  Eigen::PartialPivLU<Eigen::MatrixXd> lu(M);
  int sign = lu.permutationP().determinant() > 0 ? 1 : -1;
  const auto& LU = lu.matrixLU();
  for (int i = 0; i < LU.rows(); ++i) {
    const double d = LU(i, i);
    if (d == 0.0) return 0;
    if (d < 0.0) sign = -sign;
  }
  return sign;
}

}  // namespace

TEST_CASE("a pathological gamma is detected by the conditioning estimate") {
  Instance inst = make_instance(8, 8, 1.0);
  const double inv_l2 = 1.0;  // ell = 1

  // Scan u = 1/γ² for a determinant sign change, then bisect to the singular
  // point. Such a crossing must exist: for large u the "+(1/γ²)q" feedback
  // destroys the definiteness that makes the system uniquely solvable.
  double u_lo = 0.5, u_hi = 0.0;
  int s_lo = det_sign(assemble_for_u(inst, inv_l2, u_lo));
  REQUIRE(s_lo != 0);
  for (double u = u_lo * 1.07; u < 4000.0; u *= 1.07) {
    const int s = det_sign(assemble_for_u(inst, inv_l2, u));
    if (s != s_lo) {
      u_hi = u;
      break;
    }
    u_lo = u;
  }
  REQUIRE(u_hi > 0.0);
  for (int it = 0; it < 100; ++it) {
    const double mid = 0.5 * (u_lo + u_hi);
    if (mid == u_lo || mid == u_hi) break;
    const int s = det_sign(assemble_for_u(inst, inv_l2, mid));
    if (s == 0) {
      u_lo = u_hi = mid;
      break;
    }
    if (s == s_lo) {
      u_lo = mid;
    } else {
      u_hi = mid;
    }
  }
  const double u_star = 0.5 * (u_lo + u_hi);

  RobustParams params;
  params.ell = 1.0;
  params.gamma = 1.0 / std::sqrt(u_star);
  MonolithicSolution probe = solve_monolithic(
      inst.g, inst.r, mid_zero(inst.g), mid_zero(inst.g), zero_field(inst.g),
      std::vector<double>(static_cast<std::size_t>(inst.g.n_interior()), 0.0),
      zero_field(inst.g), params);
  CHECK(probe.conditioning_warning);
  CHECK(probe.rcond <= 1e-12);
}
