#include <algorithm>
#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include <doctest.h>

#include "heatctrl/common.hpp"
#include "heatctrl/coupled.hpp"
#include "heatctrl/follower.hpp"
#include "heatctrl/grid.hpp"
#include "heatctrl/hierarchy.hpp"
#include "heatctrl/leader.hpp"
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

RobustParams desk_params(double ell = 10.0, double gamma = 10.0) {
  RobustParams p;
  p.ell = ell;
  p.gamma = gamma;
  return p;
}

MidField constant_mid(const Grid& g, double v) {
  MidField m = mid_zero(g);
  for (double& x : m.data) x = v;
  return m;
}

std::vector<double> zero_vec(const Grid& g) {
  return std::vector<double>(static_cast<std::size_t>(g.n_interior()), 0.0);
}

double nodal_dist(const Grid& g, const SpaceTimeField& a, const SpaceTimeField& b) {
  SpaceTimeField d = a;
  for (std::size_t k = 0; k < d.data.size(); ++k) d.data[k] -= b.data[k];
  return std::sqrt(inner_product_Q_nodal(g, d, d));
}

}  // namespace

TEST_CASE("averaged-derivative quadrature: exactness, factorization, order") {
  // Linear f: the integrand is constant, so the quadrature is exact up to
  // accumulation rounding (~n eps at 2000 intervals).
  const Nonlinearity lin = linear_nonlinearity(0.8);
  for (double s : {-3.0, 0.0, 1.7, 42.0}) {
    for (int n : {2, 10, 2000}) {
      CHECK(testutil::rel_err(g_of(lin, s, n), 0.8) < 1e-12);
    }
  }

  // At s = 0 every node evaluates f'(0); with a dyadic derivative value the
  // accumulation is exact.
  const Nonlinearity half = tanh_nonlinearity(0.5);
  for (int n : {2, 7, 2000}) CHECK(g_of(half, 0.0, n) == 0.5);
  const Nonlinearity gen = tanh_nonlinearity(0.3);
  CHECK(testutil::rel_err(g_of(gen, 0.0, 2000), 0.3) < 1e-14);

  // Factorization g(s) s = f(s) for tanh, up to the quadrature truncation.
  // The trapezoid defect at 2000 intervals tracks the Euler-Maclaurin
  // constant 2 s^2 sech^2(s) tanh(s) / 12 * h^2, which decays in |s|:
  // measured 1.33e-8 at |s| = 1, 3.7e-9 at |s| = 3, 1.9e-10 at |s| = 5.
  const Nonlinearity t1 = tanh_nonlinearity(1.0);
  const std::vector<std::pair<double, double>> factor_tol = {
      {1.0, 2e-8}, {3.0, 6e-9}, {5.0, 3e-10}};
  for (const auto& [mag, tol] : factor_tol) {
    for (double s : {mag, -mag}) {
      CHECK(std::abs(g_of(t1, s, 2000) * s - std::tanh(s)) <= tol);
    }
  }
  // Even symmetry inherited from the even derivative.
  CHECK(testutil::rel_err(g_of(t1, 2.3, 2000), g_of(t1, -2.3, 2000)) < 1e-13);

  // Composite trapezoid converges at second order: quadrupling the node count
  // shrinks the factorization defect by ~16x.
  const double e250 = std::abs(g_of(t1, 5.0, 250) * 5.0 - std::tanh(5.0));
  const double e1000 = std::abs(g_of(t1, 5.0, 1000) * 5.0 - std::tanh(5.0));
  CHECK(e250 / e1000 > 12.0);
  CHECK(e250 / e1000 < 20.0);

  CHECK_THROWS_AS(g_of(t1, 1.0, 1), SpecError);
  Nonlinearity broken;
  broken.f = [](double) { return 0.0; };
  CHECK_THROWS_AS(g_of(broken, 1.0, 100), SpecError);
}

TEST_CASE("linearized potential fields: parallel equals serial and match the maps") {
  const Instance inst = make_instance(16, 16);
  const Grid& g = inst.g;
  auto eng = testutil::rng(101);
  SpaceTimeField z = testutil::smooth_field(g, eng);
  for (double& v : z.data) v *= 2.0;
  const Nonlinearity f = tanh_nonlinearity(0.5);

  const LinearizedPotentials par = build_linearized_potentials(g, f, z, 400);
  const LinearizedPotentials ser = build_linearized_potentials_serial(g, f, z, 400);
  CHECK(par.a.data == ser.a.data);
  CHECK(par.c.data == ser.c.data);

  const MidField zm = mid_average(g, z);
  for (int n : {0, g.n_steps / 2, g.n_steps - 1}) {
    for (int i : {0, g.n_interior() / 2, g.n_interior() - 1}) {
      CHECK(par.a.at(n, i) == g_of(f, zm.at(n, i), 400));
      CHECK(par.c.at(n, i) == f.fp(zm.at(n, i)));
    }
  }
  CHECK(par.a.sup_norm() <= 0.5);
  CHECK(par.c.sup_norm() <= 0.5);

  CHECK_THROWS_AS(build_linearized_potentials(g, f, z, 1), SpecError);
  const Instance other = make_instance(12, 12);
  CHECK_THROWS_AS(build_linearized_potentials(other.g, f, z, 400), SpecError);
}

TEST_CASE("projection coefficient fields: parallel equals serial, box structure") {
  const Instance inst = make_instance(16, 16);
  const Grid& g = inst.g;
  const RobustParams params = desk_params(2.0, 2.0);
  auto eng = testutil::rng(111);
  SpaceTimeField q = testutil::random_field(g, eng);
  for (double& v : q.data) v *= 0.05;

  AdmissibleBox box;
  box.e1_lo = -5e-3;
  box.e1_hi = 8e-3;
  box.e2_lo = -6e-3;
  box.e2_hi = 6e-3;

  const CouplingCoefficients par = build_projection_coefficients(g, q, params, box);
  const CouplingCoefficients ser = build_projection_coefficients_serial(g, q, params, box);
  CHECK(par.sigma.data == ser.sigma.data);
  CHECK(par.rho.data == ser.rho.data);

  const MidField qm = mid_average(g, q);
  const double inv_ell2 = 1.0 / (params.ell * params.ell);
  const double inv_gamma2 = 1.0 / (params.gamma * params.gamma);
  double min_sigma = 2.0;
  for (std::size_t k = 0; k < qm.data.size(); ++k) {
    const double sv = par.sigma.data[k];
    const double rv = par.rho.data[k];
    CHECK(sv >= 0.0);
    CHECK(sv <= 1.0);
    CHECK(rv >= 0.0);
    CHECK(rv <= 1.0);
    CHECK(sv == projection_coefficient_scalar(-qm.data[k] * inv_ell2, box.e1_lo, box.e1_hi));
    CHECK(rv == projection_coefficient_scalar(qm.data[k] * inv_gamma2, box.e2_lo, box.e2_hi));
    // The coefficient reconstructs the clamp to ulp accuracy (the scalar map
    // snaps the ratio by one ulp, which can still miss by one rounding step).
    const double zv = -qm.data[k] * inv_ell2;
    const double cv = std::min(box.e1_hi, std::max(box.e1_lo, zv));
    CHECK(std::abs(sv * zv - cv) <= 1e-15 * std::max(1e-3, std::abs(cv)));
    min_sigma = std::min(min_sigma, sv);
  }
  CHECK(min_sigma < 1.0);  // the box is genuinely active somewhere

  AdmissibleBox big;
  big.e1_lo = big.e2_lo = -1e6;
  big.e1_hi = big.e2_hi = 1e6;
  const CouplingCoefficients ones = build_projection_coefficients(g, q, params, big);
  for (double v : ones.sigma.data) CHECK(v == 1.0);
  for (double v : ones.rho.data) CHECK(v == 1.0);

  const AdmissibleBox zero;  // {0} x {0}
  const CouplingCoefficients zeros = build_projection_coefficients(g, q, params, zero);
  for (double v : zeros.sigma.data) CHECK(v == 0.0);
  for (double v : zeros.rho.data) CHECK(v == 0.0);

  AdmissibleBox mixed;  // {0} x huge
  mixed.e2_lo = -1e6;
  mixed.e2_hi = 1e6;
  const CouplingCoefficients mx = build_projection_coefficients(g, q, params, mixed);
  for (double v : mx.sigma.data) CHECK(v == 0.0);
  for (double v : mx.rho.data) CHECK(v == 1.0);

  AdmissibleBox bad;
  bad.e1_lo = 0.1;
  bad.e1_hi = 0.2;
  CHECK_THROWS_AS(build_projection_coefficients(g, q, params, bad), SpecError);
}

TEST_CASE("semilinear loop: zero data and linear dynamics take the shortcuts") {
  const Instance inst = make_instance(16, 16);
  const Grid& g = inst.g;
  const RobustParams params = desk_params();
  const double eps = 1e-3;

  const Nonlinearity th = tanh_nonlinearity(0.5);
  const HierarchySolution triv =
      solve_semilinear_hierarchy(g, inst.r, th, zero_vec(g), zero_field(g), params, eps);
  CHECK(triv.report.converged);
  CHECK(triv.report.outer_iterations == 1);
  REQUIRE(triv.report.successive_diffs.size() == 1);
  CHECK(triv.report.successive_diffs[0] == 0.0);
  CHECK(triv.h.sup_norm() == 0.0);
  CHECK(triv.verified_terminal_norm == 0.0);

  // Linear f: the frozen potentials cannot depend on the iterate, so the
  // second pass detects a stationary map without solving again, and the
  // single inner solve is bitwise the plain leader solve.
  const Nonlinearity lin = linear_nonlinearity(0.8);
  const std::vector<double> y0 = testutil::sine_vector(g);
  auto eng = testutil::rng(121);
  const SpaceTimeField yd = testutil::smooth_field(g, eng);
  const HierarchySolution hs =
      solve_semilinear_hierarchy(g, inst.r, lin, y0, yd, params, eps);
  CHECK(hs.report.converged);
  CHECK(hs.report.outer_iterations == 1);
  REQUIRE(hs.report.successive_diffs.size() == 2);
  CHECK(hs.report.successive_diffs[1] == 0.0);
  CHECK(hs.report.stop_reason == "frozen potentials stationary");
  REQUIRE(hs.report.per_iteration_potential_sups.size() == 1);
  CHECK(hs.report.per_iteration_potential_sups[0] <= 0.8 * (1.0 + 1e-12));

  const HierarchyOpts defaults;
  const MidField a_ref = constant_mid(g, g_of(lin, 0.0, defaults.n_quad));
  const MidField c_ref = constant_mid(g, lin.fp(0.0));
  const LeaderSolution ref =
      minimize_F_eps(g, inst.r, a_ref, c_ref, y0, yd, params, eps, defaults.leader);
  CHECK(hs.h.data == ref.h.data);
  CHECK(hs.phiT == ref.phiT);
  // The verified state solves the semilinear system, which for linear f is
  // the frozen system itself up to inner tolerances.
  CHECK(nodal_dist(g, hs.y, ref.y) < 1e-9 * (1.0 + norm_Q(g, ref.y)));
}

TEST_CASE("semilinear loop: tanh instance contracts and verifies at epsilon level") {
  const Instance inst = make_instance(32, 32);
  const Grid& g = inst.g;
  const RobustParams params = desk_params();
  const Nonlinearity f = tanh_nonlinearity(0.5);
  const std::vector<double> y0 = testutil::sine_vector(g);
  const SpaceTimeField yd = zero_field(g);
  const double eps = 1e-3;

  const HierarchySolution hs = solve_semilinear_hierarchy(g, inst.r, f, y0, yd, params, eps);
  CHECK(hs.report.converged);
  CHECK_FALSE(hs.report.diverged);
  CHECK(hs.report.outer_iterations >= 2);
  CHECK(hs.report.outer_iterations <= 50);
  CHECK(hs.epsilon == eps);

  const auto& diffs = hs.report.successive_diffs;
  REQUIRE(static_cast<int>(diffs.size()) == hs.report.outer_iterations);
  for (std::size_t k = 1; k < diffs.size(); ++k) CHECK(diffs[k] < diffs[k - 1]);
  CHECK(diffs.back() <= 1e-6);

  // The nonlinear verification meets the doubled epsilon bound.
  CHECK(hs.verified_terminal_norm <= 2.0 * eps);
  CHECK(hs.verified_terminal_norm ==
        doctest::Approx(norm_Omega(g, slice(hs.y, g.n_steps))).epsilon(1e-12));

  // Frozen potentials stay inside the Lipschitz bound at every iteration.
  REQUIRE(static_cast<int>(hs.report.per_iteration_potential_sups.size()) ==
          hs.report.outer_iterations);
  for (double s : hs.report.per_iteration_potential_sups) {
    CHECK(s <= f.lipschitz_bound * (1.0 + 1e-12));
  }

  // Inner control norms are uniform across the outer path.
  const auto& hn = hs.report.per_iteration_h_norms;
  REQUIRE(static_cast<int>(hn.size()) == hs.report.outer_iterations);
  const double hmax = *std::max_element(hn.begin(), hn.end());
  const double hmin = *std::min_element(hn.begin(), hn.end());
  CHECK(hmin > 0.0);
  CHECK(hmax <= 10.0 * hmin);

  // h is supported on omega and phiT is nontrivial.
  for (int n = 0; n <= g.n_steps; ++n) {
    for (int i = 0; i < g.n_interior(); ++i) {
      if (!inst.r.omega.contains(i)) CHECK(hs.h.at(n, i) == 0.0);
    }
  }
  CHECK(norm_Omega(g, hs.phiT) > 0.0);

  // Fixed-point residual: one more application of the map moves the verified
  // state by far less than the outer tolerance.
  const HierarchyOpts defaults;
  const LinearizedPotentials pot = build_linearized_potentials(g, f, hs.y, defaults.n_quad);
  const LeaderSolution re =
      minimize_F_eps(g, inst.r, pot.a, pot.c, y0, yd, params, eps, defaults.leader);
  CHECK(nodal_dist(g, re.y, hs.y) <= defaults.outer_tol);

  // Driving the tolerance to the floor finds the exact fixed point of the
  // floating-point map instead of flagging divergence.
  HierarchyOpts tight;
  tight.outer_tol = 1e-300;
  const HierarchySolution fixed =
      solve_semilinear_hierarchy(g, inst.r, f, y0, yd, params, eps, tight);
  CHECK(fixed.report.converged);
  CHECK_FALSE(fixed.report.diverged);
  CHECK(fixed.report.successive_diffs.back() == 0.0);
}

TEST_CASE("semilinear loop: reporting and failure surfaces") {
  const Instance inst = make_instance(24, 24);
  const Grid& g = inst.g;
  const RobustParams params = desk_params();
  const Nonlinearity f = tanh_nonlinearity(0.5);
  std::vector<double> y0 = testutil::sine_vector(g);
  const SpaceTimeField yd = zero_field(g);
  const double eps = 1e-3;

  // Exhausting max_outer is reported, not thrown, and the verification still
  // characterizes the partial answer.
  HierarchyOpts short_run;
  short_run.max_outer = 2;
  const HierarchySolution part =
      solve_semilinear_hierarchy(g, inst.r, f, y0, yd, params, eps, short_run);
  CHECK_FALSE(part.report.converged);
  CHECK_FALSE(part.report.diverged);
  CHECK(part.report.outer_iterations == 2);
  CHECK(part.report.stop_reason == "max outer iterations reached");
  CHECK(std::isfinite(part.verified_terminal_norm));
  CHECK(part.h.sup_norm() > 0.0);

  // A nonlinearity whose derivative leaves the declared bound only beyond the
  // admission probe range trips the per-iteration potential check, with the
  // offending iteration in the message.
  Nonlinearity sneaky;
  sneaky.name = "piecewise";
  sneaky.f = [](double s) {
    if (std::abs(s) <= 10.0) return 0.3 * s;
    const double sign = s > 0.0 ? 1.0 : -1.0;
    return sign * (3.0 + 2.0 * (std::abs(s) - 10.0));
  };
  sneaky.fp = [](double s) { return std::abs(s) <= 10.0 ? 0.3 : 2.0; };
  sneaky.fpp = [](double) { return 0.0; };
  sneaky.lipschitz_bound = 0.3;
  for (double& v : y0) v *= 30.0;
  try {
    solve_semilinear_hierarchy(g, inst.r, sneaky, y0, yd, params, eps);
    FAIL("expected SpecError for the potential bound violation");
  } catch (const SpecError& e) {
    CHECK(std::string(e.what()).find("outer iteration") != std::string::npos);
  }

  // Input validation.
  const std::vector<double> good_y0 = testutil::sine_vector(g);
  CHECK_THROWS_AS(solve_semilinear_hierarchy(g, inst.r, f, good_y0, yd, params, 0.0),
                  SpecError);
  CHECK_THROWS_AS(solve_semilinear_hierarchy(g, inst.r, f, std::vector<double>(3, 0.0), yd,
                                             params, eps),
                  SpecError);
  HierarchyOpts bad;
  bad.max_outer = 0;
  CHECK_THROWS_AS(solve_semilinear_hierarchy(g, inst.r, f, good_y0, yd, params, eps, bad),
                  SpecError);
  Nonlinearity liar = tanh_nonlinearity(1.0);
  liar.lipschitz_bound = 0.5;  // |f'| reaches 1.0
  CHECK_THROWS_AS(solve_semilinear_hierarchy(g, inst.r, liar, good_y0, yd, params, eps),
                  SpecError);
}

TEST_CASE("projected loop: inactive and degenerate boxes reduce exactly") {
  const Instance inst = make_instance(24, 24);
  const Grid& g = inst.g;
  const RobustParams params = desk_params();
  const std::vector<double> y0 = testutil::sine_vector(g);
  const SpaceTimeField yd = zero_field(g);
  const Potential a0 = constant_potential(g, 0.0);
  const MidField am = mid_average(g, a0.values);
  const double eps = 1e-3;

  const HierarchyOpts defaults;
  const LeaderSolution un =
      minimize_F_eps(g, inst.r, am, am, y0, yd, params, eps, defaults.leader);

  AdmissibleBox big;
  big.e1_lo = big.e2_lo = -1e6;
  big.e1_hi = big.e2_hi = 1e6;
  const ProjectedSolution pi =
      solve_projected_hierarchy(g, inst.r, a0, y0, yd, params, big, eps);
  CHECK(pi.report.converged);
  CHECK(pi.report.outer_iterations == 1);
  CHECK(pi.report.stop_reason == "frozen coefficients stationary");
  CHECK(pi.h.data == un.h.data);
  CHECK(pi.phiT == un.phiT);
  CHECK(nodal_dist(g, pi.y, un.y) < 1e-12);
  for (double v : pi.coefficients.sigma.data) CHECK(v == 1.0);
  for (double v : pi.coefficients.rho.data) CHECK(v == 1.0);

  const AdmissibleBox zero;  // {0} x {0}: the adjoint decouples
  const ProjectedSolution pz =
      solve_projected_hierarchy(g, inst.r, a0, y0, yd, params, zero, eps);
  CHECK(pz.report.converged);
  CHECK(pz.report.outer_iterations == 1);
  CHECK(pz.v.sup_norm() == 0.0);
  CHECK(pz.psi.sup_norm() == 0.0);
  CouplingCoefficients zc{mid_zero(g), mid_zero(g)};
  const LeaderSolution plain =
      minimize_F_eps(g, inst.r, am, am, y0, yd, params, eps, defaults.leader, &zc);
  CHECK(pz.h.data == plain.h.data);
  CHECK(testutil::rel_err(pz.verified_terminal_norm, plain.terminal_norm) < 1e-6);
  for (double v : pz.coefficients.sigma.data) CHECK(v == 0.0);
  for (double v : pz.coefficients.rho.data) CHECK(v == 0.0);
}

TEST_CASE("projected loop: active box saturates with exact identities") {
  const Instance inst = make_instance(24, 24);
  const Grid& g = inst.g;
  const RobustParams params = desk_params(2.0, 2.0);
  std::vector<double> y0 = testutil::sine_vector(g);
  for (double& v : y0) v *= 3.0;
  const SpaceTimeField yd = zero_field(g);
  const Potential a0 = constant_potential(g, 0.0);
  const MidField am = mid_average(g, a0.values);
  const double eps = 1e-3;

  const HierarchyOpts defaults;
  const LeaderSolution un =
      minimize_F_eps(g, inst.r, am, am, y0, yd, params, eps, defaults.leader);
  double vmax = 0.0;
  for (double qv : un.q.data) vmax = std::max(vmax, std::abs(qv) / (params.ell * params.ell));
  REQUIRE(vmax > 0.0);

  AdmissibleBox box;
  box.e1_lo = -0.3 * vmax;
  box.e1_hi = 0.3 * vmax;
  box.e2_lo = -0.3 * vmax;
  box.e2_hi = 0.3 * vmax;

  const ProjectedSolution ps = solve_projected_hierarchy(g, inst.r, a0, y0, yd, params, box, eps);
  CHECK(ps.report.converged);
  CHECK(ps.report.outer_iterations >= 2);
  CHECK(ps.report.outer_iterations <= 10);
  const auto& diffs = ps.report.successive_diffs;
  for (std::size_t k = 1; k < diffs.size(); ++k) CHECK(diffs[k] < diffs[k - 1]);

  // Pointwise projection identities on the verified output.
  const double inv_ell2 = 1.0 / (params.ell * params.ell);
  const double inv_gamma2 = 1.0 / (params.gamma * params.gamma);
  int sat_v = 0;
  int sat_psi = 0;
  for (int n = 0; n <= g.n_steps; ++n) {
    for (int i = 0; i < g.n_interior(); ++i) {
      const double qv = ps.q.at(n, i);
      const double cv = std::min(box.e1_hi, std::max(box.e1_lo, -qv * inv_ell2));
      const double cp = std::min(box.e2_hi, std::max(box.e2_lo, qv * inv_gamma2));
      if (inst.r.O.contains(i)) {
        CHECK(std::abs(ps.v.at(n, i) - cv) <= 1e-12);
        if (ps.v.at(n, i) == box.e1_lo || ps.v.at(n, i) == box.e1_hi) ++sat_v;
      } else {
        CHECK(ps.v.at(n, i) == 0.0);
      }
      CHECK(std::abs(ps.psi.at(n, i) - cp) <= 1e-12);
      if (ps.psi.at(n, i) == box.e2_lo || ps.psi.at(n, i) == box.e2_hi) ++sat_psi;
    }
  }
  CHECK(sat_v > 0);
  CHECK(sat_psi > 0);

  // Variational inequalities audited by the verification solve.
  CHECK(ps.vi_worst_v >= -1e-9);
  CHECK(ps.vi_worst_psi <= 1e-9);

  // Frozen coefficients live in [0,1] and the box genuinely bites.
  double min_sigma = 2.0;
  for (double cfe : ps.coefficients.sigma.data) {
    CHECK(cfe >= 0.0);
    CHECK(cfe <= 1.0);
    min_sigma = std::min(min_sigma, cfe);
  }
  CHECK(min_sigma < 0.9);

  // The constrained control differs from the unconstrained one.
  CHECK(nodal_dist(g, ps.h, un.h) > 1e-6);
  CHECK(ps.verified_terminal_norm ==
        doctest::Approx(norm_Omega(g, slice(ps.y, g.n_steps))).epsilon(1e-12));

  // Desk-scale instance: weak coupling, unit data — the clamped run still
  // reaches the doubled epsilon bound.
  const RobustParams desk = desk_params();
  const std::vector<double> y0d = testutil::sine_vector(g);
  const LeaderSolution und =
      minimize_F_eps(g, inst.r, am, am, y0d, yd, desk, eps, defaults.leader);
  double vmaxd = 0.0;
  for (double qv : und.q.data) vmaxd = std::max(vmaxd, std::abs(qv) / (desk.ell * desk.ell));
  AdmissibleBox boxd;
  boxd.e1_lo = -0.3 * vmaxd;
  boxd.e1_hi = 0.3 * vmaxd;
  boxd.e2_lo = -0.3 * vmaxd;
  boxd.e2_hi = 0.3 * vmaxd;
  const ProjectedSolution pd =
      solve_projected_hierarchy(g, inst.r, a0, y0d, yd, desk, boxd, eps);
  CHECK(pd.report.converged);
  CHECK(pd.verified_terminal_norm <= 2.0 * eps);
}

TEST_CASE("projected loop: input validation") {
  const Instance inst = make_instance(12, 12);
  const Grid& g = inst.g;
  const RobustParams params = desk_params();
  const std::vector<double> y0 = testutil::sine_vector(g);
  const SpaceTimeField yd = zero_field(g);
  const Potential a0 = constant_potential(g, 0.0);

  AdmissibleBox bad;
  bad.e1_lo = 0.5;
  bad.e1_hi = 1.0;
  CHECK_THROWS_AS(solve_projected_hierarchy(g, inst.r, a0, y0, yd, params, bad, 1e-3),
                  SpecError);
  const AdmissibleBox ok;
  CHECK_THROWS_AS(solve_projected_hierarchy(g, inst.r, a0, y0, yd, params, ok, -1.0),
                  SpecError);
  const Instance other = make_instance(16, 16);
  const Potential wrong = constant_potential(other.g, 0.0);
  CHECK_THROWS_AS(solve_projected_hierarchy(g, inst.r, wrong, y0, yd, params, ok, 1e-3),
                  SpecError);
}
