#pragma once

#include <string>
#include <vector>

#include "heatctrl/coupled.hpp"
#include "heatctrl/follower.hpp"
#include "heatctrl/grid.hpp"
#include "heatctrl/leader.hpp"
#include "heatctrl/pde.hpp"

namespace heatctrl {

// ---------------------------------------------------------------------------
// Outer fixed-point loops on top of the penalized leader solve.
//
// Semilinear problem: the map z -> y_z freezes the potentials of the coupled
// optimality system at the previous iterate,
//
//   a_z = g(z) with g(s) = \int_0^1 f'(sigma s) dsigma   (so g(s) s = f(s)),
//   c_z = f'(z),
//
// runs the penalized leader solve on the frozen linear system and returns its
// state. A fixed point of the map solves the semilinear problem. The loop is
// plain Picard iteration from z = 0; divergence is detected by successive
// iterate distances that fail to decrease over a window and is reported, not
// thrown. The final answer is re-verified by solving the genuinely semilinear
// optimality system with the converged control, so the reported terminal norm
// refers to the nonlinear dynamics, not their linearization.
//
// Box-constrained problem (linear dynamics): the iteration freezes the
// pointwise projection-coefficient fields
//
//   sigma~ = Proj_[E1](-q~/ell^2) / (-q~/ell^2),
//   rho~   = Proj_[E2]( q~/gamma^2) / ( q~/gamma^2)
//
// at the previous adjoint iterate q~, runs the leader solve on the
// coefficient-frozen linear system and updates q~ <- q. At convergence the
// result is re-verified with the independent projected saddle solver (true
// clamped dynamics, variational-inequality audit included).
//
// Both loops stop early without an extra solve when the frozen fields of the
// next iteration are bitwise equal to the current ones: the map is then
// exactly stationary (the inner solve is deterministic), so the next distance
// is exactly zero and is recorded as such. Linear f, the inactive box, and
// the degenerate {0}x{0} box all converge this way after a single solve.
// ---------------------------------------------------------------------------

// Composite-trapezoid quadrature of g(s) = \int_0^1 f'(sigma s) dsigma on
// n_quad intervals (n_quad + 1 evaluations, n_quad >= 2). The factorization
// g(s) s = f(s) holds up to the O(n_quad^-2) quadrature error; it is exact
// for linear f and at s = 0.
double g_of(const Nonlinearity& f, double s, int n_quad = 2000);

struct HierarchyOpts {
  double outer_tol = 1e-6;  // L2(Q) distance between consecutive iterates
  int max_outer = 50;
  int n_quad = 2000;          // quadrature resolution for g_of
  int divergence_window = 5;  // non-decreasing distances over this window
  LeaderOpts leader{};        // inner penalized leader solves
  PicardOpts picard{};        // final semilinear verification solve
  ProjectedOpts projected{};  // final projected verification solve
  void validate() const;
};

struct FixedPointReport {
  int outer_iterations = 0;  // number of inner leader solves performed
  // L2(Q) distances between consecutive iterates (z for the semilinear loop,
  // q~ for the projected loop), one entry per recorded step; a trailing 0.0
  // marks a bitwise-stationary map detected without an extra solve.
  std::vector<double> successive_diffs;
  std::vector<double> per_iteration_h_norms;
  // Semilinear loop only: max(||a_z||_inf, ||c_z||_inf) of the frozen
  // potentials built at each iteration (each must stay <= lipschitz_bound).
  std::vector<double> per_iteration_potential_sups;
  bool converged = false;
  bool diverged = false;  // non-decreasing distances over the window
  std::string stop_reason;
};

// Frozen linearization potentials a_z(n,i) = g(z_mid), c_z(n,i) = f'(z_mid)
// evaluated at the interval-midpoint average of the nodal iterate z.
// OpenMP-parallel over entries; the _serial twin is the reference
// implementation and produces bitwise-identical fields.
struct LinearizedPotentials {
  MidField a;
  MidField c;
};
LinearizedPotentials build_linearized_potentials(const Grid& g, const Nonlinearity& f,
                                                 const SpaceTimeField& z, int n_quad);
LinearizedPotentials build_linearized_potentials_serial(const Grid& g, const Nonlinearity& f,
                                                        const SpaceTimeField& z, int n_quad);

// Frozen projection-coefficient fields at the midpoint average of q~. A
// degenerate interval (both ends zero) yields an identically zero coefficient
// field: the clamped control is 0 whatever q does, and the zero field is the
// exact limit of Proj(z)/z. OpenMP-parallel over entries with a bitwise
// serial reference.
CouplingCoefficients build_projection_coefficients(const Grid& g, const SpaceTimeField& q_tilde,
                                                   const RobustParams& params,
                                                   const AdmissibleBox& box);
CouplingCoefficients build_projection_coefficients_serial(const Grid& g,
                                                          const SpaceTimeField& q_tilde,
                                                          const RobustParams& params,
                                                          const AdmissibleBox& box);

struct HierarchySolution {
  SpaceTimeField y;  // verified semilinear state under the converged control
  SpaceTimeField q;  // its adjoint
  SpaceTimeField h;  // converged leader control (supported on omega)
  std::vector<double> phiT;  // leader minimizer from the final inner solve
  double verified_terminal_norm = 0.0;  // ||y(T)|| of the semilinear solve
  double epsilon = 0.0;
  FixedPointReport report;
};

// Throws SpecError for inconsistent inputs (including a frozen-potential
// sup-norm above f.lipschitz_bound, with the offending iteration in the
// message) and SolverError when an inner solve fails (iteration index in the
// message). Non-convergence of the outer loop itself is reported.
HierarchySolution solve_semilinear_hierarchy(const Grid& g, const Regions& regions,
                                             const Nonlinearity& f,
                                             const std::vector<double>& y0,
                                             const SpaceTimeField& yd,
                                             const RobustParams& params, double epsilon,
                                             const HierarchyOpts& opts = {});

struct ProjectedSolution {
  SpaceTimeField y;    // verified clamped state under the converged control
  SpaceTimeField q;    // its adjoint
  SpaceTimeField h;    // converged leader control (supported on omega)
  SpaceTimeField v;    // box-constrained follower control Proj(-q/ell^2) on O
  SpaceTimeField psi;  // box-constrained worst perturbation Proj(q/gamma^2)
  std::vector<double> phiT;
  CouplingCoefficients coefficients;  // frozen at the final adjoint iterate
  double verified_terminal_norm = 0.0;
  // Worst variational-inequality slacks from the verification audit (see
  // SaddleSolution::vi_worst_v / vi_worst_psi).
  double vi_worst_v = 0.0;
  double vi_worst_psi = 0.0;
  double epsilon = 0.0;
  FixedPointReport report;
};

// Linear dynamics only (the same potential a acts in the state and adjoint
// equations). Error behaviour mirrors solve_semilinear_hierarchy; the final
// verification additionally audits both variational inequalities and throws
// SolverError on a violation beyond opts.projected.vi_tol.
ProjectedSolution solve_projected_hierarchy(const Grid& g, const Regions& regions,
                                            const Potential& a, const std::vector<double>& y0,
                                            const SpaceTimeField& yd, const RobustParams& params,
                                            const AdmissibleBox& box, double epsilon,
                                            const HierarchyOpts& opts = {});

}  // namespace heatctrl
