#pragma once

#include <variant>
#include <vector>

#include "heatctrl/coupled.hpp"
#include "heatctrl/grid.hpp"
#include "heatctrl/pde.hpp"

namespace heatctrl {

// ---------------------------------------------------------------------------
// Robust follower problem. Given the leader control h (acting through the
// indicator of omega), the follower chooses a control v on O and plays
// against the worst-case perturbation psi on all of Q, optimizing
//
//   Jr(v, psi) = 1/2 ||y - yd||^2_{O_d x (0,T)}
//              + 1/2 [ ell^2 ||v||^2_{O x (0,T)} - gamma^2 ||psi||^2_Q ]
//
// where y solves y_t - y_xx + f(y) = h 1_omega + v 1_O + psi, y(0) = y0. All
// quadratures below use the interval-midpoint pairing inner_product_Q, which
// makes the adjoint-based gradients exact derivatives of the discrete
// functional. The saddle point is characterized by v = -q/ell^2 on O and
// psi = q/gamma^2, with q the adjoint of the optimal state.
// ---------------------------------------------------------------------------

// Reaction model of the state equation: either a space-time potential a(x,t)
// (the equation is linear, f(y) = a y) or a pointwise nonlinearity f(y).
struct Dynamics {
  std::variant<Potential, Nonlinearity> model;

  static Dynamics linear(Potential a) { return Dynamics{std::move(a)}; }
  static Dynamics semilinear(Nonlinearity f) { return Dynamics{std::move(f)}; }

  bool is_linear() const { return std::holds_alternative<Potential>(model); }
  const Potential& potential() const;
  const Nonlinearity& nonlinearity() const;
};

// Box of admissible pointwise values: v(x,t) in [e1_lo, e1_hi] on O and
// psi(x,t) in [e2_lo, e2_hi] on Q. Both intervals must contain 0.
struct AdmissibleBox {
  double e1_lo = 0.0;
  double e1_hi = 0.0;
  double e2_lo = 0.0;
  double e2_hi = 0.0;
  void validate() const;
};

enum class SaddleMode { unconstrained, projected };

struct SaddleSolution {
  SpaceTimeField v_bar;    // follower control, supported on O
  SpaceTimeField psi_bar;  // worst-case perturbation on Q
  SpaceTimeField y;        // state at (v_bar, psi_bar)
  SpaceTimeField q;        // adjoint of y
  double J_value = 0.0;
  // Unconstrained mode: norms of the gradients ||(q + ell^2 v)1_O||_Q and
  // ||q - gamma^2 psi||_Q. Projected mode: norms of the fixed-point residuals
  // v - Proj(-q/ell^2) and psi - Proj(q/gamma^2).
  double stationarity_v = 0.0;
  double stationarity_psi = 0.0;
  SaddleMode mode = SaddleMode::unconstrained;
  bool converged = false;
  int iterations = 0;
  // Ascent-descent only: set when the psi-iterates and the functional value
  // grow together over several consecutive steps, the signature of a
  // disturbance weight gamma below the concavity threshold.
  bool gamma_too_small = false;
  // Projected mode only: worst variational-inequality slacks over the probe
  // set. vi_worst_v = min over probes of <grad_v, probe - v_bar> (must be
  // >= -vi_tol) and vi_worst_psi = max of <grad_psi, probe - psi_bar> (must
  // be <= vi_tol), both under the nodal trapezoid quadrature.
  double vi_worst_v = 0.0;
  double vi_worst_psi = 0.0;
};

// State y(h, v, psi): forward solve with source h 1_omega + v 1_O + psi.
SpaceTimeField solve_state(const Grid& g, const Regions& r, const Dynamics& dyn,
                           const SpaceTimeField& h, const SpaceTimeField& v,
                           const SpaceTimeField& psi, const std::vector<double>& y0);

// Adjoint q of a state trajectory: -q_t - q_xx + c q = (y - yd) 1_{O_d},
// q(T) = 0, with c = a (linear) or c = f'(y) sampled at interval midpoints.
SpaceTimeField solve_adjoint(const Grid& g, const Regions& r, const Dynamics& dyn,
                             const SpaceTimeField& y, const SpaceTimeField& yd);

// Robust functional value for a given state trajectory and control pair.
double eval_Jr(const Grid& g, const Regions& r, const SpaceTimeField& y,
               const SpaceTimeField& v, const SpaceTimeField& psi,
               const SpaceTimeField& yd, const RobustParams& params);

struct JrGradient {
  SpaceTimeField grad_v;    // (q + ell^2 v) 1_O
  SpaceTimeField grad_psi;  // q - gamma^2 psi
};

// Exact gradients of the discrete Jr at (v, psi): solves the state forward
// and the adjoint backward.
JrGradient grad_Jr(const Grid& g, const Regions& r, const Dynamics& dyn,
                   const SpaceTimeField& v, const SpaceTimeField& psi,
                   const SpaceTimeField& h, const std::vector<double>& y0,
                   const SpaceTimeField& yd, const RobustParams& params);

// Saddle point via its characterization: solve the coupled optimality system,
// then set v = -q/ell^2 on O and psi = q/gamma^2. Stationarity residuals are
// recomputed by an independent grad_Jr call. Throws SolverError if the
// coupled sweep does not converge.
SaddleSolution solve_saddle_direct(const Grid& g, const Regions& r, const Dynamics& dyn,
                                   const SpaceTimeField& h, const std::vector<double>& y0,
                                   const SpaceTimeField& yd, const RobustParams& params,
                                   const SweepOpts& opts = {});

struct AscentDescentOpts {
  double step_v = 0.0;    // <= 0: automatic 1/(ell^2 + C1), C1 a curvature probe
  double step_psi = 0.0;  // <= 0: automatic 1/gamma^2
  double tol = 1e-8;      // stopping threshold for both gradient norms
  int max_iters = 1000;
  const SpaceTimeField* v_init = nullptr;    // default: zero
  const SpaceTimeField* psi_init = nullptr;  // default: zero
};

// Saddle point by simultaneous gradient descent in v and ascent in psi. Makes
// no use of the saddle characterization, so it serves as an independent
// cross-check of solve_saddle_direct. Steps are halved when a v-step fails to
// decrease (or a psi-step to increase) the functional at the frozen other
// variable. Returns the best iterate with converged=false when max_iters is
// reached or when the gamma_too_small divergence pattern is detected.
SaddleSolution solve_saddle_ascent_descent(const Grid& g, const Regions& r,
                                           const Dynamics& dyn, const SpaceTimeField& h,
                                           const std::vector<double>& y0,
                                           const SpaceTimeField& yd,
                                           const RobustParams& params,
                                           const AscentDescentOpts& opts = {});

struct ProjectedOpts {
  double step_v = 0.0;    // <= 0: 1/ell^2, which turns the update into the
                          // projection map v <- Proj(-q/ell^2)
  double step_psi = 0.0;  // <= 0: 1/gamma^2
  double tol = 1e-13;     // sup-norm change of (v, psi) between iterates
  int max_iters = 500;
  double vi_tol = 1e-9;   // slack allowed in the variational inequalities
  int vi_probes = 100;    // box-vertex probes plus random interior probes
  unsigned long long vi_seed = 0x9e3779b97f4a7c15ull;
};

// Box-constrained saddle point (linear dynamics only) by projected
// ascent-descent. At convergence the variational inequalities are verified
// against probe controls at the box vertices and random interior points;
// a violation beyond vi_tol throws SolverError reporting the worst probe.
SaddleSolution solve_saddle_projected(const Grid& g, const Regions& r, const Potential& a,
                                      const SpaceTimeField& h, const std::vector<double>& y0,
                                      const SpaceTimeField& yd, const RobustParams& params,
                                      const AdmissibleBox& box, const ProjectedOpts& opts = {});

// Pointwise coefficient rho with Proj_[lo,hi](z) = rho(z) z: equal to 1 where
// z already lies in the interval (and at z = 0) and to Proj(z)/z outside, so
// 0 <= rho <= 1 everywhere. The interval must contain 0.
double projection_coefficient_scalar(double z, double lo, double hi);
SpaceTimeField projection_coefficient(const SpaceTimeField& z, double lo, double hi);

struct CurvatureProbe {
  double along_psi = 0.0;  // second derivative of Jr along (0, direction)
  double along_v = 0.0;    // second derivative of Jr along (direction 1_O, 0)
};

// Second derivatives of Jr at (v, psi) along a direction field, computed from
// the first and second linearizations of the state:
//   along_psi = <(y-yd)1_{O_d}, y''> + ||y' 1_{O_d}||^2 - gamma^2 ||dir||^2
//   along_v   = <(y-yd)1_{O_d}, y''> + ||y' 1_{O_d}||^2 + ell^2 ||dir 1_O||^2
// Negative along_psi / positive along_v certify concavity/convexity of the
// discrete saddle problem along that direction.
CurvatureProbe curvature_probe(const Grid& g, const Regions& r, const Nonlinearity& f,
                               const SpaceTimeField& v, const SpaceTimeField& psi,
                               const SpaceTimeField& direction, const SpaceTimeField& h,
                               const std::vector<double>& y0, const SpaceTimeField& yd,
                               const RobustParams& params);

}  // namespace heatctrl
