#pragma once

// Solvers for the two coupled forward-backward systems at the heart of the
// robust control hierarchy:
//
//   optimality system    y_t - Δy + a y = hχ_ω - (σ/ℓ²) q χ_O + (ρ/γ²) q,  y(0) = y0
//                       -q_t - Δq + c q = (y - yd) χ_{Od},                 q(T) = 0
//
//   adjoint pair        -φ_t - Δφ + a φ = θ χ_{Od},                        φ(T) = φT
//                        θ_t - Δθ + c θ = -(σ/ℓ²) φ χ_O + (ρ/γ²) φ,        θ(0) = 0
//
// σ and ρ are optional coupling-coefficient fields (identically 1 when
// absent); the projected box-constrained variant freezes them per outer
// iteration. The discrete operators of the two systems are exact transposes
// of each other, which the duality identity tests rely on.
//
// Both systems are solved by a damped fixed-point sweep (solve one field given
// the other, alternate, relax the update) and, for small grids, by a dense
// monolithic solve used as a test oracle and conditioning probe.

#include <vector>

#include "heatctrl/grid.hpp"
#include "heatctrl/pde.hpp"

namespace heatctrl {

struct RobustParams {
  double ell = 1.0;    // weight ℓ of the control penalty ℓ²∬|v|²
  double gamma = 1.0;  // weight γ of the disturbance penalty γ²∬|ψ|²
  // Engineering surrogate for the theory's "sufficiently large ℓ, γ": the
  // sweep contraction scales with 1/ℓ² + 1/γ², and callers are warned (not
  // stopped) above this threshold.
  double contraction_warning_threshold = 2.0;

  double coupling_strength() const {
    return 1.0 / (ell * ell) + 1.0 / (gamma * gamma);
  }
  bool contraction_warning() const {
    return coupling_strength() > contraction_warning_threshold;
  }
  void validate() const;  // throws SpecError on non-positive ell/gamma
};

// Frozen multiplicative coefficients on the two coupling terms, sampled at
// time-interval midpoints. Absent coefficients mean σ = ρ = 1 (and the code
// paths coincide bitwise, since multiplying by 1.0 is exact).
struct CouplingCoefficients {
  MidField sigma;  // multiplies the -(1/ℓ²) q χ_O (resp. φ) term
  MidField rho;    // multiplies the +(1/γ²) q (resp. φ) term
};

struct CoupledSolveReport {
  int iterations = 0;
  double final_residual = 0.0;  // sup over Q of the successive-sweep difference
  bool converged = false;
  double relaxation = 1.0;  // relaxation factor in effect when the sweep ended
  std::vector<double> residual_history;  // successive-sweep differences, one per sweep
};

struct SweepOpts {
  double tol = 1e-10;   // absolute sup-norm tolerance on successive differences
  int max_sweeps = 200;
  double relaxation = 1.0;  // initial damping; halved on residual increase, floor 0.25
};

struct OptimalitySolution {
  SpaceTimeField y;
  SpaceTimeField q;
  CoupledSolveReport report;
};

struct AdjointPairSolution {
  SpaceTimeField phi;
  SpaceTimeField theta;
  CoupledSolveReport report;
};

// Non-convergence is reported (report.converged == false), never thrown:
// the caller decides whether a partial answer is usable.
OptimalitySolution solve_optimality_system(const Grid& g, const Regions& regions,
                                           const MidField& a, const MidField& c,
                                           const SpaceTimeField& h, const std::vector<double>& y0,
                                           const SpaceTimeField& yd, const RobustParams& params,
                                           const SweepOpts& opts = {},
                                           const CouplingCoefficients* coeffs = nullptr);
OptimalitySolution solve_optimality_system(const Grid& g, const Regions& regions,
                                           const Potential& a, const Potential& c,
                                           const SpaceTimeField& h, const std::vector<double>& y0,
                                           const SpaceTimeField& yd, const RobustParams& params,
                                           const SweepOpts& opts = {},
                                           const CouplingCoefficients* coeffs = nullptr);

AdjointPairSolution solve_adjoint_pair(const Grid& g, const Regions& regions, const MidField& a,
                                       const MidField& c, const std::vector<double>& phiT,
                                       const RobustParams& params, const SweepOpts& opts = {},
                                       const CouplingCoefficients* coeffs = nullptr);
AdjointPairSolution solve_adjoint_pair(const Grid& g, const Regions& regions, const Potential& a,
                                       const Potential& c, const std::vector<double>& phiT,
                                       const RobustParams& params, const SweepOpts& opts = {},
                                       const CouplingCoefficients* coeffs = nullptr);

// True semilinear optimality system: the forward equation is
// y_t - Δy + f(y) = hχ_ω - q/ℓ² χ_O + q/γ², the adjoint potential is f'
// evaluated at the midpoint state (the exact discrete linearization).
OptimalitySolution solve_optimality_system_semilinear(
    const Grid& g, const Regions& regions, const Nonlinearity& f, const SpaceTimeField& h,
    const std::vector<double>& y0, const SpaceTimeField& yd, const RobustParams& params,
    const SweepOpts& opts = {}, const PicardOpts& picard = {});

// Dense monolithic solves of the full space-time block systems; reference
// oracle for the sweeps and the conditioning probe. Throws SpecError when the
// unknown count exceeds the cap.
struct MonolithicSolution {
  SpaceTimeField first;   // y (optimality) or φ (adjoint pair)
  SpaceTimeField second;  // q (optimality) or θ (adjoint pair)
  double rcond = 0.0;     // reciprocal condition estimate from the LU factorization
  bool conditioning_warning = false;  // rcond below the hard-coded 1e-12 alert level
};

MonolithicSolution solve_monolithic(const Grid& g, const Regions& regions, const MidField& a,
                                    const MidField& c, const SpaceTimeField& h,
                                    const std::vector<double>& y0, const SpaceTimeField& yd,
                                    const RobustParams& params,
                                    const CouplingCoefficients* coeffs = nullptr,
                                    int unknown_cap = 20000);
MonolithicSolution solve_monolithic(const Grid& g, const Regions& regions, const MidField& a,
                                    const MidField& c, const std::vector<double>& phiT,
                                    const RobustParams& params,
                                    const CouplingCoefficients* coeffs = nullptr,
                                    int unknown_cap = 20000);

}  // namespace heatctrl
