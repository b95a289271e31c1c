#pragma once

// Penalized minimal-norm leader control steering the coupled optimality
// system (which already embeds the follower's saddle response) to an
// approximately null terminal state.
//
// For terminal adjoint data phiT, with (φ, θ) = solve_adjoint_pair(phiT), the
// penalized dual functional is
//
//   F_ε(phiT) = ½ ∬_{ω×(0,T)} |φ|²  +  pen(phiT)
//             + ⟨y0, φ(0)⟩_Ω  −  ∬_{O_d×(0,T)} θ·yd
//
// with pen = (ε/2)‖phiT‖²_Ω (quadratic mode, default) or ε‖phiT‖_Ω
// (exact_norm mode). By the exact discrete duality identity, its gradient in
// the ⟨·,·⟩_Ω sense is
//
//   grad F_ε(phiT) = y(T) + pen'(phiT),
//
// where (y, q) solves the optimality system with leader control h = φχ_ω and
// the true data y0, yd. The leader control associated with phiT is h = φχ_ω.
//
// In quadratic mode the minimizer solves the linear system H·phiT = −y_free(T)
// with H: u ↦ y(T; h = φ_u χ_ω, y0 = 0, yd = 0) + ε·u, a symmetric positive
// definite map (the homogeneous terminal map is the ω-Gramian of the adjoint
// pair, PSD by duality, plus εI). It is solved matrix-free by conjugate
// gradient — one adjoint-pair solve plus one optimality-system solve per
// iteration — and at the minimizer y(T) = −ε·phiT up to the CG tolerance.
// exact_norm mode warm-starts from the quadratic minimizer and refines by
// subgradient descent with decreasing steps, keeping the best iterate; it
// declares convergence when the certified terminal norm is ≤ ε (which is what
// the exact-norm optimality condition guarantees at the true minimizer).
//
// All inner systems accept optional frozen coupling-coefficient fields, which
// the projected hierarchy uses; absent coefficients mean σ = ρ = 1.

#include <vector>

#include "heatctrl/carleman.hpp"
#include "heatctrl/coupled.hpp"
#include "heatctrl/grid.hpp"
#include "heatctrl/pde.hpp"

namespace heatctrl {

enum class PenaltyMode { quadratic, exact_norm };

// Inner-sweep defaults for the leader: tighter than the generic coupled
// default so CG residual arithmetic and the optimality identity are not
// polluted by sweep truncation.
SweepOpts leader_sweep_defaults();

double eval_F_eps(const Grid& g, const Regions& regions, const MidField& a, const MidField& c,
                  const std::vector<double>& phiT, const std::vector<double>& y0,
                  const SpaceTimeField& yd, const RobustParams& params, double epsilon,
                  PenaltyMode mode = PenaltyMode::quadratic,
                  const SweepOpts& sweep = leader_sweep_defaults(),
                  const CouplingCoefficients* coeffs = nullptr);

// Gradient of F_ε in the ⟨·,·⟩_Ω sense. In exact_norm mode this is the
// subgradient selection with the ε·phiT/‖phiT‖ term; at phiT = 0 it returns
// the smooth part alone. Throws SolverError if an inner sweep fails.
std::vector<double> grad_F_eps(const Grid& g, const Regions& regions, const MidField& a,
                               const MidField& c, const std::vector<double>& phiT,
                               const std::vector<double>& y0, const SpaceTimeField& yd,
                               const RobustParams& params, double epsilon,
                               PenaltyMode mode = PenaltyMode::quadratic,
                               const SweepOpts& sweep = leader_sweep_defaults(),
                               const CouplingCoefficients* coeffs = nullptr);

struct LeaderOpts {
  double cg_tol = 1e-10;  // relative residual ‖r‖/‖b‖
  int max_cg = 500;
  PenaltyMode penalty_mode = PenaltyMode::quadratic;
  SweepOpts sweep = leader_sweep_defaults();
  int subgrad_max_iters = 60;       // exact_norm refinement length
  double subgrad_initial_step = 0.0;  // 0: scaled from the warm start
};

struct LeaderSolution {
  SpaceTimeField h;           // = φχ_ω at the minimizer (zero outside ω)
  std::vector<double> phiT;   // minimizer of F_ε
  SpaceTimeField y, q;        // controlled optimality trajectories under h
  double terminal_norm = 0.0;              // ‖y(T)‖_Ω
  double uncontrolled_terminal_norm = 0.0; // same system with h = 0
  double h_norm = 0.0;                     // ‖h‖ in L²(ω×(0,T))
  double F_value = 0.0;                    // F_ε at the minimizer
  int cg_iterations = 0;
  // Relative residual after each CG step (in exact_norm mode these describe
  // the quadratic warm start).
  std::vector<double> cg_residuals;
  double epsilon = 0.0;
  PenaltyMode penalty_mode = PenaltyMode::quadratic;
  // quadratic: CG reached cg_tol within max_cg (otherwise the partial iterate
  // is returned, flagged). exact_norm: the certified terminal norm is ≤ ε.
  bool converged = false;
};

LeaderSolution minimize_F_eps(const Grid& g, const Regions& regions, const MidField& a,
                              const MidField& c, const std::vector<double>& y0,
                              const SpaceTimeField& yd, const RobustParams& params,
                              double epsilon, const LeaderOpts& opts = {},
                              const CouplingCoefficients* coeffs = nullptr);

// Independent re-solve of the (linear or true semilinear) optimality system
// under a given leader control; the follower response inside is the
// characterized saddle, so the terminal norm certifies the full hierarchy.
// Throws SolverError if the solve does not converge.
struct NullControlCheck {
  double terminal_norm = 0.0;
  SpaceTimeField y, q;
  CoupledSolveReport report;
};

NullControlCheck verify_null_control(const Grid& g, const Regions& regions, const MidField& a,
                                     const MidField& c, const SpaceTimeField& h,
                                     const std::vector<double>& y0, const SpaceTimeField& yd,
                                     const RobustParams& params,
                                     const SweepOpts& sweep = leader_sweep_defaults(),
                                     const CouplingCoefficients* coeffs = nullptr);
NullControlCheck verify_null_control(const Grid& g, const Regions& regions,
                                     const Nonlinearity& f, const SpaceTimeField& h,
                                     const std::vector<double>& y0, const SpaceTimeField& yd,
                                     const RobustParams& params,
                                     const SweepOpts& sweep = leader_sweep_defaults(),
                                     const PicardOpts& picard = {});

// Uniformity diagnostics: h_norm against the data size ‖y0‖_Ω + ‖ρ·yd‖.
// A divergent weighted target norm marks yd inadmissible for the ρ-weighted
// theory; the ratio is then reported against an infinite denominator (0).
struct ControlBoundReport {
  double h_norm = 0.0;
  double y0_norm = 0.0;
  WeightedTargetNorm weighted_target;
  double denominator = 0.0;  // y0_norm + weighted_target.value
  double ratio = 0.0;        // h_norm / denominator (0/0 reported as 0)
  bool target_inadmissible = false;
};

ControlBoundReport control_bound_report(const Grid& g, const Regions& regions,
                                        const LeaderSolution& solution,
                                        const std::vector<double>& y0,
                                        const SpaceTimeField& yd,
                                        const CarlemanWeights& weights);

}  // namespace heatctrl
