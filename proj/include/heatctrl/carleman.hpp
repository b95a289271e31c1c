#pragma once

// Carleman-type weight functions for the coupled adjoint system, the weighted
// admissibility norm for tracking targets, and empirical observability
// diagnostics built on both.
//
// Everything is driven by an auxiliary bump function η⁰ on Ω that vanishes on
// the boundary, is positive inside, and has exactly one critical point, placed
// at the center of a prescribed interval ℬ. From it (normalized so its
// analytic maximum is 1) the weights are, with m = ‖η⁰‖_∞ over the closed
// domain and T the horizon,
//
//   α(x,t)  = (e^{4λm} − e^{λ(2m+η⁰(x))}) / (t(T−t))      singular at t=0, T
//   ξ(x,t)  =  e^{λ(2m+η⁰(x))}            / (t(T−t))      singular at t=0, T
//   β, φ_w  =  the same numerators over l(t)               singular only at T
//   l(t)    =  T²/4 on [0, T/2],  t(T−t) on (T/2, T]
//   β*(t)   =  max_x β  = (e^{4λm} − e^{2λm}) / l(t)       (attained at the
//   φ*(t)   =  min_x φ_w =  e^{2λm}           / l(t)        boundary, η⁰ = 0)
//   ρ(t)    =  e^{s β*(t)}
//
// ρ is constant on [0, T/2], nondecreasing afterwards, and blows up at t = T.
// For realistic parameters s β* is in the tens of thousands, far beyond the
// range of double, so ρ is carried in log space (log_rho is always finite
// before t = T) and every consumer works with log ρ; the linear-space rho
// vector is kept for diagnostics and capped at DBL_MAX with a flag when it
// overflows. Values at the structural singularities (t = 0, T for α, ξ; t = T
// for the β family) are stored as DBL_MAX sentinels and are not treated as
// overflow; log_rho stores +infinity at t = T, which consumers exploit since
// exp(−log ρ) vanishes there exactly.

#include <cstdint>
#include <vector>

#include "heatctrl/coupled.hpp"
#include "heatctrl/grid.hpp"
#include "heatctrl/pde.hpp"

namespace heatctrl {

struct CarlemanParams {
  double s = 0.0;       // weight exponent scale; must satisfy s >= s2_threshold
  double lambda = 2.0;  // sharpness of the exponential layer in x
  double sigma2 = 1.0;  // surrogate for the geometry-dependent constant σ₂
  double M = 0.0;       // sup-norm bound on the zero-order potentials

  // Throws SpecError unless s, lambda, sigma2 > 0, M >= 0 and
  // s >= s2_threshold(horizon, M, sigma2).
  void validate(double horizon) const;
};

// Admissibility threshold s₂(T, M, σ₂) = σ₂ (T + T² + T² (2 M^{2/3} + (2M)^{1/2})).
double s2_threshold(double horizon, double M, double sigma2);

// Parameters sitting exactly on the threshold: s = s₂(horizon, M, sigma2).
CarlemanParams default_carleman_params(double horizon, double M = 0.0,
                                       double lambda = 2.0, double sigma2 = 1.0);

// Interval ℬ hosting the critical point of η⁰.
struct BumpInterval {
  double lo = 0.0;
  double hi = 0.0;
};

// Default ℬ: the middle third of ω ∩ O_d (diagnostics place the bump where
// the control region meets the observation region), falling back to the
// middle third of ω when that intersection is empty.
BumpInterval default_bump(const Regions& regions);

// Scalar evaluators of η⁰ and its spatial derivative on [x_min, x_max]:
// η⁰ = ζ(1−ζ)e^{μζ} in the unit coordinate ζ, with μ chosen so the single
// critical point falls at the center of ℬ, normalized so the analytic maximum
// is exactly 1. C^∞, zero at both endpoints, positive inside, and |dη⁰/dx| > 0
// everywhere outside ℬ.
double eta0_value(double x, double x_min, double x_max, const BumpInterval& bump);
double eta0_derivative(double x, double x_min, double x_max, const BumpInterval& bump);

// η⁰ sampled at the interior nodes. Throws SpecError if ℬ is not strictly
// inside the domain, and re-checks the construction invariants numerically
// (positivity inside, nonvanishing slope at nodes outside ℬ). The optional
// output receives the analytic derivative at the interior nodes.
std::vector<double> build_eta0(const Grid& g, const BumpInterval& bump,
                               std::vector<double>* derivative = nullptr);

// l(t): T²/4 for t <= T/2, t(T−t) beyond; continuous at T/2.
double carleman_l(double t, double horizon);

struct CarlemanWeights {
  std::vector<double> eta0;  // interior nodes
  double eta0_max = 0.0;     // m = ‖η⁰‖_∞ over the closed domain (grid scan)

  SpaceTimeField alpha, xi;     // defined on time rows 1..nt−1; sentinel at 0, nt
  SpaceTimeField beta, phi_w;   // defined on time rows 0..nt−1; sentinel at nt
  std::vector<double> beta_star, phi_star;  // per time node; sentinel at nt
  std::vector<double> log_rho;  // s·β*(t); +infinity at t = T
  std::vector<double> rho;      // exp(log_rho), capped at DBL_MAX on overflow

  // True iff capping was needed at a node where the formula is mathematically
  // finite (i.e. anywhere except the structural singularities). With default
  // parameters this fires for rho, whose honest values exceed double range.
  bool overflow_capped = false;

  CarlemanParams params;
};

// Evaluates all weights on the grid. Throws SpecError on invalid parameters.
CarlemanWeights build_weights(const std::vector<double>& eta0, const Grid& g,
                              const CarlemanParams& params);

// Weighted admissibility norm (∬_{O_d×(0,T)} ρ²|yd|²)^{1/2} of a tracking
// target. Quadrature runs over time nodes 0..nt−1 (the weight is not defined
// at t = T); each term is assembled in log space as
// exp(2 log ρ(t) + log ∫_{O_d} yd²dx), and the total is also accumulated by
// log-sum-exp so log_value stays finite when value overflows. The divergence
// indicator compares the quadrature against its own 2Δt-subsampled version:
// an integrable weighted target leaves the ratio near 1, while a target that
// fails ρ-weighted integrability near t = T makes the finest interval
// dominate everything before it.
struct WeightedTargetNorm {
  double value = 0.0;      // the norm; +infinity when it exceeds double range
  double log_value = 0.0;  // log of the norm (finite whenever the norm is > 0)
  double tail_ratio = 1.0; // fine/coarse quadrature ratio near t = T
  bool divergent = false;  // non-finite value or tail_ratio above the factor-4 gate
};

WeightedTargetNorm weighted_target_norm(const Grid& g, const Regions& regions,
                                        const SpaceTimeField& yd,
                                        const CarlemanWeights& weights);

// Space-constant target yd(x,t) = exp(−rate·s·β*(t)) = ρ(t)^{−rate}. The
// weighted integrand is then ρ^{2(1−rate)}: ρ-admissible for rate >= 1,
// divergent below. rate must be positive. At default-scale parameters the
// profile underflows to the zero field (s·β* is in the tens of thousands);
// meaningful decaying-target diagnostics use reduced sigma2 and lambda.
SpaceTimeField decaying_target_profile(const Grid& g, const CarlemanWeights& weights,
                                       double rate);

// Empirical observability quotient of the coupled adjoint pair:
//   ratio = ( ‖φ(0)‖²_Ω + ∬_Q ρ^{−2}|θ|² ) / ∬_{ω×(0,T)} |φ|²
// with (φ, θ) = solve_adjoint_pair(phiT). phiT is normalized internally to
// unit Ω-norm, so the ratio is scale-invariant by construction (the pair is
// linear in phiT and both sides are quadratic). The ρ^{−2} factor enters
// through exp(−(log ρ_n + log ρ_{n+1})) per time interval, the log-space
// midpoint value, which vanishes exactly on the final interval. A zero phiT
// or a φ that vanishes identically on ω yields undefined = true.
struct ObservabilityRatio {
  double lhs = 0.0;
  double rhs = 0.0;
  double ratio = 0.0;
  bool undefined = false;
};

ObservabilityRatio observability_ratio(const Grid& g, const Regions& regions,
                                       const MidField& a, const MidField& c,
                                       const std::vector<double>& phiT,
                                       const RobustParams& params,
                                       const CarlemanWeights& weights,
                                       const SweepOpts& opts = {});

// Monte-Carlo battery over Gaussian terminal data: the max ratio is the
// empirical observability constant of the instance. Sample k draws its phiT
// from an engine seeded with mix_seed(seed, k), so results are independent of
// evaluation order; observability_battery runs the samples OpenMP-parallel
// and observability_battery_serial is the loop-serial reference — the two
// agree bitwise.
struct ObservabilityBattery {
  std::vector<double> ratios;  // per sample; NaN where undefined
  double max_ratio = 0.0;      // empirical constant over defined samples
  double min_ratio = 0.0;
  int undefined_count = 0;
};

ObservabilityBattery observability_battery(const Grid& g, const Regions& regions,
                                           const MidField& a, const MidField& c,
                                           const RobustParams& params,
                                           const CarlemanWeights& weights, int n_samples,
                                           std::uint64_t seed, const SweepOpts& opts = {});
ObservabilityBattery observability_battery_serial(const Grid& g, const Regions& regions,
                                                  const MidField& a, const MidField& c,
                                                  const RobustParams& params,
                                                  const CarlemanWeights& weights,
                                                  int n_samples, std::uint64_t seed,
                                                  const SweepOpts& opts = {});

}  // namespace heatctrl
