#include "heatctrl/leader.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <string>
#include <utility>
#include <vector>

namespace heatctrl {

namespace {

void check_terminal(const Grid& g, const std::vector<double>& v, const char* what) {
  if (static_cast<int>(v.size()) != g.n_interior()) {
    throw SpecError(std::string("leader: ") + what + " has wrong size");
  }
}

void check_field(const Grid& g, const SpaceTimeField& f, const char* what) {
  if (f.nt != g.n_time_nodes() || f.nx != g.n_interior()) {
    throw SpecError(std::string("leader: ") + what + " has wrong shape");
  }
}

SpaceTimeField mask_to_region(const SpaceTimeField& f, const RegionMask& mask) {
  SpaceTimeField out(f.nt, f.nx);
  for (int n = 0; n < f.nt; ++n) {
    for (int i = 0; i < f.nx; ++i) {
      if (mask.contains(i)) out.at(n, i) = f.at(n, i);
    }
  }
  return out;
}

AdjointPairSolution adjoint_or_throw(const Grid& g, const Regions& regions, const MidField& a,
                                     const MidField& c, const std::vector<double>& phiT,
                                     const RobustParams& params, const SweepOpts& sweep,
                                     const CouplingCoefficients* coeffs) {
  AdjointPairSolution pair = solve_adjoint_pair(g, regions, a, c, phiT, params, sweep, coeffs);
  if (!pair.report.converged) {
    throw SolverError("leader: adjoint-pair sweep did not converge");
  }
  return pair;
}

OptimalitySolution optimality_or_throw(const Grid& g, const Regions& regions, const MidField& a,
                                       const MidField& c, const SpaceTimeField& h,
                                       const std::vector<double>& y0, const SpaceTimeField& yd,
                                       const RobustParams& params, const SweepOpts& sweep,
                                       const CouplingCoefficients* coeffs) {
  OptimalitySolution os =
      solve_optimality_system(g, regions, a, c, h, y0, yd, params, sweep, coeffs);
  if (!os.report.converged) {
    throw SolverError("leader: optimality-system sweep did not converge");
  }
  return os;
}

double penalty_value(double epsilon, PenaltyMode mode, double phiT_norm) {
  if (mode == PenaltyMode::quadratic) return 0.5 * epsilon * phiT_norm * phiT_norm;
  return epsilon * phiT_norm;
}

double F_from_pair(const Grid& g, const Regions& regions, const AdjointPairSolution& pair,
                   const std::vector<double>& phiT, const std::vector<double>& y0,
                   const SpaceTimeField& yd, double epsilon, PenaltyMode mode) {
  const std::vector<double> phi0 = slice(pair.phi, 0);
  return 0.5 * inner_product_Q(g, pair.phi, pair.phi, &regions.omega) +
         penalty_value(epsilon, mode, norm_Omega(g, phiT)) +
         inner_product_Omega(g, y0, phi0) -
         inner_product_Q(g, yd, pair.theta, &regions.O_d);
}

void validate_common(const Grid& g, const MidField& a, const MidField& c,
                     const std::vector<double>& phiT_or_y0, const SpaceTimeField& yd,
                     const RobustParams& params, double epsilon, const char* vec_name) {
  params.validate();
  if (!(epsilon > 0.0)) throw SpecError("leader: epsilon must be positive");
  if (a.nt != g.n_steps || a.nx != g.n_interior() || c.nt != g.n_steps ||
      c.nx != g.n_interior()) {
    throw SpecError("leader: potential field shape mismatch");
  }
  check_terminal(g, phiT_or_y0, vec_name);
  check_field(g, yd, "yd");
}

}  // namespace

SweepOpts leader_sweep_defaults() {
  SweepOpts opts;
  opts.tol = 1e-12;
  opts.max_sweeps = 400;
  return opts;
}

double eval_F_eps(const Grid& g, const Regions& regions, const MidField& a, const MidField& c,
                  const std::vector<double>& phiT, const std::vector<double>& y0,
                  const SpaceTimeField& yd, const RobustParams& params, double epsilon,
                  PenaltyMode mode, const SweepOpts& sweep, const CouplingCoefficients* coeffs) {
  validate_common(g, a, c, phiT, yd, params, epsilon, "phiT");
  check_terminal(g, y0, "y0");
  const AdjointPairSolution pair =
      adjoint_or_throw(g, regions, a, c, phiT, params, sweep, coeffs);
  return F_from_pair(g, regions, pair, phiT, y0, yd, epsilon, mode);
}

std::vector<double> grad_F_eps(const Grid& g, const Regions& regions, const MidField& a,
                               const MidField& c, const std::vector<double>& phiT,
                               const std::vector<double>& y0, const SpaceTimeField& yd,
                               const RobustParams& params, double epsilon, PenaltyMode mode,
                               const SweepOpts& sweep, const CouplingCoefficients* coeffs) {
  validate_common(g, a, c, phiT, yd, params, epsilon, "phiT");
  check_terminal(g, y0, "y0");
  const AdjointPairSolution pair =
      adjoint_or_throw(g, regions, a, c, phiT, params, sweep, coeffs);
  const SpaceTimeField h = mask_to_region(pair.phi, regions.omega);
  const OptimalitySolution os =
      optimality_or_throw(g, regions, a, c, h, y0, yd, params, sweep, coeffs);

  std::vector<double> grad = slice(os.y, g.n_steps);
  if (mode == PenaltyMode::quadratic) {
    for (int i = 0; i < g.n_interior(); ++i) {
      grad[static_cast<std::size_t>(i)] += epsilon * phiT[static_cast<std::size_t>(i)];
    }
  } else {
    const double n = norm_Omega(g, phiT);
    if (n > 0.0) {
      for (int i = 0; i < g.n_interior(); ++i) {
        grad[static_cast<std::size_t>(i)] += epsilon * phiT[static_cast<std::size_t>(i)] / n;
      }
    }
  }
  return grad;
}

namespace {

struct LeaderContext {
  const Grid& g;
  const Regions& regions;
  const MidField& a;
  const MidField& c;
  const std::vector<double>& y0;
  const SpaceTimeField& yd;
  const RobustParams& params;
  double epsilon;
  const SweepOpts& sweep;
  const CouplingCoefficients* coeffs;
};

// H·u = y(T; h = φ_u χ_ω, 0, 0) + ε·u: one adjoint-pair solve plus one
// homogeneous optimality solve.
std::vector<double> apply_hessian(const LeaderContext& ctx, const std::vector<double>& u) {
  const AdjointPairSolution pair =
      adjoint_or_throw(ctx.g, ctx.regions, ctx.a, ctx.c, u, ctx.params, ctx.sweep, ctx.coeffs);
  const SpaceTimeField hu = mask_to_region(pair.phi, ctx.regions.omega);
  const std::vector<double> zero_y0(static_cast<std::size_t>(ctx.g.n_interior()), 0.0);
  const OptimalitySolution os =
      optimality_or_throw(ctx.g, ctx.regions, ctx.a, ctx.c, hu, zero_y0,
                          zero_field(ctx.g), ctx.params, ctx.sweep, ctx.coeffs);
  std::vector<double> out = slice(os.y, ctx.g.n_steps);
  for (int i = 0; i < ctx.g.n_interior(); ++i) {
    out[static_cast<std::size_t>(i)] += ctx.epsilon * u[static_cast<std::size_t>(i)];
  }
  return out;
}

// Full diagnostics at a candidate phiT: control, trajectories, norms, F.
void finalize_solution(const LeaderContext& ctx, const std::vector<double>& phiT,
                       PenaltyMode mode, LeaderSolution& sol) {
  const AdjointPairSolution pair =
      adjoint_or_throw(ctx.g, ctx.regions, ctx.a, ctx.c, phiT, ctx.params, ctx.sweep, ctx.coeffs);
  sol.phiT = phiT;
  sol.h = mask_to_region(pair.phi, ctx.regions.omega);
  OptimalitySolution os = optimality_or_throw(ctx.g, ctx.regions, ctx.a, ctx.c, sol.h, ctx.y0,
                                              ctx.yd, ctx.params, ctx.sweep, ctx.coeffs);
  const std::vector<double> yT = slice(os.y, ctx.g.n_steps);
  sol.terminal_norm = norm_Omega(ctx.g, yT);
  sol.h_norm = norm_Q(ctx.g, sol.h, &ctx.regions.omega);
  sol.F_value = F_from_pair(ctx.g, ctx.regions, pair, phiT, ctx.y0, ctx.yd, ctx.epsilon, mode);
  sol.y = std::move(os.y);
  sol.q = std::move(os.q);
}

}  // namespace

LeaderSolution minimize_F_eps(const Grid& g, const Regions& regions, const MidField& a,
                              const MidField& c, const std::vector<double>& y0,
                              const SpaceTimeField& yd, const RobustParams& params,
                              double epsilon, const LeaderOpts& opts,
                              const CouplingCoefficients* coeffs) {
  validate_common(g, a, c, y0, yd, params, epsilon, "y0");
  if (opts.max_cg < 1) throw SpecError("leader: max_cg must be at least 1");
  if (!(opts.cg_tol > 0.0)) throw SpecError("leader: cg_tol must be positive");

  const LeaderContext ctx{g, regions, a, c, y0, yd, params, epsilon, opts.sweep, coeffs};
  const int nx = g.n_interior();

  LeaderSolution sol;
  sol.epsilon = epsilon;
  sol.penalty_mode = opts.penalty_mode;

  // Free terminal state: right-hand side of the CG system and the
  // uncontrolled baseline.
  const OptimalitySolution os_free = optimality_or_throw(
      g, regions, a, c, zero_field(g), y0, yd, params, opts.sweep, coeffs);
  const std::vector<double> y_freeT = slice(os_free.y, g.n_steps);
  std::vector<double> b(static_cast<std::size_t>(nx));
  for (int i = 0; i < nx; ++i) b[static_cast<std::size_t>(i)] = -y_freeT[static_cast<std::size_t>(i)];
  const double b_norm = norm_Omega(g, b);
  sol.uncontrolled_terminal_norm = b_norm;

  // --- quadratic mode: conjugate gradient on H x = b ---
  std::vector<double> x(static_cast<std::size_t>(nx), 0.0);
  if (b_norm == 0.0) {
    sol.converged = true;  // grad F(0) = y_free(T) = 0: zero is the minimizer
  } else {
    std::vector<double> r = b;
    std::vector<double> p = r;
    double rr = inner_product_Omega(g, r, r);
    for (int it = 0; it < opts.max_cg; ++it) {
      const std::vector<double> hp = apply_hessian(ctx, p);
      const double php = inner_product_Omega(g, p, hp);
      if (!(php > 0.0)) {
        throw SolverError("leader: nonpositive CG curvature (inner solves inconsistent)");
      }
      const double alpha = rr / php;
      for (int i = 0; i < nx; ++i) {
        x[static_cast<std::size_t>(i)] += alpha * p[static_cast<std::size_t>(i)];
        r[static_cast<std::size_t>(i)] -= alpha * hp[static_cast<std::size_t>(i)];
      }
      const double rr_new = inner_product_Omega(g, r, r);
      const double rel = std::sqrt(rr_new) / b_norm;
      sol.cg_residuals.push_back(rel);
      if (rel <= opts.cg_tol) {
        sol.converged = true;
        break;
      }
      const double beta = rr_new / rr;
      for (int i = 0; i < nx; ++i) {
        p[static_cast<std::size_t>(i)] =
            r[static_cast<std::size_t>(i)] + beta * p[static_cast<std::size_t>(i)];
      }
      rr = rr_new;
    }
    sol.cg_iterations = static_cast<int>(sol.cg_residuals.size());
  }

  if (opts.penalty_mode == PenaltyMode::quadratic) {
    finalize_solution(ctx, x, PenaltyMode::quadratic, sol);
    return sol;
  }

  // --- exact_norm mode: subgradient refinement from the quadratic warm start ---
  std::vector<double> best = x;
  double best_F = eval_F_eps(g, regions, a, c, x, y0, yd, params, epsilon,
                             PenaltyMode::exact_norm, opts.sweep, coeffs);
  std::vector<double> cur = x;
  double step0 = opts.subgrad_initial_step;
  for (int k = 1; k <= opts.subgrad_max_iters; ++k) {
    const std::vector<double> sub =
        grad_F_eps(g, regions, a, c, cur, y0, yd, params, epsilon, PenaltyMode::exact_norm,
                   opts.sweep, coeffs);
    const double sub_norm = norm_Omega(g, sub);
    if (sub_norm == 0.0) break;
    if (step0 <= 0.0) {
      step0 = 0.1 * std::max(norm_Omega(g, cur), epsilon) / sub_norm;
    }
    const double step = step0 / static_cast<double>(k);
    for (int i = 0; i < nx; ++i) {
      cur[static_cast<std::size_t>(i)] -= step * sub[static_cast<std::size_t>(i)];
    }
    const double F = eval_F_eps(g, regions, a, c, cur, y0, yd, params, epsilon,
                                PenaltyMode::exact_norm, opts.sweep, coeffs);
    if (F < best_F) {
      best_F = F;
      best = cur;
    }
  }
  finalize_solution(ctx, best, PenaltyMode::exact_norm, sol);
  sol.converged = sol.terminal_norm <= epsilon;
  return sol;
}

NullControlCheck verify_null_control(const Grid& g, const Regions& regions, const MidField& a,
                                     const MidField& c, const SpaceTimeField& h,
                                     const std::vector<double>& y0, const SpaceTimeField& yd,
                                     const RobustParams& params, const SweepOpts& sweep,
                                     const CouplingCoefficients* coeffs) {
  check_field(g, h, "h");
  check_terminal(g, y0, "y0");
  check_field(g, yd, "yd");
  OptimalitySolution os = optimality_or_throw(g, regions, a, c, h, y0, yd, params, sweep, coeffs);
  NullControlCheck out;
  out.terminal_norm = norm_Omega(g, slice(os.y, g.n_steps));
  out.report = os.report;
  out.y = std::move(os.y);
  out.q = std::move(os.q);
  return out;
}

NullControlCheck verify_null_control(const Grid& g, const Regions& regions,
                                     const Nonlinearity& f, const SpaceTimeField& h,
                                     const std::vector<double>& y0, const SpaceTimeField& yd,
                                     const RobustParams& params, const SweepOpts& sweep,
                                     const PicardOpts& picard) {
  check_field(g, h, "h");
  check_terminal(g, y0, "y0");
  check_field(g, yd, "yd");
  OptimalitySolution os =
      solve_optimality_system_semilinear(g, regions, f, h, y0, yd, params, sweep, picard);
  if (!os.report.converged) {
    throw SolverError("leader: semilinear optimality sweep did not converge");
  }
  NullControlCheck out;
  out.terminal_norm = norm_Omega(g, slice(os.y, g.n_steps));
  out.report = os.report;
  out.y = std::move(os.y);
  out.q = std::move(os.q);
  return out;
}

ControlBoundReport control_bound_report(const Grid& g, const Regions& regions,
                                        const LeaderSolution& solution,
                                        const std::vector<double>& y0,
                                        const SpaceTimeField& yd,
                                        const CarlemanWeights& weights) {
  check_terminal(g, y0, "y0");
  check_field(g, yd, "yd");
  ControlBoundReport rep;
  rep.h_norm = solution.h_norm;
  rep.y0_norm = norm_Omega(g, y0);
  rep.weighted_target = weighted_target_norm(g, regions, yd, weights);
  rep.target_inadmissible = rep.weighted_target.divergent;
  rep.denominator = rep.y0_norm + rep.weighted_target.value;
  if (rep.denominator > 0.0 && std::isfinite(rep.denominator)) {
    rep.ratio = rep.h_norm / rep.denominator;
  } else if (!std::isfinite(rep.denominator)) {
    rep.ratio = 0.0;
  } else {
    rep.ratio = rep.h_norm == 0.0 ? 0.0
                                  : std::numeric_limits<double>::infinity();
  }
  return rep;
}

}  // namespace heatctrl
