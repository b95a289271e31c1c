#include "heatctrl/hierarchy.hpp"

#include <cmath>
#include <cstddef>
#include <limits>
#include <string>
#include <utility>

#include "heatctrl/common.hpp"

namespace heatctrl {

namespace {

double nodal_Q_distance(const Grid& g, const SpaceTimeField& a, const SpaceTimeField& b) {
  SpaceTimeField d = a;
  for (std::size_t k = 0; k < d.data.size(); ++k) d.data[k] -= b.data[k];
  return std::sqrt(inner_product_Q_nodal(g, d, d));
}

bool window_non_decreasing(const std::vector<double>& diffs, int window) {
  if (static_cast<int>(diffs.size()) < window) return false;
  const std::size_t end = diffs.size();
  for (std::size_t i = end - static_cast<std::size_t>(window) + 1; i < end; ++i) {
    if (diffs[i] < diffs[i - 1]) return false;
  }
  return true;
}

void check_common_inputs(const Grid& g, const std::vector<double>& y0, const SpaceTimeField& yd,
                         const RobustParams& params, double epsilon, const HierarchyOpts& opts,
                         const char* who) {
  params.validate();
  opts.validate();
  if (!(epsilon > 0.0) || !std::isfinite(epsilon)) {
    throw SpecError(std::string(who) + ": epsilon must be positive and finite");
  }
  if (static_cast<int>(y0.size()) != g.n_interior()) {
    throw SpecError(std::string(who) + ": y0 size does not match the grid");
  }
  if (yd.nt != g.n_time_nodes() || yd.nx != g.n_interior()) {
    throw SpecError(std::string(who) + ": yd shape does not match the grid");
  }
}

// Applies Proj_[lo,hi] pointwise to scale*q, masked to the given region when
// mask is non-null (zero outside it).
SpaceTimeField clamp_of_adjoint(const Grid& g, const SpaceTimeField& q, double scale, double lo,
                                double hi, const RegionMask* mask) {
  SpaceTimeField out = zero_field(g);
  for (int n = 0; n <= g.n_steps; ++n) {
    for (int i = 0; i < g.n_interior(); ++i) {
      if (mask != nullptr && !mask->contains(i)) continue;
      const double z = scale * q.at(n, i);
      out.at(n, i) = std::min(hi, std::max(lo, z));
    }
  }
  return out;
}

enum class Parallelism { serial, openmp };

LinearizedPotentials build_potentials_impl(const Grid& g, const Nonlinearity& f,
                                           const SpaceTimeField& z, int n_quad,
                                           Parallelism par) {
  if (n_quad < 2) throw SpecError("build_linearized_potentials: n_quad must be >= 2");
  if (z.nt != g.n_time_nodes() || z.nx != g.n_interior()) {
    throw SpecError("build_linearized_potentials: iterate shape does not match the grid");
  }
  const MidField zm = mid_average(g, z);
  LinearizedPotentials out{mid_zero(g), mid_zero(g)};
  const std::ptrdiff_t count = static_cast<std::ptrdiff_t>(zm.data.size());
  if (par == Parallelism::openmp) {
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t k = 0; k < count; ++k) {
      const double s = zm.data[static_cast<std::size_t>(k)];
      out.a.data[static_cast<std::size_t>(k)] = g_of(f, s, n_quad);
      out.c.data[static_cast<std::size_t>(k)] = f.fp(s);
    }
  } else {
    for (std::ptrdiff_t k = 0; k < count; ++k) {
      const double s = zm.data[static_cast<std::size_t>(k)];
      out.a.data[static_cast<std::size_t>(k)] = g_of(f, s, n_quad);
      out.c.data[static_cast<std::size_t>(k)] = f.fp(s);
    }
  }
  return out;
}

CouplingCoefficients build_coefficients_impl(const Grid& g, const SpaceTimeField& q_tilde,
                                             const RobustParams& params, const AdmissibleBox& box,
                                             Parallelism par) {
  box.validate();
  params.validate();
  if (q_tilde.nt != g.n_time_nodes() || q_tilde.nx != g.n_interior()) {
    throw SpecError("build_projection_coefficients: q shape does not match the grid");
  }
  const MidField qm = mid_average(g, q_tilde);
  CouplingCoefficients out{mid_zero(g), mid_zero(g)};
  const bool e1_degenerate = box.e1_lo == 0.0 && box.e1_hi == 0.0;
  const bool e2_degenerate = box.e2_lo == 0.0 && box.e2_hi == 0.0;
  const double inv_ell2 = 1.0 / (params.ell * params.ell);
  const double inv_gamma2 = 1.0 / (params.gamma * params.gamma);
  const std::ptrdiff_t count = static_cast<std::ptrdiff_t>(qm.data.size());
  const auto one = [&](std::ptrdiff_t k) {
    const double qv = qm.data[static_cast<std::size_t>(k)];
    out.sigma.data[static_cast<std::size_t>(k)] =
        e1_degenerate ? 0.0
                      : projection_coefficient_scalar(-qv * inv_ell2, box.e1_lo, box.e1_hi);
    out.rho.data[static_cast<std::size_t>(k)] =
        e2_degenerate ? 0.0
                      : projection_coefficient_scalar(qv * inv_gamma2, box.e2_lo, box.e2_hi);
  };
  if (par == Parallelism::openmp) {
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t k = 0; k < count; ++k) one(k);
  } else {
    for (std::ptrdiff_t k = 0; k < count; ++k) one(k);
  }
  return out;
}

}  // namespace

double g_of(const Nonlinearity& f, double s, int n_quad) {
  if (n_quad < 2) throw SpecError("g_of: n_quad must be >= 2");
  if (!f.fp) throw SpecError("g_of: nonlinearity has no derivative");
  const double h = 1.0 / n_quad;
  double sum = 0.5 * (f.fp(0.0) + f.fp(s));
  for (int j = 1; j < n_quad; ++j) sum += f.fp(j * h * s);
  return sum * h;
}

void HierarchyOpts::validate() const {
  if (!(outer_tol > 0.0) || !std::isfinite(outer_tol)) {
    throw SpecError("HierarchyOpts: outer_tol must be positive and finite");
  }
  if (max_outer < 1) throw SpecError("HierarchyOpts: max_outer must be >= 1");
  if (n_quad < 2) throw SpecError("HierarchyOpts: n_quad must be >= 2");
  if (divergence_window < 2) throw SpecError("HierarchyOpts: divergence_window must be >= 2");
}

LinearizedPotentials build_linearized_potentials(const Grid& g, const Nonlinearity& f,
                                                 const SpaceTimeField& z, int n_quad) {
  return build_potentials_impl(g, f, z, n_quad, Parallelism::openmp);
}

LinearizedPotentials build_linearized_potentials_serial(const Grid& g, const Nonlinearity& f,
                                                        const SpaceTimeField& z, int n_quad) {
  return build_potentials_impl(g, f, z, n_quad, Parallelism::serial);
}

CouplingCoefficients build_projection_coefficients(const Grid& g, const SpaceTimeField& q_tilde,
                                                   const RobustParams& params,
                                                   const AdmissibleBox& box) {
  return build_coefficients_impl(g, q_tilde, params, box, Parallelism::openmp);
}

CouplingCoefficients build_projection_coefficients_serial(const Grid& g,
                                                          const SpaceTimeField& q_tilde,
                                                          const RobustParams& params,
                                                          const AdmissibleBox& box) {
  return build_coefficients_impl(g, q_tilde, params, box, Parallelism::serial);
}

HierarchySolution solve_semilinear_hierarchy(const Grid& g, const Regions& regions,
                                             const Nonlinearity& f,
                                             const std::vector<double>& y0,
                                             const SpaceTimeField& yd,
                                             const RobustParams& params, double epsilon,
                                             const HierarchyOpts& opts) {
  check_common_inputs(g, y0, yd, params, epsilon, opts, "semilinear hierarchy");
  check_nonlinearity(f);

  HierarchySolution out;
  out.epsilon = epsilon;
  FixedPointReport& rep = out.report;

  SpaceTimeField z = zero_field(g);
  LeaderSolution last;
  LinearizedPotentials prev;
  bool have_last = false;

  for (int k = 0; k <= opts.max_outer; ++k) {
    LinearizedPotentials pot = build_linearized_potentials(g, f, z, opts.n_quad);
    if (k > 0 && pot.a.data == prev.a.data && pot.c.data == prev.c.data) {
      // The frozen potentials repeat bitwise, so the deterministic inner
      // solve would reproduce z exactly: the map is stationary.
      rep.successive_diffs.push_back(0.0);
      rep.converged = true;
      rep.stop_reason = "frozen potentials stationary";
      break;
    }
    if (k == opts.max_outer) break;

    const double sup = std::max(pot.a.sup_norm(), pot.c.sup_norm());
    if (sup > f.lipschitz_bound * (1.0 + 1e-12) + 1e-300) {
      throw SpecError("semilinear hierarchy: frozen potential sup-norm " + std::to_string(sup) +
                      " exceeds lipschitz_bound " + std::to_string(f.lipschitz_bound) +
                      " at outer iteration " + std::to_string(k));
    }
    rep.per_iteration_potential_sups.push_back(sup);

    LeaderSolution sol;
    try {
      sol = minimize_F_eps(g, regions, pot.a, pot.c, y0, yd, params, epsilon, opts.leader);
    } catch (const SolverError& e) {
      throw SolverError("semilinear hierarchy: inner solve failed at outer iteration " +
                        std::to_string(k) + ": " + e.what());
    }
    if (!sol.converged) {
      throw SolverError("semilinear hierarchy: inner leader solve did not converge at outer "
                        "iteration " +
                        std::to_string(k));
    }
    ++rep.outer_iterations;
    rep.per_iteration_h_norms.push_back(sol.h_norm);

    const double diff = nodal_Q_distance(g, sol.y, z);
    rep.successive_diffs.push_back(diff);
    z = sol.y;
    last = std::move(sol);
    have_last = true;
    prev = std::move(pot);

    if (diff <= opts.outer_tol) {
      rep.converged = true;
      rep.stop_reason = "iterate distance within tolerance";
      break;
    }
    if (window_non_decreasing(rep.successive_diffs, opts.divergence_window)) {
      rep.diverged = true;
      rep.stop_reason = "iterate distances non-decreasing over the divergence window";
      break;
    }
  }
  if (!rep.converged && rep.stop_reason.empty()) {
    rep.stop_reason = "max outer iterations reached";
  }
  if (!have_last) {
    throw SolverError("semilinear hierarchy: no inner solve performed");
  }

  out.h = last.h;
  out.phiT = last.phiT;

  // Verify against the genuinely semilinear dynamics with the converged h.
  const OptimalitySolution ver = solve_optimality_system_semilinear(
      g, regions, f, out.h, y0, yd, params, opts.leader.sweep, opts.picard);
  if (ver.report.converged) {
    out.y = ver.y;
    out.q = ver.q;
    out.verified_terminal_norm = norm_Omega(g, slice(out.y, g.n_steps));
  } else if (rep.converged) {
    throw SolverError("semilinear hierarchy: verification solve did not converge");
  } else {
    out.y = last.y;
    out.q = last.q;
    out.verified_terminal_norm = std::numeric_limits<double>::quiet_NaN();
    rep.stop_reason += "; verification solve did not converge";
  }
  return out;
}

ProjectedSolution solve_projected_hierarchy(const Grid& g, const Regions& regions,
                                            const Potential& a, const std::vector<double>& y0,
                                            const SpaceTimeField& yd, const RobustParams& params,
                                            const AdmissibleBox& box, double epsilon,
                                            const HierarchyOpts& opts) {
  check_common_inputs(g, y0, yd, params, epsilon, opts, "projected hierarchy");
  box.validate();
  if (a.values.nt != g.n_time_nodes() || a.values.nx != g.n_interior()) {
    throw SpecError("projected hierarchy: potential shape does not match the grid");
  }
  const MidField am = mid_average(g, a.values);

  ProjectedSolution out;
  out.epsilon = epsilon;
  FixedPointReport& rep = out.report;

  SpaceTimeField q_tilde = zero_field(g);
  LeaderSolution last;
  CouplingCoefficients prev;
  bool have_last = false;

  for (int k = 0; k <= opts.max_outer; ++k) {
    CouplingCoefficients cf = build_projection_coefficients(g, q_tilde, params, box);
    if (k > 0 && cf.sigma.data == prev.sigma.data && cf.rho.data == prev.rho.data) {
      rep.successive_diffs.push_back(0.0);
      rep.converged = true;
      rep.stop_reason = "frozen coefficients stationary";
      break;
    }
    if (k == opts.max_outer) break;

    LeaderSolution sol;
    try {
      sol = minimize_F_eps(g, regions, am, am, y0, yd, params, epsilon, opts.leader, &cf);
    } catch (const SolverError& e) {
      throw SolverError("projected hierarchy: inner solve failed at outer iteration " +
                        std::to_string(k) + ": " + e.what());
    }
    if (!sol.converged) {
      throw SolverError("projected hierarchy: inner leader solve did not converge at outer "
                        "iteration " +
                        std::to_string(k));
    }
    ++rep.outer_iterations;
    rep.per_iteration_h_norms.push_back(sol.h_norm);

    const double diff = nodal_Q_distance(g, sol.q, q_tilde);
    rep.successive_diffs.push_back(diff);
    q_tilde = sol.q;
    last = std::move(sol);
    have_last = true;
    prev = std::move(cf);

    if (diff <= opts.outer_tol) {
      rep.converged = true;
      rep.stop_reason = "adjoint distance within tolerance";
      break;
    }
    if (window_non_decreasing(rep.successive_diffs, opts.divergence_window)) {
      rep.diverged = true;
      rep.stop_reason = "adjoint distances non-decreasing over the divergence window";
      break;
    }
  }
  if (!rep.converged && rep.stop_reason.empty()) {
    rep.stop_reason = "max outer iterations reached";
  }
  if (!have_last) {
    throw SolverError("projected hierarchy: no inner solve performed");
  }

  out.h = last.h;
  out.phiT = last.phiT;
  out.coefficients = build_projection_coefficients(g, q_tilde, params, box);

  if (rep.converged) {
    // Verify against the true clamped dynamics; the projected saddle solver
    // audits both variational inequalities internally.
    const SaddleSolution ver =
        solve_saddle_projected(g, regions, a, out.h, y0, yd, params, box, opts.projected);
    if (!ver.converged) {
      throw SolverError("projected hierarchy: verification solve did not converge");
    }
    out.y = ver.y;
    out.q = ver.q;
    out.v = ver.v_bar;
    out.psi = ver.psi_bar;
    out.vi_worst_v = ver.vi_worst_v;
    out.vi_worst_psi = ver.vi_worst_psi;
    out.verified_terminal_norm = norm_Omega(g, slice(out.y, g.n_steps));
  } else {
    // Best effort for diagnostics: the last frozen-coefficient state and the
    // clamps of its adjoint.
    out.v = clamp_of_adjoint(g, last.q, -1.0 / (params.ell * params.ell), box.e1_lo, box.e1_hi,
                             &regions.O);
    out.psi = clamp_of_adjoint(g, last.q, 1.0 / (params.gamma * params.gamma), box.e2_lo,
                               box.e2_hi, nullptr);
    out.y = last.y;
    out.q = last.q;
    out.verified_terminal_norm = std::numeric_limits<double>::quiet_NaN();
    out.vi_worst_v = std::numeric_limits<double>::quiet_NaN();
    out.vi_worst_psi = std::numeric_limits<double>::quiet_NaN();
  }
  return out;
}

}  // namespace heatctrl
