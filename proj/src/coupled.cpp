#include "heatctrl/coupled.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include <Eigen/Dense>

#include "heatctrl/common.hpp"

namespace heatctrl {

void RobustParams::validate() const {
  if (!(ell > 0.0) || !std::isfinite(ell)) {
    throw SpecError("RobustParams: ell must be a positive finite real");
  }
  if (!(gamma > 0.0) || !std::isfinite(gamma)) {
    throw SpecError("RobustParams: gamma must be a positive finite real");
  }
}

namespace {

void validate_sweep_opts(const SweepOpts& opts) {
  if (!(opts.tol > 0.0)) throw SpecError("SweepOpts: tol must be positive");
  if (opts.max_sweeps < 1) throw SpecError("SweepOpts: max_sweeps must be >= 1");
  if (!(opts.relaxation > 0.0) || opts.relaxation > 1.0) {
    throw SpecError("SweepOpts: relaxation must lie in (0, 1]");
  }
}

void validate_mid_shape(const Grid& g, const MidField& f, const char* what) {
  if (f.nt != g.n_steps || f.nx != g.n_interior()) {
    throw SpecError(std::string(what) + ": midpoint field shape does not match the grid");
  }
}

void validate_nodal_shape(const Grid& g, const SpaceTimeField& f, const char* what) {
  if (f.nt != g.n_time_nodes() || f.nx != g.n_interior()) {
    throw SpecError(std::string(what) + ": field shape does not match the grid");
  }
}

void validate_coeffs(const Grid& g, const CouplingCoefficients* coeffs) {
  if (!coeffs) return;
  validate_mid_shape(g, coeffs->sigma, "CouplingCoefficients.sigma");
  validate_mid_shape(g, coeffs->rho, "CouplingCoefficients.rho");
}

// Midpoint average of a nodal field restricted to a region (zero outside).
MidField masked_mid(const Grid& g, const SpaceTimeField& f, const RegionMask& mask) {
  MidField m(g.n_steps, g.n_interior());
  for (int n = 0; n < g.n_steps; ++n) {
    const double* a = f.row(n);
    const double* b = f.row(n + 1);
    double* out = m.row(n);
    for (int i = 0; i < g.n_interior(); ++i) {
      out[i] = mask.contains(i) ? 0.5 * (a[i] + b[i]) : 0.0;
    }
  }
  return m;
}

// Coupling source -(σ/ℓ²) d̄ χ_O + (ρ/γ²) d̄ (+ base), sampled at midpoints.
// The same formula drives both the y-equation (d = q) and the θ-equation
// (d = φ); keeping one code path is what makes the two systems transposes.
MidField coupling_source(const Grid& g, const Regions& regions, const RobustParams& params,
                         const CouplingCoefficients* coeffs, const SpaceTimeField& driver,
                         const MidField* base) {
  const double inv_l2 = 1.0 / (params.ell * params.ell);
  const double inv_g2 = 1.0 / (params.gamma * params.gamma);
  MidField src(g.n_steps, g.n_interior());
  for (int n = 0; n < g.n_steps; ++n) {
    const double* da = driver.row(n);
    const double* db = driver.row(n + 1);
    double* out = src.row(n);
    for (int i = 0; i < g.n_interior(); ++i) {
      const double dm = 0.5 * (da[i] + db[i]);
      const double sig = coeffs ? coeffs->sigma.at(n, i) : 1.0;
      const double rho = coeffs ? coeffs->rho.at(n, i) : 1.0;
      double v = inv_g2 * rho * dm;
      if (regions.O.contains(i)) v -= inv_l2 * sig * dm;
      if (base) v += base->at(n, i);
      out[i] = v;
    }
  }
  return src;
}

// (ȳ - ȳd) χ_{Od}: source of the backward equation.
MidField tracking_source(const Grid& g, const SpaceTimeField& y, const MidField& yd_masked,
                         const RegionMask& Od) {
  MidField src(g.n_steps, g.n_interior());
  for (int n = 0; n < g.n_steps; ++n) {
    const double* a = y.row(n);
    const double* b = y.row(n + 1);
    double* out = src.row(n);
    for (int i = 0; i < g.n_interior(); ++i) {
      out[i] = Od.contains(i) ? (0.5 * (a[i] + b[i]) - yd_masked.at(n, i)) : 0.0;
    }
  }
  return src;
}

double field_sup_diff(const SpaceTimeField& a, const SpaceTimeField& b) {
  double s = 0.0;
  for (std::size_t k = 0; k < a.data.size(); ++k) {
    s = std::max(s, std::abs(a.data[k] - b.data[k]));
  }
  return s;
}

void relax_update(SpaceTimeField& x, const SpaceTimeField& target, double theta) {
  for (std::size_t k = 0; k < x.data.size(); ++k) {
    x.data[k] += theta * (target.data[k] - x.data[k]);
  }
}

}  // namespace

OptimalitySolution solve_optimality_system(const Grid& g, const Regions& regions,
                                           const MidField& a, const MidField& c,
                                           const SpaceTimeField& h, const std::vector<double>& y0,
                                           const SpaceTimeField& yd, const RobustParams& params,
                                           const SweepOpts& opts,
                                           const CouplingCoefficients* coeffs) {
  params.validate();
  validate_sweep_opts(opts);
  validate_mid_shape(g, a, "solve_optimality_system: a");
  validate_mid_shape(g, c, "solve_optimality_system: c");
  validate_nodal_shape(g, h, "solve_optimality_system: h");
  validate_nodal_shape(g, yd, "solve_optimality_system: yd");
  validate_coeffs(g, coeffs);

  const MidField h_m = masked_mid(g, h, regions.omega);
  const MidField yd_m = masked_mid(g, yd, regions.O_d);
  const std::vector<double> qT(static_cast<std::size_t>(g.n_interior()), 0.0);

  SpaceTimeField q = zero_field(g);
  SpaceTimeField y_prev = zero_field(g);
  OptimalitySolution out;
  double theta = opts.relaxation;
  double prev_diff = std::numeric_limits<double>::infinity();

  for (int k = 1; k <= opts.max_sweeps; ++k) {
    const MidField src_y = coupling_source(g, regions, params, coeffs, q, &h_m);
    SpaceTimeField y = cn_forward(g, a, src_y, y0);
    SpaceTimeField q_raw = cn_backward(g, c, tracking_source(g, y, yd_m, regions.O_d), qT);

    const double diff = std::max(field_sup_diff(q_raw, q), field_sup_diff(y, y_prev));
    out.report.iterations = k;
    out.report.final_residual = diff;
    out.report.residual_history.push_back(diff);
    if (k > 1 && diff > prev_diff) theta = std::max(0.5 * theta, 0.25);
    out.report.relaxation = theta;
    if (diff <= opts.tol) {
      out.report.converged = true;
      q = std::move(q_raw);
      break;
    }
    relax_update(q, q_raw, theta);
    y_prev = std::move(y);
    prev_diff = diff;
  }

  // Final consistency pass: the returned y satisfies its equation exactly for
  // the returned q; the q-equation carries the reported residual.
  const MidField src_y = coupling_source(g, regions, params, coeffs, q, &h_m);
  out.y = cn_forward(g, a, src_y, y0);
  out.q = std::move(q);
  return out;
}

OptimalitySolution solve_optimality_system(const Grid& g, const Regions& regions,
                                           const Potential& a, const Potential& c,
                                           const SpaceTimeField& h, const std::vector<double>& y0,
                                           const SpaceTimeField& yd, const RobustParams& params,
                                           const SweepOpts& opts,
                                           const CouplingCoefficients* coeffs) {
  return solve_optimality_system(g, regions, mid_average(g, a.values), mid_average(g, c.values),
                                 h, y0, yd, params, opts, coeffs);
}

AdjointPairSolution solve_adjoint_pair(const Grid& g, const Regions& regions, const MidField& a,
                                       const MidField& c, const std::vector<double>& phiT,
                                       const RobustParams& params, const SweepOpts& opts,
                                       const CouplingCoefficients* coeffs) {
  params.validate();
  validate_sweep_opts(opts);
  validate_mid_shape(g, a, "solve_adjoint_pair: a");
  validate_mid_shape(g, c, "solve_adjoint_pair: c");
  if (static_cast<int>(phiT.size()) != g.n_interior()) {
    throw SpecError("solve_adjoint_pair: phiT length does not match the grid");
  }
  validate_coeffs(g, coeffs);

  const std::vector<double> zeros(static_cast<std::size_t>(g.n_interior()), 0.0);
  SpaceTimeField theta = zero_field(g);
  SpaceTimeField phi_prev = zero_field(g);
  AdjointPairSolution out;
  double relax = opts.relaxation;
  double prev_diff = std::numeric_limits<double>::infinity();

  for (int k = 1; k <= opts.max_sweeps; ++k) {
    SpaceTimeField phi = cn_backward(g, a, masked_mid(g, theta, regions.O_d), phiT);
    SpaceTimeField theta_raw =
        cn_forward(g, c, coupling_source(g, regions, params, coeffs, phi, nullptr), zeros);

    const double diff = std::max(field_sup_diff(theta_raw, theta), field_sup_diff(phi, phi_prev));
    out.report.iterations = k;
    out.report.final_residual = diff;
    out.report.residual_history.push_back(diff);
    if (k > 1 && diff > prev_diff) relax = std::max(0.5 * relax, 0.25);
    out.report.relaxation = relax;
    if (diff <= opts.tol) {
      out.report.converged = true;
      theta = std::move(theta_raw);
      break;
    }
    relax_update(theta, theta_raw, relax);
    phi_prev = std::move(phi);
    prev_diff = diff;
  }

  out.phi = cn_backward(g, a, masked_mid(g, theta, regions.O_d), phiT);
  out.theta = std::move(theta);
  return out;
}

AdjointPairSolution solve_adjoint_pair(const Grid& g, const Regions& regions, const Potential& a,
                                       const Potential& c, const std::vector<double>& phiT,
                                       const RobustParams& params, const SweepOpts& opts,
                                       const CouplingCoefficients* coeffs) {
  return solve_adjoint_pair(g, regions, mid_average(g, a.values), mid_average(g, c.values), phiT,
                            params, opts, coeffs);
}

OptimalitySolution solve_optimality_system_semilinear(
    const Grid& g, const Regions& regions, const Nonlinearity& f, const SpaceTimeField& h,
    const std::vector<double>& y0, const SpaceTimeField& yd, const RobustParams& params,
    const SweepOpts& opts, const PicardOpts& picard) {
  params.validate();
  validate_sweep_opts(opts);
  validate_nodal_shape(g, h, "solve_optimality_system_semilinear: h");
  validate_nodal_shape(g, yd, "solve_optimality_system_semilinear: yd");

  const double inv_l2 = 1.0 / (params.ell * params.ell);
  const double inv_g2 = 1.0 / (params.gamma * params.gamma);
  const MidField yd_m = masked_mid(g, yd, regions.O_d);
  const std::vector<double> qT(static_cast<std::size_t>(g.n_interior()), 0.0);

  // Nodal source hχ_ω - q/ℓ² χ_O + q/γ²; its midpoint average inside the
  // semilinear solver reproduces the linear solver's coupling exactly.
  const auto nodal_source = [&](const SpaceTimeField& q) {
    SpaceTimeField s(g.n_time_nodes(), g.n_interior());
    for (int n = 0; n <= g.n_steps; ++n) {
      for (int i = 0; i < g.n_interior(); ++i) {
        double v = inv_g2 * q.at(n, i);
        if (regions.O.contains(i)) v -= inv_l2 * q.at(n, i);
        if (regions.omega.contains(i)) v += h.at(n, i);
        s.at(n, i) = v;
      }
    }
    return s;
  };

  SpaceTimeField q = zero_field(g);
  SpaceTimeField y_prev = zero_field(g);
  OptimalitySolution out;
  double relax = opts.relaxation;
  double prev_diff = std::numeric_limits<double>::infinity();

  for (int k = 1; k <= opts.max_sweeps; ++k) {
    SpaceTimeField y = solve_forward_semilinear(g, f, nodal_source(q), y0, picard).y;
    const MidField cpot = linearization_potential(g, f, y);
    SpaceTimeField q_raw = cn_backward(g, cpot, tracking_source(g, y, yd_m, regions.O_d), qT);

    const double diff = std::max(field_sup_diff(q_raw, q), field_sup_diff(y, y_prev));
    out.report.iterations = k;
    out.report.final_residual = diff;
    out.report.residual_history.push_back(diff);
    if (k > 1 && diff > prev_diff) relax = std::max(0.5 * relax, 0.25);
    out.report.relaxation = relax;
    if (diff <= opts.tol) {
      out.report.converged = true;
      q = std::move(q_raw);
      break;
    }
    relax_update(q, q_raw, relax);
    y_prev = std::move(y);
    prev_diff = diff;
  }

  out.y = solve_forward_semilinear(g, f, nodal_source(q), y0, picard).y;
  out.q = std::move(q);
  return out;
}

namespace {

constexpr double kRcondAlert = 1e-12;

// Shared pieces of the two monolithic assemblers. The tridiagonal operator A
// acts as (A u)_i = (2u_i - u_{i-1} - u_{i+1})/dx².
struct Assembler {
  const Grid& g;
  Eigen::MatrixXd M;
  Eigen::VectorXd b;

  Assembler(const Grid& grid, int dim)
      : g(grid), M(Eigen::MatrixXd::Zero(dim, dim)), b(Eigen::VectorXd::Zero(dim)) {}

  // Adds coef * ((I*idt_sign/dt + A/2 + diag(pot)/2) u)_i to row, where u is
  // either an unknown block starting at column `col` or known data `known`.
  void add_evolution(int row_base, int col, const double* known, double idt_sign,
                     const double* pot) {
    const int m = g.n_interior();
    const double idt = idt_sign / g.dt;
    const double lap = 1.0 / (g.dx * g.dx);
    for (int i = 0; i < m; ++i) {
      const int row = row_base + i;
      const double diag = idt + lap + 0.5 * pot[i];
      if (col >= 0) {
        M(row, col + i) += diag;
        if (i > 0) M(row, col + i - 1) += -0.5 * lap;
        if (i + 1 < m) M(row, col + i + 1) += -0.5 * lap;
      } else if (known) {
        double v = diag * known[i];
        if (i > 0) v += -0.5 * lap * known[i - 1];
        if (i + 1 < m) v += -0.5 * lap * known[i + 1];
        b(row) -= v;
      }
    }
  }

  // Adds weight_i * (u^n + u^{n+1})_i / 2 to row i of the block row, where the
  // two levels are unknown columns or known data.
  void add_coupling(int row_base, int col_a, const double* known_a, int col_b,
                    const double* known_b, const std::vector<double>& weight) {
    const int m = g.n_interior();
    for (int i = 0; i < m; ++i) {
      const int row = row_base + i;
      const double w = 0.5 * weight[static_cast<std::size_t>(i)];
      if (w == 0.0) continue;
      if (col_a >= 0) {
        M(row, col_a + i) += w;
      } else if (known_a) {
        b(row) -= w * known_a[i];
      }
      if (col_b >= 0) {
        M(row, col_b + i) += w;
      } else if (known_b) {
        b(row) -= w * known_b[i];
      }
    }
  }
};

// Blocks 0..N-1 of the solution vector hold the first field's unknown time
// levels starting at `first_level0`; its remaining boundary level carries the
// known data. Blocks N..2N-1 hold the second field's unknown levels starting
// at `second_level0`; its boundary level is the known zero.
MonolithicSolution finish_solve(const Grid& g, Assembler& asmb, int first_level0, int known_level,
                                const std::vector<double>& first_known, int second_level0) {
  Eigen::PartialPivLU<Eigen::MatrixXd> lu(asmb.M);
  MonolithicSolution sol;
  sol.rcond = lu.rcond();
  sol.conditioning_warning = !(sol.rcond > kRcondAlert);
  const Eigen::VectorXd x = lu.solve(asmb.b);

  const int m = g.n_interior();
  const int N = g.n_steps;
  sol.first = SpaceTimeField(g.n_time_nodes(), m);
  sol.second = SpaceTimeField(g.n_time_nodes(), m);
  for (int blk = 0; blk < N; ++blk) {
    for (int i = 0; i < m; ++i) {
      sol.first.at(first_level0 + blk, i) = x(blk * m + i);
      sol.second.at(second_level0 + blk, i) = x((N + blk) * m + i);
    }
  }
  for (int i = 0; i < m; ++i) {
    sol.first.at(known_level, i) = first_known[static_cast<std::size_t>(i)];
  }
  return sol;
}

}  // namespace

MonolithicSolution solve_monolithic(const Grid& g, const Regions& regions, const MidField& a,
                                    const MidField& c, const SpaceTimeField& h,
                                    const std::vector<double>& y0, const SpaceTimeField& yd,
                                    const RobustParams& params,
                                    const CouplingCoefficients* coeffs, int unknown_cap) {
  params.validate();
  validate_mid_shape(g, a, "solve_monolithic: a");
  validate_mid_shape(g, c, "solve_monolithic: c");
  validate_nodal_shape(g, h, "solve_monolithic: h");
  validate_nodal_shape(g, yd, "solve_monolithic: yd");
  validate_coeffs(g, coeffs);

  const int m = g.n_interior();
  const int N = g.n_steps;
  const int dim = 2 * N * m;
  if (dim > unknown_cap) {
    throw SpecError("solve_monolithic: " + std::to_string(dim) +
                    " unknowns exceed the cap of " + std::to_string(unknown_cap));
  }

  const double inv_l2 = 1.0 / (params.ell * params.ell);
  const double inv_g2 = 1.0 / (params.gamma * params.gamma);
  const MidField h_m = masked_mid(g, h, regions.omega);
  const MidField yd_m = masked_mid(g, yd, regions.O_d);

  // Unknowns: blocks 0..N-1 hold y^1..y^N, blocks N..2N-1 hold q^0..q^{N-1}.
  const auto col_y = [&](int level) { return (level >= 1) ? (level - 1) * m : -1; };
  const auto col_q = [&](int level) { return (level <= N - 1) ? (N + level) * m : -1; };

  Assembler asmb(g, dim);
  std::vector<double> w(static_cast<std::size_t>(m));
  for (int n = 0; n < N; ++n) {
    const int row_y = n * m;
    // (y^{n+1} - y^n)/dt + (A + a)(ȳ) + (σ/ℓ² χ_O - ρ/γ²) q̄ = h̄ χ_ω
    asmb.add_evolution(row_y, col_y(n + 1), nullptr, 1.0, a.row(n));
    asmb.add_evolution(row_y, col_y(n), y0.data(), -1.0, a.row(n));
    for (int i = 0; i < m; ++i) {
      const double sig = coeffs ? coeffs->sigma.at(n, i) : 1.0;
      const double rho = coeffs ? coeffs->rho.at(n, i) : 1.0;
      w[static_cast<std::size_t>(i)] =
          (regions.O.contains(i) ? inv_l2 * sig : 0.0) - inv_g2 * rho;
    }
    asmb.add_coupling(row_y, col_q(n), nullptr, col_q(n + 1), nullptr, w);
    for (int i = 0; i < m; ++i) asmb.b(row_y + i) += h_m.at(n, i);

    const int row_q = (N + n) * m;
    // (q^n - q^{n+1})/dt + (A + c)(q̄) - χ_{Od} ȳ = -χ_{Od} ȳd
    asmb.add_evolution(row_q, col_q(n), nullptr, 1.0, c.row(n));
    asmb.add_evolution(row_q, col_q(n + 1), nullptr, -1.0, c.row(n));
    for (int i = 0; i < m; ++i) {
      w[static_cast<std::size_t>(i)] = regions.O_d.contains(i) ? -1.0 : 0.0;
    }
    asmb.add_coupling(row_q, col_y(n), y0.data(), col_y(n + 1), nullptr, w);
    for (int i = 0; i < m; ++i) {
      if (regions.O_d.contains(i)) asmb.b(row_q + i) -= yd_m.at(n, i);
    }
  }

  return finish_solve(g, asmb, 1, 0, y0, 0);
}

MonolithicSolution solve_monolithic(const Grid& g, const Regions& regions, const MidField& a,
                                    const MidField& c, const std::vector<double>& phiT,
                                    const RobustParams& params,
                                    const CouplingCoefficients* coeffs, int unknown_cap) {
  params.validate();
  validate_mid_shape(g, a, "solve_monolithic: a");
  validate_mid_shape(g, c, "solve_monolithic: c");
  if (static_cast<int>(phiT.size()) != g.n_interior()) {
    throw SpecError("solve_monolithic: phiT length does not match the grid");
  }
  validate_coeffs(g, coeffs);

  const int m = g.n_interior();
  const int N = g.n_steps;
  const int dim = 2 * N * m;
  if (dim > unknown_cap) {
    throw SpecError("solve_monolithic: " + std::to_string(dim) +
                    " unknowns exceed the cap of " + std::to_string(unknown_cap));
  }

  const double inv_l2 = 1.0 / (params.ell * params.ell);
  const double inv_g2 = 1.0 / (params.gamma * params.gamma);

  // Unknowns: blocks 0..N-1 hold φ^0..φ^{N-1}, blocks N..2N-1 hold θ^1..θ^N.
  const auto col_phi = [&](int level) { return (level <= N - 1) ? level * m : -1; };
  const auto col_theta = [&](int level) { return (level >= 1) ? (N + level - 1) * m : -1; };

  Assembler asmb(g, dim);
  std::vector<double> w(static_cast<std::size_t>(m));
  for (int n = 0; n < N; ++n) {
    const int row_phi = n * m;
    // (φ^n - φ^{n+1})/dt + (A + a)(φ̄) - χ_{Od} θ̄ = 0
    asmb.add_evolution(row_phi, col_phi(n), nullptr, 1.0, a.row(n));
    asmb.add_evolution(row_phi, col_phi(n + 1), phiT.data(), -1.0, a.row(n));
    for (int i = 0; i < m; ++i) {
      w[static_cast<std::size_t>(i)] = regions.O_d.contains(i) ? -1.0 : 0.0;
    }
    asmb.add_coupling(row_phi, col_theta(n), nullptr, col_theta(n + 1), nullptr, w);

    const int row_theta = (N + n) * m;
    // (θ^{n+1} - θ^n)/dt + (A + c)(θ̄) + (σ/ℓ² χ_O - ρ/γ²) φ̄ = 0
    asmb.add_evolution(row_theta, col_theta(n + 1), nullptr, 1.0, c.row(n));
    asmb.add_evolution(row_theta, col_theta(n), nullptr, -1.0, c.row(n));
    for (int i = 0; i < m; ++i) {
      const double sig = coeffs ? coeffs->sigma.at(n, i) : 1.0;
      const double rho = coeffs ? coeffs->rho.at(n, i) : 1.0;
      w[static_cast<std::size_t>(i)] =
          (regions.O.contains(i) ? inv_l2 * sig : 0.0) - inv_g2 * rho;
    }
    asmb.add_coupling(row_theta, col_phi(n), nullptr, col_phi(n + 1), phiT.data(), w);
  }

  return finish_solve(g, asmb, 0, N, phiT, 1);
}

}  // namespace heatctrl
