#include "heatctrl/follower.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <sstream>

#include "heatctrl/common.hpp"

namespace heatctrl {

namespace {

void check_field(const Grid& g, const SpaceTimeField& f, const char* name) {
  const std::size_t want =
      static_cast<std::size_t>(g.n_time_nodes()) * static_cast<std::size_t>(g.n_interior());
  if (f.data.size() != want) {
    std::ostringstream os;
    os << "follower: field '" << name << "' does not match the grid (got " << f.data.size()
       << " values, expected " << want << ")";
    throw SpecError(os.str());
  }
}

void check_vec(const Grid& g, const std::vector<double>& a, const char* name) {
  if (a.size() != static_cast<std::size_t>(g.n_interior())) {
    std::ostringstream os;
    os << "follower: vector '" << name << "' does not match the grid (got " << a.size()
       << " values, expected " << g.n_interior() << ")";
    throw SpecError(os.str());
  }
}

SpaceTimeField masked_field(const Grid& g, const SpaceTimeField& f, const RegionMask& mask) {
  SpaceTimeField out = zero_field(g);
  for (int n = 0; n <= g.n_steps; ++n) {
    for (int i = 0; i < g.n_interior(); ++i) {
      if (mask.contains(i)) out.at(n, i) = f.at(n, i);
    }
  }
  return out;
}

SpaceTimeField field_diff(const SpaceTimeField& a, const SpaceTimeField& b) {
  SpaceTimeField out = a;
  for (std::size_t k = 0; k < out.data.size(); ++k) out.data[k] -= b.data[k];
  return out;
}

// Gradient fields of Jr at (v, psi) given the adjoint q.
void gradient_fields(const Grid& g, const Regions& r, const RobustParams& params,
                     const SpaceTimeField& q, const SpaceTimeField& v,
                     const SpaceTimeField& psi, SpaceTimeField& grad_v,
                     SpaceTimeField& grad_psi) {
  const double l2 = params.ell * params.ell;
  const double g2 = params.gamma * params.gamma;
  grad_v = zero_field(g);
  grad_psi = zero_field(g);
  for (int n = 0; n <= g.n_steps; ++n) {
    for (int i = 0; i < g.n_interior(); ++i) {
      if (r.O.contains(i)) grad_v.at(n, i) = q.at(n, i) + l2 * v.at(n, i);
      grad_psi.at(n, i) = q.at(n, i) - g2 * psi.at(n, i);
    }
  }
}

double J_at(const Grid& g, const Regions& r, const Dynamics& dyn, const SpaceTimeField& h,
            const std::vector<double>& y0, const SpaceTimeField& yd,
            const RobustParams& params, const SpaceTimeField& v, const SpaceTimeField& psi) {
  const SpaceTimeField y = solve_state(g, r, dyn, h, v, psi, y0);
  return eval_Jr(g, r, y, v, psi, yd, params);
}

struct FollowerEval {
  SpaceTimeField y;
  SpaceTimeField q;
  SpaceTimeField grad_v;
  SpaceTimeField grad_psi;
  double J = 0.0;
  double stat_v = 0.0;
  double stat_psi = 0.0;
};

FollowerEval evaluate_point(const Grid& g, const Regions& r, const Dynamics& dyn,
                            const SpaceTimeField& h, const std::vector<double>& y0,
                            const SpaceTimeField& yd, const RobustParams& params,
                            const SpaceTimeField& v, const SpaceTimeField& psi) {
  FollowerEval e;
  e.y = solve_state(g, r, dyn, h, v, psi, y0);
  e.q = solve_adjoint(g, r, dyn, e.y, yd);
  gradient_fields(g, r, params, e.q, v, psi, e.grad_v, e.grad_psi);
  e.J = eval_Jr(g, r, e.y, v, psi, yd, params);
  e.stat_v = norm_Q(g, e.grad_v);
  e.stat_psi = norm_Q(g, e.grad_psi);
  return e;
}

// Curvature of the tracking term 1/2||y - yd||^2_{O_d} along a v-direction:
// <(y-yd) 1_{O_d}, y''> + ||y' 1_{O_d}||^2 with y', y'' the linearizations of
// the state map (y'' = 0 for linear dynamics).
double tracking_curvature_v(const Grid& g, const Regions& r, const Dynamics& dyn,
                            const SpaceTimeField& y_base, const SpaceTimeField& yd,
                            const SpaceTimeField& dir) {
  if (dyn.is_linear()) {
    const SpaceTimeField dv = masked_field(g, dir, r.O);
    const SpaceTimeField yp = solve_forward_linear(
        g, dyn.potential(), dv,
        std::vector<double>(static_cast<std::size_t>(g.n_interior()), 0.0));
    return inner_product_Q(g, yp, yp, &r.O_d);
  }
  const Nonlinearity& f = dyn.nonlinearity();
  const SpaceTimeField zero = zero_field(g);
  const SpaceTimeField yp = solve_linearized_first(g, f, y_base, dir, zero, r.O);
  const SpaceTimeField ypp = solve_linearized_second(g, f, y_base, yp, yp);
  const SpaceTimeField d = field_diff(y_base, yd);
  return inner_product_Q(g, d, ypp, &r.O_d) + inner_product_Q(g, yp, yp, &r.O_d);
}

}  // namespace

const Potential& Dynamics::potential() const {
  if (const Potential* p = std::get_if<Potential>(&model)) return *p;
  throw SpecError("dynamics: potential() requested from a semilinear model");
}

const Nonlinearity& Dynamics::nonlinearity() const {
  if (const Nonlinearity* f = std::get_if<Nonlinearity>(&model)) return *f;
  throw SpecError("dynamics: nonlinearity() requested from a linear model");
}

void AdmissibleBox::validate() const {
  const bool finite = std::isfinite(e1_lo) && std::isfinite(e1_hi) && std::isfinite(e2_lo) &&
                      std::isfinite(e2_hi);
  if (!finite || e1_lo > 0.0 || e1_hi < 0.0 || e2_lo > 0.0 || e2_hi < 0.0) {
    throw SpecError(
        "admissible box: each interval must be finite, nonempty, and contain 0");
  }
}

SpaceTimeField solve_state(const Grid& g, const Regions& r, const Dynamics& dyn,
                           const SpaceTimeField& h, const SpaceTimeField& v,
                           const SpaceTimeField& psi, const std::vector<double>& y0) {
  check_field(g, h, "h");
  check_field(g, v, "v");
  check_field(g, psi, "psi");
  check_vec(g, y0, "y0");
  SpaceTimeField src = zero_field(g);
  for (int n = 0; n <= g.n_steps; ++n) {
    for (int i = 0; i < g.n_interior(); ++i) {
      double s = psi.at(n, i);
      if (r.omega.contains(i)) s += h.at(n, i);
      if (r.O.contains(i)) s += v.at(n, i);
      src.at(n, i) = s;
    }
  }
  if (dyn.is_linear()) return solve_forward_linear(g, dyn.potential(), src, y0);
  return solve_forward_semilinear(g, dyn.nonlinearity(), src, y0).y;
}

SpaceTimeField solve_adjoint(const Grid& g, const Regions& r, const Dynamics& dyn,
                             const SpaceTimeField& y, const SpaceTimeField& yd) {
  check_field(g, y, "y");
  check_field(g, yd, "yd");
  SpaceTimeField track = zero_field(g);
  for (int n = 0; n <= g.n_steps; ++n) {
    for (int i = 0; i < g.n_interior(); ++i) {
      if (r.O_d.contains(i)) track.at(n, i) = y.at(n, i) - yd.at(n, i);
    }
  }
  const std::vector<double> qT(static_cast<std::size_t>(g.n_interior()), 0.0);
  if (dyn.is_linear()) return solve_backward_linear(g, dyn.potential(), track, qT);
  const MidField c = linearization_potential(g, dyn.nonlinearity(), y);
  return cn_backward(g, c, mid_average(g, track), qT);
}

double eval_Jr(const Grid& g, const Regions& r, const SpaceTimeField& y,
               const SpaceTimeField& v, const SpaceTimeField& psi,
               const SpaceTimeField& yd, const RobustParams& params) {
  params.validate();
  check_field(g, y, "y");
  check_field(g, v, "v");
  check_field(g, psi, "psi");
  check_field(g, yd, "yd");
  const SpaceTimeField d = field_diff(y, yd);
  const double tracking = inner_product_Q(g, d, d, &r.O_d);
  const double control = inner_product_Q(g, v, v, &r.O);
  const double perturbation = inner_product_Q(g, psi, psi);
  return 0.5 * tracking +
         0.5 * (params.ell * params.ell * control - params.gamma * params.gamma * perturbation);
}

JrGradient grad_Jr(const Grid& g, const Regions& r, const Dynamics& dyn,
                   const SpaceTimeField& v, const SpaceTimeField& psi,
                   const SpaceTimeField& h, const std::vector<double>& y0,
                   const SpaceTimeField& yd, const RobustParams& params) {
  params.validate();
  const SpaceTimeField y = solve_state(g, r, dyn, h, v, psi, y0);
  const SpaceTimeField q = solve_adjoint(g, r, dyn, y, yd);
  JrGradient out;
  gradient_fields(g, r, params, q, v, psi, out.grad_v, out.grad_psi);
  return out;
}

SaddleSolution solve_saddle_direct(const Grid& g, const Regions& r, const Dynamics& dyn,
                                   const SpaceTimeField& h, const std::vector<double>& y0,
                                   const SpaceTimeField& yd, const RobustParams& params,
                                   const SweepOpts& opts) {
  params.validate();
  check_field(g, h, "h");
  check_field(g, yd, "yd");
  check_vec(g, y0, "y0");

  OptimalitySolution os =
      dyn.is_linear()
          ? solve_optimality_system(g, r, dyn.potential(), dyn.potential(), h, y0, yd,
                                    params, opts)
          : solve_optimality_system_semilinear(g, r, dyn.nonlinearity(), h, y0, yd, params,
                                               opts);
  if (!os.report.converged) {
    std::ostringstream msg;
    msg << "saddle characterization: coupled sweep did not converge after "
        << os.report.iterations << " sweeps (residual " << os.report.final_residual << ")";
    throw SolverError(msg.str());
  }

  const double l2 = params.ell * params.ell;
  const double g2 = params.gamma * params.gamma;
  SaddleSolution sol;
  sol.v_bar = zero_field(g);
  sol.psi_bar = zero_field(g);
  for (int n = 0; n <= g.n_steps; ++n) {
    for (int i = 0; i < g.n_interior(); ++i) {
      if (r.O.contains(i)) sol.v_bar.at(n, i) = -os.q.at(n, i) / l2;
      sol.psi_bar.at(n, i) = os.q.at(n, i) / g2;
    }
  }
  sol.y = os.y;
  sol.q = os.q;

  const JrGradient gr = grad_Jr(g, r, dyn, sol.v_bar, sol.psi_bar, h, y0, yd, params);
  sol.stationarity_v = norm_Q(g, gr.grad_v);
  sol.stationarity_psi = norm_Q(g, gr.grad_psi);
  sol.J_value = eval_Jr(g, r, sol.y, sol.v_bar, sol.psi_bar, yd, params);
  sol.mode = SaddleMode::unconstrained;
  sol.converged = true;
  sol.iterations = os.report.iterations;
  return sol;
}

SaddleSolution solve_saddle_ascent_descent(const Grid& g, const Regions& r,
                                           const Dynamics& dyn, const SpaceTimeField& h,
                                           const std::vector<double>& y0,
                                           const SpaceTimeField& yd,
                                           const RobustParams& params,
                                           const AscentDescentOpts& opts) {
  params.validate();
  check_field(g, h, "h");
  check_field(g, yd, "yd");
  check_vec(g, y0, "y0");
  if (opts.max_iters < 1) throw SpecError("ascent-descent: max_iters must be at least 1");
  if (opts.tol <= 0.0) throw SpecError("ascent-descent: tol must be positive");

  const double l2 = params.ell * params.ell;
  const double g2 = params.gamma * params.gamma;

  SpaceTimeField v =
      opts.v_init ? masked_field(g, *opts.v_init, r.O) : zero_field(g);
  SpaceTimeField psi = opts.psi_init ? *opts.psi_init : zero_field(g);
  check_field(g, psi, "psi_init");

  double step_psi = opts.step_psi > 0.0 ? opts.step_psi : 1.0 / g2;
  double step_v = opts.step_v;
  if (step_v <= 0.0) {
    // Estimate the tracking curvature C1 at the starting point along a few
    // deterministic probe directions; the v-step 1/(ell^2 + C1) then matches
    // the largest curvature of the descent problem.
    const SpaceTimeField y_base = solve_state(g, r, dyn, h, v, psi, y0);
    std::mt19937_64 eng(0x6f11035e57e9ull);
    std::uniform_real_distribution<double> unit(-1.0, 1.0);
    double c1 = 0.0;
    for (int k = 0; k < 3; ++k) {
      SpaceTimeField dir = zero_field(g);
      for (auto& x : dir.data) x = unit(eng);
      const double denom = inner_product_Q(g, dir, dir, &r.O);
      if (denom <= 0.0) continue;
      const double track = tracking_curvature_v(g, r, dyn, y_base, yd, dir);
      c1 = std::max(c1, track / denom);
    }
    step_v = 1.0 / (l2 + c1);
  }

  struct Snapshot {
    SpaceTimeField v, psi;
    FollowerEval e;
    bool set = false;
  } best;
  double best_score = std::numeric_limits<double>::infinity();

  FollowerEval cur = evaluate_point(g, r, dyn, h, y0, yd, params, v, psi);
  bool converged = false;
  bool flagged = false;
  bool stalled = false;
  double prev_J = 0.0;
  double prev_psi_norm = 0.0;
  double streak_base = 0.0;
  int streak = 0;
  int it = 1;

  for (;; ++it) {
    const double score = std::max(cur.stat_v, cur.stat_psi);
    if (score < best_score) {
      best_score = score;
      best = Snapshot{v, psi, cur, true};
    }
    if (cur.stat_v <= opts.tol && cur.stat_psi <= opts.tol) {
      converged = true;
      break;
    }
    const double psi_norm = norm_Q(g, psi);
    if (it > 1 && cur.J > prev_J && psi_norm > prev_psi_norm) {
      if (streak == 0) streak_base = psi_norm;
      ++streak;
      if (streak >= 5 && psi_norm >= 10.0 * (streak_base + 1e-30)) {
        flagged = true;
        break;
      }
    } else {
      streak = 0;
    }
    prev_J = cur.J;
    prev_psi_norm = psi_norm;
    if (it >= opts.max_iters) break;

    const double slack = 1e-12 * (std::abs(cur.J) + 1.0);
    SpaceTimeField v_next;
    for (int bt = 0;; ++bt) {
      v_next = v;
      for (std::size_t k = 0; k < v_next.data.size(); ++k) {
        v_next.data[k] -= step_v * cur.grad_v.data[k];
      }
      if (J_at(g, r, dyn, h, y0, yd, params, v_next, psi) <= cur.J + slack) break;
      if (bt >= 40) {
        stalled = true;
        break;
      }
      step_v *= 0.5;
    }
    if (stalled) break;
    SpaceTimeField psi_next;
    for (int bt = 0;; ++bt) {
      psi_next = psi;
      for (std::size_t k = 0; k < psi_next.data.size(); ++k) {
        psi_next.data[k] += step_psi * cur.grad_psi.data[k];
      }
      if (J_at(g, r, dyn, h, y0, yd, params, v, psi_next) >= cur.J - slack) break;
      if (bt >= 40) {
        stalled = true;
        break;
      }
      step_psi *= 0.5;
    }
    if (stalled) break;

    v = std::move(v_next);
    psi = std::move(psi_next);
    cur = evaluate_point(g, r, dyn, h, y0, yd, params, v, psi);
  }

  if (!converged && best.set) {
    v = best.v;
    psi = best.psi;
    cur = best.e;
  }
  SaddleSolution sol;
  sol.v_bar = std::move(v);
  sol.psi_bar = std::move(psi);
  sol.y = std::move(cur.y);
  sol.q = std::move(cur.q);
  sol.J_value = cur.J;
  sol.stationarity_v = cur.stat_v;
  sol.stationarity_psi = cur.stat_psi;
  sol.mode = SaddleMode::unconstrained;
  sol.converged = converged;
  sol.iterations = it;
  sol.gamma_too_small = flagged;
  return sol;
}

double projection_coefficient_scalar(double z, double lo, double hi) {
  if (z >= lo && z <= hi) return 1.0;
  const double c = z < lo ? lo : hi;
  double rho = c / z;
  // Rounding can leave rho * z one ulp away from the clamp; snap to the
  // neighbor that reconstructs it exactly so rho(z) * z == clamp(z) holds.
  if (rho * z != c) {
    const double up = std::nextafter(rho, 1.0);
    const double dn = std::nextafter(rho, 0.0);
    if (up <= 1.0 && up * z == c) {
      rho = up;
    } else if (dn * z == c) {
      rho = dn;
    }
  }
  return rho;
}

SpaceTimeField projection_coefficient(const SpaceTimeField& z, double lo, double hi) {
  if (!(std::isfinite(lo) && std::isfinite(hi)) || lo > 0.0 || hi < 0.0) {
    throw SpecError("projection coefficient: the interval must contain 0");
  }
  SpaceTimeField out = z;
  for (auto& x : out.data) x = projection_coefficient_scalar(x, lo, hi);
  return out;
}

SaddleSolution solve_saddle_projected(const Grid& g, const Regions& r, const Potential& a,
                                      const SpaceTimeField& h, const std::vector<double>& y0,
                                      const SpaceTimeField& yd, const RobustParams& params,
                                      const AdmissibleBox& box, const ProjectedOpts& opts) {
  params.validate();
  box.validate();
  check_field(g, h, "h");
  check_field(g, yd, "yd");
  check_vec(g, y0, "y0");
  if (opts.max_iters < 1) throw SpecError("projected saddle: max_iters must be at least 1");
  if (opts.tol <= 0.0) throw SpecError("projected saddle: tol must be positive");
  if (opts.vi_probes < 2) throw SpecError("projected saddle: need at least the two vertex probes");

  const Dynamics dyn = Dynamics::linear(a);
  const double l2 = params.ell * params.ell;
  const double g2 = params.gamma * params.gamma;
  const double step_v = opts.step_v > 0.0 ? opts.step_v : 1.0 / l2;
  const double step_psi = opts.step_psi > 0.0 ? opts.step_psi : 1.0 / g2;

  SpaceTimeField v = zero_field(g);
  SpaceTimeField psi = zero_field(g);
  SpaceTimeField q;
  bool converged = false;
  int it = 1;
  for (; it <= opts.max_iters; ++it) {
    const SpaceTimeField y = solve_state(g, r, dyn, h, v, psi, y0);
    q = solve_adjoint(g, r, dyn, y, yd);
    double change = 0.0;
    for (int n = 0; n <= g.n_steps; ++n) {
      for (int i = 0; i < g.n_interior(); ++i) {
        double v_new = 0.0;
        if (r.O.contains(i)) {
          const double gv = q.at(n, i) + l2 * v.at(n, i);
          v_new = std::clamp(v.at(n, i) - step_v * gv, box.e1_lo, box.e1_hi);
        }
        const double gp = q.at(n, i) - g2 * psi.at(n, i);
        const double psi_new = std::clamp(psi.at(n, i) + step_psi * gp, box.e2_lo, box.e2_hi);
        change = std::max(change, std::abs(v_new - v.at(n, i)));
        change = std::max(change, std::abs(psi_new - psi.at(n, i)));
        v.at(n, i) = v_new;
        psi.at(n, i) = psi_new;
      }
    }
    if (change <= opts.tol) {
      converged = true;
      break;
    }
  }
  if (!converged) {
    std::ostringstream msg;
    msg << "projected saddle: no fixed point within " << opts.max_iters << " iterations";
    throw SolverError(msg.str());
  }

  SaddleSolution sol;
  sol.mode = SaddleMode::projected;
  sol.converged = true;
  sol.iterations = it;
  sol.v_bar = v;
  sol.psi_bar = psi;
  // q is the adjoint the final update was built from, so the projection
  // identities v = Proj(-q/ell^2), psi = Proj(q/gamma^2) hold to roundoff;
  // the state is refreshed so (y, v_bar, psi_bar) are mutually consistent.
  sol.y = solve_state(g, r, dyn, h, v, psi, y0);
  sol.q = q;
  sol.J_value = eval_Jr(g, r, sol.y, v, psi, yd, params);

  SpaceTimeField fp_res_v = zero_field(g);
  SpaceTimeField fp_res_psi = zero_field(g);
  SpaceTimeField grad_v, grad_psi;
  gradient_fields(g, r, params, q, v, psi, grad_v, grad_psi);
  for (int n = 0; n <= g.n_steps; ++n) {
    for (int i = 0; i < g.n_interior(); ++i) {
      if (r.O.contains(i)) {
        fp_res_v.at(n, i) =
            v.at(n, i) - std::clamp(-q.at(n, i) / l2, box.e1_lo, box.e1_hi);
      }
      fp_res_psi.at(n, i) =
          psi.at(n, i) - std::clamp(q.at(n, i) / g2, box.e2_lo, box.e2_hi);
    }
  }
  sol.stationarity_v = norm_Q(g, fp_res_v);
  sol.stationarity_psi = norm_Q(g, fp_res_psi);

  // Variational-inequality audit: the descent inequality for v against probe
  // controls in the box (vertices first, then random interior fields), the
  // ascent inequality for psi likewise, under the nodal quadrature.
  std::mt19937_64 eng(opts.vi_seed);
  std::uniform_real_distribution<double> in_e1(box.e1_lo, box.e1_hi);
  std::uniform_real_distribution<double> in_e2(box.e2_lo, box.e2_hi);
  double worst_v = std::numeric_limits<double>::infinity();
  double worst_psi = -std::numeric_limits<double>::infinity();
  int worst_v_probe = -1;
  int worst_psi_probe = -1;
  for (int k = 0; k < opts.vi_probes; ++k) {
    SpaceTimeField pv = zero_field(g);
    SpaceTimeField pp = zero_field(g);
    for (int n = 0; n <= g.n_steps; ++n) {
      for (int i = 0; i < g.n_interior(); ++i) {
        if (r.O.contains(i)) {
          pv.at(n, i) = (k == 0) ? box.e1_lo : (k == 1) ? box.e1_hi : in_e1(eng);
        }
        pp.at(n, i) = (k == 0) ? box.e2_lo : (k == 1) ? box.e2_hi : in_e2(eng);
      }
    }
    const SpaceTimeField dv = field_diff(pv, v);
    const SpaceTimeField dp = field_diff(pp, psi);
    const double slack_v = inner_product_Q_nodal(g, grad_v, dv, &r.O);
    const double slack_psi = inner_product_Q_nodal(g, grad_psi, dp);
    if (slack_v < worst_v) {
      worst_v = slack_v;
      worst_v_probe = k;
    }
    if (slack_psi > worst_psi) {
      worst_psi = slack_psi;
      worst_psi_probe = k;
    }
  }
  sol.vi_worst_v = worst_v;
  sol.vi_worst_psi = worst_psi;
  if (worst_v < -opts.vi_tol || worst_psi > opts.vi_tol) {
    std::ostringstream msg;
    msg << "projected saddle: variational inequality violated (worst v probe #"
        << worst_v_probe << " slack " << worst_v << ", worst psi probe #" << worst_psi_probe
        << " slack " << worst_psi << ", tolerance " << opts.vi_tol << ")";
    throw SolverError(msg.str());
  }
  return sol;
}

CurvatureProbe curvature_probe(const Grid& g, const Regions& r, const Nonlinearity& f,
                               const SpaceTimeField& v, const SpaceTimeField& psi,
                               const SpaceTimeField& direction, const SpaceTimeField& h,
                               const std::vector<double>& y0, const SpaceTimeField& yd,
                               const RobustParams& params) {
  params.validate();
  check_field(g, direction, "direction");
  const Dynamics dyn = Dynamics::semilinear(f);
  const SpaceTimeField y = solve_state(g, r, dyn, h, v, psi, y0);
  const SpaceTimeField d = field_diff(y, yd);
  const SpaceTimeField zero = zero_field(g);
  const double l2 = params.ell * params.ell;
  const double g2 = params.gamma * params.gamma;

  CurvatureProbe out;
  {
    const SpaceTimeField yp = solve_linearized_first(g, f, y, zero, direction, r.O);
    const SpaceTimeField ypp = solve_linearized_second(g, f, y, yp, yp);
    const double track =
        inner_product_Q(g, d, ypp, &r.O_d) + inner_product_Q(g, yp, yp, &r.O_d);
    out.along_psi = track - g2 * inner_product_Q(g, direction, direction);
  }
  {
    const SpaceTimeField yp = solve_linearized_first(g, f, y, direction, zero, r.O);
    const SpaceTimeField ypp = solve_linearized_second(g, f, y, yp, yp);
    const double track =
        inner_product_Q(g, d, ypp, &r.O_d) + inner_product_Q(g, yp, yp, &r.O_d);
    out.along_v = track + l2 * inner_product_Q(g, direction, direction, &r.O);
  }
  return out;
}

}  // namespace heatctrl
