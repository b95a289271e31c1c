#include "heatctrl/pde.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <memory>

namespace heatctrl {

Nonlinearity linear_nonlinearity(double a) {
  Nonlinearity nl;
  nl.name = "linear";
  nl.f = [a](double s) { return a * s; };
  nl.fp = [a](double) { return a; };
  nl.fpp = [](double) { return 0.0; };
  nl.lipschitz_bound = std::abs(a);
  return nl;
}

Nonlinearity tanh_nonlinearity(double scale) {
  Nonlinearity nl;
  nl.name = "tanh";
  nl.f = [scale](double s) { return scale * std::tanh(s); };
  nl.fp = [scale](double s) {
    const double t = std::tanh(s);
    return scale * (1.0 - t * t);
  };
  nl.fpp = [scale](double s) {
    const double t = std::tanh(s);
    return -2.0 * scale * t * (1.0 - t * t);
  };
  nl.lipschitz_bound = std::abs(scale);
  return nl;
}

namespace {

// Natural cubic spline with linear extension outside the knot range.
struct Spline {
  std::vector<double> s, v, m;  // knots, values, second derivatives

  int segment(double x) const {
    int lo = 0, hi = static_cast<int>(s.size()) - 1;
    while (hi - lo > 1) {
      const int mid = (lo + hi) / 2;
      if (s[static_cast<std::size_t>(mid)] <= x) lo = mid;
      else hi = mid;
    }
    return lo;
  }

  double eval(double x, int deriv) const {
    const int n = static_cast<int>(s.size());
    if (x <= s.front()) {
      const double h = s[1] - s[0];
      const double d = (v[1] - v[0]) / h - h * (2.0 * m[0] + m[1]) / 6.0;
      if (deriv == 0) return v.front() + d * (x - s.front());
      if (deriv == 1) return d;
      return 0.0;
    }
    if (x >= s.back()) {
      const std::size_t k = static_cast<std::size_t>(n - 1);
      const double h = s[k] - s[k - 1];
      const double d = (v[k] - v[k - 1]) / h + h * (m[k - 1] + 2.0 * m[k]) / 6.0;
      if (deriv == 0) return v.back() + d * (x - s.back());
      if (deriv == 1) return d;
      return 0.0;
    }
    const std::size_t k = static_cast<std::size_t>(segment(x));
    const double h = s[k + 1] - s[k];
    const double A = (s[k + 1] - x) / h;
    const double B = (x - s[k]) / h;
    if (deriv == 0) {
      return A * v[k] + B * v[k + 1] +
             ((A * A * A - A) * m[k] + (B * B * B - B) * m[k + 1]) * h * h / 6.0;
    }
    if (deriv == 1) {
      return (v[k + 1] - v[k]) / h +
             (-(3.0 * A * A - 1.0) * m[k] + (3.0 * B * B - 1.0) * m[k + 1]) * h / 6.0;
    }
    return A * m[k] + B * m[k + 1];
  }
};

Spline build_spline(std::vector<double> s, std::vector<double> v) {
  const int n = static_cast<int>(s.size());
  Spline sp;
  sp.s = std::move(s);
  sp.v = std::move(v);
  sp.m.assign(static_cast<std::size_t>(n), 0.0);
  if (n <= 2) return sp;  // natural spline through two points is the chord
  // tridiagonal solve for interior second derivatives
  std::vector<double> diag(static_cast<std::size_t>(n), 0.0);
  std::vector<double> rhs(static_cast<std::size_t>(n), 0.0);
  std::vector<double> sub(static_cast<std::size_t>(n), 0.0);
  std::vector<double> sup(static_cast<std::size_t>(n), 0.0);
  for (int i = 1; i + 1 < n; ++i) {
    const std::size_t k = static_cast<std::size_t>(i);
    const double h0 = sp.s[k] - sp.s[k - 1];
    const double h1 = sp.s[k + 1] - sp.s[k];
    sub[k] = h0 / 6.0;
    diag[k] = (h0 + h1) / 3.0;
    sup[k] = h1 / 6.0;
    rhs[k] = (sp.v[k + 1] - sp.v[k]) / h1 - (sp.v[k] - sp.v[k - 1]) / h0;
  }
  for (int i = 2; i + 1 < n; ++i) {
    const std::size_t k = static_cast<std::size_t>(i);
    const double w = sub[k] / diag[k - 1];
    diag[k] -= w * sup[k - 1];
    rhs[k] -= w * rhs[k - 1];
  }
  for (int i = n - 2; i >= 1; --i) {
    const std::size_t k = static_cast<std::size_t>(i);
    const double upper = (i + 2 < n) ? sup[k] * sp.m[k + 1] : 0.0;
    sp.m[k] = (rhs[k] - upper) / diag[k];
  }
  return sp;
}

}  // namespace

Nonlinearity table_nonlinearity(std::vector<double> s_knots, std::vector<double> values) {
  if (s_knots.size() != values.size() || s_knots.size() < 2) {
    throw SpecError("table_nonlinearity: need matching knot/value lists with >= 2 entries");
  }
  for (std::size_t k = 1; k < s_knots.size(); ++k) {
    if (!(s_knots[k] > s_knots[k - 1])) {
      throw SpecError("table_nonlinearity: knots must be strictly increasing");
    }
  }
  bool has_origin = false;
  for (std::size_t k = 0; k < s_knots.size(); ++k) {
    if (s_knots[k] == 0.0) {
      if (values[k] != 0.0) throw SpecError("table_nonlinearity: value at s=0 must be 0");
      has_origin = true;
    }
  }
  if (!has_origin) throw SpecError("table_nonlinearity: knot list must contain s=0");

  auto sp = std::make_shared<Spline>(build_spline(std::move(s_knots), std::move(values)));
  Nonlinearity nl;
  nl.name = "custom";
  nl.f = [sp](double s) { return sp->eval(s, 0); };
  nl.fp = [sp](double s) { return sp->eval(s, 1); };
  nl.fpp = [sp](double s) { return sp->eval(s, 2); };
  double L = 0.0;
  const double lo = sp->s.front();
  const double hi = sp->s.back();
  const int probes = 4001;
  for (int k = 0; k < probes; ++k) {
    const double x = lo + (hi - lo) * k / (probes - 1);
    L = std::max(L, std::abs(sp->eval(x, 1)));
  }
  nl.lipschitz_bound = L * (1.0 + 1e-12);
  return nl;
}

void check_nonlinearity(const Nonlinearity& f, double probe_range, int probe_points) {
  if (std::abs(f.f(0.0)) > 1e-14) {
    throw SpecError("check_nonlinearity[" + f.name + "]: f(0) must vanish");
  }
  const double slack = 1e-9 * std::max(1.0, f.lipschitz_bound);
  for (int k = 0; k < probe_points; ++k) {
    const double s = -probe_range + 2.0 * probe_range * k / (probe_points - 1);
    const double d = f.fp(s);
    if (!std::isfinite(d) || std::abs(d) > f.lipschitz_bound + slack) {
      throw SpecError("check_nonlinearity[" + f.name + "]: |f'| exceeds the declared bound at s=" +
                      std::to_string(s));
    }
    if (!std::isfinite(f.fpp(s))) {
      throw SpecError("check_nonlinearity[" + f.name + "]: f'' not finite at s=" +
                      std::to_string(s));
    }
  }
}

Potential make_potential(const Grid& g, SpaceTimeField values) {
  if (values.nt != g.n_time_nodes() || values.nx != g.n_interior()) {
    throw SpecError("make_potential: field shape does not match the grid");
  }
  if (!values.all_finite()) {
    throw SpecError("make_potential: potential values must be finite");
  }
  Potential p;
  p.sup_norm = values.sup_norm();
  p.values = std::move(values);
  return p;
}

Potential constant_potential(const Grid& g, double value) {
  SpaceTimeField f(g.n_time_nodes(), g.n_interior());
  std::fill(f.data.begin(), f.data.end(), value);
  return make_potential(g, std::move(f));
}

double MidField::sup_norm() const {
  double s = 0.0;
  for (double v : data) s = std::max(s, std::abs(v));
  return s;
}

MidField mid_zero(const Grid& g) { return MidField(g.n_steps, g.n_interior()); }

MidField mid_average(const Grid& g, const SpaceTimeField& nodal) {
  if (nodal.nt != g.n_time_nodes() || nodal.nx != g.n_interior()) {
    throw SpecError("mid_average: field shape does not match the grid");
  }
  MidField m(g.n_steps, g.n_interior());
  for (int n = 0; n < g.n_steps; ++n) {
    const double* a = nodal.row(n);
    const double* b = nodal.row(n + 1);
    double* out = m.row(n);
    for (int i = 0; i < g.n_interior(); ++i) out[i] = 0.5 * (a[i] + b[i]);
  }
  return m;
}

void cn_step(const Grid& g, const double* pot, const double* in, const double* rhs_extra,
             double* out, double* work) {
  const int m = g.n_interior();
  const double inv_dt = 1.0 / g.dt;
  const double lap = 1.0 / (g.dx * g.dx);  // stiffness scale
  const double off = -0.5 * lap;           // sub/super diagonal of the implicit matrix
  double* cp = work;      // modified super-diagonal (Thomas)
  double* dp = work + m;  // modified right-hand side

  // right-hand side: (I/dt - A/2 - diag(pot)/2) in + rhs_extra
  for (int i = 0; i < m; ++i) {
    const double left = (i > 0) ? in[i - 1] : 0.0;
    const double right = (i + 1 < m) ? in[i + 1] : 0.0;
    double r = inv_dt * in[i] - 0.5 * lap * (2.0 * in[i] - left - right);
    if (pot) r -= 0.5 * pot[i] * in[i];
    if (rhs_extra) r += rhs_extra[i];
    dp[i] = r;
  }

  // forward elimination on the tridiagonal (diag d_i = 1/dt + lap + pot_i/2)
  {
    const double d0 = inv_dt + lap + (pot ? 0.5 * pot[0] : 0.0);
    cp[0] = off / d0;
    dp[0] = dp[0] / d0;
  }
  for (int i = 1; i < m; ++i) {
    const double di = inv_dt + lap + (pot ? 0.5 * pot[i] : 0.0);
    const double denom = di - off * cp[i - 1];
    cp[i] = off / denom;
    dp[i] = (dp[i] - off * dp[i - 1]) / denom;
  }
  out[m - 1] = dp[m - 1];
  for (int i = m - 2; i >= 0; --i) {
    out[i] = dp[i] - cp[i] * out[i + 1];
  }
}

namespace {

void check_mid_shapes(const Grid& g, const MidField& pot, const MidField& src,
                      const std::vector<double>& boundary_slice, const char* where) {
  if (pot.nt != g.n_steps || pot.nx != g.n_interior() || src.nt != g.n_steps ||
      src.nx != g.n_interior()) {
    throw SpecError(std::string(where) + ": midpoint field shapes do not match the grid");
  }
  if (static_cast<int>(boundary_slice.size()) != g.n_interior()) {
    throw SpecError(std::string(where) + ": initial/terminal slice length mismatch");
  }
}

}  // namespace

SpaceTimeField cn_forward(const Grid& g, const MidField& pot, const MidField& src,
                          const std::vector<double>& initial) {
  check_mid_shapes(g, pot, src, initial, "cn_forward");
  SpaceTimeField y(g.n_time_nodes(), g.n_interior());
  set_slice(y, 0, initial);
  std::vector<double> work(2 * static_cast<std::size_t>(g.n_interior()));
  for (int n = 0; n < g.n_steps; ++n) {
    cn_step(g, pot.row(n), y.row(n), src.row(n), y.row(n + 1), work.data());
  }
  return y;
}

SpaceTimeField cn_backward(const Grid& g, const MidField& pot, const MidField& src,
                           const std::vector<double>& terminal) {
  check_mid_shapes(g, pot, src, terminal, "cn_backward");
  SpaceTimeField q(g.n_time_nodes(), g.n_interior());
  set_slice(q, g.n_steps, terminal);
  std::vector<double> work(2 * static_cast<std::size_t>(g.n_interior()));
  for (int n = g.n_steps - 1; n >= 0; --n) {
    cn_step(g, pot.row(n), q.row(n + 1), src.row(n), q.row(n), work.data());
  }
  return q;
}

SpaceTimeField solve_forward_linear(const Grid& g, const Potential& a,
                                    const SpaceTimeField& source,
                                    const std::vector<double>& y0) {
  return cn_forward(g, mid_average(g, a.values), mid_average(g, source), y0);
}

SpaceTimeField solve_backward_linear(const Grid& g, const Potential& c,
                                     const SpaceTimeField& source,
                                     const std::vector<double>& terminal) {
  return cn_backward(g, mid_average(g, c.values), mid_average(g, source), terminal);
}

SemilinearResult solve_forward_semilinear(const Grid& g, const Nonlinearity& f,
                                          const SpaceTimeField& source,
                                          const std::vector<double>& y0,
                                          const PicardOpts& opts) {
  const MidField src = mid_average(g, source);
  check_mid_shapes(g, src, src, y0, "solve_forward_semilinear");
  const int m = g.n_interior();
  SemilinearResult res;
  res.y = SpaceTimeField(g.n_time_nodes(), g.n_interior());
  set_slice(res.y, 0, y0);
  std::vector<double> work(2 * static_cast<std::size_t>(m));
  std::vector<double> rhs(static_cast<std::size_t>(m));
  std::vector<double> trial(static_cast<std::size_t>(m));
  for (int n = 0; n < g.n_steps; ++n) {
    const double* prev = res.y.row(n);
    double* next = res.y.row(n + 1);
    std::copy(prev, prev + m, next);  // warm start from the previous node
    bool converged = false;
    for (int j = 0; j < opts.max_inner; ++j) {
      for (int i = 0; i < m; ++i) {
        rhs[i] = src.at(n, i) - f.f(0.5 * (prev[i] + next[i]));
      }
      cn_step(g, nullptr, prev, rhs.data(), trial.data(), work.data());
      double diff = 0.0;
      for (int i = 0; i < m; ++i) diff = std::max(diff, std::abs(trial[i] - next[i]));
      std::copy(trial.begin(), trial.end(), next);
      res.max_picard_iterations = std::max(res.max_picard_iterations, j + 1);
      if (diff <= opts.tol) {
        converged = true;
        break;
      }
    }
    if (!converged) {
      throw SolverError("solve_forward_semilinear: Picard iteration did not reach tol=" +
                        std::to_string(opts.tol) + " at time step " + std::to_string(n + 1));
    }
  }
  return res;
}

MidField linearization_potential(const Grid& g, const Nonlinearity& f,
                                 const SpaceTimeField& y) {
  if (y.nt != g.n_time_nodes() || y.nx != g.n_interior()) {
    throw SpecError("linearization_potential: trajectory shape does not match the grid");
  }
  MidField pot(g.n_steps, g.n_interior());
  for (int n = 0; n < g.n_steps; ++n) {
    const double* a = y.row(n);
    const double* b = y.row(n + 1);
    double* out = pot.row(n);
    for (int i = 0; i < g.n_interior(); ++i) out[i] = f.fp(0.5 * (a[i] + b[i]));
  }
  return pot;
}

SpaceTimeField solve_linearized_first(const Grid& g, const Nonlinearity& f,
                                      const SpaceTimeField& y, const SpaceTimeField& vprime,
                                      const SpaceTimeField& psiprime, const RegionMask& O) {
  const MidField pot = linearization_potential(g, f, y);
  const MidField vm = mid_average(g, vprime);
  const MidField pm = mid_average(g, psiprime);
  MidField src(g.n_steps, g.n_interior());
  for (int n = 0; n < g.n_steps; ++n) {
    for (int i = 0; i < g.n_interior(); ++i) {
      src.at(n, i) = (O.contains(i) ? vm.at(n, i) : 0.0) + pm.at(n, i);
    }
  }
  return cn_forward(g, pot, src, std::vector<double>(static_cast<std::size_t>(g.n_interior()), 0.0));
}

SpaceTimeField solve_linearized_second(const Grid& g, const Nonlinearity& f,
                                       const SpaceTimeField& y, const SpaceTimeField& w1,
                                       const SpaceTimeField& w2) {
  const MidField pot = linearization_potential(g, f, y);
  const MidField m1 = mid_average(g, w1);
  const MidField m2 = mid_average(g, w2);
  MidField src(g.n_steps, g.n_interior());
  for (int n = 0; n < g.n_steps; ++n) {
    const double* ya = y.row(n);
    const double* yb = y.row(n + 1);
    for (int i = 0; i < g.n_interior(); ++i) {
      const double ymid = 0.5 * (ya[i] + yb[i]);
      src.at(n, i) = -f.fpp(ymid) * m1.at(n, i) * m2.at(n, i);
    }
  }
  return cn_forward(g, pot, src, std::vector<double>(static_cast<std::size_t>(g.n_interior()), 0.0));
}

}  // namespace heatctrl
