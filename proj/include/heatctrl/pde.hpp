#pragma once

#include <functional>
#include <string>
#include <vector>

#include "heatctrl/grid.hpp"

namespace heatctrl {

// Pointwise reaction nonlinearity with its first two derivatives. f(0) = 0 is
// required so that the zero state solves the homogeneous problem.
struct Nonlinearity {
  std::string name;
  std::function<double(double)> f;
  std::function<double(double)> fp;
  std::function<double(double)> fpp;
  double lipschitz_bound = 0.0;  // L with |f'| <= L on the probe range
};

Nonlinearity linear_nonlinearity(double a);
Nonlinearity tanh_nonlinearity(double scale);
// Natural cubic spline through (s, value) knots, extended linearly outside the
// knot range. The knot list must contain s = 0 with value 0.
Nonlinearity table_nonlinearity(std::vector<double> s_knots, std::vector<double> values);

// Verifies f(0) = 0 and |f'| <= lipschitz_bound on a symmetric probe grid.
void check_nonlinearity(const Nonlinearity& f, double probe_range = 8.0,
                        int probe_points = 2001);

// Space-time reaction coefficient; sup_norm is recomputed from the values.
struct Potential {
  SpaceTimeField values;
  double sup_norm = 0.0;
};

Potential make_potential(const Grid& g, SpaceTimeField values);
Potential constant_potential(const Grid& g, double value);

// ---------------------------------------------------------------------------
// Interval-midpoint data. The Crank-Nicolson kernels consume coefficients and
// sources sampled at time-interval midpoints (n_steps rows): nodal fields are
// averaged onto midpoints, while the semilinear solvers evaluate coefficients
// at the midpoint state (y^n + y^{n+1})/2 directly. Keeping this distinction
// explicit is what makes the backward solver the exact transpose of the
// forward one and the discrete adjoints exact.
// ---------------------------------------------------------------------------
struct MidField {
  int nt = 0;  // = n_steps
  int nx = 0;
  std::vector<double> data;

  MidField() = default;
  MidField(int nt_, int nx_)
      : nt(nt_), nx(nx_), data(static_cast<std::size_t>(nt_) * nx_, 0.0) {}

  double& at(int n, int i) { return data[static_cast<std::size_t>(n) * nx + i]; }
  double at(int n, int i) const { return data[static_cast<std::size_t>(n) * nx + i]; }
  double* row(int n) { return data.data() + static_cast<std::size_t>(n) * nx; }
  const double* row(int n) const { return data.data() + static_cast<std::size_t>(n) * nx; }
  double sup_norm() const;
};

MidField mid_zero(const Grid& g);
MidField mid_average(const Grid& g, const SpaceTimeField& nodal);

// One CN step: solves
//   (I/dt + A/2 + diag(pot)/2) out = (I/dt - A/2 - diag(pot)/2) in + rhs_extra
// where A is the Dirichlet stiffness of -d^2/dx^2. pot and rhs_extra may be
// null (treated as zero). work must hold 2*n_interior doubles.
void cn_step(const Grid& g, const double* pot, const double* in, const double* rhs_extra,
             double* out, double* work);

// y^0 = initial, then n_steps CN steps with midpoint potential/source rows.
SpaceTimeField cn_forward(const Grid& g, const MidField& pot, const MidField& src,
                          const std::vector<double>& initial);
// q^{n_steps} = terminal, stepping backward; exact transpose of cn_forward
// under inner_product_Q.
SpaceTimeField cn_backward(const Grid& g, const MidField& pot, const MidField& src,
                           const std::vector<double>& terminal);

// ---------------------------------------------------------------------------
// Public solvers
// ---------------------------------------------------------------------------

// y_t - y_xx + a y = source, y(0) = y0, zero Dirichlet data.
SpaceTimeField solve_forward_linear(const Grid& g, const Potential& a,
                                    const SpaceTimeField& source,
                                    const std::vector<double>& y0);

// -q_t - q_xx + c q = source, q(T) = terminal (runs the CN step in reversed time).
SpaceTimeField solve_backward_linear(const Grid& g, const Potential& c,
                                     const SpaceTimeField& source,
                                     const std::vector<double>& terminal);

struct PicardOpts {
  double tol = 1e-12;   // sup-norm difference of successive inner iterates
  int max_inner = 100;
};

struct SemilinearResult {
  SpaceTimeField y;
  int max_picard_iterations = 0;  // worst case over all time steps
};

// y_t - y_xx + f(y) = source, with f evaluated at the CN midpoint state and
// resolved per step by Picard iteration. Throws SolverError (reporting the
// failing step) if an inner iteration does not converge.
SemilinearResult solve_forward_semilinear(const Grid& g, const Nonlinearity& f,
                                          const SpaceTimeField& source,
                                          const std::vector<double>& y0,
                                          const PicardOpts& opts = {});

// Midpoint potential f'((y^n + y^{n+1})/2) of a trajectory; the exact discrete
// linearization coefficient of the semilinear scheme.
MidField linearization_potential(const Grid& g, const Nonlinearity& f,
                                 const SpaceTimeField& y);

// First linearization around y: w_t - w_xx + f'(y) w = v' 1_O + psi', w(0)=0.
SpaceTimeField solve_linearized_first(const Grid& g, const Nonlinearity& f,
                                      const SpaceTimeField& y, const SpaceTimeField& vprime,
                                      const SpaceTimeField& psiprime, const RegionMask& O);

// Second linearization: z_t - z_xx + f'(y) z = -f''(y) w1 w2, z(0)=0, with the
// right-hand side formed from midpoint values of w1, w2.
SpaceTimeField solve_linearized_second(const Grid& g, const Nonlinearity& f,
                                       const SpaceTimeField& y, const SpaceTimeField& w1,
                                       const SpaceTimeField& w2);

}  // namespace heatctrl
