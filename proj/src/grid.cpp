#include "heatctrl/grid.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace heatctrl {

Grid make_grid(double x_min, double x_max, int n_cells, double horizon, int n_steps) {
  if (!(x_max > x_min)) {
    throw SpecError("make_grid: x_max must exceed x_min");
  }
  if (n_cells < 4) {
    throw SpecError("make_grid: n_cells must be at least 4, got " + std::to_string(n_cells));
  }
  if (!(horizon > 0.0)) {
    throw SpecError("make_grid: horizon must be positive");
  }
  if (n_steps < 4) {
    throw SpecError("make_grid: n_steps must be at least 4, got " + std::to_string(n_steps));
  }
  Grid g;
  g.x_min = x_min;
  g.x_max = x_max;
  g.n_cells = n_cells;
  g.horizon = horizon;
  g.n_steps = n_steps;
  g.dx = (x_max - x_min) / n_cells;
  g.dt = horizon / n_steps;
  return g;
}

int RegionMask::node_count() const {
  int c = 0;
  for (std::uint8_t b : indicator) c += (b != 0);
  return c;
}

RegionMask make_mask(const Grid& g, std::string name, double lo, double hi) {
  if (!(hi > lo)) {
    throw SpecError("make_mask[" + name + "]: interval must have hi > lo");
  }
  // tolerate roundoff when an endpoint lands exactly on a node
  const double eps = 1e-9 * g.dx;
  if (lo < g.x_min - eps || hi > g.x_max + eps) {
    throw SpecError("make_mask[" + name + "]: interval not contained in the domain");
  }
  RegionMask m;
  m.name = std::move(name);
  m.lo = lo;
  m.hi = hi;
  m.indicator.assign(static_cast<std::size_t>(g.n_interior()), 0);
  for (int i = 0; i < g.n_interior(); ++i) {
    const double xi = g.x(i);
    if (xi >= lo - eps && xi <= hi + eps) m.indicator[static_cast<std::size_t>(i)] = 1;
  }
  return m;
}

void validate_geometry(const Grid& g, const Regions& r) {
  const int m = g.n_interior();
  if (static_cast<int>(r.omega.indicator.size()) != m ||
      static_cast<int>(r.O.indicator.size()) != m ||
      static_cast<int>(r.O_d.indicator.size()) != m) {
    throw SpecError("validate_geometry: masks do not match the grid");
  }
  if (r.omega.node_count() == 0 || r.O.node_count() == 0 || r.O_d.node_count() == 0) {
    throw SpecError("validate_geometry: every region must contain at least one interior node");
  }
  if (std::min(r.omega.hi, r.O.hi) > std::max(r.omega.lo, r.O.lo)) {
    throw SpecError("validate_geometry: omega and O intervals overlap");
  }
  int shared_omega_O = 0;
  int shared_omega_Od = 0;
  for (int i = 0; i < m; ++i) {
    shared_omega_O += (r.omega.contains(i) && r.O.contains(i));
    shared_omega_Od += (r.omega.contains(i) && r.O_d.contains(i));
  }
  if (shared_omega_O > 0) {
    throw SpecError("validate_geometry: omega and O share " + std::to_string(shared_omega_O) +
                    " grid node(s); they must be disjoint");
  }
  if (shared_omega_Od == 0) {
    throw SpecError("validate_geometry: omega and O_d must share at least one grid node");
  }
}

double SpaceTimeField::sup_norm() const {
  double s = 0.0;
  for (double v : data) s = std::max(s, std::abs(v));
  return s;
}

bool SpaceTimeField::all_finite() const {
  for (double v : data) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

SpaceTimeField zero_field(const Grid& g) {
  return SpaceTimeField(g.n_time_nodes(), g.n_interior());
}

std::vector<double> slice(const SpaceTimeField& f, int n) {
  return std::vector<double>(f.row(n), f.row(n) + f.nx);
}

void set_slice(SpaceTimeField& f, int n, const std::vector<double>& values) {
  if (static_cast<int>(values.size()) != f.nx) {
    throw SpecError("set_slice: length mismatch");
  }
  std::copy(values.begin(), values.end(), f.row(n));
}

namespace {

void check_field_shapes(const Grid& g, const SpaceTimeField& f, const SpaceTimeField& h,
                        const char* where) {
  if (f.nt != g.n_time_nodes() || f.nx != g.n_interior() || !f.same_shape(h)) {
    throw SpecError(std::string(where) + ": field shapes do not match the grid");
  }
}

}  // namespace

double inner_product_Q(const Grid& g, const SpaceTimeField& f, const SpaceTimeField& h,
                       const RegionMask* mask) {
  check_field_shapes(g, f, h, "inner_product_Q");
  double total = 0.0;
  for (int n = 0; n < g.n_steps; ++n) {
    const double* f0 = f.row(n);
    const double* f1 = f.row(n + 1);
    const double* h0 = h.row(n);
    const double* h1 = h.row(n + 1);
    double s = 0.0;
    for (int i = 0; i < g.n_interior(); ++i) {
      if (mask && !mask->contains(i)) continue;
      s += 0.25 * (f0[i] + f1[i]) * (h0[i] + h1[i]);
    }
    total += s;
  }
  return total * g.dx * g.dt;
}

double inner_product_Q_nodal(const Grid& g, const SpaceTimeField& f, const SpaceTimeField& h,
                             const RegionMask* mask) {
  check_field_shapes(g, f, h, "inner_product_Q_nodal");
  double total = 0.0;
  for (int n = 0; n <= g.n_steps; ++n) {
    const double w = (n == 0 || n == g.n_steps) ? 0.5 : 1.0;
    const double* fr = f.row(n);
    const double* hr = h.row(n);
    double s = 0.0;
    for (int i = 0; i < g.n_interior(); ++i) {
      if (mask && !mask->contains(i)) continue;
      s += fr[i] * hr[i];
    }
    total += w * s;
  }
  return total * g.dx * g.dt;
}

double inner_product_Omega(const Grid& g, const std::vector<double>& a,
                           const std::vector<double>& b, const RegionMask* mask) {
  if (static_cast<int>(a.size()) != g.n_interior() || a.size() != b.size()) {
    throw SpecError("inner_product_Omega: vector lengths do not match the grid");
  }
  double s = 0.0;
  for (int i = 0; i < g.n_interior(); ++i) {
    if (mask && !mask->contains(i)) continue;
    s += a[static_cast<std::size_t>(i)] * b[static_cast<std::size_t>(i)];
  }
  return s * g.dx;
}

double norm_Q(const Grid& g, const SpaceTimeField& f, const RegionMask* mask) {
  return std::sqrt(std::max(0.0, inner_product_Q(g, f, f, mask)));
}

double norm_Omega(const Grid& g, const std::vector<double>& a, const RegionMask* mask) {
  return std::sqrt(std::max(0.0, inner_product_Omega(g, a, a, mask)));
}

}  // namespace heatctrl
