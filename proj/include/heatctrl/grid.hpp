#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "heatctrl/common.hpp"

namespace heatctrl {

// Uniform grid for the homogeneous-Dirichlet problem on (x_min, x_max) x (0, horizon).
// Only interior spatial nodes are stored; boundary values are identically zero.
struct Grid {
  double x_min = 0.0;
  double x_max = 1.0;
  int n_cells = 0;  // spatial subintervals; interior nodes 1..n_cells-1
  double horizon = 0.0;
  int n_steps = 0;  // time subintervals; nodes 0..n_steps
  double dx = 0.0;
  double dt = 0.0;

  int n_interior() const { return n_cells - 1; }
  int n_time_nodes() const { return n_steps + 1; }
  // i is the 0-based storage index of an interior node
  double x(int i) const { return x_min + (i + 1) * dx; }
  double t(int n) const { return n * dt; }
};

Grid make_grid(double x_min, double x_max, int n_cells, double horizon, int n_steps);

// Indicator of a closed spatial subinterval [lo, hi] sampled at interior nodes.
struct RegionMask {
  std::string name;
  double lo = 0.0;
  double hi = 0.0;
  std::vector<std::uint8_t> indicator;

  bool contains(int i) const { return indicator[static_cast<std::size_t>(i)] != 0; }
  int node_count() const;
  // rectangle-rule measure of the masked node set
  double measure(const Grid& g) const { return node_count() * g.dx; }
};

RegionMask make_mask(const Grid& g, std::string name, double lo, double hi);

// The three regions of the hierarchic control problem: omega carries the leader
// control, O the follower control, O_d the tracking observations.
struct Regions {
  RegionMask omega;
  RegionMask O;
  RegionMask O_d;
};

// Enforces the geometric hypotheses: omega and O disjoint (as intervals and on
// the grid), omega and O_d sharing at least one interior node.
void validate_geometry(const Grid& g, const Regions& regions);

// Nodal space-time field: n_time_nodes rows by n_interior columns, time-major.
struct SpaceTimeField {
  int nt = 0;
  int nx = 0;
  std::vector<double> data;

  SpaceTimeField() = default;
  SpaceTimeField(int nt_, int nx_)
      : nt(nt_), nx(nx_), data(static_cast<std::size_t>(nt_) * nx_, 0.0) {}

  double& at(int n, int i) { return data[static_cast<std::size_t>(n) * nx + i]; }
  double at(int n, int i) const { return data[static_cast<std::size_t>(n) * nx + i]; }
  double* row(int n) { return data.data() + static_cast<std::size_t>(n) * nx; }
  const double* row(int n) const { return data.data() + static_cast<std::size_t>(n) * nx; }

  bool same_shape(const SpaceTimeField& other) const {
    return nt == other.nt && nx == other.nx;
  }
  double sup_norm() const;
  bool all_finite() const;
};

SpaceTimeField zero_field(const Grid& g);

// Time slice as a plain vector (length n_interior).
std::vector<double> slice(const SpaceTimeField& f, int n);
void set_slice(SpaceTimeField& f, int n, const std::vector<double>& values);

// Scheme-consistent space-time inner product: midpoint rule in time applied to
// nodal averages, rectangle rule in space over interior nodes, i.e.
//   sum_n dt * sum_i dx * (f^n_i+f^{n+1}_i)/2 * (g^n_i+g^{n+1}_i)/2.
// This is the pairing under which the Crank-Nicolson forward and backward
// solvers are exact transposes, so the discrete duality identities hold to
// rounding. It coincides with the trapezoid rule whenever either factor is
// constant in time. The optional mask restricts the spatial sum.
double inner_product_Q(const Grid& g, const SpaceTimeField& f, const SpaceTimeField& h,
                       const RegionMask* mask = nullptr);

// Strict trapezoid-in-time variant on nodal products (all weights positive).
// Used for variational-inequality checks, where the sign of nodal products
// must survive quadrature.
double inner_product_Q_nodal(const Grid& g, const SpaceTimeField& f, const SpaceTimeField& h,
                             const RegionMask* mask = nullptr);

// Spatial inner product on a time slice (rectangle rule over interior nodes).
double inner_product_Omega(const Grid& g, const std::vector<double>& a,
                           const std::vector<double>& b, const RegionMask* mask = nullptr);

double norm_Q(const Grid& g, const SpaceTimeField& f, const RegionMask* mask = nullptr);
double norm_Omega(const Grid& g, const std::vector<double>& a, const RegionMask* mask = nullptr);

}  // namespace heatctrl
