#include "heatctrl/carleman.hpp"

#include <algorithm>
#include <cfloat>
#include <cmath>
#include <limits>
#include <random>
#include <stdexcept>
#include <string>

namespace heatctrl {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Caps a nonnegative value that exceeded double range; "structural" caps at
// the weight singularities do not count as overflow.
double cap_value(double v, bool structural, bool& overflow) {
  if (std::isfinite(v)) return v;
  if (!structural) overflow = true;
  return DBL_MAX;
}

double log_sum_exp(const std::vector<double>& logs) {
  double mx = -kInf;
  for (double l : logs) mx = std::max(mx, l);
  if (!std::isfinite(mx)) return mx;  // -inf: empty sum; +inf: an overflowed term
  double s = 0.0;
  for (double l : logs) s += std::exp(l - mx);
  return mx + std::log(s);
}

}  // namespace

double s2_threshold(double horizon, double M, double sigma2) {
  const double T = horizon;
  return sigma2 * (T + T * T + T * T * (2.0 * std::pow(M, 2.0 / 3.0) + std::sqrt(2.0 * M)));
}

void CarlemanParams::validate(double horizon) const {
  if (!(horizon > 0.0)) throw SpecError("carleman: horizon must be positive");
  if (!(s > 0.0)) throw SpecError("carleman: s must be positive");
  if (!(lambda > 0.0)) throw SpecError("carleman: lambda must be positive");
  if (!(sigma2 > 0.0)) throw SpecError("carleman: sigma2 must be positive");
  if (!(M >= 0.0)) throw SpecError("carleman: potential bound M must be nonnegative");
  const double s2 = s2_threshold(horizon, M, sigma2);
  if (s < s2) {
    throw SpecError("carleman: s = " + std::to_string(s) +
                    " below the admissibility threshold s2 = " + std::to_string(s2));
  }
}

CarlemanParams default_carleman_params(double horizon, double M, double lambda,
                                       double sigma2) {
  CarlemanParams p;
  p.lambda = lambda;
  p.sigma2 = sigma2;
  p.M = M;
  p.s = s2_threshold(horizon, M, sigma2);
  p.validate(horizon);
  return p;
}

BumpInterval default_bump(const Regions& regions) {
  double lo = std::max(regions.omega.lo, regions.O_d.lo);
  double hi = std::min(regions.omega.hi, regions.O_d.hi);
  if (!(hi > lo)) {
    lo = regions.omega.lo;
    hi = regions.omega.hi;
  }
  const double third = (hi - lo) / 3.0;
  return BumpInterval{lo + third, hi - third};
}

namespace {

// Unit-coordinate bump data: w(z) = z(1-z)e^{mu z} with its single critical
// point at the mapped center of the bump interval.
struct BumpShape {
  double zc = 0.0;    // critical point in unit coordinates
  double mu = 0.0;
  double wmax = 0.0;  // w(zc), the analytic maximum used for normalization
  double length = 0.0;
};

BumpShape bump_shape(double x_min, double x_max, const BumpInterval& bump) {
  if (!(x_max > x_min)) throw SpecError("eta0: empty domain");
  if (!(bump.lo < bump.hi) || !(bump.lo > x_min) || !(bump.hi < x_max)) {
    throw SpecError("eta0: bump region must be strictly inside the domain");
  }
  BumpShape s;
  s.length = x_max - x_min;
  s.zc = (0.5 * (bump.lo + bump.hi) - x_min) / s.length;
  s.mu = (2.0 * s.zc - 1.0) / (s.zc * (1.0 - s.zc));
  s.wmax = s.zc * (1.0 - s.zc) * std::exp(s.mu * s.zc);
  return s;
}

}  // namespace

double eta0_value(double x, double x_min, double x_max, const BumpInterval& bump) {
  const BumpShape s = bump_shape(x_min, x_max, bump);
  const double z = (x - x_min) / s.length;
  return z * (1.0 - z) * std::exp(s.mu * z) / s.wmax;
}

double eta0_derivative(double x, double x_min, double x_max, const BumpInterval& bump) {
  const BumpShape s = bump_shape(x_min, x_max, bump);
  const double z = (x - x_min) / s.length;
  const double wp = std::exp(s.mu * z) * (1.0 - 2.0 * z + s.mu * z * (1.0 - z));
  return wp / (s.wmax * s.length);
}

std::vector<double> build_eta0(const Grid& g, const BumpInterval& bump,
                               std::vector<double>* derivative) {
  const BumpShape s = bump_shape(g.x_min, g.x_max, bump);
  const int nx = g.n_interior();
  std::vector<double> eta(static_cast<std::size_t>(nx));
  std::vector<double> der(static_cast<std::size_t>(nx));
  for (int i = 0; i < nx; ++i) {
    const double z = (g.x(i) - g.x_min) / s.length;
    const double e = std::exp(s.mu * z);
    eta[static_cast<std::size_t>(i)] = z * (1.0 - z) * e / s.wmax;
    der[static_cast<std::size_t>(i)] =
        e * (1.0 - 2.0 * z + s.mu * z * (1.0 - z)) / (s.wmax * s.length);
  }
  for (int i = 0; i < nx; ++i) {
    if (!(eta[static_cast<std::size_t>(i)] > 0.0)) {
      throw SpecError("eta0: positivity failed at an interior node");
    }
    const double x = g.x(i);
    if ((x < bump.lo || x > bump.hi) && std::abs(der[static_cast<std::size_t>(i)]) <= 0.0) {
      throw SpecError("eta0: vanishing slope outside the bump region");
    }
  }
  if (derivative) *derivative = std::move(der);
  return eta;
}

double carleman_l(double t, double horizon) {
  if (t <= 0.5 * horizon) return 0.25 * horizon * horizon;
  return t * (horizon - t);
}

CarlemanWeights build_weights(const std::vector<double>& eta0, const Grid& g,
                              const CarlemanParams& params) {
  params.validate(g.horizon);
  const int nx = g.n_interior();
  const int nt = g.n_steps;
  if (static_cast<int>(eta0.size()) != nx) throw SpecError("build_weights: eta0 size mismatch");

  CarlemanWeights w;
  w.params = params;
  w.eta0 = eta0;
  double m = 0.0;  // closed-domain max; boundary values are 0 by construction
  for (double v : eta0) {
    if (!std::isfinite(v) || v < 0.0) throw SpecError("build_weights: invalid eta0 values");
    m = std::max(m, v);
  }
  if (!(m > 0.0)) throw SpecError("build_weights: eta0 vanishes identically");
  w.eta0_max = m;

  const double lam = params.lambda;
  const double e4m = std::exp(4.0 * lam * m);
  const double e2m = std::exp(2.0 * lam * m);
  const double T = g.horizon;

  w.alpha = SpaceTimeField(nt + 1, nx);
  w.xi = SpaceTimeField(nt + 1, nx);
  w.beta = SpaceTimeField(nt + 1, nx);
  w.phi_w = SpaceTimeField(nt + 1, nx);
  w.beta_star.assign(static_cast<std::size_t>(nt) + 1, DBL_MAX);
  w.phi_star.assign(static_cast<std::size_t>(nt) + 1, DBL_MAX);
  w.log_rho.assign(static_cast<std::size_t>(nt) + 1, kInf);
  w.rho.assign(static_cast<std::size_t>(nt) + 1, DBL_MAX);

  for (int n = 0; n <= nt; ++n) {
    const double t = g.t(n);
    const double denom_singular = t * (T - t);  // zero at both endpoints
    const double l = carleman_l(t, T);          // zero only at t = T
    const bool alpha_defined = n > 0 && n < nt;
    const bool beta_defined = n < nt;
    for (int i = 0; i < nx; ++i) {
      const double num_xi = std::exp(lam * (2.0 * m + eta0[static_cast<std::size_t>(i)]));
      const double num_alpha = e4m - num_xi;
      w.alpha.at(n, i) = alpha_defined
                             ? cap_value(num_alpha / denom_singular, false, w.overflow_capped)
                             : DBL_MAX;
      w.xi.at(n, i) = alpha_defined
                          ? cap_value(num_xi / denom_singular, false, w.overflow_capped)
                          : DBL_MAX;
      w.beta.at(n, i) =
          beta_defined ? cap_value(num_alpha / l, false, w.overflow_capped) : DBL_MAX;
      w.phi_w.at(n, i) =
          beta_defined ? cap_value(num_xi / l, false, w.overflow_capped) : DBL_MAX;
    }
    if (beta_defined) {
      // Extrema over the closed domain: eta0 = 0 on the boundary maximizes the
      // beta numerator and minimizes the phi_w numerator.
      const double bstar = (e4m - e2m) / l;
      const double pstar = e2m / l;
      w.beta_star[static_cast<std::size_t>(n)] = cap_value(bstar, false, w.overflow_capped);
      w.phi_star[static_cast<std::size_t>(n)] = cap_value(pstar, false, w.overflow_capped);
      w.log_rho[static_cast<std::size_t>(n)] = params.s * bstar;
      w.rho[static_cast<std::size_t>(n)] =
          cap_value(std::exp(params.s * bstar), false, w.overflow_capped);
    }
  }
  return w;
}

WeightedTargetNorm weighted_target_norm(const Grid& g, const Regions& regions,
                                        const SpaceTimeField& yd,
                                        const CarlemanWeights& weights) {
  const int nt = g.n_steps;
  const int nx = g.n_interior();
  if (yd.nt != nt + 1 || yd.nx != nx) throw SpecError("weighted_target_norm: shape mismatch");

  // log of dx * sum_{O_d} yd(n,.)^2 per time node (time nodes 0..nt-1 only:
  // the weight is not defined at t = T).
  std::vector<double> log_mass(static_cast<std::size_t>(nt), -kInf);
  for (int n = 0; n < nt; ++n) {
    double s = 0.0;
    for (int i = 0; i < nx; ++i) {
      if (!regions.O_d.contains(i)) continue;
      const double v = yd.at(n, i);
      s += v * v;
    }
    if (s > 0.0) log_mass[static_cast<std::size_t>(n)] = std::log(s * g.dx);
  }

  auto term = [&](int n, double wt) {
    return std::log(wt) + 2.0 * weights.log_rho[static_cast<std::size_t>(n)] +
           log_mass[static_cast<std::size_t>(n)];
  };

  std::vector<double> fine;
  fine.reserve(static_cast<std::size_t>(nt));
  for (int n = 0; n < nt; ++n) {
    const double wt = (n == 0 || n == nt - 1) ? 0.5 * g.dt : g.dt;
    if (log_mass[static_cast<std::size_t>(n)] > -kInf) fine.push_back(term(n, wt));
  }
  const double lse_fine = log_sum_exp(fine);

  WeightedTargetNorm out;
  out.log_value = 0.5 * lse_fine;
  out.value = std::exp(out.log_value);

  // Subsampled (2*dt) quadrature ending strictly before the finest interval:
  // a rho-integrable target leaves the ratio near 1, a divergent one lets the
  // last interval dominate.
  const int fine_end = nt - 1;
  const int coarse_end = (fine_end - 1) % 2 == 0 ? fine_end - 1 : fine_end - 2;
  if (coarse_end >= 2) {
    std::vector<double> coarse;
    for (int n = 0; n <= coarse_end; n += 2) {
      const double wt = (n == 0 || n == coarse_end) ? g.dt : 2.0 * g.dt;
      if (log_mass[static_cast<std::size_t>(n)] > -kInf) coarse.push_back(term(n, wt));
    }
    const double lse_coarse = log_sum_exp(coarse);
    if (lse_fine == -kInf && lse_coarse == -kInf) {
      out.tail_ratio = 1.0;
    } else {
      const double d = lse_fine - lse_coarse;
      out.tail_ratio = std::isnan(d) ? kInf : std::exp(d);
    }
  }
  out.divergent = !std::isfinite(out.value) || out.tail_ratio > 4.0;
  return out;
}

SpaceTimeField decaying_target_profile(const Grid& g, const CarlemanWeights& weights,
                                       double rate) {
  if (!(rate > 0.0)) throw SpecError("decaying_target_profile: rate must be positive");
  SpaceTimeField yd(g.n_steps + 1, g.n_interior());
  for (int n = 0; n <= g.n_steps; ++n) {
    const double v = std::exp(-rate * weights.log_rho[static_cast<std::size_t>(n)]);
    for (int i = 0; i < yd.nx; ++i) yd.at(n, i) = v;
  }
  return yd;
}

ObservabilityRatio observability_ratio(const Grid& g, const Regions& regions,
                                       const MidField& a, const MidField& c,
                                       const std::vector<double>& phiT,
                                       const RobustParams& params,
                                       const CarlemanWeights& weights,
                                       const SweepOpts& opts) {
  const int nx = g.n_interior();
  const int nt = g.n_steps;
  if (static_cast<int>(phiT.size()) != nx) throw SpecError("observability_ratio: phiT size");

  ObservabilityRatio out;
  const double norm0 = norm_Omega(g, phiT);
  if (norm0 == 0.0) {
    out.undefined = true;
    return out;
  }
  std::vector<double> u(phiT);
  for (double& v : u) v /= norm0;

  const AdjointPairSolution pair = solve_adjoint_pair(g, regions, a, c, u, params, opts);
  if (!pair.report.converged) {
    throw SolverError("observability_ratio: adjoint-pair sweep did not converge");
  }

  const std::vector<double> phi0 = slice(pair.phi, 0);
  double lhs = inner_product_Omega(g, phi0, phi0);
  for (int n = 0; n < nt; ++n) {
    // log-space midpoint value of rho^{-2} on the interval; exactly zero on
    // the final interval where log_rho(T) = +inf.
    const double wgt = std::exp(-(weights.log_rho[static_cast<std::size_t>(n)] +
                                  weights.log_rho[static_cast<std::size_t>(n) + 1]));
    if (wgt == 0.0) continue;
    double sx = 0.0;
    for (int i = 0; i < nx; ++i) {
      const double mid = 0.5 * (pair.theta.at(n, i) + pair.theta.at(n + 1, i));
      sx += mid * mid;
    }
    lhs += g.dt * wgt * sx * g.dx;
  }

  out.lhs = lhs;
  out.rhs = inner_product_Q(g, pair.phi, pair.phi, &regions.omega);
  if (out.rhs == 0.0) {
    out.undefined = true;
    return out;
  }
  out.ratio = out.lhs / out.rhs;
  return out;
}

namespace {

ObservabilityBattery run_battery(const Grid& g, const Regions& regions, const MidField& a,
                                 const MidField& c, const RobustParams& params,
                                 const CarlemanWeights& weights, int n_samples,
                                 std::uint64_t seed, const SweepOpts& opts, bool parallel) {
  if (n_samples < 0) throw SpecError("observability_battery: negative sample count");
  ObservabilityBattery out;
  out.ratios.assign(static_cast<std::size_t>(n_samples),
                    std::numeric_limits<double>::quiet_NaN());

  auto one_sample = [&](int k) {
    std::mt19937_64 eng(mix_seed(seed, static_cast<std::uint64_t>(k)));
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::vector<double> phiT(static_cast<std::size_t>(g.n_interior()));
    for (double& v : phiT) v = gauss(eng);
    try {
      const ObservabilityRatio r =
          observability_ratio(g, regions, a, c, phiT, params, weights, opts);
      if (!r.undefined) out.ratios[static_cast<std::size_t>(k)] = r.ratio;
    } catch (const SolverError&) {
      // leave the slot NaN: counted as undefined below
    }
  };

  if (parallel) {
#pragma omp parallel for schedule(dynamic)
    for (int k = 0; k < n_samples; ++k) one_sample(k);
  } else {
    for (int k = 0; k < n_samples; ++k) one_sample(k);
  }

  double mx = -kInf;
  double mn = kInf;
  for (double r : out.ratios) {
    if (std::isnan(r)) {
      ++out.undefined_count;
      continue;
    }
    mx = std::max(mx, r);
    mn = std::min(mn, r);
  }
  if (out.undefined_count < n_samples) {
    out.max_ratio = mx;
    out.min_ratio = mn;
  }
  return out;
}

}  // namespace

ObservabilityBattery observability_battery(const Grid& g, const Regions& regions,
                                           const MidField& a, const MidField& c,
                                           const RobustParams& params,
                                           const CarlemanWeights& weights, int n_samples,
                                           std::uint64_t seed, const SweepOpts& opts) {
  return run_battery(g, regions, a, c, params, weights, n_samples, seed, opts, true);
}

ObservabilityBattery observability_battery_serial(const Grid& g, const Regions& regions,
                                                  const MidField& a, const MidField& c,
                                                  const RobustParams& params,
                                                  const CarlemanWeights& weights,
                                                  int n_samples, std::uint64_t seed,
                                                  const SweepOpts& opts) {
  return run_battery(g, regions, a, c, params, weights, n_samples, seed, opts, false);
}

}  // namespace heatctrl
