#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include <doctest.h>

#include "heatctrl/carleman.hpp"
#include "heatctrl/common.hpp"
#include "heatctrl/coupled.hpp"
#include "heatctrl/grid.hpp"
#include "test_util.hpp"

using namespace heatctrl;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

struct Instance {
  Grid g;
  Regions r;
};

Instance make_instance(int n_cells, int n_steps, double horizon = 0.5) {
  Instance inst{make_grid(0.0, 1.0, n_cells, horizon, n_steps), {}};
  inst.r.omega = make_mask(inst.g, "omega", 0.1, 0.4);
  inst.r.O = make_mask(inst.g, "O", 0.6, 0.9);
  inst.r.O_d = make_mask(inst.g, "O_d", 0.3, 0.7);
  validate_geometry(inst.g, inst.r);
  return inst;
}

// Low-exponent parameters: s sits on the threshold for a small sigma2 and a
// gentle lambda, so rho stays within double range and the rho^{-2} factor of
// the observability quotient is macroscopic instead of underflowing.
CarlemanParams mild_params(double horizon) {
  return default_carleman_params(horizon, 0.0, 0.3, 0.05);
}

CarlemanWeights desk_weights(const Instance& inst, const CarlemanParams& p) {
  return build_weights(build_eta0(inst.g, default_bump(inst.r)), inst.g, p);
}

SpaceTimeField constant_field(const Grid& g, double v) {
  SpaceTimeField f = zero_field(g);
  for (double& x : f.data) x = v;
  return f;
}

}  // namespace

TEST_CASE("admissibility threshold: frozen value and parameter validation") {
  // s2(T, M, s2-scale) = scale*(T + T^2 + T^2*(2 M^{2/3} + sqrt(2M)))
  CHECK(s2_threshold(0.5, 0.0, 1.0) == doctest::Approx(0.75).epsilon(1e-15));
  // Hand-evaluated for T=0.5, M=2: 2^{2/3} = 1.5874010519682, sqrt(4) = 2,
  // 0.75 + 0.25*(2*1.5874010519682 + 2) = 2.0437005259841.
  CHECK(s2_threshold(0.5, 2.0, 1.0) == doctest::Approx(2.0437005259841).epsilon(1e-12));
  // Scale linearity in sigma2.
  CHECK(s2_threshold(0.5, 2.0, 3.0) ==
        doctest::Approx(3.0 * s2_threshold(0.5, 2.0, 1.0)).epsilon(1e-15));

  const CarlemanParams def = default_carleman_params(0.5);
  CHECK(def.s == doctest::Approx(0.75).epsilon(1e-15));
  CHECK_NOTHROW(def.validate(0.5));

  CarlemanParams bad = def;
  bad.s = 0.9 * s2_threshold(0.5, bad.M, bad.sigma2);
  CHECK_THROWS_AS(bad.validate(0.5), SpecError);
  bad = def;
  bad.lambda = -1.0;
  CHECK_THROWS_AS(bad.validate(0.5), SpecError);
  bad = def;
  bad.M = -0.5;
  CHECK_THROWS_AS(bad.validate(0.5), SpecError);
  CHECK_THROWS_AS(def.validate(0.0), SpecError);
}

TEST_CASE("eta0: endpoint zeros, interior positivity, centered symmetry") {
  const BumpInterval centered{0.45, 0.55};
  CHECK(eta0_value(0.0, 0.0, 1.0, centered) == 0.0);
  CHECK(eta0_value(1.0, 0.0, 1.0, centered) == 0.0);

  const Grid g = make_grid(0.0, 1.0, 16, 0.5, 8);
  const std::vector<double> eta = build_eta0(g, centered);
  for (double v : eta) CHECK(v > 0.0);
  // Normalization: the analytic maximum is 1, so grid values stay below it
  // and the nodes nearest the critical point come close.
  const double mx = *std::max_element(eta.begin(), eta.end());
  CHECK(mx <= 1.0);
  CHECK(mx > 0.95);

  // (0.45+0.55)/2 is 0.5 only up to rounding, so symmetry holds to ~1e-14.
  for (int i = 0; i < g.n_interior(); ++i) {
    const std::size_t j = static_cast<std::size_t>(g.n_interior() - 1 - i);
    CHECK(testutil::rel_err(eta[static_cast<std::size_t>(i)], eta[j]) < 1e-14);
  }
  // With a bump whose endpoints are exact binary fractions the center is
  // exactly 1/2, mu is exactly zero, and node pairs match bitwise.
  const std::vector<double> eta2 = build_eta0(g, BumpInterval{0.4375, 0.5625});
  for (int i = 0; i < g.n_interior(); ++i) {
    CHECK(eta2[static_cast<std::size_t>(i)] ==
          eta2[static_cast<std::size_t>(g.n_interior() - 1 - i)]);
  }
}

TEST_CASE("eta0: off-center bump has its single critical point inside the bump") {
  const Instance inst = make_instance(64, 8);
  const BumpInterval bump = default_bump(inst.r);
  // Middle third of omega ∩ O_d = (0.3, 0.4).
  CHECK(bump.lo == doctest::Approx(0.3 + 0.1 / 3.0).epsilon(1e-14));
  CHECK(bump.hi == doctest::Approx(0.4 - 0.1 / 3.0).epsilon(1e-14));

  std::vector<double> der;
  const std::vector<double> eta = build_eta0(inst.g, bump, &der);

  double min_outside = kInf;
  for (int i = 0; i < inst.g.n_interior(); ++i) {
    const double x = inst.g.x(i);
    const double d = der[static_cast<std::size_t>(i)];
    if (x < bump.lo) {
      CHECK(d > 0.0);
      min_outside = std::min(min_outside, std::abs(d));
    } else if (x > bump.hi) {
      CHECK(d < 0.0);
      min_outside = std::min(min_outside, std::abs(d));
    }
  }
  CHECK(min_outside > 0.0);

  // The analytic derivative changes sign exactly once on a fine scan.
  int sign_changes = 0;
  double prev = eta0_derivative(1e-6, 0.0, 1.0, bump);
  for (int k = 1; k <= 2000; ++k) {
    const double x = 1e-6 + (1.0 - 2e-6) * k / 2000.0;
    const double d = eta0_derivative(x, 0.0, 1.0, bump);
    if (prev > 0.0 && d < 0.0) ++sign_changes;
    if (prev < 0.0 && d > 0.0) ++sign_changes;
    if (d != 0.0) prev = d;
  }
  CHECK(sign_changes == 1);

  // Derivative against a central difference of the value (independent oracle).
  // x = 0.35 is the critical point itself (derivative ~ 0), so probe away
  // from it.
  for (double x : {0.11, 0.28, 0.62, 0.93}) {
    const double tau = 1e-6;
    const double fd = (eta0_value(x + tau, 0.0, 1.0, bump) -
                       eta0_value(x - tau, 0.0, 1.0, bump)) /
                      (2.0 * tau);
    CHECK(testutil::rel_err(eta0_derivative(x, 0.0, 1.0, bump), fd) < 1e-8);
  }

  CHECK_THROWS_AS(build_eta0(inst.g, BumpInterval{0.0, 0.2}), SpecError);
  CHECK_THROWS_AS(build_eta0(inst.g, BumpInterval{0.9, 1.0}), SpecError);
  CHECK_THROWS_AS(build_eta0(inst.g, BumpInterval{0.5, 0.4}), SpecError);
}

TEST_CASE("l(t): plateau value, continuity at the switch, decay beyond") {
  const double T = 0.5;
  CHECK(carleman_l(0.0, T) == T * T / 4.0);
  CHECK(carleman_l(0.5 * T, T) == T * T / 4.0);
  CHECK(carleman_l(0.5 * T + 1e-12, T) ==
        doctest::Approx(T * T / 4.0).epsilon(1e-9));
  CHECK(carleman_l(0.4, T) == doctest::Approx(0.4 * 0.1).epsilon(1e-15));
  CHECK(carleman_l(T, T) == 0.0);
}

TEST_CASE("weights: positivity, shared tail formula, extrema, monotone rho") {
  const Instance inst = make_instance(24, 16);
  const Grid& g = inst.g;
  const CarlemanParams params = default_carleman_params(g.horizon);
  const std::vector<double> eta = build_eta0(g, default_bump(inst.r));
  const CarlemanWeights w = build_weights(eta, g, params);

  const double m = w.eta0_max;
  CHECK(m == *std::max_element(eta.begin(), eta.end()));
  const double e4m = std::exp(4.0 * params.lambda * m);
  const double e2m = std::exp(2.0 * params.lambda * m);

  for (int n = 0; n <= g.n_steps; ++n) {
    const bool alpha_defined = n > 0 && n < g.n_steps;
    const bool beta_defined = n < g.n_steps;
    double beta_max = 0.0;
    double phi_min = kInf;
    for (int i = 0; i < g.n_interior(); ++i) {
      if (alpha_defined) {
        CHECK(w.alpha.at(n, i) > 0.0);
        CHECK(w.xi.at(n, i) > 0.0);
      }
      if (beta_defined) {
        CHECK(w.beta.at(n, i) > 0.0);
        CHECK(w.phi_w.at(n, i) > 0.0);
        beta_max = std::max(beta_max, w.beta.at(n, i));
        phi_min = std::min(phi_min, w.phi_w.at(n, i));
      }
      // beta and alpha (phi_w and xi) share their formula once l(t) = t(T-t).
      if (alpha_defined && g.t(n) >= 0.5 * g.horizon) {
        CHECK(w.beta.at(n, i) == w.alpha.at(n, i));
        CHECK(w.phi_w.at(n, i) == w.xi.at(n, i));
      }
    }
    if (beta_defined) {
      // Direct-scan extrema over the closed domain: the boundary (eta0 = 0)
      // realizes both, so the stars dominate the interior scan and equal the
      // boundary formula exactly.
      const double l = carleman_l(g.t(n), g.horizon);
      CHECK(w.beta_star[static_cast<std::size_t>(n)] == (e4m - e2m) / l);
      CHECK(w.phi_star[static_cast<std::size_t>(n)] == e2m / l);
      CHECK(w.beta_star[static_cast<std::size_t>(n)] >= beta_max);
      CHECK(w.phi_star[static_cast<std::size_t>(n)] <= phi_min);
    }
  }

  // rho: constant on [0, T/2], nondecreasing, blowing up toward T.
  const int half = g.n_steps / 2;
  for (int n = 0; n <= half; ++n) {
    CHECK(w.log_rho[static_cast<std::size_t>(n)] == w.log_rho[0]);
  }
  for (int n = 0; n + 1 < g.n_steps; ++n) {
    CHECK(w.log_rho[static_cast<std::size_t>(n) + 1] >=
          w.log_rho[static_cast<std::size_t>(n)]);
  }
  CHECK(w.log_rho[static_cast<std::size_t>(g.n_steps) - 1] > 2.0 * w.log_rho[0]);
  CHECK(w.log_rho[static_cast<std::size_t>(g.n_steps)] == kInf);
  CHECK(std::isfinite(w.log_rho[static_cast<std::size_t>(g.n_steps) - 1]));

  // Default parameters put s*beta_star in the tens of thousands: the linear
  // rho overflows and is capped with the flag set.
  CHECK(w.log_rho[0] > 700.0);
  CHECK(w.overflow_capped);
  CHECK(w.rho[0] == std::numeric_limits<double>::max());

  // Mild parameters keep everything within range.
  const CarlemanWeights mild = desk_weights(inst, mild_params(g.horizon));
  CHECK_FALSE(mild.overflow_capped);
  for (int n = 0; n < g.n_steps; ++n) {
    CHECK(std::isfinite(mild.rho[static_cast<std::size_t>(n)]));
    CHECK(mild.rho[static_cast<std::size_t>(n)] ==
          std::exp(mild.log_rho[static_cast<std::size_t>(n)]));
  }

  CHECK_THROWS_AS(build_weights(std::vector<double>(5, 0.5), g, params), SpecError);
}

TEST_CASE("weighted target norm: zero target, exact constant-integrand value") {
  const Instance inst = make_instance(16, 16);
  const CarlemanWeights w = desk_weights(inst, mild_params(inst.g.horizon));

  const WeightedTargetNorm zero = weighted_target_norm(inst.g, inst.r, zero_field(inst.g), w);
  CHECK(zero.value == 0.0);
  CHECK_FALSE(zero.divergent);
  CHECK(zero.tail_ratio == 1.0);

  // rate 1 makes the weighted integrand rho^{2(1-1)} = 1 exactly, so the
  // quadrature value is |O_d| * (T - dt) to rounding (trapezoid of a constant
  // over the defined time nodes) and the stability probe stays quiet.
  const SpaceTimeField yd1 = decaying_target_profile(inst.g, w, 1.0);
  const WeightedTargetNorm unit = weighted_target_norm(inst.g, inst.r, yd1, w);
  const double expect =
      inst.r.O_d.measure(inst.g) * (inst.g.horizon - inst.g.dt);
  CHECK(unit.value * unit.value == doctest::Approx(expect).epsilon(1e-12));
  CHECK_FALSE(unit.divergent);
  CHECK(unit.tail_ratio < 1.2);
}

TEST_CASE("weighted target norm: admissible decaying target, independent quadrature") {
  // Oracle first: the rate-2 profile has weighted integrand exp(-2 s beta*),
  // so the squared norm is |O_d| * integral_0^{T-dt} exp(-2 s beta*(t)) dt,
  // evaluated here by fine trapezoid on the analytic beta* formula.
  const Instance inst = make_instance(16, 64);
  const Grid& g = inst.g;
  const CarlemanParams p = mild_params(g.horizon);
  const std::vector<double> eta = build_eta0(g, default_bump(inst.r));
  const CarlemanWeights w = build_weights(eta, g, p);

  const double m = *std::max_element(eta.begin(), eta.end());
  const double num = std::exp(4.0 * p.lambda * m) - std::exp(2.0 * p.lambda * m);
  auto integrand = [&](double t) {
    return std::exp(-2.0 * p.s * num / carleman_l(t, g.horizon));
  };
  const double t_end = g.horizon - g.dt;
  const int fine = 200000;
  double oracle = 0.5 * (integrand(0.0) + integrand(t_end));
  for (int k = 1; k < fine; ++k) oracle += integrand(t_end * k / fine);
  oracle *= (t_end / fine) * inst.r.O_d.measure(g);

  const SpaceTimeField yd = decaying_target_profile(g, w, 2.0);
  const WeightedTargetNorm got = weighted_target_norm(g, inst.r, yd, w);
  CHECK_FALSE(got.divergent);
  CHECK(got.value > 0.0);
  CHECK(std::isfinite(got.value));
  CHECK(testutil::rel_err(got.value * got.value, oracle) < 0.05);

  // Grid stability: refining the time grid moves the value less and less.
  double prev_value = got.value;
  double prev_diff = kInf;
  for (int nt : {128, 256}) {
    const Instance fine_inst = make_instance(16, nt);
    const CarlemanWeights wf =
        build_weights(build_eta0(fine_inst.g, default_bump(fine_inst.r)), fine_inst.g, p);
    const SpaceTimeField ydf = decaying_target_profile(fine_inst.g, wf, 2.0);
    const WeightedTargetNorm r = weighted_target_norm(fine_inst.g, fine_inst.r, ydf, wf);
    CHECK_FALSE(r.divergent);
    const double diff = std::abs(r.value - prev_value);
    CHECK(diff < prev_diff);
    prev_diff = diff;
    prev_value = r.value;
  }
}

TEST_CASE("weighted target norm: divergent targets are flagged") {
  const Instance inst = make_instance(16, 128);
  const CarlemanParams p = mild_params(inst.g.horizon);
  const CarlemanWeights w = desk_weights(inst, p);

  // Non-decaying target: the weighted integrand grows like exp(2 s beta*)
  // toward T, so the finest interval dominates the subsampled quadrature.
  const WeightedTargetNorm ones =
      weighted_target_norm(inst.g, inst.r, constant_field(inst.g, 1.0), w);
  CHECK(ones.divergent);
  CHECK(std::isfinite(ones.value));  // flagged by the refinement probe, not overflow
  CHECK(ones.tail_ratio > 4.0);

  // Sub-critical decay rate: integrand still grows like exp(s beta*).
  const SpaceTimeField slow = decaying_target_profile(inst.g, w, 0.5);
  const WeightedTargetNorm half = weighted_target_norm(inst.g, inst.r, slow, w);
  CHECK(half.divergent);

  // Default-scale parameters overflow outright on a constant target.
  const Instance small = make_instance(16, 16);
  const CarlemanWeights wd = desk_weights(small, default_carleman_params(small.g.horizon));
  const WeightedTargetNorm big =
      weighted_target_norm(small.g, small.r, constant_field(small.g, 1.0), wd);
  CHECK(big.divergent);
  CHECK_FALSE(std::isfinite(big.value));

  CHECK_THROWS_AS(decaying_target_profile(inst.g, w, 0.0), SpecError);
  CHECK_THROWS_AS(decaying_target_profile(inst.g, w, -1.0), SpecError);
}

TEST_CASE("observability ratio: undefined at zero, scale-invariant, finite battery") {
  const Instance inst = make_instance(16, 16);
  const Grid& g = inst.g;
  const MidField a = mid_zero(g);
  const MidField c = mid_zero(g);
  RobustParams params;
  params.ell = 10.0;
  params.gamma = 10.0;
  const CarlemanWeights w = desk_weights(inst, mild_params(g.horizon));

  const ObservabilityRatio at_zero = observability_ratio(
      g, inst.r, a, c, std::vector<double>(static_cast<std::size_t>(g.n_interior()), 0.0),
      params, w);
  CHECK(at_zero.undefined);

  auto eng = testutil::rng(404);
  const std::vector<double> phiT = testutil::random_vector(g, eng);
  const ObservabilityRatio base = observability_ratio(g, inst.r, a, c, phiT, params, w);
  CHECK_FALSE(base.undefined);
  CHECK(base.ratio > 0.0);
  CHECK(std::isfinite(base.ratio));
  CHECK(base.lhs > 0.0);
  CHECK(base.rhs > 0.0);

  for (double lam : {7.3, -2.0, 1e4}) {
    std::vector<double> scaled = phiT;
    for (double& v : scaled) v *= lam;
    const ObservabilityRatio r = observability_ratio(g, inst.r, a, c, scaled, params, w);
    CHECK_FALSE(r.undefined);
    CHECK(testutil::rel_err(r.ratio, base.ratio) < 1e-12);
  }

  const ObservabilityBattery mc =
      observability_battery(g, inst.r, a, c, params, w, 100, 2026);
  CHECK(mc.undefined_count == 0);
  CHECK(static_cast<int>(mc.ratios.size()) == 100);
  CHECK(std::isfinite(mc.max_ratio));
  CHECK(mc.max_ratio >= mc.min_ratio);
  CHECK(mc.min_ratio > 0.0);
  for (double r : mc.ratios) {
    CHECK(std::isfinite(r));
    CHECK(r > 0.0);
  }

  // The parallel battery and the loop-serial reference agree bitwise, and the
  // battery is reproducible from its seed.
  const ObservabilityBattery serial =
      observability_battery_serial(g, inst.r, a, c, params, w, 100, 2026);
  REQUIRE(serial.ratios.size() == mc.ratios.size());
  for (std::size_t k = 0; k < mc.ratios.size(); ++k) {
    CHECK(mc.ratios[k] == serial.ratios[k]);
  }
  CHECK(mc.max_ratio == serial.max_ratio);
  const ObservabilityBattery again =
      observability_battery(g, inst.r, a, c, params, w, 100, 2026);
  CHECK(again.max_ratio == mc.max_ratio);
  CHECK(again.min_ratio == mc.min_ratio);
}

TEST_CASE("observability ratio: shrinking omega raises the empirical constant") {
  const Instance inst = make_instance(16, 16);
  const Grid& g = inst.g;
  const MidField a = mid_zero(g);
  const MidField c = mid_zero(g);
  RobustParams params;
  params.ell = 10.0;
  params.gamma = 10.0;
  const CarlemanWeights w = desk_weights(inst, mild_params(g.horizon));

  Instance tiny = inst;
  tiny.r.omega = make_mask(g, "omega", 0.3, 0.32);  // exactly one interior node
  REQUIRE(tiny.r.omega.node_count() == 1);
  validate_geometry(g, tiny.r);

  const ObservabilityBattery wide =
      observability_battery(g, inst.r, a, c, params, w, 20, 77);
  const ObservabilityBattery narrow =
      observability_battery(g, tiny.r, a, c, params, w, 20, 77);
  CHECK(wide.undefined_count == 0);
  CHECK(narrow.undefined_count == 0);
  CHECK(narrow.max_ratio > wide.max_ratio);
}
