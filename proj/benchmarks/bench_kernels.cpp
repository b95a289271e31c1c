// Timing comparison between the OpenMP-parallel kernels and their serial
// reference implementations. Each kernel is run best-of-three per variant
// and the outputs are cross-checked bitwise, so the benchmark doubles as an
// end-to-end sanity run. Build target: bench_kernels (not part of ctest).
//
// Usage: bench_kernels [repeats]   (default 3)

#include <bit>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <string>
#include <vector>
#include <omp.h>

#include "heatctrl/carleman.hpp"
#include "heatctrl/config.hpp"
#include "heatctrl/harness.hpp"
#include "heatctrl/hierarchy.hpp"

using namespace heatctrl;

namespace {

double time_best_of(int repeats, const std::function<void()>& fn) {
  double best = 1e300;
  for (int r = 0; r < repeats; ++r) {
    const auto t0 = std::chrono::steady_clock::now();
    fn();
    const auto t1 = std::chrono::steady_clock::now();
    best = std::min(best, std::chrono::duration<double, std::milli>(t1 - t0).count());
  }
  return best;
}

bool same_bits(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (std::bit_cast<std::uint64_t>(a[i]) != std::bit_cast<std::uint64_t>(b[i])) return false;
  }
  return true;
}

void report(const char* name, double serial_ms, double parallel_ms, bool bitwise) {
  std::printf("%-28s serial %9.2f ms   parallel %9.2f ms   speedup %5.2fx   bitwise %s\n",
              name, serial_ms, parallel_ms, serial_ms / parallel_ms,
              bitwise ? "OK" : "MISMATCH");
}

SpaceTimeField wave_field(const Grid& g, double amp) {
  const double pi = 3.14159265358979323846;
  SpaceTimeField f = zero_field(g);
  for (int n = 0; n <= g.n_steps; ++n) {
    const double t = n * g.dt;
    for (int i = 0; i < g.n_interior(); ++i) {
      const double x = g.x(i);
      f.at(n, i) = amp * std::sin(2.0 * pi * x) * std::cos(3.0 * pi * t / g.horizon);
    }
  }
  return f;
}

}  // namespace

int main(int argc, char** argv) {
  const int repeats = argc > 1 ? std::atoi(argv[1]) : 3;
  std::printf("threads available: %d, repeats per variant: %d\n\n", omp_get_max_threads(),
              repeats);
  bool all_bitwise = true;

  {
    // Kernel 1a: frozen linearization potentials (quadrature-heavy).
    const LoadResult lr =
        parse_spec_text("n_cells = 64\nn_steps = 256\nnonlinearity = tanh 0.5\n");
    const Grid g = spec_grid(lr.spec);
    const Nonlinearity f = spec_nonlinearity(lr.spec);
    const SpaceTimeField z = wave_field(g, 2.0);
    LinearizedPotentials serial, parallel;
    const double ts =
        time_best_of(repeats, [&] { serial = build_linearized_potentials_serial(g, f, z, 2000); });
    const double tp =
        time_best_of(repeats, [&] { parallel = build_linearized_potentials(g, f, z, 2000); });
    const bool ok =
        same_bits(serial.a.data, parallel.a.data) && same_bits(serial.c.data, parallel.c.data);
    all_bitwise = all_bitwise && ok;
    report("linearized potentials", ts, tp, ok);
  }

  {
    // Kernel 1b: projection coefficients for the box-constrained variant.
    const LoadResult lr = parse_spec_text("n_cells = 64\nn_steps = 256\n");
    const Grid g = spec_grid(lr.spec);
    const RobustParams params = spec_robust_params(lr.spec);
    const SpaceTimeField q = wave_field(g, 1.0);
    AdmissibleBox box;
    box.e1_lo = -0.004;
    box.e1_hi = 0.004;
    box.e2_lo = -0.006;
    box.e2_hi = 0.006;
    CouplingCoefficients serial, parallel;
    const double ts = time_best_of(
        repeats, [&] { serial = build_projection_coefficients_serial(g, q, params, box); });
    const double tp = time_best_of(
        repeats, [&] { parallel = build_projection_coefficients(g, q, params, box); });
    const bool ok =
        same_bits(serial.sigma.data, parallel.sigma.data) && same_bits(serial.rho.data, parallel.rho.data);
    all_bitwise = all_bitwise && ok;
    report("projection coefficients", ts, tp, ok);
  }

  {
    // Kernel 2: observability Monte-Carlo battery.
    const LoadResult lr = parse_spec_text("n_cells = 32\nn_steps = 64\n");
    const Grid g = spec_grid(lr.spec);
    const Regions r = spec_regions(lr.spec, g);
    const RobustParams params = spec_robust_params(lr.spec);
    const CarlemanParams cp = default_carleman_params(g.horizon);
    const CarlemanWeights w = build_weights(build_eta0(g, default_bump(r)), g, cp);
    const MidField a = mid_zero(g);
    ObservabilityBattery serial, parallel;
    const double ts = time_best_of(repeats, [&] {
      serial = observability_battery_serial(g, r, a, a, params, w, 32, 2024, {});
    });
    const double tp = time_best_of(
        repeats, [&] { parallel = observability_battery(g, r, a, a, params, w, 32, 2024, {}); });
    const bool ok = same_bits(serial.ratios, parallel.ratios) &&
                    serial.undefined_count == parallel.undefined_count;
    all_bitwise = all_bitwise && ok;
    report("observability battery", ts, tp, ok);
  }

  {
    // Kernel 3: penalty-parameter sweep of full leader solves.
    const LoadResult lr = parse_spec_text("n_cells = 32\nn_steps = 32\n");
    const Grid g = spec_grid(lr.spec);
    const Regions r = spec_regions(lr.spec, g);
    const RobustParams params = spec_robust_params(lr.spec);
    const std::vector<double> y0 = spec_initial(lr.spec, g);
    const SpaceTimeField yd = spec_target(lr.spec, g);
    const MidField a = mid_zero(g);
    const std::vector<double> eps = {1e-2, 3e-3, 1e-3, 3e-4, 1e-4, 3e-5};
    std::vector<SweepEntry> serial, parallel;
    const double ts = time_best_of(
        repeats, [&] { serial = run_epsilon_sweep_serial(g, r, a, a, y0, yd, params, eps, {}); });
    const double tp = time_best_of(
        repeats, [&] { parallel = run_epsilon_sweep(g, r, a, a, y0, yd, params, eps, {}); });
    bool ok = serial.size() == parallel.size();
    for (std::size_t k = 0; ok && k < serial.size(); ++k) {
      ok = std::bit_cast<std::uint64_t>(serial[k].terminal_norm) ==
               std::bit_cast<std::uint64_t>(parallel[k].terminal_norm) &&
           std::bit_cast<std::uint64_t>(serial[k].h_norm) ==
               std::bit_cast<std::uint64_t>(parallel[k].h_norm);
    }
    all_bitwise = all_bitwise && ok;
    report("penalty sweep (6 solves)", ts, tp, ok);
  }

  std::printf("\n%s\n", all_bitwise ? "all kernels bitwise-consistent"
                                    : "BITWISE MISMATCH DETECTED");
  return all_bitwise ? 0 : 1;
}
