#pragma once

// Problem configuration: a flat, human-readable key-value format, collected
// validation (every violation reported, not just the first), a canonical
// serialization, and an FNV-1a content hash that identifies a run's inputs.
//
// File format: one `key = value` pair per line; `#` starts a comment (full
// line or trailing); blank lines are ignored; multi-component values are
// whitespace-separated. Unknown and duplicate keys are validation errors.
// Every key has a documented default, so the empty file is a valid spec.

#include <cstdint>
#include <string>
#include <vector>

#include "heatctrl/carleman.hpp"
#include "heatctrl/coupled.hpp"
#include "heatctrl/follower.hpp"
#include "heatctrl/grid.hpp"
#include "heatctrl/hierarchy.hpp"
#include "heatctrl/leader.hpp"
#include "heatctrl/pde.hpp"

namespace heatctrl {

struct NonlinearityChoice {
  enum class Kind { linear, tanh, table };
  Kind kind = Kind::linear;
  double coefficient = 0.0;  // linear: f(s) = coefficient * s
  double scale = 0.5;        // tanh: f(s) = scale * tanh(s)
  std::vector<double> knots;   // table: strictly increasing, bracketing 0
  std::vector<double> values;  // table: f at the knots
};

struct InitialChoice {
  enum class Kind { zero, sine, gaussian, file };
  Kind kind = Kind::sine;
  int mode = 1;          // sine: sin(mode*pi*(x-x_lo)/(x_hi-x_lo))
  double center = 0.5;   // gaussian
  double width = 0.1;    // gaussian
  std::string path;      // file: CSV x,value rows for the interior nodes
};

struct TargetChoice {
  enum class Kind { zero, decay, file };
  Kind kind = Kind::zero;
  double rate = 1.0;   // decay: yd(x,t) = exp(-rate*t) sin(pi*(x-x_lo)/(x_hi-x_lo))
  std::string path;    // file: CSV t,x,value rows in node order
};

struct ProblemSpec {
  // geometry
  double x_lo = 0.0;
  double x_hi = 1.0;
  int n_cells = 32;
  double horizon = 0.5;
  int n_steps = 32;
  double omega_lo = 0.1, omega_hi = 0.4;  // leader control region
  double o_lo = 0.6, o_hi = 0.9;          // follower control region
  double od_lo = 0.3, od_hi = 0.7;        // tracking observation region

  // problem data
  NonlinearityChoice nonlinearity;
  InitialChoice y0;
  TargetChoice yd;
  double ell = 10.0;
  double gamma = 10.0;
  double epsilon = 1e-3;
  bool has_box = false;
  AdmissibleBox box;

  // weight diagnostics
  double carleman_lambda = 2.0;
  double carleman_sigma2 = 1.0;
  double carleman_M = 0.0;
  double carleman_s = 0.0;  // 0: sit exactly on the admissibility threshold
  int observability_samples = 32;

  // solver controls
  std::string penalty = "quadratic";  // or "exact_norm"
  double sweep_tol = 1e-12;
  int max_sweeps = 400;
  double cg_tol = 1e-10;
  int max_cg = 500;
  double picard_tol = 1e-12;
  int max_picard = 100;
  double outer_tol = 1e-6;
  int max_outer = 50;
  int n_quad = 2000;
  std::uint64_t seed = 42;
};

struct LoadResult {
  ProblemSpec spec;
  std::vector<std::string> errors;  // empty iff the spec is valid
  bool ok() const { return errors.empty(); }
};

// Parse + validate; collects every parse error (with 1-based line numbers)
// and every validation violation instead of stopping at the first.
LoadResult parse_spec_text(const std::string& text);
// Reads the file and delegates to parse_spec_text; a missing/unreadable file
// is reported as a single error.
LoadResult load_spec(const std::string& path);

// Validation only (used on programmatically built specs). Returns the full
// violation list; empty means valid.
std::vector<std::string> validate_spec(const ProblemSpec& spec);

// Canonical serialization: every field, fixed order, %.17g floats. Two specs
// serialize identically iff they describe the same run inputs.
std::string canonical_spec_text(const ProblemSpec& spec);
// FNV-1a 64-bit hash of the canonical serialization, and its 16-hex-digit
// rendering (the `# spec_hash=` stamp carried by every emitted CSV).
std::uint64_t spec_hash(const ProblemSpec& spec);
std::string spec_hash_hex(const ProblemSpec& spec);

// Materialization of the validated spec into solver inputs. File-backed
// selectors read their data here and throw SpecError on missing/malformed
// content.
Grid spec_grid(const ProblemSpec& spec);
Regions spec_regions(const ProblemSpec& spec, const Grid& g);
Nonlinearity spec_nonlinearity(const ProblemSpec& spec);
std::vector<double> spec_initial(const ProblemSpec& spec, const Grid& g);
SpaceTimeField spec_target(const ProblemSpec& spec, const Grid& g);

// Long-format trajectory reader: `t,x,value` rows in node order (time-major),
// `#` comment lines and one optional header row allowed — the exact layout
// the harness emits. Coordinates are checked against the grid. Values parsed
// with strtod round-trip the emitted %.17g text bit-for-bit.
SpaceTimeField read_trajectory_csv(const std::string& path, const Grid& g);
RobustParams spec_robust_params(const ProblemSpec& spec);
CarlemanParams spec_carleman_params(const ProblemSpec& spec);
SweepOpts spec_sweep_opts(const ProblemSpec& spec);
LeaderOpts spec_leader_opts(const ProblemSpec& spec);
HierarchyOpts spec_hierarchy_opts(const ProblemSpec& spec);

}  // namespace heatctrl
