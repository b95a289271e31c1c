#pragma once

// Experiment orchestration on top of the solver library: subcommand runners
// that emit CSV files and a plain-text report, the invariant-suite runner,
// and the command-line entry point.
//
// Subcommands (each takes a validated ProblemSpec and an output directory):
//   follower      robust saddle under a fixed leader control (zero by
//                 default, or replayed from an emitted control CSV)
//   leader        penalized null control for linear dynamics, plus an
//                 epsilon sweep {10e, e, e/10}
//   full          the two-stage loop: semilinear fixed-point hierarchy, or
//                 the projected variant when the spec carries a box
//   observability weight construction and the Monte-Carlo observability
//                 battery
//   check         the invariant suite at 16x16 and 32x32 scales
//
// Determinism: all randomness flows from the spec's seed; identical spec and
// seed produce byte-identical CSV files (the report carries wall-clock
// timings and is exempt). Every CSV starts with `# spec_hash=<hex>` and a
// header row naming its columns.

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "heatctrl/config.hpp"

namespace heatctrl {

// One leader solve per epsilon; summaries only (trajectories are dropped).
struct SweepEntry {
  double epsilon = 0.0;
  double terminal_norm = 0.0;
  double uncontrolled_terminal_norm = 0.0;
  double h_norm = 0.0;
  double reduction_factor = 0.0;  // uncontrolled / terminal
  int cg_iterations = 0;
  bool converged = false;
};

// Entries are independent pure solves: the parallel driver distributes them
// across OpenMP threads and stores by index, so it matches the serial twin
// bitwise at any thread count. Results are sorted by decreasing epsilon
// before return (aggregation is order-independent).
std::vector<SweepEntry> run_epsilon_sweep(const Grid& g, const Regions& regions,
                                          const MidField& a, const MidField& c,
                                          const std::vector<double>& y0,
                                          const SpaceTimeField& yd,
                                          const RobustParams& params,
                                          const std::vector<double>& epsilons,
                                          const LeaderOpts& opts);
std::vector<SweepEntry> run_epsilon_sweep_serial(const Grid& g, const Regions& regions,
                                                 const MidField& a, const MidField& c,
                                                 const std::vector<double>& y0,
                                                 const SpaceTimeField& yd,
                                                 const RobustParams& params,
                                                 const std::vector<double>& epsilons,
                                                 const LeaderOpts& opts);

struct StageTiming {
  std::string name;
  double seconds = 0.0;
};

struct CheckEntry {
  std::string name;
  std::string scale;  // "16x16" or "32x32"
  bool pass = false;
  std::string detail;
};

struct RunRecord {
  std::string subcommand;
  std::string spec_hash;  // 16 hex digits
  std::uint64_t seed = 0;
  std::vector<StageTiming> timings;
  // Named numeric summaries; non-finite entries are additionally listed in
  // `flagged` and rendered with an explicit flag in the report.
  std::vector<std::pair<std::string, double>> values;
  std::vector<std::string> flagged;
  std::vector<std::string> notes;
  std::vector<std::string> files_written;  // basenames, in emission order
  std::vector<CheckEntry> checks;          // `check` subcommand only
  bool solver_failure = false;
  std::string failure_reason;
};

// Appends a named numeric summary, flagging non-finite values.
void record_value(RunRecord& rec, const std::string& name, double value);

struct RunOptions {
  std::string out_dir;
  std::string h_csv;  // follower only: replay a leader-emitted control
};

// Executes one subcommand. Throws SpecError for invalid inputs (bad data
// files, subcommand/spec mismatches); solver non-convergence is recorded in
// the returned RunRecord (solver_failure) with partial outputs already
// written. Unknown subcommand names throw SpecError.
RunRecord run(const ProblemSpec& spec, const std::string& subcommand,
              const RunOptions& opts);

// The plain-text report persisted as run_report.txt.
std::string run_report_text(const RunRecord& rec);

// Full command-line surface: parses arguments (without the program name),
// loads and validates the spec, applies --seed/--scale overrides, dispatches
// run(), and maps outcomes to exit codes: 0 success, 1 validation failure,
// 2 solver non-convergence (or failed check entries), 3 internal error.
int cli_main(const std::vector<std::string>& args);

}  // namespace heatctrl
