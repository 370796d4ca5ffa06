// Monte Carlo sweep driver: grid construction over SNR / phase-noise variance
// / subspace dimension, deterministic per-trial seeding, frame-structured
// trial execution (training, estimation, data detection, bound evaluation),
// aggregation into result rows, and CSV emission.
#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "relaysim/signal_model.hpp"
#include "relaysim/types.hpp"

namespace relaysim {

/// What a sweep evaluates per trial.
enum class sweep_mode {
  estimate, ///< training-phase estimation errors only
  detect,   ///< full chain: training, estimation, frame of data symbols, BER
  bound,    ///< hybrid Cramér–Rao bounds on matched instances
  all       ///< estimate + detect + bound on the same instances
};

/// Which receiver chain the detect phase runs.
enum class receiver_kind {
  proposed,    ///< joint estimator + iterative tracking detector
  pn_ignoring, ///< phase-noise-blind estimator + one-shot detector
  genie        ///< true channel knowledge + true per-symbol phase path
};

const char* to_string(sweep_mode mode);
const char* to_string(receiver_kind kind);
/// Parses the names produced by to_string (hyphen/underscore-insensitive);
/// throws std::invalid_argument on anything else.
sweep_mode sweep_mode_from(const std::string& name);
receiver_kind receiver_kind_from(const std::string& name);

/// One sweep request: the scenario template plus the grid, trial count, and
/// execution knobs. Grid points are (snr, pn_var, m) triples in row-major
/// order (snr outermost).
struct sweep_spec {
  sim_config base{};                                           ///< scenario template
  std::vector<double> snr_points{0, 5, 10, 15, 20, 25, 30, 35, 40}; ///< dB
  std::vector<double> pn_vars{1e-4}; ///< Wiener increment variances [rad^2]
  std::vector<int> m_values{32};     ///< phase-noise subspace dimensions
  int n_trials = 1;
  sweep_mode mode = sweep_mode::estimate;
  receiver_kind receiver = receiver_kind::proposed;
  int data_symbols = 20; ///< comb symbols per frame in detect modes
  int n_mc = 200;        ///< prior-average draws per bound evaluation
  std::uint64_t seed = 1;
  int jobs = 1; ///< worker threads per grid point (deterministic regardless)
  std::string out_path = "results.csv";

  /// Throws std::invalid_argument naming the offending field.
  void validate() const;
};

/// Aggregated results of one grid point. Fields a mode does not measure hold
/// quiet NaN; standard errors are sample-std/sqrt(n_trials) and NaN for a
/// single trial.
struct result_row {
  double snr_db = 0.0;
  double pn_var = 0.0;
  int m = 0;
  std::string mode;
  double mse_g = 0.0, mse_g_se = 0.0;
  double mse_h = 0.0, mse_h_se = 0.0;
  double mse_cfopn = 0.0, mse_cfopn_se = 0.0;
  double ber = 0.0, ber_se = 0.0;
  double hcrlb_g = 0.0, hcrlb_h = 0.0, hcrlb_cfopn = 0.0;
  double iters_mean = 0.0;
  long diverged_count = 0;
};

/// Per-trial measurements before aggregation; NaN marks unmeasured fields.
/// `iterations` counts estimator sweeps in estimate/all modes and mean
/// detection sweeps per symbol in detect mode.
struct trial_metrics {
  double mse_g, mse_h, mse_cfo_pn;
  double ber;
  double iterations;
  bool diverged = false;
  double bound_g, bound_h, bound_cfo_pn;

  trial_metrics();
};

/// Scenario for one grid point: the template with both transmit powers set to
/// 10^(snr_db/10), both phase-noise variances set to pn_var, the subspace
/// dimension set to m, and the pilot count raised to m when the template's
/// count would leave the tracker unidentifiable.
sim_config scenario_config(const sweep_spec& spec, double snr_db, double pn_var, int m);

/// Value-keyed grid-point key: depends only on the scenario values, so
/// reordering, subsetting, or extending the grid never changes any trial.
std::uint64_t grid_key(double snr_db, double pn_var, int m);

/// Seed of one trial, derived from (master seed, grid key, trial index).
std::uint64_t trial_seed(std::uint64_t master, std::uint64_t key, int trial);

/// Everything a trial draws before any mode-specific work: the link
/// realization, the two training symbols, the sub-seed for the bound's prior
/// average, and the generator state ready to continue with training noise and
/// data symbols. Every mode sees the identical instance for a given seed,
/// which is what makes estimator errors and bounds directly comparable across
/// sweeps sharing a seed.
struct trial_instance {
  link_state link;
  cvec s_src;
  cvec s_rel;
  std::uint64_t bound_seed = 0;
  std::mt19937_64 rng;
};

trial_instance draw_trial_instance(const sim_config& scenario, std::uint64_t seed);

/// Free-running oscillator phase for one frame: the Wiener path keeps
/// accumulating across cyclic-prefix gaps and symbol boundaries instead of
/// re-anchoring, so later symbols carry the frame's accumulated drift.
struct frame_oscillator {
  double step_var = 0.0;
  double current = 0.0; ///< phase at the end of the last emitted sample

  /// Advances through `cp` unobserved samples, then emits the next `n`.
  rvec next_symbol(int n, int cp, std::mt19937_64& rng);
};

/// Runs one independent trial of the spec's mode at the given scenario.
trial_metrics run_trial(const sweep_spec& spec, const sim_config& scenario, std::uint64_t seed);

/// Runs the full grid: n_trials independent trials per point (parallel over
/// trials when jobs > 1, merged in trial order), aggregated to one row per
/// point. Bitwise reproducible for a given spec and seed.
std::vector<result_row> run_sweep(const sweep_spec& spec);

/// Column names of the emitted CSV, in order.
extern const char* const csv_header;

/// Writes header + rows as decimal ASCII ('.' radix, ',' separator, '\n'
/// line ends); doubles are printed round-trip exact. Throws std::runtime_error
/// naming the path on I/O failure.
void emit_csv(const std::vector<result_row>& rows, const std::string& path);

} // namespace relaysim
