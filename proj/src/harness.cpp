#include "relaysim/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <exception>
#include <limits>
#include <mutex>
#include <stdexcept>
#include <thread>

#include "relaysim/hcrlb.hpp"
#include "relaysim/joint_estimator.hpp"
#include "relaysim/metrics.hpp"
#include "relaysim/receiver.hpp"

namespace relaysim {

namespace {

constexpr double quiet_nan = std::numeric_limits<double>::quiet_NaN();

std::string lowered_identifier(const std::string& name) {
  std::string out;
  out.reserve(name.size());
  for (char ch : name) {
    if (ch == '-') ch = '_';
    if (ch >= 'A' && ch <= 'Z') ch = static_cast<char>(ch - 'A' + 'a');
    out.push_back(ch);
  }
  return out;
}

std::vector<std::uint8_t> random_payload(int count, std::mt19937_64& rng) {
  std::bernoulli_distribution coin(0.5);
  std::vector<std::uint8_t> bits(static_cast<std::size_t>(count));
  for (auto& b : bits) b = coin(rng) ? 1 : 0;
  return bits;
}

/// Mean and sample-based standard error of a per-trial field; NaN inputs
/// propagate (an unmeasured field stays unmeasured after aggregation).
struct mean_se {
  double mean = quiet_nan;
  double se = quiet_nan;
};

template <typename Getter>
mean_se aggregate(const std::vector<trial_metrics>& trials, Getter get) {
  const int n = static_cast<int>(trials.size());
  double sum = 0.0;
  for (const trial_metrics& t : trials) sum += get(t);
  mean_se out;
  out.mean = sum / n;
  if (n >= 2) {
    double ss = 0.0;
    for (const trial_metrics& t : trials) {
      const double d = get(t) - out.mean;
      ss += d * d;
    }
    out.se = std::sqrt(ss / (n - 1) / n);
  }
  return out;
}

void append_double(std::string& line, double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  line += buf;
}

} // namespace

const char* to_string(sweep_mode mode) {
  switch (mode) {
  case sweep_mode::estimate: return "estimate";
  case sweep_mode::detect: return "detect";
  case sweep_mode::bound: return "bound";
  case sweep_mode::all: return "all";
  }
  return "unknown";
}

const char* to_string(receiver_kind kind) {
  switch (kind) {
  case receiver_kind::proposed: return "proposed";
  case receiver_kind::pn_ignoring: return "pn-ignoring";
  case receiver_kind::genie: return "genie";
  }
  return "unknown";
}

sweep_mode sweep_mode_from(const std::string& name) {
  const std::string id = lowered_identifier(name);
  if (id == "estimate") return sweep_mode::estimate;
  if (id == "detect") return sweep_mode::detect;
  if (id == "bound") return sweep_mode::bound;
  if (id == "all") return sweep_mode::all;
  throw std::invalid_argument("unknown sweep mode '" + name +
                              "' (expected estimate|detect|bound|all)");
}

receiver_kind receiver_kind_from(const std::string& name) {
  const std::string id = lowered_identifier(name);
  if (id == "proposed") return receiver_kind::proposed;
  if (id == "pn_ignoring") return receiver_kind::pn_ignoring;
  if (id == "genie") return receiver_kind::genie;
  throw std::invalid_argument("unknown receiver '" + name +
                              "' (expected proposed|pn-ignoring|genie)");
}

trial_metrics::trial_metrics()
    : mse_g(quiet_nan), mse_h(quiet_nan), mse_cfo_pn(quiet_nan), ber(quiet_nan),
      iterations(quiet_nan), bound_g(quiet_nan), bound_h(quiet_nan), bound_cfo_pn(quiet_nan) {}

void sweep_spec::validate() const {
  base.validate();
  if (snr_points.empty()) throw std::invalid_argument("sweep_spec: snr_points must be nonempty");
  if (pn_vars.empty()) throw std::invalid_argument("sweep_spec: pn_vars must be nonempty");
  if (m_values.empty()) throw std::invalid_argument("sweep_spec: m_values must be nonempty");
  for (double pn : pn_vars)
    if (pn < 0.0) throw std::invalid_argument("sweep_spec: pn_vars must be >= 0");
  for (int m : m_values)
    if (m < 1 || m > base.n_subcarriers)
      throw std::invalid_argument("sweep_spec: m_values must lie in [1, n_subcarriers]");
  if (n_trials < 1) throw std::invalid_argument("sweep_spec: n_trials must be >= 1");
  if (data_symbols < 1) throw std::invalid_argument("sweep_spec: data_symbols must be >= 1");
  if (n_mc < 1) throw std::invalid_argument("sweep_spec: n_mc must be >= 1");
  if (jobs < 1) throw std::invalid_argument("sweep_spec: jobs must be >= 1");
  if (receiver == receiver_kind::genie && mode != sweep_mode::detect)
    throw std::invalid_argument(
        "sweep_spec: the genie receiver has no estimation stage; use mode=detect");
}

sim_config scenario_config(const sweep_spec& spec, double snr_db, double pn_var, int m) {
  sim_config cfg = spec.base;
  cfg.p_src = cfg.p_relay = std::pow(10.0, snr_db / 10.0);
  cfg.pn_var_sd = cfg.pn_var_rd = pn_var;
  cfg.subspace_dim = m;
  // Comb tracking needs at least as many pilots as subspace coefficients.
  if (cfg.pilot_indices.empty() && cfg.pilot_count < m) cfg.pilot_count = m;
  cfg.validate();
  return cfg;
}

std::uint64_t grid_key(double snr_db, double pn_var, int m) {
  std::uint64_t snr_bits = 0, pn_bits = 0;
  std::memcpy(&snr_bits, &snr_db, sizeof snr_bits);
  std::memcpy(&pn_bits, &pn_var, sizeof pn_bits);
  return derive_seed(snr_bits, pn_bits, static_cast<std::uint64_t>(m));
}

std::uint64_t trial_seed(std::uint64_t master, std::uint64_t key, int trial) {
  return derive_seed(master, key, static_cast<std::uint64_t>(trial));
}

trial_instance draw_trial_instance(const sim_config& scenario, std::uint64_t seed) {
  trial_instance inst;
  inst.rng = std::mt19937_64(seed);
  inst.link = draw_link_state(scenario, inst.rng);
  inst.s_src = qpsk_symbols(scenario.n_subcarriers, scenario.p_src, inst.rng);
  inst.s_rel = qpsk_symbols(scenario.n_subcarriers, scenario.p_relay, inst.rng);
  inst.bound_seed = inst.rng();
  return inst;
}

rvec frame_oscillator::next_symbol(int n, int cp, std::mt19937_64& rng) {
  if (n < 1 || cp < 0) throw std::invalid_argument("frame_oscillator: bad symbol geometry");
  if (step_var <= 0.0) return rvec::Constant(n, current);
  std::normal_distribution<double> step(0.0, std::sqrt(step_var));
  for (int i = 0; i < cp; ++i) current += step(rng);
  rvec theta(n);
  for (int m = 0; m < n; ++m) {
    current += step(rng);
    theta(m) = current;
  }
  return theta;
}

trial_metrics run_trial(const sweep_spec& spec, const sim_config& scenario, std::uint64_t seed) {
  const bool want_estimate = spec.mode == sweep_mode::estimate || spec.mode == sweep_mode::all;
  const bool want_detect = spec.mode == sweep_mode::detect || spec.mode == sweep_mode::all;
  const bool want_bound = spec.mode == sweep_mode::bound || spec.mode == sweep_mode::all;
  const bool need_training =
      want_estimate || (want_detect && spec.receiver != receiver_kind::genie);

  trial_instance inst = draw_trial_instance(scenario, seed);
  trial_metrics tm;

  channel_knowledge know;
  if (need_training) {
    const joint_estimator est(scenario);
    const observation obs =
        synthesize_training(scenario, inst.link, inst.s_src, inst.s_rel, inst.rng);
    const estimator_output out = spec.receiver == receiver_kind::pn_ignoring
                                     ? est.run_pn_ignoring(obs.y_s, obs.y_r, inst.s_src, inst.s_rel)
                                     : est.run(obs.y_s, obs.y_r, inst.s_src, inst.s_rel);
    tm.diverged = out.diverged;
    if (want_estimate) {
      tm.mse_g = mse_channel(out.state.g_hat, inst.link.g);
      tm.mse_h = mse_channel(out.state.h_hat, inst.link.h);
      tm.mse_cfo_pn =
          mse_cfo_pn(out.state.theta_sd, out.state.phi_sd, inst.link.theta_sd, inst.link.phi_sd);
      tm.iterations = out.iterations;
    }
    know = knowledge_from(out.state);
  } else if (want_detect) {
    know = knowledge_from(inst.link);
  }

  if (want_detect) {
    const data_receiver rx(scenario);
    const int n = scenario.n_subcarriers;
    // The frame's oscillator continues from the end of the source training
    // symbol: one unobserved symbol interval (the relay's training slot)
    // passes before the first data symbol.
    frame_oscillator osc{scenario.pn_var_sd,
                         inst.link.theta_sd.size() > 0 ? inst.link.theta_sd(n - 1) : 0.0};
    (void)osc.next_symbol(n, scenario.cp_len, inst.rng);
    long errors = 0, total = 0;
    double sweeps = 0.0;
    for (int s = 0; s < spec.data_symbols; ++s) {
      const rvec theta = osc.next_symbol(n, scenario.cp_len, inst.rng);
      const auto bits = random_payload(2 * (n - scenario.pilot_count), inst.rng);
      const comb_symbol comb = make_comb_symbol(scenario, bits, inst.rng);
      const cvec v =
          complex_gaussian(n + scenario.l_g - 1, scenario.noise_var_relay, inst.rng);
      const cvec w = complex_gaussian(n, scenario.noise_var_dest, inst.rng);
      const cvec y = synthesize_data_symbol(scenario, inst.link, theta, comb.values, v, w);
      detection_result res;
      switch (spec.receiver) {
      case receiver_kind::proposed: res = rx.run_detection(y, know, comb); break;
      case receiver_kind::pn_ignoring: res = rx.run_pn_ignoring(y, know, comb); break;
      case receiver_kind::genie: res = rx.run_genie(y, theta, know, comb); break;
      }
      // ber() validates the lengths; accumulate exact error counts across the
      // frame so the per-trial rate is a single ratio. A pilot-only comb
      // carries no payload and contributes nothing.
      if (!bits.empty()) {
        errors += static_cast<long>(
            std::llround(ber(res.hard_bits, bits) * static_cast<double>(bits.size())));
        total += static_cast<long>(bits.size());
      }
      sweeps += res.iterations;
      tm.diverged = tm.diverged || res.diverged;
    }
    tm.ber = total > 0 ? static_cast<double>(errors) / static_cast<double>(total) : quiet_nan;
    if (spec.mode == sweep_mode::detect) tm.iterations = sweeps / spec.data_symbols;
  }

  if (want_bound) {
    const hcrlb_calculator calc(scenario, inst.link, inst.s_src, inst.s_rel);
    const bound_report rep = calc.evaluate(spec.n_mc, inst.bound_seed);
    tm.bound_g = rep.bound_g;
    tm.bound_h = rep.bound_h;
    tm.bound_cfo_pn = rep.bound_cfo_pn;
  }
  return tm;
}

std::vector<result_row> run_sweep(const sweep_spec& spec) {
  spec.validate();
  std::vector<result_row> rows;
  rows.reserve(spec.snr_points.size() * spec.pn_vars.size() * spec.m_values.size());
  for (double snr : spec.snr_points) {
    for (double pn : spec.pn_vars) {
      for (int m : spec.m_values) {
        const sim_config scenario = scenario_config(spec, snr, pn, m);
        const std::uint64_t key = grid_key(snr, pn, m);
        std::vector<trial_metrics> trials(static_cast<std::size_t>(spec.n_trials));

        const int workers = std::min(spec.jobs, spec.n_trials);
        if (workers <= 1) {
          for (int t = 0; t < spec.n_trials; ++t)
            trials[static_cast<std::size_t>(t)] =
                run_trial(spec, scenario, trial_seed(spec.seed, key, t));
        } else {
          // Trials are independent; each worker claims indices from a shared
          // counter and writes into its own slot, so the merged result is
          // identical to the serial order regardless of scheduling.
          std::atomic<int> next{0};
          std::exception_ptr failure;
          std::mutex failure_mutex;
          auto worker = [&] {
            for (int t = next.fetch_add(1); t < spec.n_trials; t = next.fetch_add(1)) {
              try {
                trials[static_cast<std::size_t>(t)] =
                    run_trial(spec, scenario, trial_seed(spec.seed, key, t));
              } catch (...) {
                const std::lock_guard<std::mutex> lock(failure_mutex);
                if (!failure) failure = std::current_exception();
                return;
              }
            }
          };
          std::vector<std::thread> pool;
          pool.reserve(static_cast<std::size_t>(workers));
          for (int i = 0; i < workers; ++i) pool.emplace_back(worker);
          for (std::thread& th : pool) th.join();
          if (failure) std::rethrow_exception(failure);
        }

        result_row row;
        row.snr_db = snr;
        row.pn_var = pn;
        row.m = m;
        row.mode = to_string(spec.mode);
        const mean_se g = aggregate(trials, [](const trial_metrics& t) { return t.mse_g; });
        const mean_se h = aggregate(trials, [](const trial_metrics& t) { return t.mse_h; });
        const mean_se cp = aggregate(trials, [](const trial_metrics& t) { return t.mse_cfo_pn; });
        const mean_se b = aggregate(trials, [](const trial_metrics& t) { return t.ber; });
        row.mse_g = g.mean;
        row.mse_g_se = g.se;
        row.mse_h = h.mean;
        row.mse_h_se = h.se;
        row.mse_cfopn = cp.mean;
        row.mse_cfopn_se = cp.se;
        row.ber = b.mean;
        row.ber_se = b.se;
        row.hcrlb_g = aggregate(trials, [](const trial_metrics& t) { return t.bound_g; }).mean;
        row.hcrlb_h = aggregate(trials, [](const trial_metrics& t) { return t.bound_h; }).mean;
        row.hcrlb_cfopn =
            aggregate(trials, [](const trial_metrics& t) { return t.bound_cfo_pn; }).mean;
        row.iters_mean =
            aggregate(trials, [](const trial_metrics& t) { return t.iterations; }).mean;
        row.diverged_count = 0;
        for (const trial_metrics& t : trials) row.diverged_count += t.diverged ? 1 : 0;
        rows.push_back(std::move(row));
      }
    }
  }
  return rows;
}

const char* const csv_header =
    "snr_db,pn_var,m,mode,mse_g,mse_g_se,mse_h,mse_h_se,mse_cfopn,mse_cfopn_se,"
    "ber,ber_se,hcrlb_g,hcrlb_h,hcrlb_cfopn,iters_mean,diverged_count";

void emit_csv(const std::vector<result_row>& rows, const std::string& path) {
  std::FILE* file = std::fopen(path.c_str(), "wb");
  if (!file) throw std::runtime_error("emit_csv: cannot open '" + path + "' for writing");
  std::string text(csv_header);
  text += '\n';
  for (const result_row& row : rows) {
    append_double(text, row.snr_db);
    text += ',';
    append_double(text, row.pn_var);
    text += ',';
    text += std::to_string(row.m);
    text += ',';
    text += row.mode;
    for (double v : {row.mse_g, row.mse_g_se, row.mse_h, row.mse_h_se, row.mse_cfopn,
                     row.mse_cfopn_se, row.ber, row.ber_se, row.hcrlb_g, row.hcrlb_h,
                     row.hcrlb_cfopn, row.iters_mean}) {
      text += ',';
      append_double(text, v);
    }
    text += ',';
    text += std::to_string(row.diverged_count);
    text += '\n';
  }
  const std::size_t written = std::fwrite(text.data(), 1, text.size(), file);
  const bool flush_ok = std::fflush(file) == 0;
  const bool close_ok = std::fclose(file) == 0;
  if (written != text.size() || !flush_ok || !close_ok)
    throw std::runtime_error("emit_csv: write failed for '" + path + "'");
}

} // namespace relaysim
