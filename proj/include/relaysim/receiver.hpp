// Data-phase processing. The source transmits comb-type OFDM symbols (known
// pilots interleaved with data subcarriers); the destination alternates a
// MAP phase-noise tracking step against a generalized-LS data detection step
// until the joint objective stops decreasing, then slices the soft symbols.
// Phase-blind and known-phase one-shot baselines share the same machinery.
#pragma once

#include <cstdint>
#include <vector>

#include "relaysim/joint_estimator.hpp"
#include "relaysim/numerics.hpp"
#include "relaysim/pn_subspace.hpp"
#include "relaysim/signal_model.hpp"
#include "relaysim/types.hpp"

namespace relaysim {

/// Gray-mapped unit-power QPSK: bit pair (b0, b1) -> ((1-2 b0) + j(1-2 b1)) /
/// sqrt(2), so 00 -> (1+j)/sqrt(2) and adjacent constellation points differ
/// in exactly one bit. Requires an even number of 0/1 entries.
cvec qpsk_map(const std::vector<std::uint8_t>& bits);

/// Nearest-constellation-point slicing, the inverse of qpsk_map under any
/// positive scaling: two bits per symbol, signs of the real and imaginary
/// parts (ties resolve to 0).
std::vector<std::uint8_t> qpsk_demap(const cvec& symbols);

/// One comb-type OFDM data symbol: every subcarrier carries the same
/// per-entry power; the pilot entries are known at the receiver, the data
/// entries encode the payload bits.
struct comb_symbol {
  cvec values;                    ///< length N, transmitted frequency-domain entries
  std::vector<int> pilot_indices; ///< size P, sorted ascending
  std::vector<int> data_indices;  ///< size N - P, sorted complement
  std::vector<std::uint8_t> bits; ///< 2 (N - P) payload bits behind the data entries

  int n() const { return static_cast<int>(values.size()); }
  int pilot_count() const { return static_cast<int>(pilot_indices.size()); }
  int data_count() const { return static_cast<int>(data_indices.size()); }
};

/// Builds one comb symbol on the configured pilot pattern: pilots are QPSK
/// entries drawn from `rng` at power p_src, data subcarriers carry the
/// Gray-mapped `bits` at the same power. The pilot count must be at least the
/// phase-noise subspace dimension so the tracker stays identifiable, and
/// `bits` must hold exactly two bits per data subcarrier.
comb_symbol make_comb_symbol(const sim_config& cfg, const std::vector<std::uint8_t>& bits,
                             std::mt19937_64& rng);

/// Channel knowledge carried into the data phase: the source-destination CFO,
/// the cascade taps behind the combined channel diagonal, and the relay-hop
/// taps that set the amplified-noise covariance.
struct channel_knowledge {
  double phi_sd = 0.0;
  cvec c; ///< cascade taps, length l_h + l_g - 1
  cvec g; ///< relay-hop taps, length l_g
};

/// Knowledge from a training-phase estimate.
channel_knowledge knowledge_from(const estimator_state& st);
/// Knowledge from the ground truth (oracle baselines).
channel_knowledge knowledge_from(const link_state& truth);

/// Knobs of the iterative detector.
struct receiver_config {
  int max_iters = 30;
  /// Stop when the objective decrease falls to epsilon or below; nonpositive
  /// means 1e-4 * N.
  double epsilon = 0.0;
  int divergence_patience = 3; ///< consecutive objective increases tolerated
  solve_policy solves{};

  double effective_epsilon(int n) const { return epsilon > 0.0 ? epsilon : 1e-4 * n; }
};

/// Result of detecting one comb symbol.
struct detection_result {
  rvec theta_hat;                      ///< tracked phase-noise path, length N
  rvec eta_hat;                        ///< subspace coefficients, length M
  cvec soft_symbols;                   ///< soft data estimates, length N - P
  std::vector<std::uint8_t> hard_bits; ///< 2 (N - P) sliced bits
  int iterations = 0;                  ///< tracking/detection sweeps executed
  bool converged = false;
  bool diverged = false;   ///< stopped after repeated objective increases
  bool used_ridge = false; ///< some solve needed ridge regularization
  std::vector<double> objective_trace;
};

class data_receiver {
public:
  /// Precomputes the DFT operator and the phase-noise subspace basis.
  explicit data_receiver(const sim_config& cfg, const receiver_config& rcfg = {});

  /// Combined frequency-domain channel alpha Lambda_theta Lambda_phi F^H
  /// Lambda_c; its columns at the pilot/data indices are the detection
  /// operators.
  cmat combined_channel(const rvec& theta, const channel_knowledge& know) const;

  /// Amplified relay noise rotated by the phase path plus the destination
  /// noise floor, evaluated from the supplied channel knowledge.
  cmat noise_covariance(const rvec& theta, const channel_knowledge& know) const;

  /// MAP phase-noise path given the current symbol decisions `s_full`
  /// (pilots plus current soft data estimates). The mean is linearized around
  /// the zero phase path, the covariance is evaluated at `theta_k`, and the
  /// standard-normal prior on the subspace coefficients adds half an identity
  /// to the normal equations. Returns the full-length path; `eta_out`
  /// receives the coefficients when non-null.
  rvec track_pn_data(const cvec& y, const cvec& s_full, const channel_knowledge& know,
                     const rvec& theta_k, rvec* eta_out = nullptr,
                     bool* used_ridge = nullptr) const;

  /// Generalized-LS soft data estimate at a fixed phase path: the known pilot
  /// contribution is subtracted and the data columns are solved under the
  /// phase-rotated noise covariance. Empty data set yields an empty vector.
  cvec detect_data(const cvec& y, const rvec& theta, const channel_knowledge& know,
                   const comb_symbol& comb, bool* used_ridge = nullptr) const;

  /// Detection objective: log det Sigma(theta) + weighted residual of the
  /// full (nonlinear-phase) mean + half the squared coefficient norm.
  double objective(const cvec& y, const cvec& s_full, const rvec& theta, const rvec& eta,
                   const channel_knowledge& know) const;

  /// Full iterative receiver: initializes the data estimates by detection at
  /// the zero phase path, then alternates track_pn_data / detect_data until
  /// the objective decrease reaches epsilon, divergence is detected, or
  /// max_iters is hit; slices the best-objective soft symbols on exit.
  detection_result run_detection(const cvec& y, const channel_knowledge& know,
                                 const comb_symbol& comb) const;

  /// Phase-blind baseline: one detection pass at the zero phase path.
  detection_result run_pn_ignoring(const cvec& y, const channel_knowledge& know,
                                   const comb_symbol& comb) const;

  /// Known-phase baseline: one detection pass at the supplied phase path.
  detection_result run_genie(const cvec& y, const rvec& theta_true, const channel_knowledge& know,
                             const comb_symbol& comb) const;

  const pn_basis& basis() const { return basis_sd_; }
  const sim_config& config() const { return cfg_; }
  const receiver_config& options() const { return rcfg_; }

private:
  /// One-shot detection at a fixed phase path shared by the baselines.
  detection_result detect_once(const cvec& y, const rvec& theta, const channel_knowledge& know,
                               const comb_symbol& comb) const;
  void check_inputs(const cvec& y, const channel_knowledge& know) const;
  void check_comb(const comb_symbol& comb) const;

  sim_config cfg_;
  receiver_config rcfg_;
  cmat f_;            // unitary DFT
  pn_basis basis_sd_; // source-hop truncated eigenbasis (dimension M)
};

} // namespace relaysim
