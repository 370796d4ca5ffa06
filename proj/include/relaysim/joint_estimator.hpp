// Two-stage MAP estimator for the relay link's channels, CFOs, and phase
// noise. Stage 1 estimates the relay-destination CFO/PN from the relay
// training symbol alone (the source hop is silent there, so a projection onto
// the signal nullspace isolates the impairments). Stage 2 initializes the
// cascade/source-hop parameters in closed form, then block-coordinate descends
// the joint negative log-likelihood: PN coefficients, relay channel, source
// channel, CFO, each with a covariance refresh where the model requires it.
#pragma once

#include <functional>
#include <optional>
#include <vector>

#include "relaysim/numerics.hpp"
#include "relaysim/pn_subspace.hpp"
#include "relaysim/signal_model.hpp"
#include "relaysim/types.hpp"

namespace relaysim {

/// Knobs of the iterative estimator.
struct estimator_config {
  int max_iters = 200;
  /// Stop when |e(n+1) - e(n)| <= epsilon; nonpositive means 5e-4 * N.
  /// The objective is nearly flat along the CFO/PN ambiguity directions, so
  /// a tight threshold buys long tail sweeps that leave the ambiguity-resolved
  /// error metrics unchanged; the default cuts that tail off.
  double epsilon = 0.0;
  double cfo_coarse_step = 1e-3; ///< coarse grid step for both CFO searches
  int cfo_refine_levels = 2;     ///< x10 zoom rounds after the coarse pass
  solve_policy solves{};         ///< ridge/conditioning policy for all solves
  int divergence_patience = 3;   ///< consecutive objective increases tolerated
  /// Warm starts: when set, the CFO grid searches shrink to a window of
  /// +/- warm_window around these values (clamped to the configured range).
  std::optional<double> warm_phi_sd;
  std::optional<double> warm_phi_rd;
  double warm_window = 0.02;

  double effective_epsilon(int n) const { return epsilon > 0.0 ? epsilon : 5e-4 * n; }
};

/// Current parameter estimates carried through the coordinate-descent sweeps.
struct estimator_state {
  double phi_sd = 0.0;
  double phi_rd = 0.0;
  rvec theta_sd; ///< length N
  rvec theta_rd; ///< length N
  rvec eta_sd;   ///< length M, subspace coefficients of theta_sd
  cvec h_hat;
  cvec g_hat;
  cvec c_hat; ///< conv(g_hat, h_hat), maintained by every g/h update
  cmat sigma_r; ///< current source-hop noise covariance estimate (N x N)
  int iteration = 0;
  std::vector<double> nllf_trace;
};

/// Breakdown of the negative log-likelihood objective. The log-determinant
/// and quadratic parts are exactly invariant under the model's phase
/// ambiguities; the prior intentionally is not (it selects the
/// smallest-coefficient representative).
struct nllf_parts {
  double log_det = 0.0;
  double quadratic = 0.0;
  double prior = 0.0;
  double total() const { return log_det + quadratic + prior; }
};

/// Result of a full estimator run.
struct estimator_output {
  estimator_state state;
  bool converged = false;
  bool diverged = false;         ///< stopped after repeated objective increases
  bool used_ridge = false;       ///< some solve needed ridge regularization
  bool cfo_step_skipped = false; ///< a CFO update had a vanishing curvature
  int iterations = 0;            ///< coordinate-descent sweeps executed
  std::vector<double> nllf_trace;
};

class joint_estimator {
public:
  /// Precomputes the DFT operators and phase-noise bases for the scenario.
  explicit joint_estimator(const sim_config& cfg, const estimator_config& ecfg = {});

  // ---------------------------------------------------------------------
  // Stage 1: relay-destination hop.
  // ---------------------------------------------------------------------

  /// Grid-refined minimizer of the relay-hop CFO objective over the
  /// configured range. `used_ridge`, when non-null, reports whether any inner
  /// solve needed regularization.
  double estimate_rd_cfo(const cvec& y_r, const cvec& s_r, bool* used_ridge = nullptr) const;

  /// The relay-hop objective at a given CFO hypothesis (exposed for tests):
  /// residual nullspace energy minus the profiled phase-noise correction.
  double rd_cfo_objective(const cvec& y_r, const cvec& s_r, double phi) const;

  /// MAP phase-noise path for the relay-destination hop at the estimated CFO.
  rvec estimate_rd_pn(const cvec& y_r, const cvec& s_r, double phi_hat,
                      bool* used_ridge = nullptr) const;

  // ---------------------------------------------------------------------
  // Stage 2: initialization and coordinate-descent updates.
  // ---------------------------------------------------------------------

  /// Closed-form initialization: matched-filter relay channel, grid search
  /// over the source-hop CFO with a generalized-LS source channel at each
  /// hypothesis (under the phase-noise-marginalized covariance), zero PN.
  estimator_state init_estimates(const cvec& y_s, const cvec& y_r, const cvec& s_s,
                                 const cvec& s_r, double phi_rd_hat, const rvec& theta_rd_hat,
                                 bool* used_ridge = nullptr) const;

  /// MAP update of the source-hop PN subspace coefficients (linearized around
  /// zero phase); writes eta_sd/theta_sd and refreshes sigma_r. Returns eta.
  rvec update_pn(estimator_state& st, const cvec& y_s, const cvec& s_s,
                 bool* used_ridge = nullptr) const;

  /// Generalized-LS update of the relay channel from both observations;
  /// refreshes the cascade and sigma_r. Returns the new taps.
  cvec update_g(estimator_state& st, const cvec& y_s, const cvec& y_r, const cvec& s_s,
                const cvec& s_r, bool* used_ridge = nullptr) const;

  /// Generalized-LS update of the source channel from the source-hop
  /// observation; refreshes the cascade but not sigma_r. Returns the new taps.
  cvec update_h(estimator_state& st, const cvec& y_s, const cvec& s_s,
                bool* used_ridge = nullptr) const;

  /// One Newton step on the source-hop CFO; refreshes sigma_r. Returns the
  /// new CFO. A vanishing curvature skips the step and sets `skipped`.
  double update_cfo(estimator_state& st, const cvec& y_s, const cvec& s_s,
                    bool* skipped = nullptr, bool* used_ridge = nullptr) const;

  /// Negative log-likelihood of the stacked training observations at the
  /// state's parameters, with the covariance rebuilt from those parameters.
  nllf_parts negative_llf_parts(const estimator_state& st, const cvec& y_s, const cvec& y_r,
                                const cvec& s_s, const cvec& s_r) const;
  double negative_llf(const estimator_state& st, const cvec& y_s, const cvec& y_r,
                      const cvec& s_s, const cvec& s_r) const;

  /// Full Algorithm: stage 1, initialization, then sweeps of
  /// {update_pn, update_g, update_h, update_cfo} until the objective change
  /// falls below epsilon, divergence is detected, or max_iters is reached.
  /// On divergence or iteration exhaustion the best-objective state is
  /// returned.
  estimator_output run(const cvec& y_s, const cvec& y_r, const cvec& s_s, const cvec& s_r) const;

  /// Phase-noise-blind baseline: the same stage-1 CFO search and
  /// initialization but with all phase-noise terms removed (zero PN paths,
  /// no covariance inflation), and no iterative refinement.
  estimator_output run_pn_ignoring(const cvec& y_s, const cvec& y_r, const cvec& s_s,
                                   const cvec& s_r) const;

  /// Source-hop noise covariance implied by the state's current parameters:
  /// the amplified relay noise rotated by the estimated phases plus the
  /// destination noise floor.
  cmat point_covariance(const estimator_state& st) const;

  const pn_basis& basis_sd() const { return basis_sd_; }
  const pn_basis& basis_rd() const { return basis_rd_; }
  const sim_config& config() const { return cfg_; }
  const estimator_config& options() const { return ecfg_; }

private:
  /// Shared stage-1 machinery: K = A A^H for the nullspace-projected,
  /// observation-weighted phase vector quadratic form.
  cmat rd_quadratic_kernel(const cvec& y_r, const cvec& s_r) const;
  double rd_objective_from_kernel(const cmat& kernel, double phi, bool* used_ridge) const;
  double grid_minimize(double lo, double hi, const std::optional<double>& warm,
                       const std::function<double(double)>& objective) const;
  void refresh_covariance(estimator_state& st) const;

  sim_config cfg_;
  estimator_config ecfg_;
  cmat f_;            // unitary DFT
  cmat v_cols_;       // columns L_g .. N-1 of the unitary DFT
  pn_basis basis_sd_; // source-hop truncated eigenbasis (dimension M)
  pn_basis basis_rd_; // relay-hop truncated eigenbasis (dimension M)
  rmat psi_sd_;       // source-hop phase-noise covariance (zero matrix if disabled)
  rmat psi_rd_inv_;   // relay-hop covariance inverse (empty if disabled)
};

/// Convenience wrapper: construct the estimator and run it once.
estimator_output run_joint_estimation(const cvec& y_s, const cvec& y_r, const cvec& s_s,
                                      const cvec& s_r, const sim_config& cfg,
                                      const estimator_config& ecfg = {});

} // namespace relaysim
