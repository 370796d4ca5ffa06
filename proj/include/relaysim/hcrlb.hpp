// Hybrid Cramér–Rao bound for joint channel / CFO / phase-noise estimation
// on the two-hop training observation: exact Fisher information of the
// stacked Gaussian observation (mean and covariance derivatives), prior
// information of the Wiener phase processes, the Bayesian information matrix
// averaged over phase-noise draws, and the linear reparameterization that
// removes the two unobservable reference phases before extracting scalar
// bounds comparable to the estimator error metrics.
#pragma once

#include <cstdint>

#include "relaysim/numerics.hpp"
#include "relaysim/signal_model.hpp"
#include "relaysim/types.hpp"

namespace relaysim {

/// Index layout of the real parameter vector
///   lambda = [phi_sd, theta_sd(0..n-1), phi_rd, theta_rd(0..n-1),
///             g(0), Re g(1..l_g-1), Im g(1..l_g-1),
///             h(0), Re h(1..l_h-1), Im h(1..l_h-1)],
/// where g and h are the first-tap-rotated taps: each vector is multiplied by
/// the unit phase that makes its first tap real and nonnegative, so the first
/// taps carry a single real coordinate each and the rotations removed here are
/// reintroduced as fixed reference phases on the training operators. Blocks
/// are contiguous and non-overlapping in the order listed.
struct param_layout {
  int n = 0;
  int l_g = 0;
  int l_h = 0;

  int size() const { return 2 * (n + l_g + l_h); }
  int phi_sd() const { return 0; }
  int theta_sd(int m) const { return 1 + m; }
  int phi_rd() const { return n + 1; }
  int theta_rd(int m) const { return n + 2 + m; }
  /// First index of the g block [g(0), Re g(1..), Im g(1..)], width 2 l_g - 1.
  int g_begin() const { return 2 * n + 2; }
  int g_re(int m) const { return g_begin() + m; }
  int g_im(int m) const { return g_begin() + l_g - 1 + m; }
  /// First index of the h block, width 2 l_h - 1.
  int h_begin() const { return g_begin() + 2 * l_g - 1; }
  int h_re(int m) const { return h_begin() + m; }
  int h_im(int m) const { return h_begin() + l_h - 1 + m; }
};

/// Parameters recovered from a packed vector (taps in rotated coordinates).
struct unpacked_params {
  double phi_sd = 0.0;
  double phi_rd = 0.0;
  rvec theta_sd;
  rvec theta_rd;
  cvec g;
  cvec h;
};

/// Output of the bound pipeline for one training instance.
struct bound_report {
  rmat fim_avg;   ///< Fisher information averaged over the phase-noise draws
  rmat bim;       ///< fim_avg plus the Wiener prior information
  rmat xi;        ///< ambiguity-removing transformation, (Q-2) x Q
  rmat hcrlb_mod; ///< xi * bim^{-1} * xi^T
  double bound_cfo_pn = 0.0; ///< trace over the reference-removed phase block
  double bound_g = 0.0;      ///< trace over the g-tap block
  double bound_h = 0.0;      ///< trace over the h-tap block
  bool used_pseudo_inverse = false; ///< bim inversion fell back to a pseudo-inverse
  bool prior_warning = false;       ///< a phase-noise prior was singular (variance zero)
};

/// Bound evaluator for one training instance. The training symbols, the relay
/// gain, and the two reference phases (first-tap phases of the cascade and of
/// the relay-to-destination channel at the truth) are frozen constants of the
/// instance: mean and covariance are differentiated with respect to the
/// rotated-tap coordinates while the reference phases stay fixed, which is
/// what makes every packed vector a valid parameterization of the original
/// observation model in a neighborhood of the truth.
class hcrlb_calculator {
public:
  hcrlb_calculator(const sim_config& cfg, const link_state& truth, const cvec& s_src,
                   const cvec& s_rel, solve_policy policy = {});

  const param_layout& layout() const { return lay_; }
  const sim_config& config() const { return cfg_; }

  /// Packed vector matching the construction truth (taps rotated).
  rvec truth_params() const;
  /// Truth with both phase-noise paths replaced (for the prior average).
  rvec params_with_pn(const rvec& theta_sd, const rvec& theta_rd) const;
  /// Assembles a packed vector from explicit components (taps already rotated).
  rvec pack(const unpacked_params& p) const;
  unpacked_params unpack(const rvec& lambda) const;

  /// Stacked noiseless training observation [mu_s; mu_r] at lambda. At the
  /// truth this reproduces the zero-noise synthesized observation exactly.
  cvec mean_at(const rvec& lambda) const;
  /// Covariance of the source-path block (the relay-path block is
  /// sigma2_D * I and does not depend on lambda).
  cmat relay_block_covariance(const rvec& lambda) const;

  /// Analytic derivative of the stacked mean with respect to every parameter:
  /// 2N x Q, column i = d mu / d lambda_i.
  cmat mean_jacobian(const rvec& lambda) const;
  /// Analytic derivative of the source-block covariance with respect to
  /// parameter index i (N x N; zero for parameters the covariance ignores).
  cmat relay_cov_derivative(const rvec& lambda, int index) const;

  /// Fisher information at lambda: 2 Re(J^H Sigma^{-1} J) plus the covariance
  /// trace terms over every parameter pair with nonzero covariance derivative
  /// (the source-path CFO, source-path phase noise, and g-tap rows).
  rmat fim_at(const rvec& lambda) const;

  /// Wiener prior information: inverse phase-noise covariances placed on the
  /// two theta blocks, zeros elsewhere. A zero-variance (deterministic) phase
  /// process has a singular covariance; its block is left zero and the warning
  /// flag is set.
  rmat prior_information(bool* warned = nullptr) const;

  /// Bayesian information matrix: average of fim_at over n_mc fresh draws of
  /// both phase-noise paths (CFOs and taps held at the truth), plus the prior
  /// information. Draw k uses a deterministic sub-seed derived from (seed, k),
  /// so results are independent of evaluation order.
  rmat bim(int n_mc, std::uint64_t seed, rmat* fim_avg = nullptr, bool* prior_warned = nullptr) const;

  /// Full pipeline: bim, the ambiguity-removing transformation, and the
  /// scalar bounds.
  bound_report evaluate(int n_mc, std::uint64_t seed) const;

private:
  sim_config cfg_;
  param_layout lay_;
  solve_policy policy_;
  double alpha_ = 1.0;
  double a2_ = 0.0;   ///< alpha^2 * sigma2_R, relay-noise power seen at the destination
  cxd ref_c_{1.0, 0.0}; ///< frozen reference phase of the cascade first tap
  cxd ref_g_{1.0, 0.0}; ///< frozen reference phase of the g first tap
  rvec truth_;
  cmat w_src_; ///< training operator of the source symbol, N x (l_h + l_g - 1)
  cmat w_rel_; ///< training operator of the relay symbol, N x l_g
  rvec omega_; ///< 2 pi m / N ramp used by the CFO derivatives
  std::vector<cmat> unit_g_ops_; ///< convolution operators of the unit taps e_0..e_{l_g-1}
};

/// Linear map from lambda to the ambiguity-free coordinates
///   [delta(1..n-1), phi_rd, theta_rd(0..n-1), g block, h block],
/// where delta(m) = theta_sd(m) - theta_sd(0) + 2 pi m phi_sd / n is the
/// reference-removed combined phase. Shape (Q-2) x Q: the two unobservable
/// references (the common source-path phase and its relay-path counterpart,
/// already folded into the rotated-tap convention) drop out.
rmat transformation_matrix(const param_layout& lay);

/// Applies the transformation to an information matrix and extracts the
/// scalar bounds: hcrlb_mod = xi * bim^{-1} * xi^T, with the combined CFO+PN
/// bound summed over the delta rows and the channel bounds summed over the
/// g / h rows. Falls back to an eigenvalue-thresholded pseudo-inverse when
/// bim is numerically singular.
bound_report transform_and_extract(const rmat& fim_avg, const rmat& bim, const param_layout& lay);

} // namespace relaysim
