#include "relaysim/joint_estimator.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <utility>

namespace relaysim {

namespace {

void check_vector(const cvec& v, int n, const char* name) {
  if (v.size() != n) throw std::invalid_argument(std::string("joint_estimator: ") + name +
                                                 " has the wrong length");
}

} // namespace

joint_estimator::joint_estimator(const sim_config& cfg, const estimator_config& ecfg)
    : cfg_(cfg), ecfg_(ecfg) {
  cfg_.validate();
  const int n = cfg_.n_subcarriers;
  if (cfg_.l_g >= n || cfg_.cascade_len() > n)
    throw std::invalid_argument("joint_estimator: channel lengths must be shorter than the DFT size");
  if (ecfg_.max_iters < 0 || ecfg_.cfo_coarse_step <= 0.0 || ecfg_.cfo_refine_levels < 0 ||
      ecfg_.divergence_patience < 1 || ecfg_.warm_window <= 0.0)
    throw std::invalid_argument("joint_estimator: invalid estimator_config");
  f_ = dft_matrix(n);
  v_cols_ = f_.rightCols(n - cfg_.l_g);
  basis_sd_ = build_basis(n, cfg_.pn_var_sd, cfg_.subspace_dim);
  basis_rd_ = build_basis(n, cfg_.pn_var_rd, cfg_.subspace_dim);
  psi_sd_ = pn_covariance(n, cfg_.pn_var_sd);
  if (cfg_.pn_var_rd > 0.0) psi_rd_inv_ = pn_covariance_inverse(n, cfg_.pn_var_rd);
}

// ---------------------------------------------------------------------------
// Stage 1: relay-destination hop.
// ---------------------------------------------------------------------------

cmat joint_estimator::rd_quadratic_kernel(const cvec& y_r, const cvec& s_r) const {
  const int n = cfg_.n_subcarriers;
  check_vector(y_r, n, "y_r");
  check_vector(s_r, n, "s_r");
  // Columns L_g.. of the DFT span the nullspace of the training operator, so
  // F^H Diag(s) V annihilates every channel hypothesis and what remains of
  // Diag(conj(y)) exp(-j(theta + ramp)) is impairment energy only.
  const cmat null_proj = f_.adjoint() * (s_r.asDiagonal() * v_cols_); // N x (N - L_g)
  const cvec y_conj = y_r.conjugate();
  const cmat a = y_conj.asDiagonal() * null_proj;
  return a * a.adjoint();
}

double joint_estimator::rd_objective_from_kernel(const cmat& kernel, double phi,
                                                 bool* used_ridge) const {
  const int n = cfg_.n_subcarriers;
  const cvec ramp = phase_ramp(n, phi);
  const cvec ramp_conj = ramp.conjugate();
  cmat p = ramp.asDiagonal() * kernel;
  p = p * ramp_conj.asDiagonal(); // P(r,c) = K(r,c) exp(j 2 pi (r-c) phi / n)
  const cvec p_one = p.rowwise().sum();
  const double total = p_one.real().sum(); // 1^T P 1, real by Hermitian symmetry
  if (psi_rd_inv_.size() == 0) return total; // no phase noise: pure residual energy
  // Profile the linearized phase-noise path out of the quadratic form. The
  // prior-weighted normal matrix is Re(P) + (sigma2_D P_T / 2) Psi^{-1}.
  const rvec b = p_one.imag();
  rmat normal = p.real();
  normal += (cfg_.noise_var_dest * cfg_.p_relay / 2.0) * psi_rd_inv_;
  sym_solver solver(std::move(normal), ecfg_.solves);
  if (used_ridge && solver.ridged()) *used_ridge = true;
  return total - b.dot(solver.solve(b));
}

double joint_estimator::estimate_rd_cfo(const cvec& y_r, const cvec& s_r, bool* used_ridge) const {
  if (cfg_.cfo_rd.fixed()) return cfg_.cfo_rd.lo;
  const cmat kernel = rd_quadratic_kernel(y_r, s_r);
  return grid_minimize(cfg_.cfo_rd.lo, cfg_.cfo_rd.hi, ecfg_.warm_phi_rd, [&](double phi) {
    return rd_objective_from_kernel(kernel, phi, used_ridge);
  });
}

double joint_estimator::rd_cfo_objective(const cvec& y_r, const cvec& s_r, double phi) const {
  return rd_objective_from_kernel(rd_quadratic_kernel(y_r, s_r), phi, nullptr);
}

rvec joint_estimator::estimate_rd_pn(const cvec& y_r, const cvec& s_r, double phi_hat,
                                     bool* used_ridge) const {
  const int n = cfg_.n_subcarriers;
  check_vector(y_r, n, "y_r");
  if (cfg_.pn_var_rd <= 0.0) return rvec::Zero(n);
  const cmat kernel = rd_quadratic_kernel(y_r, s_r);
  const cvec ramp = phase_ramp(n, phi_hat);
  const cvec ramp_conj = ramp.conjugate();
  cmat p = ramp.asDiagonal() * kernel;
  p = p * ramp_conj.asDiagonal();
  const rmat re_p = p.real();
  const rvec im_p_one = p.imag().rowwise().sum();
  // Subspace MAP: with theta = Pi eta the Wiener prior reduces to the identity.
  const int m = basis_rd_.m;
  rmat normal = basis_rd_.pi.transpose() * re_p * basis_rd_.pi;
  normal += (cfg_.noise_var_dest * cfg_.p_relay / 2.0) * rmat::Identity(m, m);
  sym_solver solver(std::move(normal), ecfg_.solves);
  if (used_ridge && solver.ridged()) *used_ridge = true;
  const rvec eta = solver.solve((basis_rd_.pi.transpose() * im_p_one).eval());
  return basis_rd_.pi * eta;
}

// ---------------------------------------------------------------------------
// Grid search shared by both CFO estimates.
// ---------------------------------------------------------------------------

double joint_estimator::grid_minimize(double lo, double hi, const std::optional<double>& warm,
                                      const std::function<double(double)>& objective) const {
  if (lo == hi) return lo;
  double best_phi = std::numeric_limits<double>::quiet_NaN();
  double best_val = std::numeric_limits<double>::infinity();
  const auto scan = [&](double a, double b, double s) {
    a = std::max(a, lo);
    b = std::min(b, hi);
    if (!(b >= a)) return;
    const int steps = std::max(0, static_cast<int>(std::ceil((b - a) / s - 1e-12)));
    for (int i = 0; i <= steps; ++i) {
      const double phi = i == steps ? b : a + i * s;
      const double val = objective(phi);
      if (val < best_val) {
        best_val = val;
        best_phi = phi;
      }
    }
  };
  double step = ecfg_.cfo_coarse_step;
  bool scanned = false;
  if (warm.has_value()) {
    const double a = std::max(lo, *warm - ecfg_.warm_window);
    const double b = std::min(hi, *warm + ecfg_.warm_window);
    if (b >= a) {
      scan(a, b, step);
      scanned = true;
    }
  }
  if (!scanned) scan(lo, hi, step);
  for (int level = 0; level < ecfg_.cfo_refine_levels; ++level) {
    const double fine = step / 10.0;
    scan(best_phi - step, best_phi + step, fine);
    step = fine;
  }
  return best_phi;
}

// ---------------------------------------------------------------------------
// Stage 2: initialization.
// ---------------------------------------------------------------------------

estimator_state joint_estimator::init_estimates(const cvec& y_s, const cvec& y_r, const cvec& s_s,
                                                const cvec& s_r, double phi_rd_hat,
                                                const rvec& theta_rd_hat, bool* used_ridge) const {
  const int n = cfg_.n_subcarriers;
  check_vector(y_s, n, "y_s");
  check_vector(y_r, n, "y_r");
  check_vector(s_s, n, "s_s");
  check_vector(s_r, n, "s_r");
  if (theta_rd_hat.size() != n)
    throw std::invalid_argument("joint_estimator: theta_rd_hat has the wrong length");

  // Matched filter for the relay channel: the relay training operator has
  // orthogonal columns of squared norm N * P_T, so rotating the impairments
  // off y_r and correlating recovers the taps.
  const cmat w_rel = training_matrix(s_r, cfg_.l_g);
  const cvec u_rd_conj = impairment_phase(theta_rd_hat, phi_rd_hat).conjugate();
  const cvec g0 = (w_rel.adjoint() * u_rd_conj.cwiseProduct(y_r)) / (n * cfg_.p_relay);

  // Phase-noise-marginalized covariance of the source-hop observation at zero
  // phase: Omega + Omega .* Psi + sigma2_D I with Omega the amplified relay
  // noise through the estimated relay channel. A common CFO rotation applies
  // as Lambda_phi Sigma0 Lambda_phi^H, so the expensive factorization is
  // CFO-independent and the grid search below derotates the observation
  // instead.
  const cmat gmat = build_g_matrix(g0, n);
  const double relay_noise_gain = cfg_.alpha * cfg_.alpha * cfg_.noise_var_relay;
  const cmat omega = relay_noise_gain * (gmat * gmat.adjoint());
  cmat sigma0 = omega;
  if (cfg_.pn_var_sd > 0.0) sigma0 += omega.cwiseProduct(psi_sd_.cast<cxd>());
  sigma0.diagonal().array() += cfg_.noise_var_dest;

  herm_solver cov_solver(sigma0, ecfg_.solves);
  if (used_ridge && cov_solver.ridged()) *used_ridge = true;

  // Generalized LS for the source channel at each CFO hypothesis; the Gram
  // matrix is CFO-independent because the derotation is unitary.
  const cmat w_src = training_matrix(s_s, cfg_.cascade_len());
  const cmat g_tilde = conv_toeplitz(g0, cfg_.l_h); // cascade = g_tilde * h
  const cmat w_cascade = w_src * g_tilde;           // N x l_h
  const cmat cov_w = cov_solver.solve(w_cascade);
  cmat gram = (cfg_.alpha * cfg_.alpha) * (w_cascade.adjoint() * cov_w);
  herm_solver gram_solver(std::move(gram), ecfg_.solves);
  if (used_ridge && gram_solver.ridged()) *used_ridge = true;

  const auto fit_terms = [&](double phi, cvec& rhs) {
    const cvec y_derot = phase_ramp(n, phi).conjugate().cwiseProduct(y_s);
    rhs = cfg_.alpha * (cov_w.adjoint() * y_derot);
    return y_derot.dot(cov_solver.solve(y_derot)).real();
  };
  const double phi0 = grid_minimize(cfg_.cfo_sd.lo, cfg_.cfo_sd.hi, ecfg_.warm_phi_sd,
                                    [&](double phi) {
                                      cvec rhs;
                                      const double energy = fit_terms(phi, rhs);
                                      return energy - rhs.dot(gram_solver.solve(rhs)).real();
                                    });
  cvec rhs;
  fit_terms(phi0, rhs);
  const cvec h0 = gram_solver.solve(rhs);

  estimator_state st;
  st.phi_sd = phi0;
  st.phi_rd = phi_rd_hat;
  st.theta_sd = rvec::Zero(n);
  st.theta_rd = theta_rd_hat;
  st.eta_sd = rvec::Zero(basis_sd_.m);
  st.g_hat = g0;
  st.h_hat = h0;
  st.c_hat = convolve(g0, h0);
  const cvec ramp0 = phase_ramp(n, phi0);
  const cvec ramp0_conj = ramp0.conjugate();
  cmat rotated = ramp0.asDiagonal() * sigma0;
  st.sigma_r = rotated * ramp0_conj.asDiagonal();
  return st;
}

// ---------------------------------------------------------------------------
// Coordinate-descent updates.
// ---------------------------------------------------------------------------

cmat joint_estimator::point_covariance(const estimator_state& st) const {
  const int n = cfg_.n_subcarriers;
  cmat sigma = cmat::Zero(n, n);
  if (cfg_.noise_var_relay > 0.0 && st.g_hat.size() > 0) {
    const cmat gmat = build_g_matrix(st.g_hat, n);
    const cvec u = impairment_phase(st.theta_sd, st.phi_sd);
    const cvec u_conj = u.conjugate();
    const double relay_noise_gain = cfg_.alpha * cfg_.alpha * cfg_.noise_var_relay;
    cmat rotated = u.asDiagonal() * (gmat * gmat.adjoint());
    sigma = relay_noise_gain * (rotated * u_conj.asDiagonal());
  }
  sigma.diagonal().array() += cfg_.noise_var_dest;
  return sigma;
}

void joint_estimator::refresh_covariance(estimator_state& st) const {
  st.sigma_r = point_covariance(st);
}

rvec joint_estimator::update_pn(estimator_state& st, const cvec& y_s, const cvec& s_s,
                                bool* used_ridge) const {
  const int n = cfg_.n_subcarriers;
  check_vector(y_s, n, "y_s");
  check_vector(s_s, n, "s_s");
  const cmat w_src = training_matrix(s_s, cfg_.cascade_len());
  // Linearize exp(j theta) around zero: the mean becomes mu0 + j Diag(mu0) Pi eta,
  // and the standard-normal prior on eta adds half an identity to the normal
  // equations. Each call re-solves from scratch (full replacement of theta).
  const cvec mu0 = cfg_.alpha * phase_ramp(n, st.phi_sd).cwiseProduct(w_src * st.c_hat);
  const cvec resid = y_s - mu0;
  const cmat basis = junit * (mu0.asDiagonal() * basis_sd_.pi.cast<cxd>());
  herm_solver cov_solver(st.sigma_r, ecfg_.solves);
  if (used_ridge && cov_solver.ridged()) *used_ridge = true;
  rmat normal = (basis.adjoint() * cov_solver.solve(basis)).real();
  normal.diagonal().array() += 0.5;
  const rvec rhs = (basis.adjoint() * cov_solver.solve(resid)).real();
  sym_solver normal_solver(std::move(normal), ecfg_.solves);
  if (used_ridge && normal_solver.ridged()) *used_ridge = true;
  st.eta_sd = normal_solver.solve(rhs);
  st.theta_sd = basis_sd_.pi * st.eta_sd;
  refresh_covariance(st);
  return st.eta_sd;
}

cvec joint_estimator::update_g(estimator_state& st, const cvec& y_s, const cvec& y_r,
                               const cvec& s_s, const cvec& s_r, bool* used_ridge) const {
  const int n = cfg_.n_subcarriers;
  check_vector(y_s, n, "y_s");
  check_vector(y_r, n, "y_r");
  // Both observations are linear in g: the source hop through the cascade
  // factorization c = H_tilde g, the relay hop directly. Stack the two
  // generalized-LS normal equations with their respective noise weights.
  const cmat w_src = training_matrix(s_s, cfg_.cascade_len());
  const cmat w_rel = training_matrix(s_r, cfg_.l_g);
  const cmat h_tilde = conv_toeplitz(st.h_hat, cfg_.l_g);
  const cvec u_sd = impairment_phase(st.theta_sd, st.phi_sd);
  const cvec u_rd = impairment_phase(st.theta_rd, st.phi_rd);
  const cmat top = cfg_.alpha * (u_sd.asDiagonal() * (w_src * h_tilde));
  const cmat bot = u_rd.asDiagonal() * w_rel;
  herm_solver cov_solver(st.sigma_r, ecfg_.solves);
  if (used_ridge && cov_solver.ridged()) *used_ridge = true;
  cmat gram = top.adjoint() * cov_solver.solve(top);
  gram += (bot.adjoint() * bot) / cfg_.noise_var_dest;
  cvec rhs = top.adjoint() * cov_solver.solve(y_s);
  rhs += (bot.adjoint() * y_r) / cfg_.noise_var_dest;
  herm_solver gram_solver(std::move(gram), ecfg_.solves);
  if (used_ridge && gram_solver.ridged()) *used_ridge = true;
  st.g_hat = gram_solver.solve(rhs);
  st.c_hat = convolve(st.g_hat, st.h_hat);
  refresh_covariance(st);
  return st.g_hat;
}

cvec joint_estimator::update_h(estimator_state& st, const cvec& y_s, const cvec& s_s,
                               bool* used_ridge) const {
  const int n = cfg_.n_subcarriers;
  check_vector(y_s, n, "y_s");
  const cmat w_src = training_matrix(s_s, cfg_.cascade_len());
  const cmat g_tilde = conv_toeplitz(st.g_hat, cfg_.l_h);
  const cvec u_sd = impairment_phase(st.theta_sd, st.phi_sd);
  const cmat design = cfg_.alpha * (u_sd.asDiagonal() * (w_src * g_tilde));
  herm_solver cov_solver(st.sigma_r, ecfg_.solves);
  if (used_ridge && cov_solver.ridged()) *used_ridge = true;
  cmat gram = design.adjoint() * cov_solver.solve(design);
  const cvec rhs = design.adjoint() * cov_solver.solve(y_s);
  herm_solver gram_solver(std::move(gram), ecfg_.solves);
  if (used_ridge && gram_solver.ridged()) *used_ridge = true;
  st.h_hat = gram_solver.solve(rhs);
  st.c_hat = convolve(st.g_hat, st.h_hat);
  // The covariance does not involve h, so no refresh here.
  return st.h_hat;
}

double joint_estimator::update_cfo(estimator_state& st, const cvec& y_s, const cvec& s_s,
                                   bool* skipped, bool* used_ridge) const {
  const int n = cfg_.n_subcarriers;
  check_vector(y_s, n, "y_s");
  if (skipped) *skipped = false;
  if (cfg_.cfo_sd.fixed()) return st.phi_sd; // pinned by configuration
  const cmat w_src = training_matrix(s_s, cfg_.cascade_len());
  // Gauss-Newton step on phi: with d = alpha Lambda_theta W c, the mean is
  // Lambda_phi d and its phi-derivative is Lambda_tilde d with
  // Lambda_tilde(m,m) = (j 2 pi m / N) exp(j 2 pi m phi / N).
  const cvec d = cfg_.alpha * impairment_phase(st.theta_sd, 0.0).cwiseProduct(w_src * st.c_hat);
  const cvec ramp = phase_ramp(n, st.phi_sd);
  cvec slope(n);
  for (int m = 0; m < n; ++m) slope(m) = junit * (2.0 * pi * m / n) * ramp(m) * d(m);
  const cvec model = ramp.cwiseProduct(d);
  herm_solver cov_solver(st.sigma_r, ecfg_.solves);
  if (used_ridge && cov_solver.ridged()) *used_ridge = true;
  const cvec cov_slope = cov_solver.solve(slope);
  const double curvature = slope.dot(cov_slope).real();
  if (!std::isfinite(curvature) || curvature <= 0.0) {
    if (skipped) *skipped = true;
    return st.phi_sd;
  }
  const double gradient_step = (y_s - model).dot(cov_slope).real() / curvature;
  st.phi_sd = std::clamp(st.phi_sd + gradient_step, cfg_.cfo_sd.lo, cfg_.cfo_sd.hi);
  refresh_covariance(st);
  return st.phi_sd;
}

// ---------------------------------------------------------------------------
// Objective.
// ---------------------------------------------------------------------------

nllf_parts joint_estimator::negative_llf_parts(const estimator_state& st, const cvec& y_s,
                                               const cvec& y_r, const cvec& s_s,
                                               const cvec& s_r) const {
  const int n = cfg_.n_subcarriers;
  check_vector(y_s, n, "y_s");
  check_vector(y_r, n, "y_r");
  const cmat w_src = training_matrix(s_s, cfg_.cascade_len());
  const cmat w_rel = training_matrix(s_r, cfg_.l_g);
  const cvec mu_top =
      cfg_.alpha * impairment_phase(st.theta_sd, st.phi_sd).cwiseProduct(w_src * st.c_hat);
  const cvec mu_bot = impairment_phase(st.theta_rd, st.phi_rd).cwiseProduct(w_rel * st.g_hat);
  const cmat sigma = point_covariance(st); // rebuilt from the state, never cached
  herm_solver cov_solver(sigma, ecfg_.solves);
  const cvec r_top = y_s - mu_top;
  const cvec r_bot = y_r - mu_bot;
  nllf_parts parts;
  parts.log_det = cov_solver.log_det() + n * std::log(cfg_.noise_var_dest);
  parts.quadratic =
      r_top.dot(cov_solver.solve(r_top)).real() + r_bot.squaredNorm() / cfg_.noise_var_dest;
  parts.prior = st.eta_sd.size() > 0 ? 0.5 * st.eta_sd.squaredNorm() : 0.0;
  return parts;
}

double joint_estimator::negative_llf(const estimator_state& st, const cvec& y_s, const cvec& y_r,
                                     const cvec& s_s, const cvec& s_r) const {
  return negative_llf_parts(st, y_s, y_r, s_s, s_r).total();
}

// ---------------------------------------------------------------------------
// Full runs.
// ---------------------------------------------------------------------------

estimator_output joint_estimator::run(const cvec& y_s, const cvec& y_r, const cvec& s_s,
                                      const cvec& s_r) const {
  estimator_output out;
  bool ridge = false;
  const double phi_rd = estimate_rd_cfo(y_r, s_r, &ridge);
  const rvec theta_rd = estimate_rd_pn(y_r, s_r, phi_rd, &ridge);
  estimator_state st = init_estimates(y_s, y_r, s_s, s_r, phi_rd, theta_rd, &ridge);

  double prev = negative_llf(st, y_s, y_r, s_s, s_r);
  out.nllf_trace.push_back(prev);
  estimator_state best = st;
  double best_val = prev;
  const double eps = ecfg_.effective_epsilon(cfg_.n_subcarriers);
  int increases = 0;
  int sweeps = 0;
  for (int it = 0; it < ecfg_.max_iters; ++it) {
    update_pn(st, y_s, s_s, &ridge);
    update_g(st, y_s, y_r, s_s, s_r, &ridge);
    update_h(st, y_s, s_s, &ridge);
    bool step_skipped = false;
    update_cfo(st, y_s, s_s, &step_skipped, &ridge);
    out.cfo_step_skipped = out.cfo_step_skipped || step_skipped;
    ++sweeps;
    const double e = negative_llf(st, y_s, y_r, s_s, s_r);
    out.nllf_trace.push_back(e);
    if (e < best_val) {
      best_val = e;
      best = st;
    }
    if (std::abs(e - prev) <= eps) {
      out.converged = true;
      break;
    }
    if (e > prev) {
      if (++increases >= ecfg_.divergence_patience) {
        out.diverged = true;
        break;
      }
    } else {
      increases = 0;
    }
    prev = e;
  }

  estimator_state result = out.converged ? std::move(st) : std::move(best);
  result.iteration = sweeps;
  result.nllf_trace = out.nllf_trace;
  out.iterations = sweeps;
  out.used_ridge = ridge;
  out.state = std::move(result);
  return out;
}

estimator_output joint_estimator::run_pn_ignoring(const cvec& y_s, const cvec& y_r, const cvec& s_s,
                                                  const cvec& s_r) const {
  // The phase-noise-blind receiver is this estimator's own initialization run
  // under a configuration that declares the oscillators clean: the stage-1
  // objective loses its profiled correction, the covariance loses its
  // Hadamard inflation, and no refinement sweeps happen.
  sim_config blind = cfg_;
  blind.pn_var_sd = 0.0;
  blind.pn_var_rd = 0.0;
  joint_estimator pn_free(blind, ecfg_);
  estimator_output out;
  bool ridge = false;
  const double phi_rd = pn_free.estimate_rd_cfo(y_r, s_r, &ridge);
  const rvec theta_rd = rvec::Zero(cfg_.n_subcarriers);
  estimator_state st = pn_free.init_estimates(y_s, y_r, s_s, s_r, phi_rd, theta_rd, &ridge);
  out.nllf_trace.push_back(pn_free.negative_llf(st, y_s, y_r, s_s, s_r));
  st.nllf_trace = out.nllf_trace;
  out.state = std::move(st);
  out.converged = true;
  out.iterations = 0;
  out.used_ridge = ridge;
  return out;
}

estimator_output run_joint_estimation(const cvec& y_s, const cvec& y_r, const cvec& s_s,
                                      const cvec& s_r, const sim_config& cfg,
                                      const estimator_config& ecfg) {
  return joint_estimator(cfg, ecfg).run(y_s, y_r, s_s, s_r);
}

} // namespace relaysim
