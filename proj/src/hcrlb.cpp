#include "relaysim/hcrlb.hpp"

#include <cmath>
#include <random>
#include <stdexcept>

#include "relaysim/pn_subspace.hpp"

namespace relaysim {

namespace {

// Unit-magnitude rotation that makes the first tap of x real and nonnegative.
cxd first_tap_rotation(const cvec& x) {
  return std::exp(cxd(0.0, -std::arg(x(0))));
}

} // namespace

hcrlb_calculator::hcrlb_calculator(const sim_config& cfg, const link_state& truth,
                                   const cvec& s_src, const cvec& s_rel, solve_policy policy)
    : cfg_(cfg), policy_(policy) {
  cfg_.validate();
  const int n = cfg_.n_subcarriers;
  if (s_src.size() != n || s_rel.size() != n)
    throw std::invalid_argument("hcrlb_calculator: training symbols must have length N");
  if (truth.g.size() != cfg_.l_g || truth.h.size() != cfg_.l_h)
    throw std::invalid_argument("hcrlb_calculator: truth tap counts disagree with the config");
  if (truth.theta_sd.size() != n || truth.theta_rd.size() != n)
    throw std::invalid_argument("hcrlb_calculator: truth phase paths must have length N");
  if (truth.c.size() != cfg_.cascade_len())
    throw std::invalid_argument("hcrlb_calculator: truth cascade length disagrees with the config");

  lay_ = param_layout{n, cfg_.l_g, cfg_.l_h};
  alpha_ = truth.alpha;
  a2_ = alpha_ * alpha_ * cfg_.noise_var_relay;

  // Reference phases frozen at the truth: the rotated-tap parameterization
  // multiplies the training operators by these constants so that the mean at
  // the truth reproduces the original observation exactly.
  ref_g_ = std::exp(cxd(0.0, std::arg(truth.g(0))));
  ref_c_ = std::exp(cxd(0.0, std::arg(truth.c(0))));

  w_src_ = training_matrix(s_src, cfg_.cascade_len());
  w_rel_ = training_matrix(s_rel, cfg_.l_g);

  omega_ = rvec(n);
  for (int m = 0; m < n; ++m) omega_(m) = 2.0 * pi * static_cast<double>(m) / static_cast<double>(n);

  unit_g_ops_.reserve(static_cast<std::size_t>(cfg_.l_g));
  for (int m = 0; m < cfg_.l_g; ++m) {
    cvec e = cvec::Zero(cfg_.l_g);
    e(m) = cxd(1.0, 0.0);
    unit_g_ops_.push_back(build_g_matrix(e, n));
  }

  unpacked_params p;
  p.phi_sd = truth.phi_sd;
  p.phi_rd = truth.phi_rd;
  p.theta_sd = truth.theta_sd;
  p.theta_rd = truth.theta_rd;
  p.g = first_tap_rotation(truth.g) * truth.g;
  p.h = first_tap_rotation(truth.h) * truth.h;
  truth_ = pack(p);
}

rvec hcrlb_calculator::truth_params() const { return truth_; }

rvec hcrlb_calculator::params_with_pn(const rvec& theta_sd, const rvec& theta_rd) const {
  const int n = lay_.n;
  if (theta_sd.size() != n || theta_rd.size() != n)
    throw std::invalid_argument("params_with_pn: phase paths must have length N");
  rvec lambda = truth_;
  for (int m = 0; m < n; ++m) {
    lambda(lay_.theta_sd(m)) = theta_sd(m);
    lambda(lay_.theta_rd(m)) = theta_rd(m);
  }
  return lambda;
}

rvec hcrlb_calculator::pack(const unpacked_params& p) const {
  const int n = lay_.n;
  if (p.theta_sd.size() != n || p.theta_rd.size() != n)
    throw std::invalid_argument("pack: phase paths must have length N");
  if (p.g.size() != lay_.l_g || p.h.size() != lay_.l_h)
    throw std::invalid_argument("pack: tap counts disagree with the layout");
  rvec lambda = rvec::Zero(lay_.size());
  lambda(lay_.phi_sd()) = p.phi_sd;
  lambda(lay_.phi_rd()) = p.phi_rd;
  for (int m = 0; m < n; ++m) {
    lambda(lay_.theta_sd(m)) = p.theta_sd(m);
    lambda(lay_.theta_rd(m)) = p.theta_rd(m);
  }
  // First taps are single real coordinates: any residual imaginary part of a
  // rotated first tap is below rounding noise and is dropped.
  lambda(lay_.g_begin()) = p.g(0).real();
  for (int m = 1; m < lay_.l_g; ++m) {
    lambda(lay_.g_re(m)) = p.g(m).real();
    lambda(lay_.g_im(m)) = p.g(m).imag();
  }
  lambda(lay_.h_begin()) = p.h(0).real();
  for (int m = 1; m < lay_.l_h; ++m) {
    lambda(lay_.h_re(m)) = p.h(m).real();
    lambda(lay_.h_im(m)) = p.h(m).imag();
  }
  return lambda;
}

unpacked_params hcrlb_calculator::unpack(const rvec& lambda) const {
  if (lambda.size() != lay_.size())
    throw std::invalid_argument("unpack: parameter vector has the wrong length");
  const int n = lay_.n;
  unpacked_params p;
  p.phi_sd = lambda(lay_.phi_sd());
  p.phi_rd = lambda(lay_.phi_rd());
  p.theta_sd = rvec(n);
  p.theta_rd = rvec(n);
  for (int m = 0; m < n; ++m) {
    p.theta_sd(m) = lambda(lay_.theta_sd(m));
    p.theta_rd(m) = lambda(lay_.theta_rd(m));
  }
  p.g = cvec(lay_.l_g);
  p.g(0) = cxd(lambda(lay_.g_begin()), 0.0);
  for (int m = 1; m < lay_.l_g; ++m) p.g(m) = cxd(lambda(lay_.g_re(m)), lambda(lay_.g_im(m)));
  p.h = cvec(lay_.l_h);
  p.h(0) = cxd(lambda(lay_.h_begin()), 0.0);
  for (int m = 1; m < lay_.l_h; ++m) p.h(m) = cxd(lambda(lay_.h_re(m)), lambda(lay_.h_im(m)));
  return p;
}

cvec hcrlb_calculator::mean_at(const rvec& lambda) const {
  const unpacked_params p = unpack(lambda);
  const int n = lay_.n;
  const cvec u_sd = impairment_phase(p.theta_sd, p.phi_sd);
  const cvec u_rd = impairment_phase(p.theta_rd, p.phi_rd);
  const cvec c = convolve(p.g, p.h);
  cvec mu(2 * n);
  mu.head(n) = (alpha_ * ref_c_) * u_sd.cwiseProduct(w_src_ * c);
  mu.tail(n) = ref_g_ * u_rd.cwiseProduct(w_rel_ * p.g);
  return mu;
}

cmat hcrlb_calculator::relay_block_covariance(const rvec& lambda) const {
  const unpacked_params p = unpack(lambda);
  const int n = lay_.n;
  const cvec u_sd = impairment_phase(p.theta_sd, p.phi_sd);
  const cmat g_op = build_g_matrix(p.g, n);
  cmat sigma = a2_ * (u_sd.asDiagonal() * (g_op * g_op.adjoint()) * u_sd.conjugate().asDiagonal());
  sigma += cfg_.noise_var_dest * cmat::Identity(n, n);
  return sigma;
}

cmat hcrlb_calculator::mean_jacobian(const rvec& lambda) const {
  const unpacked_params p = unpack(lambda);
  const int n = lay_.n;
  const cvec u_sd = impairment_phase(p.theta_sd, p.phi_sd);
  const cvec u_rd = impairment_phase(p.theta_rd, p.phi_rd);
  const cvec c = convolve(p.g, p.h);
  const cvec mu_s = (alpha_ * ref_c_) * u_sd.cwiseProduct(w_src_ * c);
  const cvec mu_r = ref_g_ * u_rd.cwiseProduct(w_rel_ * p.g);
  const cvec jw = junit * omega_.cast<cxd>();

  cmat jac = cmat::Zero(2 * n, lay_.size());

  // CFO columns: each sample picks up a j * 2 pi m / N factor.
  jac.col(lay_.phi_sd()).head(n) = jw.cwiseProduct(mu_s);
  jac.col(lay_.phi_rd()).tail(n) = jw.cwiseProduct(mu_r);

  // Phase-noise columns: sample m of the corresponding block scales by j.
  for (int m = 0; m < n; ++m) {
    jac(m, lay_.theta_sd(m)) = junit * mu_s(m);
    jac(n + m, lay_.theta_rd(m)) = junit * mu_r(m);
  }

  // g columns: the cascade factors as c = H_tilde g with H_tilde built from h,
  // and the relay-path mean is directly linear in g.
  const cmat h_tilde = conv_toeplitz(p.h, lay_.l_g);
  cmat e_cols(2 * n, lay_.l_g);
  e_cols.topRows(n) = (alpha_ * ref_c_) * (u_sd.asDiagonal() * (w_src_ * h_tilde));
  e_cols.bottomRows(n) = ref_g_ * (u_rd.asDiagonal() * cmat(w_rel_));
  jac.col(lay_.g_begin()) = e_cols.col(0);
  for (int m = 1; m < lay_.l_g; ++m) {
    jac.col(lay_.g_re(m)) = e_cols.col(m);
    jac.col(lay_.g_im(m)) = junit * e_cols.col(m);
  }

  // h columns: c = G_tilde h with G_tilde built from g; the relay path does
  // not involve h.
  const cmat g_tilde = conv_toeplitz(p.g, lay_.l_h);
  const cmat k_cols = (alpha_ * ref_c_) * (u_sd.asDiagonal() * (w_src_ * g_tilde));
  jac.col(lay_.h_begin()).head(n) = k_cols.col(0);
  for (int m = 1; m < lay_.l_h; ++m) {
    jac.col(lay_.h_re(m)).head(n) = k_cols.col(m);
    jac.col(lay_.h_im(m)).head(n) = junit * k_cols.col(m);
  }
  return jac;
}

cmat hcrlb_calculator::relay_cov_derivative(const rvec& lambda, int index) const {
  if (index < 0 || index >= lay_.size())
    throw std::invalid_argument("relay_cov_derivative: parameter index out of range");
  const unpacked_params p = unpack(lambda);
  const int n = lay_.n;
  const cvec u_sd = impairment_phase(p.theta_sd, p.phi_sd);
  const cmat g_op = build_g_matrix(p.g, n);

  // Source-path CFO: every entry scales by j (omega_r - omega_c).
  if (index == lay_.phi_sd()) {
    const cmat s = a2_ * (u_sd.asDiagonal() * (g_op * g_op.adjoint()) * u_sd.conjugate().asDiagonal());
    const cvec jw = junit * omega_.cast<cxd>();
    return cmat(jw.asDiagonal() * s - s * jw.asDiagonal());
  }

  // Source-path phase noise sample m: row m scales by j, column m by -j, and
  // the diagonal entry cancels.
  if (index >= lay_.theta_sd(0) && index <= lay_.theta_sd(n - 1)) {
    const int m = index - lay_.theta_sd(0);
    const cmat s = a2_ * (u_sd.asDiagonal() * (g_op * g_op.adjoint()) * u_sd.conjugate().asDiagonal());
    cmat d = cmat::Zero(n, n);
    d.row(m) = junit * s.row(m);
    d.col(m) -= junit * s.col(m);
    return d;
  }

  // g taps: the convolution operator is linear in the taps, so the derivative
  // of G G^H in the direction of unit tap m is B_m G^H + G B_m^H (real part)
  // or j (B_m G^H - G B_m^H) (imaginary part), rotated by the impairments.
  const int gb = lay_.g_begin();
  if (index >= gb && index < lay_.h_begin()) {
    int m = 0;
    bool imag_part = false;
    if (index == gb) {
      m = 0;
    } else if (index <= lay_.g_re(lay_.l_g - 1)) {
      m = index - gb;
    } else {
      m = index - (gb + lay_.l_g - 1);
      imag_part = true;
    }
    const cmat prod = unit_g_ops_[static_cast<std::size_t>(m)] * g_op.adjoint();
    cmat base;
    if (imag_part)
      base = junit * (prod - prod.adjoint());
    else
      base = prod + prod.adjoint();
    return cmat(a2_ * (u_sd.asDiagonal() * base * u_sd.conjugate().asDiagonal()));
  }

  // Everything else (r-d CFO, r-d phase noise, h taps) does not enter the
  // covariance.
  return cmat::Zero(n, n);
}

rmat hcrlb_calculator::fim_at(const rvec& lambda) const {
  const int n = lay_.n;
  const int q = lay_.size();

  const cmat jac = mean_jacobian(lambda);
  const cmat sigma_r = relay_block_covariance(lambda);
  herm_solver sol(sigma_r, policy_);

  cmat siginv_jac(2 * n, q);
  siginv_jac.topRows(n) = sol.solve(cmat(jac.topRows(n)));
  siginv_jac.bottomRows(n) = jac.bottomRows(n) / cfg_.noise_var_dest;
  rmat fim = 2.0 * (jac.adjoint() * siginv_jac).real();

  // Covariance information: trace terms over every pair of parameters the
  // covariance actually depends on (source-path CFO, source-path phase noise,
  // g taps). All other derivative pairs vanish identically.
  std::vector<int> active;
  active.reserve(static_cast<std::size_t>(n + 2 * lay_.l_g));
  active.push_back(lay_.phi_sd());
  for (int m = 0; m < n; ++m) active.push_back(lay_.theta_sd(m));
  for (int i = lay_.g_begin(); i < lay_.h_begin(); ++i) active.push_back(i);

  std::vector<cmat> whitened;
  whitened.reserve(active.size());
  for (int idx : active) whitened.push_back(sol.solve(relay_cov_derivative(lambda, idx)));

  for (std::size_t a = 0; a < active.size(); ++a) {
    for (std::size_t b = a; b < active.size(); ++b) {
      const double t = whitened[a].cwiseProduct(whitened[b].transpose()).sum().real();
      fim(active[a], active[b]) += t;
      if (a != b) fim(active[b], active[a]) += t;
    }
  }

  fim = 0.5 * (fim + rmat(fim.transpose()));
  return fim;
}

rmat hcrlb_calculator::prior_information(bool* warned) const {
  if (warned) *warned = false;
  const int n = lay_.n;
  rmat prior = rmat::Zero(lay_.size(), lay_.size());
  // A zero increment variance makes the phase covariance singular (the path is
  // deterministically zero); the pseudo-inverse of that covariance is zero, so
  // the block is left empty and flagged.
  if (cfg_.pn_var_sd > 0.0)
    prior.block(lay_.theta_sd(0), lay_.theta_sd(0), n, n) = pn_covariance_inverse(n, cfg_.pn_var_sd);
  else if (warned)
    *warned = true;
  if (cfg_.pn_var_rd > 0.0)
    prior.block(lay_.theta_rd(0), lay_.theta_rd(0), n, n) = pn_covariance_inverse(n, cfg_.pn_var_rd);
  else if (warned)
    *warned = true;
  return prior;
}

rmat hcrlb_calculator::bim(int n_mc, std::uint64_t seed, rmat* fim_avg, bool* prior_warned) const {
  if (n_mc < 1) throw std::invalid_argument("bim: n_mc must be >= 1");
  const int q = lay_.size();
  rmat sum = rmat::Zero(q, q);
  for (int k = 0; k < n_mc; ++k) {
    std::mt19937_64 rng(derive_seed(seed, static_cast<std::uint64_t>(k), 0));
    const rvec th_sd = generate_wiener_pn(lay_.n, cfg_.pn_var_sd, rng);
    const rvec th_rd = generate_wiener_pn(lay_.n, cfg_.pn_var_rd, rng);
    sum += fim_at(params_with_pn(th_sd, th_rd));
  }
  rmat avg = sum / static_cast<double>(n_mc);
  if (fim_avg) *fim_avg = avg;
  return avg + prior_information(prior_warned);
}

bound_report hcrlb_calculator::evaluate(int n_mc, std::uint64_t seed) const {
  rmat fim_avg;
  bool warned = false;
  const rmat b = bim(n_mc, seed, &fim_avg, &warned);
  bound_report report = transform_and_extract(fim_avg, b, lay_);
  report.prior_warning = warned;
  return report;
}

rmat transformation_matrix(const param_layout& lay) {
  const int n = lay.n;
  const int q = lay.size();
  rmat xi = rmat::Zero(q - 2, q);
  // Reference-removed combined phase: delta(m) = theta_sd(m) - theta_sd(0)
  // + 2 pi m phi_sd / n for m = 1..n-1. The m = 0 row is identically zero and
  // is dropped, which removes the first reference parameter.
  for (int m = 1; m < n; ++m) {
    const int r = m - 1;
    xi(r, lay.phi_sd()) = 2.0 * pi * static_cast<double>(m) / static_cast<double>(n);
    xi(r, lay.theta_sd(m)) = 1.0;
    xi(r, lay.theta_sd(0)) = -1.0;
  }
  // Everything from phi_rd onward passes through unchanged. The second
  // reference parameter was already folded into the rotated-tap convention
  // (first taps real), which is why exactly two rows drop overall.
  for (int k = 0; k + n + 1 < q; ++k) xi(n - 1 + k, n + 1 + k) = 1.0;
  return xi;
}

bound_report transform_and_extract(const rmat& fim_avg, const rmat& bim, const param_layout& lay) {
  const int q = lay.size();
  if (bim.rows() != q || bim.cols() != q)
    throw std::invalid_argument("transform_and_extract: bim has the wrong shape");

  bound_report report;
  report.fim_avg = fim_avg;
  report.bim = bim;
  report.xi = transformation_matrix(lay);

  // Symmetric eigendecomposition handles both the regular inverse and the
  // pseudo-inverse fallback with one code path.
  const rmat sym = 0.5 * (bim + rmat(bim.transpose()));
  Eigen::SelfAdjointEigenSolver<rmat> eig(sym);
  if (eig.info() != Eigen::Success)
    throw std::runtime_error("transform_and_extract: eigendecomposition failed");
  const rvec vals = eig.eigenvalues();
  const double scale = vals.cwiseAbs().maxCoeff();
  const double cutoff = scale * 1e-12;
  rvec inv_vals(q);
  for (int i = 0; i < q; ++i) {
    if (vals(i) <= cutoff) {
      inv_vals(i) = 0.0;
      report.used_pseudo_inverse = true;
    } else {
      inv_vals(i) = 1.0 / vals(i);
    }
  }
  const rmat binv = eig.eigenvectors() * inv_vals.asDiagonal() * eig.eigenvectors().transpose();

  rmat mod = report.xi * binv * report.xi.transpose();
  report.hcrlb_mod = 0.5 * (mod + rmat(mod.transpose()));

  const int n = lay.n;
  const int g_rows = lay.g_begin() - 2;
  const int h_rows = lay.h_begin() - 2;
  report.bound_cfo_pn = report.hcrlb_mod.diagonal().head(n - 1).sum();
  report.bound_g = report.hcrlb_mod.diagonal().segment(g_rows, 2 * lay.l_g - 1).sum();
  report.bound_h = report.hcrlb_mod.diagonal().segment(h_rows, 2 * lay.l_h - 1).sum();
  return report;
}

} // namespace relaysim
