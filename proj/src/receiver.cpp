#include "relaysim/receiver.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace relaysim {

namespace {

constexpr double inv_sqrt2 = 0.7071067811865475244008443621048490393;

void check_bits(const std::vector<std::uint8_t>& bits) {
  if (bits.size() % 2 != 0) throw std::invalid_argument("qpsk_map: bit count must be even");
  for (std::uint8_t b : bits)
    if (b > 1) throw std::invalid_argument("qpsk_map: bits must be 0 or 1");
}

} // namespace

cvec qpsk_map(const std::vector<std::uint8_t>& bits) {
  check_bits(bits);
  cvec out(static_cast<Eigen::Index>(bits.size() / 2));
  for (Eigen::Index k = 0; k < out.size(); ++k) {
    const double re = bits[static_cast<std::size_t>(2 * k)] ? -inv_sqrt2 : inv_sqrt2;
    const double im = bits[static_cast<std::size_t>(2 * k + 1)] ? -inv_sqrt2 : inv_sqrt2;
    out(k) = cxd(re, im);
  }
  return out;
}

std::vector<std::uint8_t> qpsk_demap(const cvec& symbols) {
  std::vector<std::uint8_t> bits(static_cast<std::size_t>(2 * symbols.size()));
  for (Eigen::Index k = 0; k < symbols.size(); ++k) {
    bits[static_cast<std::size_t>(2 * k)] = symbols(k).real() < 0.0 ? 1 : 0;
    bits[static_cast<std::size_t>(2 * k + 1)] = symbols(k).imag() < 0.0 ? 1 : 0;
  }
  return bits;
}

comb_symbol make_comb_symbol(const sim_config& cfg, const std::vector<std::uint8_t>& bits,
                             std::mt19937_64& rng) {
  cfg.validate();
  const int n = cfg.n_subcarriers;
  std::vector<int> pilots = cfg.effective_pilot_indices();
  std::sort(pilots.begin(), pilots.end());
  if (std::adjacent_find(pilots.begin(), pilots.end()) != pilots.end())
    throw std::invalid_argument("make_comb_symbol: duplicate pilot index");
  const int p = static_cast<int>(pilots.size());
  if (p < cfg.subspace_dim)
    throw std::invalid_argument(
        "make_comb_symbol: pilot count must be at least the subspace dimension");
  if (static_cast<int>(bits.size()) != 2 * (n - p))
    throw std::invalid_argument("make_comb_symbol: need two bits per data subcarrier");

  comb_symbol comb;
  comb.pilot_indices = std::move(pilots);
  comb.bits = bits;
  comb.data_indices.reserve(static_cast<std::size_t>(n - p));
  std::size_t next = 0;
  for (int k = 0; k < n; ++k) {
    if (next < comb.pilot_indices.size() && comb.pilot_indices[next] == k)
      ++next;
    else
      comb.data_indices.push_back(k);
  }

  const double amp = std::sqrt(cfg.p_src);
  const cvec pilot_vals = qpsk_symbols(p, cfg.p_src, rng);
  const cvec data_vals = amp * qpsk_map(bits);
  comb.values = cvec::Zero(n);
  for (int i = 0; i < p; ++i) comb.values(comb.pilot_indices[static_cast<std::size_t>(i)]) = pilot_vals(i);
  for (int i = 0; i < n - p; ++i)
    comb.values(comb.data_indices[static_cast<std::size_t>(i)]) = data_vals(i);
  return comb;
}

channel_knowledge knowledge_from(const estimator_state& st) {
  return channel_knowledge{st.phi_sd, st.c_hat, st.g_hat};
}

channel_knowledge knowledge_from(const link_state& truth) {
  return channel_knowledge{truth.phi_sd, truth.c, truth.g};
}

data_receiver::data_receiver(const sim_config& cfg, const receiver_config& rcfg)
    : cfg_(cfg), rcfg_(rcfg) {
  cfg_.validate();
  if (rcfg_.max_iters < 1)
    throw std::invalid_argument("data_receiver: max_iters must be >= 1");
  f_ = dft_matrix(cfg_.n_subcarriers);
  basis_sd_ = build_basis(cfg_.n_subcarriers, cfg_.pn_var_sd, cfg_.subspace_dim);
}

void data_receiver::check_inputs(const cvec& y, const channel_knowledge& know) const {
  if (y.size() != cfg_.n_subcarriers)
    throw std::invalid_argument("data_receiver: observation must have length N");
  if (know.c.size() != cfg_.cascade_len())
    throw std::invalid_argument("data_receiver: cascade tap count disagrees with the config");
  if (know.g.size() != cfg_.l_g)
    throw std::invalid_argument("data_receiver: relay tap count disagrees with the config");
}

void data_receiver::check_comb(const comb_symbol& comb) const {
  const int n = cfg_.n_subcarriers;
  if (comb.n() != n) throw std::invalid_argument("data_receiver: comb symbol must have length N");
  if (comb.pilot_count() + comb.data_count() != n)
    throw std::invalid_argument("data_receiver: pilot/data index sets must partition the symbol");
  std::vector<char> seen(static_cast<std::size_t>(n), 0);
  for (int idx : comb.pilot_indices) {
    if (idx < 0 || idx >= n || seen[static_cast<std::size_t>(idx)])
      throw std::invalid_argument("data_receiver: invalid pilot index set");
    seen[static_cast<std::size_t>(idx)] = 1;
  }
  for (int idx : comb.data_indices) {
    if (idx < 0 || idx >= n || seen[static_cast<std::size_t>(idx)])
      throw std::invalid_argument("data_receiver: invalid data index set");
    seen[static_cast<std::size_t>(idx)] = 1;
  }
}

cmat data_receiver::combined_channel(const rvec& theta, const channel_knowledge& know) const {
  const int n = cfg_.n_subcarriers;
  if (theta.size() != n)
    throw std::invalid_argument("combined_channel: theta must have length N");
  const cvec u = impairment_phase(theta, know.phi_sd);
  const cvec c_freq = freq_response(know.c, n);
  cmat t = f_.adjoint() * c_freq.asDiagonal();
  return cfg_.alpha * (u.asDiagonal() * t);
}

cmat data_receiver::noise_covariance(const rvec& theta, const channel_knowledge& know) const {
  const int n = cfg_.n_subcarriers;
  if (theta.size() != n)
    throw std::invalid_argument("noise_covariance: theta must have length N");
  cmat sigma = cmat::Zero(n, n);
  if (cfg_.noise_var_relay > 0.0) {
    const cmat gmat = build_g_matrix(know.g, n);
    const cvec u = impairment_phase(theta, know.phi_sd);
    const double gain = cfg_.alpha * cfg_.alpha * cfg_.noise_var_relay;
    const cmat rotated = u.asDiagonal() * (gmat * gmat.adjoint());
    sigma = gain * (rotated * u.conjugate().asDiagonal());
  }
  sigma.diagonal().array() += cfg_.noise_var_dest;
  return sigma;
}

rvec data_receiver::track_pn_data(const cvec& y, const cvec& s_full, const channel_knowledge& know,
                                  const rvec& theta_k, rvec* eta_out, bool* used_ridge) const {
  const int n = cfg_.n_subcarriers;
  check_inputs(y, know);
  if (s_full.size() != n)
    throw std::invalid_argument("track_pn_data: symbol vector must have length N");
  if (theta_k.size() != n)
    throw std::invalid_argument("track_pn_data: theta_k must have length N");
  // Mean linearized around the zero phase path: mu(eta) ~ mu0 + j Diag(mu0)
  // Pi eta, a full replacement of theta on every call; the covariance stays
  // at the current path estimate.
  const cvec c_freq = freq_response(know.c, n);
  const cvec mu0 = cfg_.alpha * phase_ramp(n, know.phi_sd)
                                    .cwiseProduct(f_.adjoint() * c_freq.cwiseProduct(s_full).eval());
  const cmat basis = junit * (mu0.asDiagonal() * basis_sd_.pi.cast<cxd>());
  herm_solver cov_solver(noise_covariance(theta_k, know), rcfg_.solves);
  if (used_ridge && cov_solver.ridged()) *used_ridge = true;
  rmat normal = (basis.adjoint() * cov_solver.solve(basis)).real();
  normal.diagonal().array() += 0.5;
  const rvec rhs = (basis.adjoint() * cov_solver.solve((y - mu0).eval())).real();
  sym_solver normal_solver(std::move(normal), rcfg_.solves);
  if (used_ridge && normal_solver.ridged()) *used_ridge = true;
  const rvec eta = normal_solver.solve(rhs);
  if (eta_out) *eta_out = eta;
  return basis_sd_.pi * eta;
}

cvec data_receiver::detect_data(const cvec& y, const rvec& theta, const channel_knowledge& know,
                                const comb_symbol& comb, bool* used_ridge) const {
  check_inputs(y, know);
  check_comb(comb);
  const int d = comb.data_count();
  if (d == 0) return cvec();
  const cmat t = combined_channel(theta, know);
  cmat t_data(t.rows(), d);
  for (int i = 0; i < d; ++i) t_data.col(i) = t.col(comb.data_indices[static_cast<std::size_t>(i)]);
  cvec resid = y;
  for (int idx : comb.pilot_indices) resid -= t.col(idx) * comb.values(idx);

  herm_solver cov_solver(noise_covariance(theta, know), rcfg_.solves);
  if (used_ridge && cov_solver.ridged()) *used_ridge = true;
  const cmat whitened = cov_solver.solve(t_data);
  cmat gram = t_data.adjoint() * whitened;
  const cvec rhs = t_data.adjoint() * cov_solver.solve(resid);
  herm_solver gram_solver(std::move(gram), rcfg_.solves);
  if (used_ridge && gram_solver.ridged()) *used_ridge = true;
  return gram_solver.solve(rhs);
}

double data_receiver::objective(const cvec& y, const cvec& s_full, const rvec& theta,
                                const rvec& eta, const channel_knowledge& know) const {
  const int n = cfg_.n_subcarriers;
  check_inputs(y, know);
  if (s_full.size() != n)
    throw std::invalid_argument("objective: symbol vector must have length N");
  const cvec c_freq = freq_response(know.c, n);
  const cvec mu = cfg_.alpha * impairment_phase(theta, know.phi_sd)
                                   .cwiseProduct(f_.adjoint() * c_freq.cwiseProduct(s_full).eval());
  herm_solver cov_solver(noise_covariance(theta, know), rcfg_.solves);
  const cvec resid = y - mu;
  return cov_solver.log_det() + resid.dot(cov_solver.solve(resid)).real() +
         0.5 * eta.squaredNorm();
}

detection_result data_receiver::detect_once(const cvec& y, const rvec& theta,
                                            const channel_knowledge& know,
                                            const comb_symbol& comb) const {
  detection_result res;
  res.theta_hat = theta;
  res.eta_hat = rvec::Zero(basis_sd_.m);
  bool ridge = false;
  res.soft_symbols = detect_data(y, theta, know, comb, &ridge);
  res.used_ridge = ridge;
  res.hard_bits = qpsk_demap(res.soft_symbols);
  res.iterations = 1;
  res.converged = true;
  cvec s_full = comb.values;
  for (int i = 0; i < comb.data_count(); ++i)
    s_full(comb.data_indices[static_cast<std::size_t>(i)]) = res.soft_symbols(i);
  res.objective_trace.push_back(objective(y, s_full, theta, res.eta_hat, know));
  return res;
}

detection_result data_receiver::run_detection(const cvec& y, const channel_knowledge& know,
                                              const comb_symbol& comb) const {
  const int n = cfg_.n_subcarriers;
  check_inputs(y, know);
  check_comb(comb);
  const double eps = rcfg_.effective_epsilon(n);
  bool ridge = false;

  // Initialization mirrors the training interval: zero phase path, data
  // estimates from a plain detection pass under the zero-path covariance.
  rvec theta = rvec::Zero(n);
  rvec eta = rvec::Zero(basis_sd_.m);
  cvec soft = detect_data(y, theta, know, comb, &ridge);
  cvec s_full = comb.values;
  auto scatter = [&](const cvec& data) {
    for (int i = 0; i < comb.data_count(); ++i)
      s_full(comb.data_indices[static_cast<std::size_t>(i)]) = data(i);
  };
  scatter(soft);

  detection_result res;
  res.objective_trace.push_back(objective(y, s_full, theta, eta, know));

  rvec best_theta = theta;
  rvec best_eta = eta;
  cvec best_soft = soft;
  double best_obj = res.objective_trace.back();
  int increases = 0;

  for (int iter = 1; iter <= rcfg_.max_iters; ++iter) {
    theta = track_pn_data(y, s_full, know, theta, &eta, &ridge);
    soft = detect_data(y, theta, know, comb, &ridge);
    scatter(soft);
    const double obj = objective(y, s_full, theta, eta, know);
    const double prev = res.objective_trace.back();
    res.objective_trace.push_back(obj);
    res.iterations = iter;
    if (obj < best_obj) {
      best_obj = obj;
      best_theta = theta;
      best_eta = eta;
      best_soft = soft;
    }
    if (obj > prev) {
      if (++increases >= rcfg_.divergence_patience) {
        res.diverged = true;
        break;
      }
    } else {
      increases = 0;
      if (prev - obj <= eps) {
        res.converged = true;
        break;
      }
    }
  }

  res.theta_hat = best_theta;
  res.eta_hat = best_eta;
  res.soft_symbols = best_soft;
  res.hard_bits = qpsk_demap(best_soft);
  res.used_ridge = ridge;
  return res;
}

detection_result data_receiver::run_pn_ignoring(const cvec& y, const channel_knowledge& know,
                                                const comb_symbol& comb) const {
  check_inputs(y, know);
  check_comb(comb);
  return detect_once(y, rvec::Zero(cfg_.n_subcarriers), know, comb);
}

detection_result data_receiver::run_genie(const cvec& y, const rvec& theta_true,
                                          const channel_knowledge& know,
                                          const comb_symbol& comb) const {
  check_inputs(y, know);
  check_comb(comb);
  if (theta_true.size() != cfg_.n_subcarriers)
    throw std::invalid_argument("run_genie: theta_true must have length N");
  return detect_once(y, theta_true, know, comb);
}

} // namespace relaysim
