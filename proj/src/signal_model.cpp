#include "relaysim/signal_model.hpp"

#include <cmath>

namespace relaysim {

cmat dft_matrix(int n) {
  if (n < 1) throw std::invalid_argument("dft_matrix: n must be >= 1");
  cmat f(n, n);
  const double scale = 1.0 / std::sqrt(static_cast<double>(n));
  for (int r = 0; r < n; ++r)
    for (int k = 0; k < n; ++k) {
      const double ang = -2.0 * pi * static_cast<double>(r) * static_cast<double>(k) / n;
      f(r, k) = scale * cxd(std::cos(ang), std::sin(ang));
    }
  return f;
}

cmat dft_submatrix(int n, int l) {
  if (n < 1 || l < 1 || l > n) throw std::invalid_argument("dft_submatrix: need 1 <= l <= n");
  cmat f(n, l);
  for (int r = 0; r < n; ++r)
    for (int k = 0; k < l; ++k) {
      const double ang = -2.0 * pi * static_cast<double>(r) * static_cast<double>(k) / n;
      f(r, k) = cxd(std::cos(ang), std::sin(ang));
    }
  return f;
}

cvec freq_response(const cvec& taps, int n) {
  const int l = static_cast<int>(taps.size());
  if (l < 1 || l > n) throw std::invalid_argument("freq_response: need 1 <= len(taps) <= n");
  cvec out = cvec::Zero(n);
  for (int r = 0; r < n; ++r) {
    cxd acc = 0.0;
    for (int k = 0; k < l; ++k) {
      const double ang = -2.0 * pi * static_cast<double>(r) * static_cast<double>(k) / n;
      acc += taps(k) * cxd(std::cos(ang), std::sin(ang));
    }
    out(r) = acc;
  }
  return out;
}

cvec phase_ramp(int n, double phi) {
  cvec out(n);
  for (int m = 0; m < n; ++m) {
    const double ang = 2.0 * pi * static_cast<double>(m) * phi / n;
    out(m) = cxd(std::cos(ang), std::sin(ang));
  }
  return out;
}

cvec impairment_phase(const rvec& theta, double phi) {
  const int n = static_cast<int>(theta.size());
  cvec out(n);
  for (int m = 0; m < n; ++m) {
    const double ang = theta(m) + 2.0 * pi * static_cast<double>(m) * phi / n;
    out(m) = cxd(std::cos(ang), std::sin(ang));
  }
  return out;
}

rvec generate_wiener_pn(int n, double sigma2, std::mt19937_64& rng) {
  if (sigma2 < 0.0) throw std::invalid_argument("generate_wiener_pn: variance must be >= 0");
  rvec theta = rvec::Zero(n);
  if (sigma2 == 0.0) return theta;
  std::normal_distribution<double> incr(0.0, std::sqrt(sigma2));
  double acc = 0.0;
  for (int k = 0; k < n; ++k) {
    acc += incr(rng);
    theta(k) = acc;
  }
  return theta;
}

cvec complex_gaussian(int n, double var, std::mt19937_64& rng) {
  if (var < 0.0) throw std::invalid_argument("complex_gaussian: variance must be >= 0");
  cvec out = cvec::Zero(n);
  if (var == 0.0) return out;
  std::normal_distribution<double> comp(0.0, std::sqrt(var / 2.0));
  for (int k = 0; k < n; ++k) {
    const double re = comp(rng);
    const double im = comp(rng);
    out(k) = cxd(re, im);
  }
  return out;
}

cmat build_g_matrix(const cvec& g, int n) {
  const int lg = static_cast<int>(g.size());
  if (lg < 1 || n < 1) throw std::invalid_argument("build_g_matrix: empty inputs");
  cmat out = cmat::Zero(n, n + lg - 1);
  for (int r = 0; r < n; ++r)
    for (int k = 0; k < lg; ++k) out(r, r + k) = g(lg - 1 - k);
  return out;
}

cmat conv_toeplitz(const cvec& x, int cols) {
  const int lx = static_cast<int>(x.size());
  if (lx < 1 || cols < 1) throw std::invalid_argument("conv_toeplitz: empty inputs");
  cmat out = cmat::Zero(lx + cols - 1, cols);
  for (int m = 0; m < cols; ++m)
    for (int t = 0; t < lx; ++t) out(t + m, m) = x(t);
  return out;
}

void build_toeplitz_pair(const cvec& h, const cvec& g, cmat& g_tilde, cmat& h_tilde) {
  g_tilde = conv_toeplitz(g, static_cast<int>(h.size()));
  h_tilde = conv_toeplitz(h, static_cast<int>(g.size()));
}

cvec convolve(const cvec& a, const cvec& b) {
  const int la = static_cast<int>(a.size());
  const int lb = static_cast<int>(b.size());
  if (la < 1 || lb < 1) throw std::invalid_argument("convolve: empty inputs");
  cvec out = cvec::Zero(la + lb - 1);
  for (int i = 0; i < la; ++i)
    for (int k = 0; k < lb; ++k) out(i + k) += a(i) * b(k);
  return out;
}

double relay_gain(const sim_config& cfg) {
  if (cfg.p_src <= 0.0 || cfg.p_relay <= 0.0)
    throw std::invalid_argument("relay_gain: powers must be > 0");
  if (cfg.noise_var_relay < 0.0 || cfg.cp_len < 0 || cfg.n_subcarriers < 1 || cfg.l_h < 1)
    throw std::invalid_argument("relay_gain: invalid configuration");
  const double n = static_cast<double>(cfg.n_subcarriers);
  const double sigma2_h = 1.0 / static_cast<double>(cfg.l_h); // unit-energy channel, per-tap share
  const double p_z = n * cfg.l_h * sigma2_h * cfg.p_src + n * cfg.noise_var_relay;
  const double pbar_z = p_z * (cfg.cp_len + n) / n;
  if (pbar_z <= 0.0) throw std::invalid_argument("relay_gain: nonpositive received power");
  return std::sqrt(cfg.p_relay / pbar_z);
}

cmat training_matrix(const cvec& s_freq, int l) {
  const int n = static_cast<int>(s_freq.size());
  const cmat f = dft_matrix(n);
  const cmat fl = dft_submatrix(n, l);
  return f.adjoint() * (s_freq.asDiagonal() * fl);
}

link_state draw_link_state(const sim_config& cfg, std::mt19937_64& rng) {
  link_state st;
  st.h = complex_gaussian(cfg.l_h, 1.0 / cfg.l_h, rng);
  st.g = complex_gaussian(cfg.l_g, 1.0 / cfg.l_g, rng);
  st.c = convolve(st.g, st.h);
  std::uniform_real_distribution<double> u_sd(cfg.cfo_sd.lo, cfg.cfo_sd.hi);
  std::uniform_real_distribution<double> u_rd(cfg.cfo_rd.lo, cfg.cfo_rd.hi);
  st.phi_sd = cfg.cfo_sd.fixed() ? cfg.cfo_sd.lo : u_sd(rng);
  st.phi_rd = cfg.cfo_rd.fixed() ? cfg.cfo_rd.lo : u_rd(rng);
  st.theta_sd = generate_wiener_pn(cfg.n_subcarriers, cfg.pn_var_sd, rng);
  st.theta_rd = generate_wiener_pn(cfg.n_subcarriers, cfg.pn_var_rd, rng);
  st.alpha = cfg.alpha;
  return st;
}

noise_draw draw_noise(const sim_config& cfg, std::mt19937_64& rng) {
  noise_draw nz;
  nz.v = complex_gaussian(cfg.n_subcarriers + cfg.l_g - 1, cfg.noise_var_relay, rng);
  nz.w_s = complex_gaussian(cfg.n_subcarriers, cfg.noise_var_dest, rng);
  nz.w_r = complex_gaussian(cfg.n_subcarriers, cfg.noise_var_dest, rng);
  return nz;
}

noise_draw zero_noise(const sim_config& cfg) {
  noise_draw nz;
  nz.v = cvec::Zero(cfg.n_subcarriers + cfg.l_g - 1);
  nz.w_s = cvec::Zero(cfg.n_subcarriers);
  nz.w_r = cvec::Zero(cfg.n_subcarriers);
  return nz;
}

cvec qpsk_symbols(int n, double power, std::mt19937_64& rng) {
  if (power <= 0.0) throw std::invalid_argument("qpsk_symbols: power must be > 0");
  const double a = std::sqrt(power / 2.0);
  std::uniform_int_distribution<int> quadrant(0, 3);
  cvec out(n);
  for (int k = 0; k < n; ++k) {
    const int q = quadrant(rng);
    out(k) = cxd((q & 1) ? -a : a, (q & 2) ? -a : a);
  }
  return out;
}

observation synthesize_training(const sim_config& cfg, const link_state& st, const cvec& s_src,
                                const cvec& s_relay, const noise_draw& noise) {
  const int n = cfg.n_subcarriers;
  if (s_src.size() != n || s_relay.size() != n)
    throw std::invalid_argument("synthesize_training: training symbols must have length N");
  if (noise.v.size() != n + cfg.l_g - 1 || noise.w_s.size() != n || noise.w_r.size() != n)
    throw std::invalid_argument("synthesize_training: noise dimensions do not match");
  if (st.h.size() != cfg.l_h || st.g.size() != cfg.l_g)
    throw std::invalid_argument("synthesize_training: channel tap counts do not match");

  observation obs;
  const cmat w_src = training_matrix(s_src, cfg.cascade_len());
  const cmat g_op = build_g_matrix(st.g, n);
  const cvec u_sd = impairment_phase(st.theta_sd, st.phi_sd);
  obs.y_s = st.alpha * u_sd.cwiseProduct(w_src * st.c + g_op * noise.v) + noise.w_s;

  const cmat w_rel = training_matrix(s_relay, cfg.l_g);
  const cvec u_rd = impairment_phase(st.theta_rd, st.phi_rd);
  obs.y_r = u_rd.cwiseProduct(w_rel * st.g) + noise.w_r;
  return obs;
}

observation synthesize_training(const sim_config& cfg, const link_state& st, const cvec& s_src,
                                const cvec& s_relay, std::mt19937_64& rng) {
  return synthesize_training(cfg, st, s_src, s_relay, draw_noise(cfg, rng));
}

cvec synthesize_data_symbol(const sim_config& cfg, const link_state& st, const rvec& theta,
                            const cvec& s_comb, const cvec& v, const cvec& w) {
  const int n = cfg.n_subcarriers;
  if (s_comb.size() != n || theta.size() != n)
    throw std::invalid_argument("synthesize_data_symbol: symbol/theta must have length N");
  if (v.size() != n + cfg.l_g - 1 || w.size() != n)
    throw std::invalid_argument("synthesize_data_symbol: noise dimensions do not match");
  const cmat f = dft_matrix(n);
  const cvec c_freq = freq_response(st.c, n);
  const cvec signal = f.adjoint() * c_freq.cwiseProduct(s_comb).eval();
  const cmat g_op = build_g_matrix(st.g, n);
  const cvec u = impairment_phase(theta, st.phi_sd);
  return st.alpha * u.cwiseProduct(signal + g_op * v) + w;
}

} // namespace relaysim
