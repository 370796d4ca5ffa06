#include "doctest.h"

#include "relaysim/signal_model.hpp"
#include "relaysim/pn_subspace.hpp"
#include "test_util.hpp"

#include <cmath>

using namespace relaysim;
using testutil::max_abs_diff;

namespace {

sim_config base_config() {
  sim_config cfg;
  cfg.n_subcarriers = 64;
  cfg.cp_len = 16;
  cfg.l_h = 6;
  cfg.l_g = 6;
  return cfg;
}

} // namespace

TEST_CASE("dft_matrix definitional values and unitarity") {
  const cmat f1 = dft_matrix(1);
  CHECK(f1.rows() == 1);
  CHECK(std::abs(f1(0, 0) - cxd(1.0, 0.0)) < 1e-15);

  const cmat f2 = dft_matrix(2);
  const double r = 1.0 / std::sqrt(2.0);
  CHECK(std::abs(f2(0, 0) - cxd(r, 0.0)) < 1e-15);
  CHECK(std::abs(f2(0, 1) - cxd(r, 0.0)) < 1e-15);
  CHECK(std::abs(f2(1, 0) - cxd(r, 0.0)) < 1e-15);
  CHECK(std::abs(f2(1, 1) - cxd(-r, 0.0)) < 1e-14);

  const cmat f64 = dft_matrix(64);
  CHECK(max_abs_diff(f64 * f64.adjoint(), cmat::Identity(64, 64)) < 1e-12);

  CHECK_THROWS_AS(dft_matrix(0), std::invalid_argument);
}

TEST_CASE("dft_submatrix equals sqrt(n) times the unitary columns") {
  const int n = 16, l = 5;
  const cmat f = dft_matrix(n);
  const cmat fl = dft_submatrix(n, l);
  CHECK(max_abs_diff(fl, std::sqrt(double(n)) * f.leftCols(l)) < 1e-12);
  CHECK_THROWS_AS(dft_submatrix(4, 5), std::invalid_argument);
}

TEST_CASE("freq_response equals unnormalized DFT of zero-padded taps") {
  auto rng = testutil::seeded_rng(11);
  const int n = 32;
  const cvec taps = complex_gaussian(5, 1.0, rng);
  const cvec direct = dft_submatrix(n, 5) * taps;
  CHECK(max_abs_diff(freq_response(taps, n), direct) < 1e-12);
}

TEST_CASE("generate_wiener_pn zero variance and Monte Carlo statistics") {
  auto rng = testutil::seeded_rng(21);
  const rvec z = generate_wiener_pn(8, 0.0, rng);
  CHECK(z.cwiseAbs().maxCoeff() == 0.0);
  CHECK_THROWS_AS(generate_wiener_pn(8, -1.0, rng), std::invalid_argument);

  // Sample variance of the endpoint and full covariance over 1e5 paths.
  const int n = 64, draws = 100000;
  const double sigma2 = 1e-4;
  rmat paths(n, draws);
  for (int d = 0; d < draws; ++d) paths.col(d) = generate_wiener_pn(n, sigma2, rng);

  const rvec end = paths.row(n - 1).transpose();
  const double mean_end = end.mean();
  const double var_end = (end.array() - mean_end).square().sum() / (draws - 1);
  CHECK(var_end == doctest::Approx(n * sigma2).epsilon(0.03));

  const rmat cov = (paths * paths.transpose()) / double(draws);
  const rmat psi = pn_covariance(n, sigma2);
  CHECK((cov - psi).norm() / psi.norm() < 0.03);
}

TEST_CASE("build_g_matrix patterns and convolution oracle") {
  cvec g1(1);
  g1 << cxd(1.0, 0.0);
  CHECK(max_abs_diff(build_g_matrix(g1, 3), cmat::Identity(3, 3)) == 0.0);

  cvec g2(2);
  const cxd a(0.3, -1.1), b(-0.7, 0.2);
  g2 << a, b;
  cmat expected(2, 3);
  expected << b, a, cxd(0, 0), cxd(0, 0), b, a;
  CHECK(max_abs_diff(build_g_matrix(g2, 2), expected) == 0.0);

  auto rng = testutil::seeded_rng(31);
  const int n = 16, lg = 4;
  const cvec g = complex_gaussian(lg, 1.0, rng);
  const cvec v = complex_gaussian(n + lg - 1, 1.0, rng);
  const cvec full = convolve(g, v);
  // Valid part of the convolution: kernel fully inside the input.
  const cvec valid = full.segment(lg - 1, n);
  CHECK(max_abs_diff(build_g_matrix(g, n) * v, valid) < 1e-12);
}

TEST_CASE("build_toeplitz_pair factorizations agree with direct convolution") {
  auto rng = testutil::seeded_rng(41);

  // Identity relay channel: cascade equals h.
  cvec one(1);
  one << cxd(1.0, 0.0);
  const cvec h5 = complex_gaussian(5, 1.0, rng);
  cmat g_tilde, h_tilde;
  build_toeplitz_pair(h5, one, g_tilde, h_tilde);
  CHECK(max_abs_diff(g_tilde * h5, h5) < 1e-15);
  CHECK(max_abs_diff(h_tilde * one, h5) < 1e-15);

  // Identity source channel: cascade equals g.
  const cvec g5 = complex_gaussian(5, 1.0, rng);
  build_toeplitz_pair(one, g5, g_tilde, h_tilde);
  CHECK(max_abs_diff(h_tilde * g5, g5) < 1e-15);

  // Random taps: both factorizations hit the direct convolution.
  for (int trial = 0; trial < 1000; ++trial) {
    const cvec h = complex_gaussian(6, 1.0, rng);
    const cvec g = complex_gaussian(6, 1.0, rng);
    build_toeplitz_pair(h, g, g_tilde, h_tilde);
    const cvec c = convolve(g, h);
    CHECK(max_abs_diff(g_tilde * h, c) < 1e-12);
    CHECK(max_abs_diff(h_tilde * g, c) < 1e-12);
  }
}

TEST_CASE("relay_gain formula and identity") {
  // Unit gain when the relay budget equals the average received power.
  sim_config cfg = base_config();
  cfg.p_src = 10.0;
  cfg.noise_var_relay = 1.0;
  const double n = cfg.n_subcarriers;
  const double pbar = (cfg.cp_len + n) / n * (n * cfg.p_src + n * cfg.noise_var_relay);
  cfg.p_relay = pbar;
  CHECK(relay_gain(cfg) == doctest::Approx(1.0).epsilon(1e-12));

  // Noiseless relay, no CP, unit received power per subcarrier: the average
  // received power is N, so the unit relay budget gives alpha^2 = 1/N.
  sim_config cfg2 = base_config();
  cfg2.cp_len = 0;
  cfg2.noise_var_relay = 0.0;
  cfg2.p_src = 1.0; // l_h * sigma2_h * p_src = 1 since sigma2_h = 1/l_h
  cfg2.p_relay = 1.0;
  const double a2 = relay_gain(cfg2);
  CHECK(a2 * a2 == doctest::Approx(1.0 / cfg2.n_subcarriers).epsilon(1e-12));

  // alpha^2 * pbar_z = p_relay for arbitrary parameters.
  sim_config cfg3 = base_config();
  cfg3.p_src = 3.7;
  cfg3.p_relay = 2.2;
  cfg3.noise_var_relay = 0.45;
  cfg3.cp_len = 20;
  const double alpha = relay_gain(cfg3);
  const double nn = cfg3.n_subcarriers;
  const double pbar3 =
      (cfg3.cp_len + nn) / nn * (nn * cfg3.l_h * (1.0 / cfg3.l_h) * cfg3.p_src + nn * cfg3.noise_var_relay);
  CHECK(alpha * alpha * pbar3 == doctest::Approx(cfg3.p_relay).epsilon(1e-12));

  sim_config bad = base_config();
  bad.p_src = -1.0;
  CHECK_THROWS_AS(relay_gain(bad), std::invalid_argument);
}

TEST_CASE("synthesize_training with all impairments disabled") {
  sim_config cfg = base_config();
  cfg.l_h = 1;
  cfg.l_g = 1;
  cfg.cp_len = 4;
  cfg.pn_var_sd = cfg.pn_var_rd = 0.0;
  cfg.cfo_sd = {0.0, 0.0};
  cfg.cfo_rd = {0.0, 0.0};
  cfg.alpha = 1.7;

  auto rng = testutil::seeded_rng(51);
  link_state st = draw_link_state(cfg, rng);
  st.h(0) = cxd(1.0, 0.0);
  st.g(0) = cxd(1.0, 0.0);
  st.c = convolve(st.g, st.h);

  const cvec s_src = qpsk_symbols(cfg.n_subcarriers, 2.0, rng);
  const cvec s_rel = qpsk_symbols(cfg.n_subcarriers, 2.0, rng);
  const observation obs = synthesize_training(cfg, st, s_src, s_rel, zero_noise(cfg));

  const cmat f = dft_matrix(cfg.n_subcarriers);
  CHECK(max_abs_diff(obs.y_s, cfg.alpha * (f.adjoint() * s_src)) < 1e-12);
  CHECK(max_abs_diff(obs.y_r, f.adjoint() * s_rel) < 1e-12);
}

TEST_CASE("noiseless training equals impaired circular convolution") {
  sim_config cfg = base_config();
  auto rng = testutil::seeded_rng(61);
  const link_state st = draw_link_state(cfg, rng);
  const cvec s_src = qpsk_symbols(cfg.n_subcarriers, 3.0, rng);
  const cvec s_rel = qpsk_symbols(cfg.n_subcarriers, 3.0, rng);
  const observation obs = synthesize_training(cfg, st, s_src, s_rel, zero_noise(cfg));

  const cmat f = dft_matrix(cfg.n_subcarriers);
  const cvec x = f.adjoint() * s_src; // time-domain training signal
  const cvec circ = testutil::circular_convolve(st.c, x);
  const cvec u = impairment_phase(st.theta_sd, st.phi_sd);
  CHECK(max_abs_diff(obs.y_s, st.alpha * u.cwiseProduct(circ)) < 1e-11);
}

TEST_CASE("relay-path observation satisfies the power budget") {
  sim_config cfg = base_config();
  cfg.p_relay = 4.0;
  cfg.noise_var_dest = 0.8;
  auto rng = testutil::seeded_rng(71);

  const int trials = 10000;
  double acc = 0.0;
  for (int t = 0; t < trials; ++t) {
    const link_state st = draw_link_state(cfg, rng);
    const cvec s_src = qpsk_symbols(cfg.n_subcarriers, cfg.p_src, rng);
    const cvec s_rel = qpsk_symbols(cfg.n_subcarriers, cfg.p_relay, rng);
    const observation obs = synthesize_training(cfg, st, s_src, s_rel, rng);
    acc += obs.y_r.squaredNorm();
  }
  const double n = cfg.n_subcarriers;
  const double sigma2_g = 1.0 / cfg.l_g; // per-tap variance used by draw_link_state
  const double expected = n * cfg.l_g * sigma2_g * cfg.p_relay + n * cfg.noise_var_dest;
  CHECK(acc / trials == doctest::Approx(expected).epsilon(0.03));
}

TEST_CASE("synthesize_training rejects dimension mismatches") {
  sim_config cfg = base_config();
  auto rng = testutil::seeded_rng(81);
  const link_state st = draw_link_state(cfg, rng);
  const cvec s = qpsk_symbols(cfg.n_subcarriers, 1.0, rng);
  const cvec s_short = qpsk_symbols(cfg.n_subcarriers - 1, 1.0, rng);
  CHECK_THROWS_AS(synthesize_training(cfg, st, s_short, s, zero_noise(cfg)), std::invalid_argument);
  noise_draw bad = zero_noise(cfg);
  bad.v = cvec::Zero(3);
  CHECK_THROWS_AS(synthesize_training(cfg, st, s, s, bad), std::invalid_argument);
}

TEST_CASE("synthesize_data_symbol degenerates to the training first hop") {
  sim_config cfg = base_config();
  auto rng = testutil::seeded_rng(91);
  const link_state st = draw_link_state(cfg, rng);
  const cvec s = qpsk_symbols(cfg.n_subcarriers, 2.0, rng);
  const cvec s_rel = qpsk_symbols(cfg.n_subcarriers, 2.0, rng);
  const noise_draw nz = draw_noise(cfg, rng);

  const observation obs = synthesize_training(cfg, st, s, s_rel, nz);
  const cvec y_data = synthesize_data_symbol(cfg, st, st.theta_sd, s, nz.v, nz.w_s);
  CHECK(max_abs_diff(y_data, obs.y_s) < 1e-11);
}

TEST_CASE("synthesize_data_symbol matches the explicit combined channel") {
  sim_config cfg = base_config();
  auto rng = testutil::seeded_rng(101);
  const link_state st = draw_link_state(cfg, rng);
  const int n = cfg.n_subcarriers;
  const cvec s = qpsk_symbols(n, 2.0, rng);
  const cvec zero_v = cvec::Zero(n + cfg.l_g - 1);
  const cvec zero_w = cvec::Zero(n);
  const cvec y = synthesize_data_symbol(cfg, st, st.theta_sd, s, zero_v, zero_w);

  // Combined channel alpha * Diag(u) * F^H * Diag(c_freq).
  const cmat f = dft_matrix(n);
  const cvec u = impairment_phase(st.theta_sd, st.phi_sd);
  const cmat combined =
      st.alpha * (u.asDiagonal() * (f.adjoint() * cmat(freq_response(st.c, n).asDiagonal())));
  CHECK(max_abs_diff(y, combined * s) < 1e-11);
}

TEST_CASE("data symbol is ICI-free without phase impairments") {
  sim_config cfg = base_config();
  cfg.pn_var_sd = 0.0;
  cfg.cfo_sd = {0.0, 0.0};
  auto rng = testutil::seeded_rng(111);
  const link_state st = draw_link_state(cfg, rng);
  const int n = cfg.n_subcarriers;
  const cvec s = qpsk_symbols(n, 2.0, rng);
  const cvec y =
      synthesize_data_symbol(cfg, st, st.theta_sd, s, cvec::Zero(n + cfg.l_g - 1), cvec::Zero(n));
  const cvec y_freq = dft_matrix(n) * y;
  const cvec per_subcarrier = st.alpha * freq_response(st.c, n).cwiseProduct(s);
  CHECK(max_abs_diff(y_freq, per_subcarrier) < 1e-11);
}

TEST_CASE("circulant identity holds up to N = 256") {
  auto rng = testutil::seeded_rng(121);
  for (int n : {8, 64, 256}) {
    const int l = 7;
    const cvec c = complex_gaussian(l, 1.0, rng);
    const cvec x = complex_gaussian(n, 1.0, rng);
    const cmat f = dft_matrix(n);
    const cvec via_fourier = f.adjoint() * freq_response(c, n).cwiseProduct(f * x).eval();
    CHECK(max_abs_diff(via_fourier, testutil::circular_convolve(c, x)) < 1e-11);
  }
}

TEST_CASE("draw_link_state respects configured ranges and cascade identity") {
  sim_config cfg = base_config();
  cfg.cfo_sd = {-0.4, 0.4};
  cfg.cfo_rd = {-0.2, 0.2};
  auto rng = testutil::seeded_rng(131);
  for (int t = 0; t < 200; ++t) {
    const link_state st = draw_link_state(cfg, rng);
    CHECK(st.phi_sd >= -0.4);
    CHECK(st.phi_sd <= 0.4);
    CHECK(st.phi_rd >= -0.2);
    CHECK(st.phi_rd <= 0.2);
    CHECK(st.c.size() == cfg.cascade_len());
    CHECK(max_abs_diff(st.c, convolve(st.g, st.h)) < 1e-14);
  }
  sim_config pinned = base_config();
  pinned.cfo_sd = {0.123, 0.123};
  const link_state st = draw_link_state(pinned, rng);
  CHECK(st.phi_sd == 0.123);
}

TEST_CASE("qpsk_symbols are constant modulus with the requested power") {
  auto rng = testutil::seeded_rng(141);
  const cvec s = qpsk_symbols(4096, 2.5, rng);
  for (int k = 0; k < s.size(); ++k) CHECK(std::norm(s(k)) == doctest::Approx(2.5).epsilon(1e-12));
  // All four constellation points appear.
  int quadrants[4] = {0, 0, 0, 0};
  for (int k = 0; k < s.size(); ++k)
    quadrants[(s(k).real() < 0 ? 1 : 0) + (s(k).imag() < 0 ? 2 : 0)]++;
  for (int q = 0; q < 4; ++q) CHECK(quadrants[q] > 0);
}

TEST_CASE("sim_config validation catches bad geometry") {
  sim_config cfg = base_config();
  cfg.cp_len = cfg.cascade_len() - 1;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = base_config();
  cfg.subspace_dim = cfg.n_subcarriers + 1;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = base_config();
  CHECK_NOTHROW(cfg.validate());
  const auto pilots = cfg.effective_pilot_indices();
  CHECK(int(pilots.size()) == cfg.pilot_count);
  CHECK(pilots[0] == 0);
  CHECK(pilots[1] == 2); // uniform comb with spacing N / pilot_count
}

TEST_CASE("derive_seed separates streams and is order-stable") {
  const auto s1 = derive_seed(7, 100, 0);
  const auto s2 = derive_seed(7, 100, 1);
  const auto s3 = derive_seed(7, 101, 0);
  CHECK(s1 != s2);
  CHECK(s1 != s3);
  CHECK(derive_seed(7, 100, 0) == s1);
}
