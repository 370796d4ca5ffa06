// Discrete baseband model of the amplify-and-forward OFDM relay link:
// deterministic matrix builders (DFT, training, convolution operators),
// stochastic impairment processes (Wiener phase noise, CFO draws, channel
// taps), and synthesis of the received training / data observations.
#pragma once

#include <random>

#include "relaysim/types.hpp"

namespace relaysim {

/// Ground-truth impairments for one link realization.
struct link_state {
  cvec h; ///< source-to-relay taps, length l_h
  cvec g; ///< relay-to-destination taps, length l_g
  cvec c; ///< cascade taps conv(g, h), length l_h + l_g - 1
  double phi_sd = 0.0;
  double phi_rd = 0.0;
  rvec theta_sd; ///< length N, radians
  rvec theta_rd; ///< length N, radians
  double alpha = 1.0;
};

/// One draw of every noise source entering a training interval.
struct noise_draw {
  cvec v;   ///< relay front-end noise, length N + l_g - 1
  cvec w_s; ///< destination noise on the source-relay-destination observation
  cvec w_r; ///< destination noise on the relay-destination observation
};

/// Received training-phase vectors at the destination.
struct observation {
  cvec y_s; ///< source -> relay (amplify-and-forward) -> destination
  cvec y_r; ///< relay -> destination
};

/// Unitary DFT matrix: entry (r,k) = exp(-j 2 pi r k / n) / sqrt(n).
cmat dft_matrix(int n);

/// First l columns of the unnormalized DFT matrix: entry (r,k) = exp(-j 2 pi r k / n).
/// Equals sqrt(n) times the corresponding unitary-DFT columns.
cmat dft_submatrix(int n, int l);

/// Frequency response of a tap vector on n bins: the unnormalized DFT of the
/// zero-padded taps.
cvec freq_response(const cvec& taps, int n);

/// Diagonal of the CFO rotation: exp(j 2 pi m phi / n), m = 0..n-1.
cvec phase_ramp(int n, double phi);

/// Elementwise exp(j(theta + 2 pi m phi / n)): the combined CFO + phase-noise
/// rotation applied to sample m.
cvec impairment_phase(const rvec& theta, double phi);

/// Wiener phase-noise path: theta(k) = sum_{i<=k} delta(i) with i.i.d.
/// delta ~ N(0, sigma2), so Var[theta(k)] = (k+1) sigma2.
rvec generate_wiener_pn(int n, double sigma2, std::mt19937_64& rng);

/// Circularly-symmetric complex Gaussian vector with per-entry variance `var`.
cvec complex_gaussian(int n, double var, std::mt19937_64& rng);

/// Banded convolution operator applied to the relay noise: n x (n + len(g) - 1),
/// row r holds the reversed taps [g(L-1), ..., g(0)] starting at column r, so
/// that (G v)(r) is the r-th sample of the valid part of conv(g, v).
cmat build_g_matrix(const cvec& g, int n);

/// Tall banded Toeplitz convolution matrix: (len(x) + cols - 1) x cols with
/// entry (t, m) = x(t - m). conv_toeplitz(x, k) * y == conv(x, y) for y of
/// length k.
cmat conv_toeplitz(const cvec& x, int cols);

/// The two factorizations of the cascade: g_tilde (L x l_h, built from g) and
/// h_tilde (L x l_g, built from h) with g_tilde * h == h_tilde * g == conv(g, h).
void build_toeplitz_pair(const cvec& h, const cvec& g, cmat& g_tilde, cmat& h_tilde);

/// Full linear convolution of two tap vectors.
cvec convolve(const cvec& a, const cvec& b);

/// Relay amplification that turns the average received power at the relay into
/// the relay transmit power budget: alpha = sqrt(p_relay / pbar_z) with
/// pbar_z = (cp_len + n)/n * (n * l_h * sigma2_h * p_src + n * sigma2_R) and
/// per-tap channel variance sigma2_h = 1 / l_h.
double relay_gain(const sim_config& cfg);

/// Training observation operator W = F^H Diag(s) F_[l] (n x l): maps length-l
/// taps to the time-domain signal received through them when the frequency-
/// domain symbol s is transmitted.
cmat training_matrix(const cvec& s_freq, int l);

/// Draws channels (per-tap variance 1/L), CFOs (uniform over the configured
/// ranges), and Wiener phase-noise paths for one trial.
link_state draw_link_state(const sim_config& cfg, std::mt19937_64& rng);

/// Fresh noise for one training interval.
noise_draw draw_noise(const sim_config& cfg, std::mt19937_64& rng);

/// All-zero noise of the correct shapes (for controlled experiments).
noise_draw zero_noise(const sim_config& cfg);

/// Random QPSK symbol vector with per-entry power `power`.
cvec qpsk_symbols(int n, double power, std::mt19937_64& rng);

/// Received training vectors: y_s through the amplified relay cascade with the
/// s-d impairments, y_r through the relay-destination channel with the r-d
/// impairments.
observation synthesize_training(const sim_config& cfg, const link_state& st, const cvec& s_src,
                                const cvec& s_relay, const noise_draw& noise);

/// Convenience overload drawing the noise from `rng`.
observation synthesize_training(const sim_config& cfg, const link_state& st, const cvec& s_src,
                                const cvec& s_relay, std::mt19937_64& rng);

/// One data-phase symbol through the relay cascade. `theta` is the s-d
/// phase-noise path over this symbol (the data phase generally continues the
/// training-phase oscillator process, so it is supplied explicitly); v and w
/// are the relay / destination noise vectors.
cvec synthesize_data_symbol(const sim_config& cfg, const link_state& st, const rvec& theta,
                            const cvec& s_comb, const cvec& v, const cvec& w);

} // namespace relaysim
