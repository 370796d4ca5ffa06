// Error metrics that respect the inherent ambiguities of the estimation
// problem: channel estimates are compared up to a common phase rotation, and
// carrier/phase trajectories are compared through their phase increments.
#pragma once

#include "relaysim/types.hpp"

#include <cstdint>
#include <vector>

namespace relaysim {

/// Squared error between two tap vectors after rotating each so its first tap
/// is real and nonnegative: || e^{-j arg est(0)} est - e^{-j arg truth(0)} truth ||^2.
/// If a vector's first tap is negligible (|x(0)| < 1e-15 * max|x|), the phase
/// of its largest-magnitude tap is used instead; `used_fallback`, when
/// non-null, reports whether that happened for either input.
double mse_channel(const cvec& est, const cvec& truth, bool* used_fallback = nullptr);

/// Squared error of the combined carrier/phase trajectory. Each (theta, phi)
/// pair is mapped to delta(m) = theta(m) + 2*pi*m*phi/n, the per-sample total
/// phase; the first element of each delta sequence is subtracted (a constant
/// phase is unobservable) and the squared norm of the difference is returned.
double mse_cfo_pn(const rvec& theta_est, double phi_est,
                  const rvec& theta_truth, double phi_truth);

/// Fraction of positions where the two bit sequences differ.
double ber(const std::vector<std::uint8_t>& est, const std::vector<std::uint8_t>& truth);

} // namespace relaysim
