#include "relaysim/metrics.hpp"

#include <cmath>
#include <complex>
#include <stdexcept>

namespace relaysim {

namespace {

// Rotation that makes the reference tap of x real and nonnegative. Falls back
// to the largest-magnitude tap when the first tap is negligible.
cxd alignment_rotation(const cvec& x, bool* used_fallback) {
  const double maxabs = x.cwiseAbs().maxCoeff();
  if (maxabs == 0.0) return cxd(1.0, 0.0);
  int ref = 0;
  if (std::abs(x(0)) < 1e-15 * maxabs) {
    x.cwiseAbs().maxCoeff(&ref);
    if (used_fallback) *used_fallback = true;
  }
  return std::exp(cxd(0.0, -std::arg(x(ref))));
}

} // namespace

double mse_channel(const cvec& est, const cvec& truth, bool* used_fallback) {
  if (est.size() != truth.size())
    throw std::invalid_argument("mse_channel: size mismatch");
  if (est.size() == 0) throw std::invalid_argument("mse_channel: empty input");
  if (used_fallback) *used_fallback = false;
  const cxd re = alignment_rotation(est, used_fallback);
  const cxd rt = alignment_rotation(truth, used_fallback);
  return (re * est - rt * truth).squaredNorm();
}

double mse_cfo_pn(const rvec& theta_est, double phi_est,
                  const rvec& theta_truth, double phi_truth) {
  const auto n = theta_est.size();
  if (n == 0 || theta_truth.size() != n)
    throw std::invalid_argument("mse_cfo_pn: theta vectors must be nonempty and equal length");
  rvec diff(n);
  for (Eigen::Index m = 0; m < n; ++m) {
    const double de = theta_est(m) + 2.0 * pi * static_cast<double>(m) * phi_est / static_cast<double>(n);
    const double dt = theta_truth(m) + 2.0 * pi * static_cast<double>(m) * phi_truth / static_cast<double>(n);
    diff(m) = de - dt;
  }
  // A constant phase offset is unobservable; compare increments relative to
  // each trajectory's first sample.
  diff.array() -= diff(0);
  return diff.squaredNorm();
}

double ber(const std::vector<std::uint8_t>& est, const std::vector<std::uint8_t>& truth) {
  if (est.size() != truth.size()) throw std::invalid_argument("ber: size mismatch");
  if (est.empty()) throw std::invalid_argument("ber: empty input");
  std::size_t errors = 0;
  for (std::size_t i = 0; i < est.size(); ++i)
    if ((est[i] != 0) != (truth[i] != 0)) ++errors;
  return static_cast<double>(errors) / static_cast<double>(est.size());
}

} // namespace relaysim
