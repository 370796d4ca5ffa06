#include "relaysim/pn_subspace.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <vector>

namespace relaysim {

rmat pn_covariance(int n, double sigma2) {
  if (n <= 0) throw std::invalid_argument("pn_covariance: n must be positive");
  if (sigma2 < 0.0) throw std::invalid_argument("pn_covariance: sigma2 must be nonnegative");
  rmat psi(n, n);
  for (int r = 0; r < n; ++r)
    for (int c = 0; c < n; ++c) psi(r, c) = sigma2 * (std::min(r, c) + 1);
  return psi;
}

rmat pn_covariance_inverse(int n, double sigma2) {
  if (n <= 0) throw std::invalid_argument("pn_covariance_inverse: n must be positive");
  if (sigma2 <= 0.0) throw std::invalid_argument("pn_covariance_inverse: sigma2 must be positive");
  rmat inv = rmat::Zero(n, n);
  const double s = 1.0 / sigma2;
  for (int i = 0; i < n; ++i) {
    inv(i, i) = (i == n - 1) ? s : 2.0 * s;
    if (i + 1 < n) {
      inv(i, i + 1) = -s;
      inv(i + 1, i) = -s;
    }
  }
  return inv;
}

pn_basis build_basis(const rmat& psi, int m) {
  const int n = static_cast<int>(psi.rows());
  if (n == 0 || psi.cols() != n) throw std::invalid_argument("build_basis: psi must be square and nonempty");
  if (m <= 0 || m > n) throw std::invalid_argument("build_basis: m must be in [1, n]");
  if (!psi.isApprox(psi.transpose(), 1e-12))
    throw std::invalid_argument("build_basis: psi must be symmetric");

  Eigen::SelfAdjointEigenSolver<rmat> eig(psi);
  if (eig.info() != Eigen::Success)
    throw std::runtime_error("build_basis: eigendecomposition failed");

  rvec vals = eig.eigenvalues();  // ascending
  const double vmax = vals.cwiseAbs().maxCoeff();
  if (vals.minCoeff() < -1e-10 * vmax * n)
    throw std::invalid_argument("build_basis: psi is not positive semidefinite");

  // Reorder descending.
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) { return vals(a) > vals(b); });

  pn_basis basis;
  basis.m = m;
  basis.eigvals.resize(n);
  basis.pi.resize(n, m);
  for (int k = 0; k < n; ++k) basis.eigvals(k) = std::max(vals(order[k]), 0.0);
  for (int k = 0; k < m; ++k) {
    rvec u = eig.eigenvectors().col(order[k]);
    // Deterministic sign: make the largest-magnitude entry positive.
    int imax = 0;
    u.cwiseAbs().maxCoeff(&imax);
    if (u(imax) < 0.0) u = -u;
    basis.pi.col(k) = u * std::sqrt(basis.eigvals(k));
  }
  return basis;
}

pn_basis build_basis(int n, double sigma2, int m) {
  return build_basis(pn_covariance(n, sigma2), m);
}

rvec expand(const pn_basis& basis, const rvec& eta) {
  if (eta.size() != basis.m) throw std::invalid_argument("expand: eta size must equal basis.m");
  return basis.pi * eta;
}

} // namespace relaysim
