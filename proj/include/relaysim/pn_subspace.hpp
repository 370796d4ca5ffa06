// Wiener phase-noise covariance, its analytic inverse, and the truncated
// eigenbasis used to represent a phase-noise path with a handful of
// coefficients: theta = Pi * eta with eta standard normal.
#pragma once

#include "relaysim/types.hpp"

namespace relaysim {

/// Covariance of a Wiener phase-noise path: Psi(r, c) = sigma2 * (min(r, c) + 1).
rmat pn_covariance(int n, double sigma2);

/// Analytic inverse of pn_covariance: (1/sigma2) times the second-difference
/// tridiagonal matrix [-1, 2, -1] with the last diagonal entry equal to 1.
/// Requires sigma2 > 0.
rmat pn_covariance_inverse(int n, double sigma2);

/// Truncated eigenrepresentation of a phase-noise covariance.
struct pn_basis {
  rmat pi;     ///< n x m, top-m eigenvectors scaled by sqrt(eigenvalue)
  rvec eigvals; ///< all n eigenvalues, descending
  int m = 0;

  /// Fraction of the total path energy captured by the retained eigenvalues.
  double captured_energy() const {
    const double total = eigvals.sum();
    return total > 0.0 ? eigvals.head(m).sum() / total : 1.0;
  }
};

/// Eigendecomposition of `psi` truncated to the m dominant modes. Eigenvalues
/// are sorted descending; each eigenvector's sign is normalized so that its
/// largest-magnitude entry is positive, making the basis deterministic.
/// Rejects inputs with an eigenvalue below -1e-10 * max(|eigenvalue|) * n.
pn_basis build_basis(const rmat& psi, int m);

/// build_basis(pn_covariance(n, sigma2), m).
pn_basis build_basis(int n, double sigma2, int m);

/// theta = Pi * eta.
rvec expand(const pn_basis& basis, const rvec& eta);

} // namespace relaysim
