// Cholesky-based solver for Hermitian (or real symmetric) positive-definite
// systems with an escalating ridge fallback. Every matrix "inverse" in the
// library is expressed as solves against one of these factorizations.
#pragma once

#include <cmath>
#include <limits>
#include <stdexcept>
#include <utility>

#include <Eigen/Dense>

#include "relaysim/types.hpp"

namespace relaysim {

/// Factorization policy shared by all solvers: base ridge scale (relative to
/// the mean diagonal) and the condition-number estimate above which a ridge is
/// applied even when the factorization nominally succeeds.
struct solve_policy {
  double ridge_scale = 1e-10;
  double cond_limit = 1e12;
};

/// LLT factorization of a positive-definite matrix. If the factorization
/// fails or the condition estimate exceeds the policy limit, a ridge
/// tau = ridge_scale * trace/n is added to the diagonal and escalated by
/// factors of 10 for a few attempts before giving up.
template <typename Mat>
class psd_solver {
public:
  explicit psd_solver(Mat a, solve_policy policy = {}) : a_(std::move(a)) {
    const Eigen::Index n = a_.rows();
    if (n == 0 || a_.cols() != n) throw std::invalid_argument("psd_solver: square matrix required");
    double tau = policy.ridge_scale * std::real(a_.trace()) / static_cast<double>(n);
    if (!(tau > 0.0)) tau = policy.ridge_scale;
    llt_.compute(a_);
    bool ok = healthy(policy.cond_limit);
    for (int attempt = 0; !ok && attempt < 8; ++attempt) {
      a_.diagonal().array() += tau;
      ridge_ += tau;
      tau *= 10.0;
      llt_.compute(a_);
      ok = healthy(policy.cond_limit);
    }
    if (!ok) throw std::runtime_error("psd_solver: matrix is not positive definite");
  }

  /// The (possibly ridged) matrix that was actually factorized.
  const Mat& matrix() const { return a_; }

  template <typename Rhs>
  auto solve(const Rhs& b) const {
    return llt_.solve(b).eval();
  }

  /// log det of the factorized matrix.
  double log_det() const {
    double s = 0.0;
    for (Eigen::Index i = 0; i < a_.rows(); ++i)
      s += std::log(std::real(llt_.matrixLLT()(i, i)));
    return 2.0 * s;
  }

  bool ridged() const { return ridge_ > 0.0; }
  double ridge() const { return ridge_; }

private:
  bool healthy(double cond_limit) const {
    if (llt_.info() != Eigen::Success) return false;
    double dmin = std::numeric_limits<double>::infinity();
    double dmax = 0.0;
    for (Eigen::Index i = 0; i < a_.rows(); ++i) {
      const double d = std::real(llt_.matrixLLT()(i, i));
      if (!std::isfinite(d) || d <= 0.0) return false;
      dmin = std::min(dmin, d);
      dmax = std::max(dmax, d);
    }
    const double cond = (dmax / dmin) * (dmax / dmin); // cheap lower bound on cond(A)
    return cond <= cond_limit;
  }

  Mat a_;
  Eigen::LLT<Mat> llt_;
  double ridge_ = 0.0;
};

using herm_solver = psd_solver<cmat>;
using sym_solver = psd_solver<rmat>;

} // namespace relaysim
