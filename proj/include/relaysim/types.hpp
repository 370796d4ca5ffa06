// Core scalar/matrix aliases, the scenario configuration record shared by every
// module, and the deterministic seed-derivation helpers used by the Monte Carlo
// harness.
#pragma once

#include <complex>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace relaysim {

using cxd = std::complex<double>;
using cvec = Eigen::VectorXcd;
using cmat = Eigen::MatrixXcd;
using rvec = Eigen::VectorXd;
using rmat = Eigen::MatrixXd;

inline constexpr double pi = 3.141592653589793238462643383279502884;
inline constexpr cxd junit{0.0, 1.0};

/// Closed interval for a normalized CFO; lo == hi pins the value.
struct cfo_range {
  double lo = 0.0;
  double hi = 0.0;

  bool fixed() const { return lo == hi; }
};

/// Scenario parameters for one simulated link. All lengths are in samples /
/// subcarriers, powers are per-subcarrier symbol powers, variances are
/// per-sample. Indexing is 0-based everywhere in this library.
struct sim_config {
  int n_subcarriers = 64;  ///< N, DFT size
  int cp_len = 16;         ///< cyclic prefix length (must cover the cascade)
  int l_h = 6;             ///< source-to-relay channel tap count
  int l_g = 6;             ///< relay-to-destination channel tap count
  double pn_var_sd = 1e-4; ///< Wiener phase-noise increment variance, s-d oscillators [rad^2]
  double pn_var_rd = 1e-4; ///< Wiener phase-noise increment variance, r-d oscillators [rad^2]
  cfo_range cfo_sd{-0.4, 0.4}; ///< normalized CFO range, source-destination
  cfo_range cfo_rd{-0.2, 0.2}; ///< normalized CFO range, relay-destination
  double p_src = 1.0;          ///< per-subcarrier training/data power at the source
  double p_relay = 1.0;        ///< per-subcarrier training power at the relay
  double noise_var_relay = 1.0; ///< sigma^2_R, relay front-end noise
  double noise_var_dest = 1.0;  ///< sigma^2_D, destination front-end noise
  int subspace_dim = 32;        ///< M, phase-noise eigenbasis truncation
  int pilot_count = 32;         ///< pilots per comb data symbol
  std::vector<int> pilot_indices; ///< explicit pilot positions; empty = uniform comb
  double alpha = 1.0;             ///< relay amplification gain (known at the receiver)
  std::uint64_t rng_seed = 1;

  /// Length of the cascade channel c = g * h.
  int cascade_len() const { return l_h + l_g - 1; }

  /// Validates the static relationships between fields; throws
  /// std::invalid_argument naming the offending field.
  void validate() const;

  /// Pilot positions for comb symbols: the explicit list when given, otherwise
  /// pilot_count indices spread uniformly over the N subcarriers.
  std::vector<int> effective_pilot_indices() const;
};

inline void sim_config::validate() const {
  if (n_subcarriers < 1) throw std::invalid_argument("sim_config: n_subcarriers must be >= 1");
  if (l_h < 1 || l_g < 1) throw std::invalid_argument("sim_config: tap counts must be >= 1");
  if (cp_len < cascade_len())
    throw std::invalid_argument("sim_config: cp_len must cover the cascade length l_h + l_g - 1");
  if (pn_var_sd < 0.0 || pn_var_rd < 0.0)
    throw std::invalid_argument("sim_config: phase-noise variances must be >= 0");
  if (cfo_sd.lo > cfo_sd.hi || cfo_rd.lo > cfo_rd.hi)
    throw std::invalid_argument("sim_config: CFO range lo must be <= hi");
  if (p_src <= 0.0 || p_relay <= 0.0) throw std::invalid_argument("sim_config: powers must be > 0");
  if (noise_var_relay < 0.0) throw std::invalid_argument("sim_config: noise_var_relay must be >= 0");
  if (noise_var_dest <= 0.0) throw std::invalid_argument("sim_config: noise_var_dest must be > 0");
  if (subspace_dim < 1 || subspace_dim > n_subcarriers)
    throw std::invalid_argument("sim_config: subspace_dim must lie in [1, n_subcarriers]");
  if (pilot_count < 0 || pilot_count > n_subcarriers)
    throw std::invalid_argument("sim_config: pilot_count must lie in [0, n_subcarriers]");
  if (alpha <= 0.0) throw std::invalid_argument("sim_config: alpha must be > 0");
  for (int idx : pilot_indices)
    if (idx < 0 || idx >= n_subcarriers)
      throw std::invalid_argument("sim_config: pilot index out of range");
}

inline std::vector<int> sim_config::effective_pilot_indices() const {
  if (!pilot_indices.empty()) return pilot_indices;
  std::vector<int> idx(static_cast<std::size_t>(pilot_count));
  for (int i = 0; i < pilot_count; ++i)
    idx[static_cast<std::size_t>(i)] =
        static_cast<int>((static_cast<long long>(i) * n_subcarriers) / pilot_count);
  return idx;
}

/// One step of the splitmix64 sequence; advances `state` and returns the output.
inline std::uint64_t splitmix64_next(std::uint64_t& state) {
  state += 0x9E3779B97F4A7C15ull;
  std::uint64_t z = state;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

/// Deterministic per-task seed from a master seed and two task coordinates
/// (e.g. grid-point key and trial index). Collision-resistant enough for
/// Monte Carlo stream separation, and stable across platforms.
inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t a, std::uint64_t b) {
  std::uint64_t s = master;
  s = splitmix64_next(s) ^ (a * 0xD1342543DE82EF95ull);
  s = splitmix64_next(s) ^ (b * 0xAF251AF3B0F025B5ull);
  return splitmix64_next(s);
}

} // namespace relaysim
