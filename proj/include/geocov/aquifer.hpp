#pragma once

#include "geocov/manifold.hpp"
#include "geocov/projection.hpp"
#include "geocov/rng.hpp"

#include <optional>

namespace geocov {

// Stationary kernel C(x, x') = sigma2 * exp(-(1/p) * |x - x'|^p / ell).
// ell carries units of length^p; for p = 2 the usual squared-exponential
// length-scale is sqrt(ell).
struct KernelSpec {
  double sigma2 = 0.3;
  double ell = 20.0;
  double p = 2.0;
};

// Geometry and stochastic model of the 1D groundwater problem:
//   d/dx(kappa(x) dh/dx) + Q = 0 on [0, L], h(0) = H1, h(L) = H2,
// with log-permeability a Gaussian process of constant mean gpMean and the
// kernel above; kappa = exp(gp draw). Heads are observed at nObs interior
// points x_i = i * L / (nObs + 1).
struct AquiferConfig {
  double L = 100.0;
  double H1 = 50.0;
  double H2 = 20.0;
  double Q = 0.02;
  int nObs = 20;
  int gridNodes = 201;
  KernelSpec kernel;
  double gpMean = 1.0;

  void validate() const;  // throws std::invalid_argument
  double dx() const { return L / (gridNodes - 1); }
  Vector node_coords() const;  // gridNodes points including boundaries
  Vector mid_coords() const;   // gridNodes - 1 cell midpoints
  Vector obs_coords() const;   // nObs interior observation points
};

// Observation noise with stddev alpha * 0.05 * sqrt(Tr(reference)/n), added
// iid to every observed head component of every sample.
struct NoiseSpec {
  double alpha = 0.0;
  SpdMatrix reference;  // the "truth" covariance the magnitude is scaled by

  double stddev() const;
};

// Joint GP draw on the staggered grid: first the gridNodes node values, then
// the gridNodes-1 midpoint values. Dense Cholesky of the joint Gram matrix
// with additive jitter 1e-10 * sigma2 on the diagonal.
Vector sample_log_permeability(const AquiferConfig& cfg, Rng& rng);

// Conservative second-order FD solve. kappa is either the gridNodes-1 vector
// of midpoint permeabilities or the full staggered vector returned by
// sample_log_permeability exponentiated (the midpoint block is then used).
Vector solve_head(const Vector& kappa, const AquiferConfig& cfg);

// Sample covariance of the observed heads over q Monte-Carlo draws, centered
// 1/(q-1) convention, with the pdTol-scaled diagonal jitter policy applied
// before validation. Noise, when given, perturbs every sample before
// assembly. Deterministic for a fixed rng state; draws are batched without
// changing the draw order.
SampleCovariance monte_carlo_covariance(const AquiferConfig& cfg, long q, Rng& rng,
                                        const std::optional<NoiseSpec>& noise = std::nullopt);

namespace detail {
// Lower Cholesky factor of the joint staggered-grid Gram matrix (+ jitter).
Matrix gp_joint_cholesky(const AquiferConfig& cfg);
// Heads at the observation points for a block of midpoint-permeability
// columns; vectorized Thomas solve.
Matrix heads_at_obs(const Matrix& kappaMids, const AquiferConfig& cfg);
}  // namespace detail

}  // namespace geocov
