#include "geocov/aquifer.hpp"

#include <Eigen/Cholesky>

#include <cmath>
#include <sstream>

namespace geocov {

void AquiferConfig::validate() const {
  std::ostringstream os;
  if (!(L > 0.0)) {
    os << "AquiferConfig: L must be positive, got " << L;
  } else if (gridNodes < 3) {
    os << "AquiferConfig: gridNodes must be at least 3, got " << gridNodes;
  } else if (nObs < 1) {
    os << "AquiferConfig: nObs must be at least 1, got " << nObs;
  } else if (!(kernel.sigma2 > 0.0)) {
    os << "AquiferConfig: kernel.sigma2 must be positive, got " << kernel.sigma2;
  } else if (!(kernel.ell > 0.0)) {
    os << "AquiferConfig: kernel.ell must be positive, got " << kernel.ell;
  } else if (!(kernel.p > 0.0)) {
    os << "AquiferConfig: kernel.p must be positive, got " << kernel.p;
  } else if (!std::isfinite(H1) || !std::isfinite(H2) || !std::isfinite(Q) ||
             !std::isfinite(gpMean)) {
    os << "AquiferConfig: H1, H2, Q, gpMean must be finite";
  } else {
    return;
  }
  throw std::invalid_argument(os.str());
}

Vector AquiferConfig::node_coords() const {
  return Vector::LinSpaced(gridNodes, 0.0, L);
}

Vector AquiferConfig::mid_coords() const {
  const double h = dx();
  Vector mids(gridNodes - 1);
  for (Index i = 0; i < mids.size(); ++i) mids[i] = (double(i) + 0.5) * h;
  return mids;
}

Vector AquiferConfig::obs_coords() const {
  Vector obs(nObs);
  for (int i = 1; i <= nObs; ++i) obs[i - 1] = double(i) * L / double(nObs + 1);
  return obs;
}

double NoiseSpec::stddev() const {
  const double n = static_cast<double>(reference.dim());
  return alpha * 0.05 * std::sqrt(reference.mat().trace() / n);
}

namespace detail {

Matrix gp_joint_cholesky(const AquiferConfig& cfg) {
  cfg.validate();
  const Vector nodes = cfg.node_coords();
  const Vector mids = cfg.mid_coords();
  Vector xall(nodes.size() + mids.size());
  xall << nodes, mids;
  const Index n = xall.size();
  const KernelSpec& k = cfg.kernel;
  Matrix gram(n, n);
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j <= i; ++j) {
      const double d = std::abs(xall[i] - xall[j]);
      const double v = k.sigma2 * std::exp(-std::pow(d, k.p) / (k.p * k.ell));
      gram(i, j) = v;
      gram(j, i) = v;
    }
  }
  gram.diagonal().array() += 1e-10 * k.sigma2;
  Eigen::LLT<Matrix> llt(gram);
  if (llt.info() != Eigen::Success) {
    throw std::domain_error("gp_joint_cholesky: Gram matrix is not positive definite");
  }
  return llt.matrixL();
}

Matrix heads_at_obs(const Matrix& kappaMids, const AquiferConfig& cfg) {
  const Index mPlus1 = cfg.gridNodes - 1;  // number of midpoints
  if (kappaMids.rows() != mPlus1) {
    throw std::invalid_argument("heads_at_obs: expected one row per cell midpoint");
  }
  if ((kappaMids.array() <= 0.0).any()) {
    throw std::domain_error("heads_at_obs: permeability must be positive");
  }
  const Index m = cfg.gridNodes - 2;  // interior unknowns
  const Index q = kappaMids.cols();
  const double h = cfg.dx();
  const double rhs = -cfg.Q * h * h;

  // Conservative scheme at interior node i (1-based):
  //   kappa_{i-1/2} h_{i-1} - (kappa_{i-1/2}+kappa_{i+1/2}) h_i + kappa_{i+1/2} h_{i+1}
  //     = -Q dx^2,
  // with the boundary heads moved to the right-hand side. Thomas elimination
  // vectorized across the sample columns.
  using RowArray = Eigen::Array<double, 1, Eigen::Dynamic>;
  Matrix dp(m, q);
  Matrix cp(std::max<Index>(m - 1, 0), q);
  {
    const RowArray b0 = -(kappaMids.row(0) + kappaMids.row(1)).array();
    RowArray d0 = RowArray::Constant(q, rhs) - kappaMids.row(0).array() * cfg.H1;
    if (m == 1) d0 -= kappaMids.row(1).array() * cfg.H2;
    if (m > 1) cp.row(0) = kappaMids.row(1).array() / b0;
    dp.row(0) = d0 / b0;
  }
  for (Index i = 1; i < m; ++i) {
    const RowArray sub = kappaMids.row(i).array();
    const RowArray den =
        -(kappaMids.row(i) + kappaMids.row(i + 1)).array() - sub * cp.row(i - 1).array();
    RowArray d = RowArray::Constant(q, rhs);
    if (i == m - 1) d -= kappaMids.row(m).array() * cfg.H2;
    if (i < m - 1) cp.row(i) = kappaMids.row(i + 1).array() / den;
    dp.row(i) = (d - sub * dp.row(i - 1).array()) / den;
  }
  Matrix u(m, q);
  u.row(m - 1) = dp.row(m - 1);
  for (Index i = m - 2; i >= 0; --i) {
    u.row(i) = dp.row(i).array() - cp.row(i).array() * u.row(i + 1).array();
  }

  // Interpolate the full head profile (with boundary values) at the
  // observation points.
  const Vector xs = cfg.node_coords();
  const Vector xobs = cfg.obs_coords();
  Matrix out(cfg.nObs, q);
  auto headRow = [&](Index node) -> Eigen::RowVectorXd {
    if (node == 0) return Eigen::RowVectorXd::Constant(q, cfg.H1);
    if (node == cfg.gridNodes - 1) return Eigen::RowVectorXd::Constant(q, cfg.H2);
    return u.row(node - 1);
  };
  for (int i = 0; i < cfg.nObs; ++i) {
    Index idx = static_cast<Index>(xobs[i] / h);
    idx = std::min<Index>(idx, cfg.gridNodes - 2);
    const double w = (xobs[i] - xs[idx]) / h;
    out.row(i) = (1.0 - w) * headRow(idx) + w * headRow(idx + 1);
  }
  return out;
}

}  // namespace detail

Vector sample_log_permeability(const AquiferConfig& cfg, Rng& rng) {
  const Matrix lc = detail::gp_joint_cholesky(cfg);
  Vector z(lc.rows());
  for (Index i = 0; i < z.size(); ++i) z[i] = rng.gauss();
  return (lc * z).array() + cfg.gpMean;
}

Vector solve_head(const Vector& kappa, const AquiferConfig& cfg) {
  cfg.validate();
  const Index nMids = cfg.gridNodes - 1;
  Vector mids;
  if (kappa.size() == nMids) {
    mids = kappa;
  } else if (kappa.size() == 2 * cfg.gridNodes - 1) {
    mids = kappa.tail(nMids);
  } else {
    throw std::invalid_argument(
        "solve_head: kappa must hold the cell midpoints or the full staggered grid");
  }
  if ((mids.array() <= 0.0).any()) {
    throw std::domain_error("solve_head: permeability must be positive");
  }
  const Index m = cfg.gridNodes - 2;
  const double h = cfg.dx();
  const double rhs = -cfg.Q * h * h;
  Vector dp(m), cp(std::max<Index>(m - 1, 0));
  {
    const double b0 = -(mids[0] + mids[1]);
    double d0 = rhs - mids[0] * cfg.H1;
    if (m == 1) d0 -= mids[1] * cfg.H2;
    if (m > 1) cp[0] = mids[1] / b0;
    dp[0] = d0 / b0;
  }
  for (Index i = 1; i < m; ++i) {
    const double den = -(mids[i] + mids[i + 1]) - mids[i] * cp[i - 1];
    double d = rhs;
    if (i == m - 1) d -= mids[m] * cfg.H2;
    if (i < m - 1) cp[i] = mids[i + 1] / den;
    dp[i] = (d - mids[i] * dp[i - 1]) / den;
  }
  Vector head(cfg.gridNodes);
  head[0] = cfg.H1;
  head[cfg.gridNodes - 1] = cfg.H2;
  head[m] = dp[m - 1];
  for (Index i = m - 2; i >= 0; --i) head[i + 1] = dp[i] - cp[i] * head[i + 2];
  return head;
}

SampleCovariance monte_carlo_covariance(const AquiferConfig& cfg, long q, Rng& rng,
                                        const std::optional<NoiseSpec>& noise) {
  cfg.validate();
  if (q < 2) throw std::invalid_argument("monte_carlo_covariance: need q >= 2 samples");
  const Matrix lc = detail::gp_joint_cholesky(cfg);
  const Index nAll = lc.rows();
  const Index nMids = cfg.gridNodes - 1;
  const double noiseStd = noise ? noise->stddev() : 0.0;
  if (noise && noise->reference.dim() != cfg.nObs) {
    throw std::invalid_argument("monte_carlo_covariance: noise reference dimension mismatch");
  }

  Matrix heads(cfg.nObs, q);
  const long block = 4096;
  for (long start = 0; start < q; start += block) {
    const long stop = std::min(start + block, q);
    Matrix zb(nAll, stop - start);
    Matrix noiseDraws(noiseStd > 0.0 ? cfg.nObs : 0, stop - start);
    for (long s = start; s < stop; ++s) {
      for (Index i = 0; i < nAll; ++i) zb(i, s - start) = rng.gauss();
      for (Index i = 0; i < noiseDraws.rows(); ++i) noiseDraws(i, s - start) = rng.gauss();
    }
    const Matrix g = (lc * zb).array() + cfg.gpMean;
    const Matrix kappaMids = g.bottomRows(nMids).array().exp();
    Matrix h = detail::heads_at_obs(kappaMids, cfg);
    if (noiseStd > 0.0) h += noiseStd * noiseDraws;
    heads.middleCols(start, stop - start) = h;
  }

  const Matrix centered = heads.colwise() - heads.rowwise().mean();
  Matrix cov = centered * centered.transpose() / double(q - 1);
  cov = detail::symmetrized(cov);
  const double lamMax = detail::eigh(cov).d.maxCoeff();
  cov.diagonal().array() += 1e-12 * std::max(lamMax, 0.0);
  return SampleCovariance(SpdMatrix(cov), q, CovConvention::centered);
}

}  // namespace geocov
