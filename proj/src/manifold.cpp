#include "geocov/manifold.hpp"

#include <cmath>
#include <sstream>

namespace geocov {
namespace {

void check_square_finite(const Matrix& m, const char* what) {
  if (m.rows() == 0 || m.rows() != m.cols()) {
    std::ostringstream os;
    os << what << ": expected a nonempty square matrix, got " << m.rows() << "x" << m.cols();
    throw std::invalid_argument(os.str());
  }
  if (!m.allFinite()) {
    throw std::invalid_argument(std::string(what) + ": non-finite entries");
  }
}

Matrix checked_symmetric(Matrix m, const char* what) {
  check_square_finite(m, what);
  const double scale = m.cwiseAbs().maxCoeff();
  const double asym = (m - m.transpose()).cwiseAbs().maxCoeff();
  if (asym > tol::kSymRel * std::max(scale, 1e-300)) {
    std::ostringstream os;
    os << what << ": asymmetry " << asym << " exceeds " << tol::kSymRel << " * " << scale;
    throw std::invalid_argument(os.str());
  }
  return 0.5 * (m + m.transpose().eval());
}

}  // namespace

SymMatrix::SymMatrix(Matrix m) : m_(checked_symmetric(std::move(m), "SymMatrix")) {}

SpdMatrix::SpdMatrix(Matrix m) : m_(checked_symmetric(std::move(m), "SpdMatrix")) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(m_, Eigen::EigenvaluesOnly);
  const double lamMin = es.eigenvalues().minCoeff();
  const double lamMax = es.eigenvalues().maxCoeff();
  if (!(lamMax > 0.0) || !(lamMin > tol::kPdFloor * lamMax)) {
    std::ostringstream os;
    os << "SpdMatrix: not positive definite (lambda_min = " << lamMin
       << ", lambda_max = " << lamMax << ", floor = " << tol::kPdFloor * lamMax << ")";
    throw std::domain_error(os.str());
  }
}

namespace detail {

Matrix symmetrized(const Matrix& m) { return 0.5 * (m + m.transpose()); }

Eigh eigh(const Matrix& sym) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(sym);
  if (es.info() != Eigen::Success) {
    throw std::domain_error("eigh: eigendecomposition failed");
  }
  return {es.eigenvalues(), es.eigenvectors()};
}

namespace {
template <class F>
Matrix spectral_apply(const Matrix& sym, F f) {
  const Eigh e = eigh(sym);
  Vector fd(e.d.size());
  for (Index i = 0; i < e.d.size(); ++i) fd[i] = f(e.d[i]);
  return symmetrized(e.v * fd.asDiagonal() * e.v.transpose());
}
}  // namespace

Matrix sym_log(const Matrix& spd) {
  const Eigh e = eigh(spd);
  if (e.d.minCoeff() <= 0.0) {
    std::ostringstream os;
    os << "sym_log: nonpositive eigenvalue " << e.d.minCoeff();
    throw std::domain_error(os.str());
  }
  Vector fd = e.d.array().log();
  return symmetrized(e.v * fd.asDiagonal() * e.v.transpose());
}

Matrix sym_exp(const Matrix& sym) {
  return spectral_apply(sym, [](double x) { return std::exp(x); });
}

Matrix sym_pow(const Matrix& spd, double t) {
  const Eigh e = eigh(spd);
  if (e.d.minCoeff() <= 0.0) {
    std::ostringstream os;
    os << "sym_pow: nonpositive eigenvalue " << e.d.minCoeff();
    throw std::domain_error(os.str());
  }
  Vector fd = e.d.array().pow(t);
  return symmetrized(e.v * fd.asDiagonal() * e.v.transpose());
}

void sym_sqrt_pair(const Matrix& spd, Matrix& sqrt, Matrix& invSqrt) {
  const Eigh e = eigh(spd);
  if (e.d.minCoeff() <= 0.0) {
    std::ostringstream os;
    os << "sym_sqrt: nonpositive eigenvalue " << e.d.minCoeff();
    throw std::domain_error(os.str());
  }
  Vector r = e.d.array().sqrt();
  sqrt = symmetrized(e.v * r.asDiagonal() * e.v.transpose());
  Vector ri = r.cwiseInverse();
  invSqrt = symmetrized(e.v * ri.asDiagonal() * e.v.transpose());
}

Matrix geodesic_raw(const Matrix& a1, const Matrix& a2, double t) {
  Matrix s, si;
  sym_sqrt_pair(a1, s, si);
  const Matrix inner = sym_pow(symmetrized(si * a2 * si), t);
  return symmetrized(s * inner * s);
}

double natural_distance_raw(const Matrix& a1, const Matrix& a2) {
  Matrix s, si;
  sym_sqrt_pair(a1, s, si);
  const Eigh e = eigh(symmetrized(si * a2 * si));
  if (e.d.minCoeff() <= 0.0) {
    throw std::domain_error("natural_distance: pencil has a nonpositive eigenvalue");
  }
  return std::sqrt(e.d.array().log().square().sum());
}

}  // namespace detail

SymSqrt sym_sqrt(const SpdMatrix& a) {
  Matrix s, si;
  detail::sym_sqrt_pair(a.mat(), s, si);
  return {SpdMatrix(std::move(s)), SpdMatrix(std::move(si))};
}

PencilDecomposition pencil_decompose(const SpdMatrix& a1, const SpdMatrix& a2) {
  if (a1.dim() != a2.dim()) {
    throw std::invalid_argument("pencil_decompose: dimension mismatch");
  }
  Matrix s, si;
  detail::sym_sqrt_pair(a1.mat(), s, si);
  const detail::Eigh e = detail::eigh(detail::symmetrized(si * a2.mat() * si));
  if (e.d.minCoeff() <= 0.0) {
    throw std::domain_error("pencil_decompose: nonpositive generalized eigenvalue");
  }
  const Index n = a1.dim();
  // SelfAdjointEigenSolver sorts ascending; flip to descending.
  Vector lambda(n);
  Matrix u(n, n);
  for (Index i = 0; i < n; ++i) {
    lambda[i] = e.d[n - 1 - i];
    u.col(i) = e.v.col(n - 1 - i);
  }
  const Matrix recon = s * u * lambda.asDiagonal() * u.transpose() * s;
  const double reconErr = (recon - a2.mat()).norm() / a2.mat().norm();
  if (reconErr > tol::kRecon) {
    std::ostringstream os;
    os << "pencil_decompose: reconstruction error " << reconErr;
    throw std::domain_error(os.str());
  }
  return {SpdMatrix(std::move(s)), SpdMatrix(std::move(si)), std::move(u), std::move(lambda)};
}

double natural_distance(const SpdMatrix& a1, const SpdMatrix& a2) {
  if (a1.dim() != a2.dim()) {
    throw std::invalid_argument("natural_distance: dimension mismatch");
  }
  return detail::natural_distance_raw(a1.mat(), a2.mat());
}

SpdMatrix geodesic_point(const PencilDecomposition& pd, double t) {
  Vector powered = pd.lambda.array().pow(t);
  const Matrix& s = pd.sqrtA1.mat();
  return SpdMatrix(detail::symmetrized(s * pd.U * powered.asDiagonal() * pd.U.transpose() * s));
}

SpdMatrix geodesic_point(const SpdMatrix& a1, const SpdMatrix& a2, double t) {
  if (a1.dim() != a2.dim()) {
    throw std::invalid_argument("geodesic_point: dimension mismatch");
  }
  return SpdMatrix(detail::geodesic_raw(a1.mat(), a2.mat(), t));
}

SymMatrix log_map(const SpdMatrix& base, const SpdMatrix& b) {
  if (base.dim() != b.dim()) {
    throw std::invalid_argument("log_map: dimension mismatch");
  }
  Matrix s, si;
  detail::sym_sqrt_pair(base.mat(), s, si);
  const Matrix inner = detail::sym_log(detail::symmetrized(si * b.mat() * si));
  return SymMatrix(detail::symmetrized(s * inner * s));
}

SpdMatrix exp_map(const SpdMatrix& base, const SymMatrix& x) {
  if (base.dim() != x.dim()) {
    throw std::invalid_argument("exp_map: dimension mismatch");
  }
  Matrix s, si;
  detail::sym_sqrt_pair(base.mat(), s, si);
  const Matrix inner = detail::sym_exp(detail::symmetrized(si * x.mat() * si));
  return SpdMatrix(detail::symmetrized(s * inner * s));
}

double metric_inner(const SpdMatrix& base, const SymMatrix& x, const SymMatrix& y) {
  if (base.dim() != x.dim() || base.dim() != y.dim()) {
    throw std::invalid_argument("metric_inner: dimension mismatch");
  }
  Matrix s, si;
  detail::sym_sqrt_pair(base.mat(), s, si);
  const Matrix inv = si * si;
  return (inv * x.mat() * inv).cwiseProduct(y.mat()).sum();
}

}  // namespace geocov
