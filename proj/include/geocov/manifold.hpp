#pragma once

#include <Eigen/Dense>

#include <stdexcept>

namespace geocov {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

// Numeric policy shared across the library. Tolerances are relative unless a
// use site says otherwise.
namespace tol {
inline constexpr double kPdFloor = 1e-12;    // lambda_min must exceed kPdFloor * lambda_max
inline constexpr double kSymRel = 1e-10;     // admissible relative asymmetry of inputs
inline constexpr double kRecon = 1e-8;       // reconstruction checks, relative Frobenius
inline constexpr double kOrth = 1e-10;       // orthonormality / residual-route agreement
inline constexpr double kSolver = 1e-10;     // 1D solver: step size and scaled derivative
inline constexpr double kCoord = 1e-4;       // coordinate descent: per-sweep movement
inline constexpr int kMaxOuterIters = 50;    // coordinate descent: sweep cap
}  // namespace tol

// Thrown when an iterative solver exhausts its iteration budget.
class ConvergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Dense symmetric matrix. Construction repairs asymmetry up to tol::kSymRel
// (relative to the largest entry) by averaging with the transpose and rejects
// anything worse, so mat() is exactly symmetric afterwards.
class SymMatrix {
 public:
  explicit SymMatrix(Matrix m);
  static SymMatrix zero(Index n) { return SymMatrix(Matrix::Zero(n, n)); }

  const Matrix& mat() const noexcept { return m_; }
  Index dim() const noexcept { return m_.rows(); }

 private:
  Matrix m_;
};

// Symmetric positive-definite matrix. Construction validates symmetry like
// SymMatrix and then requires lambda_min > tol::kPdFloor * lambda_max; a
// violation throws std::domain_error naming the offending eigenvalue.
class SpdMatrix {
 public:
  explicit SpdMatrix(Matrix m);
  static SpdMatrix identity(Index n) { return SpdMatrix(Matrix::Identity(n, n)); }

  const Matrix& mat() const noexcept { return m_; }
  Index dim() const noexcept { return m_.rows(); }
  SymMatrix sym() const { return SymMatrix(m_); }

 private:
  Matrix m_;
};

// Symmetric square root of an SPD matrix together with its inverse.
struct SymSqrt {
  SpdMatrix sqrt;
  SpdMatrix invSqrt;
};

// Eigendecomposition of the whitened matrix A1^{-1/2} A2 A1^{-1/2} = U diag(lambda) U^T.
// lambda holds the generalized eigenvalues of the pencil (A2, A1), sorted
// descending; U is orthonormal within tol::kOrth.
struct PencilDecomposition {
  SpdMatrix sqrtA1;
  SpdMatrix invSqrtA1;
  Matrix U;
  Vector lambda;
};

SymSqrt sym_sqrt(const SpdMatrix& a);
PencilDecomposition pencil_decompose(const SpdMatrix& a1, const SpdMatrix& a2);
double natural_distance(const SpdMatrix& a1, const SpdMatrix& a2);
SpdMatrix geodesic_point(const PencilDecomposition& pd, double t);
SpdMatrix geodesic_point(const SpdMatrix& a1, const SpdMatrix& a2, double t);
SymMatrix log_map(const SpdMatrix& base, const SpdMatrix& b);
SpdMatrix exp_map(const SpdMatrix& base, const SymMatrix& x);
double metric_inner(const SpdMatrix& base, const SymMatrix& x, const SymMatrix& y);

// Raw spectral helpers on plain matrices. They skip the type-level validation
// and are meant for internal hot paths; inputs must already be symmetric.
namespace detail {

Matrix symmetrized(const Matrix& m);

struct Eigh {
  Vector d;  // ascending
  Matrix v;
};
Eigh eigh(const Matrix& sym);

// f applied to the spectrum: V diag(f(d)) V^T.
Matrix sym_log(const Matrix& spd);   // throws std::domain_error unless all eigenvalues > 0
Matrix sym_exp(const Matrix& sym);
Matrix sym_pow(const Matrix& spd, double t);

// sqrt and inverse-sqrt in one eigendecomposition.
void sym_sqrt_pair(const Matrix& spd, Matrix& sqrt, Matrix& invSqrt);

// Whitened geodesic between raw SPD matrices; returns a plain symmetric matrix.
Matrix geodesic_raw(const Matrix& a1, const Matrix& a2, double t);

// Natural distance between raw SPD matrices (EVD-based whitening throughout).
double natural_distance_raw(const Matrix& a1, const Matrix& a2);

}  // namespace detail
}  // namespace geocov
