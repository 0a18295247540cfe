#pragma once

#include "geocov/family.hpp"
#include "geocov/manifold.hpp"

#include <string>
#include <utility>
#include <vector>

namespace geocov {

enum class Method { natural, reverseI, iproj };

std::string to_string(Method m);
// Accepts "natural", "mle" (alias for reverseI), "reverseI", "iproj".
Method method_from_string(const std::string& s);

enum class CovConvention { centered, uncentered };

// A full-rank covariance estimate plus the sample count it came from. The
// matrix must satisfy the SPD invariants, which is how the q < n regime is
// rejected at the type level.
class SampleCovariance {
 public:
  SampleCovariance(SpdMatrix matrix, long sampleCount,
                   CovConvention convention = CovConvention::centered);

  // rows: one sample per row. centered uses the unbiased 1/(q-1) form with
  // mean subtraction (q >= 2); uncentered uses 1/q without centering (q >= 1).
  static SampleCovariance from_samples(const Matrix& rows, CovConvention convention);

  const SpdMatrix& matrix() const noexcept { return cov_; }
  long sampleCount() const noexcept { return q_; }
  CovConvention convention() const noexcept { return conv_; }

 private:
  SpdMatrix cov_;
  long q_;
  CovConvention conv_;
};

// Per-(segment, covariance) whitened data: Z = U^T A1^{-1/2} C A1^{-1/2} U and
// M = C^{-1/2} A1^{1/2} U, satisfying M^T M = U^T A1^{1/2} C^{-1} A1^{1/2} U.
// All three spectral objectives, their derivatives, and the optimality
// residuals are evaluated from the spectrum of W(t) = Lambda^{-t/2} Z Lambda^{-t/2}.
class WhiteningContext {
 public:
  WhiteningContext(const GeodesicSegment& seg, const SpdMatrix& c);

  const Matrix& Z() const noexcept { return z_; }
  const Matrix& M() const noexcept { return m_; }
  const PencilDecomposition& pencil() const noexcept { return *pd_; }
  const Vector& logLambda() const noexcept { return logLam_; }
  // Tr(log_m^2 Lambda), the scale against which derivatives and residuals are judged.
  double derivScale() const noexcept { return derivScale_; }

  struct WEig {
    Vector w;  // eigenvalues of W(t), ascending
    Matrix p;  // eigenvectors
  };
  WEig eigW(double t) const;

  // Spectral objectives over the eigenvalues w_k of W(t):
  //   natural   sum log^2 w_k          (squared natural distance)
  //   reverseI  sum (w_k - log w_k - 1)     = 2 KL(N(0,C) || N(0,phi(t)))
  //   iproj     sum (1/w_k + log w_k - 1)   = 2 KL(N(0,phi(t)) || N(0,C))
  double objective(Method m, double t) const;

  // Analytic first and second derivative of objective(m, .) at t. The second
  // derivative is strictly positive (each objective is convex in t).
  std::pair<double, double> derivatives(Method m, double t) const;

  // Trace-form optimality residual; zero exactly at the method's optimum:
  //   natural   Tr(log_m(W) log Lambda)
  //   reverseI  Tr((W - I) log Lambda)
  //   iproj     Tr((W^{-1} - I) log Lambda)
  double trace_residual(Method m, double t) const;

  // Safeguarded Newton on the analytic derivatives inside an expanding
  // bracket (initial [-1, 2], doubled until the derivative changes sign).
  // Returns (tOpt, iterations). Stops when the step is below tol::kSolver and
  // |first derivative| <= tol::kSolver * derivScale().
  std::pair<double, int> solve(Method m) const;

 private:
  const PencilDecomposition* pd_;
  Matrix z_, m_;
  Vector lam_, logLam_;
  double derivScale_;
};

struct ProjectionResult {
  Method method;
  double tOpt;
  SpdMatrix projected;
  // natural: d(projected, C); reverseI: KL(N(0,C)||N(0,projected));
  // iproj: KL(N(0,projected)||N(0,C)); MLE: mean negative log-likelihood.
  double objective;
  double residual;  // trace-form optimality residual at tOpt (score for MLE)
  int iterations;
};

ProjectionResult natural_projection(const GeodesicSegment& seg, const SampleCovariance& c);
ProjectionResult reverse_iprojection(const GeodesicSegment& seg, const SampleCovariance& c);
ProjectionResult iprojection(const GeodesicSegment& seg, const SampleCovariance& c);

// Zero-mean Gaussian maximum likelihood along the family from raw samples
// (one per row). Works for q < n; with a full-rank uncentered sample
// covariance it agrees with reverse_iprojection.
ProjectionResult gaussian_mle_from_data(const GeodesicSegment& seg, const Matrix& samples);

enum class KlDirection {
  firstToSecond,  // KL(N(0,C1) || N(0,C2)) = 1/2 sum(1/lambda_k + log lambda_k - 1)
  secondToFirst,  // KL(N(0,C2) || N(0,C1)) = 1/2 sum(lambda_k - log lambda_k - 1)
};
// lambda_k are the generalized eigenvalues of the pencil (C2, C1).
double kl_gaussian(const SpdMatrix& c1, const SpdMatrix& c2, KlDirection direction);

// Analytic (first, second) derivative of the selected spectral objective.
std::pair<double, double> objective_derivatives(Method m, const GeodesicSegment& seg,
                                                const SpdMatrix& c, double t);

// Tangent-space orthogonality residual evaluated through the generic manifold
// operations (log_map / exp_map / metric_inner) on the whitened geodesic
// R(t) = (A1^{-1/2} A2 A1^{-1/2})^t. Algebraically equal to trace_residual;
// the two routes agree to tol::kOrth and vanish at the method's optimum.
double orthogonality_residual(Method m, const GeodesicSegment& seg, const SpdMatrix& c,
                              double t);

struct LocalAnalysisResult {
  std::vector<double> epsilons;
  std::vector<double> deltaNat;    // t*(C_eps) - t*(C); zero up to solver tolerance
  std::vector<double> deltaHat;    // tHat(C_eps) - t*(C_eps)
  std::vector<double> deltaCheck;  // tCheck(C_eps) - t*(C_eps)
  double hatSecondDeriv;           // analytic second derivative of deltaHat at eps = 0
};

// Perturbation diagnostics around a locally centered C: requires that the
// natural projection of C onto (a1, a2) sits at t* ~ 0 (std::invalid_argument
// otherwise). Builds the unit-distance direction Chat = phi_{a1->C}(1/d(a1,C)),
// sweeps C_eps = phi_{a1->Chat}(eps), and records the projection shifts.
LocalAnalysisResult local_analysis(const SpdMatrix& a1, const SpdMatrix& a2,
                                   const SpdMatrix& c, const std::vector<double>& epsilons);

struct ClosedFormT {
  double tBar;
  // true when the family point at tBar reproduces C (zero distance within
  // tolerance), i.e. the closed form is exact for this instance.
  bool attainsZero;
};

// Log-determinant closed form tBar = (logdet C - logdet A1) / (logdet A2 - logdet A1).
// Exact when C lies on the family or when A1 = alpha * A2. Throws
// std::domain_error when the denominator vanishes.
ClosedFormT closed_form_t(const GeodesicSegment& seg, const SpdMatrix& c);

}  // namespace geocov
