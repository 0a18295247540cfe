#include "geocov/projection.hpp"

#include <cmath>
#include <functional>
#include <limits>
#include <sstream>

namespace geocov {

std::string to_string(Method m) {
  switch (m) {
    case Method::natural: return "natural";
    case Method::reverseI: return "reverseI";
    case Method::iproj: return "iproj";
  }
  return "unknown";
}

Method method_from_string(const std::string& s) {
  if (s == "natural") return Method::natural;
  if (s == "mle" || s == "reverseI") return Method::reverseI;
  if (s == "iproj") return Method::iproj;
  throw std::invalid_argument("unknown method \"" + s + "\" (expected natural|mle|iproj)");
}

SampleCovariance::SampleCovariance(SpdMatrix matrix, long sampleCount, CovConvention convention)
    : cov_(std::move(matrix)), q_(sampleCount), conv_(convention) {
  if (q_ <= 0) throw std::invalid_argument("SampleCovariance: sampleCount must be positive");
}

SampleCovariance SampleCovariance::from_samples(const Matrix& rows, CovConvention convention) {
  const long q = rows.rows();
  if (convention == CovConvention::centered) {
    if (q < 2) throw std::invalid_argument("SampleCovariance: centered form needs q >= 2");
    const Matrix centered = rows.rowwise() - rows.colwise().mean();
    return SampleCovariance(SpdMatrix(centered.transpose() * centered / double(q - 1)), q,
                            convention);
  }
  if (q < 1) throw std::invalid_argument("SampleCovariance: need at least one sample");
  return SampleCovariance(SpdMatrix(rows.transpose() * rows / double(q)), q, convention);
}

namespace {

// Safeguarded Newton root find for a smooth, strictly increasing derivative:
// expands the initial bracket [-1, 2] by doubling until the sign changes,
// then Newton steps with bisection fallback. Stops when |derivative| <=
// tol::kSolver * scale and the last step is below tol::kSolver.
std::pair<double, int> newton_increasing(
    const std::function<std::pair<double, double>(double)>& deriv, double scale,
    const char* what) {
  double lo = -1.0, hi = 2.0;
  int expansions = 0;
  while (deriv(lo).first > 0.0) {
    lo -= (hi - lo);
    if (++expansions > 200) {
      throw ConvergenceError(std::string(what) + ": bracket expansion failed (low side)");
    }
  }
  while (deriv(hi).first < 0.0) {
    hi += (hi - lo);
    if (++expansions > 200) {
      throw ConvergenceError(std::string(what) + ": bracket expansion failed (high side)");
    }
  }
  double t = (0.0 > lo && 0.0 < hi) ? 0.0 : 0.5 * (lo + hi);
  double step = 0.0;
  for (int iters = 0; iters < 200; ++iters) {
    const auto [f1, f2] = deriv(t);
    if (std::abs(f1) <= tol::kSolver * scale &&
        std::abs(step) <= tol::kSolver * std::max(1.0, std::abs(t))) {
      return {t, iters};
    }
    if (f1 < 0.0) {
      lo = std::max(lo, t);
    } else {
      hi = std::min(hi, t);
    }
    double tn = (f2 > 0.0) ? t - f1 / f2 : 0.5 * (lo + hi);
    if (!(tn > lo && tn < hi)) tn = 0.5 * (lo + hi);
    step = tn - t;
    t = tn;
  }
  throw ConvergenceError(std::string(what) + ": Newton iteration budget exhausted");
}

double logdet_spd(const Matrix& m) { return detail::eigh(m).d.array().log().sum(); }

}  // namespace

WhiteningContext::WhiteningContext(const GeodesicSegment& seg, const SpdMatrix& c)
    : pd_(&seg.pencil()) {
  if (c.dim() != seg.dim()) {
    throw std::invalid_argument("WhiteningContext: dimension mismatch");
  }
  lam_ = pd_->lambda;
  logLam_ = lam_.array().log();
  derivScale_ = logLam_.squaredNorm();
  const Matrix& si = pd_->invSqrtA1.mat();
  z_ = detail::symmetrized(pd_->U.transpose() * si * c.mat() * si * pd_->U);
  Matrix cs, csi;
  detail::sym_sqrt_pair(c.mat(), cs, csi);
  m_ = csi * pd_->sqrtA1.mat() * pd_->U;
  // Invariant: M^T M reproduces U^T A1^{1/2} C^{-1} A1^{1/2} U, with C^{-1}
  // from an independent LU inverse.
  const Matrix cInv = c.mat().partialPivLu().inverse();
  const Matrix rhs = pd_->U.transpose() * pd_->sqrtA1.mat() * cInv * pd_->sqrtA1.mat() * pd_->U;
  const double err = (m_.transpose() * m_ - rhs).norm() / rhs.norm();
  if (err > tol::kRecon) {
    std::ostringstream os;
    os << "WhiteningContext: M^T M reconstruction error " << err;
    throw std::domain_error(os.str());
  }
}

WhiteningContext::WEig WhiteningContext::eigW(double t) const {
  const Vector a = (-0.5 * t * logLam_.array()).exp();
  const Matrix w = a.asDiagonal() * z_ * a.asDiagonal();
  detail::Eigh e = detail::eigh(detail::symmetrized(w));
  if (e.d.minCoeff() <= 0.0) {
    throw std::domain_error("WhiteningContext: W(t) lost positive definiteness");
  }
  return {std::move(e.d), std::move(e.v)};
}

double WhiteningContext::objective(Method m, double t) const {
  const WEig e = eigW(t);
  switch (m) {
    case Method::natural:
      return e.w.array().log().square().sum();
    case Method::reverseI:
      return (e.w.array() - e.w.array().log() - 1.0).sum();
    case Method::iproj:
      return (e.w.array().inverse() + e.w.array().log() - 1.0).sum();
  }
  throw std::logic_error("objective: bad method");
}

std::pair<double, double> WhiteningContext::derivatives(Method m, double t) const {
  const Index n = lam_.size();
  const Vector a = (-0.5 * t * logLam_.array()).exp();
  const Matrix w = detail::symmetrized(a.asDiagonal() * z_ * a.asDiagonal());
  const Vector& l = logLam_;

  if (m == Method::reverseI) {
    // F' = -Tr((W - I) log Lambda), F'' = Tr(W log^2 Lambda).
    double f1 = 0.0, f2 = 0.0;
    for (Index i = 0; i < n; ++i) {
      f1 -= (w(i, i) - 1.0) * l[i];
      f2 += w(i, i) * l[i] * l[i];
    }
    return {f1, f2};
  }

  detail::Eigh e = detail::eigh(w);
  if (e.d.minCoeff() <= 0.0) {
    throw std::domain_error("derivatives: W(t) lost positive definiteness");
  }

  if (m == Method::iproj) {
    // F' = Tr((W^{-1} - I) log Lambda), F'' = Tr(W^{-1} log^2 Lambda).
    Vector inv = e.d.cwiseInverse();
    const Matrix winv = e.v * inv.asDiagonal() * e.v.transpose();
    double f1 = 0.0, f2 = 0.0;
    for (Index i = 0; i < n; ++i) {
      f1 += (winv(i, i) - 1.0) * l[i];
      f2 += winv(i, i) * l[i] * l[i];
    }
    return {f1, f2};
  }

  // Natural: F(t) = Tr(g(W)) with g = log^2. F' = -2 Tr(log_m(W) log Lambda);
  // F'' = Tr(Dg'(W)[W'] W') + Tr(g'(W) W'') with W' = -(LW + WL)/2 and
  // W'' = (l_i + l_j)^2 W_ij / 4, via divided differences of g'.
  Vector logw = e.d.array().log();
  const Matrix logmW = e.v * logw.asDiagonal() * e.v.transpose();
  double f1 = 0.0;
  for (Index i = 0; i < n; ++i) f1 += logmW(i, i) * l[i];
  f1 *= -2.0;

  Matrix wp(n, n), wpp(n, n);
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < n; ++j) {
      const double s = l[i] + l[j];
      wp(i, j) = -0.5 * s * w(i, j);
      wpp(i, j) = 0.25 * s * s * w(i, j);
    }
  }
  const Matrix k = e.v.transpose() * wp * e.v;
  auto gp = [](double x) { return 2.0 * std::log(x) / x; };
  auto gpp = [](double x) { return (2.0 - 2.0 * std::log(x)) / (x * x); };
  double f2 = 0.0;
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < n; ++j) {
      const double wi = e.d[i], wj = e.d[j];
      double psi;
      if (std::abs(wi - wj) > 1e-10 * std::max(wi, wj)) {
        psi = (gp(wi) - gp(wj)) / (wi - wj);
      } else {
        psi = gpp(0.5 * (wi + wj));
      }
      f2 += psi * k(i, j) * k(i, j);
    }
  }
  Vector gpw = e.d.unaryExpr(gp);
  const Matrix gpW = e.v * gpw.asDiagonal() * e.v.transpose();
  f2 += gpW.cwiseProduct(wpp).sum();
  return {f1, f2};
}

double WhiteningContext::trace_residual(Method m, double t) const {
  const Index n = lam_.size();
  const Vector& l = logLam_;
  const Vector a = (-0.5 * t * logLam_.array()).exp();
  const Matrix w = detail::symmetrized(a.asDiagonal() * z_ * a.asDiagonal());
  if (m == Method::reverseI) {
    double r = 0.0;
    for (Index i = 0; i < n; ++i) r += (w(i, i) - 1.0) * l[i];
    return r;
  }
  detail::Eigh e = detail::eigh(w);
  if (e.d.minCoeff() <= 0.0) {
    throw std::domain_error("trace_residual: W(t) lost positive definiteness");
  }
  if (m == Method::iproj) {
    Vector inv = e.d.cwiseInverse();
    const Matrix winv = e.v * inv.asDiagonal() * e.v.transpose();
    double r = 0.0;
    for (Index i = 0; i < n; ++i) r += (winv(i, i) - 1.0) * l[i];
    return r;
  }
  Vector logw = e.d.array().log();
  const Matrix logmW = e.v * logw.asDiagonal() * e.v.transpose();
  double r = 0.0;
  for (Index i = 0; i < n; ++i) r += logmW(i, i) * l[i];
  return r;
}

std::pair<double, int> WhiteningContext::solve(Method m) const {
  if (derivScale_ <= 1e-20 * static_cast<double>(lam_.size())) {
    throw std::domain_error(
        "projection: coincident anchors (zero-length segment has no parameter)");
  }
  return newton_increasing([&](double t) { return derivatives(m, t); }, derivScale_,
                           "projection");
}

namespace {

ProjectionResult project_impl(Method m, const GeodesicSegment& seg, const SpdMatrix& c) {
  const WhiteningContext ctx(seg, c);
  const auto [t, iters] = ctx.solve(m);
  SpdMatrix projected = seg.at(t);
  double obj = ctx.objective(m, t);
  // Reported as distance for the natural method and as the KL value for the
  // divergence methods (the spectral objective is twice the KL).
  obj = (m == Method::natural) ? std::sqrt(std::max(0.0, obj)) : 0.5 * obj;
  const double residual = ctx.trace_residual(m, t);
  return {m, t, std::move(projected), obj, residual, iters};
}

}  // namespace

ProjectionResult natural_projection(const GeodesicSegment& seg, const SampleCovariance& c) {
  return project_impl(Method::natural, seg, c.matrix());
}

ProjectionResult reverse_iprojection(const GeodesicSegment& seg, const SampleCovariance& c) {
  return project_impl(Method::reverseI, seg, c.matrix());
}

ProjectionResult iprojection(const GeodesicSegment& seg, const SampleCovariance& c) {
  return project_impl(Method::iproj, seg, c.matrix());
}

ProjectionResult gaussian_mle_from_data(const GeodesicSegment& seg, const Matrix& samples) {
  if (samples.rows() < 1) {
    throw std::invalid_argument("gaussian_mle_from_data: empty sample set");
  }
  if (samples.cols() != seg.dim()) {
    throw std::invalid_argument("gaussian_mle_from_data: sample dimension mismatch");
  }
  const PencilDecomposition& pd = seg.pencil();
  const Index n = seg.dim();
  const Vector logLam = pd.lambda.array().log();
  const double scale = logLam.squaredNorm();
  if (scale <= 1e-20 * static_cast<double>(n)) {
    throw std::domain_error("gaussian_mle_from_data: coincident anchors");
  }
  // Coordinates y_i^T A1^{-1/2} U; s_k is their mean square per component.
  const Matrix coords = samples * pd.invSqrtA1.mat() * pd.U;
  const Vector s = coords.array().square().colwise().mean();
  if ((s.array() * logLam.array().square()).sum() <= 0.0) {
    throw std::domain_error("gaussian_mle_from_data: samples carry no information "
                            "along the family direction");
  }
  const double t1 = logLam.sum();
  // Mean negative log-likelihood along the family, up to the additive
  // constant handled below: f(t) = t * t1 + sum_k s_k lambda_k^{-t}.
  auto deriv = [&](double t) {
    const Vector lamPow = (-t * logLam.array()).exp();
    const double f1 = t1 - (s.array() * lamPow.array() * logLam.array()).sum();
    const double f2 = (s.array() * lamPow.array() * logLam.array().square()).sum();
    return std::pair<double, double>(f1, f2);
  };
  const auto [t, iters] = newton_increasing(deriv, scale, "gaussian_mle_from_data");
  SpdMatrix projected = seg.at(t);
  const double logdetA1 = logdet_spd(seg.anchor1().mat());
  const Vector lamPow = (-t * logLam.array()).exp();
  const double meanNll = 0.5 * (static_cast<double>(n) * std::log(2.0 * 3.14159265358979323846) +
                                logdetA1 + t * t1 + (s.array() * lamPow.array()).sum());
  const double residual = deriv(t).first;
  return {Method::reverseI, t, std::move(projected), meanNll, residual, iters};
}

double kl_gaussian(const SpdMatrix& c1, const SpdMatrix& c2, KlDirection direction) {
  if (c1.dim() != c2.dim()) throw std::invalid_argument("kl_gaussian: dimension mismatch");
  Matrix s, si;
  detail::sym_sqrt_pair(c1.mat(), s, si);
  const detail::Eigh e = detail::eigh(detail::symmetrized(si * c2.mat() * si));
  if (e.d.minCoeff() <= 0.0) {
    throw std::domain_error("kl_gaussian: pencil has a nonpositive eigenvalue");
  }
  const auto lam = e.d.array();
  if (direction == KlDirection::firstToSecond) {
    return 0.5 * (lam.inverse() + lam.log() - 1.0).sum();
  }
  return 0.5 * (lam - lam.log() - 1.0).sum();
}

std::pair<double, double> objective_derivatives(Method m, const GeodesicSegment& seg,
                                                const SpdMatrix& c, double t) {
  return WhiteningContext(seg, c).derivatives(m, t);
}

double orthogonality_residual(Method m, const GeodesicSegment& seg, const SpdMatrix& c,
                              double t) {
  if (c.dim() != seg.dim()) {
    throw std::invalid_argument("orthogonality_residual: dimension mismatch");
  }
  const PencilDecomposition& pd = seg.pencil();
  const auto whitenedGeodesic = [&](double sExp) {
    Vector p = pd.lambda.array().pow(sExp);
    return SpdMatrix(detail::symmetrized(pd.U * p.asDiagonal() * pd.U.transpose()));
  };
  const Matrix& si = pd.invSqrtA1.mat();
  switch (m) {
    case Method::natural: {
      const SpdMatrix base = whitenedGeodesic(t);
      const SpdMatrix cw(detail::symmetrized(si * c.mat() * si));
      return metric_inner(base, log_map(base, cw), log_map(base, whitenedGeodesic(1.0 + t)));
    }
    case Method::reverseI: {
      const SpdMatrix base = whitenedGeodesic(t);
      const Matrix cw = detail::symmetrized(si * c.mat() * si);
      const SymMatrix flat(cw - base.mat());
      return metric_inner(base, log_map(base, exp_map(base, flat)),
                          log_map(base, whitenedGeodesic(1.0 + t)));
    }
    case Method::iproj: {
      const SpdMatrix base = whitenedGeodesic(-t);
      Matrix cs, csi;
      detail::sym_sqrt_pair(c.mat(), cs, csi);
      const Matrix half = csi * pd.sqrtA1.mat();  // (C^{-1/2} A1^{1/2})
      const Matrix cwInv = detail::symmetrized(half.transpose() * half);
      const SymMatrix flat(cwInv - base.mat());
      return metric_inner(base, log_map(base, exp_map(base, flat)),
                          log_map(base, whitenedGeodesic(1.0 - t)));
    }
  }
  throw std::logic_error("orthogonality_residual: bad method");
}

LocalAnalysisResult local_analysis(const SpdMatrix& a1, const SpdMatrix& a2, const SpdMatrix& c,
                                   const std::vector<double>& epsilons) {
  const GeodesicSegment seg(a1, a2);
  const WhiteningContext ctxC(seg, c);
  const double tStar = ctxC.solve(Method::natural).first;
  if (std::abs(tStar) > 1e-6) {
    std::ostringstream os;
    os << "local_analysis: natural projection of C sits at t = " << tStar
       << "; the construction requires t ~ 0 (re-anchor the segment first)";
    throw std::invalid_argument(os.str());
  }
  const double dToC = natural_distance(a1, c);
  if (dToC <= 1e-10) {
    throw std::invalid_argument("local_analysis: C coincides with the first anchor");
  }
  const PencilDecomposition toC = pencil_decompose(a1, c);
  const SpdMatrix chat = geodesic_point(toC, 1.0 / dToC);  // unit distance from a1
  const PencilDecomposition toChat = pencil_decompose(a1, chat);

  LocalAnalysisResult out;
  out.epsilons = epsilons;
  for (const double eps : epsilons) {
    const SpdMatrix ceps = geodesic_point(toChat, eps);
    const WhiteningContext ctx(seg, ceps);
    const double tn = ctx.solve(Method::natural).first;
    const double th = ctx.solve(Method::reverseI).first;
    const double tc = ctx.solve(Method::iproj).first;
    out.deltaNat.push_back(tn - tStar);
    out.deltaHat.push_back(th - tn);
    out.deltaCheck.push_back(tc - tn);
  }
  // Analytic curvature of deltaHat at eps = 0: the perturbation direction is
  // the unit-speed Chat, and the constant is normalized by the squared anchor
  // distance.
  const Matrix& si = seg.pencil().invSqrtA1.mat();
  const Matrix sDir = detail::sym_log(detail::symmetrized(si * chat.mat() * si));
  const Matrix lDir = detail::sym_log(detail::symmetrized(si * a2.mat() * si));
  const double d12 = seg.anchorDistance();
  out.hatSecondDeriv = (sDir * sDir).cwiseProduct(lDir).sum() / (d12 * d12);
  return out;
}

ClosedFormT closed_form_t(const GeodesicSegment& seg, const SpdMatrix& c) {
  if (c.dim() != seg.dim()) throw std::invalid_argument("closed_form_t: dimension mismatch");
  const Vector logLam = seg.pencil().lambda.array().log();
  const double den = logLam.sum();
  if (std::abs(den) <= 1e-12 * std::max(logLam.cwiseAbs().sum(), 1e-12)) {
    throw std::domain_error(
        "closed_form_t: anchors share their log-determinant (zero denominator)");
  }
  const double num = logdet_spd(c.mat()) - logdet_spd(seg.anchor1().mat());
  const double tBar = num / den;
  const double miss = natural_distance(seg.at(tBar), c);
  const bool attains = miss <= 1e-8 * (1.0 + natural_distance(seg.anchor1(), c));
  return {tBar, attains};
}

}  // namespace geocov
