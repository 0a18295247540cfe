#include "geocov/descent.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <set>

namespace geocov {

namespace {

// Spectral objective of a candidate family point X against the fixed sample
// covariance C, in the internal scaling (squared distance, or twice the KL).
double spectral_objective(Method m, const Matrix& x, const Matrix& c) {
  Matrix s, si;
  detail::sym_sqrt_pair(x, s, si);
  const detail::Eigh e = detail::eigh(detail::symmetrized(si * c * si));
  if (e.d.minCoeff() <= 0.0) {
    throw std::domain_error("coordinate_descent: candidate point lost definiteness");
  }
  const auto w = e.d.array();
  switch (m) {
    case Method::natural: return w.log().square().sum();
    case Method::reverseI: return (w - w.log() - 1.0).sum();
    case Method::iproj: return (w.inverse() + w.log() - 1.0).sum();
  }
  throw std::logic_error("spectral_objective: bad method");
}

double reported(Method m, double internalObjective) {
  return m == Method::natural ? std::sqrt(std::max(0.0, internalObjective))
                              : 0.5 * internalObjective;
}

struct Bracket {
  double a, b, c, fb;
};

// Expand around t0 by interval doubling until the middle point is no worse
// than either end. The objectives are coercive in each coordinate, so a
// minimum is always bracketed.
Bracket bracket_minimum(const std::function<double(double)>& f, double t0) {
  double a = t0 - 1.0, b = t0, c = t0 + 1.0;
  double fa = f(a), fb = f(b), fc = f(c);
  int guard = 0;
  while (fa < fb || fc < fb) {
    if (++guard > 120) {
      throw ConvergenceError("coordinate_descent: failed to bracket a coordinate minimum");
    }
    if (fa < fb) {
      c = b;
      fc = fb;
      b = a;
      fb = fa;
      a = b - 2.0 * (c - b);
      fa = f(a);
    } else {
      a = b;
      fa = fb;
      b = c;
      fb = fc;
      c = b + 2.0 * (b - a);
      fc = f(c);
    }
  }
  return {a, b, c, fb};
}

// Brent minimization on a bracket; never returns a point worse than the
// bracket midpoint, which keeps every coordinate update non-increasing.
double brent_minimum(const std::function<double(double)>& f, const Bracket& br, double xtol) {
  constexpr double kGold = 0.3819660112501051;
  double lo = std::min(br.a, br.c), hi = std::max(br.a, br.c);
  double x = br.b, w = br.b, v = br.b;
  double fx = br.fb, fw = br.fb, fv = br.fb;
  double d = 0.0, e = 0.0;
  for (int it = 0; it < 200; ++it) {
    const double xm = 0.5 * (lo + hi);
    const double tol1 = xtol * std::abs(x) + 1e-14;
    const double tol2 = 2.0 * tol1;
    if (std::abs(x - xm) <= tol2 - 0.5 * (hi - lo)) break;
    bool tookParabolic = false;
    if (std::abs(e) > tol1) {
      const double r = (x - w) * (fx - fv);
      double q = (x - v) * (fx - fw);
      double p = (x - v) * q - (x - w) * r;
      q = 2.0 * (q - r);
      if (q > 0.0) p = -p;
      q = std::abs(q);
      const double etemp = e;
      e = d;
      if (std::abs(p) < std::abs(0.5 * q * etemp) && p > q * (lo - x) && p < q * (hi - x)) {
        tookParabolic = true;
        d = p / q;
        const double u = x + d;
        if (u - lo < tol2 || hi - u < tol2) d = (xm >= x) ? tol1 : -tol1;
      }
    }
    if (!tookParabolic) {
      e = (x >= xm) ? lo - x : hi - x;
      d = kGold * e;
    }
    const double u = (std::abs(d) >= tol1) ? x + d : x + ((d >= 0.0) ? tol1 : -tol1);
    const double fu = f(u);
    if (fu <= fx) {
      if (u >= x) {
        lo = x;
      } else {
        hi = x;
      }
      v = w;
      fv = fw;
      w = x;
      fw = fx;
      x = u;
      fx = fu;
    } else {
      if (u < x) {
        lo = u;
      } else {
        hi = u;
      }
      if (fu <= fw || w == x) {
        v = w;
        fv = fw;
        w = u;
        fw = fu;
      } else if (fu <= fv || v == x || v == w) {
        v = u;
        fv = fu;
      }
    }
  }
  return x;
}

}  // namespace

std::vector<int> sweep_order(const FamilyTree& tree) {
  const std::vector<int>& depths = tree.paramDepths();
  std::vector<int> order(depths.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return depths[size_t(a)] < depths[size_t(b)]; });
  return order;
}

DescentResult coordinate_descent(const FamilyTree& tree, const SampleCovariance& c,
                                 const DescentConfig& cfg) {
  if (c.matrix().dim() != tree.dim()) {
    throw std::invalid_argument("coordinate_descent: dimension mismatch");
  }
  if (cfg.coordTol <= 0.0) throw std::invalid_argument("coordinate_descent: coordTol must be > 0");
  if (cfg.maxOuterIters < 1) {
    throw std::invalid_argument("coordinate_descent: maxOuterIters must be >= 1");
  }
  const int p = tree.paramCount();
  const int rootCoord = p - 1;  // deepest-first indexing puts the root last
  const std::vector<int> order = sweep_order(tree);
  const Matrix& cm = c.matrix().mat();

  std::vector<double> params(static_cast<size_t>(p), 0.0);
  std::vector<double> trace;
  trace.push_back(reported(cfg.objective, spectral_objective(cfg.objective,
                                                             tree.eval(params).mat(), cm)));
  std::set<int> skipped;
  bool converged = false;
  int sweeps = 0;

  auto restriction = [&](int coord) {
    return [&, coord](double t) {
      std::vector<double> trial = params;
      trial[size_t(coord)] = t;
      try {
        return spectral_objective(cfg.objective, tree.eval(trial).mat(), cm);
      } catch (const std::domain_error&) {
        // Beyond the floating-point-representable part of the family the
        // objective is effectively +inf; the bracket search then stays on
        // the representable side. The current iterate is always finite, so
        // a minimum is still bracketed.
        return std::numeric_limits<double>::infinity();
      }
    };
  };

  for (; sweeps < cfg.maxOuterIters && !converged; /* sweeps incremented below */) {
    double maxDelta = 0.0;
    for (const int j : order) {
      const auto [x, dx] = tree.eval_with_derivative(params, j);
      if (dx.norm() <= 1e-12 * std::max(1.0, x.norm())) {
        skipped.insert(j);
        continue;
      }
      double tNew;
      if (j == rootCoord) {
        // The root restriction is the geodesic between the two child values;
        // solve it exactly. The child values are the tree at t_root = 0 and 1.
        std::vector<double> trial = params;
        trial[size_t(j)] = 0.0;
        SpdMatrix left = tree.eval(trial);
        trial[size_t(j)] = 1.0;
        SpdMatrix right = tree.eval(trial);
        const GeodesicSegment seg(std::move(left), std::move(right));
        tNew = WhiteningContext(seg, c.matrix()).solve(cfg.objective).first;
      } else {
        const auto f = restriction(j);
        const Bracket br = bracket_minimum(f, params[size_t(j)]);
        tNew = brent_minimum(f, br, 1e-11);
      }
      maxDelta = std::max(maxDelta, std::abs(tNew - params[size_t(j)]));
      params[size_t(j)] = tNew;
    }
    ++sweeps;
    trace.push_back(reported(cfg.objective, spectral_objective(cfg.objective,
                                                               tree.eval(params).mat(), cm)));
    converged = maxDelta <= cfg.coordTol;
  }

  SpdMatrix projected = tree.eval(params);
  return DescentResult{std::move(params),
                       std::move(projected),
                       std::move(trace),
                       converged,
                       sweeps,
                       std::vector<int>(skipped.begin(), skipped.end())};
}

std::vector<double> coordinate_stationarity(const FamilyTree& tree, const SampleCovariance& c,
                                            const std::vector<double>& params, Method m) {
  if (c.matrix().dim() != tree.dim()) {
    throw std::invalid_argument("coordinate_stationarity: dimension mismatch");
  }
  const Matrix& cm = c.matrix().mat();
  const Matrix x = tree.eval(params).mat();
  Matrix s, si;
  detail::sym_sqrt_pair(x, s, si);
  const Matrix xInv = si * si;
  Matrix grad;
  switch (m) {
    case Method::natural:
      // grad of squared distance: -2 X^{-1/2} log_m(X^{-1/2} C X^{-1/2}) X^{-1/2}
      grad = -2.0 * si * detail::sym_log(detail::symmetrized(si * cm * si)) * si;
      break;
    case Method::reverseI:
      grad = xInv - xInv * cm * xInv;
      break;
    case Method::iproj: {
      Matrix cs, csi;
      detail::sym_sqrt_pair(cm, cs, csi);
      grad = csi * csi - xInv;
      break;
    }
  }
  grad = detail::symmetrized(grad);
  const double gradNorm = grad.norm();
  // Every gradient above is X^{-1/2} (whitened residual) X^{-1/2}; when the
  // whitened residual is zero to roundoff (exact fit) the cosine would be
  // noise over noise, so report full stationarity instead.
  const double gradFloor = 1e-8 * xInv.norm();
  std::vector<double> out;
  out.reserve(static_cast<size_t>(tree.paramCount()));
  for (int j = 0; j < tree.paramCount(); ++j) {
    const Matrix dx = tree.eval_with_derivative(params, j).second;
    const double denom = gradNorm * dx.norm();
    out.push_back(gradNorm <= gradFloor || denom <= 1e-300
                      ? 0.0
                      : std::abs(grad.cwiseProduct(dx).sum()) / denom);
  }
  return out;
}

}  // namespace geocov
