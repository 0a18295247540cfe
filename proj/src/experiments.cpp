#include "geocov/experiments.hpp"

#include <Eigen/QR>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <functional>
#include <mutex>
#include <thread>

namespace geocov {

namespace {

constexpr std::uint64_t kSetupStreamBase = 1ULL << 62;

// Linear-interpolation quantile of a sorted sample at fraction f in [0, 1].
double quantile_sorted(const std::vector<double>& sorted, double f) {
  const size_t n = sorted.size();
  if (n == 1) return sorted[0];
  const double pos = f * double(n - 1);
  const size_t lo = static_cast<size_t>(pos);
  if (lo + 1 >= n) return sorted[n - 1];
  const double frac = pos - double(lo);
  return sorted[lo] + frac * (sorted[lo + 1] - sorted[lo]);
}

// Run fn(0..count-1) on `threads` workers; results must be written to
// pre-sized slots so the outcome is identical for any worker count.
void run_parallel(long count, int threads, const std::function<void(long)>& fn) {
  if (threads <= 1 || count <= 1) {
    for (long i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<long> next{0};
  std::exception_ptr firstError;
  std::mutex errMutex;
  auto worker = [&] {
    for (;;) {
      const long i = next.fetch_add(1);
      if (i >= count) return;
      try {
        fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(errMutex);
        if (!firstError) firstError = std::current_exception();
        return;
      }
    }
  };
  std::vector<std::thread> pool;
  const long nWorkers = std::min<long>(threads, count);
  pool.reserve(static_cast<size_t>(nWorkers));
  for (long t = 0; t < nWorkers; ++t) pool.emplace_back(worker);
  for (auto& th : pool) th.join();
  if (firstError) std::rethrow_exception(firstError);
}

AquiferConfig with_kernel(const AquiferConfig& geom, double ell, double sigma2) {
  AquiferConfig cfg = geom;
  cfg.kernel.ell = ell;
  cfg.kernel.sigma2 = sigma2;
  return cfg;
}

SpdMatrix mc_matrix(const ExperimentSetup& s, const AquiferConfig& cfg, long q,
                    std::uint64_t stream, const std::optional<NoiseSpec>& noise = std::nullopt) {
  Rng rng(Rng::derive_stream(s.seed, stream));
  return monte_carlo_covariance(cfg, q, rng, noise).matrix();
}

struct AnchorSet {
  SpdMatrix a1, a2, truth;
};

AnchorSet build_two_anchor_setup(const ExperimentSetup& s) {
  return {mc_matrix(s, with_kernel(s.geom, s.ell1, s.sig1), s.anchorQ, kSetupStreamBase),
          mc_matrix(s, with_kernel(s.geom, s.ell2, s.sig2), s.anchorQ, kSetupStreamBase + 1),
          mc_matrix(s, with_kernel(s.geom, s.targetEll, s.targetSig), s.anchorQ,
                    kSetupStreamBase + 2)};
}

bool usable(const TrialRecord& r) {
  return std::isfinite(r.bPrime) && std::isfinite(r.b) && r.bPrime > 0.0 && r.b > 0.0;
}

void finalize_means(const std::vector<TrialRecord>& rows, double& meanBPrime, double& meanB,
                    double& meanRatio, long& excluded) {
  double sb = 0, sbp = 0, sr = 0;
  long n = 0;
  excluded = 0;
  for (const TrialRecord& r : rows) {
    if (!usable(r)) {
      ++excluded;
      continue;
    }
    sbp += r.bPrime;
    sb += r.b;
    sr += r.ratio;
    ++n;
  }
  if (n > 0) {
    meanBPrime = sbp / double(n);
    meanB = sb / double(n);
    meanRatio = sr / double(n);
  }
}

}  // namespace

SummaryStats SummaryStats::of(std::vector<double> values) {
  if (values.empty()) throw std::invalid_argument("SummaryStats: empty sample");
  std::sort(values.begin(), values.end());
  SummaryStats s;
  double sum = 0;
  for (double v : values) sum += v;
  s.mean = sum / double(values.size());
  s.q1 = quantile_sorted(values, 0.25);
  s.median = quantile_sorted(values, 0.5);
  s.q3 = quantile_sorted(values, 0.75);
  return s;
}

std::vector<double> polyfit(const std::vector<double>& x, const std::vector<double>& y,
                            int degree) {
  if (degree < 0) throw std::invalid_argument("polyfit: degree must be non-negative");
  if (x.size() != y.size() || x.size() < static_cast<size_t>(degree) + 1) {
    throw std::invalid_argument("polyfit: need at least degree+1 matching points");
  }
  Matrix vand(x.size(), degree + 1);
  for (size_t i = 0; i < x.size(); ++i) {
    double p = 1.0;
    for (int j = 0; j <= degree; ++j) {
      vand(Index(i), j) = p;
      p *= x[i];
    }
  }
  Vector rhs = Eigen::Map<const Vector>(y.data(), Index(y.size()));
  Vector coef = vand.colPivHouseholderQr().solve(rhs);
  return std::vector<double>(coef.data(), coef.data() + coef.size());
}

RegularizationResult experiment_regularization(const ExperimentSetup& setup) {
  if (setup.trials < 1) throw std::invalid_argument("experiment: trials must be >= 1");
  const AnchorSet anchors = build_two_anchor_setup(setup);
  const GeodesicSegment seg(anchors.a1, anchors.a2);
  const AquiferConfig targetCfg = with_kernel(setup.geom, setup.targetEll, setup.targetSig);

  RegularizationResult out;
  out.rows.resize(static_cast<size_t>(setup.trials));
  run_parallel(setup.trials, setup.threads, [&](long i) {
    const std::uint64_t stream = static_cast<std::uint64_t>(i);
    Rng rng(Rng::derive_stream(setup.seed, stream));
    const SampleCovariance chat = monte_carlo_covariance(targetCfg, setup.targetQ, rng);
    ProjectionResult pr = [&] {
      switch (setup.method) {
        case Method::natural: return natural_projection(seg, chat);
        case Method::reverseI: return reverse_iprojection(seg, chat);
        case Method::iproj: return iprojection(seg, chat);
      }
      throw std::logic_error("experiment_regularization: bad method");
    }();
    TrialRecord r;
    r.trial = i;
    r.stream = stream;
    r.bPrime = natural_distance(chat.matrix(), anchors.truth);
    r.b = natural_distance(pr.projected, anchors.truth);
    r.ratio = r.b > 0.0 ? r.bPrime / r.b : 0.0;
    r.tOpt = {pr.tOpt};
    r.converged = true;
    r.sweeps = pr.iterations;
    out.rows[static_cast<size_t>(i)] = std::move(r);
  });
  finalize_means(out.rows, out.meanBPrime, out.meanB, out.meanRatio, out.excluded);
  return out;
}

std::vector<NoiseCell> experiment_noise(const ExperimentSetup& setup,
                                        const std::vector<double>& alphas) {
  if (setup.trials < 1) throw std::invalid_argument("experiment: trials must be >= 1");
  if (alphas.empty()) throw std::invalid_argument("experiment_noise: empty alpha grid");
  const AnchorSet anchors = build_two_anchor_setup(setup);
  const GeodesicSegment seg(anchors.a1, anchors.a2);
  const AquiferConfig targetCfg = with_kernel(setup.geom, setup.targetEll, setup.targetSig);

  std::vector<NoiseCell> cells;
  for (size_t a = 0; a < alphas.size(); ++a) {
    std::vector<TrialRecord> natRows(static_cast<size_t>(setup.trials));
    std::vector<TrialRecord> mleRows(static_cast<size_t>(setup.trials));
    run_parallel(setup.trials, setup.threads, [&](long i) {
      // Each (alpha, trial) cell owns a stream; both methods see the same
      // noisy estimate.
      const std::uint64_t stream = static_cast<std::uint64_t>(a) *
                                       static_cast<std::uint64_t>(setup.trials) +
                                   static_cast<std::uint64_t>(i);
      Rng rng(Rng::derive_stream(setup.seed, stream));
      const std::optional<NoiseSpec> noise =
          alphas[a] > 0.0 ? std::optional<NoiseSpec>(NoiseSpec{alphas[a], anchors.truth})
                          : std::nullopt;
      const SampleCovariance chat = monte_carlo_covariance(targetCfg, setup.targetQ, rng, noise);
      const double bPrime = natural_distance(chat.matrix(), anchors.truth);
      auto record = [&](const ProjectionResult& pr) {
        TrialRecord r;
        r.trial = i;
        r.stream = stream;
        r.bPrime = bPrime;
        r.b = natural_distance(pr.projected, anchors.truth);
        r.ratio = r.b > 0.0 ? bPrime / r.b : 0.0;
        r.tOpt = {pr.tOpt};
        r.converged = true;
        r.sweeps = pr.iterations;
        return r;
      };
      natRows[static_cast<size_t>(i)] = record(natural_projection(seg, chat));
      mleRows[static_cast<size_t>(i)] = record(reverse_iprojection(seg, chat));
    });
    auto summarize = [](const std::vector<TrialRecord>& rows) {
      std::vector<double> ratios;
      ratios.reserve(rows.size());
      for (const TrialRecord& r : rows) {
        if (usable(r)) ratios.push_back(r.ratio);
      }
      return SummaryStats::of(ratios);
    };
    cells.push_back(NoiseCell{alphas[a], Method::natural, summarize(natRows), std::move(natRows)});
    cells.push_back(
        NoiseCell{alphas[a], Method::reverseI, summarize(mleRows), std::move(mleRows)});
  }
  return cells;
}

MultiparamResult experiment_multiparam(const ExperimentSetup& setup, const DescentConfig& descent) {
  if (setup.trials < 1) throw std::invalid_argument("experiment: trials must be >= 1");
  std::vector<SpdMatrix> anchors;
  anchors.push_back(mc_matrix(setup, with_kernel(setup.geom, setup.ell1, setup.sig1),
                              setup.anchorQ, kSetupStreamBase));
  anchors.push_back(mc_matrix(setup, with_kernel(setup.geom, setup.ell2, setup.sig2),
                              setup.anchorQ, kSetupStreamBase + 1));
  anchors.push_back(mc_matrix(setup, with_kernel(setup.geom, setup.ell3, setup.sig3),
                              setup.anchorQ, kSetupStreamBase + 3));
  const SpdMatrix truth = mc_matrix(setup, with_kernel(setup.geom, setup.targetEll,
                                                       setup.targetSig),
                                    setup.anchorQ, kSetupStreamBase + 4);
  const FamilyTree tree = build_tree(anchors, "unbalanced");
  const AquiferConfig targetCfg = with_kernel(setup.geom, setup.targetEll, setup.targetSig);

  DescentConfig cfg = descent;
  cfg.objective = setup.method;

  MultiparamResult out;
  out.rows.resize(static_cast<size_t>(setup.trials));
  out.objectiveTraces.resize(static_cast<size_t>(setup.trials));
  run_parallel(setup.trials, setup.threads, [&](long i) {
    const std::uint64_t stream = static_cast<std::uint64_t>(i);
    Rng rng(Rng::derive_stream(setup.seed, stream));
    const SampleCovariance chat = monte_carlo_covariance(targetCfg, setup.targetQ, rng);
    DescentResult dr = coordinate_descent(tree, chat, cfg);
    TrialRecord r;
    r.trial = i;
    r.stream = stream;
    r.bPrime = natural_distance(chat.matrix(), truth);
    r.b = natural_distance(dr.projected, truth);
    r.ratio = r.b > 0.0 ? r.bPrime / r.b : 0.0;
    r.tOpt = dr.params;
    r.converged = dr.converged;
    r.sweeps = dr.outerIters;
    out.objectiveTraces[static_cast<size_t>(i)] = std::move(dr.objectiveTrace);
    out.rows[static_cast<size_t>(i)] = std::move(r);
  });
  finalize_means(out.rows, out.meanBPrime, out.meanB, out.meanRatio, out.excluded);
  out.convergedCount = std::count_if(out.rows.begin(), out.rows.end(),
                                     [](const TrialRecord& r) { return r.converged; });

  // Objective landscape over the two coordinates for the first trial's
  // estimate, alongside the distance to the truth.
  {
    Rng rng(Rng::derive_stream(setup.seed, 0));
    const SampleCovariance chat = monte_carlo_covariance(targetCfg, setup.targetQ, rng);
    const int steps = 41;
    out.contour.reserve(static_cast<size_t>(steps) * steps);
    for (int i = 0; i < steps; ++i) {
      const double t1 = -1.0 + 3.0 * double(i) / double(steps - 1);
      for (int j = 0; j < steps; ++j) {
        const double t2 = -1.0 + 3.0 * double(j) / double(steps - 1);
        const SpdMatrix point = tree.eval({t1, t2});
        out.contour.push_back({t1, t2, natural_distance(chat.matrix(), point),
                               natural_distance(truth, point)});
      }
    }
  }
  return out;
}

LocalAnalysisExperiment experiment_local_analysis(const LocalAnalysisSetup& setup) {
  const int n = setup.dim;
  if (n < 2) throw std::invalid_argument("experiment_local_analysis: dim must be >= 2");
  std::vector<double> eps = setup.epsilons;
  if (eps.empty()) {
    for (int i = 0; i <= 18; ++i) eps.push_back(0.01 + 0.005 * double(i));
  }
  Rng rng(Rng::derive_stream(setup.seed, 0));
  auto wishart = [&]() {
    const int dof = 2 * n;
    Matrix g(n, dof);
    for (Index i = 0; i < g.rows(); ++i) {
      for (Index j = 0; j < g.cols(); ++j) g(i, j) = rng.gauss();
    }
    return SpdMatrix(Matrix(g * g.transpose() / double(dof)));
  };
  // Re-anchor so the natural projection of C sits at the first anchor; retry
  // while the projection is too close to the second anchor.
  for (int attempt = 0; attempt < 64; ++attempt) {
    const SpdMatrix a1Raw = wishart();
    const SpdMatrix a2 = wishart();
    const SpdMatrix c = wishart();
    const GeodesicSegment segRaw(a1Raw, a2);
    const double t0 = WhiteningContext(segRaw, c).solve(Method::natural).first;
    if (std::abs(1.0 - t0) < 0.1) continue;
    const SpdMatrix a1 = segRaw.at(t0);
    LocalAnalysisExperiment out{local_analysis(a1, a2, c, eps), 0.0, 0.0};
    const std::vector<double> hatFit = polyfit(eps, out.result.deltaHat, 3);
    const std::vector<double> checkFit = polyfit(eps, out.result.deltaCheck, 3);
    out.fittedHatCurvature = hatFit[2];
    out.fittedCheckCurvature = checkFit[2];
    return out;
  }
  throw ConvergenceError("experiment_local_analysis: no usable random instance found");
}

FlatVsGeodesicResult flat_vs_geodesic(const ExperimentSetup& setup, double tMin, double tMax,
                                      int tSteps) {
  if (tSteps < 2) throw std::invalid_argument("flat_vs_geodesic: need at least 2 grid points");
  if (!(tMax > tMin)) throw std::invalid_argument("flat_vs_geodesic: empty t range");
  const SpdMatrix a1 =
      mc_matrix(setup, with_kernel(setup.geom, setup.ell1, setup.sig1), setup.anchorQ,
                kSetupStreamBase);
  const SpdMatrix a2 =
      mc_matrix(setup, with_kernel(setup.geom, setup.ell2, setup.sig2), setup.anchorQ,
                kSetupStreamBase + 1);
  const SpdMatrix chat = mc_matrix(setup, with_kernel(setup.geom, setup.targetEll,
                                                      setup.targetSig),
                                   setup.targetQ, 0);
  // The geodesic distance is evaluated through the whitened engine rather
  // than by constructing the extrapolated family point explicitly: the
  // explicit matrix has condition cond(A1) * cond(Lambda)^t and falls out of
  // trustworthy floating-point range at the far ends of the t grid, while
  // the whitened form stays well scaled for every t.
  const GeodesicSegment seg(a1, a2);
  const WhiteningContext ctx(seg, chat);

  FlatVsGeodesicResult out;
  out.rows.reserve(static_cast<size_t>(tSteps));
  for (int i = 0; i < tSteps; ++i) {
    const double t = tMin + (tMax - tMin) * double(i) / double(tSteps - 1);
    FlatVsGeodesicRow row;
    row.t = t;
    const Matrix flat = detail::symmetrized((1.0 - t) * a1.mat() + t * a2.mat());
    const detail::Eigh fe = detail::eigh(flat);
    row.flatDefined = fe.d.minCoeff() > tol::kPdFloor * std::max(fe.d.maxCoeff(), 0.0);
    if (row.flatDefined) {
      row.flatDistance = natural_distance(SpdMatrix(flat), chat);
    } else {
      ++out.flatUndefinedCount;
    }
    row.geoDistance = std::sqrt(std::max(0.0, ctx.objective(Method::natural, t)));
    out.rows.push_back(row);
  }
  return out;
}

}  // namespace geocov
