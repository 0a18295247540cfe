#pragma once

#include "geocov/family.hpp"
#include "geocov/projection.hpp"

#include <vector>

namespace geocov {

struct DescentConfig {
  double coordTol = tol::kCoord;           // per-sweep max coordinate movement
  int maxOuterIters = tol::kMaxOuterIters; // sweep cap
  Method objective = Method::natural;
};

struct DescentResult {
  std::vector<double> params;
  SpdMatrix projected;
  // Objective value before the first sweep and after each sweep; reported as
  // natural distance or the KL value matching the configured objective.
  // Non-increasing within 1e-12 slack.
  std::vector<double> objectiveTrace;
  bool converged = false;
  int outerIters = 0;
  // Coordinates skipped in some sweep because their two endpoints coincided
  // (degenerate direction); each index listed once.
  std::vector<int> skippedCoords;
};

// Coordinate order for the sweeps: parameters sorted by node depth ascending
// (root first), ties by paramIndex. Root-first sweeps propagate the coarse
// placement before the deep refinements and converge in far fewer sweeps on
// nested families.
std::vector<int> sweep_order(const FamilyTree& tree);

// Cyclic exact minimization over one family parameter at a time, initialized
// at the zero vector. The root coordinate is an exact geodesic projection
// (Newton); other coordinates minimize the true coordinate restriction by
// bracketing plus Brent. Terminates when no coordinate moves more than
// cfg.coordTol in a full sweep, or flags converged=false at maxOuterIters.
DescentResult coordinate_descent(const FamilyTree& tree, const SampleCovariance& c,
                                 const DescentConfig& cfg = {});

// Normalized stationarity diagnostic: entry j is |<grad F, dX/dt_j>| divided
// by ||grad F|| * ||dX/dt_j|| (Frobenius), i.e. the cosine between the
// objective gradient and the coordinate direction, computed analytically
// through the tree. Near-zero entries certify coordinate-wise optimality;
// degenerate coordinates report exactly 0, as does an exact fit (gradient
// zero to roundoff), where the cosine would be noise over noise.
std::vector<double> coordinate_stationarity(const FamilyTree& tree, const SampleCovariance& c,
                                            const std::vector<double>& params, Method m);

}  // namespace geocov
