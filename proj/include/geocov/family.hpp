#pragma once

#include "geocov/manifold.hpp"

#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace geocov {

// The one-parameter geodesic family through two anchors, defined for all real t.
class GeodesicSegment {
 public:
  GeodesicSegment(SpdMatrix anchor1, SpdMatrix anchor2);

  const SpdMatrix& anchor1() const noexcept { return a1_; }
  const SpdMatrix& anchor2() const noexcept { return a2_; }
  const PencilDecomposition& pencil() const noexcept { return pd_; }
  double anchorDistance() const noexcept { return dist_; }
  Index dim() const noexcept { return a1_.dim(); }

  SpdMatrix at(double t) const { return geodesic_point(pd_, t); }

 private:
  SpdMatrix a1_, a2_;
  PencilDecomposition pd_;
  double dist_;
};

SpdMatrix eval_segment(const GeodesicSegment& seg, double t);

// alpha^t times a base family: either a fixed matrix (one parameter) or a
// geodesic segment (two parameters: the scale exponent and the segment's own).
class ScaledFamily {
 public:
  ScaledFamily(SpdMatrix base, double alpha);
  ScaledFamily(GeodesicSegment base, double alpha);

  double alpha() const noexcept { return alpha_; }
  bool hasSegmentBase() const noexcept { return seg_.has_value(); }
  int paramCount() const noexcept { return seg_ ? 2 : 1; }

  SpdMatrix eval(double tScale, std::optional<double> tInner = std::nullopt) const;

 private:
  std::optional<GeodesicSegment> seg_;
  std::optional<SpdMatrix> base_;
  double alpha_;
};

SpdMatrix eval_scaled(const ScaledFamily& fam, double tScale,
                      std::optional<double> tInner = std::nullopt);

// A p-parameter covariance family built from p+1 anchors as a binary tree of
// nested geodesics. Each internal node evaluates the geodesic between its
// children's evaluations at its own parameter. Immutable; evaluations are pure.
//
// Parameter indices run over internal nodes by node depth descending (deepest
// first), left to right within a depth. For the unbalanced (left-deep spine)
// shape this is the bottom-up spine order t1..tp; for the balanced shape the
// parents of leaves come first, the root last.
class FamilyTree {
 public:
  enum class Shape { unbalanced, balanced, mixed };

  static FamilyTree unbalanced(std::vector<SpdMatrix> anchors);
  static FamilyTree balanced(std::vector<SpdMatrix> anchors);  // power-of-two anchor count
  static FamilyTree mixed(const std::string& shapeSpec, std::vector<SpdMatrix> anchors);

  Shape shape() const noexcept { return shape_; }
  int paramCount() const noexcept { return static_cast<int>(depths_.size()); }
  int anchorCount() const noexcept { return static_cast<int>(anchors_.size()); }
  Index dim() const { return anchors_.front().dim(); }
  const SpdMatrix& anchor(int i) const { return anchors_.at(static_cast<std::size_t>(i)); }

  // Depth of the internal node carrying each paramIndex (root = 0).
  const std::vector<int>& paramDepths() const noexcept { return depths_; }

  // Canonical nested-parentheses description with 1-based anchor positions,
  // e.g. "((1,2),3)" for the 3-anchor unbalanced tree.
  std::string shapeSpec() const;

  SpdMatrix eval(const std::vector<double>& params) const;

  // Evaluation together with the derivative of the evaluation with respect to
  // params[coord], propagated through the nested geodesics (used for
  // stationarity diagnostics and derivative tests).
  std::pair<Matrix, Matrix> eval_with_derivative(const std::vector<double>& params,
                                                 int coord) const;

  struct Node {
    int leaf = -1;   // anchor index if >= 0, else internal
    int param = -1;  // paramIndex for internal nodes
    std::unique_ptr<Node> lhs, rhs;
  };
  const Node* root() const noexcept { return root_.get(); }

 private:
  FamilyTree(Shape shape, std::unique_ptr<Node> root, std::vector<SpdMatrix> anchors);

  Shape shape_;
  std::unique_ptr<Node> root_;
  std::vector<SpdMatrix> anchors_;
  std::vector<int> depths_;  // per paramIndex
};

SpdMatrix eval_tree(const FamilyTree& tree, const std::vector<double>& params);

// shape is "unbalanced", "balanced", or an explicit nested-parentheses string.
FamilyTree build_tree(std::vector<SpdMatrix> anchors, const std::string& shape);

}  // namespace geocov
