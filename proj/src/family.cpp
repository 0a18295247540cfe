#include "geocov/family.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <sstream>

namespace geocov {

GeodesicSegment::GeodesicSegment(SpdMatrix anchor1, SpdMatrix anchor2)
    : a1_(std::move(anchor1)),
      a2_(std::move(anchor2)),
      pd_(pencil_decompose(a1_, a2_)),
      dist_(std::sqrt(pd_.lambda.array().log().square().sum())) {}

SpdMatrix eval_segment(const GeodesicSegment& seg, double t) { return seg.at(t); }

ScaledFamily::ScaledFamily(SpdMatrix base, double alpha) : base_(std::move(base)), alpha_(alpha) {
  if (!(alpha > 0.0)) throw std::invalid_argument("ScaledFamily: alpha must be positive");
}

ScaledFamily::ScaledFamily(GeodesicSegment base, double alpha)
    : seg_(std::move(base)), alpha_(alpha) {
  if (!(alpha > 0.0)) throw std::invalid_argument("ScaledFamily: alpha must be positive");
}

SpdMatrix ScaledFamily::eval(double tScale, std::optional<double> tInner) const {
  const double scale = std::pow(alpha_, tScale);
  if (seg_) {
    if (!tInner) throw std::invalid_argument("ScaledFamily: segment base requires t_inner");
    return SpdMatrix(scale * seg_->at(*tInner).mat());
  }
  if (tInner) throw std::invalid_argument("ScaledFamily: matrix base takes no t_inner");
  return SpdMatrix(scale * base_->mat());
}

SpdMatrix eval_scaled(const ScaledFamily& fam, double tScale, std::optional<double> tInner) {
  return fam.eval(tScale, tInner);
}

namespace {

using Node = FamilyTree::Node;

std::unique_ptr<Node> leaf(int anchor) {
  auto n = std::make_unique<Node>();
  n->leaf = anchor;
  return n;
}

std::unique_ptr<Node> join(std::unique_ptr<Node> l, std::unique_ptr<Node> r) {
  auto n = std::make_unique<Node>();
  n->lhs = std::move(l);
  n->rhs = std::move(r);
  return n;
}

// Mixed-shape grammar: term := INT | '(' term ',' term ')', anchors 1-based.
struct ShapeParser {
  const std::string& s;
  std::size_t pos = 0;
  std::vector<bool> used;

  explicit ShapeParser(const std::string& spec, std::size_t anchorCount)
      : s(spec), used(anchorCount, false) {}

  void skip_ws() {
    while (pos < s.size() && std::isspace(static_cast<unsigned char>(s[pos]))) ++pos;
  }

  [[noreturn]] void fail(const std::string& why) const {
    std::ostringstream os;
    os << "shape spec \"" << s << "\": " << why << " at position " << pos;
    throw std::invalid_argument(os.str());
  }

  std::unique_ptr<Node> term() {
    skip_ws();
    if (pos >= s.size()) fail("unexpected end");
    if (s[pos] == '(') {
      ++pos;
      auto l = term();
      skip_ws();
      if (pos >= s.size() || s[pos] != ',') fail("expected ','");
      ++pos;
      auto r = term();
      skip_ws();
      if (pos >= s.size() || s[pos] != ')') fail("expected ')'");
      ++pos;
      return join(std::move(l), std::move(r));
    }
    if (!std::isdigit(static_cast<unsigned char>(s[pos]))) fail("expected digit or '('");
    std::size_t start = pos;
    while (pos < s.size() && std::isdigit(static_cast<unsigned char>(s[pos]))) ++pos;
    const int idx = std::stoi(s.substr(start, pos - start));
    if (idx < 1 || static_cast<std::size_t>(idx) > used.size()) fail("anchor index out of range");
    if (used[static_cast<std::size_t>(idx - 1)]) fail("anchor index repeated");
    used[static_cast<std::size_t>(idx - 1)] = true;
    return leaf(idx - 1);
  }

  std::unique_ptr<Node> parse() {
    auto root = term();
    skip_ws();
    if (pos != s.size()) fail("trailing characters");
    if (std::find(used.begin(), used.end(), false) != used.end()) {
      fail("not all anchors used");
    }
    if (root->leaf >= 0) fail("shape must contain at least one pair");
    return root;
  }
};

// Assign parameter indices: internal nodes ordered by depth descending
// (deepest level first), left to right within a level.
void assign_params(Node* root, std::vector<int>& depthsOut) {
  struct Entry {
    Node* node;
    int depth;
    int order;
  };
  std::vector<Entry> internals;
  int counter = 0;
  auto walk = [&](auto&& self, Node* n, int depth) -> void {
    if (n->leaf >= 0) return;
    self(self, n->lhs.get(), depth + 1);
    internals.push_back({n, depth, counter++});
    self(self, n->rhs.get(), depth + 1);
  };
  walk(walk, root, 0);
  std::stable_sort(internals.begin(), internals.end(), [](const Entry& a, const Entry& b) {
    if (a.depth != b.depth) return a.depth > b.depth;
    return a.order < b.order;
  });
  depthsOut.resize(internals.size());
  for (std::size_t i = 0; i < internals.size(); ++i) {
    internals[i].node->param = static_cast<int>(i);
    depthsOut[i] = internals[i].depth;
  }
}

void check_anchors(const std::vector<SpdMatrix>& anchors) {
  if (anchors.size() < 2) throw std::invalid_argument("FamilyTree: need at least 2 anchors");
  for (const auto& a : anchors) {
    if (a.dim() != anchors.front().dim()) {
      throw std::invalid_argument("FamilyTree: anchors differ in dimension");
    }
  }
}

// Derivative of the symmetric power M^t along the symmetric direction dM,
// via divided differences of x -> x^t on the spectrum of M.
Matrix dpow_frechet(const detail::Eigh& em, double t, const Matrix& dm) {
  const Index n = em.d.size();
  const Matrix k = em.v.transpose() * dm * em.v;
  Matrix out(n, n);
  Vector pw(n);
  for (Index i = 0; i < n; ++i) pw[i] = std::pow(em.d[i], t);
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < n; ++j) {
      const double di = em.d[i], dj = em.d[j];
      double psi;
      if (std::abs(di - dj) > 1e-10 * std::max(std::abs(di), std::abs(dj))) {
        psi = (pw[i] - pw[j]) / (di - dj);
      } else {
        psi = t * std::pow(0.5 * (di + dj), t - 1.0);
      }
      out(i, j) = k(i, j) * psi;
    }
  }
  return detail::symmetrized(em.v * out * em.v.transpose());
}

// Derivative of the symmetric square root: solves S dS + dS S = dB in the
// eigenbasis of B.
Matrix dsqrt_frechet(const detail::Eigh& eb, const Matrix& db) {
  const Index n = eb.d.size();
  const Matrix k = eb.v.transpose() * db * eb.v;
  Matrix out(n, n);
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < n; ++j) {
      out(i, j) = k(i, j) / (std::sqrt(eb.d[i]) + std::sqrt(eb.d[j]));
    }
  }
  return detail::symmetrized(eb.v * out * eb.v.transpose());
}

struct EvalDeriv {
  Matrix value;
  Matrix deriv;  // zero-sized when the subtree does not involve the coordinate
  bool touched = false;
};

EvalDeriv eval_node_deriv(const Node* node, const std::vector<SpdMatrix>& anchors,
                          const std::vector<double>& params, int coord) {
  if (node->leaf >= 0) {
    return {anchors[static_cast<std::size_t>(node->leaf)].mat(), Matrix(), false};
  }
  EvalDeriv l = eval_node_deriv(node->lhs.get(), anchors, params, coord);
  EvalDeriv r = eval_node_deriv(node->rhs.get(), anchors, params, coord);
  const double t = params[static_cast<std::size_t>(node->param)];

  // value = S P S with S = sqrt(L), M = S^{-1} R S^{-1}, P = M^t.
  const detail::Eigh eb = detail::eigh(l.value);
  if (eb.d.minCoeff() <= 0.0) {
    throw std::domain_error("eval_tree: intermediate evaluation lost positive definiteness");
  }
  Vector sr = eb.d.array().sqrt();
  const Matrix s = detail::symmetrized(eb.v * sr.asDiagonal() * eb.v.transpose());
  Vector sri = sr.cwiseInverse();
  const Matrix si = detail::symmetrized(eb.v * sri.asDiagonal() * eb.v.transpose());
  const Matrix m = detail::symmetrized(si * r.value * si);
  const detail::Eigh em = detail::eigh(m);
  if (em.d.minCoeff() <= 0.0) {
    throw std::domain_error("eval_tree: intermediate pencil lost positive definiteness");
  }
  Vector pw = em.d.array().pow(t);
  const Matrix p = detail::symmetrized(em.v * pw.asDiagonal() * em.v.transpose());
  EvalDeriv out;
  out.value = detail::symmetrized(s * p * s);

  if (node->param == coord) {
    // d/dt S M^t S = S (M^t log M) S.
    Vector g = pw.array() * em.d.array().log();
    const Matrix dp = detail::symmetrized(em.v * g.asDiagonal() * em.v.transpose());
    out.deriv = detail::symmetrized(s * dp * s);
    out.touched = true;
  } else if (l.touched) {
    const Matrix ds = dsqrt_frechet(eb, l.deriv);
    const Matrix dsi = -si * ds * si;
    const Matrix dm = detail::symmetrized(dsi * r.value * si + si * r.value * dsi);
    const Matrix dp = dpow_frechet(em, t, dm);
    out.deriv = detail::symmetrized(ds * p * s + s * dp * s + s * p * ds);
    out.touched = true;
  } else if (r.touched) {
    const Matrix dm = detail::symmetrized(si * r.deriv * si);
    const Matrix dp = dpow_frechet(em, t, dm);
    out.deriv = detail::symmetrized(s * dp * s);
    out.touched = true;
  }
  return out;
}

void spec_string(const Node* node, std::ostringstream& os) {
  if (node->leaf >= 0) {
    os << node->leaf + 1;
    return;
  }
  os << '(';
  spec_string(node->lhs.get(), os);
  os << ',';
  spec_string(node->rhs.get(), os);
  os << ')';
}

}  // namespace

FamilyTree::FamilyTree(Shape shape, std::unique_ptr<Node> root, std::vector<SpdMatrix> anchors)
    : shape_(shape), root_(std::move(root)), anchors_(std::move(anchors)) {
  assign_params(root_.get(), depths_);
}

FamilyTree FamilyTree::unbalanced(std::vector<SpdMatrix> anchors) {
  check_anchors(anchors);
  auto node = join(leaf(0), leaf(1));
  for (std::size_t i = 2; i < anchors.size(); ++i) {
    node = join(std::move(node), leaf(static_cast<int>(i)));
  }
  return FamilyTree(Shape::unbalanced, std::move(node), std::move(anchors));
}

FamilyTree FamilyTree::balanced(std::vector<SpdMatrix> anchors) {
  check_anchors(anchors);
  const std::size_t n = anchors.size();
  if ((n & (n - 1)) != 0) {
    throw std::invalid_argument("FamilyTree::balanced: anchor count must be a power of two");
  }
  std::vector<std::unique_ptr<Node>> level;
  level.reserve(n);
  for (std::size_t i = 0; i < n; ++i) level.push_back(leaf(static_cast<int>(i)));
  while (level.size() > 1) {
    std::vector<std::unique_ptr<Node>> next;
    next.reserve(level.size() / 2);
    for (std::size_t i = 0; i < level.size(); i += 2) {
      next.push_back(join(std::move(level[i]), std::move(level[i + 1])));
    }
    level = std::move(next);
  }
  return FamilyTree(Shape::balanced, std::move(level.front()), std::move(anchors));
}

FamilyTree FamilyTree::mixed(const std::string& shapeSpec, std::vector<SpdMatrix> anchors) {
  check_anchors(anchors);
  ShapeParser parser(shapeSpec, anchors.size());
  return FamilyTree(Shape::mixed, parser.parse(), std::move(anchors));
}

std::string FamilyTree::shapeSpec() const {
  std::ostringstream os;
  spec_string(root_.get(), os);
  return os.str();
}

SpdMatrix FamilyTree::eval(const std::vector<double>& params) const {
  if (static_cast<int>(params.size()) != paramCount()) {
    throw std::invalid_argument("eval_tree: wrong parameter count");
  }
  // coord = -1 never matches a paramIndex, so only values are computed.
  EvalDeriv out = eval_node_deriv(root_.get(), anchors_, params, -1);
  return SpdMatrix(std::move(out.value));
}

std::pair<Matrix, Matrix> FamilyTree::eval_with_derivative(const std::vector<double>& params,
                                                           int coord) const {
  if (static_cast<int>(params.size()) != paramCount()) {
    throw std::invalid_argument("eval_with_derivative: wrong parameter count");
  }
  if (coord < 0 || coord >= paramCount()) {
    throw std::invalid_argument("eval_with_derivative: coordinate out of range");
  }
  EvalDeriv out = eval_node_deriv(root_.get(), anchors_, params, coord);
  return {std::move(out.value), std::move(out.deriv)};
}

SpdMatrix eval_tree(const FamilyTree& tree, const std::vector<double>& params) {
  return tree.eval(params);
}

FamilyTree build_tree(std::vector<SpdMatrix> anchors, const std::string& shape) {
  if (shape == "unbalanced") return FamilyTree::unbalanced(std::move(anchors));
  if (shape == "balanced") return FamilyTree::balanced(std::move(anchors));
  return FamilyTree::mixed(shape, std::move(anchors));
}

}  // namespace geocov
