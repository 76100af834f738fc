#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "symreg/expr.hpp"

namespace symreg {

/// Normalized expression plus the parameter relabeling applied to reach it.
/// `param_map[old_index]` is the new index, or -1 when the parameter does
/// not occur.
struct CanonicalForm {
  Expr expr;
  std::array<int, kMaxParams> param_map;
};

namespace detail {

// sub, div and neg are rewritten into add / mul / pow so that surface
// variants share one shape:  a-b => a + -1*b,  a/b => a * b**-1,  -a => -1*a
inline Expr desugar(const Expr& e) {
  switch (e.kind()) {
    case NodeKind::Unary: {
      Expr c = desugar(e.child());
      if (e.unary_op() == UnaryOp::Neg)
        return Expr::binary(BinaryOp::Mul, Expr::constant(-1.0), c);
      return Expr::unary(e.unary_op(), c);
    }
    case NodeKind::Binary: {
      Expr l = desugar(e.lhs());
      Expr r = desugar(e.rhs());
      switch (e.binary_op()) {
        case BinaryOp::Sub:
          return Expr::binary(BinaryOp::Add, l,
                              Expr::binary(BinaryOp::Mul, Expr::constant(-1.0), r));
        case BinaryOp::Div:
          return Expr::binary(BinaryOp::Mul, l,
                              Expr::binary(BinaryOp::Pow, r, Expr::constant(-1.0)));
        default:
          return Expr::binary(e.binary_op(), l, r);
      }
    }
    default:
      return e;
  }
}

// bottom-up constant folding; folds only when the result is finite
inline Expr fold_constants(const Expr& e) {
  switch (e.kind()) {
    case NodeKind::Unary: {
      Expr c = fold_constants(e.child());
      if (c.kind() == NodeKind::Const) {
        const double v = apply_unary(e.unary_op(), c.value());
        if (std::isfinite(v)) return Expr::constant(v);
      }
      return Expr::unary(e.unary_op(), c);
    }
    case NodeKind::Binary: {
      Expr l = fold_constants(e.lhs());
      Expr r = fold_constants(e.rhs());
      if (l.kind() == NodeKind::Const && r.kind() == NodeKind::Const) {
        const double v = apply_binary(e.binary_op(), l.value(), r.value());
        if (std::isfinite(v)) return Expr::constant(v);
      }
      return Expr::binary(e.binary_op(), l, r);
    }
    default:
      return e;
  }
}

// Total preorder over nodes; parameters compare equal regardless of index
// so that alpha-equivalent skeletons sort identically.
inline int order_rank(const Expr& e) {
  switch (e.kind()) {
    case NodeKind::Const: return 0;
    case NodeKind::Param: return 1;
    case NodeKind::Var: return 2;
    case NodeKind::Unary: return 3;
    case NodeKind::Binary: return 4;
  }
  return 5;
}

inline int compare_blind(const Expr& a, const Expr& b) {
  const int ra = order_rank(a), rb = order_rank(b);
  if (ra != rb) return ra < rb ? -1 : 1;
  switch (a.kind()) {
    case NodeKind::Const:
      if (a.value() < b.value()) return -1;
      if (a.value() > b.value()) return 1;
      return 0;
    case NodeKind::Param:
      return 0;
    case NodeKind::Var:
      return a.index() == b.index() ? 0 : (a.index() < b.index() ? -1 : 1);
    case NodeKind::Unary: {
      const int oa = static_cast<int>(a.unary_op()), ob = static_cast<int>(b.unary_op());
      if (oa != ob) return oa < ob ? -1 : 1;
      return compare_blind(a.child(), b.child());
    }
    case NodeKind::Binary: {
      const int oa = static_cast<int>(a.binary_op()), ob = static_cast<int>(b.binary_op());
      if (oa != ob) return oa < ob ? -1 : 1;
      const int cl = compare_blind(a.lhs(), b.lhs());
      if (cl != 0) return cl;
      return compare_blind(a.rhs(), b.rhs());
    }
  }
  return 0;
}

inline void flatten(const Expr& e, BinaryOp op, std::vector<Expr>& out) {
  if (e.kind() == NodeKind::Binary && e.binary_op() == op) {
    flatten(e.lhs(), op, out);
    flatten(e.rhs(), op, out);
  } else {
    out.push_back(e);
  }
}

inline Expr normalize(const Expr& e) {
  switch (e.kind()) {
    case NodeKind::Unary:
      return Expr::unary(e.unary_op(), normalize(e.child()));
    case NodeKind::Binary: {
      const BinaryOp op = e.binary_op();
      if (op == BinaryOp::Pow)
        return Expr::binary(op, normalize(e.lhs()), normalize(e.rhs()));

      // add / mul: normalize children first (they may collapse into the
      // same op), then flatten the chain, merge constants, sort operands
      Expr l = normalize(e.lhs());
      Expr r = normalize(e.rhs());
      std::vector<Expr> operands;
      flatten(l, op, operands);
      flatten(r, op, operands);

      const double identity = op == BinaryOp::Add ? 0.0 : 1.0;
      double combined = identity;
      std::vector<Expr> rest;
      int const_count = 0;
      for (const auto& operand : operands) {
        if (operand.kind() == NodeKind::Const) {
          combined = op == BinaryOp::Add ? combined + operand.value()
                                         : combined * operand.value();
          ++const_count;
        } else {
          rest.push_back(operand);
        }
      }
      if (const_count > 0 && std::isfinite(combined)) {
        if (combined != identity || rest.empty()) rest.push_back(Expr::constant(combined));
      } else if (const_count > 0) {
        // combination overflowed; keep the literals as they were
        for (const auto& operand : operands)
          if (operand.kind() == NodeKind::Const) rest.push_back(operand);
      }

      std::stable_sort(rest.begin(), rest.end(), [](const Expr& a, const Expr& b) {
        return compare_blind(a, b) < 0;
      });
      if (rest.size() == 1) return rest.front();
      Expr acc = rest.front();
      for (std::size_t i = 1; i < rest.size(); ++i) acc = Expr::binary(op, acc, rest[i]);
      return acc;
    }
    default:
      return e;
  }
}

inline Expr relabel(const Expr& e, std::array<int, kMaxParams>& map, int& next) {
  switch (e.kind()) {
    case NodeKind::Param: {
      const auto old_index = static_cast<std::size_t>(e.index());
      if (map[old_index] < 0) map[old_index] = next++;
      return Expr::param(map[old_index]);
    }
    case NodeKind::Unary:
      return Expr::unary(e.unary_op(), relabel(e.child(), map, next));
    case NodeKind::Binary: {
      Expr l = relabel(e.lhs(), map, next);
      Expr r = relabel(e.rhs(), map, next);
      return Expr::binary(e.binary_op(), l, r);
    }
    default:
      return e;
  }
}

inline bool structural_equal(const Expr& a, const Expr& b) {
  if (a.kind() != b.kind()) return false;
  switch (a.kind()) {
    case NodeKind::Const: return a.value() == b.value();
    case NodeKind::Param: return a.index() == b.index();
    case NodeKind::Var: return a.index() == b.index();
    case NodeKind::Unary:
      return a.unary_op() == b.unary_op() && structural_equal(a.child(), b.child());
    case NodeKind::Binary:
      return a.binary_op() == b.binary_op() && structural_equal(a.lhs(), b.lhs()) &&
             structural_equal(a.rhs(), b.rhs());
  }
  return false;
}

}  // namespace detail

/// Deterministic, idempotent normal form: sub/div/neg rewritten, constants
/// folded, commutative chains sorted, parameters renumbered in first
/// occurrence order. Structural only -- no distributive rewriting.
inline CanonicalForm canonicalize(const Expr& e) {
  Expr shaped = detail::normalize(detail::fold_constants(detail::desugar(e)));
  CanonicalForm out;
  out.param_map.fill(-1);
  int next = 0;
  out.expr = detail::relabel(shaped, out.param_map, next);
  return out;
}

/// Structural equivalence of skeletons; parameters match up to relabeling.
inline bool skeleton_equal(const Expr& a, const Expr& b) {
  return detail::structural_equal(canonicalize(a).expr, canonicalize(b).expr);
}

/// Canonical wire text for dedup keys and buffer persistence.
inline std::string canonical_text(const Expr& e, std::span<const std::string> var_names) {
  return to_text(canonicalize(e).expr, var_names);
}

/// Reorder a fitted parameter vector to match canonical indices; slots the
/// skeleton does not use keep `fill`.
inline std::array<double, kMaxParams> relabel_param_values(
    const std::array<int, kMaxParams>& param_map, std::span<const double> params,
    double fill = 1.0) {
  std::array<double, kMaxParams> out;
  out.fill(fill);
  for (int old_index = 0; old_index < kMaxParams; ++old_index) {
    const int new_index = param_map[static_cast<std::size_t>(old_index)];
    if (new_index >= 0) out[static_cast<std::size_t>(new_index)] = params[static_cast<std::size_t>(old_index)];
  }
  return out;
}

}  // namespace symreg
