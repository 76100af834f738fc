#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "symreg/detail/text.hpp"

namespace symreg {

/// Upper bound on tunable parameters per equation skeleton.
inline constexpr int kMaxParams = 10;

/// Default cap on expression tree depth (a lone leaf has depth 1).
inline constexpr int kDefaultMaxDepth = 30;

enum class NodeKind { Const, Param, Var, Unary, Binary };

enum class UnaryOp { Sin, Cos, Tan, Exp, Log, Sqrt, Abs, Tanh, Neg };
enum class BinaryOp { Add, Sub, Mul, Div, Pow };

inline const char* unary_op_name(UnaryOp op) {
  switch (op) {
    case UnaryOp::Sin: return "sin";
    case UnaryOp::Cos: return "cos";
    case UnaryOp::Tan: return "tan";
    case UnaryOp::Exp: return "exp";
    case UnaryOp::Log: return "log";
    case UnaryOp::Sqrt: return "sqrt";
    case UnaryOp::Abs: return "abs";
    case UnaryOp::Tanh: return "tanh";
    case UnaryOp::Neg: return "neg";
  }
  return "?";
}

/// Immutable expression tree over variables, tunable parameters and
/// constants. Copies share structure; all operations on Expr are pure.
class Expr {
 public:
  Expr() = default;

  static Expr constant(double value);
  static Expr param(int index);
  static Expr var(int index);
  static Expr unary(UnaryOp op, Expr child);
  static Expr binary(BinaryOp op, Expr lhs, Expr rhs);

  bool valid() const { return node_ != nullptr; }
  NodeKind kind() const;
  double value() const;
  int index() const;
  UnaryOp unary_op() const;
  BinaryOp binary_op() const;
  const Expr& child() const;
  const Expr& lhs() const;
  const Expr& rhs() const;

 private:
  struct Node;
  explicit Expr(std::shared_ptr<const Node> n) : node_(std::move(n)) {}
  std::shared_ptr<const Node> node_;
};

struct Expr::Node {
  NodeKind kind{};
  UnaryOp uop{};
  BinaryOp bop{};
  double value = 0.0;
  int index = 0;
  Expr lhs, rhs;
};

inline Expr Expr::constant(double value) {
  auto n = std::make_shared<Node>();
  n->kind = NodeKind::Const;
  n->value = value;
  return Expr(std::move(n));
}
inline Expr Expr::param(int index) {
  if (index < 0 || index >= kMaxParams)
    throw std::out_of_range("param index " + std::to_string(index) + " out of range [0, " +
                            std::to_string(kMaxParams) + ")");
  auto n = std::make_shared<Node>();
  n->kind = NodeKind::Param;
  n->index = index;
  return Expr(std::move(n));
}
inline Expr Expr::var(int index) {
  if (index < 0) throw std::out_of_range("negative variable index");
  auto n = std::make_shared<Node>();
  n->kind = NodeKind::Var;
  n->index = index;
  return Expr(std::move(n));
}
inline Expr Expr::unary(UnaryOp op, Expr child) {
  auto n = std::make_shared<Node>();
  n->kind = NodeKind::Unary;
  n->uop = op;
  n->lhs = std::move(child);
  return Expr(std::move(n));
}
inline Expr Expr::binary(BinaryOp op, Expr lhs, Expr rhs) {
  auto n = std::make_shared<Node>();
  n->kind = NodeKind::Binary;
  n->bop = op;
  n->lhs = std::move(lhs);
  n->rhs = std::move(rhs);
  return Expr(std::move(n));
}
inline NodeKind Expr::kind() const { return node_->kind; }
inline double Expr::value() const { return node_->value; }
inline int Expr::index() const { return node_->index; }
inline UnaryOp Expr::unary_op() const { return node_->uop; }
inline BinaryOp Expr::binary_op() const { return node_->bop; }
inline const Expr& Expr::child() const { return node_->lhs; }
inline const Expr& Expr::lhs() const { return node_->lhs; }
inline const Expr& Expr::rhs() const { return node_->rhs; }

inline int node_count(const Expr& e) {
  switch (e.kind()) {
    case NodeKind::Unary: return 1 + node_count(e.child());
    case NodeKind::Binary: return 1 + node_count(e.lhs()) + node_count(e.rhs());
    default: return 1;
  }
}

inline int depth(const Expr& e) {
  switch (e.kind()) {
    case NodeKind::Unary: return 1 + depth(e.child());
    case NodeKind::Binary: return 1 + std::max(depth(e.lhs()), depth(e.rhs()));
    default: return 1;
  }
}

namespace detail {
inline void collect_params(const Expr& e, std::array<bool, kMaxParams>& used) {
  switch (e.kind()) {
    case NodeKind::Param: used[static_cast<std::size_t>(e.index())] = true; break;
    case NodeKind::Unary: collect_params(e.child(), used); break;
    case NodeKind::Binary:
      collect_params(e.lhs(), used);
      collect_params(e.rhs(), used);
      break;
    default: break;
  }
}
}  // namespace detail

/// Number of distinct parameter slots referenced by the expression.
inline int param_count(const Expr& e) {
  std::array<bool, kMaxParams> used{};
  detail::collect_params(e, used);
  int n = 0;
  for (bool b : used) n += b ? 1 : 0;
  return n;
}

inline int max_var_index(const Expr& e) {
  switch (e.kind()) {
    case NodeKind::Var: return e.index();
    case NodeKind::Unary: return max_var_index(e.child());
    case NodeKind::Binary: return std::max(max_var_index(e.lhs()), max_var_index(e.rhs()));
    default: return -1;
  }
}

inline double apply_unary(UnaryOp op, double x) {
  switch (op) {
    case UnaryOp::Sin: return std::sin(x);
    case UnaryOp::Cos: return std::cos(x);
    case UnaryOp::Tan: return std::tan(x);
    case UnaryOp::Exp: return std::exp(x);
    case UnaryOp::Log: return std::log(x);
    case UnaryOp::Sqrt: return std::sqrt(x);
    case UnaryOp::Abs: return std::abs(x);
    case UnaryOp::Tanh: return std::tanh(x);
    case UnaryOp::Neg: return -x;
  }
  return std::nan("");
}

inline double apply_binary(BinaryOp op, double a, double b) {
  switch (op) {
    case BinaryOp::Add: return a + b;
    case BinaryOp::Sub: return a - b;
    case BinaryOp::Mul: return a * b;
    case BinaryOp::Div: return a / b;
    case BinaryOp::Pow: return std::pow(a, b);
  }
  return std::nan("");
}

/// Evaluate one row. Domain violations produce non-finite values instead of
/// throwing; callers treat non-finite results as data.
inline double eval_row(const Expr& e, std::span<const double> inputs,
                       std::span<const double> params) {
  switch (e.kind()) {
    case NodeKind::Const: return e.value();
    case NodeKind::Param: return params[static_cast<std::size_t>(e.index())];
    case NodeKind::Var: return inputs[static_cast<std::size_t>(e.index())];
    case NodeKind::Unary: return apply_unary(e.unary_op(), eval_row(e.child(), inputs, params));
    case NodeKind::Binary:
      return apply_binary(e.binary_op(), eval_row(e.lhs(), inputs, params),
                          eval_row(e.rhs(), inputs, params));
  }
  return std::nan("");
}

/// Value plus partial derivatives with respect to all parameter slots
/// (forward-mode, one pass per row).
struct Dual {
  double v = 0.0;
  std::array<double, kMaxParams> d{};
};

inline Dual eval_row_dual(const Expr& e, std::span<const double> inputs,
                          std::span<const double> params) {
  Dual out;
  switch (e.kind()) {
    case NodeKind::Const:
      out.v = e.value();
      return out;
    case NodeKind::Var:
      out.v = inputs[static_cast<std::size_t>(e.index())];
      return out;
    case NodeKind::Param:
      out.v = params[static_cast<std::size_t>(e.index())];
      out.d[static_cast<std::size_t>(e.index())] = 1.0;
      return out;
    case NodeKind::Unary: {
      const Dual c = eval_row_dual(e.child(), inputs, params);
      out.v = apply_unary(e.unary_op(), c.v);
      double scale = 0.0;
      switch (e.unary_op()) {
        case UnaryOp::Sin: scale = std::cos(c.v); break;
        case UnaryOp::Cos: scale = -std::sin(c.v); break;
        case UnaryOp::Tan: {
          const double sec = 1.0 / std::cos(c.v);
          scale = sec * sec;
          break;
        }
        case UnaryOp::Exp: scale = out.v; break;
        case UnaryOp::Log: scale = 1.0 / c.v; break;
        case UnaryOp::Sqrt: scale = 0.5 / out.v; break;
        case UnaryOp::Abs: scale = c.v > 0 ? 1.0 : (c.v < 0 ? -1.0 : 0.0); break;  // subgradient 0 at 0
        case UnaryOp::Tanh: scale = 1.0 - out.v * out.v; break;
        case UnaryOp::Neg: scale = -1.0; break;
      }
      for (int j = 0; j < kMaxParams; ++j) {
        const auto ju = static_cast<std::size_t>(j);
        // exact zero for params the subtree does not use, even when the
        // local derivative factor is non-finite
        out.d[ju] = c.d[ju] == 0.0 ? 0.0 : c.d[ju] * scale;
      }
      return out;
    }
    case NodeKind::Binary: {
      const Dual a = eval_row_dual(e.lhs(), inputs, params);
      const Dual b = eval_row_dual(e.rhs(), inputs, params);
      out.v = apply_binary(e.binary_op(), a.v, b.v);
      switch (e.binary_op()) {
        case BinaryOp::Add:
          for (int j = 0; j < kMaxParams; ++j) {
            const auto ju = static_cast<std::size_t>(j);
            out.d[ju] = a.d[ju] + b.d[ju];
          }
          break;
        case BinaryOp::Sub:
          for (int j = 0; j < kMaxParams; ++j) {
            const auto ju = static_cast<std::size_t>(j);
            out.d[ju] = a.d[ju] - b.d[ju];
          }
          break;
        case BinaryOp::Mul:
          for (int j = 0; j < kMaxParams; ++j) {
            const auto ju = static_cast<std::size_t>(j);
            if (a.d[ju] == 0.0 && b.d[ju] == 0.0) {
              out.d[ju] = 0.0;
            } else {
              out.d[ju] = a.d[ju] * b.v + a.v * b.d[ju];
            }
          }
          break;
        case BinaryOp::Div:
          for (int j = 0; j < kMaxParams; ++j) {
            const auto ju = static_cast<std::size_t>(j);
            if (a.d[ju] == 0.0 && b.d[ju] == 0.0) {
              out.d[ju] = 0.0;
            } else {
              out.d[ju] = (a.d[ju] * b.v - a.v * b.d[ju]) / (b.v * b.v);
            }
          }
          break;
        case BinaryOp::Pow: {
          bool exp_depends = false;
          for (double x : b.d) exp_depends = exp_depends || x != 0.0;
          if (!exp_depends) {
            // d/dp a^b = b * a^(b-1) * a'; when a' = 0 the derivative is 0
            // even if a^(b-1) is not representable.
            const double base_pow = std::pow(a.v, b.v - 1.0);
            for (int j = 0; j < kMaxParams; ++j) {
              const auto ju = static_cast<std::size_t>(j);
              out.d[ju] = a.d[ju] == 0.0 ? 0.0 : b.v * base_pow * a.d[ju];
            }
          } else {
            const double log_a = std::log(a.v);
            for (int j = 0; j < kMaxParams; ++j) {
              const auto ju = static_cast<std::size_t>(j);
              if (a.d[ju] == 0.0 && b.d[ju] == 0.0) {
                out.d[ju] = 0.0;
              } else {
                out.d[ju] = out.v * (b.d[ju] * log_a + b.v * a.d[ju] / a.v);
              }
            }
          }
          break;
        }
      }
      return out;
    }
  }
  out.v = std::nan("");
  return out;
}

/// Render with minimal parentheses; parse(to_text(e)) equals e up to
/// canonical form. Variable indices are rendered through `var_names`.
inline std::string to_text(const Expr& e, std::span<const std::string> var_names);

namespace detail {

// precedence: add/sub 1, mul/div 2, unary-neg 3, pow 4, atoms 5
inline int precedence(const Expr& e) {
  switch (e.kind()) {
    case NodeKind::Binary:
      switch (e.binary_op()) {
        case BinaryOp::Add:
        case BinaryOp::Sub: return 1;
        case BinaryOp::Mul:
        case BinaryOp::Div: return 2;
        case BinaryOp::Pow: return 4;
      }
      return 1;
    case NodeKind::Unary: return e.unary_op() == UnaryOp::Neg ? 3 : 5;
    default: return 5;
  }
}

inline void render(const Expr& e, std::span<const std::string> var_names, int min_prec,
                   std::string& out) {
  const int prec = precedence(e);
  const bool parens = prec < min_prec;
  if (parens) out += '(';
  switch (e.kind()) {
    case NodeKind::Const: {
      const double v = e.value();
      if (v < 0 && !parens && min_prec > 3) {
        // negative literal in a tight spot, e.g. exponent of pow
        out += '(';
        out += detail::double_to_text(v);
        out += ')';
        if (parens) out += ')';
        return;
      }
      out += detail::double_to_text(v);
      break;
    }
    case NodeKind::Param:
      out += "params[" + std::to_string(e.index()) + "]";
      break;
    case NodeKind::Var:
      if (static_cast<std::size_t>(e.index()) >= var_names.size())
        throw std::out_of_range("variable index " + std::to_string(e.index()) +
                                " has no name in a list of " +
                                std::to_string(var_names.size()));
      out += var_names[static_cast<std::size_t>(e.index())];
      break;
    case NodeKind::Unary:
      if (e.unary_op() == UnaryOp::Neg) {
        out += '-';
        // mul/div children can stay bare: -(a*b) and (-a)*b agree exactly
        render(e.child(), var_names, 2, out);
      } else {
        out += unary_op_name(e.unary_op());
        out += '(';
        render(e.child(), var_names, 0, out);
        out += ')';
      }
      break;
    case NodeKind::Binary: {
      const char* op_text = "";
      int lhs_min = prec, rhs_min = prec + 1;
      switch (e.binary_op()) {
        case BinaryOp::Add: op_text = " + "; break;
        case BinaryOp::Sub: op_text = " - "; break;
        case BinaryOp::Mul: op_text = "*"; break;
        case BinaryOp::Div: op_text = "/"; break;
        case BinaryOp::Pow:
          op_text = "**";
          lhs_min = prec + 1;  // (x**2)**3 keeps parens
          rhs_min = 3;         // exponent admits unary minus and pow
          break;
      }
      render(e.lhs(), var_names, lhs_min, out);
      out += op_text;
      render(e.rhs(), var_names, rhs_min, out);
      break;
    }
  }
  if (parens) out += ')';
}

}  // namespace detail

inline std::string to_text(const Expr& e, std::span<const std::string> var_names) {
  std::string out;
  detail::render(e, var_names, 0, out);
  return out;
}

}  // namespace symreg
