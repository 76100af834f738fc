#pragma once

#include <cctype>
#include <cstdlib>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "symreg/expr.hpp"

namespace symreg {

/// Syntax or resolution failure; `position` is a byte offset into the input.
class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& message, std::size_t position)
      : std::runtime_error(message + " (at position " + std::to_string(position) + ")"),
        position_(position) {}
  std::size_t position() const { return position_; }

 private:
  std::size_t position_;
};

struct ParseOptions {
  int max_depth = kDefaultMaxDepth;
};

namespace detail {

class Parser {
 public:
  Parser(std::string_view text, std::span<const std::string> variables, ParseOptions opts)
      : text_(text), variables_(variables), opts_(opts) {}

  Expr run() {
    skip_ws();
    if (at_end()) throw ParseError("empty expression", 0);
    Expr e = parse_sum();
    skip_ws();
    if (!at_end()) throw ParseError("unexpected trailing input", pos_);
    if (depth(e) > opts_.max_depth)
      throw ParseError("expression depth exceeds " + std::to_string(opts_.max_depth), pos_);
    return e;
  }

 private:
  // grammar (pow binds tighter than unary minus, '**' right-associative):
  //   sum     := product (('+' | '-') product)*
  //   product := unary (('*' | '/') unary)*
  //   unary   := '-' unary | power
  //   power   := primary ('**' unary)?
  //   primary := NUMBER | 'params' '[' INT ']' | IDENT '(' sum ')' | IDENT | '(' sum ')'

  Expr parse_sum() {
    enter();
    Expr e = parse_product();
    for (;;) {
      skip_ws();
      if (consume('+')) {
        e = Expr::binary(BinaryOp::Add, e, parse_product());
      } else if (!peek_pow() && consume('-')) {
        e = Expr::binary(BinaryOp::Sub, e, parse_product());
      } else {
        break;
      }
    }
    leave();
    return e;
  }

  Expr parse_product() {
    enter();
    Expr e = parse_unary();
    for (;;) {
      skip_ws();
      if (peek_pow()) break;
      if (consume('*')) {
        e = Expr::binary(BinaryOp::Mul, e, parse_unary());
      } else if (consume('/')) {
        e = Expr::binary(BinaryOp::Div, e, parse_unary());
      } else {
        break;
      }
    }
    leave();
    return e;
  }

  Expr parse_unary() {
    enter();
    skip_ws();
    Expr e;
    if (consume('-')) {
      e = Expr::unary(UnaryOp::Neg, parse_unary());
    } else {
      e = parse_power();
    }
    leave();
    return e;
  }

  Expr parse_power() {
    enter();
    Expr base = parse_primary();
    skip_ws();
    if (pos_ + 1 < text_.size() && text_[pos_] == '*' && text_[pos_ + 1] == '*') {
      pos_ += 2;
      Expr exponent = parse_unary();
      base = Expr::binary(BinaryOp::Pow, base, exponent);
    }
    leave();
    return base;
  }

  Expr parse_primary() {
    enter();
    skip_ws();
    if (at_end()) throw ParseError("unexpected end of input", pos_);
    const char c = text_[pos_];
    Expr e;
    if (c == '(') {
      ++pos_;
      e = parse_sum();
      expect(')');
    } else if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') {
      e = parse_number();
    } else if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
      e = parse_identifier();
    } else {
      throw ParseError(std::string("unexpected character '") + c + "'", pos_);
    }
    leave();
    return e;
  }

  Expr parse_number() {
    const std::size_t start = pos_;
    while (!at_end() && std::isdigit(static_cast<unsigned char>(text_[pos_]))) ++pos_;
    if (!at_end() && text_[pos_] == '.') {
      ++pos_;
      while (!at_end() && std::isdigit(static_cast<unsigned char>(text_[pos_]))) ++pos_;
    }
    if (pos_ == start || (pos_ == start + 1 && text_[start] == '.'))
      throw ParseError("malformed number", start);
    if (!at_end() && (text_[pos_] == 'e' || text_[pos_] == 'E')) {
      std::size_t p = pos_ + 1;
      if (p < text_.size() && (text_[p] == '+' || text_[p] == '-')) ++p;
      std::size_t digits = p;
      while (digits < text_.size() && std::isdigit(static_cast<unsigned char>(text_[digits])))
        ++digits;
      if (digits > p) pos_ = digits;  // exponent only when digits follow
    }
    const std::string token(text_.substr(start, pos_ - start));
    const double value = std::strtod(token.c_str(), nullptr);
    return Expr::constant(value);
  }

  Expr parse_identifier() {
    const std::size_t start = pos_;
    while (!at_end() && (std::isalnum(static_cast<unsigned char>(text_[pos_])) || text_[pos_] == '_'))
      ++pos_;
    const std::string_view name = text_.substr(start, pos_ - start);

    if (name == "params") {
      skip_ws();
      expect('[');
      skip_ws();
      const std::size_t idx_start = pos_;
      while (!at_end() && std::isdigit(static_cast<unsigned char>(text_[pos_]))) ++pos_;
      if (pos_ == idx_start) throw ParseError("expected parameter index", pos_);
      const long index = std::strtol(std::string(text_.substr(idx_start, pos_ - idx_start)).c_str(),
                                     nullptr, 10);
      skip_ws();
      expect(']');
      if (index >= kMaxParams)
        throw ParseError("param index " + std::to_string(index) + " out of range [0, " +
                             std::to_string(kMaxParams) + ")",
                         idx_start);
      return Expr::param(static_cast<int>(index));
    }

    skip_ws();
    if (!at_end() && text_[pos_] == '(') {
      const UnaryOp op = lookup_function(name, start);
      ++pos_;
      Expr arg = parse_sum();
      expect(')');
      return Expr::unary(op, arg);
    }

    for (std::size_t i = 0; i < variables_.size(); ++i) {
      if (variables_[i] == name) return Expr::var(static_cast<int>(i));
    }
    throw ParseError("unknown identifier '" + std::string(name) + "'", start);
  }

  UnaryOp lookup_function(std::string_view name, std::size_t at) {
    if (name == "sin") return UnaryOp::Sin;
    if (name == "cos") return UnaryOp::Cos;
    if (name == "tan") return UnaryOp::Tan;
    if (name == "exp") return UnaryOp::Exp;
    if (name == "log") return UnaryOp::Log;
    if (name == "sqrt") return UnaryOp::Sqrt;
    if (name == "abs") return UnaryOp::Abs;
    if (name == "tanh") return UnaryOp::Tanh;
    if (name == "neg") return UnaryOp::Neg;
    throw ParseError("unknown function '" + std::string(name) + "'", at);
  }

  bool peek_pow() const {
    return pos_ + 1 < text_.size() && text_[pos_] == '*' && text_[pos_ + 1] == '*';
  }
  bool at_end() const { return pos_ >= text_.size(); }
  void skip_ws() {
    while (!at_end() && std::isspace(static_cast<unsigned char>(text_[pos_]))) ++pos_;
  }
  bool consume(char c) {
    if (!at_end() && text_[pos_] == c) {
      ++pos_;
      return true;
    }
    return false;
  }
  void expect(char c) {
    skip_ws();
    if (!consume(c)) throw ParseError(std::string("expected '") + c + "'", pos_);
  }
  void enter() {
    if (++nesting_ > 4 * opts_.max_depth + 16)
      throw ParseError("expression depth exceeds " + std::to_string(opts_.max_depth), pos_);
  }
  void leave() { --nesting_; }

  std::string_view text_;
  std::span<const std::string> variables_;
  ParseOptions opts_;
  std::size_t pos_ = 0;
  int nesting_ = 0;
};

}  // namespace detail

/// Parse the equation-skeleton DSL against an ordered variable list.
inline Expr parse_expression(std::string_view text, std::span<const std::string> variables,
                             ParseOptions opts = {}) {
  return detail::Parser(text, variables, opts).run();
}

}  // namespace symreg
