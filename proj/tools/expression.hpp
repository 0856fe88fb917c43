#pragma once

#include <memory>
#include <string>

namespace crossdiff::cli {

/// Closed-form initial-data expression over the coordinates x and y.
///
/// Grammar: numbers, the constants pi and e, the variables x and y, binary
/// + - * / ^ with the usual precedence (^ right-associative), unary minus,
/// parentheses, and the functions sin, cos, tan, exp, log, sqrt, tanh, abs.
class Expression {
 public:
  /// Throws ConfigParse naming `field` and the offending column.
  static Expression parse(const std::string& text, const std::string& field = "expression");

  double operator()(double x, double y = 0.0) const;
  const std::string& text() const { return text_; }

  struct Node;

 private:
  std::shared_ptr<const Node> root_;
  std::string text_;
};

}  // namespace crossdiff::cli
