#include "expression.hpp"

#include <cctype>
#include <cmath>
#include <numbers>
#include <vector>

#include "crossdiff/error.hpp"

namespace crossdiff::cli {

struct Expression::Node {
  enum class Kind { Number, X, Y, Neg, Add, Sub, Mul, Div, Pow, Call } kind;
  double value = 0.0;
  double (*fn)(double) = nullptr;
  std::shared_ptr<const Node> lhs, rhs;
};

namespace {

using Node = Expression::Node;
using NodePtr = std::shared_ptr<const Node>;

struct Function {
  const char* name;
  double (*fn)(double);
};

const Function kFunctions[] = {
    {"sin", [](double v) { return std::sin(v); }},   {"cos", [](double v) { return std::cos(v); }},
    {"tan", [](double v) { return std::tan(v); }},   {"exp", [](double v) { return std::exp(v); }},
    {"log", [](double v) { return std::log(v); }},   {"sqrt", [](double v) { return std::sqrt(v); }},
    {"tanh", [](double v) { return std::tanh(v); }}, {"abs", [](double v) { return std::abs(v); }},
};

NodePtr make(Node::Kind kind, NodePtr lhs = nullptr, NodePtr rhs = nullptr) {
  auto n = std::make_shared<Node>();
  n->kind = kind;
  n->lhs = std::move(lhs);
  n->rhs = std::move(rhs);
  return n;
}

class Parser {
 public:
  Parser(const std::string& text, const std::string& field) : s_(text), field_(field) {}

  NodePtr parse() {
    NodePtr e = sum();
    skip();
    if (pos_ != s_.size()) fail("unexpected '" + std::string(1, s_[pos_]) + "'");
    return e;
  }

 private:
  [[noreturn]] void fail(const std::string& why) const {
    throw Error(ErrorCode::ConfigParse, field_ + ": " + why + " at column " + std::to_string(pos_ + 1) + " in \"" + s_ + "\"");
  }

  void skip() {
    while (pos_ < s_.size() && std::isspace(static_cast<unsigned char>(s_[pos_]))) ++pos_;
  }

  bool accept(char c) {
    skip();
    if (pos_ < s_.size() && s_[pos_] == c) {
      ++pos_;
      return true;
    }
    return false;
  }

  NodePtr sum() {
    NodePtr lhs = product();
    while (true) {
      if (accept('+')) {
        lhs = make(Node::Kind::Add, lhs, product());
      } else if (accept('-')) {
        lhs = make(Node::Kind::Sub, lhs, product());
      } else {
        return lhs;
      }
    }
  }

  NodePtr product() {
    NodePtr lhs = unary();
    while (true) {
      if (accept('*')) {
        lhs = make(Node::Kind::Mul, lhs, unary());
      } else if (accept('/')) {
        lhs = make(Node::Kind::Div, lhs, unary());
      } else {
        return lhs;
      }
    }
  }

  NodePtr unary() {
    if (accept('-')) return make(Node::Kind::Neg, unary());
    if (accept('+')) return unary();
    return power();
  }

  NodePtr power() {
    NodePtr base = primary();
    if (accept('^')) return make(Node::Kind::Pow, base, unary());
    return base;
  }

  NodePtr primary() {
    skip();
    if (pos_ >= s_.size()) fail("unexpected end of expression");
    const char c = s_[pos_];
    if (accept('(')) {
      NodePtr inner = sum();
      if (!accept(')')) fail("expected ')'");
      return inner;
    }
    if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') return number();
    if (std::isalpha(static_cast<unsigned char>(c))) return identifier();
    fail("unexpected '" + std::string(1, c) + "'");
  }

  NodePtr number() {
    const char* begin = s_.c_str() + pos_;
    char* end = nullptr;
    const double v = std::strtod(begin, &end);
    if (end == begin) fail("malformed number");
    pos_ += static_cast<std::size_t>(end - begin);
    auto n = std::make_shared<Node>();
    n->kind = Node::Kind::Number;
    n->value = v;
    return n;
  }

  NodePtr identifier() {
    const std::size_t start = pos_;
    while (pos_ < s_.size() && (std::isalnum(static_cast<unsigned char>(s_[pos_])) || s_[pos_] == '_')) ++pos_;
    const std::string name = s_.substr(start, pos_ - start);
    if (name == "x") return make(Node::Kind::X);
    if (name == "y") return make(Node::Kind::Y);
    if (name == "pi" || name == "e") {
      auto n = std::make_shared<Node>();
      n->kind = Node::Kind::Number;
      n->value = name == "pi" ? std::numbers::pi : std::numbers::e;
      return n;
    }
    for (const Function& f : kFunctions) {
      if (name == f.name) {
        if (!accept('(')) fail("expected '(' after " + name);
        auto n = std::make_shared<Node>();
        n->kind = Node::Kind::Call;
        n->fn = f.fn;
        n->lhs = sum();
        if (!accept(')')) fail("expected ')'");
        return n;
      }
    }
    pos_ = start;
    fail("unknown identifier '" + name + "'");
  }

  const std::string& s_;
  const std::string& field_;
  std::size_t pos_ = 0;
};

double eval(const Node& n, double x, double y) {
  switch (n.kind) {
    case Node::Kind::Number: return n.value;
    case Node::Kind::X: return x;
    case Node::Kind::Y: return y;
    case Node::Kind::Neg: return -eval(*n.lhs, x, y);
    case Node::Kind::Add: return eval(*n.lhs, x, y) + eval(*n.rhs, x, y);
    case Node::Kind::Sub: return eval(*n.lhs, x, y) - eval(*n.rhs, x, y);
    case Node::Kind::Mul: return eval(*n.lhs, x, y) * eval(*n.rhs, x, y);
    case Node::Kind::Div: return eval(*n.lhs, x, y) / eval(*n.rhs, x, y);
    case Node::Kind::Pow: return std::pow(eval(*n.lhs, x, y), eval(*n.rhs, x, y));
    case Node::Kind::Call: return n.fn(eval(*n.lhs, x, y));
  }
  return 0.0;
}

}  // namespace

Expression Expression::parse(const std::string& text, const std::string& field) {
  Expression e;
  e.root_ = Parser(text, field).parse();
  e.text_ = text;
  return e;
}

double Expression::operator()(double x, double y) const { return eval(*root_, x, y); }

}  // namespace crossdiff::cli
