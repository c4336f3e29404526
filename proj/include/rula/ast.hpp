#pragma once

// Spanned syntax tree for RuLa programs.

#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <variant>
#include <vector>

namespace rula::ast {

struct Span {
  std::size_t byte_start = 0;
  std::size_t byte_end = 0;
  int line = 1;    // 1-based
  int column = 1;  // 1-based
  bool operator==(const Span&) const = default;
};

// Owning pointer with value semantics, for recursive nodes.
template <typename T>
class Box {
 public:
  Box(T value) : ptr_(std::make_unique<T>(std::move(value))) {}
  Box(const Box& other) : ptr_(std::make_unique<T>(*other.ptr_)) {}
  Box(Box&&) noexcept = default;
  Box& operator=(const Box& other) {
    if (this != &other) ptr_ = std::make_unique<T>(*other.ptr_);
    return *this;
  }
  Box& operator=(Box&&) noexcept = default;
  ~Box() = default;

  T& operator*() { return *ptr_; }
  const T& operator*() const { return *ptr_; }
  T* operator->() { return ptr_.get(); }
  const T* operator->() const { return ptr_.get(); }

 private:
  std::unique_ptr<T> ptr_;
};

struct Type {
  enum class Kind { Int, UInt, Float, Bool, Str, Vec, Qubit, Repeater, Message, Result };
  Kind kind = Kind::Int;
  std::shared_ptr<const Type> inner;  // only for Vec

  static Type of(Kind k) { return Type{k, nullptr}; }
  static Type vec(Type inner) { return Type{Kind::Vec, std::make_shared<const Type>(std::move(inner))}; }
  bool operator==(const Type& o) const {
    if (kind != o.kind) return false;
    if (kind != Kind::Vec) return true;
    return inner && o.inner && *inner == *o.inner;
  }
};
std::string to_string(const Type& type);

enum class CompOp { Lt, Gt, Leq, Geq, Eq, Neq };
std::string_view to_string(CompOp op);

struct Expr;

struct Literal {
  enum class Kind { Int, Float, Bool, Str, Binary, Hex, Unicode, Ident };
  Kind kind = Kind::Int;
  std::string text;  // source text (string contents without quotes, identifier name)
  std::int64_t int_value = 0;
  double float_value = 0.0;
  bool bool_value = false;
  bool negated = false;  // "-name" form of an identifier number
};

struct FnCall {
  std::string name;
  std::vector<Expr> args;
};

struct RuleCall {
  std::string name;
  std::vector<Expr> repeater_index;  // exactly one element: the #repeaters(...) argument
  std::vector<Expr> args;
};

struct Get {
  std::string name;
};

struct Comp {
  Box<Expr> lhs;
  CompOp op;
  Box<Expr> rhs;
};

// Arithmetic; precedence already resolved into a binary tree.
struct Binary {
  char op;  // one of + - * / % ^
  Box<Expr> lhs;
  Box<Expr> rhs;
};

struct Vector {
  std::vector<Expr> elems;
};

struct Tuple {
  std::vector<Expr> elems;
};

struct Callable {
  enum class Kind { Fn, RepeaterIdent, Ident };
  Kind kind = Kind::Ident;
  std::string name;
  std::vector<Expr> args;  // Fn only
  Span span;
};

// a.b.c(...) chains, e.g. #rep.hop(-1), message.result
struct VariableCall {
  std::vector<Callable> chain;
};

struct Expr {
  using Node = std::variant<Literal, FnCall, RuleCall, Get, Comp, Binary, Vector, Tuple, VariableCall>;
  Node node;
  Span span;
  std::optional<Type> type;  // filled by the analyzer
};

struct Stmt;
using Block = std::vector<Stmt>;

struct Binding {
  std::string name;
  Type type;
  Span span;
};

struct Let {
  std::vector<Binding> bindings;
  Expr value;
};

struct ElseIf {
  Expr cond;
  Block body;
  Span span;
};

struct If {
  Expr cond;
  Block then;
  std::vector<ElseIf> elifs;
  std::optional<Block> else_;
};

struct Series {
  std::int64_t start = 0;
  Expr end;
};

struct For {
  std::vector<std::string> vars;
  std::variant<Series, Expr> generator;
  Block body;
};

struct MatchArm {
  Expr condition;  // literal
  Block body;
  Span span;
};

struct Match {
  Expr scrutinee;
  std::vector<MatchArm> arms;
  std::optional<Block> otherwise;
};

struct Promote {
  std::vector<Expr> values;
};

struct Set {
  std::string name;
  std::optional<std::string> alias;
};

struct Send {
  Expr call;  // FnCall node
  Expr destination;
};

struct ExprStmt {
  Expr expr;
};

struct Stmt {
  using Node = std::variant<Let, If, For, Match, Promote, Set, Send, ExprStmt>;
  Node node;
  Span span;
};

struct Param {
  std::string name;
  std::optional<Type> type;
  Span span;
};

struct ReturnType {
  Type type;
  bool maybe = false;
};

struct CondClause {
  std::optional<std::string> capture;
  Expr call;
  Span span;
};

struct CondExpr {
  std::vector<CondClause> clauses;
  Span span;
};

struct ActExpr {
  Block body;
  Span span;
};

struct RuleStmt {
  std::string name;
  std::string repeater_ident;  // without '#'
  std::vector<Param> params;
  std::optional<std::vector<ReturnType>> return_types;
  bool legacy_arrow = false;  // "->" instead of ":->"
  std::vector<Let> lets;
  std::vector<Span> let_spans;
  CondExpr cond;
  ActExpr act;
  Block trailing;
  Span span;
  std::string file;  // source the rule was parsed from
};

struct ImportStmt {
  bool is_rule_import = false;
  std::vector<std::string> path;
  std::optional<std::vector<std::string>> terminal_list;
  Span span;
};

struct RuleSetStmt {
  std::string name;
  Block body;
  Span span;
};

struct Program {
  bool has_repeaters_decl = false;
  std::vector<ImportStmt> imports;
  std::vector<RuleStmt> rules;
  std::optional<RuleSetStmt> ruleset;
  std::string file;
};

}  // namespace rula::ast
