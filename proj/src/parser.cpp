#include "rula/parser.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cstdlib>
#include <map>
#include <optional>
#include <set>
#include <sstream>

namespace rula {

using namespace ast;

namespace {

const std::set<std::string_view> kReserved = {
    "let", "import", "if",   "else", "for", "in",   "match", "ruleset", "rule",
    "cond", "act",   "set",  "get",  "true", "false", "promote", "otherwise", "as",
};

bool is_alpha(char c) { return std::isalpha(static_cast<unsigned char>(c)) != 0; }
bool is_digit(char c) { return std::isdigit(static_cast<unsigned char>(c)) != 0; }
bool is_word(char c) { return is_alpha(c) || is_digit(c) || c == '_'; }
bool is_hex(char c) { return std::isxdigit(static_cast<unsigned char>(c)) != 0; }

std::string quoted(std::string_view token) { return "\"" + std::string(token) + "\""; }

Expr make_expr(Expr::Node node, Span span) {
  Expr e{std::move(node), span, std::nullopt};
  return e;
}

int precedence(char op) {
  switch (op) {
    case '^': return 3;
    case '*':
    case '/':
    case '%': return 2;
    default: return 1;
  }
}

class Parser {
 public:
  Parser(std::string_view src, std::string file) : src_(src), file_(std::move(file)) {
    line_starts_.push_back(0);
    for (std::size_t i = 0; i < src_.size(); ++i) {
      if (src_[i] == '\n') line_starts_.push_back(i + 1);
    }
  }

  Program program() {
    Program prog;
    prog.file = file_;
    skip_ws();
    prog.has_repeaters_decl = repeaters_decl();
    while (auto imp = import_stmt()) prog.imports.push_back(std::move(*imp));
    while (auto rule = rule_stmt()) prog.rules.push_back(std::move(*rule));
    prog.ruleset = ruleset_stmt();
    skip_ws();
    if (pos_ != src_.size()) {
      fail(pos_, "EOI");
      throw ParseFailure(error());
    }
    return prog;
  }

 private:
  std::string_view src_;
  std::string file_;
  std::size_t pos_ = 0;
  std::size_t furthest_ = 0;
  std::set<std::string> expected_;
  std::vector<std::size_t> line_starts_;

  struct Memo {
    std::optional<Expr> result;
    std::size_t end = 0;
  };
  std::map<std::size_t, Memo> expr_memo_, term_memo_, comp_memo_;

  // ---------------------------------------------------------------- basics

  ParseError error() const {
    ParseError err;
    std::size_t end = furthest_;
    while (end < src_.size() && src_[end] != '\n' && end - furthest_ < 16) ++end;
    err.span = span(furthest_, std::max(end, furthest_));
    err.expected.assign(expected_.begin(), expected_.end());
    if (furthest_ >= src_.size()) {
      err.found = "end of input";
    } else {
      err.found = quoted(src_.substr(furthest_, end - furthest_));
    }
    return err;
  }

  Span span(std::size_t start, std::size_t end) const {
    auto it = std::upper_bound(line_starts_.begin(), line_starts_.end(), start);
    const std::size_t line = static_cast<std::size_t>(it - line_starts_.begin());
    const std::size_t col = start - line_starts_[line - 1] + 1;
    return Span{start, end, static_cast<int>(line), static_cast<int>(col)};
  }

  Span span_from(std::size_t start) const { return span(start, std::max(start, last_end_)); }

  std::size_t last_end_ = 0;  // end of the last consumed token

  void fail(std::size_t at, std::string what) {
    if (at > furthest_) {
      furthest_ = at;
      expected_.clear();
    }
    if (at == furthest_) expected_.insert(std::move(what));
  }

  void skip_ws() {
    for (;;) {
      if (pos_ >= src_.size()) return;
      char c = src_[pos_];
      if (c == ' ' || c == '\n' || c == '\t' || c == '\r') {
        ++pos_;
      } else if (src_.compare(pos_, 2, "//") == 0) {
        while (pos_ < src_.size() && src_[pos_] != '\n') ++pos_;
      } else if (src_.compare(pos_, 2, "/*") == 0) {
        auto close = src_.find("*/", pos_ + 2);
        pos_ = close == std::string_view::npos ? src_.size() : close + 2;
      } else {
        return;
      }
    }
  }

  std::size_t start() {
    skip_ws();
    return pos_;
  }

  bool at(std::string_view token) const { return src_.compare(pos_, token.size(), token) == 0; }

  void advance(std::size_t n) {
    pos_ += n;
    last_end_ = pos_;
  }

  bool lit(std::string_view token) {
    skip_ws();
    if (at(token)) {
      advance(token.size());
      return true;
    }
    fail(pos_, quoted(token));
    return false;
  }

  // "=" that is not "==" or "=>"
  bool assign() {
    skip_ws();
    if (at("=") && !at("==") && !at("=>")) {
      advance(1);
      return true;
    }
    fail(pos_, quoted("="));
    return false;
  }

  bool kw(std::string_view word, std::string_view label = {}) {
    skip_ws();
    if (at(word) && (pos_ + word.size() >= src_.size() || !is_word(src_[pos_ + word.size()]))) {
      advance(word.size());
      return true;
    }
    fail(pos_, label.empty() ? quoted(word) : std::string(label));
    return false;
  }

  std::optional<std::string> ident() {
    skip_ws();
    std::size_t p = pos_;
    if (p < src_.size() && is_alpha(src_[p])) {
      while (p < src_.size() && is_word(src_[p])) ++p;
      std::string_view word = src_.substr(pos_, p - pos_);
      if (!kReserved.count(word)) {
        advance(p - pos_);
        return std::string(word);
      }
    }
    fail(pos_, "ident");
    return std::nullopt;
  }

  // Collapses failures that made no progress past the start into one label.
  template <typename F>
  auto labeled(std::string_view label, F&& f) -> decltype(f()) {
    const std::size_t s = start();
    const std::size_t saved_furthest = furthest_;
    auto saved_expected = expected_;
    auto result = f();
    if (!result && furthest_ == s) {
      if (saved_furthest == s) {
        expected_ = std::move(saved_expected);
      } else {
        expected_.clear();
      }
      fail(s, std::string(label));
    }
    return result;
  }

  template <typename F>
  auto attempt(F&& f) -> decltype(f()) {
    const std::size_t save = pos_;
    const std::size_t save_end = last_end_;
    auto result = f();
    if (!result) {
      pos_ = save;
      last_end_ = save_end;
    }
    return result;
  }

  template <typename F>
  std::optional<Expr> memoized(std::map<std::size_t, Memo>& memo, F&& f) {
    const std::size_t s = start();
    if (auto it = memo.find(s); it != memo.end()) {
      if (it->second.result) {
        pos_ = it->second.end;
        last_end_ = pos_;
      }
      return it->second.result;
    }
    auto result = attempt(f);
    memo[s] = Memo{result, pos_};
    return result;
  }

  // ---------------------------------------------------------------- types

  std::optional<Type> typedef_lit() {
    return labeled("typedef_lit", [&]() -> std::optional<Type> {
      return attempt([&]() -> std::optional<Type> {
        skip_ws();
        if (kw("vec")) {
          if (!lit("[")) return std::nullopt;
          auto inner = typedef_lit();
          if (!inner || !lit("]")) return std::nullopt;
          return Type::vec(std::move(*inner));
        }
        static const std::pair<std::string_view, Type::Kind> kTypes[] = {
            {"int", Type::Kind::Int},         {"u_int", Type::Kind::UInt},
            {"float", Type::Kind::Float},     {"bool", Type::Kind::Bool},
            {"str", Type::Kind::Str},         {"Qubit", Type::Kind::Qubit},
            {"Repeater", Type::Kind::Repeater}, {"Message", Type::Kind::Message},
            {"Result", Type::Kind::Result},
        };
        for (const auto& [name, kind] : kTypes) {
          if (kw(name)) return Type::of(kind);
        }
        return std::nullopt;
      });
    });
  }

  std::optional<Binding> ident_typed() {
    return attempt([&]() -> std::optional<Binding> {
      const std::size_t s = start();
      auto name = ident();
      if (!name || !lit(":")) return std::nullopt;
      auto type = typedef_lit();
      if (!type) return std::nullopt;
      return Binding{*name, *type, span_from(s)};
    });
  }

  // ---------------------------------------------------------------- literals

  std::optional<Expr> literal_expr() {
    return labeled("literal", [&]() -> std::optional<Expr> {
      const std::size_t s = start();
      if (kw("true")) return make_expr(Literal{Literal::Kind::Bool, "true", 0, 0.0, true}, span_from(s));
      if (kw("false")) return make_expr(Literal{Literal::Kind::Bool, "false", 0, 0.0, false}, span_from(s));
      if (auto str = string_lit()) return str;
      if (auto id = attempt([&] { return ident(); })) {
        Literal l;
        l.kind = Literal::Kind::Ident;
        l.text = *id;
        return make_expr(std::move(l), span_from(s));
      }
      if (auto n = attempt([&] { return number(); })) return n;
      if (auto n = attempt([&] { return radix_lit("0b", 2, Literal::Kind::Binary); })) return n;
      if (auto n = attempt([&] { return radix_lit("0x", 16, Literal::Kind::Hex); })) return n;
      if (auto n = attempt([&] { return radix_lit("0u", 16, Literal::Kind::Unicode); })) return n;
      return std::nullopt;
    });
  }

  std::optional<Expr> string_lit() {
    const std::size_t s = start();
    if (!at("\"")) {
      fail(pos_, "string");
      return std::nullopt;
    }
    std::size_t p = pos_ + 1;
    while (p < src_.size() && src_[p] != '"' && src_[p] != '\\') ++p;
    if (p >= src_.size() || src_[p] != '"') {
      fail(p, quoted("\""));
      return std::nullopt;
    }
    Literal l;
    l.kind = Literal::Kind::Str;
    l.text = std::string(src_.substr(pos_ + 1, p - pos_ - 1));
    advance(p + 1 - pos_);
    return make_expr(std::move(l), span_from(s));
  }

  std::optional<Expr> number() {
    const std::size_t s = start();
    std::size_t p = pos_;
    bool negative = false;
    if (p < src_.size() && (src_[p] == '+' || src_[p] == '-')) {
      negative = src_[p] == '-';
      ++p;
    }
    if (p < src_.size() && is_alpha(src_[p])) {
      std::size_t q = p;
      while (q < src_.size() && is_word(src_[q])) ++q;
      std::string_view word = src_.substr(p, q - p);
      if (kReserved.count(word)) {
        fail(p, "number");
        return std::nullopt;
      }
      Literal l;
      l.kind = Literal::Kind::Ident;
      l.text = std::string(word);
      l.negated = negative;
      advance(q - pos_);
      return make_expr(std::move(l), span_from(s));
    }
    if (p >= src_.size() || !is_digit(src_[p])) {
      fail(p, "number");
      return std::nullopt;
    }
    const std::size_t digits = p;
    if (src_[p] == '0') {
      ++p;
    } else {
      while (p < src_.size() && is_digit(src_[p])) ++p;
    }
    bool is_float = false;
    if (p + 1 < src_.size() && src_[p] == '.' && is_digit(src_[p + 1])) {
      p += 1;
      while (p < src_.size() && is_digit(src_[p])) ++p;
      is_float = true;
    }
    if (p < src_.size() && src_[p] == 'e') {
      std::size_t q = p + 1;
      if (q < src_.size() && (src_[q] == '+' || src_[q] == '-')) ++q;
      if (q < src_.size() && is_digit(src_[q])) {
        while (q < src_.size() && is_digit(src_[q])) ++q;
        p = q;
        is_float = true;
      }
    }
    if (p < src_.size() && is_alpha(src_[p])) {
      fail(p, "number");
      return std::nullopt;
    }
    Literal l;
    l.text = std::string(src_.substr(pos_, p - pos_));
    if (is_float) {
      l.kind = Literal::Kind::Float;
      l.float_value = std::strtod(std::string(src_.substr(digits, p - digits)).c_str(), nullptr);
      if (negative) l.float_value = -l.float_value;
    } else {
      l.kind = Literal::Kind::Int;
      std::string text = (negative ? "-" : "") + std::string(src_.substr(digits, p - digits));
      auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), l.int_value);
      if (ec != std::errc()) {
        fail(s, "int within 64-bit range");
        return std::nullopt;
      }
    }
    advance(p - pos_);
    return make_expr(std::move(l), span_from(s));
  }

  std::optional<Expr> radix_lit(std::string_view prefix, int base, Literal::Kind kind) {
    const std::size_t s = start();
    if (!at(prefix)) {
      fail(pos_, quoted(prefix));
      return std::nullopt;
    }
    std::size_t p = pos_ + prefix.size();
    const std::size_t digits = p;
    while (p < src_.size() && (base == 2 ? (src_[p] == '0' || src_[p] == '1') : is_hex(src_[p]))) ++p;
    Literal l;
    l.kind = kind;
    l.text = std::string(src_.substr(pos_, p - pos_));
    std::string_view body = src_.substr(digits, p - digits);
    if (!body.empty()) {
      std::uint64_t value = 0;
      auto [ptr, ec] = std::from_chars(body.data(), body.data() + body.size(), value, base);
      if (ec != std::errc() || value > static_cast<std::uint64_t>(INT64_MAX)) {
        fail(s, "int within 64-bit range");
        return std::nullopt;
      }
      l.int_value = static_cast<std::int64_t>(value);
    }
    advance(p - pos_);
    return make_expr(std::move(l), span_from(s));
  }

  // ---------------------------------------------------------------- expressions

  std::optional<Expr> expr() {
    return labeled("expr", [&] {
      return memoized(expr_memo_, [&]() -> std::optional<Expr> {
        if (auto e = attempt([&] { return rule_call_expr(); })) return e;
        if (auto e = comp_expr()) return e;
        if (auto e = term_expr()) return e;
        if (auto e = attempt([&] { return get_expr(); })) return e;
        if (auto e = attempt([&] { return vector_expr(); })) return e;
        if (auto e = attempt([&] { return tuple_expr(); })) return e;
        if (auto e = attempt([&] { return fn_call_expr(); })) return e;
        if (auto e = attempt([&] { return variable_call_expr(); })) return e;
        return attempt([&] { return literal_expr(); });
      });
    });
  }

  std::vector<Expr> call_args(bool& ok) {
    std::vector<Expr> args;
    ok = false;
    if (!lit("(")) return args;
    if (auto first = fn_call_arg()) args.push_back(std::move(*first));
    for (;;) {
      auto more = attempt([&]() -> std::optional<Expr> {
        if (!lit(",")) return std::nullopt;
        return fn_call_arg();
      });
      if (!more) break;
      args.push_back(std::move(*more));
    }
    ok = lit(")");
    return args;
  }

  std::optional<Expr> fn_call_arg() {
    if (auto e = term_expr()) return e;
    if (auto e = attempt([&] { return fn_call_expr(); })) return e;
    if (auto e = attempt([&] { return variable_call_expr(); })) return e;
    return attempt([&] { return literal_expr(); });
  }

  std::optional<Expr> rule_call_expr() {
    const std::size_t s = start();
    auto name = ident();
    if (!name || !lit("<")) return std::nullopt;
    if (!repeaters_token() || !lit("(")) return std::nullopt;
    std::optional<Expr> index = term_expr();
    if (!index) index = attempt([&] { return literal_expr(); });
    if (!index || !lit(")") || !lit(">")) return std::nullopt;
    bool ok = false;
    auto args = call_args(ok);
    if (!ok) return std::nullopt;
    RuleCall call;
    call.name = *name;
    call.repeater_index.push_back(std::move(*index));
    call.args = std::move(args);
    return make_expr(std::move(call), span_from(s));
  }

  bool repeaters_token() {
    skip_ws();
    if (at("#repeaters") && (pos_ + 10 >= src_.size() || !is_word(src_[pos_ + 10]))) {
      advance(10);
      return true;
    }
    fail(pos_, quoted("#repeaters"));
    return false;
  }

  std::optional<Expr> get_expr() {
    const std::size_t s = start();
    if (!kw("get", "get_expr")) return std::nullopt;
    auto name = ident();
    if (!name) return std::nullopt;
    return make_expr(Get{*name}, span_from(s));
  }

  std::optional<CompOp> comp_op() {
    skip_ws();
    static const std::pair<std::string_view, CompOp> kOps[] = {
        {"<=", CompOp::Leq}, {">=", CompOp::Geq}, {"==", CompOp::Eq},
        {"!=", CompOp::Neq}, {"<", CompOp::Lt},   {">", CompOp::Gt},
    };
    for (const auto& [text, op] : kOps) {
      if (at(text)) {
        advance(text.size());
        return op;
      }
    }
    fail(pos_, "comp_op");
    return std::nullopt;
  }

  std::optional<Expr> comparable() {
    if (auto e = attempt([&] { return get_expr(); })) return e;
    if (auto e = term_expr()) return e;
    if (auto e = attempt([&] { return variable_call_expr(); })) return e;
    if (auto e = attempt([&] { return fn_call_expr(); })) return e;
    return attempt([&] { return literal_expr(); });
  }

  std::optional<Expr> comp_expr() {
    return memoized(comp_memo_, [&]() -> std::optional<Expr> {
      const std::size_t s = start();
      auto lhs = comparable();
      if (!lhs) return std::nullopt;
      auto op = comp_op();
      if (!op) return std::nullopt;
      auto rhs = comparable();
      if (!rhs) return std::nullopt;
      return make_expr(Comp{std::move(*lhs), *op, std::move(*rhs)}, span_from(s));
    });
  }

  std::optional<char> arith_op() {
    skip_ws();
    if (pos_ < src_.size()) {
      char c = src_[pos_];
      if (c == '-' && at("->")) {
        fail(pos_, "op");
        return std::nullopt;
      }
      if (c == '+' || c == '-' || c == '*' || c == '/' || c == '%' || c == '^') {
        advance(1);
        return c;
      }
    }
    fail(pos_, "op");
    return std::nullopt;
  }

  std::optional<Expr> inner_term() {
    if (auto e = attempt([&] { return get_expr(); })) return e;
    if (auto e = attempt([&] { return variable_call_expr(); })) return e;
    if (auto e = attempt([&] { return fn_call_expr(); })) return e;
    if (auto e = attempt([&] { return literal_expr(); })) return e;
    return attempt([&]() -> std::optional<Expr> {
      if (!lit("(")) return std::nullopt;
      auto inner = term_expr();
      if (!inner || !lit(")")) return std::nullopt;
      return inner;
    });
  }

  std::optional<Expr> term_expr() {
    return memoized(term_memo_, [&]() -> std::optional<Expr> {
      const std::size_t s = start();
      std::vector<Expr> operands;
      std::vector<char> ops;
      auto first = inner_term();
      if (!first) return std::nullopt;
      operands.push_back(std::move(*first));
      for (;;) {
        auto next = attempt([&]() -> std::optional<std::pair<char, Expr>> {
          auto op = arith_op();
          if (!op) return std::nullopt;
          auto rhs = inner_term();
          if (!rhs) return std::nullopt;
          return std::make_pair(*op, std::move(*rhs));
        });
        if (!next) break;
        ops.push_back(next->first);
        operands.push_back(std::move(next->second));
      }
      if (ops.empty()) return std::nullopt;
      std::size_t index = 0;
      Expr tree = build_binary(operands, ops, index, 0);
      tree.span = span_from(s);
      return tree;
    });
  }

  // Precedence climbing over a flat operand/operator list.
  Expr build_binary(std::vector<Expr>& operands, const std::vector<char>& ops, std::size_t& index,
                    int min_prec) {
    Expr lhs = std::move(operands[index]);
    while (index < ops.size() && precedence(ops[index]) >= min_prec) {
      const char op = ops[index];
      const int prec = precedence(op);
      ++index;
      Expr rhs = build_binary(operands, ops, index, op == '^' ? prec : prec + 1);
      Span sp = lhs.span;
      sp.byte_end = rhs.span.byte_end;
      lhs = make_expr(Binary{op, std::move(lhs), std::move(rhs)}, sp);
    }
    return lhs;
  }

  std::optional<Expr> vector_expr() {
    const std::size_t s = start();
    if (!lit("[")) return std::nullopt;
    Vector v;
    if (auto first = attempt([&] { return literal_expr(); })) v.elems.push_back(std::move(*first));
    for (;;) {
      auto more = attempt([&]() -> std::optional<Expr> {
        if (!lit(",")) return std::nullopt;
        return literal_expr();
      });
      if (!more) break;
      v.elems.push_back(std::move(*more));
    }
    attempt([&] { return lit(","); });
    if (!lit("]")) return std::nullopt;
    return make_expr(std::move(v), span_from(s));
  }

  std::optional<Expr> tuple_expr() {
    const std::size_t s = start();
    if (!lit("(")) return std::nullopt;
    Tuple t;
    if (auto first = expr()) t.elems.push_back(std::move(*first));
    for (;;) {
      auto more = attempt([&]() -> std::optional<Expr> {
        if (!lit(",")) return std::nullopt;
        return expr();
      });
      if (!more) break;
      t.elems.push_back(std::move(*more));
    }
    const bool trailing = attempt([&] { return lit(","); });
    if (!lit(")")) return std::nullopt;
    if (t.elems.size() == 1 && !trailing) {
      Expr inner = std::move(t.elems.front());
      return inner;
    }
    return make_expr(std::move(t), span_from(s));
  }

  std::optional<Expr> fn_call_expr() {
    const std::size_t s = start();
    auto name = ident();
    if (!name) return std::nullopt;
    bool ok = false;
    auto args = call_args(ok);
    if (!ok) return std::nullopt;
    return make_expr(FnCall{*name, std::move(args)}, span_from(s));
  }

  std::optional<Callable> callable() {
    const std::size_t s = start();
    if (auto fn = attempt([&] { return fn_call_expr(); })) {
      auto& call = std::get<FnCall>(fn->node);
      return Callable{Callable::Kind::Fn, call.name, std::move(call.args), span_from(s)};
    }
    if (auto rep = attempt([&]() -> std::optional<std::string> {
          if (!lit("#")) return std::nullopt;
          if (pos_ < src_.size() && !is_alpha(src_[pos_])) {
            fail(pos_, "ident");
            return std::nullopt;
          }
          return ident();
        })) {
      return Callable{Callable::Kind::RepeaterIdent, *rep, {}, span_from(s)};
    }
    if (auto id = attempt([&] { return ident(); })) {
      return Callable{Callable::Kind::Ident, *id, {}, span_from(s)};
    }
    return std::nullopt;
  }

  std::optional<Expr> variable_call_expr() {
    const std::size_t s = start();
    VariableCall vc;
    auto first = callable();
    if (!first) return std::nullopt;
    vc.chain.push_back(std::move(*first));
    for (;;) {
      auto next = attempt([&]() -> std::optional<Callable> {
        skip_ws();
        if (at("..")) {
          fail(pos_, quoted("."));
          return std::nullopt;
        }
        if (!lit(".")) return std::nullopt;
        return callable();
      });
      if (!next) break;
      vc.chain.push_back(std::move(*next));
    }
    if (vc.chain.size() < 2) return std::nullopt;
    return make_expr(std::move(vc), span_from(s));
  }

  // ---------------------------------------------------------------- statements

  Block stmt_list() {
    Block block;
    while (auto s = stmt()) block.push_back(std::move(*s));
    return block;
  }

  std::optional<Block> braced_block() {
    return attempt([&]() -> std::optional<Block> {
      if (!lit("{")) return std::nullopt;
      Block body = stmt_list();
      if (!lit("}")) return std::nullopt;
      return body;
    });
  }

  std::optional<Stmt> stmt() {
    return labeled("stmt", [&]() -> std::optional<Stmt> {
      const std::size_t s = start();
      auto wrap = [&](auto node) -> std::optional<Stmt> {
        return Stmt{std::move(node), span_from(s)};
      };
      if (auto n = attempt([&] { return let_stmt(); })) return wrap(std::move(*n));
      if (auto n = attempt([&] { return if_stmt(); })) return wrap(std::move(*n));
      if (auto n = attempt([&] { return for_stmt(); })) return wrap(std::move(*n));
      if (auto n = attempt([&] { return match_stmt(); })) return wrap(std::move(*n));
      if (auto n = attempt([&] { return promote_stmt(); })) return wrap(std::move(*n));
      if (auto n = attempt([&] { return set_stmt(); })) return wrap(std::move(*n));
      if (auto n = attempt([&] { return send_stmt(); })) return wrap(std::move(*n));
      if (auto e = expr()) return wrap(ExprStmt{std::move(*e)});
      return std::nullopt;
    });
  }

  std::optional<Let> let_stmt() {
    if (!kw("let", "let_stmt")) return std::nullopt;
    Let let{{}, make_expr(Literal{}, Span{})};
    if (auto single = ident_typed()) {
      let.bindings.push_back(std::move(*single));
    } else {
      if (!lit("(")) return std::nullopt;
      auto first = ident_typed();
      if (!first) return std::nullopt;
      let.bindings.push_back(std::move(*first));
      for (;;) {
        auto more = attempt([&]() -> std::optional<Binding> {
          if (!lit(",")) return std::nullopt;
          return ident_typed();
        });
        if (!more) break;
        let.bindings.push_back(std::move(*more));
      }
      if (!lit(")")) return std::nullopt;
    }
    if (!assign()) return std::nullopt;
    auto value = expr();
    if (!value) return std::nullopt;
    let.value = std::move(*value);
    return let;
  }

  std::optional<Expr> if_block() {
    return labeled("if_block", [&]() -> std::optional<Expr> {
      if (auto e = comp_expr()) return e;
      if (auto e = attempt([&] { return get_expr(); })) return e;
      return attempt([&] { return literal_expr(); });
    });
  }

  std::optional<If> if_stmt() {
    if (!kw("if", "if_stmt") || !lit("(")) return std::nullopt;
    auto cond = if_block();
    if (!cond || !lit(")")) return std::nullopt;
    auto then = braced_block();
    if (!then) return std::nullopt;
    If node{std::move(*cond), std::move(*then), {}, std::nullopt};
    for (;;) {
      auto elif = attempt([&]() -> std::optional<ElseIf> {
        const std::size_t s = start();
        if (!kw("else") || !kw("if") || !lit("(")) return std::nullopt;
        auto c = if_block();
        if (!c || !lit(")")) return std::nullopt;
        auto body = braced_block();
        if (!body) return std::nullopt;
        return ElseIf{std::move(*c), std::move(*body), span_from(s)};
      });
      if (!elif) break;
      node.elifs.push_back(std::move(*elif));
    }
    auto else_body = attempt([&]() -> std::optional<Block> {
      if (!kw("else")) return std::nullopt;
      return braced_block();
    });
    if (else_body) node.else_ = std::move(*else_body);
    return node;
  }

  std::optional<For> for_stmt() {
    if (!kw("for", "for_stmt")) return std::nullopt;
    For node{{}, make_expr(Literal{}, Span{}), {}};
    auto loop_var = [&]() -> std::optional<std::string> {
      auto name = ident();
      if (!name) return std::nullopt;
      attempt([&]() -> std::optional<Type> {
        if (!lit(":")) return std::nullopt;
        return typedef_lit();
      });
      return name;
    };
    if (auto single = attempt(loop_var)) {
      node.vars.push_back(*single);
    } else {
      if (!lit("(")) return std::nullopt;
      auto first = loop_var();
      if (!first) return std::nullopt;
      node.vars.push_back(*first);
      for (;;) {
        auto more = attempt([&]() -> std::optional<std::string> {
          if (!lit(",")) return std::nullopt;
          return loop_var();
        });
        if (!more) break;
        node.vars.push_back(*more);
      }
      if (!lit(")")) return std::nullopt;
    }
    if (!kw("in")) return std::nullopt;
    auto series = attempt([&]() -> std::optional<Series> {
      auto lo = number();
      if (!lo) return std::nullopt;
      const auto& l = std::get<Literal>(lo->node);
      if (l.kind != Literal::Kind::Int) {
        fail(lo->span.byte_start, "int");
        return std::nullopt;
      }
      if (!lit("..")) return std::nullopt;
      auto hi = expr();
      if (!hi) return std::nullopt;
      return Series{l.int_value, std::move(*hi)};
    });
    if (series) {
      node.generator = std::move(*series);
    } else {
      auto gen = expr();
      if (!gen) return std::nullopt;
      node.generator = std::move(*gen);
    }
    auto body = braced_block();
    if (!body) return std::nullopt;
    node.body = std::move(*body);
    return node;
  }

  std::optional<Block> match_action() {
    return attempt([&]() -> std::optional<Block> {
      if (!lit("{")) return std::nullopt;
      Block body;
      if (auto first = stmt()) {
        body.push_back(std::move(*first));
        for (;;) {
          auto more = attempt([&]() -> std::optional<Stmt> {
            if (!lit(",")) return std::nullopt;
            return stmt();
          });
          if (!more) break;
          body.push_back(std::move(*more));
        }
        attempt([&] { return lit(","); });
      }
      if (!lit("}")) return std::nullopt;
      return body;
    });
  }

  std::optional<Match> match_stmt() {
    if (!kw("match", "match_stmt")) return std::nullopt;
    auto scrutinee = expr();
    if (!scrutinee || !lit("{")) return std::nullopt;
    Match node{std::move(*scrutinee), {}, std::nullopt};
    for (;;) {
      auto arm = attempt([&]() -> std::optional<MatchArm> {
        const std::size_t s = start();
        auto cond = literal_expr();
        if (!cond || !lit("=>")) return std::nullopt;
        auto body = match_action();
        if (!body) return std::nullopt;
        MatchArm a{std::move(*cond), std::move(*body), span_from(s)};
        attempt([&] { return lit(","); });
        return a;
      });
      if (!arm) break;
      node.arms.push_back(std::move(*arm));
    }
    auto otherwise = attempt([&]() -> std::optional<Block> {
      if (!kw("otherwise") || !lit("=>")) return std::nullopt;
      auto body = match_action();
      if (body) attempt([&] { return lit(","); });
      return body;
    });
    if (otherwise) node.otherwise = std::move(*otherwise);
    if (!lit("}")) return std::nullopt;
    return node;
  }

  std::optional<Expr> promotable() {
    if (auto e = comp_expr()) return e;
    if (auto e = term_expr()) return e;
    if (auto e = attempt([&] { return vector_expr(); })) return e;
    if (auto e = attempt([&] { return tuple_expr(); })) return e;
    if (auto e = attempt([&] { return variable_call_expr(); })) return e;
    return attempt([&] { return literal_expr(); });
  }

  std::optional<Promote> promote_stmt() {
    if (!kw("promote", "promote_stmt")) return std::nullopt;
    Promote node;
    auto first = promotable();
    if (!first) return std::nullopt;
    node.values.push_back(std::move(*first));
    for (;;) {
      auto more = attempt([&]() -> std::optional<Expr> {
        if (!lit(",")) return std::nullopt;
        return promotable();
      });
      if (!more) break;
      node.values.push_back(std::move(*more));
    }
    return node;
  }

  std::optional<Set> set_stmt() {
    if (!kw("set", "set_stmt")) return std::nullopt;
    auto name = ident();
    if (!name) return std::nullopt;
    Set node{*name, std::nullopt};
    auto alias = attempt([&]() -> std::optional<std::string> {
      if (!kw("as")) return std::nullopt;
      return ident();
    });
    if (alias) node.alias = *alias;
    return node;
  }

  std::optional<Send> send_stmt() {
    auto call = fn_call_expr();
    if (!call || !lit("->")) return std::nullopt;
    auto dest = expr();
    if (!dest) return std::nullopt;
    return Send{std::move(*call), std::move(*dest)};
  }

  // ---------------------------------------------------------------- top level

  bool repeaters_decl() {
    return attempt([&] {
      return repeaters_token() && lit(":") && kw("vec") && lit("[") && kw("Repeater") && lit("]");
    });
  }

  std::optional<ImportStmt> import_stmt() {
    return attempt([&]() -> std::optional<ImportStmt> {
      const std::size_t s = start();
      if (!kw("import", "import_stmt")) return std::nullopt;
      ImportStmt node;
      node.is_rule_import = attempt([&] { return lit("(rule)"); });
      auto first = ident();
      if (!first) return std::nullopt;
      node.path.push_back(*first);
      for (;;) {
        auto seg = attempt([&]() -> std::optional<std::string> {
          if (!lit("::")) return std::nullopt;
          return ident();
        });
        if (!seg) break;
        node.path.push_back(*seg);
      }
      auto terminals = attempt([&]() -> std::optional<std::vector<std::string>> {
        if (!lit("::") || !lit("{")) return std::nullopt;
        std::vector<std::string> names;
        auto one = [&]() -> std::optional<std::string> {
          auto name = ident();
          if (!name) return std::nullopt;
          attempt([&]() -> std::optional<Type> {
            if (!lit(":")) return std::nullopt;
            return typedef_lit();
          });
          return name;
        };
        auto head = one();
        if (!head) return std::nullopt;
        names.push_back(*head);
        for (;;) {
          auto more = attempt([&]() -> std::optional<std::string> {
            if (!lit(",")) return std::nullopt;
            return one();
          });
          if (!more) break;
          names.push_back(*more);
        }
        if (!lit("}")) return std::nullopt;
        return names;
      });
      if (terminals) node.terminal_list = std::move(*terminals);
      skip_ws();
      if (at("::")) {
        fail(pos_, "ident");
        return std::nullopt;
      }
      node.span = span_from(s);
      return node;
    });
  }

  std::optional<std::vector<ReturnType>> ret_type_annotation() {
    auto one = [&]() -> std::optional<ReturnType> {
      auto type = typedef_lit();
      if (!type) return std::nullopt;
      const bool maybe = attempt([&] { return lit("?"); });
      return ReturnType{*type, maybe};
    };
    if (auto single = attempt(one)) return std::vector<ReturnType>{*single};
    return attempt([&]() -> std::optional<std::vector<ReturnType>> {
      if (!lit("(")) return std::nullopt;
      std::vector<ReturnType> out;
      auto first = one();
      if (!first) return std::nullopt;
      out.push_back(*first);
      for (;;) {
        auto more = attempt([&]() -> std::optional<ReturnType> {
          if (!lit(",")) return std::nullopt;
          return one();
        });
        if (!more) break;
        out.push_back(*more);
      }
      if (!lit(")")) return std::nullopt;
      return out;
    });
  }

  std::optional<Param> param() {
    const std::size_t s = start();
    if (auto typed = ident_typed()) return Param{typed->name, typed->type, typed->span};
    auto name = ident();
    if (!name) return std::nullopt;
    return Param{*name, std::nullopt, span_from(s)};
  }

  std::optional<CondClause> cond_clause() {
    return labeled("cond_clause", [&]() -> std::optional<CondClause> {
      const std::size_t s = start();
      if (auto res = attempt([&]() -> std::optional<CondClause> {
            if (!lit("@")) return std::nullopt;
            auto name = ident();
            if (!name || !lit(":")) return std::nullopt;
            auto call = fn_call_expr();
            if (!call) return std::nullopt;
            return CondClause{*name, std::move(*call), span_from(s)};
          })) {
        return res;
      }
      if (auto call = attempt([&] { return variable_call_expr(); })) {
        return CondClause{std::nullopt, std::move(*call), span_from(s)};
      }
      if (auto call = attempt([&] { return fn_call_expr(); })) {
        return CondClause{std::nullopt, std::move(*call), span_from(s)};
      }
      return std::nullopt;
    });
  }

  std::optional<RuleStmt> rule_stmt() {
    return attempt([&]() -> std::optional<RuleStmt> {
      const std::size_t s = start();
      if (!kw("rule", "rule_stmt")) return std::nullopt;
      RuleStmt rule;
      rule.file = file_;
      auto name = ident();
      if (!name || !lit("<") || !lit("#")) return std::nullopt;
      rule.name = *name;
      auto rep = ident();
      if (!rep || !lit(">") || !lit("(")) return std::nullopt;
      rule.repeater_ident = *rep;
      if (auto first = attempt([&] { return param(); })) {
        rule.params.push_back(std::move(*first));
        for (;;) {
          auto more = attempt([&]() -> std::optional<Param> {
            if (!lit(",")) return std::nullopt;
            return param();
          });
          if (!more) break;
          rule.params.push_back(std::move(*more));
        }
      }
      if (!lit(")")) return std::nullopt;
      skip_ws();
      if (at(":->") || at("->")) {
        rule.legacy_arrow = !at(":->");
        advance(rule.legacy_arrow ? 2 : 3);
        auto ret = ret_type_annotation();
        if (!ret) return std::nullopt;
        rule.return_types = std::move(*ret);
      } else {
        fail(pos_, quoted(":->"));
      }
      if (!lit("{")) return std::nullopt;
      for (;;) {
        const std::size_t ls = start();
        auto let = attempt([&] { return let_stmt(); });
        if (!let) break;
        rule.lets.push_back(std::move(*let));
        rule.let_spans.push_back(span_from(ls));
      }
      const std::size_t cs = start();
      if (!kw("cond", "cond_expr") || !lit("{")) return std::nullopt;
      while (auto clause = cond_clause()) rule.cond.clauses.push_back(std::move(*clause));
      if (!lit("}")) return std::nullopt;
      rule.cond.span = span_from(cs);
      if (!lit("=>")) return std::nullopt;
      const std::size_t as = start();
      if (!kw("act", "act_expr") || !lit("{")) return std::nullopt;
      rule.act.body = stmt_list();
      if (!lit("}")) return std::nullopt;
      rule.act.span = span_from(as);
      rule.trailing = stmt_list();
      if (!lit("}")) return std::nullopt;
      rule.span = span_from(s);
      return rule;
    });
  }

  std::optional<RuleSetStmt> ruleset_stmt() {
    return attempt([&]() -> std::optional<RuleSetStmt> {
      const std::size_t s = start();
      if (!kw("ruleset", "ruleset_stmt")) return std::nullopt;
      auto name = ident();
      if (!name) return std::nullopt;
      auto body = braced_block();
      if (!body) return std::nullopt;
      return RuleSetStmt{*name, std::move(*body), span_from(s)};
    });
  }
};

std::string display_name(const std::string& expected) {
  if (expected == "EOI") return "end of input";
  if (!expected.empty() && expected.front() == '"') return expected;
  for (std::string_view suffix : {"_expr", "_stmt"}) {
    if (expected.size() > suffix.size() &&
        expected.compare(expected.size() - suffix.size(), suffix.size(), suffix) == 0) {
      return expected.substr(0, expected.size() - suffix.size());
    }
  }
  return expected;
}

}  // namespace

std::string ast::to_string(const ast::Type& type) {
  switch (type.kind) {
    case Type::Kind::Int: return "int";
    case Type::Kind::UInt: return "u_int";
    case Type::Kind::Float: return "float";
    case Type::Kind::Bool: return "bool";
    case Type::Kind::Str: return "str";
    case Type::Kind::Vec: return "vec[" + (type.inner ? to_string(*type.inner) : std::string("?")) + "]";
    case Type::Kind::Qubit: return "Qubit";
    case Type::Kind::Repeater: return "Repeater";
    case Type::Kind::Message: return "Message";
    case Type::Kind::Result: return "Result";
  }
  return "?";
}

std::string_view ast::to_string(CompOp op) {
  switch (op) {
    case CompOp::Lt: return "<";
    case CompOp::Gt: return ">";
    case CompOp::Leq: return "<=";
    case CompOp::Geq: return ">=";
    case CompOp::Eq: return "==";
    case CompOp::Neq: return "!=";
  }
  return "?";
}

ast::Program parse_program(std::string_view source, std::string file) {
  Parser parser(source, std::move(file));
  return parser.program();
}

ast::Span locate(std::string_view source, std::size_t byte_start, std::size_t byte_end) {
  byte_start = std::min(byte_start, source.size());
  int line = 1;
  std::size_t line_start = 0;
  for (std::size_t i = 0; i < byte_start; ++i) {
    if (source[i] == '\n') {
      ++line;
      line_start = i + 1;
    }
  }
  return ast::Span{byte_start, std::max(byte_start, byte_end), line,
                   static_cast<int>(byte_start - line_start + 1)};
}

std::string render_error(const ParseError& err, std::string_view source) {
  std::ostringstream out;
  out << "error: parse failure at " << err.span.line << ":" << err.span.column << "\n";
  const std::size_t start = std::min(err.span.byte_start, source.size());
  const std::size_t line_start = start - (static_cast<std::size_t>(err.span.column) - 1);
  std::size_t line_end = source.find('\n', line_start);
  if (line_end == std::string_view::npos) line_end = source.size();
  out << "  " << source.substr(line_start, line_end - line_start) << "\n";
  const std::size_t underline_end = std::min(std::max(err.span.byte_end, start + 1), std::max(line_end, start + 1));
  out << "  " << std::string(start - line_start, ' ') << std::string(underline_end - start, '^') << "\n";
  out << "found: " << err.found << "\n";
  out << "expected: ";
  std::vector<std::string> names;
  for (const auto& e : err.expected) names.push_back(display_name(e));
  std::sort(names.begin(), names.end());
  names.erase(std::unique(names.begin(), names.end()), names.end());
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (i) out << ", ";
    out << names[i];
  }
  out << "\n";
  return out.str();
}

}  // namespace rula
