#include "rula/analyzer.hpp"

#include <algorithm>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

#include "rula/parser.hpp"

namespace rula {

using namespace ast;

bool has_errors(const std::vector<Diagnostic>& diags) { return error_count(diags) > 0; }

std::size_t error_count(const std::vector<Diagnostic>& diags) {
  return static_cast<std::size_t>(std::count_if(diags.begin(), diags.end(), [](const Diagnostic& d) {
    return d.severity == Diagnostic::Severity::Error;
  }));
}

std::string render_diagnostic(const Diagnostic& diag) {
  std::ostringstream out;
  out << (diag.file.empty() ? "<input>" : diag.file) << ":" << diag.span.line << ":" << diag.span.column
      << ": " << (diag.severity == Diagnostic::Severity::Error ? "error" : "warning") << "[" << diag.code
      << "]: " << diag.message;
  return out.str();
}

namespace {

const std::set<std::string> kBuiltins = {
    "res", "recv", "cmp", "check_timer", "set_timer", "free", "measure", "x",        "y",
    "z",   "h",    "cx",  "cz",          "bsm",       "update", "meas",  "transfer",
};
const std::set<std::string> kSendable = {"update", "free", "meas", "transfer"};
const std::set<std::string> kCondFunctions = {"res", "recv", "cmp", "check_timer"};

// Internal type lattice; a superset of the annotation types.
struct Ty {
  enum class K { Int, UInt, Float, Bool, Str, Vec, Qubit, Repeater, Message, Result, Gate, Unit, Repeaters, Tuple, Unknown };
  K k = K::Unknown;
  std::vector<Ty> elems;

  static Ty of(K k) { return Ty{k, {}}; }
  bool is(K kind) const { return k == kind; }
  bool unknown() const { return k == K::Unknown; }
  bool numeric() const { return k == K::Int || k == K::UInt || k == K::Float; }
  bool operator==(const Ty&) const = default;
};

Ty from_ast(const Type& t) {
  switch (t.kind) {
    case Type::Kind::Int: return Ty::of(Ty::K::Int);
    case Type::Kind::UInt: return Ty::of(Ty::K::UInt);
    case Type::Kind::Float: return Ty::of(Ty::K::Float);
    case Type::Kind::Bool: return Ty::of(Ty::K::Bool);
    case Type::Kind::Str: return Ty::of(Ty::K::Str);
    case Type::Kind::Vec: return Ty{Ty::K::Vec, {t.inner ? from_ast(*t.inner) : Ty{}}};
    case Type::Kind::Qubit: return Ty::of(Ty::K::Qubit);
    case Type::Kind::Repeater: return Ty::of(Ty::K::Repeater);
    case Type::Kind::Message: return Ty::of(Ty::K::Message);
    case Type::Kind::Result: return Ty::of(Ty::K::Result);
  }
  return Ty{};
}

std::optional<Type> to_ast(const Ty& t) {
  switch (t.k) {
    case Ty::K::Int: return Type::of(Type::Kind::Int);
    case Ty::K::UInt: return Type::of(Type::Kind::UInt);
    case Ty::K::Float: return Type::of(Type::Kind::Float);
    case Ty::K::Bool: return Type::of(Type::Kind::Bool);
    case Ty::K::Str: return Type::of(Type::Kind::Str);
    case Ty::K::Qubit: return Type::of(Type::Kind::Qubit);
    case Ty::K::Repeater: return Type::of(Type::Kind::Repeater);
    case Ty::K::Message: return Type::of(Type::Kind::Message);
    case Ty::K::Result: return Type::of(Type::Kind::Result);
    case Ty::K::Repeaters: return Type::vec(Type::of(Type::Kind::Repeater));
    case Ty::K::Vec:
      if (!t.elems.empty()) {
        if (auto inner = to_ast(t.elems.front())) return Type::vec(*inner);
      }
      return std::nullopt;
    default: return std::nullopt;
  }
}

std::string name_of(const Ty& t) {
  switch (t.k) {
    case Ty::K::Int: return "int";
    case Ty::K::UInt: return "u_int";
    case Ty::K::Float: return "float";
    case Ty::K::Bool: return "bool";
    case Ty::K::Str: return "str";
    case Ty::K::Vec: return "vec[" + (t.elems.empty() ? std::string("?") : name_of(t.elems.front())) + "]";
    case Ty::K::Qubit: return "Qubit";
    case Ty::K::Repeater: return "Repeater";
    case Ty::K::Message: return "Message";
    case Ty::K::Result: return "Result";
    case Ty::K::Gate: return "gate";
    case Ty::K::Unit: return "()";
    case Ty::K::Repeaters: return "vec[Repeater]";
    case Ty::K::Tuple: {
      std::string s = "(";
      for (std::size_t i = 0; i < t.elems.size(); ++i) s += (i ? ", " : "") + name_of(t.elems[i]);
      return s + ")";
    }
    case Ty::K::Unknown: return "?";
  }
  return "?";
}

// Integer literals default to u_int (when non-negative) or float.
bool assignable(const Ty& from, const Ty& to, const Expr* source) {
  if (from.unknown() || to.unknown()) return true;
  if (from == to) return true;
  if (to.is(Ty::K::Vec) && from.is(Ty::K::Repeaters)) return !to.elems.empty() && to.elems[0].is(Ty::K::Repeater);
  if (to.is(Ty::K::Vec) && from.is(Ty::K::Vec) && !to.elems.empty() && !from.elems.empty()) {
    return assignable(from.elems[0], to.elems[0], nullptr);
  }
  if (source && from.is(Ty::K::Int)) {
    if (const auto* lit = std::get_if<Literal>(&source->node)) {
      const bool int_lit = lit->kind == Literal::Kind::Int || lit->kind == Literal::Kind::Binary ||
                           lit->kind == Literal::Kind::Hex;
      if (int_lit && to.is(Ty::K::UInt)) return lit->int_value >= 0;
      if (int_lit && to.is(Ty::K::Float)) return true;
    }
  }
  if (from.is(Ty::K::Tuple) && to.is(Ty::K::Tuple) && from.elems.size() == to.elems.size()) {
    for (std::size_t i = 0; i < from.elems.size(); ++i) {
      if (!assignable(from.elems[i], to.elems[i], nullptr)) return false;
    }
    return true;
  }
  return false;
}

enum class Where { Ruleset, RuleLet, Cond, Act };

enum class SymKind { Let, Param, Capture, LoopVar, RulesetVar };

struct Symbol {
  Ty ty;
  Span origin;
  SymKind kind = SymKind::Let;
  bool constant = false;  // compile-time integer in ruleset scope
};

class Analyzer {
 public:
  explicit Analyzer(Program& program) : prog_(program) {}

  std::vector<Diagnostic> diags;
  std::map<std::string, RuleSignature> signatures;

  void run() {
    for (auto& rule : prog_.rules) {
      if (rules_.count(rule.name)) {
        error("duplicate-rule", rule.span, "duplicate rule name " + rule.name, rule.file);
        continue;
      }
      rules_[rule.name] = &rule;
      RuleSignature sig{rule.name, rule.repeater_ident, {}, rule.return_types};
      for (const auto& p : rule.params) sig.params.push_back(p.type);
      signatures[rule.name] = std::move(sig);
    }
    for (const auto& imp : prog_.imports) {
      if (imp.path.empty() || imp.path.front() != "std") continue;
      std::vector<std::string> names;
      if (imp.terminal_list) {
        names = *imp.terminal_list;
      } else if (imp.path.size() > 2) {
        names.push_back(imp.path.back());
      }
      for (const auto& n : names) {
        if (!kBuiltins.count(n)) error("unknown-builtin", imp.span, "unknown built-in " + n, prog_.file);
      }
    }
    for (auto& rule : prog_.rules) {
      if (rules_[rule.name] == &rule) check_rule(rule);
    }
    if (prog_.ruleset) check_ruleset(*prog_.ruleset);
  }

 private:
  Program& prog_;
  std::map<std::string, RuleStmt*> rules_;
  std::vector<std::map<std::string, Symbol>> scopes_;
  RuleStmt* rule_ = nullptr;
  Where where_ = Where::Ruleset;
  bool in_send_ = false;

  std::string file() const { return rule_ ? rule_->file : prog_.file; }

  void error(std::string code, const Span& span, std::string message, std::string file = {}) {
    diags.push_back({Diagnostic::Severity::Error, std::move(code), span, std::move(message),
                     file.empty() ? this->file() : std::move(file)});
  }
  void warning(std::string code, const Span& span, std::string message) {
    diags.push_back({Diagnostic::Severity::Warning, std::move(code), span, std::move(message), file()});
  }

  void push() { scopes_.emplace_back(); }
  void pop() { scopes_.pop_back(); }
  void declare(const std::string& name, Symbol sym) { scopes_.back()[name] = std::move(sym); }
  const Symbol* lookup(const std::string& name) const {
    for (auto it = scopes_.rbegin(); it != scopes_.rend(); ++it) {
      auto found = it->find(name);
      if (found != it->end()) return &found->second;
    }
    return nullptr;
  }

  Ty annotate(Expr& e, Ty t) {
    e.type = to_ast(t);
    return t;
  }

  // ------------------------------------------------------------------ rules

  void check_rule(RuleStmt& rule) {
    rule_ = &rule;
    scopes_.clear();
    push();
    if (rule.legacy_arrow) {
      warning("legacy-arrow", rule.span, "use \":->\" for the return annotation of rule " + rule.name);
    }
    for (const auto& p : rule.params) {
      declare(p.name, Symbol{p.type ? from_ast(*p.type) : Ty{}, p.span, SymKind::Param});
    }
    where_ = Where::RuleLet;
    for (std::size_t i = 0; i < rule.lets.size(); ++i) check_let(rule.lets[i], rule.let_spans[i]);

    where_ = Where::Cond;
    for (auto& clause : rule.cond.clauses) check_cond_clause(clause);

    where_ = Where::Act;
    push();
    for (auto& s : rule.act.body) check_stmt(s);
    for (auto& s : rule.trailing) check_stmt(s);
    pop();

    if (rule.return_types) {
      bool all_maybe = std::all_of(rule.return_types->begin(), rule.return_types->end(),
                                   [](const ReturnType& r) { return r.maybe; });
      bool any_maybe = std::any_of(rule.return_types->begin(), rule.return_types->end(),
                                   [](const ReturnType& r) { return r.maybe; });
      Block whole = rule.act.body;
      whole.insert(whole.end(), rule.trailing.begin(), rule.trailing.end());
      if (!any_maybe && !all_paths_promote(whole)) {
        error("promote-path", rule.span,
              "rule " + rule.name + " must promote on every path (annotate with ? to allow paths without promote)");
      } else if (all_maybe) {
        // any arm may free instead
      }
    }
    pop();
    rule_ = nullptr;
  }

  static bool all_paths_promote(const Block& block) {
    for (const auto& s : block) {
      if (std::holds_alternative<Promote>(s.node)) return true;
      if (const auto* m = std::get_if<Match>(&s.node)) {
        bool all = !m->arms.empty() || m->otherwise.has_value();
        for (const auto& arm : m->arms) all = all && all_paths_promote(arm.body);
        if (m->otherwise) all = all && all_paths_promote(*m->otherwise);
        if (all) return true;
      }
      if (const auto* i = std::get_if<If>(&s.node)) {
        bool all = i->else_.has_value() && all_paths_promote(i->then) && all_paths_promote(*i->else_);
        for (const auto& e : i->elifs) all = all && all_paths_promote(e.body);
        if (all) return true;
      }
    }
    return false;
  }

  void check_cond_clause(CondClause& clause) {
    auto* call = std::get_if<FnCall>(&clause.call.node);
    if (!call || !kCondFunctions.count(call->name)) {
      const std::string name = call ? call->name : std::string("expression");
      error("cond-clause", clause.span,
            "unknown condition function " + name + " (expected res, recv, cmp or check_timer)");
      return;
    }
    Ty t = type_of(clause.call);
    if (clause.capture) declare(*clause.capture, Symbol{t, clause.span, SymKind::Capture});
  }

  // ------------------------------------------------------------------ statements

  void check_let(Let& let, const Span& span) {
    const Expr& value_ref = let.value;
    Ty value = type_of(let.value);
    bool constant = where_ == Where::Ruleset && is_const(let.value);
    if (let.bindings.size() == 1) {
      const Ty declared = from_ast(let.bindings[0].type);
      if (!assignable(value, declared, &value_ref)) {
        error("type-mismatch", let.bindings[0].span,
              "cannot bind " + name_of(value) + " to " + let.bindings[0].name + ": " + name_of(declared));
      }
      declare(let.bindings[0].name, Symbol{declared, let.bindings[0].span,
                                           where_ == Where::Ruleset ? SymKind::RulesetVar : SymKind::Let,
                                           constant});
    } else {
      if (!value.unknown() && (!value.is(Ty::K::Tuple) || value.elems.size() != let.bindings.size())) {
        error("type-mismatch", span,
              "cannot destructure " + name_of(value) + " into " + std::to_string(let.bindings.size()) + " bindings");
      }
      for (std::size_t i = 0; i < let.bindings.size(); ++i) {
        const Ty declared = from_ast(let.bindings[i].type);
        if (value.is(Ty::K::Tuple) && i < value.elems.size() && !assignable(value.elems[i], declared, nullptr)) {
          error("type-mismatch", let.bindings[i].span,
                "cannot bind " + name_of(value.elems[i]) + " to " + let.bindings[i].name + ": " + name_of(declared));
        }
        declare(let.bindings[i].name, Symbol{declared, let.bindings[i].span,
                                             where_ == Where::Ruleset ? SymKind::RulesetVar : SymKind::Let, false});
      }
    }
  }

  void check_block(Block& block) {
    push();
    for (auto& s : block) check_stmt(s);
    pop();
  }

  void check_stmt(Stmt& stmt) {
    std::visit([&](auto& node) { check_node(node, stmt.span); }, stmt.node);
  }

  void check_node(Let& let, const Span& span) { check_let(let, span); }

  void check_node(If& node, const Span& span) {
    if (where_ == Where::Ruleset) {
      check_ruleset_condition(node.cond, span);
      for (auto& e : node.elifs) check_ruleset_condition(e.cond, e.span);
    } else {
      check_condition(node.cond);
      for (auto& e : node.elifs) check_condition(e.cond);
    }
    check_block(node.then);
    for (auto& e : node.elifs) check_block(e.body);
    if (node.else_) check_block(*node.else_);
  }

  void check_condition(Expr& cond) {
    Ty t = type_of(cond);
    if (!t.unknown() && !t.is(Ty::K::Bool)) {
      error("type-mismatch", cond.span, "if condition must be bool, found " + name_of(t));
    }
  }

  void check_ruleset_condition(Expr& cond, const Span&) {
    if (!is_const(cond)) {
      error("ruleset-if", cond.span, "ruleset-level condition must be compile-time evaluable");
      return;
    }
    check_condition(cond);
  }

  void check_node(For& node, const Span&) {
    Ty elem = Ty::of(Ty::K::Int);
    if (auto* series = std::get_if<Series>(&node.generator)) {
      Ty end = type_of(series->end);
      if (!end.unknown() && !end.is(Ty::K::Int) && !end.is(Ty::K::UInt)) {
        error("type-mismatch", series->end.span, "range bound must be an integer, found " + name_of(end));
      }
      if (!is_const(series->end)) {
        error("const-range", series->end.span, "range bound must be compile-time evaluable");
      }
    } else {
      auto& gen = std::get<Expr>(node.generator);
      Ty g = type_of(gen);
      if (g.is(Ty::K::Vec) && !g.elems.empty()) {
        elem = g.elems[0];
      } else if (g.is(Ty::K::Repeaters)) {
        elem = Ty::of(Ty::K::Repeater);
      } else if (!g.unknown()) {
        error("type-mismatch", gen.span, "for generator must be a range or vector, found " + name_of(g));
        elem = Ty{};
      }
    }
    push();
    for (const auto& v : node.vars) {
      declare(v, Symbol{node.vars.size() == 1 ? elem : Ty{}, Span{}, SymKind::LoopVar,
                        elem.is(Ty::K::Int)});
    }
    for (auto& s : node.body) check_stmt(s);
    pop();
  }

  void check_node(Match& node, const Span& span) {
    if (where_ != Where::Act) {
      error("context", span, "match is only valid inside an act block");
      return;
    }
    Ty t = type_of(node.scrutinee);
    if (!t.unknown() && !t.is(Ty::K::Result)) {
      error("match-scrutinee", node.scrutinee.span, "match scrutinee must be of type Result, found " + name_of(t));
    }
    for (auto& arm : node.arms) {
      const auto* lit = std::get_if<Literal>(&arm.condition.node);
      if (!lit || lit->kind != Literal::Kind::Str) {
        error("match-arm", arm.condition.span, "match arm condition must be a string literal");
      } else if (lit->text.find_first_not_of("01") != std::string::npos) {
        error("match-arm", arm.condition.span, "match arm \"" + lit->text + "\" is not a bit string");
      }
      annotate(arm.condition, Ty::of(Ty::K::Str));
      check_block(arm.body);
    }
    if (node.otherwise) check_block(*node.otherwise);
  }

  void check_node(Promote& node, const Span& span) {
    if (where_ != Where::Act) {
      error("context", span, "promote is only valid inside an act block");
      return;
    }
    if (!rule_->return_types) {
      error("promote-annotation", span, "promote requires return type annotation");
      return;
    }
    const auto& rets = *rule_->return_types;
    if (node.values.size() != rets.size()) {
      error("promote-arity", span,
            "promote of " + std::to_string(node.values.size()) + " value(s) does not match the " +
                std::to_string(rets.size()) + " return type(s) of rule " + rule_->name);
      return;
    }
    for (std::size_t i = 0; i < rets.size(); ++i) {
      Ty t = type_of(node.values[i]);
      if (!assignable(t, from_ast(rets[i].type), &node.values[i])) {
        error("promote-type", node.values[i].span,
              "promoted value has type " + name_of(t) + ", expected " + to_string(rets[i].type));
      }
    }
  }

  void check_node(Set& node, const Span& span) {
    if (where_ != Where::Act) {
      error("context", span, "set is only valid inside an act block");
      return;
    }
    const Symbol* sym = lookup(node.name);
    if (!sym) {
      error("unknown-ident", span, "unknown identifier " + node.name);
    } else if (!sym->ty.unknown() && !sym->ty.is(Ty::K::Result)) {
      error("type-mismatch", span, "set requires a Result value, " + node.name + " is " + name_of(sym->ty));
    }
  }

  void check_node(Send& node, const Span& span) {
    if (where_ != Where::Act) {
      error("context", span, "send is only valid inside an act block");
      return;
    }
    auto* call = std::get_if<FnCall>(&node.call.node);
    if (!call || !kSendable.count(call->name)) {
      error("send-whitelist", node.call.span, "send requires one of update/free/meas/transfer");
      return;
    }
    in_send_ = true;
    type_of(node.call);
    in_send_ = false;
    Ty dest = type_of(node.destination);
    if (!dest.unknown() && !dest.is(Ty::K::Repeater)) {
      error("send-dest", node.destination.span, "send destination must be a Repeater, found " + name_of(dest));
    }
  }

  void check_node(ExprStmt& node, const Span& span) {
    if (where_ == Where::Ruleset && !std::holds_alternative<RuleCall>(node.expr.node)) {
      error("context", span, "only rule calls, let, for and if are allowed in a ruleset body");
      return;
    }
    type_of(node.expr);
  }

  // ------------------------------------------------------------------ ruleset

  void check_ruleset(RuleSetStmt& rs) {
    rule_ = nullptr;
    where_ = Where::Ruleset;
    scopes_.clear();
    push();
    for (auto& s : rs.body) check_stmt(s);
    pop();
  }

  bool is_const(const Expr& e) const {
    return std::visit(
        [&](const auto& node) -> bool {
          using T = std::decay_t<decltype(node)>;
          if constexpr (std::is_same_v<T, Literal>) {
            if (node.kind == Literal::Kind::Ident) {
              const Symbol* sym = lookup(node.text);
              return sym && sym->constant;
            }
            return node.kind == Literal::Kind::Int || node.kind == Literal::Kind::Bool ||
                   node.kind == Literal::Kind::Binary || node.kind == Literal::Kind::Hex;
          } else if constexpr (std::is_same_v<T, Binary>) {
            return is_const(*node.lhs) && is_const(*node.rhs);
          } else if constexpr (std::is_same_v<T, Comp>) {
            return is_const(*node.lhs) && is_const(*node.rhs);
          } else if constexpr (std::is_same_v<T, VariableCall>) {
            return node.chain.size() == 2 && node.chain[0].kind == Callable::Kind::RepeaterIdent &&
                   node.chain[0].name == "repeaters" && node.chain[1].kind == Callable::Kind::Fn &&
                   node.chain[1].name == "len" && node.chain[1].args.empty();
          } else if constexpr (std::is_same_v<T, Tuple>) {
            return node.elems.size() == 1 && is_const(node.elems[0]);
          } else {
            return false;
          }
        },
        e.node);
  }

  // ------------------------------------------------------------------ expressions

  Ty type_of(Expr& e) {
    Ty t = std::visit([&](auto& node) { return type_node(node, e); }, e.node);
    return annotate(e, t);
  }

  Ty type_node(Literal& lit, Expr& e) {
    switch (lit.kind) {
      case Literal::Kind::Int:
      case Literal::Kind::Binary:
      case Literal::Kind::Hex: return Ty::of(Ty::K::Int);
      case Literal::Kind::Float: return Ty::of(Ty::K::Float);
      case Literal::Kind::Bool: return Ty::of(Ty::K::Bool);
      case Literal::Kind::Str: return Ty::of(Ty::K::Str);
      case Literal::Kind::Unicode:
        error("unsupported-literal", e.span, "unsupported literal " + lit.text);
        return Ty{};
      case Literal::Kind::Ident: {
        const Symbol* sym = lookup(lit.text);
        if (!sym) {
          error("unknown-ident", e.span, "unknown identifier " + lit.text);
          return Ty{};
        }
        if (lit.negated && !sym->ty.unknown() && !sym->ty.numeric()) {
          error("type-mismatch", e.span, "cannot negate " + name_of(sym->ty));
          return Ty{};
        }
        return sym->ty;
      }
    }
    return Ty{};
  }

  Ty type_node(Get& get, Expr& e) {
    if (where_ == Where::Cond || where_ == Where::RuleLet) {
      // allowed: cmp(get x, ...)
    }
    (void)get;
    (void)e;
    return Ty::of(Ty::K::Result);
  }

  Ty type_node(Comp& comp, Expr& e) {
    Ty l = type_of(*comp.lhs);
    Ty r = type_of(*comp.rhs);
    if (l.unknown() || r.unknown()) return Ty::of(Ty::K::Bool);
    const bool ordering = comp.op != CompOp::Eq && comp.op != CompOp::Neq;
    auto str_lit = [](const Expr& x) {
      const auto* lit = std::get_if<Literal>(&x.node);
      return lit && lit->kind == Literal::Kind::Str;
    };
    bool ok = false;
    if (l.numeric() && r.numeric()) {
      ok = true;
    } else if (ordering) {
      ok = false;
    } else if (l.is(Ty::K::Result) && (r.is(Ty::K::Result) || str_lit(*comp.rhs))) {
      ok = true;
    } else if (r.is(Ty::K::Result) && str_lit(*comp.lhs)) {
      ok = true;
    } else if ((l.is(Ty::K::Str) && r.is(Ty::K::Str)) || (l.is(Ty::K::Bool) && r.is(Ty::K::Bool))) {
      ok = true;
    }
    if (!ok) {
      error("type-mismatch", e.span,
            "cannot compare " + name_of(l) + " " + std::string(to_string(comp.op)) + " " + name_of(r));
    }
    return Ty::of(Ty::K::Bool);
  }

  Ty type_node(Binary& bin, Expr& e) {
    Ty l = type_of(*bin.lhs);
    Ty r = type_of(*bin.rhs);
    if (l.unknown() || r.unknown()) return Ty{};
    if (!l.numeric() || !r.numeric()) {
      error("type-mismatch", e.span,
            "operator " + std::string(1, bin.op) + " requires numeric operands, found " + name_of(l) + " and " +
                name_of(r));
      return Ty{};
    }
    if (l.is(Ty::K::Float) || r.is(Ty::K::Float)) return Ty::of(Ty::K::Float);
    if (l.is(Ty::K::UInt) && r.is(Ty::K::UInt)) return Ty::of(Ty::K::UInt);
    return Ty::of(Ty::K::Int);
  }

  Ty type_node(Vector& v, Expr& e) {
    Ty elem;
    for (auto& x : v.elems) {
      Ty t = type_of(x);
      if (elem.unknown()) {
        elem = t;
      } else if (!t.unknown() && !(t == elem)) {
        error("type-mismatch", e.span, "vector elements must share a type");
        return Ty{};
      }
    }
    return Ty{Ty::K::Vec, {elem}};
  }

  Ty type_node(Tuple& t, Expr&) {
    Ty out{Ty::K::Tuple, {}};
    for (auto& x : t.elems) out.elems.push_back(type_of(x));
    return out;
  }

  Ty type_node(RuleCall& call, Expr& e) {
    if (where_ != Where::Ruleset) {
      error("context", e.span, "rule calls are only valid in a ruleset body");
      return Ty{};
    }
    for (auto& idx : call.repeater_index) {
      Ty t = type_of(idx);
      if (!t.unknown() && !t.is(Ty::K::Int) && !t.is(Ty::K::UInt)) {
        error("type-mismatch", idx.span, "repeater index must be an integer, found " + name_of(t));
      }
    }
    auto it = rules_.find(call.name);
    if (it == rules_.end()) {
      error("unknown-rule", e.span, "unknown rule " + call.name);
      for (auto& a : call.args) type_of(a);
      return Ty{};
    }
    const RuleStmt& rule = *it->second;
    if (call.args.size() != rule.params.size()) {
      error("rule-call", e.span,
            "rule " + call.name + " takes " + std::to_string(rule.params.size()) + " argument(s), " +
                std::to_string(call.args.size()) + " given");
    }
    for (std::size_t i = 0; i < call.args.size(); ++i) {
      Ty t = type_of(call.args[i]);
      if (i < rule.params.size() && rule.params[i].type &&
          !assignable(t, from_ast(*rule.params[i].type), &call.args[i])) {
        error("rule-call", call.args[i].span,
              "argument " + std::to_string(i + 1) + " of rule " + call.name + " expects " +
                  to_string(*rule.params[i].type) + ", found " + name_of(t));
      }
    }
    if (!rule.return_types || rule.return_types->empty()) return Ty::of(Ty::K::Unit);
    if (rule.return_types->size() == 1) return from_ast(rule.return_types->front().type);
    Ty out{Ty::K::Tuple, {}};
    for (const auto& r : *rule.return_types) out.elems.push_back(from_ast(r.type));
    return out;
  }

  bool expect_args(FnCall& call, const Expr& e, const std::vector<Ty>& params) {
    if (call.args.size() != params.size()) {
      error("arity", e.span,
            call.name + " takes " + std::to_string(params.size()) + " argument(s), " +
                std::to_string(call.args.size()) + " given");
      for (auto& a : call.args) type_of(a);
      return false;
    }
    bool ok = true;
    for (std::size_t i = 0; i < params.size(); ++i) {
      Ty t = type_of(call.args[i]);
      if (!assignable(t, params[i], &call.args[i])) {
        error("type-mismatch", call.args[i].span,
              "argument " + std::to_string(i + 1) + " of " + call.name + " expects " + name_of(params[i]) +
                  ", found " + name_of(t));
        ok = false;
      }
    }
    return ok;
  }

  Ty type_node(FnCall& call, Expr& e) {
    using K = Ty::K;
    const std::string& n = call.name;
    if (!kBuiltins.count(n)) {
      error("unknown-function", e.span, "unknown function " + n);
      for (auto& a : call.args) type_of(a);
      return Ty{};
    }
    if (kCondFunctions.count(n) && where_ != Where::Cond) {
      error("context", e.span, n + " is only valid in a cond block");
      return Ty{};
    }
    if ((n == "update" || n == "meas" || n == "transfer") && !in_send_) {
      error("context", e.span, n + " is only valid in a send statement");
      return Ty{};
    }
    if (n == "res") {
      if (call.args.size() == 3) {
        expect_args(call, e, {Ty::of(K::UInt), Ty::of(K::Float), Ty::of(K::Repeater)});
      } else {
        expect_args(call, e, {Ty::of(K::UInt), Ty::of(K::Float), Ty::of(K::Repeater), Ty::of(K::UInt)});
      }
      return Ty::of(K::Qubit);
    }
    if (n == "recv") {
      expect_args(call, e, {Ty::of(K::Repeater)});
      return Ty::of(K::Message);
    }
    if (n == "cmp") {
      expect_args(call, e, {Ty::of(K::Result), Ty::of(K::Str), Ty::of(K::Str)});
      return Ty::of(K::Bool);
    }
    if (n == "check_timer") {
      expect_args(call, e, {Ty::of(K::Str)});
      return Ty::of(K::Bool);
    }
    if (n == "set_timer") {
      expect_args(call, e, {Ty::of(K::Str), Ty::of(K::Int)});
      return Ty::of(K::Unit);
    }
    if (n == "free") {
      expect_args(call, e, {Ty::of(K::Qubit)});
      return Ty::of(K::Unit);
    }
    if (n == "measure") {
      expect_args(call, e, {Ty::of(K::Qubit), Ty::of(K::Str)});
      return Ty::of(K::Result);
    }
    if (n == "x" || n == "y" || n == "z" || n == "h") {
      if (call.args.empty()) return Ty::of(K::Gate);
      expect_args(call, e, {Ty::of(K::Qubit)});
      return Ty::of(K::Unit);
    }
    if (n == "cx" || n == "cz") {
      expect_args(call, e, {Ty::of(K::Qubit), Ty::of(K::Qubit)});
      return Ty::of(K::Unit);
    }
    if (n == "bsm") {
      expect_args(call, e, {Ty::of(K::Qubit), Ty::of(K::Qubit)});
      return Ty::of(K::Result);
    }
    if (n == "update") {
      expect_args(call, e, {Ty::of(K::Qubit), Ty::of(K::Gate)});
      return Ty::of(K::Unit);
    }
    if (n == "meas") {
      expect_args(call, e, {Ty::of(K::Qubit), Ty::of(K::Result)});
      return Ty::of(K::Unit);
    }
    if (n == "transfer") {
      expect_args(call, e, {Ty::of(K::Qubit)});
      return Ty::of(K::Unit);
    }
    return Ty{};
  }

  Ty type_node(VariableCall& vc, Expr& e) {
    Ty cur;
    const Callable& head = vc.chain.front();
    switch (head.kind) {
      case Callable::Kind::RepeaterIdent:
        if (head.name == "repeaters") {
          cur = Ty::of(Ty::K::Repeaters);
        } else if (rule_ && head.name == rule_->repeater_ident) {
          cur = Ty::of(Ty::K::Repeater);
        } else {
          error("unknown-ident", head.span, "unknown repeater #" + head.name);
          return Ty{};
        }
        break;
      case Callable::Kind::Ident: {
        const Symbol* sym = lookup(head.name);
        if (!sym) {
          error("unknown-ident", head.span, "unknown identifier " + head.name);
          return Ty{};
        }
        cur = sym->ty;
        break;
      }
      case Callable::Kind::Fn: {
        Expr tmp{FnCall{head.name, head.args}, head.span, std::nullopt};
        cur = type_of(tmp);
        vc.chain.front().args = std::move(std::get<FnCall>(tmp.node).args);
        break;
      }
    }
    for (std::size_t i = 1; i < vc.chain.size(); ++i) {
      Callable& link = vc.chain[i];
      if (cur.unknown()) return Ty{};
      if (cur.is(Ty::K::Repeater) && link.kind == Callable::Kind::Fn && link.name == "hop") {
        if (link.args.size() != 1) {
          error("arity", link.span, "hop takes 1 argument, " + std::to_string(link.args.size()) + " given");
          return Ty{};
        }
        Ty a = type_of(link.args[0]);
        if (!a.unknown() && !a.is(Ty::K::Int) && !a.is(Ty::K::UInt)) {
          error("type-mismatch", link.args[0].span, "hop expects int, found " + name_of(a));
        }
        cur = Ty::of(Ty::K::Repeater);
      } else if (cur.is(Ty::K::Repeaters) && link.kind == Callable::Kind::Fn && link.name == "len" &&
                 link.args.empty()) {
        cur = Ty::of(Ty::K::Int);
      } else if (cur.is(Ty::K::Message) && link.kind == Callable::Kind::Ident && link.name == "result") {
        cur = Ty::of(Ty::K::Result);
      } else {
        error("unknown-method", link.span, "unknown method " + link.name + " on " + name_of(cur));
        return Ty{};
      }
    }
    (void)e;
    return cur;
  }
};

// ---------------------------------------------------------------- dataflow

struct GetSite {
  std::string name;
  Span span;
  std::string file;
};

void collect_expr(const Expr& e, std::vector<GetSite>& gets, const std::string& file);

void collect_block(const Block& block, std::vector<GetSite>& gets, std::set<std::string>& sets,
                   const std::string& file) {
  for (const auto& s : block) {
    std::visit(
        [&](const auto& node) {
          using T = std::decay_t<decltype(node)>;
          if constexpr (std::is_same_v<T, Let>) {
            collect_expr(node.value, gets, file);
          } else if constexpr (std::is_same_v<T, If>) {
            collect_expr(node.cond, gets, file);
            collect_block(node.then, gets, sets, file);
            for (const auto& e : node.elifs) {
              collect_expr(e.cond, gets, file);
              collect_block(e.body, gets, sets, file);
            }
            if (node.else_) collect_block(*node.else_, gets, sets, file);
          } else if constexpr (std::is_same_v<T, For>) {
            collect_block(node.body, gets, sets, file);
          } else if constexpr (std::is_same_v<T, Match>) {
            collect_expr(node.scrutinee, gets, file);
            for (const auto& a : node.arms) collect_block(a.body, gets, sets, file);
            if (node.otherwise) collect_block(*node.otherwise, gets, sets, file);
          } else if constexpr (std::is_same_v<T, Promote>) {
            for (const auto& v : node.values) collect_expr(v, gets, file);
          } else if constexpr (std::is_same_v<T, Set>) {
            sets.insert(node.alias ? *node.alias : node.name);
          } else if constexpr (std::is_same_v<T, Send>) {
            collect_expr(node.call, gets, file);
            collect_expr(node.destination, gets, file);
          } else if constexpr (std::is_same_v<T, ExprStmt>) {
            collect_expr(node.expr, gets, file);
          }
        },
        s.node);
  }
}

void collect_expr(const Expr& e, std::vector<GetSite>& gets, const std::string& file) {
  std::visit(
      [&](const auto& node) {
        using T = std::decay_t<decltype(node)>;
        if constexpr (std::is_same_v<T, Get>) {
          gets.push_back({node.name, e.span, file});
        } else if constexpr (std::is_same_v<T, Comp>) {
          collect_expr(*node.lhs, gets, file);
          collect_expr(*node.rhs, gets, file);
        } else if constexpr (std::is_same_v<T, Binary>) {
          collect_expr(*node.lhs, gets, file);
          collect_expr(*node.rhs, gets, file);
        } else if constexpr (std::is_same_v<T, FnCall>) {
          for (const auto& a : node.args) collect_expr(a, gets, file);
        } else if constexpr (std::is_same_v<T, RuleCall>) {
          for (const auto& a : node.args) collect_expr(a, gets, file);
        } else if constexpr (std::is_same_v<T, Vector> || std::is_same_v<T, Tuple>) {
          for (const auto& a : node.elems) collect_expr(a, gets, file);
        } else if constexpr (std::is_same_v<T, VariableCall>) {
          for (const auto& c : node.chain) {
            for (const auto& a : c.args) collect_expr(a, gets, file);
          }
        }
      },
      e.node);
}

struct RuleFlow {
  std::vector<GetSite> gets;
  std::set<std::string> sets;
};

RuleFlow rule_flow(const RuleStmt& rule) {
  RuleFlow flow;
  for (const auto& let : rule.lets) collect_expr(let.value, flow.gets, rule.file);
  for (const auto& c : rule.cond.clauses) collect_expr(c.call, flow.gets, rule.file);
  collect_block(rule.act.body, flow.gets, flow.sets, rule.file);
  collect_block(rule.trailing, flow.gets, flow.sets, rule.file);
  return flow;
}

void rule_calls_in(const Expr& e, std::vector<const RuleCall*>& out) {
  if (const auto* rc = std::get_if<RuleCall>(&e.node)) out.push_back(rc);
}

void rule_calls_in(const Block& block, std::vector<const RuleCall*>& out) {
  for (const auto& s : block) {
    if (const auto* let = std::get_if<Let>(&s.node)) rule_calls_in(let->value, out);
    if (const auto* es = std::get_if<ExprStmt>(&s.node)) rule_calls_in(es->expr, out);
    if (const auto* f = std::get_if<For>(&s.node)) rule_calls_in(f->body, out);
    if (const auto* i = std::get_if<If>(&s.node)) {
      rule_calls_in(i->then, out);
      for (const auto& e : i->elifs) rule_calls_in(e.body, out);
      if (i->else_) rule_calls_in(*i->else_, out);
    }
  }
}

bool mentions(const Expr& e, const std::string& name) {
  return std::visit(
      [&](const auto& node) -> bool {
        using T = std::decay_t<decltype(node)>;
        if constexpr (std::is_same_v<T, Literal>) {
          return node.kind == Literal::Kind::Ident && node.text == name;
        } else if constexpr (std::is_same_v<T, Comp> || std::is_same_v<T, Binary>) {
          return mentions(*node.lhs, name) || mentions(*node.rhs, name);
        } else if constexpr (std::is_same_v<T, FnCall>) {
          return std::any_of(node.args.begin(), node.args.end(), [&](const Expr& a) { return mentions(a, name); });
        } else if constexpr (std::is_same_v<T, RuleCall>) {
          return std::any_of(node.args.begin(), node.args.end(), [&](const Expr& a) { return mentions(a, name); }) ||
                 std::any_of(node.repeater_index.begin(), node.repeater_index.end(),
                             [&](const Expr& a) { return mentions(a, name); });
        } else if constexpr (std::is_same_v<T, Vector> || std::is_same_v<T, Tuple>) {
          return std::any_of(node.elems.begin(), node.elems.end(), [&](const Expr& a) { return mentions(a, name); });
        } else if constexpr (std::is_same_v<T, VariableCall>) {
          for (const auto& c : node.chain) {
            if (c.kind == Callable::Kind::Ident && c.name == name) return true;
            for (const auto& a : c.args) {
              if (mentions(a, name)) return true;
            }
          }
          return false;
        } else {
          return false;
        }
      },
      e.node);
}

bool mentions(const Block& block, const std::string& name) {
  for (const auto& s : block) {
    bool hit = std::visit(
        [&](const auto& node) -> bool {
          using T = std::decay_t<decltype(node)>;
          if constexpr (std::is_same_v<T, Let>) {
            return mentions(node.value, name);
          } else if constexpr (std::is_same_v<T, ExprStmt>) {
            return mentions(node.expr, name);
          } else if constexpr (std::is_same_v<T, For>) {
            return mentions(node.body, name);
          } else if constexpr (std::is_same_v<T, If>) {
            if (mentions(node.cond, name) || mentions(node.then, name)) return true;
            for (const auto& e : node.elifs) {
              if (mentions(e.cond, name) || mentions(e.body, name)) return true;
            }
            return node.else_ && mentions(*node.else_, name);
          } else {
            return false;
          }
        },
        s.node);
    if (hit) return true;
  }
  return false;
}

void unused_promoted(const Block& block, std::size_t from, const std::vector<const Block*>& outer,
                     std::vector<Diagnostic>& diags, const std::string& file) {
  for (std::size_t i = from; i < block.size(); ++i) {
    const Stmt& s = block[i];
    if (const auto* let = std::get_if<Let>(&s.node)) {
      if (!std::holds_alternative<RuleCall>(let->value.node)) continue;
      for (const auto& b : let->bindings) {
        if (b.type.kind != Type::Kind::Qubit) continue;
        Block rest(block.begin() + static_cast<std::ptrdiff_t>(i) + 1, block.end());
        bool used = mentions(rest, b.name);
        for (const Block* o : outer) used = used || mentions(*o, b.name);
        if (!used) {
          diags.push_back({Diagnostic::Severity::Warning, "unused-promoted", b.span,
                           "unused promoted qubit " + b.name, file});
        }
      }
    } else if (const auto* f = std::get_if<For>(&s.node)) {
      unused_promoted(f->body, 0, outer, diags, file);
    } else if (const auto* cond = std::get_if<If>(&s.node)) {
      unused_promoted(cond->then, 0, outer, diags, file);
      if (cond->else_) unused_promoted(*cond->else_, 0, outer, diags, file);
    }
  }
}

}  // namespace

bool is_builtin(const std::string& name) { return kBuiltins.count(name) > 0; }

std::vector<Diagnostic> check_dataflow(const Program& program) {
  std::vector<Diagnostic> diags;
  std::map<std::string, const RuleStmt*> rules;
  for (const auto& r : program.rules) rules.emplace(r.name, &r);

  std::set<std::string> all_sets;
  std::map<std::string, RuleFlow> flows;
  for (const auto& r : program.rules) {
    flows[r.name] = rule_flow(r);
    all_sets.insert(flows[r.name].sets.begin(), flows[r.name].sets.end());
  }

  std::set<std::pair<std::size_t, std::string>> reported;
  auto report = [&](const GetSite& g, bool set_somewhere) {
    if (!reported.insert({g.span.byte_start, g.file}).second) return;
    if (set_somewhere) {
      diags.push_back({Diagnostic::Severity::Error, "get-before-set", g.span,
                       g.name + " is read before any earlier rule sets it", g.file});
    } else {
      diags.push_back({Diagnostic::Severity::Error, "never-set", g.span, g.name + " is never set", g.file});
    }
  };

  std::set<std::string> called;
  if (program.ruleset) {
    std::vector<const RuleCall*> calls;
    rule_calls_in(program.ruleset->body, calls);
    std::set<std::string> produced;
    for (const RuleCall* call : calls) {
      auto it = flows.find(call->name);
      if (it == flows.end()) continue;
      called.insert(call->name);
      for (const auto& g : it->second.gets) {
        if (!produced.count(g.name) && !it->second.sets.count(g.name)) report(g, all_sets.count(g.name) > 0);
      }
      produced.insert(it->second.sets.begin(), it->second.sets.end());
    }
    std::vector<GetSite> ruleset_gets;
    std::set<std::string> unused;
    collect_block(program.ruleset->body, ruleset_gets, unused, program.file);
    for (const auto& g : ruleset_gets) {
      if (!all_sets.count(g.name)) report(g, false);
    }
    unused_promoted(program.ruleset->body, 0, {}, diags, program.file);
  }
  for (const auto& r : program.rules) {
    if (called.count(r.name)) continue;
    for (const auto& g : flows[r.name].gets) {
      if (!all_sets.count(g.name)) report(g, false);
    }
  }
  return diags;
}

Analysis analyze(Program program) {
  Analysis out;
  Analyzer analyzer(program);
  analyzer.run();
  out.diagnostics = std::move(analyzer.diags);
  out.signatures = std::move(analyzer.signatures);
  // a get inside an already-rejected construct is not reported twice
  const auto covered = [&](const Diagnostic& d) {
    return std::any_of(out.diagnostics.begin(), out.diagnostics.end(), [&](const Diagnostic& e) {
      return e.severity == Diagnostic::Severity::Error && e.file == d.file && e.span.byte_start <= d.span.byte_start &&
             d.span.byte_end <= e.span.byte_end;
    });
  };
  for (auto& d : check_dataflow(program)) {
    if (!covered(d)) out.diagnostics.push_back(std::move(d));
  }
  out.program = std::move(program);
  return out;
}

// ---------------------------------------------------------------- imports

namespace {

struct ImportState {
  std::vector<std::filesystem::path> roots;
  std::vector<std::filesystem::path> stack;  // files currently being resolved
  std::vector<Diagnostic> diags;
};

std::string join(const std::vector<std::string>& parts, const std::string& sep) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) out += (i ? sep : "") + parts[i];
  return out;
}

std::vector<RuleStmt> load_rules(const ImportStmt& imp, const std::string& importer, ImportState& st);

void resolve_into(Program& program, ImportState& st) {
  std::set<std::string> names;
  for (const auto& r : program.rules) names.insert(r.name);
  for (const auto& imp : program.imports) {
    if (!imp.path.empty() && imp.path.front() == "std") continue;
    if (!imp.is_rule_import) {
      st.diags.push_back({Diagnostic::Severity::Error, "import", imp.span,
                          "unsupported import " + join(imp.path, "::") + " (only std and (rule) imports)",
                          program.file});
      continue;
    }
    for (auto& rule : load_rules(imp, program.file, st)) {
      if (!names.insert(rule.name).second) {
        st.diags.push_back({Diagnostic::Severity::Error, "duplicate-rule", imp.span,
                            "duplicate rule name " + rule.name, program.file});
        continue;
      }
      program.rules.push_back(std::move(rule));
    }
  }
}

std::vector<RuleStmt> load_rules(const ImportStmt& imp, const std::string& importer, ImportState& st) {
  std::vector<std::string> module = imp.path;
  std::vector<std::string> wanted;
  if (imp.terminal_list) {
    wanted = *imp.terminal_list;
  } else if (module.size() >= 2) {
    wanted.push_back(module.back());
    module.pop_back();
  } else {
    st.diags.push_back({Diagnostic::Severity::Error, "import", imp.span,
                        "rule import needs a module and a rule name", importer});
    return {};
  }
  std::filesystem::path rel;
  for (std::size_t i = 0; i < module.size(); ++i) {
    rel /= (i + 1 == module.size()) ? module[i] + ".rula" : module[i];
  }
  std::optional<std::filesystem::path> found;
  for (const auto& root : st.roots) {
    std::error_code ec;
    if (std::filesystem::is_regular_file(root / rel, ec)) {
      found = std::filesystem::weakly_canonical(root / rel, ec);
      break;
    }
  }
  const std::string module_name = join(module, "::");
  if (!found) {
    st.diags.push_back({Diagnostic::Severity::Error, "module-not-found", imp.span,
                        "module not found: " + module_name, importer});
    return {};
  }
  if (std::find(st.stack.begin(), st.stack.end(), *found) != st.stack.end()) {
    st.diags.push_back({Diagnostic::Severity::Error, "import-cycle", imp.span,
                        "import cycle through module " + module_name, importer});
    return {};
  }
  std::ifstream in(*found, std::ios::binary);
  std::stringstream buf;
  buf << in.rdbuf();
  const std::string text = buf.str();
  Program sub;
  try {
    sub = parse_program(text, found->string());
  } catch (const ParseFailure& failure) {
    const auto& err = failure.error();
    st.diags.push_back({Diagnostic::Severity::Error, "import-parse", imp.span,
                        "module " + module_name + " failed to parse at " + std::to_string(err.span.line) + ":" +
                            std::to_string(err.span.column),
                        importer});
    return {};
  }
  st.stack.push_back(*found);
  resolve_into(sub, st);
  st.stack.pop_back();

  std::vector<RuleStmt> out;
  for (const auto& name : wanted) {
    auto it = std::find_if(sub.rules.begin(), sub.rules.end(), [&](const RuleStmt& r) { return r.name == name; });
    if (it == sub.rules.end()) {
      st.diags.push_back({Diagnostic::Severity::Error, "import-name", imp.span,
                          "rule " + name + " not found in module " + module_name, importer});
      continue;
    }
    out.push_back(*it);
  }
  return out;
}

}  // namespace

std::pair<Program, std::vector<Diagnostic>> resolve_imports(Program program,
                                                            const std::vector<std::filesystem::path>& search_roots) {
  ImportState st;
  st.roots = search_roots;
  if (!program.file.empty()) {
    std::error_code ec;
    st.stack.push_back(std::filesystem::weakly_canonical(program.file, ec));
  }
  resolve_into(program, st);
  return {std::move(program), std::move(st.diags)};
}

}  // namespace rula
