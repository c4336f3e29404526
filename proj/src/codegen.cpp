#include "rula/codegen.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <optional>
#include <set>

namespace rula {

using namespace ast;

std::uint64_t default_ruleset_id(std::string_view ruleset_name, std::string_view config_bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto feed = [&](unsigned char c) {
    h ^= c;
    h *= 0x100000001b3ULL;
  };
  for (char c : ruleset_name) feed(static_cast<unsigned char>(c));
  feed(0);
  for (char c : config_bytes) feed(static_cast<unsigned char>(c));
  return h;
}

std::string output_filename(const ir::RuleSetIR& ruleset) {
  return ruleset.name + "_" + std::to_string(ruleset.owner_addr) + ".json";
}

namespace {

enum class ResultKind { Meas, MessageResult, Var };

struct Value {
  enum class K { None, Int, Float, Bool, Str, Repeater, Repeaters, Qubit, Message, Result, Gate, Tuple };
  K k = K::None;
  std::int64_t i = 0;
  double f = 0.0;
  bool b = false;
  std::string s;           // Str text; Result descriptor or variable name
  std::size_t rep = 0;     // Repeater index; partner index of a Qubit/Message
  std::size_t owner = 0;   // Qubit owner index (ruleset level)
  std::uint64_t slot = 0;  // Qubit slot inside a rule
  ResultKind rk = ResultKind::Meas;
  ir::GateKind gate = ir::GateKind::X;
  std::vector<Value> elems;

  static Value integer(std::int64_t v) {
    Value out;
    out.k = K::Int;
    out.i = v;
    return out;
  }
  static Value boolean(bool v) {
    Value out;
    out.k = K::Bool;
    out.b = v;
    return out;
  }
  static Value repeater(std::size_t index) {
    Value out;
    out.k = K::Repeater;
    out.rep = index;
    return out;
  }
  static Value result(ResultKind rk, std::string s) {
    Value out;
    out.k = K::Result;
    out.rk = rk;
    out.s = std::move(s);
    return out;
  }
};

const char* kind_name(Value::K k) {
  switch (k) {
    case Value::K::None: return "()";
    case Value::K::Int: return "int";
    case Value::K::Float: return "float";
    case Value::K::Bool: return "bool";
    case Value::K::Str: return "str";
    case Value::K::Repeater: return "Repeater";
    case Value::K::Repeaters: return "vec[Repeater]";
    case Value::K::Qubit: return "Qubit";
    case Value::K::Message: return "Message";
    case Value::K::Result: return "Result";
    case Value::K::Gate: return "gate";
    case Value::K::Tuple: return "tuple";
  }
  return "?";
}

bool is_bits(const std::string& s) { return !s.empty() && s.find_first_not_of("01") == std::string::npos; }

std::int64_t ipow(std::int64_t base, std::int64_t exp, const Span& span) {
  if (exp < 0) throw CodegenError(span, "negative exponent in integer power");
  std::int64_t out = 1;
  for (std::int64_t i = 0; i < exp; ++i) {
    if (__builtin_mul_overflow(out, base, &out)) throw CodegenError(span, "integer overflow in power");
  }
  return out;
}

using Scope = std::map<std::string, Value>;

struct SendRec {
  std::size_t rule_pos = 0;
  std::size_t clause = 0;
  std::size_t partner = 0;
  ir::MessageKind kind = ir::MessageKind::Free;
  std::string op;     // Update only
  std::string alias;  // Meas only: receiving variable name
};

struct Branch {
  std::vector<ir::ActionClause> actions;
  std::vector<ir::ConditionClause> cmps;
  std::vector<SendRec> sends;
  std::vector<Value> promoted;
  Scope locals;
  std::size_t measures = 0;
  std::set<std::uint64_t> freed;  // slots released earlier on this branch
};

// A statement touching a qubit its branch already freed; the statement is dropped.
struct ReleasedQubit {};

struct Instance {
  const RuleStmt* rule = nullptr;
  std::size_t owner = 0;
  std::vector<ir::RuleIR> rules;
  std::vector<SendRec> sends;
  std::vector<std::size_t> recv_partners;
  Value ret;
};

class Evaluator {
 public:
  explicit Evaluator(const Topology& topo) : topo_(topo) {}

  Value eval(const Expr& e, const std::vector<const Scope*>& scopes) const {
    return std::visit([&](const auto& node) { return eval_node(node, e, scopes); }, e.node);
  }

  std::int64_t eval_int(const Expr& e, const std::vector<const Scope*>& scopes) const {
    Value v = eval(e, scopes);
    if (v.k == Value::K::Int) return v.i;
    throw CodegenError(e.span, std::string("expected an integer, found ") + kind_name(v.k));
  }

  bool eval_bool(const Expr& e, const std::vector<const Scope*>& scopes) const {
    Value v = eval(e, scopes);
    if (v.k == Value::K::Bool) return v.b;
    if (v.k == Value::K::Int) return v.i != 0;
    throw CodegenError(e.span, std::string("expected a compile-time boolean, found ") + kind_name(v.k));
  }

  const Topology& topo() const { return topo_; }

 private:
  const Topology& topo_;

  static const Value* lookup(const std::string& name, const std::vector<const Scope*>& scopes) {
    for (auto it = scopes.rbegin(); it != scopes.rend(); ++it) {
      auto found = (*it)->find(name);
      if (found != (*it)->end()) return &found->second;
    }
    return nullptr;
  }

  Value eval_node(const Literal& lit, const Expr& e, const std::vector<const Scope*>& scopes) const {
    switch (lit.kind) {
      case Literal::Kind::Int:
      case Literal::Kind::Binary:
      case Literal::Kind::Hex: return Value::integer(lit.int_value);
      case Literal::Kind::Float: {
        Value v;
        v.k = Value::K::Float;
        v.f = lit.float_value;
        return v;
      }
      case Literal::Kind::Bool: return Value::boolean(lit.bool_value);
      case Literal::Kind::Str: {
        Value v;
        v.k = Value::K::Str;
        v.s = lit.text;
        return v;
      }
      case Literal::Kind::Unicode: throw CodegenError(e.span, "unsupported literal " + lit.text);
      case Literal::Kind::Ident: {
        const Value* v = lookup(lit.text, scopes);
        if (!v) throw CodegenError(e.span, "unknown identifier " + lit.text);
        if (!lit.negated) return *v;
        Value out = *v;
        if (out.k == Value::K::Int) {
          out.i = -out.i;
        } else if (out.k == Value::K::Float) {
          out.f = -out.f;
        } else {
          throw CodegenError(e.span, std::string("cannot negate ") + kind_name(out.k));
        }
        return out;
      }
    }
    return Value{};
  }

  Value eval_node(const Get& get, const Expr&, const std::vector<const Scope*>&) const {
    return Value::result(ResultKind::Var, get.name);
  }

  Value eval_node(const Binary& bin, const Expr& e, const std::vector<const Scope*>& scopes) const {
    Value l = eval(*bin.lhs, scopes);
    Value r = eval(*bin.rhs, scopes);
    const bool li = l.k == Value::K::Int, ri = r.k == Value::K::Int;
    const bool lf = l.k == Value::K::Float, rf = r.k == Value::K::Float;
    if (!(li || lf) || !(ri || rf)) {
      throw CodegenError(e.span, std::string("operator ") + bin.op + " needs numbers, found " + kind_name(l.k) +
                                     " and " + kind_name(r.k));
    }
    if (li && ri) {
      std::int64_t out = 0;
      switch (bin.op) {
        case '+':
          if (__builtin_add_overflow(l.i, r.i, &out)) throw CodegenError(e.span, "integer overflow");
          break;
        case '-':
          if (__builtin_sub_overflow(l.i, r.i, &out)) throw CodegenError(e.span, "integer overflow");
          break;
        case '*':
          if (__builtin_mul_overflow(l.i, r.i, &out)) throw CodegenError(e.span, "integer overflow");
          break;
        case '/':
          if (r.i == 0) throw CodegenError(e.span, "division by zero");
          out = l.i / r.i;
          break;
        case '%':
          if (r.i == 0) throw CodegenError(e.span, "modulo by zero");
          out = l.i % r.i;
          break;
        case '^': out = ipow(l.i, r.i, e.span); break;
        default: throw CodegenError(e.span, std::string("unknown operator ") + bin.op);
      }
      return Value::integer(out);
    }
    const double a = li ? static_cast<double>(l.i) : l.f;
    const double b = ri ? static_cast<double>(r.i) : r.f;
    Value out;
    out.k = Value::K::Float;
    switch (bin.op) {
      case '+': out.f = a + b; break;
      case '-': out.f = a - b; break;
      case '*': out.f = a * b; break;
      case '/': out.f = a / b; break;
      case '%': out.f = std::fmod(a, b); break;
      case '^': out.f = std::pow(a, b); break;
      default: throw CodegenError(e.span, std::string("unknown operator ") + bin.op);
    }
    return out;
  }

  Value eval_node(const Comp& comp, const Expr& e, const std::vector<const Scope*>& scopes) const {
    Value l = eval(*comp.lhs, scopes);
    Value r = eval(*comp.rhs, scopes);
    auto num = [](const Value& v) { return v.k == Value::K::Int ? static_cast<double>(v.i) : v.f; };
    auto numeric = [](const Value& v) { return v.k == Value::K::Int || v.k == Value::K::Float; };
    int c = 0;
    if (l.k == Value::K::Int && r.k == Value::K::Int) {
      c = l.i < r.i ? -1 : (l.i > r.i ? 1 : 0);
    } else if (numeric(l) && numeric(r)) {
      c = num(l) < num(r) ? -1 : (num(l) > num(r) ? 1 : 0);
    } else if (l.k == r.k && (l.k == Value::K::Str || l.k == Value::K::Bool) &&
               (comp.op == CompOp::Eq || comp.op == CompOp::Neq)) {
      c = l.k == Value::K::Str ? (l.s == r.s ? 0 : 1) : (l.b == r.b ? 0 : 1);
    } else if (l.k == Value::K::Repeater && r.k == Value::K::Repeater &&
               (comp.op == CompOp::Eq || comp.op == CompOp::Neq)) {
      c = l.rep == r.rep ? 0 : 1;
    } else {
      throw CodegenError(e.span, std::string("comparison is not compile-time evaluable (") + kind_name(l.k) + ", " +
                                     kind_name(r.k) + ")");
    }
    switch (comp.op) {
      case CompOp::Lt: return Value::boolean(c < 0);
      case CompOp::Gt: return Value::boolean(c > 0);
      case CompOp::Leq: return Value::boolean(c <= 0);
      case CompOp::Geq: return Value::boolean(c >= 0);
      case CompOp::Eq: return Value::boolean(c == 0);
      case CompOp::Neq: return Value::boolean(c != 0);
    }
    return Value{};
  }

  Value eval_node(const Vector& v, const Expr&, const std::vector<const Scope*>& scopes) const {
    Value out;
    out.k = Value::K::Tuple;
    for (const auto& x : v.elems) out.elems.push_back(eval(x, scopes));
    return out;
  }

  Value eval_node(const Tuple& t, const Expr&, const std::vector<const Scope*>& scopes) const {
    if (t.elems.size() == 1) return eval(t.elems[0], scopes);
    Value out;
    out.k = Value::K::Tuple;
    for (const auto& x : t.elems) out.elems.push_back(eval(x, scopes));
    return out;
  }

  Value eval_node(const FnCall& call, const Expr& e, const std::vector<const Scope*>&) const {
    if (call.args.empty()) {
      static const std::map<std::string, ir::GateKind> gates = {
          {"x", ir::GateKind::X}, {"y", ir::GateKind::Y}, {"z", ir::GateKind::Z}, {"h", ir::GateKind::H}};
      auto it = gates.find(call.name);
      if (it != gates.end()) {
        Value v;
        v.k = Value::K::Gate;
        v.gate = it->second;
        return v;
      }
    }
    throw CodegenError(e.span, call.name + "(...) cannot be evaluated here");
  }

  Value eval_node(const RuleCall& call, const Expr& e, const std::vector<const Scope*>&) const {
    throw CodegenError(e.span, "rule call " + call.name + " outside a ruleset statement");
  }

  Value eval_node(const VariableCall& vc, const Expr& e, const std::vector<const Scope*>& scopes) const {
    const Callable& head = vc.chain.front();
    Value cur;
    if (head.kind == Callable::Kind::RepeaterIdent) {
      if (head.name == "repeaters") {
        cur.k = Value::K::Repeaters;
      } else {
        const Value* v = lookup("#" + head.name, scopes);
        if (!v) throw CodegenError(head.span, "unknown repeater #" + head.name);
        cur = *v;
      }
    } else if (head.kind == Callable::Kind::Ident) {
      const Value* v = lookup(head.name, scopes);
      if (!v) throw CodegenError(head.span, "unknown identifier " + head.name);
      cur = *v;
    } else {
      throw CodegenError(head.span, head.name + "(...) cannot be evaluated here");
    }
    for (std::size_t i = 1; i < vc.chain.size(); ++i) {
      const Callable& link = vc.chain[i];
      if (cur.k == Value::K::Repeater && link.name == "hop" && link.args.size() == 1) {
        const std::int64_t offset = eval_int(link.args[0], scopes);
        try {
          cur = Value::repeater(topo_.resolve_hop(static_cast<std::int64_t>(cur.rep), offset).index);
        } catch (const ConfigError& err) {
          throw CodegenError(link.span, err.what());
        }
      } else if (cur.k == Value::K::Repeaters && link.name == "len") {
        cur = Value::integer(static_cast<std::int64_t>(topo_.count()));
      } else if (cur.k == Value::K::Message && link.name == "result") {
        cur = Value::result(ResultKind::MessageResult, "message.result");
      } else {
        throw CodegenError(link.span, "unknown method " + link.name + " on " + kind_name(cur.k));
      }
    }
    (void)e;
    return cur;
  }
};

ir::CmpOp to_ir(CompOp op) {
  switch (op) {
    case CompOp::Lt: return ir::CmpOp::Lt;
    case CompOp::Gt: return ir::CmpOp::Gt;
    case CompOp::Leq: return ir::CmpOp::Leq;
    case CompOp::Geq: return ir::CmpOp::Geq;
    case CompOp::Eq: return ir::CmpOp::Eq;
    case CompOp::Neq: return ir::CmpOp::Neq;
  }
  return ir::CmpOp::Eq;
}

CompOp mirror(CompOp op) {
  switch (op) {
    case CompOp::Lt: return CompOp::Gt;
    case CompOp::Gt: return CompOp::Lt;
    case CompOp::Leq: return CompOp::Geq;
    case CompOp::Geq: return CompOp::Leq;
    default: return op;
  }
}

std::string cmp_val_of(const Value& v) {
  switch (v.rk) {
    case ResultKind::Meas: return v.s;
    case ResultKind::MessageResult: return "message.result";
    case ResultKind::Var: return v.s;
  }
  return v.s;
}

ir::TaggedValue target_of(const Value& v, const Span& span) {
  if (v.k == Value::K::Str) return is_bits(v.s) ? ir::TaggedValue::meas_result(v.s) : ir::TaggedValue::str(v.s);
  if (v.k == Value::K::Result && v.rk == ResultKind::Var) return ir::TaggedValue::var(v.s);
  if (v.k == Value::K::Int) return ir::TaggedValue::integer(v.i);
  if (v.k == Value::K::Float) return ir::TaggedValue::floating(v.f);
  if (v.k == Value::K::Bool) return ir::TaggedValue::boolean(v.b);
  throw CodegenError(span, std::string("cannot compare against ") + kind_name(v.k) + " at run time");
}

// Walk the act body once to see whether more than one measurement result is bound.
void count_results(const Block& block, std::size_t& n) {
  for (const auto& s : block) {
    if (const auto* let = std::get_if<Let>(&s.node)) {
      if (const auto* call = std::get_if<FnCall>(&let->value.node)) {
        if (call->name == "bsm" || call->name == "measure") ++n;
      }
    } else if (const auto* es = std::get_if<ExprStmt>(&s.node)) {
      if (const auto* call = std::get_if<FnCall>(&es->expr.node)) {
        if (call->name == "bsm" || call->name == "measure") ++n;
      }
    } else if (const auto* m = std::get_if<Match>(&s.node)) {
      for (const auto& a : m->arms) count_results(a.body, n);
      if (m->otherwise) count_results(*m->otherwise, n);
    } else if (const auto* i = std::get_if<If>(&s.node)) {
      count_results(i->then, n);
      for (const auto& e : i->elifs) count_results(e.body, n);
      if (i->else_) count_results(*i->else_, n);
    }
  }
}

class RuleExpander {
 public:
  RuleExpander(const Evaluator& ev, const RuleStmt& rule, std::size_t owner, const std::vector<Value>& args,
               const Span& call_span)
      : ev_(ev), rule_(rule), owner_(owner), args_(args), call_span_(call_span) {}

  Instance expand() {
    Instance inst;
    inst.rule = &rule_;
    inst.owner = owner_;
    Scope& base = base_;
    base["#" + rule_.repeater_ident] = Value::repeater(owner_);
    for (std::size_t i = 0; i < rule_.params.size(); ++i) base[rule_.params[i].name] = args_.at(i);
    for (std::size_t i = 0; i < rule_.lets.size(); ++i) bind_let(rule_.lets[i], ev_.eval(rule_.lets[i].value, {&base}), base);

    // explicit res indices are authoritative; everything else takes the next free slot
    std::set<std::uint64_t> reserved;
    std::vector<std::optional<std::uint64_t>> explicit_slot(rule_.cond.clauses.size());
    for (std::size_t i = 0; i < rule_.cond.clauses.size(); ++i) {
      const auto* call = std::get_if<FnCall>(&rule_.cond.clauses[i].call.node);
      if (call && call->name == "res" && call->args.size() == 4) {
        const std::int64_t idx = ev_.eval_int(call->args[3], {&base});
        if (idx < 0) throw CodegenError(call->args[3].span, "qubit index must be non-negative");
        if (!reserved.insert(static_cast<std::uint64_t>(idx)).second) {
          throw CodegenError(call->args[3].span, "qubit index " + std::to_string(idx) + " used twice");
        }
        explicit_slot[i] = static_cast<std::uint64_t>(idx);
      }
    }
    std::uint64_t next = 0;
    auto fresh = [&] {
      while (reserved.count(next)) ++next;
      reserved.insert(next);
      return next;
    };

    std::vector<ir::ConditionClause> conds;
    for (std::size_t i = 0; i < rule_.params.size(); ++i) {
      Value& v = base[rule_.params[i].name];
      if (v.k != Value::K::Qubit) continue;
      v.slot = fresh();
      conds.push_back(ir::ResClause{1, 0.0, addr(v.rep), v.slot});
    }
    for (std::size_t i = 0; i < rule_.cond.clauses.size(); ++i) {
      lower_condition(rule_.cond.clauses[i], explicit_slot[i], fresh, conds, inst);
    }

    std::size_t results = 0;
    count_results(rule_.act.body, results);
    count_results(rule_.trailing, results);
    multi_result_ = results > 1;

    std::vector<Branch> branches(1);
    branches = exec_block(rule_.act.body, std::move(branches));
    branches = exec_block(rule_.trailing, std::move(branches));

    for (auto& br : branches) {
      ir::RuleIR r;
      r.name = rule_.name;
      r.condition.clauses = conds;
      r.condition.clauses.insert(r.condition.clauses.end(), br.cmps.begin(), br.cmps.end());
      r.action.clauses = std::move(br.actions);
      for (auto s : br.sends) {
        s.rule_pos = inst.rules.size();
        inst.sends.push_back(s);
      }
      if (inst.ret.k == Value::K::None && !br.promoted.empty()) {
        if (br.promoted.size() == 1) {
          inst.ret = to_handle(br.promoted[0]);
        } else {
          inst.ret.k = Value::K::Tuple;
          for (const auto& p : br.promoted) inst.ret.elems.push_back(to_handle(p));
        }
      }
      inst.rules.push_back(std::move(r));
    }
    return inst;
  }

 private:
  const Evaluator& ev_;
  const RuleStmt& rule_;
  std::size_t owner_;
  std::vector<Value> args_;
  Span call_span_;
  Scope base_;
  bool multi_result_ = false;

  ir::Address addr(std::size_t index) const { return ev_.topo().repeaters().at(index).address; }

  Value to_handle(const Value& v) const {
    Value out = v;
    if (out.k == Value::K::Qubit) out.owner = owner_;
    return out;
  }

  static void bind_let(const Let& let, Value v, Scope& scope) {
    if (let.bindings.size() == 1) {
      scope[let.bindings[0].name] = std::move(v);
      return;
    }
    for (std::size_t i = 0; i < let.bindings.size(); ++i) {
      scope[let.bindings[i].name] = (v.k == Value::K::Tuple && i < v.elems.size()) ? v.elems[i] : Value{};
    }
  }

  std::vector<const Scope*> scopes(const Branch& br) const { return {&base_, &br.locals}; }

  Value expect(const Expr& e, const Branch& br, Value::K k, const char* what) const {
    Value v = ev_.eval(e, scopes(br));
    if (v.k != k) {
      throw CodegenError(e.span, std::string(what) + " expects " + kind_name(k) + ", found " + kind_name(v.k));
    }
    if (k == Value::K::Qubit && br.freed.count(v.slot)) throw ReleasedQubit{};
    return v;
  }

  template <typename Fresh>
  void lower_condition(const CondClause& clause, std::optional<std::uint64_t> slot, Fresh& fresh,
                       std::vector<ir::ConditionClause>& out, Instance& inst) {
    const auto* call = std::get_if<FnCall>(&clause.call.node);
    if (!call) throw CodegenError(clause.span, "unknown condition function");
    const std::vector<const Scope*> sc = {&base_};
    if (call->name == "res") {
      if (call->args.size() < 3) throw CodegenError(clause.span, "res takes 3 or 4 arguments");
      const std::int64_t n = ev_.eval_int(call->args[0], sc);
      if (n < 1) throw CodegenError(call->args[0].span, "res needs at least one resource");
      Value f = ev_.eval(call->args[1], sc);
      double fid = f.k == Value::K::Float ? f.f : static_cast<double>(f.i);
      if (f.k != Value::K::Float && f.k != Value::K::Int) throw CodegenError(call->args[1].span, "fidelity must be a number");
      if (fid < 0.0 || fid > 1.0) throw CodegenError(call->args[1].span, "fidelity out of range [0,1]");
      Value partner = ev_.eval(call->args[2], sc);
      if (partner.k != Value::K::Repeater) throw CodegenError(call->args[2].span, "res partner must be a Repeater");
      if (partner.rep == owner_) throw CodegenError(call->args[2].span, "res partner is the owner itself");
      const std::uint64_t idx = slot ? *slot : fresh();
      out.push_back(ir::ResClause{static_cast<std::uint64_t>(n), fid, addr(partner.rep), idx});
      if (clause.capture) {
        Value q;
        q.k = Value::K::Qubit;
        q.slot = idx;
        q.rep = partner.rep;
        base_[*clause.capture] = q;
      }
    } else if (call->name == "recv") {
      if (call->args.size() != 1) throw CodegenError(clause.span, "recv takes 1 argument");
      Value partner = ev_.eval(call->args[0], sc);
      if (partner.k != Value::K::Repeater) throw CodegenError(call->args[0].span, "recv partner must be a Repeater");
      out.push_back(ir::RecvClause{addr(partner.rep)});
      inst.recv_partners.push_back(partner.rep);
      if (clause.capture) {
        Value m;
        m.k = Value::K::Message;
        m.rep = partner.rep;
        base_[*clause.capture] = m;
      }
    } else if (call->name == "cmp") {
      if (call->args.size() != 3) throw CodegenError(clause.span, "cmp takes 3 arguments");
      Value lhs = ev_.eval(call->args[0], sc);
      if (lhs.k != Value::K::Result) throw CodegenError(call->args[0].span, "cmp expects a Result");
      Value op = ev_.eval(call->args[1], sc);
      static const std::map<std::string, ir::CmpOp> ops = {
          {"==", ir::CmpOp::Eq}, {"!=", ir::CmpOp::Neq}, {"<", ir::CmpOp::Lt},
          {"<=", ir::CmpOp::Leq}, {">", ir::CmpOp::Gt},  {">=", ir::CmpOp::Geq}};
      std::optional<ir::CmpOp> parsed;
      if (op.k == Value::K::Str) {
        auto it = ops.find(op.s);
        parsed = it != ops.end() ? std::optional(it->second) : ir::parse_cmp_op(op.s);
      }
      if (!parsed) throw CodegenError(call->args[1].span, "unknown comparison operator");
      Value rhs = ev_.eval(call->args[2], sc);
      out.push_back(ir::CmpClause{cmp_val_of(lhs), *parsed, target_of(rhs, call->args[2].span)});
    } else if (call->name == "check_timer") {
      if (call->args.size() != 1) throw CodegenError(clause.span, "check_timer takes 1 argument");
      Value id = ev_.eval(call->args[0], sc);
      if (id.k != Value::K::Str) throw CodegenError(call->args[0].span, "timer id must be a string");
      out.push_back(ir::TimerClause{id.s});
    } else {
      throw CodegenError(clause.span, "unknown condition function " + call->name);
    }
  }

  std::vector<Branch> exec_block(const Block& block, std::vector<Branch> branches) {
    for (const auto& stmt : block) {
      std::vector<Branch> next;
      for (auto& br : branches) {
        Branch before = br;
        try {
          auto produced = exec_stmt(stmt, std::move(br));
          for (auto& p : produced) next.push_back(std::move(p));
        } catch (const ReleasedQubit&) {
          next.push_back(std::move(before));
        }
      }
      branches = std::move(next);
    }
    return branches;
  }

  std::string result_desc(std::size_t lo, std::size_t hi) const {
    if (!multi_result_) return "MeasResult";
    return "MeasResult[" + std::to_string(lo) + ":" + std::to_string(hi) + "]";
  }

  std::uint64_t qubit_slot(const Expr& e, const Branch& br) const {
    return expect(e, br, Value::K::Qubit, "qubit argument").slot;
  }

  // Returns the Result value for measuring calls, None otherwise.
  Value lower_call(const FnCall& call, const Expr& e, Branch& br) {
    auto arity = [&](std::size_t n) {
      if (call.args.size() != n) {
        throw CodegenError(e.span, call.name + " takes " + std::to_string(n) + " argument(s)");
      }
    };
    static const std::map<std::string, ir::GateKind> single = {
        {"x", ir::GateKind::X}, {"y", ir::GateKind::Y}, {"z", ir::GateKind::Z}, {"h", ir::GateKind::H}};
    if (auto it = single.find(call.name); it != single.end()) {
      arity(1);
      br.actions.push_back(ir::QCircAction{{ir::QGate{{qubit_slot(call.args[0], br)}, it->second}}});
      return Value{};
    }
    if (call.name == "cx" || call.name == "cz") {
      arity(2);
      const bool cx = call.name == "cx";
      br.actions.push_back(ir::QCircAction{
          {ir::QGate{{qubit_slot(call.args[0], br)}, cx ? ir::GateKind::CxControl : ir::GateKind::CzControl},
           ir::QGate{{qubit_slot(call.args[1], br)}, cx ? ir::GateKind::CxTarget : ir::GateKind::CzTarget}}});
      return Value{};
    }
    if (call.name == "bsm") {
      arity(2);
      const std::uint64_t a = qubit_slot(call.args[0], br);
      const std::uint64_t b = qubit_slot(call.args[1], br);
      if (a == b) throw CodegenError(e.span, "bsm needs two distinct qubits");
      br.actions.push_back(ir::QCircAction{{ir::QGate{{a}, ir::GateKind::CxControl}, ir::QGate{{b}, ir::GateKind::CxTarget}}});
      br.actions.push_back(ir::MeasureAction{{a}, ir::Basis::X});
      br.actions.push_back(ir::MeasureAction{{b}, ir::Basis::Z});
      br.measures += 2;
      return Value::result(ResultKind::Meas, result_desc(br.measures - 2, br.measures));
    }
    if (call.name == "measure") {
      arity(2);
      const std::uint64_t q = qubit_slot(call.args[0], br);
      Value basis = expect(call.args[1], br, Value::K::Str, "measure basis");
      auto parsed = ir::parse_basis(basis.s);
      if (!parsed) throw CodegenError(call.args[1].span, "unknown basis " + basis.s);
      br.actions.push_back(ir::MeasureAction{{q}, *parsed});
      br.measures += 1;
      return Value::result(ResultKind::Meas, result_desc(br.measures - 1, br.measures));
    }
    if (call.name == "free") {
      arity(1);
      const std::uint64_t q = qubit_slot(call.args[0], br);
      br.actions.push_back(ir::FreeAction{{q}});
      br.freed.insert(q);
      return Value{};
    }
    if (call.name == "set_timer") {
      arity(2);
      Value id = expect(call.args[0], br, Value::K::Str, "set_timer id");
      Value d = expect(call.args[1], br, Value::K::Int, "set_timer duration");
      if (d.i < 0) throw CodegenError(call.args[1].span, "timer duration must be non-negative");
      br.actions.push_back(ir::SetTimerAction{id.s, static_cast<std::uint64_t>(d.i)});
      return Value{};
    }
    throw CodegenError(e.span, call.name + " is not an action");
  }

  std::vector<Branch> exec_stmt(const Stmt& stmt, Branch br) {
    if (const auto* let = std::get_if<Let>(&stmt.node)) {
      Value v;
      if (const auto* call = std::get_if<FnCall>(&let->value.node); call && !call->args.empty()) {
        v = lower_call(*call, let->value, br);
      } else {
        v = ev_.eval(let->value, scopes(br));
      }
      bind_let(*let, std::move(v), br.locals);
      return {std::move(br)};
    }
    if (const auto* es = std::get_if<ExprStmt>(&stmt.node)) {
      const auto* call = std::get_if<FnCall>(&es->expr.node);
      if (!call) throw CodegenError(stmt.span, "expression statement has no effect");
      lower_call(*call, es->expr, br);
      return {std::move(br)};
    }
    if (const auto* m = std::get_if<Match>(&stmt.node)) return exec_match(*m, std::move(br));
    if (const auto* i = std::get_if<If>(&stmt.node)) return exec_if(*i, std::move(br));
    if (const auto* p = std::get_if<Promote>(&stmt.node)) {
      for (const auto& e : p->values) {
        Value q = ev_.eval(e, scopes(br));
        if (q.k != Value::K::Qubit) throw CodegenError(e.span, std::string("cannot promote ") + kind_name(q.k));
        if (br.freed.count(q.slot)) throw ReleasedQubit{};
        br.actions.push_back(ir::PromoteAction{{q.slot}});
        br.promoted.push_back(q);
      }
      return {std::move(br)};
    }
    if (const auto* s = std::get_if<Set>(&stmt.node)) {
      Expr ref{Literal{Literal::Kind::Ident, s->name, 0, 0.0, false, false}, stmt.span, std::nullopt};
      Value v = ev_.eval(ref, scopes(br));
      if (v.k != Value::K::Result) throw CodegenError(stmt.span, "set requires a Result value");
      br.actions.push_back(ir::SetAction{cmp_val_of(v), s->alias ? *s->alias : s->name});
      return {std::move(br)};
    }
    if (const auto* send = std::get_if<Send>(&stmt.node)) {
      lower_send(*send, stmt.span, br);
      return {std::move(br)};
    }
    if (std::holds_alternative<For>(stmt.node)) {
      const auto& loop = std::get<For>(stmt.node);
      std::vector<Branch> branches{std::move(br)};
      for (const Value& v : generator_values(loop, branches.front())) {
        for (auto& b : branches) {
          if (loop.vars.size() == 1) b.locals[loop.vars[0]] = v;
        }
        branches = exec_block(loop.body, std::move(branches));
      }
      return branches;
    }
    throw CodegenError(stmt.span, "statement not supported in an act block");
  }

  std::vector<Value> generator_values(const For& loop, const Branch& br) const {
    std::vector<Value> out;
    if (const auto* series = std::get_if<Series>(&loop.generator)) {
      const std::int64_t end = ev_.eval_int(series->end, scopes(br));
      for (std::int64_t i = series->start; i <= end; ++i) out.push_back(Value::integer(i));
    } else {
      Value g = ev_.eval(std::get<Expr>(loop.generator), scopes(br));
      if (g.k == Value::K::Tuple) {
        out = g.elems;
      } else if (g.k == Value::K::Repeaters) {
        for (std::size_t i = 0; i < ev_.topo().count(); ++i) out.push_back(Value::repeater(i));
      } else {
        throw CodegenError(std::get<Expr>(loop.generator).span, "for generator is not iterable");
      }
    }
    return out;
  }

  void lower_send(const Send& send, const Span& span, Branch& br) {
    const auto* call = std::get_if<FnCall>(&send.call.node);
    if (!call) throw CodegenError(send.call.span, "send requires one of update/free/meas/transfer");
    Value dest = ev_.eval(send.destination, scopes(br));
    if (dest.k != Value::K::Repeater) throw CodegenError(send.destination.span, "send destination must be a Repeater");
    if (dest.rep == owner_) throw CodegenError(span, "send to self");
    SendRec rec;
    rec.partner = dest.rep;
    ir::SendAction action;
    action.partner_addr = addr(dest.rep);
    if (call->name == "update") {
      if (call->args.size() != 2) throw CodegenError(send.call.span, "update takes 2 arguments");
      const std::uint64_t q = qubit_slot(call->args[0], br);
      Value gate = expect(call->args[1], br, Value::K::Gate, "update correction");
      rec.kind = ir::MessageKind::Update;
      rec.op = std::string(ir::to_string(gate.gate));
      action.payload = std::map<std::string, std::string>{{"op", rec.op}, {"qubit", std::to_string(q)}};
    } else if (call->name == "meas") {
      if (call->args.size() != 2) throw CodegenError(send.call.span, "meas takes 2 arguments");
      const std::uint64_t q = qubit_slot(call->args[0], br);
      Value result = expect(call->args[1], br, Value::K::Result, "meas result");
      rec.kind = ir::MessageKind::Meas;
      const auto* lit = std::get_if<Literal>(&call->args[1].node);
      rec.alias = lit && lit->kind == Literal::Kind::Ident ? lit->text : cmp_val_of(result);
      action.payload =
          std::map<std::string, std::string>{{"qubit", std::to_string(q)}, {"result", cmp_val_of(result)}};
    } else if (call->name == "transfer" || call->name == "free") {
      if (call->args.size() != 1) throw CodegenError(send.call.span, call->name + " takes 1 argument");
      const std::uint64_t q = qubit_slot(call->args[0], br);
      rec.kind = call->name == "transfer" ? ir::MessageKind::Transfer : ir::MessageKind::Free;
      if (rec.kind == ir::MessageKind::Free) br.freed.insert(q);
    } else {
      throw CodegenError(send.call.span, "send requires one of update/free/meas/transfer");
    }
    action.message = rec.kind;
    br.actions.push_back(std::move(action));
    rec.clause = br.actions.size() - 1;
    br.sends.push_back(rec);
  }

  std::vector<Branch> exec_match(const Match& m, Branch br) {
    Value scrutinee = ev_.eval(m.scrutinee, scopes(br));
    if (scrutinee.k != Value::K::Result) {
      throw CodegenError(m.scrutinee.span, "match on a non-runtime value (must be Result or Message-derived)");
    }
    const std::string cmp_val = cmp_val_of(scrutinee);
    std::vector<Branch> out;
    for (const auto& arm : m.arms) {
      Value lit = ev_.eval(arm.condition, scopes(br));
      if (lit.k != Value::K::Str) throw CodegenError(arm.condition.span, "match arm must be a string literal");
      Branch child = br;
      child.cmps.push_back(ir::CmpClause{cmp_val, ir::CmpOp::Eq, target_of(lit, arm.condition.span)});
      for (auto& b : exec_block(arm.body, {std::move(child)})) out.push_back(std::move(b));
    }
    if (m.otherwise) {
      for (auto& b : exec_block(*m.otherwise, {br})) out.push_back(std::move(b));
    }
    return out;
  }

  // nullopt when the condition is decided at compile time; *decided says which way.
  std::optional<ir::CmpClause> lower_if_condition(const Expr& cond, const Branch& br, bool& decided) const {
    if (const auto* comp = std::get_if<Comp>(&cond.node)) {
      Value l = ev_.eval(*comp->lhs, scopes(br));
      Value r = ev_.eval(*comp->rhs, scopes(br));
      if (l.k == Value::K::Result || r.k == Value::K::Result) {
        CompOp op = comp->op;
        if (l.k != Value::K::Result || (l.rk == ResultKind::Var && r.k == Value::K::Result && r.rk != ResultKind::Var)) {
          std::swap(l, r);
          op = mirror(op);
        }
        if (r.k == Value::K::Result && r.rk != ResultKind::Var) {
          throw CodegenError(cond.span, "comparing two measurement results is not supported");
        }
        return ir::CmpClause{cmp_val_of(l), to_ir(op), target_of(r, cond.span)};
      }
    }
    decided = ev_.eval_bool(cond, scopes(br));
    return std::nullopt;
  }

  std::vector<Branch> exec_if(const If& node, Branch br) {
    std::vector<std::pair<const Expr*, const Block*>> arms;
    arms.emplace_back(&node.cond, &node.then);
    for (const auto& e : node.elifs) arms.emplace_back(&e.cond, &e.body);

    std::vector<Branch> out;
    for (const auto& [cond, body] : arms) {
      bool decided = false;
      auto cmp = lower_if_condition(*cond, br, decided);
      if (!cmp) {
        if (!decided) continue;
        for (auto& b : exec_block(*body, {br})) out.push_back(std::move(b));
        return out;
      }
      Branch child = br;
      child.cmps.push_back(*cmp);
      for (auto& b : exec_block(*body, {std::move(child)})) out.push_back(std::move(b));
    }
    const Block empty;
    for (auto& b : exec_block(node.else_ ? *node.else_ : empty, {std::move(br)})) out.push_back(std::move(b));
    return out;
  }
};

struct HandlerKey {
  ir::MessageKind kind;
  std::string op;
  std::string alias;
  bool operator<(const HandlerKey& o) const { return std::tie(kind, op, alias) < std::tie(o.kind, o.op, o.alias); }
  bool operator==(const HandlerKey& o) const { return kind == o.kind && op == o.op && alias == o.alias; }
};

std::string lower(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

ir::RuleIR handler_rule(const std::string& base, const HandlerKey& key, ir::Address owner) {
  ir::RuleIR r;
  r.name = base + "_" + lower(ir::to_string(key.kind)) + (key.op.empty() ? "" : "_" + lower(key.op));
  r.condition.clauses.push_back(ir::ResClause{1, 0.0, owner, 0});
  r.condition.clauses.push_back(ir::RecvClause{owner});
  r.condition.clauses.push_back(ir::CmpClause{"message.kind", ir::CmpOp::Eq, ir::TaggedValue::message_kind(key.kind)});
  switch (key.kind) {
    case ir::MessageKind::Update: {
      r.condition.clauses.push_back(ir::CmpClause{"message.op", ir::CmpOp::Eq, ir::TaggedValue::str(key.op)});
      auto gate = ir::parse_gate_kind(key.op).value_or(ir::GateKind::X);
      r.action.clauses.push_back(ir::QCircAction{{ir::QGate{{0}, gate}}});
      break;
    }
    case ir::MessageKind::Free: r.action.clauses.push_back(ir::FreeAction{{0}}); break;
    case ir::MessageKind::Transfer: r.action.clauses.push_back(ir::PromoteAction{{0}}); break;
    case ir::MessageKind::Meas: r.action.clauses.push_back(ir::SetAction{"message.result", key.alias}); break;
  }
  return r;
}

class Compiler {
 public:
  Compiler(const Program& program, const Topology& topo, std::uint64_t id)
      : prog_(program), topo_(topo), ev_(topo), id_(id) {
    for (const auto& r : prog_.rules) rules_.emplace(r.name, &r);
  }

  CompiledOutput run() {
    CompiledOutput out;
    out.ruleset_id = id_;
    out.name = prog_.ruleset ? prog_.ruleset->name : std::string();
    if (!prog_.ruleset) {
      diag(Span{}, "program has no ruleset statement");
    } else {
      Scope top;
      exec_block(prog_.ruleset->body, top);
    }
    for (const auto& rep : topo_.repeaters()) {
      ir::RuleSetIR rs;
      rs.name = out.name;
      rs.id = id_;
      rs.owner_addr = rep.address;
      out.per_node.emplace(rep.address, std::move(rs));
    }
    if (diags_.empty()) layout(out);
    out.diagnostics = std::move(diags_);
    return out;
  }

 private:
  const Program& prog_;
  const Topology& topo_;
  Evaluator ev_;
  std::uint64_t id_;
  std::map<std::string, const RuleStmt*> rules_;
  std::vector<Instance> instances_;
  std::vector<Diagnostic> diags_;
  std::set<std::pair<std::size_t, std::string>> seen_;

  void diag(const Span& span, const std::string& message, const std::string& file = {}) {
    const std::string f = file.empty() ? prog_.file : file;
    if (!seen_.insert({span.byte_start, f + "\n" + message}).second) return;
    for (const auto& d : diags_) {
      if (d.file == f && d.span == span) return;
    }
    diags_.push_back({Diagnostic::Severity::Error, "codegen", span, message, f});
  }

  void exec_block(const Block& block, Scope& scope) {
    for (const auto& stmt : block) exec_stmt(stmt, scope);
  }

  void exec_stmt(const Stmt& stmt, Scope& scope) {
    try {
      if (const auto* let = std::get_if<Let>(&stmt.node)) {
        Value v = std::holds_alternative<RuleCall>(let->value.node) ? call_rule(let->value, scope)
                                                                     : ev_.eval(let->value, {&scope});
        if (let->bindings.size() == 1) {
          scope[let->bindings[0].name] = v;
        } else {
          for (std::size_t i = 0; i < let->bindings.size(); ++i) {
            scope[let->bindings[i].name] = v.k == Value::K::Tuple && i < v.elems.size() ? v.elems[i] : Value{};
          }
        }
      } else if (const auto* es = std::get_if<ExprStmt>(&stmt.node)) {
        if (!std::holds_alternative<RuleCall>(es->expr.node)) {
          throw CodegenError(stmt.span, "only rule calls may appear as ruleset statements");
        }
        call_rule(es->expr, scope);
      } else if (const auto* loop = std::get_if<For>(&stmt.node)) {
        std::vector<Value> values;
        if (const auto* series = std::get_if<Series>(&loop->generator)) {
          const std::int64_t end = ev_.eval_int(series->end, {&scope});
          for (std::int64_t i = series->start; i <= end; ++i) values.push_back(Value::integer(i));
        } else {
          Value g = ev_.eval(std::get<Expr>(loop->generator), {&scope});
          if (g.k == Value::K::Tuple) {
            values = g.elems;
          } else if (g.k == Value::K::Repeaters) {
            for (std::size_t i = 0; i < topo_.count(); ++i) values.push_back(Value::repeater(i));
          } else {
            throw CodegenError(std::get<Expr>(loop->generator).span, "for generator is not iterable");
          }
        }
        for (const auto& v : values) {
          Scope inner = scope;
          if (loop->vars.size() == 1) {
            inner[loop->vars[0]] = v;
          } else {
            for (std::size_t i = 0; i < loop->vars.size(); ++i) {
              inner[loop->vars[i]] = v.k == Value::K::Tuple && i < v.elems.size() ? v.elems[i] : Value{};
            }
          }
          exec_block(loop->body, inner);
        }
      } else if (const auto* cond = std::get_if<If>(&stmt.node)) {
        Scope inner = scope;
        if (ev_.eval_bool(cond->cond, {&scope})) {
          exec_block(cond->then, inner);
          return;
        }
        for (const auto& e : cond->elifs) {
          if (ev_.eval_bool(e.cond, {&scope})) {
            exec_block(e.body, inner);
            return;
          }
        }
        if (cond->else_) exec_block(*cond->else_, inner);
      } else {
        throw CodegenError(stmt.span, "statement not allowed in a ruleset body");
      }
    } catch (const CodegenError& err) {
      diag(err.span(), err.what());
    }
  }

  Value call_rule(const Expr& e, Scope& scope) {
    const auto& call = std::get<RuleCall>(e.node);
    auto it = rules_.find(call.name);
    if (it == rules_.end()) throw CodegenError(e.span, "unknown rule " + call.name);
    const RuleStmt& rule = *it->second;
    const Expr& index_expr = call.repeater_index.at(0);
    const std::int64_t index = ev_.eval_int(index_expr, {&scope});
    std::size_t owner = 0;
    try {
      owner = topo_.repeater_at(index).index;
    } catch (const ConfigError& err) {
      throw CodegenError(index_expr.span, err.what());
    }
    if (call.args.size() != rule.params.size()) {
      throw CodegenError(e.span, "rule " + call.name + " takes " + std::to_string(rule.params.size()) + " argument(s)");
    }
    std::vector<Value> args;
    for (std::size_t i = 0; i < call.args.size(); ++i) {
      Value v = ev_.eval(call.args[i], {&scope});
      if (v.k == Value::K::Qubit && v.owner != owner) {
        throw CodegenError(call.args[i].span, "qubit argument is held by repeater " +
                                                  topo_.repeaters()[v.owner].name + ", not by the callee's repeater " +
                                                  topo_.repeaters()[owner].name);
      }
      args.push_back(std::move(v));
    }
    try {
      RuleExpander expander(ev_, rule, owner, args, e.span);
      Instance inst = expander.expand();
      Value ret = inst.ret;
      instances_.push_back(std::move(inst));
      return ret;
    } catch (const CodegenError& err) {
      diag(err.span(), err.what(), rule.file);
      return Value{};
    }
  }

  // Bind every send to a Recv on the partner and place all stages.
  void layout(CompiledOutput& out) {
    const std::size_t n = instances_.size();
    std::set<std::pair<std::size_t, std::size_t>> claimed;  // (instance, claiming owner)
    std::vector<std::map<std::size_t, std::size_t>> bound(n);  // partner index -> instance
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<std::size_t> partners;
      for (const auto& s : instances_[i].sends) {
        if (std::find(partners.begin(), partners.end(), s.partner) == partners.end()) partners.push_back(s.partner);
      }
      for (std::size_t p : partners) {
        auto eligible = [&](std::size_t j) {
          const auto& cand = instances_[j];
          return cand.owner == p && !claimed.count({j, instances_[i].owner}) &&
                 std::find(cand.recv_partners.begin(), cand.recv_partners.end(), instances_[i].owner) !=
                     cand.recv_partners.end();
        };
        std::optional<std::size_t> pick;
        for (std::size_t j = i + 1; j < n && !pick; ++j) {
          if (eligible(j)) pick = j;
        }
        for (std::size_t j = 0; j < i && !pick; ++j) {
          if (eligible(j)) pick = j;
        }
        if (pick) {
          claimed.insert({*pick, instances_[i].owner});
          bound[i][p] = *pick;
        }
      }
    }

    struct Placed {
      ir::Address node;
      std::size_t stage;
    };
    std::vector<Placed> where(n);
    std::vector<std::map<std::size_t, Placed>> handler_stage(n);
    std::vector<std::map<std::size_t, std::vector<HandlerKey>>> handler_keys(n);
    auto addr = [&](std::size_t idx) { return topo_.repeaters()[idx].address; };

    for (std::size_t i = 0; i < n; ++i) {
      auto& inst = instances_[i];
      auto& owner_rs = out.per_node.at(addr(inst.owner));
      where[i] = {addr(inst.owner), owner_rs.stages.size()};
      owner_rs.stages.push_back(ir::StageIR{inst.rules});

      std::vector<std::size_t> partners;
      for (const auto& s : inst.sends) {
        if (!bound[i].count(s.partner) &&
            std::find(partners.begin(), partners.end(), s.partner) == partners.end()) {
          partners.push_back(s.partner);
        }
      }
      for (std::size_t p : partners) {
        std::vector<HandlerKey> keys;
        for (const auto& s : inst.sends) {
          if (s.partner != p) continue;
          HandlerKey key{s.kind, s.op, s.alias};
          if (std::find(keys.begin(), keys.end(), key) == keys.end()) keys.push_back(key);
        }
        ir::StageIR stage;
        for (const auto& key : keys) stage.rules.push_back(handler_rule(inst.rule->name, key, addr(inst.owner)));
        auto& partner_rs = out.per_node.at(addr(p));
        handler_stage[i][p] = {addr(p), partner_rs.stages.size()};
        handler_keys[i][p] = keys;
        partner_rs.stages.push_back(std::move(stage));
      }
    }

    for (auto& [address, rs] : out.per_node) {
      std::uint64_t id = 0;
      std::uint64_t tag = 0;
      for (auto& stage : rs.stages) {
        for (auto& rule : stage.rules) {
          rule.id = id++;
          rule.shared_tag = tag;
        }
        ++tag;
      }
    }

    for (std::size_t i = 0; i < n; ++i) {
      const auto& inst = instances_[i];
      const auto& owner_stage = out.per_node.at(where[i].node).stages[where[i].stage];
      for (const auto& s : inst.sends) {
        Obligation ob;
        ob.owner = addr(inst.owner);
        ob.send_rule_id = owner_stage.rules[s.rule_pos].id;
        ob.send_clause = s.clause;
        ob.partner = addr(s.partner);
        ob.kind = s.kind;
        if (auto b = bound[i].find(s.partner); b != bound[i].end()) {
          const auto& stage = out.per_node.at(where[b->second].node).stages[where[b->second].stage];
          for (const auto& rule : stage.rules) {
            bool has = std::any_of(rule.condition.clauses.begin(), rule.condition.clauses.end(), [&](const auto& c) {
              const auto* recv = std::get_if<ir::RecvClause>(&c);
              return recv && recv->partner_addr == ob.owner;
            });
            if (has) {
              ob.recv_rule_id = rule.id;
              break;
            }
          }
        } else {
          const Placed& place = handler_stage[i].at(s.partner);
          const auto& keys = handler_keys[i].at(s.partner);
          HandlerKey key{s.kind, s.op, s.alias};
          const std::size_t k = static_cast<std::size_t>(std::find(keys.begin(), keys.end(), key) - keys.begin());
          ob.recv_rule_id = out.per_node.at(place.node).stages[place.stage].rules.at(k).id;
          ob.synthesized = true;
        }
        out.obligations.push_back(ob);
      }
    }
  }
};

}  // namespace

std::int64_t eval_const(const Expr& expr, const std::map<std::string, std::int64_t>& env, std::size_t repeater_count) {
  std::vector<Repeater> reps;
  for (std::size_t i = 0; i < std::max<std::size_t>(repeater_count, 1); ++i) {
    reps.push_back(Repeater{"r" + std::to_string(i), static_cast<ir::Address>(i), i});
  }
  Topology topo(std::move(reps));
  Evaluator ev(topo);
  Scope scope;
  for (const auto& [k, v] : env) scope[k] = Value::integer(v);
  Value v = ev.eval(expr, {&scope});
  if (v.k == Value::K::Int) return v.i;
  if (v.k == Value::K::Bool) return v.b ? 1 : 0;
  throw CodegenError(expr.span, std::string("not a compile-time integer: ") + kind_name(v.k));
}

CompiledOutput compile(const Program& program, const Topology& topology, std::uint64_t ruleset_id) {
  Compiler compiler(program, topology, ruleset_id);
  return compiler.run();
}

std::size_t count_send_clauses(const CompiledOutput& out) {
  std::size_t n = 0;
  for (const auto& [addr, rs] : out.per_node) {
    for (const auto& stage : rs.stages) {
      for (const auto& rule : stage.rules) {
        n += static_cast<std::size_t>(std::count_if(rule.action.clauses.begin(), rule.action.clauses.end(),
                                                    [](const auto& c) { return std::holds_alternative<ir::SendAction>(c); }));
      }
    }
  }
  return n;
}

std::size_t count_unbound_recv(const CompiledOutput& out) {
  std::set<std::pair<ir::Address, std::uint64_t>> bound;
  for (const auto& ob : out.obligations) bound.insert({ob.partner, ob.recv_rule_id});
  std::size_t n = 0;
  for (const auto& [addr, rs] : out.per_node) {
    for (const auto& stage : rs.stages) {
      for (const auto& rule : stage.rules) {
        for (const auto& c : rule.condition.clauses) {
          if (!std::holds_alternative<ir::RecvClause>(c)) continue;
          if (!bound.count({addr, rule.id})) {
            // siblings of a bound rule in the same stage share the binding
            bool sibling = std::any_of(stage.rules.begin(), stage.rules.end(),
                                       [&](const ir::RuleIR& r) { return bound.count({addr, r.id}) > 0; });
            if (!sibling) ++n;
          }
        }
      }
    }
  }
  return n;
}

}  // namespace rula
