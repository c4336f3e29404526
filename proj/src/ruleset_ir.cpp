#include "rula/ruleset_ir.hpp"

#include <algorithm>
#include <array>
#include <initializer_list>
#include <set>
#include <utility>

#include <json.hpp>

namespace rula::ir {

using Json = nlohmann::ordered_json;

namespace {

template <typename Enum, std::size_t N>
std::optional<Enum> lookup(const std::array<std::pair<Enum, std::string_view>, N>& table,
                           std::string_view text) {
  for (const auto& [value, name] : table) {
    if (name == text) return value;
  }
  return std::nullopt;
}

template <typename Enum, std::size_t N>
std::string_view name_of(const std::array<std::pair<Enum, std::string_view>, N>& table,
                         Enum value) {
  for (const auto& [v, name] : table) {
    if (v == value) return name;
  }
  return "?";
}

constexpr std::array<std::pair<CmpOp, std::string_view>, 6> kCmpOps{{
    {CmpOp::Eq, "Eq"},
    {CmpOp::Neq, "Neq"},
    {CmpOp::Lt, "Lt"},
    {CmpOp::Leq, "Leq"},
    {CmpOp::Gt, "Gt"},
    {CmpOp::Geq, "Geq"},
}};
constexpr std::array<std::pair<Basis, std::string_view>, 3> kBases{{
    {Basis::X, "X"},
    {Basis::Y, "Y"},
    {Basis::Z, "Z"},
}};
constexpr std::array<std::pair<GateKind, std::string_view>, 8> kGates{{
    {GateKind::X, "X"},
    {GateKind::Y, "Y"},
    {GateKind::Z, "Z"},
    {GateKind::H, "H"},
    {GateKind::CxControl, "CxControl"},
    {GateKind::CxTarget, "CxTarget"},
    {GateKind::CzControl, "CzControl"},
    {GateKind::CzTarget, "CzTarget"},
}};
constexpr std::array<std::pair<MessageKind, std::string_view>, 4> kMessages{{
    {MessageKind::Free, "Free"},
    {MessageKind::Update, "Update"},
    {MessageKind::Meas, "Meas"},
    {MessageKind::Transfer, "Transfer"},
}};
constexpr std::array<std::pair<TaggedValue::Kind, std::string_view>, 7> kTagKinds{{
    {TaggedValue::Kind::MeasResult, "MeasResult"},
    {TaggedValue::Kind::Str, "Str"},
    {TaggedValue::Kind::Int, "Int"},
    {TaggedValue::Kind::Float, "Float"},
    {TaggedValue::Kind::Bool, "Bool"},
    {TaggedValue::Kind::Var, "Var"},
    {TaggedValue::Kind::MessageKind, "MessageKind"},
}};

// ---------------------------------------------------------------------------
// Encoding

Json qubit_json(const QubitId& q) {
  Json j = Json::object();
  j["qubit_index"] = q.qubit_index;
  return j;
}

Json optional_name(const std::optional<std::string>& name) {
  return name ? Json(*name) : Json(nullptr);
}

Json tagged_json(const TaggedValue& tv) {
  Json inner;
  std::visit([&](const auto& v) { inner = v; }, tv.value);
  Json j = Json::object();
  j[std::string(to_string(tv.kind))] = std::move(inner);
  return j;
}

struct ConditionEncoder {
  Json operator()(const ResClause& c) const {
    Json body = Json::object();
    body["count"] = c.count;
    body["fidelity"] = c.fidelity;
    body["partner_addr"] = c.partner_addr;
    body["qubit_index"] = c.qubit_index;
    return wrap("Res", std::move(body));
  }
  Json operator()(const CmpClause& c) const {
    Json body = Json::object();
    body["cmp_val"] = c.cmp_val;
    body["operator"] = std::string(to_string(c.op));
    body["target_val"] = tagged_json(c.target_val);
    return wrap("Cmp", std::move(body));
  }
  Json operator()(const TimerClause& c) const {
    Json body = Json::object();
    body["timer_id"] = c.timer_id;
    return wrap("Timer", std::move(body));
  }
  Json operator()(const RecvClause& c) const {
    Json body = Json::object();
    body["partner_addr"] = c.partner_addr;
    return wrap("Recv", std::move(body));
  }
  static Json wrap(const char* key, Json body) {
    Json j = Json::object();
    j[key] = std::move(body);
    return j;
  }
};

struct ActionEncoder {
  Json operator()(const SetTimerAction& a) const {
    Json body = Json::object();
    body["timer_id"] = a.timer_id;
    body["duration"] = a.duration;
    return ConditionEncoder::wrap("SetTimer", std::move(body));
  }
  Json operator()(const PromoteAction& a) const {
    Json body = Json::object();
    body["qubit_identifier"] = qubit_json(a.qubit);
    return ConditionEncoder::wrap("Promote", std::move(body));
  }
  Json operator()(const FreeAction& a) const {
    Json body = Json::object();
    body["qubit_identifier"] = qubit_json(a.qubit);
    return ConditionEncoder::wrap("Free", std::move(body));
  }
  Json operator()(const SetAction& a) const {
    Json body = Json::object();
    body["variable"] = a.variable;
    body["alias"] = optional_name(a.alias);
    return ConditionEncoder::wrap("Set", std::move(body));
  }
  Json operator()(const MeasureAction& a) const {
    Json body = Json::object();
    body["qubit_identifier"] = qubit_json(a.qubit);
    body["basis"] = std::string(to_string(a.basis));
    return ConditionEncoder::wrap("Measure", std::move(body));
  }
  Json operator()(const QCircAction& a) const {
    Json gates = Json::array();
    for (const auto& g : a.qgates) {
      Json gate = Json::object();
      gate["qubit_identifier"] = qubit_json(g.qubit);
      gate["kind"] = std::string(to_string(g.kind));
      gates.push_back(std::move(gate));
    }
    Json body = Json::object();
    body["qgates"] = std::move(gates);
    return ConditionEncoder::wrap("QCirc", std::move(body));
  }
  Json operator()(const SendAction& a) const {
    Json msg = Json::object();
    msg["partner_addr"] = a.partner_addr;
    if (a.payload) {
      Json payload = Json::object();
      for (const auto& [k, v] : *a.payload) payload[k] = v;
      msg["payload"] = std::move(payload);
    }
    Json body = Json::object();
    body[std::string(to_string(a.message))] = std::move(msg);
    return ConditionEncoder::wrap("Send", std::move(body));
  }
};

Json rule_json(const RuleIR& rule) {
  Json j = Json::object();
  j["name"] = rule.name;
  j["id"] = rule.id;
  j["shared_tag"] = rule.shared_tag;
  Json qnic = Json::object();
  for (const auto& [k, v] : rule.qnic_interfaces) qnic[k] = v;
  j["qnic_interfaces"] = std::move(qnic);

  Json cond = Json::object();
  cond["name"] = optional_name(rule.condition.name);
  Json cond_clauses = Json::array();
  for (const auto& c : rule.condition.clauses) cond_clauses.push_back(std::visit(ConditionEncoder{}, c));
  cond["clauses"] = std::move(cond_clauses);
  j["condition"] = std::move(cond);

  Json act = Json::object();
  act["name"] = optional_name(rule.action.name);
  Json act_clauses = Json::array();
  for (const auto& a : rule.action.clauses) act_clauses.push_back(std::visit(ActionEncoder{}, a));
  act["clauses"] = std::move(act_clauses);
  j["action"] = std::move(act);

  j["is_finalized"] = rule.is_finalized;
  return j;
}

// ---------------------------------------------------------------------------
// Decoding

[[noreturn]] void schema_error(const std::string& path, const std::string& what) {
  throw IrError(IrError::Kind::Schema, path.empty() ? what : path + ": " + what);
}

const Json& require_object(const Json& j, const std::string& path) {
  if (!j.is_object()) schema_error(path, "expected object");
  return j;
}

// Rejects keys outside `allowed`.
void check_keys(const Json& j, std::initializer_list<std::string_view> allowed,
                const std::string& path) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (std::find(allowed.begin(), allowed.end(), it.key()) == allowed.end()) {
      schema_error(path, "unknown key " + it.key());
    }
  }
}

const Json& field(const Json& j, const char* key, const std::string& path) {
  auto it = j.find(key);
  if (it == j.end()) schema_error(path, std::string("missing field ") + key);
  return *it;
}

std::uint64_t as_u64(const Json& j, const std::string& path) {
  if (!j.is_number_integer() || (j.is_number_integer() && !j.is_number_unsigned() &&
                                 j.get<std::int64_t>() < 0)) {
    schema_error(path, "expected unsigned integer");
  }
  return j.get<std::uint64_t>();
}

std::string as_string(const Json& j, const std::string& path) {
  if (!j.is_string()) schema_error(path, "expected string");
  return j.get<std::string>();
}

std::optional<std::string> as_optional_string(const Json& j, const std::string& path) {
  if (j.is_null()) return std::nullopt;
  return as_string(j, path);
}

// Single-key variant object: returns (key, body).
std::pair<std::string, const Json*> single_key(const Json& j, const std::string& path) {
  require_object(j, path);
  if (j.size() != 1) schema_error(path, "expected single-key variant object");
  return {j.begin().key(), &j.begin().value()};
}

QubitId qubit_from(const Json& j, const std::string& path) {
  require_object(j, path);
  check_keys(j, {"qubit_index"}, path);
  return QubitId{as_u64(field(j, "qubit_index", path), path + ".qubit_index")};
}

TaggedValue tagged_from(const Json& j, const std::string& path) {
  auto [key, body] = single_key(j, path);
  auto kind = lookup(kTagKinds, key);
  if (!kind) schema_error(path, "unknown variant key " + key);
  TaggedValue tv;
  tv.kind = *kind;
  switch (*kind) {
    case TaggedValue::Kind::Int:
      if (!body->is_number_integer()) schema_error(path, "expected integer");
      tv.value = body->get<std::int64_t>();
      break;
    case TaggedValue::Kind::Float:
      if (!body->is_number()) schema_error(path, "expected number");
      tv.value = body->get<double>();
      break;
    case TaggedValue::Kind::Bool:
      if (!body->is_boolean()) schema_error(path, "expected boolean");
      tv.value = body->get<bool>();
      break;
    default:
      tv.value = as_string(*body, path + "." + key);
  }
  return tv;
}

ConditionClause condition_from(const Json& j, const std::string& path) {
  auto [key, body] = single_key(j, path);
  const std::string p = path + "." + key;
  require_object(*body, p);
  if (key == "Res") {
    check_keys(*body, {"count", "fidelity", "partner_addr", "qubit_index"}, p);
    ResClause c;
    c.count = as_u64(field(*body, "count", p), p + ".count");
    const Json& f = field(*body, "fidelity", p);
    if (!f.is_number()) schema_error(p + ".fidelity", "expected number");
    c.fidelity = f.get<double>();
    if (!(c.fidelity >= 0.0 && c.fidelity <= 1.0)) {
      throw IrError(IrError::Kind::Domain, p + ".fidelity: fidelity out of range [0,1]");
    }
    c.partner_addr = as_u64(field(*body, "partner_addr", p), p + ".partner_addr");
    c.qubit_index = as_u64(field(*body, "qubit_index", p), p + ".qubit_index");
    return c;
  }
  if (key == "Cmp") {
    check_keys(*body, {"cmp_val", "operator", "target_val"}, p);
    CmpClause c;
    c.cmp_val = as_string(field(*body, "cmp_val", p), p + ".cmp_val");
    const std::string op = as_string(field(*body, "operator", p), p + ".operator");
    auto parsed = parse_cmp_op(op);
    if (!parsed) schema_error(p + ".operator", "unknown operator " + op);
    c.op = *parsed;
    c.target_val = tagged_from(field(*body, "target_val", p), p + ".target_val");
    return c;
  }
  if (key == "Timer") {
    check_keys(*body, {"timer_id"}, p);
    return TimerClause{as_string(field(*body, "timer_id", p), p + ".timer_id")};
  }
  if (key == "Recv") {
    check_keys(*body, {"partner_addr"}, p);
    return RecvClause{as_u64(field(*body, "partner_addr", p), p + ".partner_addr")};
  }
  schema_error(path, "unknown variant key " + key);
}

ActionClause action_from(const Json& j, const std::string& path) {
  auto [key, body] = single_key(j, path);
  const std::string p = path + "." + key;
  require_object(*body, p);
  if (key == "SetTimer") {
    check_keys(*body, {"timer_id", "duration"}, p);
    return SetTimerAction{as_string(field(*body, "timer_id", p), p + ".timer_id"),
                          as_u64(field(*body, "duration", p), p + ".duration")};
  }
  if (key == "Promote") {
    check_keys(*body, {"qubit_identifier"}, p);
    return PromoteAction{qubit_from(field(*body, "qubit_identifier", p), p + ".qubit_identifier")};
  }
  if (key == "Free") {
    check_keys(*body, {"qubit_identifier"}, p);
    return FreeAction{qubit_from(field(*body, "qubit_identifier", p), p + ".qubit_identifier")};
  }
  if (key == "Set") {
    check_keys(*body, {"variable", "alias"}, p);
    SetAction a;
    a.variable = as_string(field(*body, "variable", p), p + ".variable");
    a.alias = as_optional_string(field(*body, "alias", p), p + ".alias");
    return a;
  }
  if (key == "Measure") {
    check_keys(*body, {"qubit_identifier", "basis"}, p);
    MeasureAction a;
    a.qubit = qubit_from(field(*body, "qubit_identifier", p), p + ".qubit_identifier");
    const std::string basis = as_string(field(*body, "basis", p), p + ".basis");
    auto parsed = parse_basis(basis);
    if (!parsed) schema_error(p + ".basis", "unknown basis " + basis);
    a.basis = *parsed;
    return a;
  }
  if (key == "QCirc") {
    check_keys(*body, {"qgates"}, p);
    const Json& gates = field(*body, "qgates", p);
    if (!gates.is_array()) schema_error(p + ".qgates", "expected array");
    QCircAction a;
    for (std::size_t i = 0; i < gates.size(); ++i) {
      const std::string gp = p + ".qgates[" + std::to_string(i) + "]";
      require_object(gates[i], gp);
      check_keys(gates[i], {"qubit_identifier", "kind"}, gp);
      QGate g;
      g.qubit = qubit_from(field(gates[i], "qubit_identifier", gp), gp + ".qubit_identifier");
      const std::string kind = as_string(field(gates[i], "kind", gp), gp + ".kind");
      auto parsed = parse_gate_kind(kind);
      if (!parsed) schema_error(gp + ".kind", "unknown gate kind " + kind);
      g.kind = *parsed;
      a.qgates.push_back(g);
    }
    return a;
  }
  if (key == "Send") {
    auto [kind_key, msg] = single_key(*body, p);
    auto kind = parse_message_kind(kind_key);
    if (!kind) schema_error(p, "unknown variant key " + kind_key);
    const std::string mp = p + "." + kind_key;
    require_object(*msg, mp);
    check_keys(*msg, {"partner_addr", "payload"}, mp);
    SendAction a;
    a.message = *kind;
    a.partner_addr = as_u64(field(*msg, "partner_addr", mp), mp + ".partner_addr");
    if (auto it = msg->find("payload"); it != msg->end() && !it->is_null()) {
      require_object(*it, mp + ".payload");
      std::map<std::string, std::string> payload;
      for (auto pit = it->begin(); pit != it->end(); ++pit) {
        payload[pit.key()] = as_string(pit.value(), mp + ".payload." + pit.key());
      }
      a.payload = std::move(payload);
    }
    return a;
  }
  schema_error(path, "unknown variant key " + key);
}

RuleIR rule_from(const Json& j, const std::string& path) {
  require_object(j, path);
  check_keys(j, {"name", "id", "shared_tag", "qnic_interfaces", "condition", "action", "is_finalized"},
             path);
  RuleIR rule;
  rule.name = as_string(field(j, "name", path), path + ".name");
  rule.id = as_u64(field(j, "id", path), path + ".id");
  rule.shared_tag = as_u64(field(j, "shared_tag", path), path + ".shared_tag");
  if (auto it = j.find("qnic_interfaces"); it != j.end()) {
    require_object(*it, path + ".qnic_interfaces");
    for (auto q = it->begin(); q != it->end(); ++q) {
      rule.qnic_interfaces[q.key()] = as_string(q.value(), path + ".qnic_interfaces." + q.key());
    }
  }

  const std::string cp = path + ".condition";
  const Json& cond = require_object(field(j, "condition", path), cp);
  check_keys(cond, {"name", "clauses"}, cp);
  rule.condition.name = as_optional_string(field(cond, "name", cp), cp + ".name");
  const Json& cclauses = field(cond, "clauses", cp);
  if (!cclauses.is_array()) schema_error(cp + ".clauses", "expected array");
  for (std::size_t i = 0; i < cclauses.size(); ++i) {
    rule.condition.clauses.push_back(
        condition_from(cclauses[i], cp + ".clauses[" + std::to_string(i) + "]"));
  }

  const std::string ap = path + ".action";
  const Json& act = require_object(field(j, "action", path), ap);
  check_keys(act, {"name", "clauses"}, ap);
  rule.action.name = as_optional_string(field(act, "name", ap), ap + ".name");
  const Json& aclauses = field(act, "clauses", ap);
  if (!aclauses.is_array()) schema_error(ap + ".clauses", "expected array");
  for (std::size_t i = 0; i < aclauses.size(); ++i) {
    rule.action.clauses.push_back(
        action_from(aclauses[i], ap + ".clauses[" + std::to_string(i) + "]"));
  }

  const Json& fin = field(j, "is_finalized", path);
  if (!fin.is_boolean()) schema_error(path + ".is_finalized", "expected boolean");
  rule.is_finalized = fin.get<bool>();
  return rule;
}

}  // namespace

std::string_view to_string(CmpOp op) { return name_of(kCmpOps, op); }
std::string_view to_string(Basis basis) { return name_of(kBases, basis); }
std::string_view to_string(GateKind kind) { return name_of(kGates, kind); }
std::string_view to_string(MessageKind kind) { return name_of(kMessages, kind); }
std::string_view to_string(TaggedValue::Kind kind) { return name_of(kTagKinds, kind); }
std::optional<CmpOp> parse_cmp_op(std::string_view text) { return lookup(kCmpOps, text); }
std::optional<Basis> parse_basis(std::string_view text) { return lookup(kBases, text); }
std::optional<GateKind> parse_gate_kind(std::string_view text) { return lookup(kGates, text); }
std::optional<MessageKind> parse_message_kind(std::string_view text) {
  return lookup(kMessages, text);
}

TaggedValue TaggedValue::meas_result(std::string bits) {
  return {Kind::MeasResult, std::move(bits)};
}
TaggedValue TaggedValue::str(std::string text) { return {Kind::Str, std::move(text)}; }
TaggedValue TaggedValue::integer(std::int64_t v) { return {Kind::Int, v}; }
TaggedValue TaggedValue::floating(double v) { return {Kind::Float, v}; }
TaggedValue TaggedValue::boolean(bool v) { return {Kind::Bool, v}; }
TaggedValue TaggedValue::var(std::string name) { return {Kind::Var, std::move(name)}; }
TaggedValue TaggedValue::message_kind(MessageKind kind) {
  return {Kind::MessageKind, std::string(to_string(kind))};
}

std::size_t RuleSetIR::num_rules() const {
  std::size_t n = 0;
  for (const auto& s : stages) n += s.rules.size();
  return n;
}

std::string serialize(const RuleSetIR& ruleset) {
  Json j = Json::object();
  j["name"] = ruleset.name;
  j["id"] = ruleset.id;
  j["owner_addr"] = ruleset.owner_addr;
  Json stages = Json::array();
  for (const auto& stage : ruleset.stages) {
    Json rules = Json::array();
    for (const auto& rule : stage.rules) rules.push_back(rule_json(rule));
    Json s = Json::object();
    s["rules"] = std::move(rules);
    stages.push_back(std::move(s));
  }
  j["stages"] = std::move(stages);
  return j.dump(4) + "\n";
}

RuleSetIR deserialize(std::string_view text) {
  Json j;
  try {
    j = Json::parse(text.begin(), text.end());
  } catch (const nlohmann::json::parse_error& e) {
    throw IrError(IrError::Kind::Parse,
                  "malformed JSON at byte " + std::to_string(e.byte) + ": " + e.what(), e.byte);
  }
  require_object(j, "");
  check_keys(j, {"name", "id", "owner_addr", "stages"}, "");
  RuleSetIR rs;
  rs.name = as_string(field(j, "name", ""), "name");
  rs.id = as_u64(field(j, "id", ""), "id");
  rs.owner_addr = as_u64(field(j, "owner_addr", ""), "owner_addr");
  const Json& stages = field(j, "stages", "");
  if (!stages.is_array()) schema_error("stages", "expected array");
  for (std::size_t s = 0; s < stages.size(); ++s) {
    const std::string sp = "stages[" + std::to_string(s) + "]";
    require_object(stages[s], sp);
    check_keys(stages[s], {"rules"}, sp);
    const Json& rules = field(stages[s], "rules", sp);
    if (!rules.is_array()) schema_error(sp + ".rules", "expected array");
    StageIR stage;
    for (std::size_t r = 0; r < rules.size(); ++r) {
      stage.rules.push_back(rule_from(rules[r], sp + ".rules[" + std::to_string(r) + "]"));
    }
    rs.stages.push_back(std::move(stage));
  }
  return rs;
}

std::vector<Finding> validate(const RuleSetIR& ruleset) {
  std::vector<Finding> findings;
  auto error = [&](std::string path, std::string message) {
    findings.push_back({Finding::Severity::Error, std::move(path), std::move(message)});
  };

  std::set<std::uint64_t> seen_ids;
  std::uint64_t expected_id = 0;
  for (std::size_t s = 0; s < ruleset.stages.size(); ++s) {
    const auto& stage = ruleset.stages[s];
    const std::string sp = "stages[" + std::to_string(s) + "]";
    if (stage.rules.empty()) error(sp, "stage has no rules");
    for (std::size_t r = 0; r < stage.rules.size(); ++r) {
      const auto& rule = stage.rules[r];
      const std::string rp = sp + ".rules[" + std::to_string(r) + "]";
      if (!seen_ids.insert(rule.id).second) {
        error(rp + ".id", "duplicate rule id " + std::to_string(rule.id));
      } else if (rule.id != expected_id) {
        error(rp + ".id", "rule id " + std::to_string(rule.id) + " breaks sequential order (expected " +
                              std::to_string(expected_id) + ")");
      }
      ++expected_id;

      for (std::size_t c = 0; c < rule.condition.clauses.size(); ++c) {
        const std::string cp = rp + ".condition.clauses[" + std::to_string(c) + "]";
        if (const auto* res = std::get_if<ResClause>(&rule.condition.clauses[c])) {
          if (!(res->fidelity >= 0.0 && res->fidelity <= 1.0)) error(cp, "fidelity out of range");
          if (res->count < 1) error(cp, "resource count must be at least 1");
        }
      }
      for (std::size_t a = 0; a < rule.action.clauses.size(); ++a) {
        const auto* circ = std::get_if<QCircAction>(&rule.action.clauses[a]);
        if (!circ) continue;
        const std::string ap = rp + ".action.clauses[" + std::to_string(a) + "]";
        int cx = 0, cz = 0;
        for (const auto& g : circ->qgates) {
          if (g.kind == GateKind::CxControl) ++cx;
          if (g.kind == GateKind::CxTarget) --cx;
          if (g.kind == GateKind::CzControl) ++cz;
          if (g.kind == GateKind::CzTarget) --cz;
        }
        if (cx != 0) error(ap, "unpaired CxControl/CxTarget gate");
        if (cz != 0) error(ap, "unpaired CzControl/CzTarget gate");
      }
    }
  }
  return findings;
}

}  // namespace rula::ir
