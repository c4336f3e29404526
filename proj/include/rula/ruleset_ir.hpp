#pragma once

// RuleSet instruction hierarchy: RuleSet -> Stage -> Rule -> Condition/Action
// clauses, with the canonical JSON encoding used on the wire.

#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace rula::ir {

using Address = std::uint64_t;

struct QubitId {
  std::uint64_t qubit_index = 0;
  bool operator==(const QubitId&) const = default;
};

enum class CmpOp { Eq, Neq, Lt, Leq, Gt, Geq };
enum class Basis { X, Y, Z };
enum class GateKind { X, Y, Z, H, CxControl, CxTarget, CzControl, CzTarget };
enum class MessageKind { Free, Update, Meas, Transfer };

std::string_view to_string(CmpOp op);
std::string_view to_string(Basis basis);
std::string_view to_string(GateKind kind);
std::string_view to_string(MessageKind kind);
std::optional<CmpOp> parse_cmp_op(std::string_view text);
std::optional<Basis> parse_basis(std::string_view text);
std::optional<GateKind> parse_gate_kind(std::string_view text);
std::optional<MessageKind> parse_message_kind(std::string_view text);

// Comparison target: a single-key object {"<kind>": value}.
//   MeasResult, Str, MessageKind, Var -> string payload
//   Int -> signed integer, Float -> number, Bool -> boolean
struct TaggedValue {
  enum class Kind { MeasResult, Str, Int, Float, Bool, Var, MessageKind };
  Kind kind = Kind::Str;
  std::variant<std::string, std::int64_t, double, bool> value;

  static TaggedValue meas_result(std::string bits);
  static TaggedValue str(std::string text);
  static TaggedValue integer(std::int64_t v);
  static TaggedValue floating(double v);
  static TaggedValue boolean(bool v);
  static TaggedValue var(std::string name);
  static TaggedValue message_kind(MessageKind kind);

  bool operator==(const TaggedValue&) const = default;
};
std::string_view to_string(TaggedValue::Kind kind);

struct ResClause {
  std::uint64_t count = 1;
  double fidelity = 0.0;
  Address partner_addr = 0;
  std::uint64_t qubit_index = 0;
  bool operator==(const ResClause&) const = default;
};
struct CmpClause {
  std::string cmp_val;
  CmpOp op = CmpOp::Eq;
  TaggedValue target_val;
  bool operator==(const CmpClause&) const = default;
};
struct TimerClause {
  std::string timer_id;
  bool operator==(const TimerClause&) const = default;
};
struct RecvClause {
  Address partner_addr = 0;
  bool operator==(const RecvClause&) const = default;
};
using ConditionClause = std::variant<ResClause, CmpClause, TimerClause, RecvClause>;

struct SetTimerAction {
  std::string timer_id;
  std::uint64_t duration = 0;
  bool operator==(const SetTimerAction&) const = default;
};
struct PromoteAction {
  QubitId qubit;
  bool operator==(const PromoteAction&) const = default;
};
struct FreeAction {
  QubitId qubit;
  bool operator==(const FreeAction&) const = default;
};
struct SetAction {
  std::string variable;
  std::optional<std::string> alias;
  bool operator==(const SetAction&) const = default;
};
struct MeasureAction {
  QubitId qubit;
  Basis basis = Basis::Z;
  bool operator==(const MeasureAction&) const = default;
};
struct QGate {
  QubitId qubit;
  GateKind kind = GateKind::X;
  bool operator==(const QGate&) const = default;
};
struct QCircAction {
  std::vector<QGate> qgates;
  bool operator==(const QCircAction&) const = default;
};
struct SendAction {
  MessageKind message = MessageKind::Free;
  Address partner_addr = 0;
  std::optional<std::map<std::string, std::string>> payload;
  bool operator==(const SendAction&) const = default;
};
using ActionClause = std::variant<SetTimerAction, PromoteAction, FreeAction, SetAction,
                                  MeasureAction, QCircAction, SendAction>;

struct ConditionIR {
  std::optional<std::string> name;
  std::vector<ConditionClause> clauses;
  bool operator==(const ConditionIR&) const = default;
};
struct ActionIR {
  std::optional<std::string> name;
  std::vector<ActionClause> clauses;
  bool operator==(const ActionIR&) const = default;
};

struct RuleIR {
  std::string name;
  std::uint64_t id = 0;
  std::uint64_t shared_tag = 0;
  std::map<std::string, std::string> qnic_interfaces;
  ConditionIR condition;
  ActionIR action;
  bool is_finalized = false;
  bool operator==(const RuleIR&) const = default;
};

struct StageIR {
  std::vector<RuleIR> rules;
  bool operator==(const StageIR&) const = default;
};

struct RuleSetIR {
  std::string name;
  std::uint64_t id = 0;
  Address owner_addr = 0;
  std::vector<StageIR> stages;

  std::size_t num_rules() const;
  bool operator==(const RuleSetIR&) const = default;
};

class IrError : public std::runtime_error {
 public:
  enum class Kind { Parse, Schema, Domain };
  IrError(Kind kind, std::string message, std::size_t byte_offset = 0)
      : std::runtime_error(std::move(message)), kind_(kind), byte_offset_(byte_offset) {}
  Kind kind() const noexcept { return kind_; }
  // Only meaningful for Kind::Parse.
  std::size_t byte_offset() const noexcept { return byte_offset_; }

 private:
  Kind kind_;
  std::size_t byte_offset_;
};

// Pretty-printed JSON (4-space indent), trailing newline, keys in declaration order.
std::string serialize(const RuleSetIR& ruleset);
// Throws IrError.
RuleSetIR deserialize(std::string_view text);

struct Finding {
  enum class Severity { Error, Warning };
  Severity severity = Severity::Error;
  std::string path;  // e.g. "stages[0].rules[1].condition.clauses[0]"
  std::string message;
};
std::vector<Finding> validate(const RuleSetIR& ruleset);

}  // namespace rula::ir
