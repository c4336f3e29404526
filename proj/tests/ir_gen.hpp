#pragma once

// Random well-formed RuleSetIR values for round-trip properties.

#include <random>
#include <string>

#include "rula/ruleset_ir.hpp"

namespace rula::testing {

class IrGen {
 public:
  explicit IrGen(std::uint64_t seed) : rng_(seed) {}

  ir::RuleSetIR ruleset() {
    ir::RuleSetIR rs;
    rs.name = ident();
    rs.id = rng_();
    rs.owner_addr = upto(64);
    std::uint64_t next_id = 0;
    const auto stages = 1 + upto(3);
    for (std::uint64_t s = 0; s < stages; ++s) {
      ir::StageIR stage;
      const auto rules = 1 + upto(3);
      for (std::uint64_t r = 0; r < rules; ++r) stage.rules.push_back(rule(next_id++, s));
      rs.stages.push_back(std::move(stage));
    }
    return rs;
  }

 private:
  std::mt19937_64 rng_;

  std::uint64_t upto(std::uint64_t n) { return std::uniform_int_distribution<std::uint64_t>(0, n)(rng_); }
  bool coin() { return upto(1) == 1; }
  double unit() { return std::uniform_real_distribution<double>(0.0, 1.0)(rng_); }

  std::string ident() {
    static const char* alpha = "abcdefghijklmnopqrstuvwxyz_";
    std::string s(1, alpha[upto(25)]);
    for (auto n = upto(8); n > 0; --n) s += alpha[upto(26)];
    return s;
  }

  std::string text() {
    // includes characters that need escaping
    static const char* pool[] = {"a", "b", "0", "1", " ", "\"", "\\", "\n", "\t", "/", "xyz", "\xc3\xa9"};
    std::string s;
    for (auto n = upto(10); n > 0; --n) s += pool[upto(11)];
    return s;
  }

  std::string bits() {
    std::string s;
    for (auto n = 1 + upto(4); n > 0; --n) s += coin() ? '1' : '0';
    return s;
  }

  ir::TaggedValue tagged() {
    switch (upto(6)) {
      case 0: return ir::TaggedValue::meas_result(bits());
      case 1: return ir::TaggedValue::str(text());
      case 2: return ir::TaggedValue::integer(static_cast<std::int64_t>(rng_()));
      case 3: return ir::TaggedValue::floating(unit() * 1e6 - 5e5);
      case 4: return ir::TaggedValue::boolean(coin());
      case 5: return ir::TaggedValue::var(ident());
      default: return ir::TaggedValue::message_kind(static_cast<ir::MessageKind>(upto(3)));
    }
  }

  ir::ConditionClause condition() {
    switch (upto(3)) {
      case 0: return ir::ResClause{1 + upto(4), unit(), upto(64), upto(7)};
      case 1: return ir::CmpClause{coin() ? "MeasResult" : ident(), static_cast<ir::CmpOp>(upto(5)), tagged()};
      case 2: return ir::TimerClause{ident()};
      default: return ir::RecvClause{upto(64)};
    }
  }

  ir::ActionClause action() {
    switch (upto(6)) {
      case 0: return ir::SetTimerAction{ident(), upto(1000)};
      case 1: return ir::PromoteAction{{upto(7)}};
      case 2: return ir::FreeAction{{upto(7)}};
      case 3: return ir::SetAction{ident(), coin() ? std::optional<std::string>(ident()) : std::nullopt};
      case 4: return ir::MeasureAction{{upto(7)}, static_cast<ir::Basis>(upto(2))};
      case 5: {
        ir::QCircAction qc;
        for (auto n = upto(3); n > 0; --n) {
          if (coin()) {
            qc.qgates.push_back({{0}, ir::GateKind::CxControl});
            qc.qgates.push_back({{1}, ir::GateKind::CxTarget});
          } else {
            static const ir::GateKind single[] = {ir::GateKind::X, ir::GateKind::Y, ir::GateKind::Z, ir::GateKind::H};
            qc.qgates.push_back({{upto(7)}, single[upto(3)]});
          }
        }
        return qc;
      }
      default: {
        ir::SendAction s{static_cast<ir::MessageKind>(upto(3)), upto(64), std::nullopt};
        if (coin()) {
          std::map<std::string, std::string> p;
          for (auto n = upto(3); n > 0; --n) p[ident()] = text();
          s.payload = p;
        }
        return s;
      }
    }
  }

  ir::RuleIR rule(std::uint64_t id, std::uint64_t tag) {
    ir::RuleIR r;
    r.name = ident();
    r.id = id;
    r.shared_tag = tag;
    if (coin()) r.qnic_interfaces[ident()] = text();
    if (coin()) r.condition.name = ident();
    if (coin()) r.action.name = ident();
    for (auto n = upto(4); n > 0; --n) r.condition.clauses.push_back(condition());
    for (auto n = upto(5); n > 0; --n) r.action.clauses.push_back(action());
    r.is_finalized = coin();
    return r;
  }
};

}  // namespace rula::testing
