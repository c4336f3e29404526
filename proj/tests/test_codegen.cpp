#include <gtest/gtest.h>

#include <random>
#include <set>

#include "rula/ruleset_ir.hpp"
#include "support.hpp"

using namespace rula;
using rula::testing::chain;
using rula::testing::compile_corpus;
using rula::testing::compile_text;

namespace {

std::vector<const ir::RuleIR*> rules_named(const ir::RuleSetIR& rs, const std::string& name) {
  std::vector<const ir::RuleIR*> out;
  for (const auto& st : rs.stages) {
    for (const auto& r : st.rules) {
      if (r.name == name) out.push_back(&r);
    }
  }
  return out;
}

const ir::StageIR* stage_with(const ir::RuleSetIR& rs, const std::string& name) {
  for (const auto& st : rs.stages) {
    if (!st.rules.empty() && st.rules[0].name == name) return &st;
  }
  return nullptr;
}

template <typename T>
std::vector<const T*> clauses_of(const std::vector<ir::ActionClause>& cs) {
  std::vector<const T*> out;
  for (const auto& c : cs) {
    if (auto* t = std::get_if<T>(&c)) out.push_back(t);
  }
  return out;
}

template <typename T>
std::vector<const T*> conds_of(const std::vector<ir::ConditionClause>& cs) {
  std::vector<const T*> out;
  for (const auto& c : cs) {
    if (auto* t = std::get_if<T>(&c)) out.push_back(t);
  }
  return out;
}

bool any_message(const CompiledOutput& out, const std::string& needle) {
  return std::any_of(out.diagnostics.begin(), out.diagnostics.end(),
                     [&](const Diagnostic& d) { return d.message.find(needle) != std::string::npos; });
}

// swap owners by brute force over the loop nest, inclusive ranges, truncating division
std::map<std::int64_t, std::set<std::int64_t>> swap_schedule(std::int64_t n) {
  std::map<std::int64_t, std::set<std::int64_t>> owners;
  for (std::int64_t d = 1; d <= n / 2; ++d) {
    for (std::int64_t i = 1; i <= n - 1; ++i) {
      if (i % (2 * d) == d) owners[d].insert(i);
    }
  }
  return owners;
}

}  // namespace

TEST(Codegen, FiveOutputsShareOneId) {
  auto out = compile_corpus("entanglement_swapping.rula", 5);
  ASSERT_TRUE(out.ok());
  ASSERT_EQ(out.per_node.size(), 5u);
  for (const auto& [addr, rs] : out.per_node) {
    EXPECT_EQ(rs.id, out.ruleset_id);
    EXPECT_EQ(rs.owner_addr, addr);
    EXPECT_EQ(rs.name, "entanglement_swapping");
    EXPECT_EQ(output_filename(rs), "entanglement_swapping_" + std::to_string(addr) + ".json");
  }
}

TEST(Codegen, SwapScheduleMatchesLoopOracle) {
  auto expected = swap_schedule(5);
  EXPECT_EQ(expected[1], (std::set<std::int64_t>{1, 3}));
  EXPECT_EQ(expected[2], (std::set<std::int64_t>{2}));
  auto out = compile_corpus("entanglement_swapping.rula", 5);
  ASSERT_TRUE(out.ok());
  std::set<std::int64_t> all;
  for (const auto& [d, owners] : expected) all.insert(owners.begin(), owners.end());
  for (const auto& [addr, rs] : out.per_node) {
    const bool swaps = !rules_named(rs, "swapping").empty();
    EXPECT_EQ(swaps, all.count(static_cast<std::int64_t>(addr)) > 0) << addr;
  }
  // node 2 swaps at distance 2: its Res partners are 0 and 4
  const auto& r = *rules_named(out.per_node.at(2), "swapping").at(0);
  auto res = conds_of<ir::ResClause>(r.condition.clauses);
  ASSERT_EQ(res.size(), 2u);
  EXPECT_EQ(res[0]->partner_addr, 0u);
  EXPECT_EQ(res[1]->partner_addr, 4u);
}

TEST(Codegen, SwappingExpandsToFiveRules) {
  auto out = compile_corpus("entanglement_swapping.rula", 3);
  ASSERT_TRUE(out.ok());
  const auto* stage = stage_with(out.per_node.at(1), "swapping");
  ASSERT_NE(stage, nullptr);
  ASSERT_EQ(stage->rules.size(), 5u);
  const char* arms[] = {"00", "01", "10", "11"};
  for (std::size_t i = 0; i < 5; ++i) {
    const auto& r = stage->rules[i];
    EXPECT_EQ(r.shared_tag, stage->rules[0].shared_tag);
    auto cmps = conds_of<ir::CmpClause>(r.condition.clauses);
    if (i < 4) {
      ASSERT_EQ(cmps.size(), 1u);
      EXPECT_EQ(cmps[0]->op, ir::CmpOp::Eq);
      EXPECT_EQ(cmps[0]->target_val, ir::TaggedValue::meas_result(arms[i]));
    } else {
      EXPECT_TRUE(cmps.empty());
    }
  }
  auto sends = clauses_of<ir::SendAction>(stage->rules[1].action.clauses);
  ASSERT_FALSE(sends.empty());
  EXPECT_EQ(sends[0]->message, ir::MessageKind::Update);
  EXPECT_EQ(sends[0]->partner_addr, 0u);
  ASSERT_TRUE(sends[0]->payload);
  EXPECT_EQ(sends[0]->payload->at("op"), "Z");
  // transfer follows every literal arm but not otherwise
  for (std::size_t i = 0; i < 5; ++i) {
    std::size_t transfers = 0, frees = 0;
    for (const auto* s : clauses_of<ir::SendAction>(stage->rules[i].action.clauses)) {
      transfers += s->message == ir::MessageKind::Transfer;
      frees += s->message == ir::MessageKind::Free;
    }
    EXPECT_EQ(transfers, i < 4 ? 2u : 0u);
    EXPECT_EQ(frees, i < 4 ? 0u : 2u);
  }
}

TEST(Codegen, ResLowering) {
  auto out = compile_corpus("entanglement_swapping.rula", 3);
  const auto& r = *rules_named(out.per_node.at(1), "swapping").at(0);
  auto res = conds_of<ir::ResClause>(r.condition.clauses);
  ASSERT_EQ(res.size(), 2u);
  EXPECT_EQ(*res[0], (ir::ResClause{1, 0.8, 0, 0}));
  EXPECT_EQ(*res[1], (ir::ResClause{1, 0.8, 2, 1}));
}

TEST(Codegen, BsmLowering) {
  auto out = compile_corpus("entanglement_swapping.rula", 3);
  const auto& acts = rules_named(out.per_node.at(1), "swapping").at(0)->action.clauses;
  ASSERT_GE(acts.size(), 3u);
  EXPECT_EQ(std::get<ir::QCircAction>(acts[0]),
            (ir::QCircAction{{{{0}, ir::GateKind::CxControl}, {{1}, ir::GateKind::CxTarget}}}));
  EXPECT_EQ(std::get<ir::MeasureAction>(acts[1]), (ir::MeasureAction{{0}, ir::Basis::X}));
  EXPECT_EQ(std::get<ir::MeasureAction>(acts[2]), (ir::MeasureAction{{1}, ir::Basis::Z}));
}

TEST(Codegen, UpdateHandlerSynthesized) {
  auto out = compile_corpus("entanglement_swapping.rula", 3);
  const auto& end = out.per_node.at(0);
  bool found = false;
  for (const auto& st : end.stages) {
    for (const auto& r : st.rules) {
      auto recv = conds_of<ir::RecvClause>(r.condition.clauses);
      auto gates = clauses_of<ir::QCircAction>(r.action.clauses);
      if (recv.size() == 1 && recv[0]->partner_addr == 1 && gates.size() == 1 &&
          gates[0]->qgates == std::vector<ir::QGate>{{{0}, ir::GateKind::Z}}) {
        found = true;
      }
    }
  }
  EXPECT_TRUE(found);
}

TEST(Codegen, TwoMatchesGiveSixteen) {
  auto out = compile_corpus("two_matches.rula", 3);
  ASSERT_TRUE(out.ok());
  const auto* stage = stage_with(out.per_node.at(1), "double_swap");
  ASSERT_NE(stage, nullptr);
  EXPECT_EQ(stage->rules.size(), 16u);
  for (const auto& r : stage->rules) EXPECT_EQ(r.shared_tag, stage->rules[0].shared_tag);
}

TEST(Codegen, NoBranchOneRule) {
  auto out = compile_corpus("for_loop.rula", 2);
  ASSERT_TRUE(out.ok());
  for (const auto& st : out.per_node.at(0).stages) EXPECT_EQ(st.rules.size(), 1u);
}

TEST(Codegen, InclusiveLoopRunsFiveTimes) {
  auto out = compile_corpus("for_loop.rula", 2);
  ASSERT_TRUE(out.ok());
  auto ticks = rules_named(out.per_node.at(0), "tick");
  ASSERT_EQ(ticks.size(), 5u);
  for (std::size_t i = 0; i < 5; ++i) {
    auto timers = clauses_of<ir::SetTimerAction>(ticks[i]->action.clauses);
    ASSERT_EQ(timers.size(), 1u);
    EXPECT_EQ(timers[0]->duration, i + 1);
  }
  auto cond = conds_of<ir::TimerClause>(ticks[0]->condition.clauses);
  ASSERT_EQ(cond.size(), 1u);
  EXPECT_EQ(cond[0]->timer_id, "start");
}

TEST(Codegen, EmptyRulesetGivesEmptyNodes) {
  auto out = compile_text("#repeaters: vec[Repeater]\n\nruleset s {}\n", chain(3));
  ASSERT_TRUE(out.ok());
  ASSERT_EQ(out.per_node.size(), 3u);
  for (const auto& [addr, rs] : out.per_node) EXPECT_TRUE(rs.stages.empty());
}

TEST(Codegen, IfElseChainThreeRules) {
  auto out = compile_corpus("if_listing.rula", 2);
  ASSERT_TRUE(out.ok());
  ASSERT_EQ(out.per_node.at(0).stages.size(), 1u);
  EXPECT_EQ(out.per_node.at(0).stages[0].rules.size(), 3u);
}

TEST(Codegen, MeasBindsExistingRecv) {
  auto out = compile_corpus("purification.rula", 3);
  ASSERT_TRUE(out.ok());
  std::size_t meas = 0;
  for (const auto& ob : out.obligations) {
    if (ob.kind != ir::MessageKind::Meas) continue;
    ++meas;
    EXPECT_FALSE(ob.synthesized);
    bool is_parity_check = false;
    for (const auto& st : out.per_node.at(ob.partner).stages) {
      for (const auto& r : st.rules) {
        if (r.id == ob.recv_rule_id) is_parity_check = r.name == "parity_check";
      }
    }
    EXPECT_TRUE(is_parity_check);
  }
  EXPECT_GT(meas, 0u);
}

TEST(Codegen, UnknownBasis) {
  const std::string src = R"(#repeaters: vec[Repeater]

import std::operation::measure

rule m<#rep>() {
    let partner: Repeater = #rep.hop(1)
    cond { @q: res(1, 0.5, partner, 0) } => act {
        let r: Result = measure(q, "W")
        free(q) -> partner
    }
}

ruleset s { m<#repeaters(0)>() }
)";
  auto out = compile_text(src, chain(3));
  EXPECT_FALSE(out.ok());
  EXPECT_TRUE(any_message(out, "unknown basis W"));
}

TEST(Codegen, SendToSelf) {
  const std::string src = R"(#repeaters: vec[Repeater]

rule f<#rep>() {
    let partner: Repeater = #rep.hop(1)
    let me: Repeater = #rep.hop(0)
    cond { @q: res(1, 0.5, partner, 0) } => act {
        free(q) -> me
    }
}

ruleset s { f<#repeaters(0)>() }
)";
  auto out = compile_text(src, chain(3));
  EXPECT_FALSE(out.ok());
  EXPECT_TRUE(any_message(out, "send to self"));
  EXPECT_TRUE(out.per_node.empty() || !out.ok());
}

TEST(Codegen, HopOutOfRangeHasSpan) {
  auto src = rula::testing::read_file(rula::testing::corpus("reject/hop_out_of_range.rula"));
  auto out = compile_text(src, chain(3));
  ASSERT_EQ(error_count(out.diagnostics), 1u);
  EXPECT_EQ(out.diagnostics[0].code, "codegen");
  EXPECT_EQ(out.diagnostics[0].span.line, 4);
}

TEST(Codegen, EvalConst) {
  auto p = parse_program("ruleset s {\n  for i in 1..(#repeaters.len()/2) { }\n  for j in 0..4 % 2 { }\n}\n");
  const auto& f1 = std::get<ast::For>(p.ruleset->body.at(0).node);
  EXPECT_EQ(eval_const(std::get<ast::Series>(f1.generator).end, {}, 5), 2);
  const auto& f2 = std::get<ast::For>(p.ruleset->body.at(1).node);
  EXPECT_EQ(eval_const(std::get<ast::Series>(f2.generator).end, {}, 5), 0);
}

TEST(Codegen, IdsSequentialPerNode) {
  for (const char* prog : {"entanglement_swapping.rula", "purification.rula", "link_purification.rula"}) {
    auto out = compile_corpus(prog, 5);
    ASSERT_TRUE(out.ok()) << prog;
    for (const auto& [addr, rs] : out.per_node) {
      std::uint64_t next = 0;
      for (const auto& st : rs.stages) {
        for (const auto& r : st.rules) EXPECT_EQ(r.id, next++) << prog << " node " << addr;
      }
      EXPECT_TRUE(ir::validate(rs).empty());
    }
  }
}

TEST(Codegen, DefaultIdDependsOnNameAndConfig) {
  EXPECT_EQ(default_ruleset_id("a", "x"), default_ruleset_id("a", "x"));
  EXPECT_NE(default_ruleset_id("a", "x"), default_ruleset_id("b", "x"));
  EXPECT_NE(default_ruleset_id("a", "x"), default_ruleset_id("a", "y"));
  EXPECT_NE(default_ruleset_id("ab", "c"), default_ruleset_id("a", "bc"));
}

TEST(Codegen, Deterministic) {
  for (std::size_t n : {3, 5}) {
    auto a = compile_corpus("purification.rula", n), b = compile_corpus("purification.rula", n);
    ASSERT_EQ(a.per_node.size(), b.per_node.size());
    for (const auto& [addr, rs] : a.per_node) EXPECT_EQ(ir::serialize(rs), ir::serialize(b.per_node.at(addr)));
  }
}

TEST(CodegenProperty, SendRecvBalanceOverCorpus) {
  for (const char* prog : {"entanglement_swapping.rula", "purification.rula", "link_purification.rula",
                           "two_matches.rula", "for_loop.rula", "if_listing.rula"}) {
    for (std::size_t n : {2, 3, 5, 7}) {
      auto out = compile_corpus(prog, n);
      if (!out.ok()) continue;
      EXPECT_EQ(count_send_clauses(out), out.obligations.size()) << prog << " " << n;
      EXPECT_EQ(count_unbound_recv(out), 0u) << prog << " " << n;
      EXPECT_EQ(out.per_node.size(), n);
    }
  }
}

// rules = product of arm counts (otherwise included), one shared tag
TEST(CodegenProperty, ExpansionIsProductOfArms) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 40; ++trial) {
    const int matches = 1 + static_cast<int>(rng() % 3);
    std::string body;
    std::size_t expected = 1;
    for (int m = 0; m < matches; ++m) {
      const int arms = 1 + static_cast<int>(rng() % 4);
      const bool otherwise = rng() % 2;
      body += "        let r" + std::to_string(m) + ": Result = measure(q" + std::to_string(m) + ", \"Z\")\n";
      body += "        match r" + std::to_string(m) + " {\n";
      for (int a = 0; a < arms; ++a) body += "            \"" + std::to_string(a % 2) + std::to_string(a / 2) + "\" => {},\n";
      if (otherwise) body += "            otherwise => {}\n";
      body += "        }\n";
      expected *= static_cast<std::size_t>(arms + (otherwise ? 1 : 0));
    }
    std::string cond;
    for (int m = 0; m < matches; ++m) {
      cond += "        @q" + std::to_string(m) + ": res(1, 0.5, partner, " + std::to_string(m) + ")\n";
    }
    const std::string src = "#repeaters: vec[Repeater]\n\nimport std::operation::measure\n\nrule e<#rep>() {\n"
                            "    let partner: Repeater = #rep.hop(1)\n    cond {\n" + cond + "    } => act {\n" + body +
                            "    }\n}\n\nruleset s { e<#repeaters(0)>() }\n";
    auto out = compile_text(src, chain(2));
    ASSERT_TRUE(out.ok()) << src << (out.diagnostics.empty() ? "" : render_diagnostic(out.diagnostics[0]));
    const auto& stage = out.per_node.at(0).stages.at(0);
    EXPECT_EQ(stage.rules.size(), expected) << src;
    for (const auto& r : stage.rules) EXPECT_EQ(r.shared_tag, stage.rules[0].shared_tag);
  }
}
