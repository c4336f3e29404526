#include <gtest/gtest.h>

#include <json.hpp>

#include "ir_gen.hpp"
#include "rula/ruleset_ir.hpp"
#include "support.hpp"

using namespace rula;
using rula::testing::corpus;
using rula::testing::read_file;

TEST(RulesetIr, ListingDeserializes) {
  auto rs = ir::deserialize(read_file(corpus("ruleset_listing.json")));
  EXPECT_EQ(rs.name, "entanglement_swapping");
  EXPECT_EQ(rs.id, 9876543210u);
  EXPECT_EQ(rs.owner_addr, 1u);
  ASSERT_EQ(rs.stages.size(), 1u);
  const auto& rule = rs.stages[0].rules.at(0);
  EXPECT_EQ(rule.name, "swapping");
  std::size_t qcirc = 0, meas = 0, send = 0;
  for (const auto& a : rule.action.clauses) {
    if (auto* q = std::get_if<ir::QCircAction>(&a)) {
      ++qcirc;
      EXPECT_EQ(q->qgates.size(), 2u);
    }
    meas += std::holds_alternative<ir::MeasureAction>(a);
    send += std::holds_alternative<ir::SendAction>(a);
  }
  EXPECT_EQ(qcirc, 1u);
  EXPECT_EQ(meas, 2u);
  EXPECT_EQ(send, 2u);
  EXPECT_TRUE(ir::validate(rs).empty());
}

TEST(RulesetIr, ListingRoundTripIsStructural) {
  const auto text = read_file(corpus("ruleset_listing.json"));
  auto rs = ir::deserialize(text);
  EXPECT_EQ(ir::deserialize(ir::serialize(rs)), rs);
  EXPECT_EQ(nlohmann::json::parse(ir::serialize(rs)), nlohmann::json::parse(text));
}

TEST(RulesetIr, CmpFragment) {
  auto rs = ir::deserialize(R"({"name":"n","id":1,"owner_addr":0,"stages":[{"rules":[{"name":"r","id":0,
    "shared_tag":0,"qnic_interfaces":{},"condition":{"name":null,"clauses":[
    {"Cmp":{"cmp_val":"MeasResult","operator":"Eq","target_val":{"MeasResult":"00"}}}]},
    "action":{"name":null,"clauses":[]},"is_finalized":false}]}]})");
  const auto& cmp = std::get<ir::CmpClause>(rs.stages[0].rules[0].condition.clauses[0]);
  EXPECT_EQ(cmp.cmp_val, "MeasResult");
  EXPECT_EQ(cmp.op, ir::CmpOp::Eq);
  EXPECT_EQ(cmp.target_val, ir::TaggedValue::meas_result("00"));
}

TEST(RulesetIr, TopLevelKeyOrder) {
  ir::RuleSetIR rs{"entanglement_swapping", 9876543210, 1, {}};
  auto text = ir::serialize(rs);
  EXPECT_EQ(text, "{\n    \"name\": \"entanglement_swapping\",\n    \"id\": 9876543210,\n    \"owner_addr\": 1,\n"
                  "    \"stages\": []\n}\n");
}

TEST(RulesetIr, MissingNameIsSchemaError) {
  try {
    ir::deserialize(R"({"stages":[]})");
    FAIL();
  } catch (const ir::IrError& e) {
    EXPECT_EQ(e.kind(), ir::IrError::Kind::Schema);
    EXPECT_NE(std::string(e.what()).find("missing field name"), std::string::npos);
  }
}

TEST(RulesetIr, MalformedJsonIsParseError) {
  try {
    ir::deserialize("{\"name\": ");
    FAIL();
  } catch (const ir::IrError& e) {
    EXPECT_EQ(e.kind(), ir::IrError::Kind::Parse);
  }
}

TEST(RulesetIr, UnknownVariantKeyRejected) {
  auto text = read_file(corpus("ruleset_listing.json"));
  text.replace(text.find("\"Cmp\""), 5, "\"Cmq\"");
  EXPECT_THROW(ir::deserialize(text), ir::IrError);
}

TEST(RulesetIr, ValidateDuplicateId) {
  auto rs = ir::deserialize(read_file(corpus("ruleset_listing.json")));
  rs.stages[0].rules.push_back(rs.stages[0].rules[0]);
  auto findings = ir::validate(rs);
  ASSERT_FALSE(findings.empty());
  EXPECT_NE(findings[0].message.find("duplicate rule id 0"), std::string::npos);
}

TEST(RulesetIr, ValidateFidelityRange) {
  auto rs = ir::deserialize(read_file(corpus("ruleset_listing.json")));
  rs.stages[0].rules[0].condition.clauses.push_back(ir::ResClause{1, 1.5, 0, 0});
  auto findings = ir::validate(rs);
  ASSERT_EQ(findings.size(), 1u);
  EXPECT_NE(findings[0].message.find("fidelity out of range"), std::string::npos);
}

TEST(RulesetIr, ValidateUnpairedCx) {
  auto rs = ir::deserialize(read_file(corpus("ruleset_listing.json")));
  rs.stages[0].rules[0].action.clauses.push_back(ir::QCircAction{{{{0}, ir::GateKind::CxControl}}});
  EXPECT_FALSE(ir::validate(rs).empty());
}

TEST(RulesetIr, ValidateEmptyStage) {
  ir::RuleSetIR rs{"n", 1, 0, {ir::StageIR{}}};
  EXPECT_FALSE(ir::validate(rs).empty());
}

TEST(RulesetIr, QnicInterfacesPreserved) {
  ir::RuleSetIR rs{"n", 1, 0, {ir::StageIR{{ir::RuleIR{}}}}};
  rs.stages[0].rules[0].qnic_interfaces = {{"qnic0", "left"}, {"qnic1", "right"}};
  EXPECT_EQ(ir::deserialize(ir::serialize(rs)), rs);
}

TEST(RulesetIrProperty, RandomValuesRoundTripByteStable) {
  rula::testing::IrGen gen(20261015);
  for (int i = 0; i < 200; ++i) {
    auto rs = gen.ruleset();
    const auto once = ir::serialize(rs);
    auto back = ir::deserialize(once);
    ASSERT_EQ(back, rs) << "value " << i;
    ASSERT_EQ(ir::serialize(back), once) << "value " << i;
  }
}

TEST(RulesetIrProperty, RandomValuesValidate) {
  rula::testing::IrGen gen(7);
  for (int i = 0; i < 200; ++i) EXPECT_TRUE(ir::validate(gen.ruleset()).empty());
}

TEST(RulesetIrProperty, VariantClosure) {
  static const std::set<std::string> conds{"Res", "Cmp", "Timer", "Recv"};
  static const std::set<std::string> acts{"SetTimer", "Promote", "Free", "Set", "Measure", "QCirc", "Send"};
  rula::testing::IrGen gen(99);
  for (int i = 0; i < 100; ++i) {
    auto j = nlohmann::json::parse(ir::serialize(gen.ruleset()));
    for (const auto& stage : j["stages"]) {
      for (const auto& rule : stage["rules"]) {
        for (const auto& c : rule["condition"]["clauses"]) {
          ASSERT_EQ(c.size(), 1u);
          EXPECT_TRUE(conds.count(c.begin().key())) << c.begin().key();
        }
        for (const auto& a : rule["action"]["clauses"]) {
          ASSERT_EQ(a.size(), 1u);
          EXPECT_TRUE(acts.count(a.begin().key())) << a.begin().key();
        }
      }
    }
  }
}

TEST(RulesetIr, CompiledCorpusRoundTrips) {
  for (std::size_t n : {3, 5}) {
    auto out = rula::testing::compile_corpus("entanglement_swapping.rula", n);
    ASSERT_TRUE(out.ok());
    for (const auto& [addr, rs] : out.per_node) {
      const auto text = ir::serialize(rs);
      EXPECT_EQ(ir::serialize(ir::deserialize(text)), text);
      EXPECT_TRUE(ir::validate(rs).empty()) << addr;
    }
  }
}
