#include <gtest/gtest.h>

#include "rula/parser.hpp"
#include "support.hpp"

using namespace rula;
using rula::testing::corpus;
using rula::testing::read_file;

namespace {

ast::Program parse(const std::string& src) { return parse_program(src, "t.rula"); }

const ast::Block& act_of(const ast::Program& p) { return p.rules.at(0).act.body; }

ParseError parse_error(const std::string& src) {
  try {
    parse(src);
  } catch (const ParseFailure& e) {
    return e.error();
  }
  ADD_FAILURE() << "parsed: " << src;
  return {};
}

const ast::Literal& lit(const ast::Expr& e) { return std::get<ast::Literal>(e.node); }

std::string in_act(const std::string& body) {
  return "rule r<#rep>() {\n  cond { check_timer(\"t\") } => act {\n    " + body + "\n  }\n}\n";
}

}  // namespace

TEST(Parser, NegativeLet) {
  auto p = parse(in_act("let x: int = -10"));
  const auto& let = std::get<ast::Let>(act_of(p).at(0).node);
  ASSERT_EQ(let.bindings.size(), 1u);
  EXPECT_EQ(let.bindings[0].name, "x");
  EXPECT_EQ(let.bindings[0].type, ast::Type::of(ast::Type::Kind::Int));
  EXPECT_EQ(lit(let.value).kind, ast::Literal::Kind::Int);
  EXPECT_EQ(lit(let.value).int_value, -10);
}

TEST(Parser, InclusiveSeriesShape) {
  auto p = parse("ruleset s {\n  for i in 1..5 { }\n}\n");
  ASSERT_TRUE(p.ruleset);
  const auto& f = std::get<ast::For>(p.ruleset->body.at(0).node);
  EXPECT_EQ(f.vars, std::vector<std::string>{"i"});
  const auto& series = std::get<ast::Series>(f.generator);
  EXPECT_EQ(series.start, 1);
  EXPECT_EQ(lit(series.end).int_value, 5);
  EXPECT_TRUE(f.body.empty());
}

TEST(Parser, SwappingProgram) {
  auto p = parse_program(read_file(corpus("entanglement_swapping.rula")));
  EXPECT_TRUE(p.has_repeaters_decl);
  ASSERT_EQ(p.imports.size(), 1u);
  ASSERT_TRUE(p.imports[0].terminal_list);
  EXPECT_EQ(p.imports[0].terminal_list->size(), 3u);
  ASSERT_EQ(p.rules.size(), 1u);
  EXPECT_EQ(p.rules[0].name, "swapping");
  EXPECT_EQ(p.rules[0].repeater_ident, "rep");
  EXPECT_EQ(p.rules[0].lets.size(), 2u);
  EXPECT_EQ(p.rules[0].cond.clauses.size(), 2u);
  ASSERT_TRUE(p.ruleset);
  EXPECT_EQ(p.ruleset->name, "entanglement_swapping");
}

TEST(Parser, RuleImport) {
  auto p = parse_program(read_file(corpus("purification.rula")));
  bool found = false;
  for (const auto& imp : p.imports) {
    if (imp.is_rule_import) {
      found = true;
      EXPECT_EQ(imp.path, (std::vector<std::string>{"entanglement_swapping", "swapping"}));
    }
  }
  EXPECT_TRUE(found);
}

TEST(Parser, EveryCorpusProgramParses) {
  for (const auto& entry : std::filesystem::directory_iterator(RULA_CORPUS_DIR)) {
    if (entry.path().extension() != ".rula") continue;
    EXPECT_NO_THROW(parse_program(read_file(entry.path()), entry.path().string())) << entry.path();
  }
}

TEST(Parser, UnterminatedRuleFailsAtEnd) {
  const std::string src = "rule r<#rep>() {\n  cond { check_timer(\"t\") } => act { }\n";
  auto err = parse_error(src);
  EXPECT_EQ(err.span.byte_start, src.size());
  EXPECT_NE(std::find(err.expected.begin(), err.expected.end(), "\"}\""), err.expected.end());
}

TEST(Parser, OpenBraceOnlyFailsAtEnd) {
  const std::string src = "rule r<#rep>() {";
  auto err = parse_error(src);
  EXPECT_EQ(err.span.byte_start, src.size());
}

TEST(Parser, BinaryAndHexLiterals) {
  auto p = parse(in_act("let a: int = 0b1001011\n    let b: int = 0x13ed232"));
  EXPECT_EQ(lit(std::get<ast::Let>(act_of(p).at(0).node).value).int_value, 75);
  EXPECT_EQ(lit(std::get<ast::Let>(act_of(p).at(1).node).value).int_value, std::stoll("13ed232", nullptr, 16));
}

TEST(Parser, IntegerLimits) {
  auto p = parse(in_act("let a: int = 9223372036854775807\n    let b: int = -9223372036854775808"));
  EXPECT_EQ(lit(std::get<ast::Let>(act_of(p).at(0).node).value).int_value, INT64_MAX);
  EXPECT_EQ(lit(std::get<ast::Let>(act_of(p).at(1).node).value).int_value, INT64_MIN);
  EXPECT_THROW(parse(in_act("let a: int = 9223372036854775808")), ParseFailure);
}

TEST(Parser, ExponentMakesFloat) {
  auto p = parse(in_act("let a: float = 2e3\n    let b: float = 1.5"));
  const auto& a = lit(std::get<ast::Let>(act_of(p).at(0).node).value);
  EXPECT_EQ(a.kind, ast::Literal::Kind::Float);
  EXPECT_DOUBLE_EQ(a.float_value, 2000.0);
  EXPECT_DOUBLE_EQ(lit(std::get<ast::Let>(act_of(p).at(1).node).value).float_value, 1.5);
}

TEST(Parser, IdentifierMustStartWithLetter) { EXPECT_THROW(parse(in_act("let 1x: int = 2")), ParseFailure); }

TEST(Parser, LegacyArrowAccepted) {
  auto p = parse("rule r<#rep>() -> Qubit {\n  cond { @q: res(1, 0.5, #rep.hop(1), 0) } => act { promote q }\n}\n");
  EXPECT_TRUE(p.rules[0].legacy_arrow);
  auto q = parse("rule r<#rep>() :-> Qubit? {\n  cond { @q: res(1, 0.5, #rep.hop(1), 0) } => act { promote q }\n}\n");
  EXPECT_FALSE(q.rules[0].legacy_arrow);
  ASSERT_TRUE(q.rules[0].return_types);
  EXPECT_TRUE(q.rules[0].return_types->at(0).maybe);
}

TEST(Parser, MatchArmsAndOtherwise) {
  auto p = parse_program(read_file(corpus("entanglement_swapping.rula")));
  const ast::Match* m = nullptr;
  for (const auto& s : p.rules[0].act.body) {
    if (auto* mm = std::get_if<ast::Match>(&s.node)) m = mm;
  }
  ASSERT_NE(m, nullptr);
  EXPECT_EQ(m->arms.size(), 4u);
  EXPECT_TRUE(m->otherwise);
  EXPECT_EQ(lit(m->arms[1].condition).text, "01");
}

TEST(Parser, Deterministic) {
  const auto src = read_file(corpus("purification.rula"));
  auto a = parse_program(src), b = parse_program(src);
  ASSERT_EQ(a.rules.size(), b.rules.size());
  for (std::size_t i = 0; i < a.rules.size(); ++i) {
    EXPECT_EQ(a.rules[i].name, b.rules[i].name);
    EXPECT_EQ(a.rules[i].span, b.rules[i].span);
    EXPECT_EQ(a.rules[i].act.span, b.rules[i].act.span);
  }
}

TEST(Parser, SpansNest) {
  const auto src = read_file(corpus("purification.rula"));
  auto p = parse_program(src);
  for (const auto& rule : p.rules) {
    EXPECT_LE(rule.span.byte_start, rule.cond.span.byte_start);
    EXPECT_LE(rule.cond.span.byte_end, rule.act.span.byte_start);
    EXPECT_LE(rule.act.span.byte_end, rule.span.byte_end);
    EXPECT_LE(rule.span.byte_end, src.size());
    for (const auto& c : rule.cond.clauses) {
      EXPECT_LE(rule.cond.span.byte_start, c.span.byte_start);
      EXPECT_LE(c.span.byte_end, rule.cond.span.byte_end);
    }
  }
}

TEST(Parser, LocateLineColumn) {
  auto s = locate("ab\ncd\nefg", 7, 8);
  EXPECT_EQ(s.line, 3);
  EXPECT_EQ(s.column, 2);
}

TEST(RenderError, Header) {
  const std::string src = "rule r<#rep>() {\n  cond { check_timer(\"t\") }\n  oops\n}\n";
  auto err = parse_error(src);
  auto text = render_error(err, src);
  EXPECT_EQ(text.rfind("error: parse failure at " + std::to_string(err.span.line) + ":" +
                           std::to_string(err.span.column), 0), 0u)
      << text;
}

TEST(RenderError, FormatContract) {
  ParseError err;
  err.span = locate("x\nyy\nabcdefgh\n", 9, 20);
  err.expected = {"act_expr"};
  err.found = "fgh";
  auto text = render_error(err, "x\nyy\nabcdefgh\nmore\n");
  EXPECT_EQ(text.rfind("error: parse failure at 3:5\n", 0), 0u) << text;
  EXPECT_NE(text.find("expected: act\n"), std::string::npos) << text;
  EXPECT_EQ(text.find("more"), std::string::npos) << text;
}
