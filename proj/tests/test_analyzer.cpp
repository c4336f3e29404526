#include <gtest/gtest.h>

#include "program_gen.hpp"
#include "support.hpp"

using namespace rula;
using rula::testing::analyze_text;
using rula::testing::corpus;
using rula::testing::read_file;

namespace {

std::vector<Diagnostic> errors_of(const std::vector<Diagnostic>& diags) {
  std::vector<Diagnostic> out;
  for (const auto& d : diags) {
    if (d.severity == Diagnostic::Severity::Error) out.push_back(d);
  }
  return out;
}

bool has_code(const std::vector<Diagnostic>& diags, const std::string& code) {
  return std::any_of(diags.begin(), diags.end(), [&](const Diagnostic& d) { return d.code == code; });
}

const std::string kLocalOp = R"(#repeaters: vec[Repeater]

import std::operation::{cx, measure}

rule local_operation<#rep>(distance: int) :-> Qubit {
    let partner: Repeater = #rep.hop(distance)
    cond {
        @q1: res(1, 0.8, partner, 0)
        @q2: res(1, 0.5, partner, 1)
    } => act {
        cx(q1, q2)
        let result: Result = measure(q2, "Z")
        meas(q2, result) -> partner
        set result as self_result
        promote q1
    }
}
)";

std::string with_ruleset(const std::string& rules, const std::string& body) {
  return rules + "\nruleset s {\n" + body + "\n}\n";
}

}  // namespace

TEST(Analyzer, AnnotatedPromoteIsClean) {
  auto a = analyze_text(with_ruleset(kLocalOp, "    local_operation<#repeaters(0)>(1)"));
  EXPECT_TRUE(errors_of(a.diagnostics).empty()) << render_diagnostic(a.diagnostics.at(0));
  const auto& sig = a.signatures.at("local_operation");
  ASSERT_TRUE(sig.returns);
  ASSERT_EQ(sig.returns->size(), 1u);
  EXPECT_EQ(sig.returns->at(0).type, ast::Type::of(ast::Type::Kind::Qubit));
  EXPECT_FALSE(sig.returns->at(0).maybe);
}

TEST(Analyzer, PromoteWithoutAnnotation) {
  std::string src = kLocalOp;
  src.replace(src.find(" :-> Qubit"), 10, "");
  auto errs = errors_of(analyze_text(with_ruleset(src, "    local_operation<#repeaters(0)>(1)")).diagnostics);
  ASSERT_EQ(errs.size(), 1u);
  EXPECT_EQ(errs[0].message, "promote requires return type annotation");
}

TEST(Analyzer, SendWhitelist) {
  auto a = analyze_text(read_file(corpus("reject/send_not_whitelisted.rula")));
  auto errs = errors_of(a.diagnostics);
  ASSERT_EQ(errs.size(), 1u);
  EXPECT_EQ(errs[0].message, "send requires one of update/free/meas/transfer");
}

TEST(Analyzer, StdImportBindsBuiltinsWithoutFiles) {
  auto program = parse_program("import std::operation::{z, x, bsm}\n");
  auto [merged, diags] = resolve_imports(std::move(program), {});
  EXPECT_TRUE(diags.empty());
  EXPECT_TRUE(is_builtin("z") && is_builtin("x") && is_builtin("bsm"));
}

TEST(Analyzer, RuleImportMergesRule) {
  auto program = parse_program("import (rule) entanglement_swapping::swapping\n");
  auto [merged, diags] = resolve_imports(std::move(program), {RULA_CORPUS_DIR});
  EXPECT_TRUE(errors_of(diags).empty());
  ASSERT_EQ(merged.rules.size(), 1u);
  EXPECT_EQ(merged.rules[0].name, "swapping");
}

TEST(Analyzer, MissingModule) {
  auto program = parse_program("import (rule) entanglement_swapping::swapping\n");
  auto [merged, diags] = resolve_imports(std::move(program), {std::filesystem::temp_directory_path()});
  auto errs = errors_of(diags);
  ASSERT_EQ(errs.size(), 1u);
  EXPECT_EQ(errs[0].message, "module not found: entanglement_swapping");
}

TEST(Analyzer, SearchRootOrderFirstMatchWins) {
  const auto dir = std::filesystem::temp_directory_path() / "rula_shadow";
  std::filesystem::create_directories(dir);
  {
    std::ofstream f(dir / "entanglement_swapping.rula");
    f << "rule swapping<#rep>(shadow: int) {\n    cond { check_timer(\"t\") } => act { }\n}\n";
  }
  auto program = parse_program("import (rule) entanglement_swapping::swapping\n");
  auto [merged, diags] = resolve_imports(std::move(program), {dir, RULA_CORPUS_DIR});
  ASSERT_EQ(merged.rules.size(), 1u);
  EXPECT_EQ(merged.rules[0].params.at(0).name, "shadow");
  std::filesystem::remove_all(dir);
}

TEST(Analyzer, PurificationDataflowIsClean) {
  auto a = analyze_text(read_file(corpus("purification.rula")));
  EXPECT_TRUE(errors_of(a.diagnostics).empty());
}

TEST(Analyzer, NeverSet) {
  auto a = analyze_text(read_file(corpus("reject/get_never_set.rula")));
  auto errs = errors_of(a.diagnostics);
  ASSERT_EQ(errs.size(), 1u);
  EXPECT_EQ(errs[0].message, "foo is never set");
}

TEST(Analyzer, GetBeforeSet) {
  std::string reader = R"(
rule reader<#rep>() {
    let partner: Repeater = #rep.hop(1)
    cond {
        @q: res(1, 0.5, partner, 0)
    } => act {
        if (get self_result == "0") {
            free(q) -> partner
        }
    }
}
)";
  auto late = analyze_text(with_ruleset(kLocalOp + reader, "    reader<#repeaters(0)>()\n    let p: Qubit = local_operation<#repeaters(0)>(1)"));
  EXPECT_TRUE(has_code(late.diagnostics, "get-before-set"));
  auto early = analyze_text(with_ruleset(kLocalOp + reader, "    let p: Qubit = local_operation<#repeaters(0)>(1)\n    reader<#repeaters(0)>()"));
  EXPECT_FALSE(has_code(early.diagnostics, "get-before-set"));
}

TEST(Analyzer, UnusedPromotedWarns) {
  auto a = analyze_text(with_ruleset(kLocalOp, "    let p: Qubit = local_operation<#repeaters(0)>(1)"));
  EXPECT_TRUE(errors_of(a.diagnostics).empty());
  ASSERT_TRUE(has_code(a.diagnostics, "unused-promoted"));
}

TEST(Analyzer, MaybeFlagAllowsFreeArm) {
  const std::string rule = R"(
rule check<#rep>() :-> Qubit%s {
    let partner: Repeater = #rep.hop(1)
    cond {
        @q: res(1, 0.5, partner, 0)
        @message: recv(partner)
    } => act {
        if (message.result == "0") {
            promote q
        } else {
            free(q) -> partner
        }
    }
}
)";
  std::string maybe = rule, strict = rule;
  maybe.replace(maybe.find("%s"), 2, "?");
  strict.replace(strict.find("%s"), 2, "");
  auto ok = analyze_text(with_ruleset(maybe, "    let k: Qubit = check<#repeaters(0)>()\n    check<#repeaters(0)>()"));
  EXPECT_FALSE(has_code(ok.diagnostics, "promote-path"));
  auto bad = analyze_text(with_ruleset(strict, "    check<#repeaters(0)>()"));
  EXPECT_TRUE(has_code(bad.diagnostics, "promote-path"));
}

TEST(Analyzer, ResultComparesOnlyWithStrings) {
  const std::string rule = R"(
rule check<#rep>() {
    let partner: Repeater = #rep.hop(1)
    cond {
        @q: res(1, 0.5, partner, 0)
        @message: recv(partner)
    } => act {
        if (message.result == %s) {
            free(q) -> partner
        }
    }
}
)";
  std::string ok = rule, bad = rule;
  ok.replace(ok.find("%s"), 2, "\"01\"");
  bad.replace(bad.find("%s"), 2, "1");
  EXPECT_FALSE(has_code(analyze_text(with_ruleset(ok, "    check<#repeaters(0)>()")).diagnostics, "type-mismatch"));
  EXPECT_TRUE(has_code(analyze_text(with_ruleset(bad, "    check<#repeaters(0)>()")).diagnostics, "type-mismatch"));
}

TEST(Analyzer, UnknownMethod) {
  const std::string rule = R"(
rule r<#rep>() {
    let partner: Repeater = #rep.jump(1)
    cond { @q: res(1, 0.5, partner, 0) } => act { free(q) -> partner }
}
)";
  EXPECT_TRUE(has_code(analyze_text(with_ruleset(rule, "    r<#repeaters(0)>()")).diagnostics, "unknown-method"));
}

TEST(Analyzer, DuplicateRule) {
  const std::string rule = "rule r<#rep>() {\n    cond { check_timer(\"t\") } => act { }\n}\n";
  EXPECT_TRUE(has_code(analyze_text(with_ruleset(rule + rule, "    r<#repeaters(0)>()")).diagnostics, "duplicate-rule"));
}

TEST(Analyzer, LegacyArrowWarnsOnly) {
  auto a = analyze_text(read_file(corpus("if_listing.rula")));
  EXPECT_TRUE(errors_of(a.diagnostics).empty());
  EXPECT_TRUE(has_code(a.diagnostics, "legacy-arrow"));
}

TEST(Analyzer, RulesetIfOverRuntimeValue) {
  auto errs = errors_of(analyze_text(read_file(corpus("reject/ruleset_runtime_if.rula"))).diagnostics);
  ASSERT_EQ(errs.size(), 1u);
  EXPECT_EQ(errs[0].code, "ruleset-if");
}

TEST(Analyzer, UnicodeLiteralUnsupported) {
  const std::string rule = "rule r<#rep>() {\n    cond { check_timer(\"t\") } => act {\n        let x: int = 0u41\n    }\n}\n";
  EXPECT_TRUE(has_code(analyze_text(with_ruleset(rule, "    r<#repeaters(0)>()")).diagnostics, "unsupported-literal"));
}

TEST(Analyzer, CorpusProgramsAreClean) {
  for (const auto& entry : std::filesystem::directory_iterator(RULA_CORPUS_DIR)) {
    if (entry.path().extension() != ".rula") continue;
    auto a = analyze_text(read_file(entry.path()), entry.path().string());
    EXPECT_TRUE(errors_of(a.diagnostics).empty()) << entry.path();
  }
}

TEST(Analyzer, Idempotent) {
  for (const char* name : {"entanglement_swapping.rula", "purification.rula", "if_listing.rula"}) {
    auto first = analyze_text(read_file(corpus(name)), name);
    auto second = analyze(first.program);
    ASSERT_EQ(first.diagnostics.size(), second.diagnostics.size()) << name;
    for (std::size_t i = 0; i < first.diagnostics.size(); ++i) {
      EXPECT_EQ(first.diagnostics[i].code, second.diagnostics[i].code);
      EXPECT_EQ(first.diagnostics[i].span, second.diagnostics[i].span);
    }
    for (const auto& [n, sig] : first.signatures) EXPECT_EQ(second.signatures.count(n), 1u);
  }
}

TEST(Analyzer, RenderDiagnosticFormat) {
  Diagnostic d{Diagnostic::Severity::Error, "never-set", {10, 13, 4, 7}, "foo is never set", "p.rula"};
  EXPECT_EQ(render_diagnostic(d), "p.rula:4:7: error[never-set]: foo is never set");
}

// Diagnostic spans stay inside the file and analysis never throws.
TEST(AnalyzerProperty, RandomProgramsNeverCrash) {
  rula::testing::ProgramGen gen(424242);
  int parsed = 0;
  for (int i = 0; i < 100000 && parsed < 2000; ++i) {
    const std::string src = gen.program();
    ast::Program program;
    try {
      program = parse_program(src, "fuzz.rula");
    } catch (const ParseFailure&) {
      continue;
    }
    ++parsed;
    Analysis a;
    ASSERT_NO_THROW(a = analyze(program)) << src;
    for (const auto& d : a.diagnostics) {
      ASSERT_LE(d.span.byte_start, d.span.byte_end) << src;
      ASSERT_LE(d.span.byte_end, src.size()) << src;
    }
    if (a.ok()) {
      ASSERT_NO_THROW(compile(a.program, rula::testing::chain(3), 1)) << src;
    }
  }
  EXPECT_EQ(parsed, 2000);
}
