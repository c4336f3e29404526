#pragma once

// Ruleset evaluation against a topology: loop unrolling, compile-time filtering,
// per-repeater rule instantiation, branch expansion and send splitting.

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "rula/analyzer.hpp"
#include "rula/ast.hpp"
#include "rula/config.hpp"
#include "rula/ruleset_ir.hpp"

namespace rula {

class CodegenError : public std::runtime_error {
 public:
  CodegenError(ast::Span span, const std::string& message) : std::runtime_error(message), span_(span) {}
  const ast::Span& span() const noexcept { return span_; }

 private:
  ast::Span span_;
};

// One Send clause and the Recv that will consume it on the partner.
struct Obligation {
  ir::Address owner = 0;
  std::uint64_t send_rule_id = 0;
  std::size_t send_clause = 0;  // index into the rule's action clauses
  ir::Address partner = 0;
  ir::MessageKind kind = ir::MessageKind::Free;
  std::uint64_t recv_rule_id = 0;  // partner-side rule holding the bound Recv
  bool synthesized = false;        // handler stage generated for this send
};

struct CompiledOutput {
  std::uint64_t ruleset_id = 0;
  std::string name;
  std::map<ir::Address, ir::RuleSetIR> per_node;
  std::vector<Diagnostic> diagnostics;
  std::vector<Obligation> obligations;
  bool ok() const { return !has_errors(diagnostics); }
};

// FNV-1a 64 over the ruleset name, a NUL separator and the config bytes.
std::uint64_t default_ruleset_id(std::string_view ruleset_name, std::string_view config_bytes);

// "<ruleset-name>_<address>.json"
std::string output_filename(const ir::RuleSetIR& ruleset);

// Expects an analyzed program without errors. Codegen failures come back as diagnostics.
CompiledOutput compile(const ast::Program& program, const Topology& topology, std::uint64_t ruleset_id);

// Integer/boolean constant folding over loop variables and #repeaters.len().
// Booleans come back as 0/1. Throws CodegenError.
std::int64_t eval_const(const ast::Expr& expr, const std::map<std::string, std::int64_t>& env,
                        std::size_t repeater_count);

// Recv clauses that no Send obligation is bound to.
std::size_t count_unbound_recv(const CompiledOutput& out);
std::size_t count_send_clauses(const CompiledOutput& out);

}  // namespace rula
