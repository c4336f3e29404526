#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "rula/ast.hpp"

namespace rula {

struct Diagnostic {
  enum class Severity { Error, Warning };
  Severity severity = Severity::Error;
  std::string code;
  ast::Span span;
  std::string message;
  std::string file;
};

bool has_errors(const std::vector<Diagnostic>& diags);
std::size_t error_count(const std::vector<Diagnostic>& diags);
// "file:line:col: error[code]: message"
std::string render_diagnostic(const Diagnostic& diag);

struct RuleSignature {
  std::string name;
  std::string repeater_ident;
  std::vector<std::optional<ast::Type>> params;
  std::optional<std::vector<ast::ReturnType>> returns;
};

struct Analysis {
  ast::Program program;  // expression nodes carry their types
  std::vector<Diagnostic> diagnostics;
  std::map<std::string, RuleSignature> signatures;
  bool ok() const { return !has_errors(diagnostics); }
};

// Built-in functions always in scope; std imports only confirm the names.
bool is_builtin(const std::string& name);

// Loads `import (rule) a::b::name` from a/b.rula under the first search root that has it,
// and splices the named rules into the program. std imports need no file.
std::pair<ast::Program, std::vector<Diagnostic>> resolve_imports(
    ast::Program program, const std::vector<std::filesystem::path>& search_roots);

// Names, types and the static rules. Also runs check_dataflow.
Analysis analyze(ast::Program program);

// set-before-get over the rule-call order of the ruleset, and unused promoted qubits.
std::vector<Diagnostic> check_dataflow(const ast::Program& program);

}  // namespace rula
