#pragma once

#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>

#include "rula/analyzer.hpp"
#include "rula/codegen.hpp"
#include "rula/config.hpp"
#include "rula/parser.hpp"

namespace rula::testing {

inline std::filesystem::path corpus(const std::string& name) { return std::filesystem::path(RULA_CORPUS_DIR) / name; }

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// parse + imports + analysis; diagnostics from every phase
inline Analysis analyze_text(const std::string& source, const std::string& file = "test.rula") {
  auto program = parse_program(source, file);
  auto [merged, import_diags] = resolve_imports(std::move(program), {std::filesystem::path(RULA_CORPUS_DIR)});
  Analysis a = analyze(std::move(merged));
  a.diagnostics.insert(a.diagnostics.begin(), import_diags.begin(), import_diags.end());
  return a;
}

inline CompiledOutput compile_text(const std::string& source, const Topology& topo, std::uint64_t id = 1) {
  Analysis a = analyze_text(source);
  if (!a.ok()) {
    CompiledOutput out;
    out.diagnostics = a.diagnostics;
    return out;
  }
  return compile(a.program, topo, id);
}

inline Topology chain(std::size_t n) { return load_config(read_file(corpus("chain" + std::to_string(n) + ".json"))); }

inline CompiledOutput compile_corpus(const std::string& program, std::size_t n) {
  const std::string config = read_file(corpus("chain" + std::to_string(n) + ".json"));
  Analysis a = analyze_text(read_file(corpus(program)), corpus(program).string());
  if (!a.ok()) {
    CompiledOutput out;
    out.diagnostics = a.diagnostics;
    return out;
  }
  return compile(a.program, load_config(config), default_ruleset_id(a.program.ruleset->name, config));
}

}  // namespace rula::testing
