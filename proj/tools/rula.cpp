// rula: compile / validate / run

#include <CLI11.hpp>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "rula/analyzer.hpp"
#include "rula/codegen.hpp"
#include "rula/config.hpp"
#include "rula/parser.hpp"
#include "rula/ruleset_ir.hpp"
#include "rula/runtime.hpp"

namespace fs = std::filesystem;
using namespace rula;

namespace {

std::optional<std::string> slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) return std::nullopt;
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void print(const std::vector<Diagnostic>& diags) {
  for (const auto& d : diags) std::cerr << render_diagnostic(d) << "\n";
}

std::vector<fs::path> include_roots(const fs::path& program, const std::vector<std::string>& includes) {
  std::vector<fs::path> roots{program.parent_path().empty() ? fs::path(".") : program.parent_path()};
  for (const auto& inc : includes) roots.emplace_back(inc);
  if (const char* env = std::getenv("RULA_INCLUDE_PATH")) {
    std::stringstream ss(env);
    std::string part;
    while (std::getline(ss, part, ':')) {
      if (!part.empty()) roots.emplace_back(part);
    }
  }
  return roots;
}

int cmd_compile(const std::string& program_path, const std::string& config_path, const std::string& out_dir,
                std::optional<std::uint64_t> ruleset_id, const std::vector<std::string>& includes) {
  if (fs::path(program_path).extension() != ".rula") {
    std::cerr << "error: expected .rula input, got " << program_path << "\n";
    return 2;
  }
  auto config_text = slurp(config_path);
  if (!config_text) {
    std::cerr << "error: cannot read config " << config_path << "\n";
    return 2;
  }
  auto source = slurp(program_path);
  if (!source) {
    std::cerr << "error: no such file " << program_path << "\n";
    return 1;
  }
  Topology topology = [&] {
    try {
      return load_config(*config_text);
    } catch (const ConfigError& e) {
      std::cerr << config_path << ": error: " << e.what() << "\n";
      std::exit(1);
    }
  }();

  ast::Program program;
  try {
    program = parse_program(*source, program_path);
  } catch (const ParseFailure& e) {
    std::cerr << program_path << ": " << render_error(e.error(), *source) << "\n";
    return 1;
  }
  auto [resolved, import_diags] = resolve_imports(std::move(program), include_roots(program_path, includes));
  print(import_diags);
  if (has_errors(import_diags)) return 1;
  Analysis analysis = analyze(std::move(resolved));
  print(analysis.diagnostics);
  if (!analysis.ok()) {
    std::cerr << error_count(analysis.diagnostics) << " error(s); nothing written\n";
    return 1;
  }
  if (!analysis.program.ruleset) {
    std::cerr << program_path << ": error: program has no ruleset\n";
    return 1;
  }
  const std::uint64_t id = ruleset_id.value_or(default_ruleset_id(analysis.program.ruleset->name, *config_text));
  CompiledOutput out = compile(analysis.program, topology, id);
  print(out.diagnostics);
  if (!out.ok()) {
    std::cerr << error_count(out.diagnostics) << " error(s); nothing written\n";
    return 1;
  }

  std::vector<std::pair<fs::path, std::string>> files;
  for (const auto& [addr, rs] : out.per_node) files.emplace_back(fs::path(out_dir) / output_filename(rs), ir::serialize(rs));
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  for (std::size_t i = 0; i < files.size(); ++i) {
    std::ofstream f(files[i].first, std::ios::binary);
    f << files[i].second;
    if (!f) {
      std::cerr << "error: cannot write " << files[i].first.string() << "\n";
      for (std::size_t k = 0; k <= i; ++k) fs::remove(files[k].first, ec);
      return 1;
    }
  }
  for (const auto& [addr, rs] : out.per_node) {
    std::cerr << "wrote " << output_filename(rs) << ": " << rs.stages.size() << " stage(s), " << rs.num_rules()
              << " rule(s)\n";
  }
  for (const auto& [path, text] : files) std::cout << path.string() << "\n";
  return 0;
}

int cmd_validate(const std::vector<std::string>& paths) {
  int rc = 0;
  for (const auto& path : paths) {
    auto text = slurp(path);
    if (!text) {
      std::cerr << path << ": error: no such file\n";
      rc = 1;
      continue;
    }
    try {
      auto findings = ir::validate(ir::deserialize(*text));
      for (const auto& f : findings) {
        std::cerr << path << ": " << (f.severity == ir::Finding::Severity::Error ? "error" : "warning") << ": "
                  << f.path << ": " << f.message << "\n";
      }
      if (!findings.empty()) rc = 1;
    } catch (const ir::IrError& e) {
      std::cerr << path << ": error: " << e.what() << "\n";
      rc = 1;
    }
  }
  return rc;
}

int cmd_run(const std::string& config_path, const std::string& dir, std::uint64_t seed, double fidelity,
            std::uint64_t max_steps, bool enumerate_outcomes, bool report_json) {
  auto config_text = slurp(config_path);
  if (!config_text) {
    std::cerr << "error: cannot read config " << config_path << "\n";
    return 2;
  }
  try {
    Topology topology = load_config(*config_text);
    if (!fs::is_directory(dir)) {
      std::cerr << "error: no such directory " << dir << "\n";
      return 1;
    }
    std::vector<fs::path> paths;
    for (const auto& entry : fs::directory_iterator(dir)) {
      if (entry.path().extension() == ".json") paths.push_back(entry.path());
    }
    std::sort(paths.begin(), paths.end());
    std::map<ir::Address, ir::RuleSetIR> rulesets;
    for (const auto& p : paths) {
      auto rs = ir::deserialize(*slurp(p));
      rulesets[rs.owner_addr] = std::move(rs);
    }
    if (enumerate_outcomes) {
      auto branches = sim::enumerate(rulesets, topology, fidelity, max_steps);
      const bool ok = std::all_of(branches.begin(), branches.end(), [](const auto& b) { return b.success(); });
      if (report_json) std::cout << sim::to_json(branches);
      std::cerr << branches.size() << " branch(es), " << (ok ? "all quiescent" : "not all quiescent") << "\n";
      for (std::size_t i = 0; i < branches.size(); ++i) {
        for (const auto& p : branches[i].pairs) {
          std::cerr << "  branch " << i << ": pair " << p.a << "-" << p.b << " (" << p.index.phase << ","
                    << p.index.parity << ") fidelity " << p.fidelity << "\n";
        }
        if (branches[i].error) std::cerr << "  branch " << i << ": error: " << *branches[i].error << "\n";
      }
      return ok ? 0 : 1;
    }
    sim::NetworkState state(rulesets, topology, fidelity, seed);
    auto report = sim::run_to_quiescence(state, max_steps);
    if (report_json) std::cout << sim::to_json(report);
    std::cerr << report.steps << " step(s), " << (report.quiescent ? "quiescent" : "not quiescent") << "\n";
    for (const auto& p : report.pairs) {
      std::cerr << "  pair " << p.a << "-" << p.b << " (" << p.index.phase << "," << p.index.parity << ") fidelity "
                << p.fidelity << "\n";
    }
    for (const auto& s : report.stuck) std::cerr << "  stuck: " << s << "\n";
    if (report.error) std::cerr << "  error: " << *report.error << "\n";
    return report.success() ? 0 : 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"RuLa compiler and RuleSet simulator"};
  app.require_subcommand(1);

  std::string program, config, out_dir;
  std::optional<std::uint64_t> ruleset_id;
  std::vector<std::string> includes;
  auto* compile_cmd = app.add_subcommand("compile", "compile a .rula program into per-repeater RuleSets");
  compile_cmd->add_option("program", program, "program file")->required();
  compile_cmd->add_option("--config", config, "repeater configuration JSON")->required();
  compile_cmd->add_option("--out-dir", out_dir, "output directory")->required();
  compile_cmd->add_option("--ruleset-id", ruleset_id, "ruleset id (default: hash of name and config)");
  compile_cmd->add_option("--include", includes, "extra import search roots");

  std::vector<std::string> files;
  auto* validate_cmd = app.add_subcommand("validate", "check RuleSet JSON files");
  validate_cmd->add_option("files", files, "RuleSet files")->required();

  std::string run_config, rulesets;
  std::uint64_t seed = 0, max_steps = 10000;
  double fidelity = 1.0;
  bool enumerate_outcomes = false, report_json = false;
  auto* run_cmd = app.add_subcommand("run", "simulate compiled RuleSets");
  run_cmd->add_option("--config", run_config, "repeater configuration JSON")->required();
  run_cmd->add_option("--rulesets", rulesets, "directory of RuleSet files")->required();
  run_cmd->add_option("--seed", seed, "RNG seed");
  run_cmd->add_option("--fidelity", fidelity, "initial link fidelity")->check(CLI::Range(0.0, 1.0));
  run_cmd->add_option("--max-steps", max_steps, "round budget")->check(CLI::PositiveNumber);
  run_cmd->add_flag("--enumerate-outcomes", enumerate_outcomes, "explore every outcome branch");
  run_cmd->add_flag("--report-json", report_json, "print the report as JSON on stdout");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  if (compile_cmd->parsed()) return cmd_compile(program, config, out_dir, ruleset_id, includes);
  if (validate_cmd->parsed()) return cmd_validate(files);
  return cmd_run(run_config, rulesets, seed, fidelity, max_steps, enumerate_outcomes, report_json);
}
