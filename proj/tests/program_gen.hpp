#pragma once

// Random RuLa programs drawn from the grammar's productions. Names come from small
// pools so that both well-typed and ill-typed programs show up.

#include <random>
#include <string>
#include <vector>

namespace rula::testing {

class ProgramGen {
 public:
  explicit ProgramGen(std::uint64_t seed) : rng_(seed) {}

  std::string program() {
    std::string out;
    if (pick(4)) out += "#repeaters: vec[Repeater]\n\n";
    if (pick(2)) out += "import std::operation::{z, x, bsm, cx, measure, set_timer}\n";
    if (!pick(5)) out += "import std::operation::" + one({"z", "x", "bsm", "nothing"}) + "\n";
    const int rules = 1 + upto(2);
    for (int i = 0; i < rules; ++i) out += "\n" + rule(i);
    out += "\n" + ruleset();
    return out;
  }

 private:
  std::mt19937_64 rng_;

  int upto(int n) { return std::uniform_int_distribution<int>(0, n)(rng_); }
  bool pick(int one_in) { return upto(one_in - 1) != 0; }
  std::string one(std::initializer_list<const char*> xs) {
    std::vector<const char*> v(xs);
    return v[static_cast<std::size_t>(upto(static_cast<int>(v.size()) - 1))];
  }
  std::string ind(int depth) { return std::string(static_cast<std::size_t>(4 * depth), ' '); }

  std::string name() { return one({"q1", "q2", "q", "partner", "left", "right", "result", "message", "d", "i", "foo"}); }
  std::string rule_name() { return one({"r0", "r1", "r2", "swapping", "nope"}); }
  std::string type() {
    return one({"int", "u_int", "float", "bool", "str", "Qubit", "Repeater", "Message", "Result", "vec[int]"});
  }

  std::string literal() {
    switch (upto(7)) {
      case 0: return std::to_string(upto(10) - 3);
      case 1: return "0." + std::to_string(upto(9));
      case 2: return "\"" + one({"00", "01", "10", "11", "Z", "X", "W", "t"}) + "\"";
      case 3: return one({"true", "false"});
      case 4: return "0b" + one({"0", "1", "101"});
      case 5: return "0x" + one({"ff", "13ed232"});
      case 6: return one({"0u41", "2e3"});
      default: return name();
    }
  }

  std::string repeater() {
    if (pick(3)) return "#rep.hop(" + one({"1", "-1", "d", "-d", "2", "x"}) + ")";
    return name();
  }

  std::string call_target() { return "#repeaters(" + one({"0", "1", "i", "i+1", "d"}) + ")"; }

  std::string expr(int depth) {
    if (depth > 2) return literal();
    switch (upto(9)) {
      case 0: return expr(depth + 1) + " " + one({"+", "-", "*", "/", "%", "^"}) + " " + expr(depth + 1);
      case 1: return expr(depth + 1) + " " + one({"==", "!=", "<", ">=", "<=", ">"}) + " " + expr(depth + 1);
      case 2: return "get " + name();
      case 3: return "bsm(" + name() + ", " + name() + ")";
      case 4: return "measure(" + name() + ", " + literal() + ")";
      case 5: return rule_name() + "<" + call_target() + ">(" + (pick(2) ? expr(depth + 1) : "") + ")";
      case 6: return "#repeaters.len()" + one({"", "/2", "-1"});
      case 7: return "message." + one({"result", "kind", "bogus"});
      case 8: return "(" + expr(depth + 1) + ")";
      default: return literal();
    }
  }

  std::string comparison() {
    return expr(2) + " " + one({"==", "!=", "<", ">=", "<=", ">"}) + " " + expr(2);
  }

  std::string cond_clause() {
    std::string capture = pick(2) ? "@" + name() + ": " : "";
    switch (upto(3)) {
      case 0: return capture + "res(" + one({"1", "2", "0"}) + ", " + one({"0.8", "0.5", "1.5"}) + ", " + repeater() +
                     (pick(2) ? ", " + std::to_string(upto(3)) : "") + ")";
      case 1: return capture + "recv(" + repeater() + ")";
      case 2: return "check_timer(" + literal() + ")";
      default: return capture + comparison();
    }
  }

  std::string stmt(int depth) {
    const std::string pad = ind(depth);
    if (depth > 4) return pad + "free(" + name() + ") -> " + repeater() + "\n";
    switch (upto(10)) {
      case 0: return pad + "let " + name() + ": " + type() + " = " + expr(0) + "\n";
      case 1: {
        std::string s = pad + "match " + expr(1) + " {\n";
        const int arms = 1 + upto(3);
        for (int a = 0; a < arms; ++a) {
          s += ind(depth + 1) + literal() + " => {";
          s += pick(2) ? "},\n" : "\n" + stmt(depth + 2) + ind(depth + 1) + "},\n";
        }
        if (pick(2)) s += ind(depth + 1) + "otherwise => {\n" + stmt(depth + 2) + ind(depth + 1) + "}\n";
        return s + pad + "}\n";
      }
      case 2: {
        std::string s = pad + "if (" + comparison() + ") {\n" + stmt(depth + 1) + pad + "}";
        if (pick(3)) s += " else if (" + comparison() + ") {\n" + stmt(depth + 1) + pad + "}";
        if (pick(2)) s += " else {\n" + stmt(depth + 1) + pad + "}";
        return s + "\n";
      }
      case 3: return pad + "promote " + name() + (pick(4) ? "" : ", " + name()) + "\n";
      case 4: return pad + "set " + name() + (pick(2) ? " as " + name() : "") + "\n";
      case 5: {
        const std::string fn = one({"update", "free", "meas", "transfer", "bsm", "measure"});
        std::string args = name();
        if (fn == "update") args += ", " + one({"z()", "x()", "h()"});
        if (fn == "meas") args += ", " + name();
        return pad + fn + "(" + args + ") -" + one({">", ">", ">", ""}) + " " + repeater() + "\n";
      }
      case 6: return pad + "cx(" + name() + ", " + name() + ")\n";
      case 7: return pad + "set_timer(" + literal() + ", " + std::to_string(upto(5)) + ")\n";
      case 8: return pad + "for " + name() + " in " + one({"0", "1"}) + ".." + expr(1) + " {\n" + stmt(depth + 1) + pad + "}\n";
      default: return pad + one({"bsm(q1, q2)", "measure(q, \"Z\")", "x(q)", "r1<#repeaters(0)>()"}) + "\n";
    }
  }

  std::string rule(int index) {
    std::string s = "rule " + (index == 0 ? std::string("r0") : rule_name()) + "<#rep>(";
    const int params = upto(2);
    for (int p = 0; p < params; ++p) s += (p ? ", " : "") + name() + (pick(4) ? ": " + type() : "");
    s += ")";
    if (pick(2)) s += std::string(pick(4) ? " :-> " : " -> ") + one({"Qubit", "Qubit?", "(Qubit, Qubit)", "int"});
    s += " {\n";
    for (int l = upto(2); l > 0; --l) s += "    let " + name() + ": Repeater = " + repeater() + "\n";
    s += "    cond {\n";
    for (int c = 1 + upto(2); c > 0; --c) s += "        " + cond_clause() + "\n";
    s += "    } => act {\n";
    for (int a = upto(4); a > 0; --a) s += stmt(2);
    s += "    }\n";
    if (!pick(4)) s += stmt(1);
    return s + "}\n";
  }

  std::string ruleset_stmt(int depth) {
    const std::string pad = ind(depth);
    if (depth > 3) return pad + rule_name() + "<" + call_target() + ">()\n";
    switch (upto(5)) {
      case 0: return pad + "for " + one({"i", "d"}) + " in " + one({"0", "1"}) + ".." + expr(2) + " {\n" +
                     ruleset_stmt(depth + 1) + pad + "}\n";
      case 1: return pad + "if (" + comparison() + ") {\n" + ruleset_stmt(depth + 1) + pad + "}" +
                     (pick(2) ? " else {\n" + ruleset_stmt(depth + 1) + pad + "}" : "") + "\n";
      case 2: return pad + "let " + name() + ": " + type() + " = " + rule_name() + "<" + call_target() + ">(" +
                     (pick(2) ? literal() : "") + ")\n";
      default: return pad + rule_name() + "<" + call_target() + ">(" + (pick(2) ? literal() : "") + ")\n";
    }
  }

  std::string ruleset() {
    std::string s = "ruleset " + one({"s", "entanglement_swapping"}) + " {\n";
    for (int i = upto(3); i > 0; --i) s += ruleset_stmt(1);
    return s + "}\n";
  }
};

}  // namespace rula::testing
