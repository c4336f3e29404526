#pragma once

// Round-based simulator for compiled RuleSets on a linear chain, with Bell pairs
// tracked as Pauli frames (phase bit, parity bit) plus a scalar fidelity tag.

#include <cstdint>
#include <deque>
#include <map>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "rula/config.hpp"
#include "rula/ruleset_ir.hpp"

namespace rula::sim {

class RuntimeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Phi+ = (0,0), Phi- = (1,0), Psi+ = (0,1), Psi- = (1,1)
struct BellIndex {
  int phase = 0;
  int parity = 0;
  bool operator==(const BellIndex&) const = default;
};

struct Endpoint {
  ir::Address node = 0;
  std::uint64_t slot = 0;
  bool operator==(const Endpoint&) const = default;
};

struct BellPair {
  std::uint64_t id = 0;
  Endpoint ends[2];
  BellIndex index;
  double fidelity = 1.0;
  bool live = true;
};

enum class Pauli { X, Z, XZ };

// Throws RuntimeError when the endpoint is not on the pair.
BellPair apply_pauli(BellPair pair, ir::Address endpoint, Pauli gate);

// Surviving fidelity after one successful parity check of two pairs.
double purify_update(double f);
double purify_update(double fa, double fb);

struct Message {
  ir::MessageKind kind = ir::MessageKind::Free;
  ir::Address from = 0;
  ir::Address to = 0;
  std::map<std::string, std::string> payload;
  std::uint64_t seq = 0;
};

struct FinalPair {
  ir::Address a = 0;
  ir::Address b = 0;
  BellIndex index;
  double fidelity = 1.0;
};

struct RunReport {
  std::uint64_t steps = 0;
  bool quiescent = false;
  std::vector<std::string> stuck;
  std::vector<FinalPair> pairs;
  std::map<std::string, std::uint64_t> messages;  // kind -> count
  std::map<ir::Address, std::uint64_t> freed;     // node -> freed qubits
  std::uint64_t initial_pairs = 0;
  std::uint64_t bsm = 0;             // swaps performed (2 pairs in, 1 out)
  std::uint64_t measured_pairs = 0;  // pairs consumed by measuring both halves
  std::uint64_t freed_pairs = 0;
  std::optional<std::string> error;
  std::vector<std::size_t> branch;  // choices taken, enumeration mode only

  bool success() const { return quiescent && stuck.empty() && !error; }
};

struct Choice {
  std::size_t arity = 0;
  std::size_t taken = 0;
  std::vector<double> probs;
};

class NetworkState {
 public:
  NetworkState(std::map<ir::Address, ir::RuleSetIR> rulesets, Topology topology, double link_fidelity,
               std::uint64_t seed);

  // Replay a fixed choice prefix instead of sampling; later choices take the first live option.
  void replay(std::vector<std::size_t> prefix);
  const std::vector<Choice>& trace() const { return trace_; }

  // One scheduler round. Returns false when nothing happened.
  bool step();
  RunReport report() const;

  const std::vector<BellPair>& pairs() const { return pairs_; }
  std::uint64_t steps() const { return steps_; }
  const std::optional<std::string>& error() const { return error_; }

 private:
  struct Slot {
    std::uint64_t pair = 0;
    ir::Address believed_partner = 0;
    std::size_t min_stage = 0;
    std::optional<std::size_t> bound_stage;
    bool live = true;
    std::optional<int> measured;  // outcome once measured
    ir::Basis measured_basis = ir::Basis::Z;
  };
  struct Node {
    ir::Address address = 0;
    ir::RuleSetIR ruleset;
    std::size_t stage = 0;
    std::vector<Slot> slots;
    std::map<std::string, std::string> vars;
    std::map<ir::Address, std::deque<Message>> inbox;
    std::map<std::string, std::uint64_t> timers;  // id -> expiry tick
  };
  struct Binding {
    std::map<std::uint64_t, std::uint64_t> qubits;  // rule qubit_index -> slot
    std::map<ir::Address, const Message*> messages;
    const Message* message = nullptr;  // first Recv'd message
  };
  struct Exec {
    Node* node = nullptr;
    Binding binding;
    std::vector<int> bits;
    std::map<std::uint64_t, std::pair<std::uint64_t, bool>> cx_peer;  // slot -> (other slot, is control)
    std::vector<std::uint64_t> promoted, freed, measured;
  };

  Topology topo_;
  std::vector<Node> nodes_;
  std::map<ir::Address, std::size_t> node_index_;
  std::vector<BellPair> pairs_;
  std::vector<Message> outgoing_;
  std::map<std::pair<std::uint64_t, std::uint64_t>, std::vector<ir::Address>> bilateral_;
  std::mt19937_64 rng_;
  std::optional<std::vector<std::size_t>> replay_;
  std::vector<Choice> trace_;
  std::uint64_t tick_ = 0;
  std::uint64_t steps_ = 0;
  std::uint64_t seq_ = 0;
  std::uint64_t initial_pairs_ = 0, bsm_ = 0, measured_pairs_ = 0, freed_pairs_ = 0;
  std::map<std::string, std::uint64_t> sent_;
  std::map<ir::Address, std::uint64_t> freed_;
  std::optional<std::string> error_;

  std::size_t choose(const std::vector<double>& probs);
  bool try_fire(Node& node);
  std::optional<Binding> satisfy(const Node& node, const ir::RuleIR& rule) const;
  std::vector<std::string> unsatisfied(const Node& node, const ir::RuleIR& rule) const;
  bool cmp_holds(const Node& node, const ir::CmpClause& cmp, const Binding& b) const;
  std::optional<std::string> resolve(const Node& node, const std::string& cmp_val, const Binding& b,
                                     const Exec* ex) const;
  void run_action(Exec& ex, const ir::ActionClause& action);
  void gate(Exec& ex, std::uint64_t slot, ir::GateKind kind);
  void cx(Exec& ex, std::uint64_t control, std::uint64_t target);
  int measure(Exec& ex, std::uint64_t slot, ir::Basis basis);
  void finish(Node& node, const ir::RuleIR& rule, Exec& ex);
  bool can_fire(const Node& node) const;
  std::uint64_t slot_of(const Exec& ex, const ir::QubitId& q) const;
  BellPair& pair_of(const Node& node, std::uint64_t slot);
  Endpoint far_end(const BellPair& pair, ir::Address node) const;
  Slot& slot_at(ir::Address node, std::uint64_t slot);
};

NetworkState init_network(const std::map<ir::Address, ir::RuleSetIR>& rulesets, const Topology& topology,
                          double link_fidelity, std::uint64_t seed);

// Steps until nothing can happen or the budget runs out.
RunReport run_to_quiescence(NetworkState& state, std::uint64_t max_steps);

// Every branch of every choice point (measurement outcomes, purification success).
std::vector<RunReport> enumerate(const std::map<ir::Address, ir::RuleSetIR>& rulesets, const Topology& topology,
                                 double link_fidelity, std::uint64_t max_steps);

std::string to_json(const RunReport& report);
std::string to_json(const std::vector<RunReport>& branches);

}  // namespace rula::sim
