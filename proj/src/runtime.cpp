#include "rula/runtime.hpp"

#include <algorithm>
#include <cstdlib>
#include <json.hpp>
#include <set>

namespace rula::sim {

BellPair apply_pauli(BellPair pair, ir::Address endpoint, Pauli gate) {
  if (pair.ends[0].node != endpoint && pair.ends[1].node != endpoint) {
    throw RuntimeError("endpoint " + std::to_string(endpoint) + " is not on pair " + std::to_string(pair.id));
  }
  if (gate == Pauli::X || gate == Pauli::XZ) pair.index.parity ^= 1;
  if (gate == Pauli::Z || gate == Pauli::XZ) pair.index.phase ^= 1;
  return pair;
}

double purify_update(double fa, double fb) {
  const double keep = fa * fb;
  const double p = keep + (1.0 - fa) * (1.0 - fb);
  return p > 0.0 ? keep / p : 0.0;
}

double purify_update(double f) { return purify_update(f, f); }

namespace {

bool is_deferred(const ir::ConditionClause& c) {
  const auto* cmp = std::get_if<ir::CmpClause>(&c);
  return cmp && cmp->cmp_val.rfind("MeasResult", 0) == 0;
}

// "MeasResult" -> whole rule, "MeasResult[lo:hi]" -> that measurement range.
std::optional<std::pair<std::size_t, std::size_t>> meas_range(const std::string& cmp_val) {
  if (cmp_val == "MeasResult") return std::nullopt;
  const auto open = cmp_val.find('['), colon = cmp_val.find(':'), close = cmp_val.find(']');
  if (open == std::string::npos || colon == std::string::npos || close == std::string::npos) return std::nullopt;
  return std::make_pair(std::stoul(cmp_val.substr(open + 1, colon - open - 1)),
                        std::stoul(cmp_val.substr(colon + 1, close - colon - 1)));
}

// Last measured bit leftmost.
std::string render_bits(const std::vector<int>& bits, std::size_t lo, std::size_t hi) {
  std::string out;
  for (std::size_t i = hi; i > lo; --i) out += bits[i - 1] ? '1' : '0';
  return out;
}

std::size_t measure_count(const ir::RuleIR& rule) {
  return static_cast<std::size_t>(std::count_if(rule.action.clauses.begin(), rule.action.clauses.end(), [](const auto& c) {
    return std::holds_alternative<ir::MeasureAction>(c);
  }));
}

std::optional<double> as_number(const std::string& s) {
  if (s.empty()) return std::nullopt;
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (end != s.c_str() + s.size()) return std::nullopt;
  return v;
}

std::string target_text(const ir::TaggedValue& t) {
  if (const auto* s = std::get_if<std::string>(&t.value)) return *s;
  if (const auto* i = std::get_if<std::int64_t>(&t.value)) return std::to_string(*i);
  if (const auto* d = std::get_if<double>(&t.value)) return nlohmann::json(*d).dump();
  return std::get<bool>(t.value) ? "true" : "false";
}

}  // namespace

NetworkState::NetworkState(std::map<ir::Address, ir::RuleSetIR> rulesets, Topology topology, double link_fidelity,
                           std::uint64_t seed)
    : topo_(std::move(topology)), rng_(seed) {
  if (!(link_fidelity >= 0.0 && link_fidelity <= 1.0)) throw RuntimeError("link fidelity out of range [0,1]");
  std::vector<Repeater> order = topo_.repeaters();
  std::sort(order.begin(), order.end(), [](const Repeater& a, const Repeater& b) { return a.address < b.address; });
  for (const auto& rep : order) {
    auto it = rulesets.find(rep.address);
    if (it == rulesets.end()) throw RuntimeError("missing RuleSet for address " + std::to_string(rep.address));
    Node node;
    node.address = rep.address;
    node.ruleset = std::move(it->second);
    node_index_[rep.address] = nodes_.size();
    nodes_.push_back(std::move(node));
  }

  // enough link pairs for the hungriest single rule on either side
  std::map<std::pair<ir::Address, ir::Address>, std::uint64_t> demand;
  for (const auto& node : nodes_) {
    for (const auto& stage : node.ruleset.stages) {
      for (const auto& rule : stage.rules) {
        std::map<ir::Address, std::uint64_t> per_partner;
        for (const auto& c : rule.condition.clauses) {
          if (const auto* res = std::get_if<ir::ResClause>(&c)) per_partner[res->partner_addr] += res->count;
        }
        for (const auto& [partner, n] : per_partner) {
          auto& d = demand[{node.address, partner}];
          d = std::max(d, n);
        }
      }
    }
  }
  const auto& reps = topo_.repeaters();
  for (std::size_t i = 0; i + 1 < reps.size(); ++i) {
    const ir::Address a = reps[i].address, b = reps[i + 1].address;
    const std::uint64_t count = std::max<std::uint64_t>({1, demand[{a, b}], demand[{b, a}]});
    for (std::uint64_t k = 0; k < count; ++k) {
      BellPair pair;
      pair.id = pairs_.size();
      pair.fidelity = link_fidelity;
      Node& na = nodes_[node_index_.at(a)];
      Node& nb = nodes_[node_index_.at(b)];
      pair.ends[0] = {a, na.slots.size()};
      pair.ends[1] = {b, nb.slots.size()};
      na.slots.push_back(Slot{pair.id, b, 0, std::nullopt, true, std::nullopt, ir::Basis::Z});
      nb.slots.push_back(Slot{pair.id, a, 0, std::nullopt, true, std::nullopt, ir::Basis::Z});
      pairs_.push_back(pair);
    }
  }
  initial_pairs_ = pairs_.size();
}

void NetworkState::replay(std::vector<std::size_t> prefix) { replay_ = std::move(prefix); }

std::size_t NetworkState::choose(const std::vector<double>& probs) {
  std::size_t pick = 0;
  if (replay_) {
    if (trace_.size() < replay_->size()) {
      pick = (*replay_)[trace_.size()];
    } else {
      while (pick + 1 < probs.size() && probs[pick] <= 0.0) ++pick;
    }
  } else {
    const double u = static_cast<double>(rng_() >> 11) * 0x1.0p-53;
    double acc = 0.0;
    pick = probs.size() - 1;
    for (std::size_t i = 0; i < probs.size(); ++i) {
      acc += probs[i];
      if (u < acc) {
        pick = i;
        break;
      }
    }
  }
  trace_.push_back({probs.size(), pick, probs});
  return pick;
}

NetworkState::Slot& NetworkState::slot_at(ir::Address node, std::uint64_t slot) {
  return nodes_[node_index_.at(node)].slots.at(slot);
}

BellPair& NetworkState::pair_of(const Node& node, std::uint64_t slot) { return pairs_.at(node.slots.at(slot).pair); }

Endpoint NetworkState::far_end(const BellPair& pair, ir::Address node) const {
  return pair.ends[0].node == node ? pair.ends[1] : pair.ends[0];
}

std::uint64_t NetworkState::slot_of(const Exec& ex, const ir::QubitId& q) const {
  auto it = ex.binding.qubits.find(q.qubit_index);
  if (it == ex.binding.qubits.end()) {
    throw RuntimeError("qubit " + std::to_string(q.qubit_index) + " is not bound by a Res clause");
  }
  return it->second;
}

std::optional<std::string> NetworkState::resolve(const Node& node, const std::string& cmp_val, const Binding& b,
                                                 const Exec* ex) const {
  if (cmp_val.rfind("message.", 0) == 0) {
    if (!b.message) return std::nullopt;
    const std::string field = cmp_val.substr(8);
    if (field == "kind") return std::string(ir::to_string(b.message->kind));
    auto it = b.message->payload.find(field);
    if (it == b.message->payload.end()) return std::nullopt;
    return it->second;
  }
  if (cmp_val.rfind("MeasResult", 0) == 0) {
    if (!ex) return std::nullopt;
    auto range = meas_range(cmp_val);
    const std::size_t lo = range ? range->first : 0;
    const std::size_t hi = range ? range->second : ex->bits.size();
    if (hi > ex->bits.size() || lo > hi) return std::nullopt;
    return render_bits(ex->bits, lo, hi);
  }
  auto it = node.vars.find(cmp_val);
  if (it == node.vars.end()) return std::nullopt;
  return it->second;
}

bool NetworkState::cmp_holds(const Node& node, const ir::CmpClause& cmp, const Binding& b) const {
  auto lhs = resolve(node, cmp.cmp_val, b, nullptr);
  if (!lhs) return false;
  std::string rhs;
  if (cmp.target_val.kind == ir::TaggedValue::Kind::Var) {
    auto it = node.vars.find(std::get<std::string>(cmp.target_val.value));
    if (it == node.vars.end()) return false;
    rhs = it->second;
  } else {
    rhs = target_text(cmp.target_val);
  }
  int order = 0;
  auto ln = as_number(*lhs), rn = as_number(rhs);
  if (ln && rn && cmp.target_val.kind != ir::TaggedValue::Kind::MeasResult) {
    order = *ln < *rn ? -1 : (*ln > *rn ? 1 : 0);
  } else {
    order = lhs->compare(rhs) < 0 ? -1 : (*lhs == rhs ? 0 : 1);
  }
  switch (cmp.op) {
    case ir::CmpOp::Eq: return order == 0;
    case ir::CmpOp::Neq: return order != 0;
    case ir::CmpOp::Lt: return order < 0;
    case ir::CmpOp::Leq: return order <= 0;
    case ir::CmpOp::Gt: return order > 0;
    case ir::CmpOp::Geq: return order >= 0;
  }
  return false;
}

std::optional<NetworkState::Binding> NetworkState::satisfy(const Node& node, const ir::RuleIR& rule) const {
  Binding b;
  std::set<std::uint64_t> used;
  for (const auto& c : rule.condition.clauses) {
    if (const auto* res = std::get_if<ir::ResClause>(&c)) {
      std::uint64_t found = 0;
      for (std::uint64_t s = 0; s < node.slots.size() && found < res->count; ++s) {
        const Slot& slot = node.slots[s];
        if (!slot.live || slot.measured || used.count(s)) continue;
        if (slot.min_stage > node.stage) continue;
        if (slot.bound_stage && *slot.bound_stage != node.stage) continue;
        if (slot.believed_partner != res->partner_addr) continue;
        if (pairs_[slot.pair].fidelity + 1e-12 < res->fidelity) continue;
        used.insert(s);
        b.qubits[res->qubit_index + found] = s;
        ++found;
      }
      if (found < res->count) return std::nullopt;
    } else if (const auto* recv = std::get_if<ir::RecvClause>(&c)) {
      auto it = node.inbox.find(recv->partner_addr);
      if (it == node.inbox.end() || it->second.empty()) return std::nullopt;
      b.messages[recv->partner_addr] = &it->second.front();
      if (!b.message) b.message = &it->second.front();
    } else if (const auto* timer = std::get_if<ir::TimerClause>(&c)) {
      // a timer nobody set has nothing to wait for
      auto it = node.timers.find(timer->timer_id);
      if (it != node.timers.end() && tick_ < it->second) return std::nullopt;
    }
  }
  for (const auto& c : rule.condition.clauses) {
    const auto* cmp = std::get_if<ir::CmpClause>(&c);
    if (!cmp || is_deferred(c)) continue;
    if (!cmp_holds(node, *cmp, b)) return std::nullopt;
  }
  return b;
}

std::vector<std::string> NetworkState::unsatisfied(const Node& node, const ir::RuleIR& rule) const {
  std::vector<std::string> out;
  for (const auto& c : rule.condition.clauses) {
    ir::RuleIR probe = rule;
    probe.condition.clauses = {c};
    if (is_deferred(c) || satisfy(node, probe)) continue;
    if (const auto* res = std::get_if<ir::ResClause>(&c)) {
      out.push_back("Res{" + std::to_string(res->count) + " with " + std::to_string(res->partner_addr) +
                    " at fidelity >= " + nlohmann::json(res->fidelity).dump() + "}");
    } else if (const auto* recv = std::get_if<ir::RecvClause>(&c)) {
      out.push_back("Recv{from " + std::to_string(recv->partner_addr) + "}");
    } else if (const auto* timer = std::get_if<ir::TimerClause>(&c)) {
      out.push_back("Timer{" + timer->timer_id + "}");
    } else if (const auto* cmp = std::get_if<ir::CmpClause>(&c)) {
      out.push_back("Cmp{" + cmp->cmp_val + " " + std::string(ir::to_string(cmp->op)) + " " +
                    target_text(cmp->target_val) + "}");
    }
  }
  return out;
}

void NetworkState::gate(Exec& ex, std::uint64_t slot, ir::GateKind kind) {
  Slot& s = ex.node->slots.at(slot);
  if (!s.live || s.measured) throw RuntimeError("gate on a released qubit");
  BellPair& pair = pairs_.at(s.pair);
  switch (kind) {
    case ir::GateKind::X: pair = apply_pauli(pair, ex.node->address, Pauli::X); break;
    case ir::GateKind::Z: pair = apply_pauli(pair, ex.node->address, Pauli::Z); break;
    case ir::GateKind::Y: pair = apply_pauli(pair, ex.node->address, Pauli::XZ); break;
    default: throw RuntimeError("gate " + std::string(ir::to_string(kind)) + " is not supported by the Pauli-frame model");
  }
}

void NetworkState::cx(Exec& ex, std::uint64_t control, std::uint64_t target) {
  Node& node = *ex.node;
  const Slot& sc = node.slots.at(control);
  const Slot& st = node.slots.at(target);
  if (!sc.live || sc.measured || !st.live || st.measured) throw RuntimeError("cx on a released qubit");
  if (sc.pair == st.pair) throw RuntimeError("cx between the two halves of one pair");
  BellPair& pc = pairs_.at(sc.pair);
  BellPair& pt = pairs_.at(st.pair);
  const ir::Address fc = far_end(pc, node.address).node;
  const ir::Address ft = far_end(pt, node.address).node;
  if (fc != ft) {
    // first half of a Bell-state measurement; resolved by the measurements
    ex.cx_peer[control] = {target, true};
    ex.cx_peer[target] = {control, false};
    return;
  }
  auto& done = bilateral_[{pc.id, pt.id}];
  if (std::find(done.begin(), done.end(), node.address) == done.end()) done.push_back(node.address);
  if (done.size() < 2) return;

  // both ends applied the same cx: bilateral CNOT on the frames
  pc.index.phase ^= pt.index.phase;
  pt.index.parity ^= pc.index.parity;
  const double fa = pc.fidelity, fb = pt.fidelity;
  if (fa < 1.0 || fb < 1.0) {
    const double p = fa * fb + (1.0 - fa) * (1.0 - fb);
    if (choose({p, 1.0 - p}) == 0) {
      pc.fidelity = purify_update(fa, fb);
    } else {
      pt.index.parity ^= 1;
      pc.fidelity = p < 1.0 ? fa * (1.0 - fb) / (1.0 - p) : 0.0;
    }
  }
}

int NetworkState::measure(Exec& ex, std::uint64_t slot, ir::Basis basis) {
  Node& node = *ex.node;
  Slot& s = node.slots.at(slot);
  if (!s.live || s.measured) throw RuntimeError("measurement of a released qubit (slot " + std::to_string(slot) + ")");
  int bit = 0;
  auto peer = ex.cx_peer.find(slot);
  if (peer != ex.cx_peer.end() && peer->second.second && basis == ir::Basis::X) {
    bit = static_cast<int>(choose({0.5, 0.5}));
  } else if (peer != ex.cx_peer.end() && !peer->second.second && basis == ir::Basis::Z) {
    const std::uint64_t control = peer->second.first;
    const Slot& sc = node.slots.at(control);
    if (!sc.measured || sc.measured_basis != ir::Basis::X) {
      throw RuntimeError("Bell-state measurement needs the control measured in X first");
    }
    bit = static_cast<int>(choose({0.5, 0.5}));
    BellPair& p1 = pairs_.at(sc.pair);
    BellPair& p2 = pairs_.at(s.pair);
    BellPair spliced;
    spliced.id = pairs_.size();
    spliced.ends[0] = far_end(p1, node.address);
    spliced.ends[1] = far_end(p2, node.address);
    spliced.index = {p1.index.phase ^ p2.index.phase ^ *sc.measured, p1.index.parity ^ p2.index.parity ^ bit};
    spliced.fidelity = p1.fidelity * p2.fidelity;
    spliced.live = p1.live && p2.live;
    p1.live = false;
    p2.live = false;
    ++bsm_;
    slot_at(spliced.ends[0].node, spliced.ends[0].slot).pair = spliced.id;
    slot_at(spliced.ends[1].node, spliced.ends[1].slot).pair = spliced.id;
    pairs_.push_back(spliced);
  } else {
    BellPair& pair = pairs_.at(s.pair);
    const Endpoint other = far_end(pair, node.address);
    const Slot& os = slot_at(other.node, other.slot);
    if (os.measured && os.measured_basis == basis && basis != ir::Basis::Y && os.pair == s.pair) {
      bit = *os.measured ^ (basis == ir::Basis::Z ? pair.index.parity : pair.index.phase);
    } else {
      bit = static_cast<int>(choose({0.5, 0.5}));
    }
    if (os.measured && os.pair == s.pair && pair.live) {
      pair.live = false;
      ++measured_pairs_;
    }
  }
  s.measured = bit;
  s.measured_basis = basis;
  ex.measured.push_back(slot);
  return bit;
}

void NetworkState::run_action(Exec& ex, const ir::ActionClause& action) {
  Node& node = *ex.node;
  if (const auto* qc = std::get_if<ir::QCircAction>(&action)) {
    for (std::size_t i = 0; i < qc->qgates.size(); ++i) {
      const auto& g = qc->qgates[i];
      if (g.kind == ir::GateKind::CxControl) {
        if (i + 1 >= qc->qgates.size() || qc->qgates[i + 1].kind != ir::GateKind::CxTarget) {
          throw RuntimeError("CxControl without a following CxTarget");
        }
        cx(ex, slot_of(ex, g.qubit), slot_of(ex, qc->qgates[i + 1].qubit));
        ++i;
      } else if (g.kind == ir::GateKind::CxTarget || g.kind == ir::GateKind::CzControl ||
                 g.kind == ir::GateKind::CzTarget) {
        throw RuntimeError("gate " + std::string(ir::to_string(g.kind)) + " is not supported by the Pauli-frame model");
      } else {
        gate(ex, slot_of(ex, g.qubit), g.kind);
      }
    }
  } else if (const auto* m = std::get_if<ir::MeasureAction>(&action)) {
    ex.bits.push_back(measure(ex, slot_of(ex, m->qubit), m->basis));
  } else if (const auto* send = std::get_if<ir::SendAction>(&action)) {
    if (!node_index_.count(send->partner_addr)) {
      throw RuntimeError("send to unknown address " + std::to_string(send->partner_addr));
    }
    Message msg;
    msg.kind = send->message;
    msg.from = node.address;
    msg.to = send->partner_addr;
    msg.seq = seq_++;
    if (send->payload) {
      msg.payload = *send->payload;
      if (auto it = msg.payload.find("result"); it != msg.payload.end()) {
        auto v = resolve(node, it->second, ex.binding, &ex);
        if (!v) throw RuntimeError("cannot resolve " + it->second + " for a Meas message");
        it->second = *v;
      }
    }
    ++sent_[std::string(ir::to_string(msg.kind))];
    outgoing_.push_back(std::move(msg));
  } else if (const auto* fr = std::get_if<ir::FreeAction>(&action)) {
    const std::uint64_t slot = slot_of(ex, fr->qubit);
    Slot& s = node.slots.at(slot);
    if (!s.live || s.measured) throw RuntimeError("free of a released qubit");
    s.live = false;
    s.bound_stage.reset();
    ++freed_[node.address];
    BellPair& pair = pairs_.at(s.pair);
    if (pair.live) {
      pair.live = false;
      ++freed_pairs_;
    }
    ex.freed.push_back(slot);
  } else if (const auto* pr = std::get_if<ir::PromoteAction>(&action)) {
    const std::uint64_t slot = slot_of(ex, pr->qubit);
    Slot& s = node.slots.at(slot);
    if (!s.live || s.measured) throw RuntimeError("promote of a released qubit");
    s.min_stage = node.stage + 1;
    s.bound_stage.reset();
    s.believed_partner = far_end(pairs_.at(s.pair), node.address).node;
    ex.promoted.push_back(slot);
  } else if (const auto* set = std::get_if<ir::SetAction>(&action)) {
    auto v = resolve(node, set->variable, ex.binding, &ex);
    if (!v) throw RuntimeError("cannot resolve " + set->variable + " for Set");
    node.vars[set->alias ? *set->alias : set->variable] = *v;
  } else if (const auto* timer = std::get_if<ir::SetTimerAction>(&action)) {
    node.timers[timer->timer_id] = tick_ + timer->duration;
  }
}

void NetworkState::finish(Node& node, const ir::RuleIR& rule, Exec& ex) {
  for (const auto& [partner, msg] : ex.binding.messages) {
    (void)msg;
    node.inbox[partner].pop_front();
  }
  std::vector<std::uint64_t> held;
  for (const auto& [index, slot] : ex.binding.qubits) {
    const Slot& s = node.slots[slot];
    const bool promoted = std::find(ex.promoted.begin(), ex.promoted.end(), slot) != ex.promoted.end();
    if (s.live && !s.measured && !promoted) held.push_back(slot);
  }
  const bool has_recv = std::any_of(rule.condition.clauses.begin(), rule.condition.clauses.end(),
                                    [](const auto& c) { return std::holds_alternative<ir::RecvClause>(c); });
  if (has_recv && !held.empty()) {
    // a message handler keeps its resource until a later message releases it
    for (auto slot : held) node.slots[slot].bound_stage = node.stage;
    return;
  }
  for (auto& s : node.slots) {
    if (s.bound_stage && *s.bound_stage == node.stage) s.bound_stage.reset();
  }
  ++node.stage;
}

bool NetworkState::try_fire(Node& node) {
  if (node.stage >= node.ruleset.stages.size()) return false;
  const auto& rules = node.ruleset.stages[node.stage].rules;
  for (std::size_t i = 0; i < rules.size(); ++i) {
    auto binding = satisfy(node, rules[i]);
    if (!binding) continue;
    Exec ex;
    ex.node = &node;
    ex.binding = *binding;
    const bool deferred = std::any_of(rules[i].condition.clauses.begin(), rules[i].condition.clauses.end(), is_deferred);
    if (!deferred) {
      for (const auto& a : rules[i].action.clauses) run_action(ex, a);
      finish(node, rules[i], ex);
      return true;
    }

    // siblings differ only in their outcome comparisons: run the shared prefix, then pick
    std::vector<const ir::RuleIR*> candidates{&rules[i]};
    for (std::size_t j = i + 1; j < rules.size(); ++j) {
      if (rules[j].shared_tag == rules[i].shared_tag && satisfy(node, rules[j])) candidates.push_back(&rules[j]);
    }
    std::size_t done = 0;
    while (true) {
      auto decided = [&](const ir::RuleIR& r, bool& holds) {
        holds = true;
        for (const auto& c : r.condition.clauses) {
          if (!is_deferred(c)) continue;
          const auto& cmp = std::get<ir::CmpClause>(c);
          auto range = meas_range(cmp.cmp_val);
          const std::size_t need = range ? range->second : measure_count(r);
          if (ex.bits.size() < need) return false;
          Binding b = ex.binding;
          auto lhs = resolve(node, cmp.cmp_val, b, &ex);
          const std::string rhs = target_text(cmp.target_val);
          const bool eq = lhs && *lhs == rhs;
          if ((cmp.op == ir::CmpOp::Eq && !eq) || (cmp.op == ir::CmpOp::Neq && eq)) holds = false;
        }
        return true;
      };
      std::vector<const ir::RuleIR*> alive;
      for (const auto* r : candidates) {
        bool holds = true;
        if (!decided(*r, holds) || holds) alive.push_back(r);
      }
      candidates = std::move(alive);
      if (candidates.empty()) throw RuntimeError("no sibling rule matches the measurement outcome");
      bool holds = true;
      if (decided(*candidates.front(), holds) && holds) {
        const ir::RuleIR& chosen = *candidates.front();
        for (std::size_t k = done; k < chosen.action.clauses.size(); ++k) run_action(ex, chosen.action.clauses[k]);
        finish(node, chosen, ex);
        return true;
      }
      const ir::RuleIR& lead = *candidates.front();
      if (done >= lead.action.clauses.size()) throw RuntimeError("rule outcome comparison never decided");
      for (const auto* r : candidates) {
        if (done >= r->action.clauses.size() || !(r->action.clauses[done] == lead.action.clauses[done])) {
          throw RuntimeError("sibling rules diverge before their measurement outcome is known");
        }
      }
      run_action(ex, lead.action.clauses[done]);
      ++done;
    }
  }
  return false;
}

bool NetworkState::can_fire(const Node& node) const {
  if (node.stage >= node.ruleset.stages.size()) return false;
  for (const auto& rule : node.ruleset.stages[node.stage].rules) {
    if (satisfy(node, rule)) return true;
  }
  return false;
}

bool NetworkState::step() {
  if (error_) return false;
  ++tick_;
  ++steps_;
  bool progress = false;
  for (auto& node : nodes_) {
    try {
      if (try_fire(node)) progress = true;
    } catch (const RuntimeError& err) {
      const std::size_t stage = node.stage;
      error_ = "node " + std::to_string(node.address) + " stage " + std::to_string(stage) + ": " + err.what();
      return false;
    }
  }
  for (auto& msg : outgoing_) nodes_[node_index_.at(msg.to)].inbox[msg.from].push_back(std::move(msg));
  if (!outgoing_.empty()) progress = true;
  outgoing_.clear();
  if (!progress) {
    for (const auto& node : nodes_) {
      for (const auto& [id, expiry] : node.timers) {
        if (expiry > tick_) progress = true;
      }
    }
  }
  return progress;
}

RunReport NetworkState::report() const {
  RunReport r;
  r.steps = steps_;
  r.error = error_;
  bool waiting_timer = false;
  bool any_fire = false;
  for (const auto& node : nodes_) {
    if (can_fire(node)) any_fire = true;
    for (const auto& [id, expiry] : node.timers) {
      if (expiry > tick_) waiting_timer = true;
    }
  }
  r.quiescent = !error_ && outgoing_.empty() && !any_fire && !waiting_timer;
  for (const auto& node : nodes_) {
    if (node.stage < node.ruleset.stages.size()) {
      std::string line = "node " + std::to_string(node.address) + " stage " + std::to_string(node.stage) + ": waiting";
      const auto& rules = node.ruleset.stages[node.stage].rules;
      if (!rules.empty()) {
        auto missing = unsatisfied(node, rules.front());
        for (std::size_t i = 0; i < missing.size(); ++i) line += (i ? ", " : " on ") + missing[i];
      }
      r.stuck.push_back(line);
    }
    for (const auto& [from, queue] : node.inbox) {
      for (const auto& msg : queue) {
        r.stuck.push_back("node " + std::to_string(node.address) + ": unconsumed " +
                          std::string(ir::to_string(msg.kind)) + " from " + std::to_string(from));
      }
    }
  }
  for (const auto& pair : pairs_) {
    if (!pair.live) continue;
    const Slot& a = nodes_[node_index_.at(pair.ends[0].node)].slots[pair.ends[0].slot];
    const Slot& b = nodes_[node_index_.at(pair.ends[1].node)].slots[pair.ends[1].slot];
    if (!a.live || a.measured || !b.live || b.measured) continue;
    FinalPair fp{pair.ends[0].node, pair.ends[1].node, pair.index, pair.fidelity};
    if (fp.a > fp.b) std::swap(fp.a, fp.b);
    r.pairs.push_back(fp);
  }
  std::sort(r.pairs.begin(), r.pairs.end(),
            [](const FinalPair& x, const FinalPair& y) { return std::tie(x.a, x.b) < std::tie(y.a, y.b); });
  for (auto kind : {ir::MessageKind::Free, ir::MessageKind::Update, ir::MessageKind::Meas, ir::MessageKind::Transfer}) {
    const std::string name(ir::to_string(kind));
    auto it = sent_.find(name);
    r.messages[name] = it == sent_.end() ? 0 : it->second;
  }
  for (const auto& node : nodes_) {
    auto it = freed_.find(node.address);
    r.freed[node.address] = it == freed_.end() ? 0 : it->second;
  }
  r.initial_pairs = initial_pairs_;
  r.bsm = bsm_;
  r.measured_pairs = measured_pairs_;
  r.freed_pairs = freed_pairs_;
  return r;
}

NetworkState init_network(const std::map<ir::Address, ir::RuleSetIR>& rulesets, const Topology& topology,
                          double link_fidelity, std::uint64_t seed) {
  return NetworkState(rulesets, topology, link_fidelity, seed);
}

RunReport run_to_quiescence(NetworkState& state, std::uint64_t max_steps) {
  if (max_steps == 0) throw RuntimeError("max steps must be at least 1");
  for (std::uint64_t i = 0; i < max_steps; ++i) {
    if (!state.step()) break;
  }
  return state.report();
}

std::vector<RunReport> enumerate(const std::map<ir::Address, ir::RuleSetIR>& rulesets, const Topology& topology,
                                 double link_fidelity, std::uint64_t max_steps) {
  constexpr std::size_t kMaxBranches = 1u << 20;
  std::vector<RunReport> out;
  std::vector<std::size_t> prefix;
  while (true) {
    NetworkState state(rulesets, topology, link_fidelity, 0);
    state.replay(prefix);
    RunReport report = run_to_quiescence(state, max_steps);
    const auto& trace = state.trace();
    for (const auto& c : trace) report.branch.push_back(c.taken);
    out.push_back(std::move(report));
    if (out.size() >= kMaxBranches) throw RuntimeError("too many outcome branches");

    std::optional<std::size_t> pivot;
    std::size_t next = 0;
    for (std::size_t k = trace.size(); k-- > 0 && !pivot;) {
      for (std::size_t o = trace[k].taken + 1; o < trace[k].arity; ++o) {
        if (trace[k].probs[o] > 0.0) {
          pivot = k;
          next = o;
          break;
        }
      }
    }
    if (!pivot) break;
    prefix.clear();
    for (std::size_t k = 0; k < *pivot; ++k) prefix.push_back(trace[k].taken);
    prefix.push_back(next);
  }
  return out;
}

namespace {

nlohmann::ordered_json report_json(const RunReport& r) {
  nlohmann::ordered_json j;
  j["steps"] = r.steps;
  j["quiescent"] = r.quiescent;
  j["stuck"] = r.stuck;
  auto pairs = nlohmann::ordered_json::array();
  for (const auto& p : r.pairs) {
    nlohmann::ordered_json pj;
    pj["endpoints"] = {p.a, p.b};
    pj["bell_index"] = {p.index.phase, p.index.parity};
    pj["fidelity"] = p.fidelity;
    pairs.push_back(std::move(pj));
  }
  j["pairs"] = std::move(pairs);
  nlohmann::ordered_json messages = nlohmann::ordered_json::object();
  for (const auto& [k, v] : r.messages) messages[k] = v;
  j["messages"] = std::move(messages);
  nlohmann::ordered_json freed = nlohmann::ordered_json::object();
  for (const auto& [k, v] : r.freed) freed[std::to_string(k)] = v;
  j["freed"] = std::move(freed);
  j["initial_pairs"] = r.initial_pairs;
  j["bsm"] = r.bsm;
  j["measured_pairs"] = r.measured_pairs;
  j["freed_pairs"] = r.freed_pairs;
  if (r.error) j["error"] = *r.error;
  if (!r.branch.empty()) j["branch"] = r.branch;
  return j;
}

}  // namespace

std::string to_json(const RunReport& report) { return report_json(report).dump(4) + "\n"; }

std::string to_json(const std::vector<RunReport>& branches) {
  nlohmann::ordered_json j;
  j["branches"] = branches.size();
  j["all_quiescent"] = std::all_of(branches.begin(), branches.end(), [](const RunReport& r) { return r.success(); });
  auto list = nlohmann::ordered_json::array();
  for (const auto& b : branches) list.push_back(report_json(b));
  j["results"] = std::move(list);
  return j.dump(4) + "\n";
}

}  // namespace rula::sim
