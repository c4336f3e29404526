#pragma once

// Repeater chain configuration: {"repeaters": [{"name": ..., "address": ...}, ...]}

#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "rula/ruleset_ir.hpp"

namespace rula {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Repeater {
  std::string name;
  ir::Address address = 0;
  std::size_t index = 0;  // position along the path, 0 = initiator side
};

class Topology {
 public:
  Topology() = default;
  explicit Topology(std::vector<Repeater> repeaters);

  std::size_t count() const { return repeaters_.size(); }
  const std::vector<Repeater>& repeaters() const { return repeaters_; }

  // Throws ConfigError naming the index and count.
  const Repeater& repeater_at(std::int64_t index) const;
  // Throws ConfigError "hop leaves the path".
  const Repeater& resolve_hop(std::int64_t from_index, std::int64_t offset) const;
  std::optional<std::size_t> index_of(ir::Address address) const;

 private:
  std::vector<Repeater> repeaters_;
  std::map<ir::Address, std::size_t> by_address_;
};

// Throws ConfigError.
Topology load_config(std::string_view text);

}  // namespace rula
