#include "rula/config.hpp"

#include <json.hpp>

namespace rula {

Topology::Topology(std::vector<Repeater> repeaters) : repeaters_(std::move(repeaters)) {
  if (repeaters_.empty()) throw ConfigError("at least one repeater required");
  for (std::size_t i = 0; i < repeaters_.size(); ++i) {
    repeaters_[i].index = i;
    if (!by_address_.emplace(repeaters_[i].address, i).second) {
      throw ConfigError("duplicate address " + std::to_string(repeaters_[i].address) +
                        " (repeaters[" + std::to_string(i) + "])");
    }
  }
}

const Repeater& Topology::repeater_at(std::int64_t index) const {
  if (index < 0 || static_cast<std::size_t>(index) >= repeaters_.size()) {
    throw ConfigError("repeater index " + std::to_string(index) + " out of range (count " +
                      std::to_string(repeaters_.size()) + ")");
  }
  return repeaters_[static_cast<std::size_t>(index)];
}

const Repeater& Topology::resolve_hop(std::int64_t from_index, std::int64_t offset) const {
  const std::int64_t target = from_index + offset;
  if (from_index < 0 || static_cast<std::size_t>(from_index) >= repeaters_.size() || target < 0 ||
      static_cast<std::size_t>(target) >= repeaters_.size()) {
    throw ConfigError("hop leaves the path (from index " + std::to_string(from_index) + " by " +
                      std::to_string(offset) + ", count " + std::to_string(repeaters_.size()) + ")");
  }
  return repeaters_[static_cast<std::size_t>(target)];
}

std::optional<std::size_t> Topology::index_of(ir::Address address) const {
  auto it = by_address_.find(address);
  if (it == by_address_.end()) return std::nullopt;
  return it->second;
}

Topology load_config(std::string_view text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text.begin(), text.end());
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("malformed config JSON at byte " + std::to_string(e.byte));
  }
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (it.key() != "repeaters") throw ConfigError("unknown key " + it.key() + " (only a linear chain is supported)");
  }
  auto list = j.find("repeaters");
  if (list == j.end()) throw ConfigError("missing field repeaters");
  if (!list->is_array()) throw ConfigError("repeaters: expected array");

  std::vector<Repeater> repeaters;
  for (std::size_t i = 0; i < list->size(); ++i) {
    const auto& entry = (*list)[i];
    const std::string where = "repeaters[" + std::to_string(i) + "]";
    if (!entry.is_object()) throw ConfigError(where + ": expected object");
    for (auto it = entry.begin(); it != entry.end(); ++it) {
      if (it.key() != "name" && it.key() != "address") throw ConfigError(where + ": unknown key " + it.key());
    }
    auto name = entry.find("name");
    if (name == entry.end()) throw ConfigError(where + ": missing field name");
    if (!name->is_string()) throw ConfigError(where + ".name: expected string");
    auto address = entry.find("address");
    if (address == entry.end()) throw ConfigError(where + ": missing field address");
    if (!address->is_number_unsigned()) throw ConfigError(where + ".address: expected unsigned integer");
    repeaters.push_back(Repeater{name->get<std::string>(), address->get<std::uint64_t>(), i});
  }
  return Topology(std::move(repeaters));
}

}  // namespace rula
