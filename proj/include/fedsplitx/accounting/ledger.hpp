#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <tuple>

namespace fedsplitx::acct {

enum class EntityKind : std::uint8_t { client, main_server, fed_server };

struct Entity {
  EntityKind kind = EntityKind::client;
  std::size_t id = 0;  // client id; 0 for the servers

  static Entity client(std::size_t k) { return {EntityKind::client, k}; }
  static Entity main_server() { return {EntityKind::main_server, 0}; }
  static Entity fed_server() { return {EntityKind::fed_server, 0}; }

  friend auto operator<=>(const Entity&, const Entity&) = default;
};

inline std::string to_string(const Entity& e) {
  switch (e.kind) {
    case EntityKind::client: return "client " + std::to_string(e.id);
    case EntityKind::main_server: return "main server";
    case EntityKind::fed_server: return "fed server";
  }
  return "?";
}

// Directions are seen from the client end of the link.
enum class Direction : std::uint8_t { param_download, param_upload, smashed_upload, gradient_return };

struct Counters {
  std::uint64_t flops_forward = 0;
  std::uint64_t flops_backward = 0;
  std::uint64_t bytes_up = 0;        // parameters and smashed data
  std::uint64_t bytes_down = 0;      // parameters
  std::uint64_t bytes_gradient_return = 0;
  std::uint64_t bytes_smashed = 0;   // part of bytes_up

  Counters& operator+=(const Counters& o) {
    flops_forward += o.flops_forward;
    flops_backward += o.flops_backward;
    bytes_up += o.bytes_up;
    bytes_down += o.bytes_down;
    bytes_gradient_return += o.bytes_gradient_return;
    bytes_smashed += o.bytes_smashed;
    return *this;
  }
  friend bool operator==(const Counters&, const Counters&) = default;
};

struct TrafficEvent {
  std::size_t round = 0;
  Entity entity;
  Direction direction = Direction::param_download;
  std::uint64_t elements = 0;
};

struct ComputeEvent {
  std::size_t round = 0;
  Entity entity;
  std::uint64_t forward = 0;
  std::uint64_t backward = 0;
};

inline constexpr std::uint64_t bytes_per_element = 4;

class CostLedger {
 public:
  using Key = std::tuple<std::size_t, Entity>;

  Counters& at(std::size_t round, const Entity& e) {
    if (!entries_.empty() && round < last_round_) {
      throw std::logic_error("ledger rounds must not go backwards (round " + std::to_string(round) + " after " +
                             std::to_string(last_round_) + ")");
    }
    last_round_ = round;
    return entries_[{round, e}];
  }

  const std::map<Key, Counters>& entries() const { return entries_; }

  Counters total() const {
    Counters c;
    for (const auto& [k, v] : entries_) c += v;
    return c;
  }

  Counters round_total(std::size_t round) const {
    Counters c;
    for (const auto& [k, v] : entries_) {
      if (std::get<0>(k) == round) c += v;
    }
    return c;
  }

  Counters entity_total(const Entity& e) const {
    Counters c;
    for (const auto& [k, v] : entries_) {
      if (std::get<1>(k) == e) c += v;
    }
    return c;
  }

  Counters get(std::size_t round, const Entity& e) const {
    auto it = entries_.find({round, e});
    return it == entries_.end() ? Counters{} : it->second;
  }

 private:
  std::map<Key, Counters> entries_;
  std::size_t last_round_ = 0;
};

inline void record_traffic(CostLedger& ledger, const TrafficEvent& ev) {
  auto& c = ledger.at(ev.round, ev.entity);
  const std::uint64_t bytes = ev.elements * bytes_per_element;
  switch (ev.direction) {
    case Direction::param_download: c.bytes_down += bytes; break;
    case Direction::param_upload: c.bytes_up += bytes; break;
    case Direction::smashed_upload:
      c.bytes_up += bytes;
      c.bytes_smashed += bytes;
      break;
    case Direction::gradient_return: c.bytes_gradient_return += bytes; break;
  }
}

inline void record_compute(CostLedger& ledger, const ComputeEvent& ev) {
  auto& c = ledger.at(ev.round, ev.entity);
  c.flops_forward += ev.forward;
  c.flops_backward += ev.backward;
}

}  // namespace fedsplitx::acct
