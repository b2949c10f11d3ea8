#pragma once

#include <algorithm>
#include <cstddef>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <tuple>
#include <vector>

#include "fedsplitx/nn/tensor.hpp"
#include "fedsplitx/split/model.hpp"

namespace fedsplitx::fed {

using nn::Tensor;

enum class Side { client, server };

inline const char* to_string(Side s) { return s == Side::client ? "client" : "server"; }

// Shell m (1..M) is blocks [p_{m-1}, p_m) plus aux head m; shell M+1 is the
// tail blocks plus the output head. Parameters are flattened block by block,
// layer by layer, in parameter order.
struct Shell {
  std::vector<Tensor> blocks;
  std::vector<Tensor> head;

  std::size_t param_count() const {
    std::size_t n = 0;
    for (const auto& t : blocks) n += t.size();
    for (const auto& t : head) n += t.size();
    return n;
  }
};

struct ParamSegments {
  std::vector<Shell> shells;  // shells[m - 1]

  std::size_t num_shells() const { return shells.size(); }
  Shell& shell(std::size_t m) { return shells.at(m - 1); }
  const Shell& shell(std::size_t m) const { return shells.at(m - 1); }

  std::size_t param_count() const {
    std::size_t n = 0;
    for (const auto& s : shells) n += s.param_count();
    return n;
  }
};

struct BlockRange {
  std::size_t begin = 0;
  std::size_t end = 0;
};

inline BlockRange shell_blocks(const split::PartitionPlan& plan, std::size_t m) {
  const std::size_t lo = m == 1 ? 0 : plan.cut(m - 1);
  const std::size_t hi = m <= plan.num_levels() ? plan.cut(m) : plan.total_blocks;
  return {lo, hi};
}

namespace detail {

inline void append_params(const std::vector<nn::Layer>& layers, std::vector<Tensor>& out) {
  for (const auto& l : layers) {
    for (const auto& p : l.params()) out.push_back(p);
  }
}

inline void assign_params(std::vector<nn::Layer>& layers, const std::vector<Tensor>& src, std::size_t& pos,
                          const std::string& where) {
  for (auto& l : layers) {
    for (auto& p : l.params()) {
      if (pos >= src.size()) throw std::invalid_argument(where + ": too few tensors");
      if (src[pos].shape() != p.shape()) {
        throw nn::ShapeError(nn::ShapeError::npos, p.shape(), src[pos].shape(), where);
      }
      p = src[pos++];
    }
  }
}

}  // namespace detail

inline ParamSegments to_segments(const split::FullModel<float>& model, const split::PartitionPlan& plan) {
  model.check_against(plan);
  ParamSegments s;
  s.shells.resize(plan.num_levels() + 1);
  for (std::size_t m = 1; m <= s.num_shells(); ++m) {
    const auto r = shell_blocks(plan, m);
    for (std::size_t b = r.begin; b < r.end; ++b) detail::append_params(model.blocks[b].layers, s.shell(m).blocks);
    detail::append_params(model.heads[m - 1].layers, s.shell(m).head);
  }
  return s;
}

inline void load(split::FullModel<float>& model, const split::PartitionPlan& plan, const ParamSegments& s) {
  model.check_against(plan);
  if (s.num_shells() != plan.num_levels() + 1) throw std::invalid_argument("load: shell count does not match plan");
  for (std::size_t m = 1; m <= s.num_shells(); ++m) {
    const auto r = shell_blocks(plan, m);
    const std::string where = "shell " + std::to_string(m);
    std::size_t pos = 0;
    for (std::size_t b = r.begin; b < r.end; ++b) {
      detail::assign_params(model.blocks[b].layers, s.shell(m).blocks, pos, where + " blocks");
    }
    if (pos != s.shell(m).blocks.size()) throw std::invalid_argument(where + ": too many block tensors");
    pos = 0;
    detail::assign_params(model.heads[m - 1].layers, s.shell(m).head, pos, where + " head");
    if (pos != s.shell(m).head.size()) throw std::invalid_argument(where + ": too many head tensors");
  }
}

// The parts of a shell one side held this round. A side may hold a shell's
// blocks without its head (single-head baselines).
struct ShellPart {
  std::optional<std::vector<Tensor>> blocks;
  std::optional<std::vector<Tensor>> head;
};

struct ShellUpdate {
  std::size_t client_id = 0;
  Side side = Side::client;
  std::size_t level = 0;  // cut level of the round's split
  std::map<std::size_t, ShellPart> shells;
};

inline ShellUpdate to_update(const split::SplitSide<float>& side, const split::PartitionPlan& plan,
                             std::size_t client_id, Side which, std::size_t level) {
  ShellUpdate u{client_id, which, level, {}};
  for (std::size_t m = 1; m <= plan.num_levels() + 1; ++m) {
    const auto r = shell_blocks(plan, m);
    const bool lo_in = r.begin >= side.first_block && r.begin < side.end_block();
    const bool hi_in = r.end > side.first_block && r.end <= side.end_block();
    if (lo_in != hi_in) {
      throw std::logic_error("side [" + std::to_string(side.first_block) + ", " + std::to_string(side.end_block()) +
                             ") cuts through shell " + std::to_string(m));
    }
    if (lo_in) {
      auto& part = u.shells[m].blocks.emplace();
      for (std::size_t b = r.begin; b < r.end; ++b) {
        detail::append_params(side.blocks[b - side.first_block].layers, part);
      }
    }
  }
  for (const auto& h : side.heads) {
    auto& part = u.shells[h.index].head.emplace();
    detail::append_params(h.head.layers, part);
  }
  return u;
}

// Contributor counts per shell, split by side and by part.
struct ShellWeights {
  std::size_t client_blocks = 0;
  std::size_t server_blocks = 0;
  std::size_t client_head = 0;
  std::size_t server_head = 0;

  std::size_t blocks() const { return client_blocks + server_blocks; }
  std::size_t head() const { return client_head + server_head; }
};

struct AggregationWeights {
  std::vector<ShellWeights> shells;  // shells[m - 1]

  const ShellWeights& shell(std::size_t m) const { return shells.at(m - 1); }

  // Participants holding client shell m: the shell's blocks, or its head when
  // the shell has no blocks.
  std::size_t client_count(std::size_t m) const {
    const auto& w = shell(m);
    return std::max(w.client_blocks, w.client_head);
  }
  std::size_t server_count(std::size_t m) const {
    const auto& w = shell(m);
    return std::max(w.server_blocks, w.server_head);
  }
};

inline AggregationWeights aggregation_weights(const std::vector<ShellUpdate>& updates, std::size_t num_shells) {
  AggregationWeights w;
  w.shells.resize(num_shells);
  for (const auto& u : updates) {
    for (const auto& [m, part] : u.shells) {
      if (m < 1 || m > num_shells) throw std::out_of_range("update names shell " + std::to_string(m));
      auto& s = w.shells[m - 1];
      if (part.blocks) ++(u.side == Side::client ? s.client_blocks : s.server_blocks);
      if (part.head) ++(u.side == Side::client ? s.client_head : s.server_head);
    }
  }
  return w;
}

struct Merged {
  ParamSegments global;
  AggregationWeights weights;
};

namespace detail {

inline void check_update_shells(const ShellUpdate& u, std::size_t num_shells) {
  const std::size_t levels = num_shells - 1;
  if (u.level < 1 || u.level > levels) {
    throw std::invalid_argument("update from client " + std::to_string(u.client_id) + " has level " +
                                std::to_string(u.level) + " outside 1.." + std::to_string(levels));
  }
  for (const auto& [m, part] : u.shells) {
    const bool ok = u.side == Side::client ? (m >= 1 && m <= u.level) : (m > u.level && m <= num_shells);
    if (!ok) {
      throw std::invalid_argument(std::string(to_string(u.side)) + " update of client " +
                                  std::to_string(u.client_id) + " at level " + std::to_string(u.level) +
                                  " carries shell " + std::to_string(m));
    }
  }
}

inline void average_into(std::vector<Tensor>& dst, const std::vector<const std::vector<Tensor>*>& srcs,
                         const std::string& where) {
  if (srcs.empty()) return;
  for (const auto* s : srcs) {
    if (s->size() != dst.size()) {
      throw std::invalid_argument(where + ": update has " + std::to_string(s->size()) + " tensors, expected " +
                                  std::to_string(dst.size()));
    }
    for (std::size_t k = 0; k < dst.size(); ++k) {
      if ((*s)[k].shape() != dst[k].shape()) {
        throw nn::ShapeError(nn::ShapeError::npos, dst[k].shape(), (*s)[k].shape(),
                             where + " tensor " + std::to_string(k));
      }
    }
  }
  const double n = static_cast<double>(srcs.size());
  for (std::size_t k = 0; k < dst.size(); ++k) {
    auto out = dst[k].data();
    for (std::size_t i = 0; i < out.size(); ++i) {
      double sum = 0.0;
      for (const auto* s : srcs) sum += static_cast<double>((*s)[k][i]);
      out[i] = static_cast<float>(sum / n);
    }
  }
}

}  // namespace detail

// Shell-wise averaging. Every part of every shell becomes the unweighted mean
// over the updates that hold it, client and server copies pooled; parts no
// update holds keep their previous value. Sums run in double over updates
// sorted by (client id, side), so the result does not depend on the order
// updates arrive in.
inline Merged heteroavg(const ParamSegments& previous, std::vector<ShellUpdate> updates) {
  const std::size_t n_shells = previous.num_shells();
  if (n_shells < 2) throw std::invalid_argument("heteroavg: need at least 2 shells");
  for (const auto& u : updates) detail::check_update_shells(u, n_shells);
  std::sort(updates.begin(), updates.end(), [](const ShellUpdate& a, const ShellUpdate& b) {
    return std::tie(a.client_id, a.side) < std::tie(b.client_id, b.side);
  });
  for (std::size_t i = 1; i < updates.size(); ++i) {
    if (updates[i].client_id == updates[i - 1].client_id && updates[i].side == updates[i - 1].side) {
      throw std::invalid_argument("heteroavg: duplicate " + std::string(to_string(updates[i].side)) +
                                  " update from client " + std::to_string(updates[i].client_id));
    }
  }

  Merged out{previous, aggregation_weights(updates, n_shells)};
  for (std::size_t m = 1; m <= n_shells; ++m) {
    std::vector<const std::vector<Tensor>*> blocks, head;
    for (const auto& u : updates) {
      auto it = u.shells.find(m);
      if (it == u.shells.end()) continue;
      if (it->second.blocks) blocks.push_back(&*it->second.blocks);
      if (it->second.head) head.push_back(&*it->second.head);
    }
    detail::average_into(out.global.shell(m).blocks, blocks, "shell " + std::to_string(m) + " blocks");
    detail::average_into(out.global.shell(m).head, head, "shell " + std::to_string(m) + " head");
  }
  return out;
}

}  // namespace fedsplitx::fed
