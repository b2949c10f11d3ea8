#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "fedsplitx/data/dataset.hpp"
#include "fedsplitx/fed/mode.hpp"
#include "fedsplitx/nn/network.hpp"
#include "fedsplitx/rng.hpp"
#include "fedsplitx/split/loss.hpp"
#include "fedsplitx/split/model.hpp"

namespace fedsplitx::fed {

using split::SplitSide;

struct ClientProfile {
  std::size_t id = 0;
  std::size_t depth_level = 1;
  const data::Dataset* data = nullptr;

  std::size_t samples() const { return data ? data->size() : 0; }

  void validate(std::size_t num_levels) const {
    if (depth_level < 1 || depth_level > num_levels) {
      throw std::invalid_argument("client " + std::to_string(id) + ": depth level " + std::to_string(depth_level) +
                                  " outside 1.." + std::to_string(num_levels));
    }
    if (samples() == 0) throw std::invalid_argument("client " + std::to_string(id) + " has no samples");
  }
};

struct RoundPlan {
  std::size_t round = 0;
  std::vector<std::size_t> participants;  // ascending client ids
};

inline std::size_t selection_count(std::size_t pool, double fraction) {
  if (!(fraction > 0.0 && fraction <= 1.0)) throw std::invalid_argument("client fraction must be in (0, 1]");
  if (pool == 0) throw std::invalid_argument("no clients to sample from");
  const auto n = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(pool)));
  return std::clamp<std::size_t>(n, 1, pool);
}

// Uniform sample without replacement from `pool`, a pure function of
// (seed, t, pool).
inline RoundPlan sample_clients(std::size_t t, std::vector<std::size_t> pool, double fraction, std::uint64_t seed) {
  const std::size_t n = selection_count(pool.size(), fraction);
  std::sort(pool.begin(), pool.end());
  Rng rng(derive_seed(seed, 0x73616d70ULL, t));
  rng.shuffle(std::span<std::size_t>(pool));
  RoundPlan p{t, {pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(n)}};
  std::sort(p.participants.begin(), p.participants.end());
  return p;
}

inline RoundPlan sample_clients(std::size_t t, std::size_t k, double fraction, std::uint64_t seed) {
  std::vector<std::size_t> pool(k);
  std::iota(pool.begin(), pool.end(), std::size_t{0});
  return sample_clients(t, std::move(pool), fraction, seed);
}

inline void retain_heads(SplitSide<float>& side, const std::vector<std::size_t>& keep) {
  std::erase_if(side.heads, [&](const split::AttachedHead<float>& h) {
    return std::find(keep.begin(), keep.end(), h.index) == keep.end();
  });
}

inline std::size_t side_param_count(const SplitSide<float>& side) {
  std::size_t n = 0;
  for (const auto& b : side.blocks) n += nn::param_count(std::span<const nn::Layer>(b.layers));
  for (const auto& h : side.heads) n += nn::param_count(std::span<const nn::Layer>(h.head.layers));
  return n;
}

// Per-sample forward MACs of the side's blocks, and of its training heads.
struct SideMacs {
  std::uint64_t blocks = 0;
  std::uint64_t heads = 0;
};

inline SideMacs side_macs(const SplitSide<float>& side) {
  SideMacs m;
  for (const auto& b : side.blocks) m.blocks += nn::forward_macs(std::span<const nn::Layer>(b.layers));
  for (const auto& h : side.heads) {
    if (h.trains) m.heads += nn::forward_macs(std::span<const nn::Layer>(h.head.layers));
  }
  return m;
}

// Copies of the global model for one participant: the client side with its
// role heads, and (when the mode has one) the main server's per-client copy.
inline split::SplitModel<float> distribute(const split::FullModel<float>& global, const split::PartitionPlan& plan,
                                           const Roles& roles) {
  auto sm = split::split(global, plan, roles.cut);
  retain_heads(sm.client, roles.client_heads);
  retain_heads(sm.server, roles.server_heads);
  if (!roles.has_server) {
    sm.server.blocks.clear();
    sm.server.heads.clear();
  }
  return sm;
}

struct LocalStats {
  double mean_loss = 0.0;
  std::size_t steps = 0;
  std::size_t samples = 0;  // samples pushed through training (sum over epochs)
};

template <typename F>
void for_each_minibatch(std::size_t n, const nn::SgdConfig& cfg, Rng& rng, F&& f) {
  std::vector<std::size_t> order(n);
  for (std::size_t e = 0; e < cfg.local_epochs; ++e) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    rng.shuffle(std::span<std::size_t>(order));
    for (std::size_t start = 0; start < n; start += cfg.batch_size) {
      const std::size_t stop = std::min(n, start + cfg.batch_size);
      f(std::span<const std::size_t>(order.data() + start, stop - start));
    }
  }
}

inline void side_sgd_step(SplitSide<float>& side, const nn::SgdConfig& cfg) {
  side.for_each_layers([&](std::vector<nn::Layer>& layers) { nn::sgd_step(layers, cfg); });
}

// E epochs of minibatch SGD on the collaborative loss of the client's
// training heads. Reads nothing but the client's own data and weights.
inline LocalStats client_update(SplitSide<float>& client, const data::Dataset& data, const nn::SgdConfig& cfg,
                                Rng& rng) {
  cfg.validate();
  if (data.size() == 0) throw std::invalid_argument("client_update: empty dataset");
  LocalStats s;
  double total = 0.0;
  for_each_minibatch(data.size(), cfg, rng, [&](std::span<const std::size_t> rows) {
    const auto x = nn::gather_rows(data.features, rows);
    std::vector<std::size_t> y;
    y.reserve(rows.size());
    for (std::size_t r : rows) y.push_back(data.labels[r]);
    const auto loss = split::client_collaborative_loss(client, x, y);
    side_sgd_step(client, cfg);
    total += static_cast<double>(loss.loss);
    ++s.steps;
    s.samples += rows.size();
  });
  s.mean_loss = total / static_cast<double>(s.steps);
  return s;
}

// Cut-layer activations of every local sample under the current weights.
inline split::SmashedBatch get_smashed_data(const SplitSide<float>& client, const data::Dataset& data,
                                            std::size_t client_id, std::size_t level, std::size_t round) {
  split::SmashedBatch b;
  b.activations = split::side_forward(client, data.features, false).output();
  b.labels = data.labels;
  b.client_id = client_id;
  b.level = level;
  b.round = round;
  b.validate();
  return b;
}

inline split::SmashedBatch smashed_rows(const split::SmashedBatch& all, std::span<const std::size_t> rows) {
  split::SmashedBatch b;
  b.activations = nn::gather_rows(all.activations, rows);
  b.labels.reserve(rows.size());
  for (std::size_t r : rows) b.labels.push_back(all.labels[r]);
  b.client_id = all.client_id;
  b.level = all.level;
  b.round = all.round;
  return b;
}

// E epochs of minibatch SGD on the server loss over a fixed smashed batch.
// No gradient leaves the server.
inline LocalStats server_update(SplitSide<float>& server, const split::SmashedBatch& smashed,
                                const nn::SgdConfig& cfg, Rng& rng) {
  cfg.validate();
  smashed.validate();
  if (smashed.labels.empty()) throw std::invalid_argument("server_update: empty smashed batch");
  LocalStats s;
  double total = 0.0;
  for_each_minibatch(smashed.labels.size(), cfg, rng, [&](std::span<const std::size_t> rows) {
    const auto loss = split::server_loss(server, smashed_rows(smashed, rows));
    side_sgd_step(server, cfg);
    total += static_cast<double>(loss.loss);
    ++s.steps;
    s.samples += rows.size();
  });
  s.mean_loss = total / static_cast<double>(s.steps);
  return s;
}

struct LockstepStats {
  LocalStats server;
  std::size_t smashed_elements = 0;   // uploaded, summed over steps
  std::size_t gradient_elements = 0;  // returned to the client, summed over steps
};

// Vanilla split learning: every minibatch goes client -> server -> client,
// and the client backpropagates the returned cut gradient.
inline LockstepStats vanilla_update(SplitSide<float>& client, SplitSide<float>& server, const data::Dataset& data,
                                    std::size_t client_id, std::size_t level, std::size_t round,
                                    const nn::SgdConfig& cfg, Rng& rng) {
  cfg.validate();
  if (data.size() == 0) throw std::invalid_argument("vanilla_update: empty dataset");
  LockstepStats s;
  double total = 0.0;
  for_each_minibatch(data.size(), cfg, rng, [&](std::span<const std::size_t> rows) {
    const auto x = nn::gather_rows(data.features, rows);
    auto acts = split::side_forward(client, x, false);
    split::SmashedBatch b;
    b.activations = acts.output();
    for (std::size_t r : rows) b.labels.push_back(data.labels[r]);
    b.client_id = client_id;
    b.level = level;
    b.round = round;
    auto sl = split::server_loss(server, b);
    split::side_loss_backward(client, acts, std::span<const std::size_t>(b.labels), &sl.smashed_grad);
    side_sgd_step(server, cfg);
    side_sgd_step(client, cfg);
    total += static_cast<double>(sl.loss);
    ++s.server.steps;
    s.server.samples += rows.size();
    s.smashed_elements += b.activations.size();
    s.gradient_elements += sl.smashed_grad.size();
  });
  s.server.mean_loss = total / static_cast<double>(s.server.steps);
  return s;
}

}  // namespace fedsplitx::fed
