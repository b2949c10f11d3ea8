#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "fedsplitx/nn/network.hpp"

namespace fedsplitx::split {

using nn::BasicLayer;
using nn::BasicTensor;

// Dense classifier attached at a cut. A mean-pool precedes the dense layer
// when the activation there is [batch, positions, channels].
struct AuxHeadSpec {
  std::size_t input_width = 0;
  std::size_t num_classes = 0;
  bool pooled = false;
};

// M cut points into a model of `total_blocks` blocks. Cut m sits between
// block p_m - 1 and block p_m; head m attaches there. Level m puts blocks
// [0, p_m) on the client.
struct PartitionPlan {
  std::size_t total_blocks = 0;
  std::vector<std::size_t> cut_points;
  std::vector<AuxHeadSpec> aux_heads;

  std::size_t num_levels() const { return cut_points.size(); }

  // Block boundary for head `index` (1-based); index M+1 is the model output.
  std::size_t head_boundary(std::size_t index) const {
    return index <= num_levels() ? cut_points.at(index - 1) : total_blocks;
  }

  std::size_t cut(std::size_t level) const { return cut_points.at(level - 1); }

  // Shell (1-based) a block belongs to: shell m covers [p_{m-1}, p_m) with
  // p_0 = 0; shell M+1 is the tail.
  std::size_t shell_of_block(std::size_t block) const {
    for (std::size_t m = 0; m < cut_points.size(); ++m) {
      if (block < cut_points[m]) return m + 1;
    }
    return num_levels() + 1;
  }

  void validate() const {
    if (cut_points.empty()) throw std::invalid_argument("partition plan needs at least one cut point");
    if (aux_heads.size() != cut_points.size()) {
      throw std::invalid_argument("partition plan needs exactly one aux head per cut point (" +
                                  std::to_string(cut_points.size()) + " cuts, " + std::to_string(aux_heads.size()) +
                                  " heads)");
    }
    std::size_t prev = 0;
    for (std::size_t p : cut_points) {
      if (p <= prev || p >= total_blocks) {
        throw std::invalid_argument("cut points must be strictly increasing and interior to (0, " +
                                    std::to_string(total_blocks) + ")");
      }
      prev = p;
    }
  }
};

template <typename T>
struct Block {
  std::vector<BasicLayer<T>> layers;
};

template <typename T>
struct Head {
  std::vector<BasicLayer<T>> layers;

  static Head from_spec(const AuxHeadSpec& spec) {
    Head h;
    if (spec.pooled) h.layers.push_back(BasicLayer<T>::mean_pool());
    h.layers.push_back(BasicLayer<T>::dense(spec.input_width, spec.num_classes));
    return h;
  }
};

// Blocks plus M+1 heads (M aux heads, then the output head).
template <typename T>
struct FullModel {
  std::vector<Block<T>> blocks;
  std::vector<Head<T>> heads;
  std::size_t num_classes = 0;

  void check_against(const PartitionPlan& plan) const {
    plan.validate();
    if (plan.total_blocks != blocks.size()) {
      throw std::invalid_argument("plan covers " + std::to_string(plan.total_blocks) + " blocks, model has " +
                                  std::to_string(blocks.size()));
    }
    if (heads.size() != plan.num_levels() + 1) {
      throw std::invalid_argument("model needs M+1 = " + std::to_string(plan.num_levels() + 1) + " heads, has " +
                                  std::to_string(heads.size()));
    }
  }

  template <typename U>
  FullModel<U> cast() const {
    FullModel<U> out;
    out.num_classes = num_classes;
    for (const auto& b : blocks) out.blocks.push_back({nn::cast_layers<U>(b.layers)});
    for (const auto& h : heads) out.heads.push_back({nn::cast_layers<U>(h.layers)});
    return out;
  }
};

template <typename T>
struct AttachedHead {
  std::size_t index = 0;     // 1..M+1
  std::size_t boundary = 0;  // global block boundary the head reads from
  bool trains = true;        // contributes to this side's loss
  Head<T> head;
};

// One half of a split model: the contiguous blocks [first_block,
// first_block + blocks.size()) and the heads attached within that range.
template <typename T>
struct SplitSide {
  std::size_t first_block = 0;
  std::vector<Block<T>> blocks;
  std::vector<AttachedHead<T>> heads;

  std::size_t end_block() const { return first_block + blocks.size(); }

  std::size_t input_width() const {
    if (blocks.empty()) return 0;
    for (const auto& l : blocks.front().layers) {
      if (auto* d = l.template as<nn::Dense<T>>()) return d->in_features();
      if (auto* r = l.template as<nn::ResidualBlock<T>>()) return r->width();
    }
    return 0;
  }

  AttachedHead<T>* find_head(std::size_t index) {
    for (auto& h : heads) {
      if (h.index == index) return &h;
    }
    return nullptr;
  }
  const AttachedHead<T>* find_head(std::size_t index) const {
    for (const auto& h : heads) {
      if (h.index == index) return &h;
    }
    return nullptr;
  }

  // Restrict training to the listed head indices; others stay attached but
  // receive no loss term.
  void set_training_heads(const std::vector<std::size_t>& indices) {
    for (auto& h : heads) {
      h.trains = false;
      for (std::size_t i : indices) h.trains = h.trains || (i == h.index);
    }
  }

  std::size_t training_head_count() const {
    std::size_t n = 0;
    for (const auto& h : heads) n += h.trains ? 1 : 0;
    return n;
  }

  template <typename F>
  void for_each_layers(F&& f) {
    for (auto& b : blocks) f(b.layers);
    for (auto& h : heads) f(h.head.layers);
  }
};

template <typename T>
struct SplitModel {
  std::size_t level = 0;
  SplitSide<T> client;
  SplitSide<T> server;
};

// Cuts the model at p_level. Parameters are copied; nothing changes value.
// The client gets blocks [0, p_level) and heads 1..level; the server gets the
// remaining blocks, heads level+1..M and the output head.
template <typename T>
SplitModel<T> split(const FullModel<T>& model, const PartitionPlan& plan, std::size_t level) {
  model.check_against(plan);
  if (level < 1 || level > plan.num_levels()) {
    throw std::out_of_range("split level " + std::to_string(level) + " outside 1.." +
                            std::to_string(plan.num_levels()));
  }
  const std::size_t cut = plan.cut(level);
  SplitModel<T> sm;
  sm.level = level;
  sm.client.first_block = 0;
  sm.server.first_block = cut;
  for (std::size_t b = 0; b < model.blocks.size(); ++b) {
    (b < cut ? sm.client : sm.server).blocks.push_back(model.blocks[b]);
  }
  for (std::size_t i = 1; i <= plan.num_levels() + 1; ++i) {
    AttachedHead<T> h{i, plan.head_boundary(i), true, model.heads[i - 1]};
    (i <= level ? sm.client : sm.server).heads.push_back(std::move(h));
  }
  return sm;
}

// A side holding every block and head, e.g. for evaluating the full model.
template <typename T>
SplitSide<T> whole(const FullModel<T>& model, const PartitionPlan& plan) {
  model.check_against(plan);
  SplitSide<T> side;
  side.blocks = model.blocks;
  for (std::size_t i = 1; i <= plan.num_levels() + 1; ++i) {
    side.heads.push_back({i, plan.head_boundary(i), true, model.heads[i - 1]});
  }
  return side;
}

// Writes a side's blocks and heads back into the full model.
template <typename T>
void write_back(FullModel<T>& model, const SplitSide<T>& side) {
  for (std::size_t j = 0; j < side.blocks.size(); ++j) model.blocks.at(side.first_block + j) = side.blocks[j];
  for (const auto& h : side.heads) model.heads.at(h.index - 1) = h.head;
}

}  // namespace fedsplitx::split
