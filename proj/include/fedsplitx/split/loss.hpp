#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "fedsplitx/nn/network.hpp"
#include "fedsplitx/split/model.hpp"

namespace fedsplitx::split {

// Activations at the cut as uploaded to the main server, with labels.
template <typename T>
struct BasicSmashedBatch {
  BasicTensor<T> activations;
  std::vector<std::size_t> labels;
  std::size_t client_id = 0;
  std::size_t level = 0;
  std::size_t round = 0;

  void validate() const {
    if (activations.rows() != labels.size()) {
      throw nn::ShapeError(nn::ShapeError::npos, {labels.size(), activations.row_width()}, activations.shape(),
                           "smashed rows vs labels");
    }
  }
};

using SmashedBatch = BasicSmashedBatch<float>;

template <typename T>
struct SideActivations {
  std::vector<std::vector<BasicTensor<T>>> blocks;  // per block: [in, layer outputs...]
  std::vector<std::vector<BasicTensor<T>>> heads;   // parallel to side.heads
  BasicTensor<T> input;

  const BasicTensor<T>& output() const { return blocks.empty() ? input : blocks.back().back(); }
  const BasicTensor<T>& logits(std::size_t head_pos) const { return heads[head_pos].back(); }
};

template <typename T>
const BasicTensor<T>& boundary_activation(const SplitSide<T>& side, const SideActivations<T>& acts,
                                          std::size_t boundary) {
  if (boundary < side.first_block || boundary > side.end_block()) {
    throw std::out_of_range("head boundary " + std::to_string(boundary) + " outside side blocks [" +
                            std::to_string(side.first_block) + ", " + std::to_string(side.end_block()) + "]");
  }
  if (boundary == side.first_block) return acts.input;
  return acts.blocks[boundary - side.first_block - 1].back();
}

template <typename T>
SideActivations<T> side_forward(const SplitSide<T>& side, const BasicTensor<T>& input, bool with_heads = true) {
  SideActivations<T> acts;
  acts.input = input;
  const BasicTensor<T>* x = &acts.input;
  acts.blocks.reserve(side.blocks.size());
  for (std::size_t j = 0; j < side.blocks.size(); ++j) {
    try {
      acts.blocks.push_back(nn::forward(side.blocks[j].layers, *x));
    } catch (const nn::ShapeError& e) {
      throw nn::ShapeError(e.layer_index(), e.expected(), e.actual(),
                           "block " + std::to_string(side.first_block + j));
    }
    x = &acts.blocks.back().back();
  }
  if (with_heads) {
    for (const auto& h : side.heads) {
      acts.heads.push_back(nn::forward(h.head.layers, boundary_activation(side, acts, h.boundary)));
    }
  }
  return acts;
}

template <typename T>
struct HeadOutput {
  std::size_t index = 0;
  T loss{0};
  BasicTensor<T> logits;
};

template <typename T>
struct SideLoss {
  T loss{0};
  std::vector<HeadOutput<T>> heads;  // training heads only, in attachment order
  BasicTensor<T> input_grad;
};

// Sums the batch-mean cross-entropy of every training head, accumulates all
// parameter gradients, and returns the gradient at the side's input.
// `output_grad`, when given, is an extra gradient arriving at the side's
// last boundary (used when a server returns gradients to a client).
template <typename T>
SideLoss<T> side_loss_backward(SplitSide<T>& side, const SideActivations<T>& acts, std::span<const std::size_t> labels,
                               const BasicTensor<T>* output_grad = nullptr) {
  SideLoss<T> result;
  const std::size_t n_bound = side.blocks.size() + 1;
  std::vector<std::optional<BasicTensor<T>>> bgrad(n_bound);
  auto accumulate = [&](std::size_t boundary, BasicTensor<T> g) {
    auto& slot = bgrad[boundary - side.first_block];
    if (slot) {
      nn::add_into(*slot, g);
    } else {
      slot = std::move(g);
    }
  };

  for (std::size_t k = 0; k < side.heads.size(); ++k) {
    auto& h = side.heads[k];
    if (!h.trains) continue;
    const auto& logits = acts.logits(k);
    auto ce = nn::softmax_cross_entropy(logits, labels);
    result.loss += ce.loss;
    result.heads.push_back({h.index, ce.loss, logits});
    accumulate(h.boundary, nn::backward(h.head.layers, acts.heads[k], ce.logit_grad));
  }
  if (output_grad) accumulate(side.end_block(), *output_grad);

  std::optional<BasicTensor<T>> g = std::move(bgrad.back());
  for (std::size_t j = side.blocks.size(); j-- > 0;) {
    if (g) g = nn::backward(side.blocks[j].layers, acts.blocks[j], *g);
    auto& here = bgrad[j];
    if (here) {
      if (g) {
        nn::add_into(*g, *here);
      } else {
        g = std::move(here);
      }
    }
  }
  result.input_grad = g ? std::move(*g) : BasicTensor<T>(acts.input.shape());
  return result;
}

template <typename T>
struct ClientLoss {
  T loss{0};
  std::vector<HeadOutput<T>> heads;
};

// Client collaborative loss: (1/|batch|) sum_j sum_{i in training heads}
// CE(l_{i,j}, y_j). Gradients of all client blocks and heads are populated.
template <typename T>
ClientLoss<T> client_collaborative_loss(SplitSide<T>& client, const BasicTensor<T>& inputs,
                                        std::span<const std::size_t> labels) {
  if (labels.empty() || inputs.rows() == 0) throw std::invalid_argument("client_collaborative_loss: empty batch");
  if (client.training_head_count() == 0) {
    throw std::invalid_argument("client_collaborative_loss: client side has no training heads");
  }
  auto acts = side_forward(client, inputs);
  auto sl = side_loss_backward(client, acts, labels);
  return {sl.loss, std::move(sl.heads)};
}

template <typename T>
struct ServerLoss {
  T loss{0};
  std::vector<HeadOutput<T>> heads;
  BasicTensor<T> smashed_grad;
};

// Server loss over heads d_k+1..M and the output head, on fixed smashed
// activations. smashed_grad is only transported in vanilla split learning.
template <typename T>
ServerLoss<T> server_loss(SplitSide<T>& server, const BasicSmashedBatch<T>& smashed) {
  smashed.validate();
  if (smashed.labels.empty()) throw std::invalid_argument("server_loss: empty smashed batch");
  for (const auto& h : server.heads) {
    if (smashed.level != 0 && h.index <= smashed.level) {
      throw std::invalid_argument("server_loss: smashed level " + std::to_string(smashed.level) +
                                  " does not match server side holding head " + std::to_string(h.index));
    }
  }
  const std::size_t width = server.input_width();
  if (width != 0 && (smashed.activations.rank() != 2 || smashed.activations.dim(1) != width)) {
    throw nn::ShapeError(nn::ShapeError::npos, {smashed.labels.size(), width}, smashed.activations.shape(),
                         "smashed activations vs first server block");
  }
  auto acts = side_forward(server, smashed.activations);
  auto sl = side_loss_backward(server, acts, smashed.labels);
  return {sl.loss, std::move(sl.heads), std::move(sl.input_grad)};
}

}  // namespace fedsplitx::split
