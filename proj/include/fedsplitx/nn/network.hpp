#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "fedsplitx/nn/layers.hpp"
#include "fedsplitx/nn/tensor.hpp"

namespace fedsplitx::nn {

struct SgdConfig {
  float learning_rate = 0.05f;
  std::size_t batch_size = 32;
  std::size_t local_epochs = 1;

  // A zero rate is accepted so frozen-parameter runs can be expressed.
  void validate() const {
    if (!(learning_rate >= 0.0f) || !std::isfinite(learning_rate)) {
      throw std::invalid_argument("learning rate must be finite and non-negative");
    }
    if (batch_size < 1) throw std::invalid_argument("batch size must be >= 1");
    if (local_epochs < 1) throw std::invalid_argument("local epochs must be >= 1");
  }
};

template <typename T>
void check_finite(const BasicTensor<T>& t, std::size_t layer_index, const char* where) {
  if (!t.all_finite()) {
    throw NonFiniteError(std::string("non-finite value at ") + where + " of layer " + std::to_string(layer_index));
  }
}

// Returns [input, a_1, ..., a_n]; the last element is the network output.
template <typename T>
std::vector<BasicTensor<T>> forward(std::span<const BasicLayer<T>> layers, const BasicTensor<T>& input) {
  std::vector<BasicTensor<T>> acts;
  acts.reserve(layers.size() + 1);
  acts.push_back(input);
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto& in = acts.back();
    try {
      layers[i].output_shape(in.shape());
    } catch (const ShapeError& e) {
      throw ShapeError(i, e.expected(), e.actual(), "forward shape mismatch");
    }
    if (i == 0) check_finite(in, i, "input");
    acts.push_back(layers[i].forward(in));
    check_finite(acts.back(), i, "output");
  }
  return acts;
}

template <typename T>
std::vector<BasicTensor<T>> forward(const std::vector<BasicLayer<T>>& layers, const BasicTensor<T>& input) {
  return forward(std::span<const BasicLayer<T>>(layers), input);
}

// Adds parameter gradients into every layer and returns dL/d(input).
// Gradients accumulate, so several heads can backpropagate into one trunk.
template <typename T>
BasicTensor<T> backward(std::span<BasicLayer<T>> layers, std::span<const BasicTensor<T>> activations,
                        const BasicTensor<T>& output_grad) {
  if (activations.size() != layers.size() + 1) {
    throw std::invalid_argument("backward: expected " + std::to_string(layers.size() + 1) + " activations, got " +
                                std::to_string(activations.size()));
  }
  if (output_grad.shape() != activations.back().shape()) {
    throw ShapeError(layers.size(), activations.back().shape(), output_grad.shape(), "backward output gradient");
  }
  BasicTensor<T> g = output_grad;
  for (std::size_t i = layers.size(); i-- > 0;) {
    g = layers[i].backward(activations[i], activations[i + 1], g);
  }
  return g;
}

template <typename T>
BasicTensor<T> backward(std::vector<BasicLayer<T>>& layers, const std::vector<BasicTensor<T>>& activations,
                        const BasicTensor<T>& output_grad) {
  return backward(std::span<BasicLayer<T>>(layers), std::span<const BasicTensor<T>>(activations), output_grad);
}

template <typename T>
void zero_grad(std::span<BasicLayer<T>> layers) {
  for (auto& l : layers) {
    for (auto& g : l.grads()) g.fill(T{0});
  }
}

// params -= lr * grads, then grads are cleared.
template <typename T>
void sgd_step(std::span<BasicLayer<T>> layers, const SgdConfig& config) {
  const T lr = static_cast<T>(config.learning_rate);
  for (auto& l : layers) {
    auto ps = l.params();
    auto gs = l.grads();
    for (std::size_t k = 0; k < ps.size(); ++k) {
      auto p = ps[k].data();
      auto g = gs[k].data();
      for (std::size_t i = 0; i < p.size(); ++i) {
        p[i] -= lr * g[i];
        g[i] = T{0};
      }
    }
  }
}

template <typename T>
void sgd_step(std::vector<BasicLayer<T>>& layers, const SgdConfig& config) {
  sgd_step(std::span<BasicLayer<T>>(layers), config);
}

template <typename T>
void softmax(std::span<const T> logits, std::span<T> out) {
  const T mx = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) sum += std::exp(static_cast<double>(logits[i] - mx));
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = static_cast<T>(std::exp(static_cast<double>(logits[i] - mx)) / sum);
  }
}

template <typename T>
struct CrossEntropy {
  T loss{0};
  BasicTensor<T> logit_grad;
};

// loss = -log softmax(logits)[label]; gradient = softmax(logits) - onehot(label).
template <typename T>
CrossEntropy<T> cross_entropy(std::span<const T> logits, std::size_t label) {
  if (logits.size() < 2) throw std::invalid_argument("cross_entropy: need at least 2 logits");
  if (label >= logits.size()) {
    throw std::out_of_range("cross_entropy: label " + std::to_string(label) + " out of range for " +
                            std::to_string(logits.size()) + " classes");
  }
  const double mx = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (T v : logits) sum += std::exp(static_cast<double>(v) - mx);
  const double log_z = std::log(sum) + mx;
  CrossEntropy<T> ce;
  ce.loss = static_cast<T>(log_z - static_cast<double>(logits[label]));
  ce.logit_grad = BasicTensor<T>({logits.size()});
  for (std::size_t i = 0; i < logits.size(); ++i) {
    ce.logit_grad[i] = static_cast<T>(std::exp(static_cast<double>(logits[i]) - log_z) - (i == label ? 1.0 : 0.0));
  }
  return ce;
}

template <typename T>
CrossEntropy<T> cross_entropy(const BasicTensor<T>& logits, std::size_t label) {
  return cross_entropy(logits.data(), label);
}

// Loss head: softmax cross-entropy over [batch, classes] logits, averaged
// over the batch. The returned gradient already carries the 1/batch factor.
template <typename T>
CrossEntropy<T> softmax_cross_entropy(const BasicTensor<T>& logits, std::span<const std::size_t> labels) {
  if (logits.rank() != 2 || logits.dim(0) != labels.size() || labels.empty()) {
    throw ShapeError(ShapeError::npos, {labels.size(), logits.rank() == 2 ? logits.dim(1) : 0}, logits.shape(),
                     "logits vs labels");
  }
  const std::size_t n = labels.size();
  const T inv = T{1} / static_cast<T>(n);
  CrossEntropy<T> out;
  out.logit_grad = BasicTensor<T>(logits.shape());
  double total = 0.0;
  for (std::size_t b = 0; b < n; ++b) {
    auto ce = cross_entropy(logits.row(b), labels[b]);
    total += static_cast<double>(ce.loss);
    auto g = out.logit_grad.row(b);
    for (std::size_t c = 0; c < g.size(); ++c) g[c] = ce.logit_grad[c] * inv;
  }
  out.loss = static_cast<T>(total / static_cast<double>(n));
  return out;
}

template <typename T>
void initialize(std::span<BasicLayer<T>> layers, Rng& rng) {
  for (auto& l : layers) l.initialize(rng);
}

template <typename T>
std::size_t param_count(std::span<const BasicLayer<T>> layers) {
  std::size_t n = 0;
  for (const auto& l : layers) n += l.param_count();
  return n;
}

// Per-sample multiply-accumulates of the affine layers.
template <typename T>
std::uint64_t forward_macs(std::span<const BasicLayer<T>> layers) {
  std::uint64_t n = 0;
  for (const auto& l : layers) {
    if (const auto* d = l.template as<Dense<T>>()) {
      n += static_cast<std::uint64_t>(d->in_features()) * d->out_features();
    } else if (const auto* r = l.template as<ResidualBlock<T>>()) {
      n += static_cast<std::uint64_t>(r->width()) * r->width();
    }
  }
  return n;
}

template <typename U, typename T>
std::vector<BasicLayer<U>> cast_layers(const std::vector<BasicLayer<T>>& layers) {
  std::vector<BasicLayer<U>> out;
  out.reserve(layers.size());
  for (const auto& l : layers) out.push_back(l.template cast<U>());
  return out;
}

}  // namespace fedsplitx::nn
