#pragma once

#include <cstddef>
#include <span>
#include <stdexcept>
#include <vector>

#include "fedsplitx/nn/network.hpp"

namespace fedsplitx::split {

// Argmax of the mean of per-head softmax distributions. Ties go to the
// lowest class index.
template <typename T>
std::size_t ensemble_predict(std::span<const std::span<const T>> heads_logits) {
  if (heads_logits.empty()) throw std::invalid_argument("ensemble_predict: no heads");
  const std::size_t classes = heads_logits.front().size();
  if (classes == 0) throw std::invalid_argument("ensemble_predict: empty logits");
  std::vector<double> mean(classes, 0.0);
  std::vector<T> probs(classes);
  for (const auto& logits : heads_logits) {
    if (logits.size() != classes) throw std::invalid_argument("ensemble_predict: heads disagree on class count");
    nn::softmax<T>(logits, probs);
    for (std::size_t c = 0; c < classes; ++c) mean[c] += static_cast<double>(probs[c]);
  }
  std::size_t best = 0;
  for (std::size_t c = 1; c < classes; ++c) {
    if (mean[c] > mean[best]) best = c;
  }
  return best;
}

template <typename T>
std::size_t ensemble_predict(const std::vector<nn::BasicTensor<T>>& heads_logits) {
  std::vector<std::span<const T>> views;
  views.reserve(heads_logits.size());
  for (const auto& t : heads_logits) views.push_back(t.data());
  return ensemble_predict<T>(std::span<const std::span<const T>>(views));
}

// Row-wise ensemble over [batch, classes] logit tensors, one per head.
template <typename T>
std::vector<std::size_t> ensemble_predict_batch(std::span<const nn::BasicTensor<T>* const> heads_logits) {
  if (heads_logits.empty()) throw std::invalid_argument("ensemble_predict: no heads");
  const std::size_t n = heads_logits.front()->rows();
  std::vector<std::size_t> out(n);
  std::vector<std::span<const T>> rows(heads_logits.size());
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t k = 0; k < heads_logits.size(); ++k) rows[k] = heads_logits[k]->row(b);
    out[b] = ensemble_predict<T>(std::span<const std::span<const T>>(rows));
  }
  return out;
}

}  // namespace fedsplitx::split
