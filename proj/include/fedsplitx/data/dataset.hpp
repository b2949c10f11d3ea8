#pragma once

#include <cstddef>
#include <cstdint>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "fedsplitx/nn/tensor.hpp"
#include "fedsplitx/rng.hpp"

namespace fedsplitx::data {

struct Dataset {
  nn::Tensor features;  // [n, dim]
  std::vector<std::size_t> labels;
  std::size_t num_classes = 0;

  std::size_t size() const { return labels.size(); }
  std::size_t dim() const { return features.rank() == 2 ? features.dim(1) : 0; }

  void validate() const {
    if (features.rank() != 2 || features.dim(0) != labels.size()) {
      throw nn::ShapeError(nn::ShapeError::npos, {labels.size(), dim()}, features.shape(), "dataset features vs labels");
    }
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (labels[i] >= num_classes) {
        throw std::out_of_range("dataset label " + std::to_string(labels[i]) + " at row " + std::to_string(i) +
                                " outside [0, " + std::to_string(num_classes) + ")");
      }
    }
  }

  Dataset subset(std::span<const std::size_t> rows) const {
    Dataset out;
    out.features = nn::gather_rows(features, rows);
    out.num_classes = num_classes;
    out.labels.reserve(rows.size());
    for (std::size_t r : rows) out.labels.push_back(labels.at(r));
    return out;
  }

  std::vector<std::size_t> class_histogram() const {
    std::vector<std::size_t> h(num_classes, 0);
    for (std::size_t y : labels) ++h.at(y);
    return h;
  }
};

namespace detail {

// Row indices grouped by class, each group shuffled, groups in class order.
inline std::vector<std::size_t> stratified_order(const Dataset& d, Rng& rng) {
  std::vector<std::vector<std::size_t>> by_class(d.num_classes);
  for (std::size_t i = 0; i < d.size(); ++i) by_class.at(d.labels[i]).push_back(i);
  std::vector<std::size_t> order;
  order.reserve(d.size());
  for (auto& g : by_class) {
    rng.shuffle(std::span<std::size_t>(g));
    order.insert(order.end(), g.begin(), g.end());
  }
  return order;
}

}  // namespace detail

// Class-stratified IID split: rows are dealt round-robin from the
// class-grouped order, so every shard's count of every class is within one
// of n_c / K and shard sizes differ by at most one.
inline std::vector<Dataset> iid_partition(const Dataset& d, std::size_t k, std::uint64_t seed) {
  if (k == 0) throw std::invalid_argument("iid_partition: need at least one shard");
  if (k > d.size()) {
    throw std::invalid_argument("iid_partition: " + std::to_string(k) + " shards requested for " +
                                std::to_string(d.size()) + " samples");
  }
  Rng rng(derive_seed(seed, 0x696964ULL));
  const auto order = detail::stratified_order(d, rng);
  std::vector<std::vector<std::size_t>> rows(k);
  for (std::size_t i = 0; i < order.size(); ++i) rows[i % k].push_back(order[i]);
  std::vector<Dataset> shards;
  shards.reserve(k);
  for (auto& r : rows) {
    rng.shuffle(std::span<std::size_t>(r));
    shards.push_back(d.subset(r));
  }
  return shards;
}

struct TrainTest {
  Dataset train;
  Dataset test;
};

// Stratified hold-out: within each class the first round(frac * n_c) rows of
// a shuffled order go to the test split.
inline TrainTest train_test_split(const Dataset& d, double test_fraction, std::uint64_t seed) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) {
    throw std::invalid_argument("train_test_split: test fraction must be in (0, 1)");
  }
  Rng rng(derive_seed(seed, 0x74657374ULL));
  std::vector<std::vector<std::size_t>> by_class(d.num_classes);
  for (std::size_t i = 0; i < d.size(); ++i) by_class.at(d.labels[i]).push_back(i);
  std::vector<std::size_t> train, test;
  for (auto& g : by_class) {
    rng.shuffle(std::span<std::size_t>(g));
    const auto n_test = static_cast<std::size_t>(test_fraction * static_cast<double>(g.size()) + 0.5);
    test.insert(test.end(), g.begin(), g.begin() + static_cast<std::ptrdiff_t>(n_test));
    train.insert(train.end(), g.begin() + static_cast<std::ptrdiff_t>(n_test), g.end());
  }
  if (train.empty() || test.empty()) throw std::invalid_argument("train_test_split: a split came out empty");
  rng.shuffle(std::span<std::size_t>(train));
  rng.shuffle(std::span<std::size_t>(test));
  return {d.subset(train), d.subset(test)};
}

}  // namespace fedsplitx::data
