#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "fedsplitx/accounting/arch.hpp"
#include "fedsplitx/accounting/resnet.hpp"
#include "fedsplitx/rng.hpp"
#include "fedsplitx/split/model.hpp"

namespace fedsplitx::zoo {

class UnknownModel : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class StaticOnlyModel : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct ToySpec {
  std::size_t blocks = 0;
  std::size_t width = 0;
  std::size_t levels = 3;
};

// Cut m at round(n * m / (M + 1)), halves rounding up.
inline std::vector<std::size_t> even_cuts(std::size_t blocks, std::size_t levels) {
  std::vector<std::size_t> cuts;
  for (std::size_t m = 1; m <= levels; ++m) cuts.push_back((2 * blocks * m + levels + 1) / (2 * (levels + 1)));
  return cuts;
}

inline split::PartitionPlan toy_plan(const ToySpec& s, std::size_t classes) {
  split::PartitionPlan plan;
  plan.total_blocks = s.blocks;
  plan.cut_points = even_cuts(s.blocks, s.levels);
  for (std::size_t m = 0; m < s.levels; ++m) plan.aux_heads.push_back({s.width, classes, false});
  plan.validate();
  return plan;
}

// Block 0 lifts the input to `width` (dense + relu); every later block is a
// residual block. The output head is a dense layer like the aux heads.
inline split::FullModel<float> toy_model(const ToySpec& s, std::size_t input_dim, std::size_t classes,
                                         std::uint64_t seed) {
  using L = nn::Layer;
  const auto plan = toy_plan(s, classes);
  split::FullModel<float> model;
  model.num_classes = classes;
  model.blocks.push_back({{L::dense(input_dim, s.width), L::relu()}});
  for (std::size_t b = 1; b < s.blocks; ++b) model.blocks.push_back({{L::residual(s.width)}});
  for (const auto& a : plan.aux_heads) model.heads.push_back(split::Head<float>::from_spec(a));
  model.heads.push_back(split::Head<float>::from_spec({s.width, classes, false}));

  Rng rng(derive_seed(seed, 0x7a6f6fULL));
  for (auto& b : model.blocks) nn::initialize(std::span<nn::Layer>(b.layers), rng);
  for (auto& h : model.heads) nn::initialize(std::span<nn::Layer>(h.layers), rng);
  model.check_against(plan);
  return model;
}

inline acct::ArchDescriptor toy_descriptor(const std::string& name, const ToySpec& s, std::size_t input_dim,
                                           std::size_t classes) {
  using acct::OpKind;
  acct::ArchDescriptor d;
  d.name = name;
  d.input = {input_dim, 1, 1};
  d.classes = classes;
  const acct::Dims w{s.width, 1, 1};
  d.layers.push_back({OpKind::dense, d.input, w, 1, 1, true, true, false, "block0.dense"});
  d.layers.push_back({OpKind::relu, w, w, 1, 1, false, false, false, "block0.relu"});
  std::vector<std::size_t> block_end{d.layers.size()};
  for (std::size_t b = 1; b < s.blocks; ++b) {
    const std::string p = "block" + std::to_string(b) + ".";
    d.layers.push_back({OpKind::dense, w, w, 1, 1, true, true, false, p + "dense"});
    d.layers.push_back({OpKind::relu, w, w, 1, 1, false, false, false, p + "relu"});
    d.layers.push_back({OpKind::add, w, w, 1, 1, false, false, false, p + "add"});
    block_end.push_back(d.layers.size());
  }
  d.layers.push_back({OpKind::dense, w, {classes, 1, 1}, 1, 1, true, false, false, "head.dense"});
  for (std::size_t p : even_cuts(s.blocks, s.levels)) {
    d.cuts.push_back({"after block " + std::to_string(p - 1), block_end[p - 1]});
    d.aux_heads.push_back({w, classes});
  }
  d.validate();
  acct::check_chain(d);
  return d;
}

// Forward a zero batch through every block and head.
inline void smoke_test(const std::string& name, const ToySpec& s) {
  const auto model = toy_model(s, 2, 2, 0);
  nn::Tensor x({1, 2});
  for (const auto& b : model.blocks) x = nn::forward(b.layers, x).back();
  for (const auto& h : model.heads) {
    if (nn::forward(h.layers, x).back().shape() != nn::Shape{1, 2}) {
      throw std::logic_error("zoo entry '" + name + "' failed its forward smoke test");
    }
  }
}

struct BuiltModel {
  split::FullModel<float> model;
  split::PartitionPlan plan;
  acct::ArchDescriptor descriptor;
};

struct ZooEntry {
  std::string name;
  std::string version;
  std::optional<ToySpec> toy;  // absent for static-only entries

  bool trainable() const { return toy.has_value(); }
};

inline const std::vector<ZooEntry>& registry() {
  static const std::vector<ZooEntry> entries = [] {
    std::vector<ZooEntry> e{
        {"toy-mlp-s", "1", ToySpec{4, 32, 3}},
        {"toy-mlp-m", "1", ToySpec{6, 64, 3}},
    };
    for (const auto& r : acct::resnet_specs()) e.push_back({r.name, "1", std::nullopt});
    for (const auto& x : e) {
      if (x.toy) smoke_test(x.name, *x.toy);
    }
    return e;
  }();
  return entries;
}

inline std::string registry_names() {
  std::string s;
  for (const auto& e : registry()) s += (s.empty() ? "" : ", ") + e.name;
  return s;
}

inline const ZooEntry& find(const std::string& name) {
  for (const auto& e : registry()) {
    if (e.name == name) return e;
  }
  throw UnknownModel("unknown model '" + name + "'; registered: " + registry_names());
}

// Static descriptor for any entry. Toy descriptors need the input width.
inline acct::ArchDescriptor descriptor(const std::string& name, std::size_t classes = 10, std::size_t input_dim = 2) {
  const auto& e = find(name);
  if (e.toy) return toy_descriptor(e.name, *e.toy, input_dim, classes);
  return acct::resnet(e.name, classes);
}

inline BuiltModel build(const std::string& name, std::size_t input_dim, std::size_t classes, std::uint64_t seed) {
  const auto& e = find(name);
  if (!e.trainable()) {
    throw StaticOnlyModel("model '" + name + "' is static-only (accounting descriptor); no trainable instance exists");
  }
  if (input_dim == 0 || classes < 2) throw std::invalid_argument("build: need input_dim >= 1 and classes >= 2");
  return {toy_model(*e.toy, input_dim, classes, seed), toy_plan(*e.toy, classes),
          toy_descriptor(e.name, *e.toy, input_dim, classes)};
}

}  // namespace fedsplitx::zoo
