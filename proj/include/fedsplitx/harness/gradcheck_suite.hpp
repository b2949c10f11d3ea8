#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "fedsplitx/nn/gradcheck.hpp"
#include "fedsplitx/rng.hpp"
#include "fedsplitx/split/loss.hpp"
#include "fedsplitx/zoo/registry.hpp"

namespace fedsplitx::harness {

struct GradCheckEntry {
  std::string name;
  std::uint64_t seed = 0;
  nn::GradCheckResult result;
};

struct GradSuiteReport {
  double tolerance = 1e-3;
  std::vector<GradCheckEntry> entries;

  bool passed() const {
    for (const auto& e : entries) {
      if (!e.result.passes(tolerance)) return false;
    }
    return !entries.empty();
  }
  double worst() const {
    double w = 0.0;
    for (const auto& e : entries) w = std::max(w, e.result.max_rel_error);
    return w;
  }
};

namespace detail {

using DSide = split::SplitSide<double>;
using DTensor = nn::BasicTensor<double>;

inline void random_fill(DTensor& t, Rng& rng) {
  for (auto& v : t.data()) v = rng.uniform(-1.0, 1.0);
}

// Loss of the side's training heads, forward only.
inline double side_loss_value(const DSide& side, const DTensor& x, const std::vector<std::size_t>& y) {
  const auto acts = split::side_forward(side, x);
  double total = 0.0;
  for (std::size_t k = 0; k < side.heads.size(); ++k) {
    if (side.heads[k].trains) total += nn::softmax_cross_entropy(acts.logits(k), y).loss;
  }
  return total;
}

// Snapshot the analytic gradients so the finite-difference probe can run
// forward passes freely.
struct Snapshot {
  std::vector<nn::ParamRef> refs;
  std::vector<DTensor> grads;
};

inline Snapshot snapshot(DSide& side, const std::string& prefix) {
  Snapshot s;
  std::size_t total = 0;
  side.for_each_layers([&](std::vector<nn::BasicLayer<double>>& layers) {
    for (auto& l : layers) total += l.grads().size();
  });
  s.grads.reserve(total);
  std::size_t part = 0;
  side.for_each_layers([&](std::vector<nn::BasicLayer<double>>& layers) {
    std::vector<nn::ParamRef> refs;
    nn::collect_param_refs(layers, prefix + "." + std::to_string(part++), refs);
    for (auto& r : refs) {
      s.grads.push_back(*r.analytic);
      s.refs.push_back({r.param, &s.grads.back(), r.name});
    }
  });
  return s;
}

inline double block_relu_margin(const DSide& side, const DTensor& x) {
  std::vector<nn::BasicLayer<double>> flat;
  for (const auto& b : side.blocks) flat.insert(flat.end(), b.layers.begin(), b.layers.end());
  return nn::relu_margin(flat, x);
}

}  // namespace detail

inline constexpr double relu_margin_floor = 0.02;

// Every layer kind in one stack with a random linear readout.
inline nn::GradCheckResult check_layer_kinds(std::uint64_t seed) {
  using L = nn::BasicLayer<double>;
  Rng rng(derive_seed(seed, 0x6c6179ULL));
  std::vector<L> layers{L::mean_pool(), L::dense(4, 5), L::relu(), L::residual(5), L::dense(5, 3)};
  nn::initialize<double>(layers, rng);
  detail::DTensor x({2, 3, 4});
  do {
    detail::random_fill(x, rng);
  } while (nn::relu_margin(layers, x) < relu_margin_floor);
  detail::DTensor c({2, 3});
  detail::random_fill(c, rng);
  nn::backward(layers, nn::forward(layers, x), c);
  std::vector<nn::ParamRef> refs;
  nn::collect_param_refs(layers, "stack", refs);
  return nn::finite_difference_check(refs, [&] {
    const auto out = nn::forward(layers, x).back();
    double s = 0.0;
    for (std::size_t i = 0; i < out.size(); ++i) s += c[i] * out[i];
    return s;
  });
}

struct TinySplitRig {
  split::FullModel<double> model;
  split::PartitionPlan plan;
};

// 4 blocks of width 6 on 3 inputs, 3 classes, cuts (1, 2, 3): 234 params.
inline TinySplitRig tiny_rig(std::uint64_t seed) {
  const zoo::ToySpec spec{4, 6, 3};
  return {zoo::toy_model(spec, 3, 3, seed).cast<double>(), zoo::toy_plan(spec, 3)};
}

// Client collaborative loss at level d, or the server loss at level d when
// `server` is set.
inline nn::GradCheckResult check_split_loss(std::uint64_t seed, std::size_t d, bool server) {
  auto rig = tiny_rig(seed);
  auto sm = split::split(rig.model, rig.plan, d);
  Rng rng(derive_seed(seed, 0x73706cULL, d, server ? 1 : 0));
  detail::DTensor x({4, 3});
  std::vector<std::size_t> y(4);
  const auto whole = split::whole(rig.model, rig.plan);
  do {
    detail::random_fill(x, rng);
  } while (detail::block_relu_margin(whole, x) < relu_margin_floor);
  for (auto& v : y) v = static_cast<std::size_t>(rng.below(3));

  if (!server) {
    split::client_collaborative_loss(sm.client, x, y);
    auto snap = detail::snapshot(sm.client, "client");
    return nn::finite_difference_check(snap.refs, [&] { return detail::side_loss_value(sm.client, x, y); });
  }
  split::BasicSmashedBatch<double> smashed{split::side_forward(sm.client, x, false).output(), y, 0, d, 0};
  split::server_loss(sm.server, smashed);
  auto snap = detail::snapshot(sm.server, "server");
  return nn::finite_difference_check(snap.refs,
                                     [&] { return detail::side_loss_value(sm.server, smashed.activations, y); });
}

inline GradSuiteReport run_gradient_suite(const std::vector<std::uint64_t>& seeds, double tolerance = 1e-3) {
  GradSuiteReport r;
  r.tolerance = tolerance;
  for (auto s : seeds) {
    r.entries.push_back({"layer-kinds", s, check_layer_kinds(s)});
    for (std::size_t d = 1; d <= 3; ++d) {
      r.entries.push_back({"client-loss d=" + std::to_string(d), s, check_split_loss(s, d, false)});
      r.entries.push_back({"server-loss d=" + std::to_string(d), s, check_split_loss(s, d, true)});
    }
  }
  return r;
}

}  // namespace fedsplitx::harness
