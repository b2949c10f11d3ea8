#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <algorithm>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace fedsplitx::acct {

enum class OpKind : std::uint8_t { conv2d, batchnorm, relu, maxpool, avgpool, dense, add };

inline std::string_view to_string(OpKind k) {
  switch (k) {
    case OpKind::conv2d: return "conv2d";
    case OpKind::batchnorm: return "batchnorm";
    case OpKind::relu: return "relu";
    case OpKind::maxpool: return "maxpool";
    case OpKind::avgpool: return "avgpool";
    case OpKind::dense: return "dense";
    case OpKind::add: return "add";
  }
  return "?";
}

class UnknownLayerKind : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

inline OpKind parse_op_kind(std::string_view s) {
  for (auto k : {OpKind::conv2d, OpKind::batchnorm, OpKind::relu, OpKind::maxpool, OpKind::avgpool, OpKind::dense,
                 OpKind::add}) {
    if (to_string(k) == s) return k;
  }
  throw UnknownLayerKind("unknown layer kind '" + std::string(s) + "'");
}

// Channels x height x width; dense layers use {features, 1, 1}.
struct Dims {
  std::size_t c = 0, h = 1, w = 1;
  std::size_t elements() const { return c * h * w; }
  friend bool operator==(const Dims&, const Dims&) = default;
};

struct LayerRecord {
  OpKind kind = OpKind::dense;
  Dims in;
  Dims out;
  std::size_t kernel = 1;  // square kernel side (conv2d, maxpool)
  std::size_t stride = 1;
  bool bias = false;       // conv2d only; dense always carries a bias
  bool block_start = false;  // first layer of a residual block
  bool shortcut = false;     // on the projection shortcut; reads the block input
  std::string name;
};

struct AuxHeadRecord {
  Dims in;                // activation at the cut
  std::size_t classes = 0;
};

// A named cut: the client-side prefix is layers [0, layer_end).
struct CutRecord {
  std::string name;
  std::size_t layer_end = 0;
};

struct ArchDescriptor {
  std::string name;
  Dims input;
  std::size_t classes = 0;
  std::vector<LayerRecord> layers;
  std::vector<CutRecord> cuts;
  std::vector<AuxHeadRecord> aux_heads;  // one per cut

  std::size_t num_levels() const { return cuts.size(); }

  void validate() const {
    if (aux_heads.size() != cuts.size()) throw std::invalid_argument(name + ": one aux head per cut required");
    std::size_t prev = 0;
    for (const auto& c : cuts) {
      if (c.layer_end <= prev || c.layer_end >= layers.size()) {
        throw std::invalid_argument(name + ": cut points must be strictly increasing and interior");
      }
      prev = c.layer_end;
    }
  }
};

struct LayerCost {
  std::uint64_t params = 0;
  std::uint64_t macs = 0;        // multiply-accumulates (conv2d, dense)
  std::uint64_t elementwise = 0; // batchnorm, relu, pooling, residual add: 1 per element
};

inline LayerCost layer_cost(const LayerRecord& l) {
  LayerCost c;
  switch (l.kind) {
    case OpKind::conv2d: {
      const std::uint64_t per_out = static_cast<std::uint64_t>(l.kernel) * l.kernel * l.in.c;
      c.params = per_out * l.out.c + (l.bias ? l.out.c : 0);
      c.macs = per_out * l.out.elements();
      return c;
    }
    case OpKind::batchnorm:
      c.params = 2 * static_cast<std::uint64_t>(l.in.c);
      c.elementwise = l.in.elements();
      return c;
    case OpKind::relu:
    case OpKind::add:
      c.elementwise = l.in.elements();
      return c;
    case OpKind::maxpool:
      c.elementwise = l.out.elements();
      return c;
    case OpKind::avgpool:
      c.elementwise = l.in.elements();
      return c;
    case OpKind::dense:
      c.params = static_cast<std::uint64_t>(l.in.elements()) * l.out.c + l.out.c;
      c.macs = static_cast<std::uint64_t>(l.in.elements()) * l.out.c;
      return c;
  }
  throw UnknownLayerKind("unknown layer kind " + std::to_string(static_cast<int>(l.kind)) + " in '" + l.name + "'");
}

// Mean-pool (when spatial) then dense to class logits.
inline LayerCost aux_head_cost(const AuxHeadRecord& h) {
  LayerCost c;
  c.params = static_cast<std::uint64_t>(h.in.c) * h.classes + h.classes;
  c.macs = static_cast<std::uint64_t>(h.in.c) * h.classes;
  c.elementwise = (h.in.h * h.in.w > 1) ? h.in.elements() : 0;
  return c;
}

inline LayerCost& operator+=(LayerCost& a, const LayerCost& b) {
  a.params += b.params;
  a.macs += b.macs;
  a.elementwise += b.elementwise;
  return a;
}

// A boundary in the model: 0 is the input, m in 1..M is cut m, M+1 is the
// end of the model.
struct Boundary {
  std::size_t index = 0;
  static Boundary level(std::size_t m) { return {m}; }
  static Boundary end(const ArchDescriptor& d) { return {d.num_levels() + 1}; }
};

inline std::size_t layer_end(const ArchDescriptor& d, Boundary b) {
  if (b.index == 0) return 0;
  if (b.index <= d.num_levels()) return d.cuts[b.index - 1].layer_end;
  if (b.index == d.num_levels() + 1) return d.layers.size();
  throw std::out_of_range(d.name + ": boundary " + std::to_string(b.index) + " beyond the model end");
}

// Cost of backbone layers between two boundaries plus the aux heads whose
// cuts lie in (from, to]. Prefix costs are segment(0, b).
inline LayerCost segment_cost(const ArchDescriptor& d, Boundary from, Boundary to) {
  if (to.index < from.index) throw std::invalid_argument("segment end precedes its start");
  LayerCost c;
  for (std::size_t i = layer_end(d, from); i < layer_end(d, to); ++i) c += layer_cost(d.layers[i]);
  for (std::size_t m = from.index + 1; m <= std::min(to.index, d.num_levels()); ++m) c += aux_head_cost(d.aux_heads[m - 1]);
  return c;
}

inline LayerCost prefix_cost(const ArchDescriptor& d, Boundary up_to) { return segment_cost(d, {0}, up_to); }

inline std::uint64_t count_params(const ArchDescriptor& d, Boundary up_to) { return prefix_cost(d, up_to).params; }

// Forward multiply-accumulates per sample; one MAC counts as one FLOP.
inline std::uint64_t count_flops(const ArchDescriptor& d, Boundary up_to) { return prefix_cost(d, up_to).macs; }

inline LayerCost total_cost(const ArchDescriptor& d) { return prefix_cost(d, Boundary::end(d)); }

// Backbone only, without any aux heads.
inline LayerCost backbone_cost(const ArchDescriptor& d, std::size_t layer_begin, std::size_t layer_stop) {
  LayerCost c;
  for (std::size_t i = layer_begin; i < layer_stop; ++i) c += layer_cost(d.layers[i]);
  return c;
}

// Every main-path layer must read the previous main-path output; shortcut
// layers read their block's input and must produce what the residual add
// consumes.
inline void check_chain(const ArchDescriptor& d) {
  Dims cur = d.input;
  Dims block_in = d.input;
  std::optional<Dims> shortcut_out;
  for (std::size_t i = 0; i < d.layers.size(); ++i) {
    const auto& l = d.layers[i];
    auto fail = [&](const char* what) {
      throw std::invalid_argument(d.name + ": layer " + std::to_string(i) + " (" + l.name + ") " + what);
    };
    if (l.block_start) block_in = cur;
    if (l.shortcut) {
      if (l.in != shortcut_out.value_or(block_in)) fail("shortcut input does not chain");
      shortcut_out = l.out;
      continue;
    }
    if (l.in != cur) fail("input does not match the previous output");
    if (l.kind == OpKind::add) {
      const Dims skip = shortcut_out.value_or(block_in);
      if (skip != l.in) fail("residual add joins mismatched shapes");
      shortcut_out.reset();
    }
    cur = l.out;
  }
}

struct ServerComputeReport {
  std::string model;
  std::uint64_t full_flops = 0;
  std::uint64_t accsfl_level1 = 0;   // full - client prefix at level 1
  double fedsplitx_mean = 0.0;       // mean over fleet levels of (full - prefix(level))
  std::vector<std::uint64_t> per_level_server;  // full - prefix(m), m = 1..M
};

inline ServerComputeReport server_compute_report(const ArchDescriptor& d, const std::vector<std::size_t>& fleet_levels) {
  if (fleet_levels.empty()) throw std::invalid_argument("server_compute_report: empty fleet");
  ServerComputeReport r;
  r.model = d.name;
  r.full_flops = count_flops(d, Boundary::end(d));
  for (std::size_t m = 1; m <= d.num_levels(); ++m) {
    r.per_level_server.push_back(r.full_flops - count_flops(d, Boundary::level(m)));
  }
  r.accsfl_level1 = r.per_level_server.front();
  std::uint64_t sum = 0;
  for (std::size_t lv : fleet_levels) {
    if (lv < 1 || lv > d.num_levels()) throw std::out_of_range("fleet level out of range");
    sum += r.per_level_server[lv - 1];
  }
  r.fedsplitx_mean = static_cast<double>(sum) / static_cast<double>(fleet_levels.size());
  return r;
}

}  // namespace fedsplitx::acct
