#pragma once

#include <cstdio>
#include <string>
#include <vector>

#include "fedsplitx/accounting/arch.hpp"
#include "json.hpp"

namespace fedsplitx::acct {

inline constexpr const char* flop_convention =
    "1 multiply-accumulate = 1 FLOP for conv2d/dense; batchnorm, relu, pooling and residual adds are 1 op per "
    "element and reported separately as elementwise ops; client-side prefixes include their aux heads "
    "(mean-pool + dense)";

struct LevelRow {
  std::string model;
  std::string level;  // "1".."M" or "full"
  std::uint64_t flops = 0;
  std::uint64_t params = 0;
  std::uint64_t elementwise = 0;
  double flops_share = 0.0;   // percent of the full model
  double params_share = 0.0;  // percent of the full model
};

inline std::vector<LevelRow> level_rows(const ArchDescriptor& d) {
  const auto total = total_cost(d);
  std::vector<LevelRow> rows;
  auto pct = [](std::uint64_t a, std::uint64_t b) { return b ? 100.0 * static_cast<double>(a) / static_cast<double>(b) : 0.0; };
  for (std::size_t m = 1; m <= d.num_levels() + 1; ++m) {
    const auto c = prefix_cost(d, {m});
    rows.push_back({d.name, m <= d.num_levels() ? std::to_string(m) : "full", c.macs, c.params, c.elementwise,
                    pct(c.macs, total.macs), pct(c.params, total.params)});
  }
  return rows;
}

inline std::string human(double v) {
  char buf[32];
  if (v >= 1e9) std::snprintf(buf, sizeof buf, "%.2fG", v / 1e9);
  else if (v >= 1e6) std::snprintf(buf, sizeof buf, "%.2fM", v / 1e6);
  else if (v >= 1e3) std::snprintf(buf, sizeof buf, "%.1fK", v / 1e3);
  else std::snprintf(buf, sizeof buf, "%.0f", v);
  return buf;
}

// kind: "flops" or "params" picks the share column.
inline nlohmann::json rows_json(const std::vector<LevelRow>& rows, bool flops) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& r : rows) {
    nlohmann::json level = r.level == "full" ? nlohmann::json("full") : nlohmann::json(std::stoul(r.level));
    arr.push_back({{"model", r.model},
                   {"level", level},
                   {"flops", r.flops},
                   {"params", r.params},
                   {"share", flops ? r.flops_share : r.params_share}});
  }
  return arr;
}

}  // namespace fedsplitx::acct
