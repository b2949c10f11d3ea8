#pragma once

#include <cstddef>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "fedsplitx/split/model.hpp"

namespace fedsplitx::fed {

enum class ModeKind { fedsplitx, fedsplitx_noaux, accsfl, vanilla_sfl, depthfl, exc };

struct Mode {
  ModeKind kind = ModeKind::fedsplitx;
  std::size_t level = 0;  // fixed cut for exc, accsfl and vanilla-sfl

  static bool takes_level(ModeKind k) {
    return k == ModeKind::exc || k == ModeKind::accsfl || k == ModeKind::vanilla_sfl;
  }

  // "fedsplitx", "fedsplitx-noaux", "depthfl", "exc:L", "accsfl:L",
  // "vanilla-sfl:L"; "exc(L)" is accepted as well.
  static Mode parse(std::string_view s) {
    std::string name(s);
    std::optional<std::size_t> level;
    auto split_at = name.find_first_of(":(");
    if (split_at != std::string::npos) {
      std::string arg = name.substr(split_at + 1);
      if (name[split_at] == '(') {
        if (arg.empty() || arg.back() != ')') throw std::invalid_argument("mode '" + name + "': missing ')'");
        arg.pop_back();
      }
      std::size_t used = 0;
      unsigned long v = 0;
      try {
        v = std::stoul(arg, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used == 0 || used != arg.size()) throw std::invalid_argument("mode '" + name + "': bad level '" + arg + "'");
      level = v;
      name = name.substr(0, split_at);
    }
    Mode m;
    if (name == "fedsplitx") {
      m.kind = ModeKind::fedsplitx;
    } else if (name == "fedsplitx-noaux") {
      m.kind = ModeKind::fedsplitx_noaux;
    } else if (name == "depthfl") {
      m.kind = ModeKind::depthfl;
    } else if (name == "exc") {
      m.kind = ModeKind::exc;
    } else if (name == "accsfl") {
      m.kind = ModeKind::accsfl;
    } else if (name == "vanilla-sfl") {
      m.kind = ModeKind::vanilla_sfl;
    } else {
      throw std::invalid_argument("unknown mode '" + std::string(s) +
                                  "' (fedsplitx, fedsplitx-noaux, depthfl, exc:L, accsfl:L, vanilla-sfl:L)");
    }
    if (takes_level(m.kind) != level.has_value()) {
      throw std::invalid_argument("mode '" + std::string(s) + "': " +
                                  (level ? "takes no level" : "needs a level, e.g. " + name + ":1"));
    }
    m.level = level.value_or(0);
    if (takes_level(m.kind) && m.level == 0) throw std::invalid_argument("mode '" + std::string(s) + "': level starts at 1");
    return m;
  }

  std::string name() const {
    switch (kind) {
      case ModeKind::fedsplitx: return "fedsplitx";
      case ModeKind::fedsplitx_noaux: return "fedsplitx-noaux";
      case ModeKind::depthfl: return "depthfl";
      case ModeKind::exc: return "exc:" + std::to_string(level);
      case ModeKind::accsfl: return "accsfl:" + std::to_string(level);
      case ModeKind::vanilla_sfl: return "vanilla-sfl:" + std::to_string(level);
    }
    return "?";
  }

  void validate(std::size_t num_levels) const {
    if (takes_level(kind) && (level < 1 || level > num_levels)) {
      throw std::invalid_argument("mode " + name() + ": level outside 1.." + std::to_string(num_levels));
    }
    if (!takes_level(kind) && level != 0) throw std::invalid_argument("mode " + name() + " takes no level");
  }
};

inline bool eligible(const Mode& mode, std::size_t depth_level) {
  return !Mode::takes_level(mode.kind) || depth_level >= mode.level;
}

// What each side holds and trains for one participant.
struct Roles {
  std::size_t cut = 0;                     // client holds blocks [0, p_cut)
  std::vector<std::size_t> client_heads;   // attached and trained on the client
  std::vector<std::size_t> server_heads;   // empty with no server
  bool has_server = false;
  bool lockstep = false;                   // server gradient flows back each step
};

inline std::vector<std::size_t> head_range(std::size_t from, std::size_t to) {
  std::vector<std::size_t> v;
  for (std::size_t i = from; i <= to; ++i) v.push_back(i);
  return v;
}

inline Roles roles_for(const Mode& mode, std::size_t d, std::size_t num_levels) {
  mode.validate(num_levels);
  if (d < 1 || d > num_levels) throw std::out_of_range("depth level " + std::to_string(d) + " out of range");
  if (!eligible(mode, d)) {
    throw std::invalid_argument("client at level " + std::to_string(d) + " cannot take part in " + mode.name());
  }
  const std::size_t out = num_levels + 1;
  Roles r;
  switch (mode.kind) {
    case ModeKind::fedsplitx:
      r = {d, head_range(1, d), head_range(d + 1, out), true, false};
      break;
    case ModeKind::fedsplitx_noaux:
      r = {d, {d}, {out}, true, false};
      break;
    case ModeKind::accsfl:
      r = {mode.level, {mode.level}, {out}, true, false};
      break;
    case ModeKind::vanilla_sfl:
      r = {mode.level, {}, {out}, true, true};
      break;
    case ModeKind::depthfl:
      r = {d, head_range(1, d), {}, false, false};
      break;
    case ModeKind::exc:
      r = {mode.level, {mode.level}, {}, false, false};
      break;
  }
  return r;
}

// Heads ensembled at evaluation time. `level[m-1]` is the client-side model
// at level m (absent when the mode never trains one); `full` reads the model
// that the mode produces as a whole.
struct EvalHeads {
  std::vector<std::optional<std::vector<std::size_t>>> level;
  std::vector<std::size_t> full;
};

inline EvalHeads eval_heads(const Mode& mode, std::size_t num_levels) {
  mode.validate(num_levels);
  const std::size_t out = num_levels + 1;
  EvalHeads e;
  e.level.resize(num_levels);
  switch (mode.kind) {
    case ModeKind::fedsplitx:
    case ModeKind::depthfl:
      for (std::size_t m = 1; m <= num_levels; ++m) e.level[m - 1] = head_range(1, m);
      e.full = mode.kind == ModeKind::fedsplitx ? head_range(1, out) : head_range(1, num_levels);
      break;
    case ModeKind::fedsplitx_noaux:
      for (std::size_t m = 1; m <= num_levels; ++m) e.level[m - 1] = std::vector<std::size_t>{m};
      e.full = {out};
      break;
    case ModeKind::exc:
      e.level[mode.level - 1] = std::vector<std::size_t>{mode.level};
      e.full = {mode.level};
      break;
    case ModeKind::accsfl:
      e.level[mode.level - 1] = std::vector<std::size_t>{mode.level};
      e.full = {mode.level, out};
      break;
    case ModeKind::vanilla_sfl:
      e.full = {out};
      break;
  }
  return e;
}

}  // namespace fedsplitx::fed
