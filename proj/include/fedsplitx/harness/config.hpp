#pragma once

#include <charconv>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "fedsplitx/fed/mode.hpp"

namespace fedsplitx::harness {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct ExperimentConfig {
  std::size_t rounds = 200;         // T
  std::size_t clients = 10;         // K
  double fraction = 0.5;            // C
  std::size_t epochs = 1;           // E
  std::size_t batch_size = 32;      // B
  double learning_rate = 0.05;      // eta
  std::size_t levels = 3;           // M
  std::vector<std::size_t> level_counts{3, 3, 4};
  std::string model = "toy-mlp-s";
  std::string dataset = "spirals";  // spirals | blobs | cifar
  std::size_t samples = 2000;
  std::size_t classes = 2;
  double noise = 0.05;
  double turns = 1.0;
  std::string cifar_path;
  std::size_t cifar_limit = 0;      // 0 = all records
  double test_fraction = 0.2;
  std::uint64_t seed = 0;
  std::string mode = "fedsplitx";
  std::size_t eval_interval = 10;
  std::size_t threads = 1;
  std::uint64_t execution_order_seed = 0;

  void validate() const {
    auto need = [](bool ok, const std::string& what) {
      if (!ok) throw ConfigError("config: " + what);
    };
    need(clients >= 1, "clients must be >= 1");
    need(fraction > 0.0 && fraction <= 1.0, "fraction must be in (0, 1]");
    need(epochs >= 1, "epochs must be >= 1");
    need(batch_size >= 1, "batch_size must be >= 1");
    need(learning_rate >= 0.0, "learning_rate must be >= 0");
    need(levels >= 1, "levels must be >= 1");
    need(level_counts.size() == levels, "level_counts needs one entry per level (" + std::to_string(levels) + ")");
    need(std::accumulate(level_counts.begin(), level_counts.end(), std::size_t{0}) == clients,
         "level_counts must sum to clients (" + std::to_string(clients) + ")");
    need(classes >= 2, "classes must be >= 2");
    need(samples >= classes, "samples must be >= classes");
    need(noise >= 0.0, "noise must be >= 0");
    need(test_fraction > 0.0 && test_fraction < 1.0, "test_fraction must be in (0, 1)");
    need(eval_interval >= 1, "eval_interval must be >= 1");
    need(threads >= 1, "threads must be >= 1");
    need(dataset == "spirals" || dataset == "blobs" || dataset == "cifar", "dataset must be spirals, blobs or cifar");
    need(dataset != "cifar" || !cifar_path.empty(), "dataset cifar needs cifar_path");
    fed::Mode::parse(mode).validate(levels);
  }
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& v) {
  T out{};
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || p != v.data() + v.size()) {
    throw ConfigError("config: bad value '" + v + "' for " + key);
  }
  return out;
}

inline std::vector<std::size_t> parse_list(const std::string& key, const std::string& v) {
  std::vector<std::size_t> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_number<std::size_t>(key, trim(item)));
  return out;
}

}  // namespace detail

// key = value, '#' starts a comment. Unknown keys are an error.
inline void apply(ExperimentConfig& c, const std::string& key, const std::string& value) {
  using detail::parse_number;
  const std::string& v = value;
  if (key == "rounds") c.rounds = parse_number<std::size_t>(key, v);
  else if (key == "clients") c.clients = parse_number<std::size_t>(key, v);
  else if (key == "fraction") c.fraction = parse_number<double>(key, v);
  else if (key == "epochs") c.epochs = parse_number<std::size_t>(key, v);
  else if (key == "batch_size") c.batch_size = parse_number<std::size_t>(key, v);
  else if (key == "learning_rate") c.learning_rate = parse_number<double>(key, v);
  else if (key == "levels") c.levels = parse_number<std::size_t>(key, v);
  else if (key == "level_counts") c.level_counts = detail::parse_list(key, v);
  else if (key == "model") c.model = v;
  else if (key == "dataset") c.dataset = v;
  else if (key == "samples") c.samples = parse_number<std::size_t>(key, v);
  else if (key == "classes") c.classes = parse_number<std::size_t>(key, v);
  else if (key == "noise") c.noise = parse_number<double>(key, v);
  else if (key == "turns") c.turns = parse_number<double>(key, v);
  else if (key == "cifar_path") c.cifar_path = v;
  else if (key == "cifar_limit") c.cifar_limit = v.empty() ? 0 : parse_number<std::size_t>(key, v);
  else if (key == "test_fraction") c.test_fraction = parse_number<double>(key, v);
  else if (key == "seed") c.seed = parse_number<std::uint64_t>(key, v);
  else if (key == "mode") c.mode = v;
  else if (key == "eval_interval") c.eval_interval = parse_number<std::size_t>(key, v);
  else if (key == "threads") c.threads = parse_number<std::size_t>(key, v);
  else if (key == "execution_order_seed") c.execution_order_seed = parse_number<std::uint64_t>(key, v);
  else throw ConfigError("config: unknown key '" + key + "'");
}

inline ExperimentConfig parse_config(const std::string& text, const std::string& source = "<string>") {
  ExperimentConfig c;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto h = line.find('#'); h != std::string::npos) line.erase(h);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(source + ":" + std::to_string(lineno) + ": expected key = value");
    }
    try {
      apply(c, detail::trim(line.substr(0, eq)), detail::trim(line.substr(eq + 1)));
    } catch (const ConfigError& e) {
      throw ConfigError(source + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return c;
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), path.string());
}

inline std::string to_text(const ExperimentConfig& c) {
  std::ostringstream os;
  os << "rounds = " << c.rounds << "\nclients = " << c.clients << "\nfraction = " << c.fraction
     << "\nepochs = " << c.epochs << "\nbatch_size = " << c.batch_size << "\nlearning_rate = " << c.learning_rate
     << "\nlevels = " << c.levels << "\nlevel_counts = ";
  for (std::size_t i = 0; i < c.level_counts.size(); ++i) os << (i ? "," : "") << c.level_counts[i];
  os << "\nmodel = " << c.model << "\ndataset = " << c.dataset << "\nsamples = " << c.samples
     << "\nclasses = " << c.classes << "\nnoise = " << c.noise << "\nturns = " << c.turns;
  if (!c.cifar_path.empty()) os << "\ncifar_path = " << c.cifar_path;
  os << "\ncifar_limit = " << c.cifar_limit << "\ntest_fraction = " << c.test_fraction << "\nseed = " << c.seed
     << "\nmode = " << c.mode << "\neval_interval = " << c.eval_interval << "\nthreads = " << c.threads
     << "\nexecution_order_seed = " << c.execution_order_seed << "\n";
  return os.str();
}

}  // namespace fedsplitx::harness
