#pragma once

#include <cmath>
#include <cstddef>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "fedsplitx/accounting/ledger.hpp"
#include "fedsplitx/data/cifar.hpp"
#include "fedsplitx/data/dataset.hpp"
#include "fedsplitx/data/synthetic.hpp"
#include "fedsplitx/fed/round.hpp"
#include "fedsplitx/harness/config.hpp"
#include "fedsplitx/zoo/registry.hpp"
#include "json.hpp"

namespace fedsplitx::harness {

inline constexpr int summary_schema_version = 1;
inline constexpr const char* output_dir_env = "FEDSPLITX_OUT_DIR";

// metrics.csv columns. Per-level fields hold M values joined by ';'.
inline const std::vector<std::string>& csv_columns() {
  static const std::vector<std::string> cols{
      "round",        "mode",          "seed",          "participants",  "full_acc",
      "client_acc",   "spread",        "client_loss",   "server_loss",   "flops_forward",
      "flops_backward", "bytes_up",    "bytes_down",    "bytes_smashed", "bytes_gradient_return"};
  return cols;
}

struct EvalRow {
  std::size_t round = 0;  // rounds completed
  std::size_t participants = 0;
  fed::EvalResult eval;
  std::vector<double> client_loss;  // from the last completed round
  double server_loss = fed::nan_value;
  acct::Counters cumulative;
};

struct ExperimentResult {
  ExperimentConfig config;
  std::vector<EvalRow> rows;
  acct::CostLedger ledger;

  const EvalRow& final_row() const { return rows.back(); }
};

struct Prepared {
  data::TrainTest split;
  std::vector<data::Dataset> shards;
  zoo::BuiltModel built;
};

inline data::Dataset make_dataset(const ExperimentConfig& c) {
  if (c.dataset == "cifar") {
    auto d = data::load_cifar_binary(c.cifar_path,
                                     c.cifar_limit ? std::optional<std::size_t>(c.cifar_limit) : std::nullopt);
    if (d.num_classes != c.classes) {
      throw ConfigError("config: cifar data has " + std::to_string(d.num_classes) + " classes, classes = " +
                        std::to_string(c.classes));
    }
    return d;
  }
  data::SyntheticSpec s;
  s.kind = data::parse_synthetic_kind(c.dataset);
  s.n = c.samples;
  s.classes = c.classes;
  s.noise = c.noise;
  s.turns = c.turns;
  s.seed = c.seed;
  return data::make_synthetic(s);
}

inline Prepared prepare(const ExperimentConfig& c) {
  c.validate();
  const auto full = make_dataset(c);
  Prepared p;
  p.split = data::train_test_split(full, c.test_fraction, c.seed);
  p.shards = data::iid_partition(p.split.train, c.clients, c.seed);
  p.built = zoo::build(c.model, full.dim(), c.classes, c.seed);
  if (p.built.plan.num_levels() != c.levels) {
    throw ConfigError("config: model " + c.model + " has " + std::to_string(p.built.plan.num_levels()) +
                      " levels, levels = " + std::to_string(c.levels));
  }
  return p;
}

inline std::vector<fed::ClientProfile> make_fleet(const ExperimentConfig& c, const std::vector<data::Dataset>& shards) {
  std::vector<fed::ClientProfile> fleet;
  std::size_t id = 0;
  for (std::size_t m = 0; m < c.level_counts.size(); ++m) {
    for (std::size_t j = 0; j < c.level_counts[m]; ++j, ++id) fleet.push_back({id, m + 1, &shards.at(id)});
  }
  return fleet;
}

inline fed::FederationConfig federation_config(const ExperimentConfig& c) {
  fed::FederationConfig f;
  f.mode = fed::Mode::parse(c.mode);
  f.fraction = c.fraction;
  f.sgd.learning_rate = static_cast<float>(c.learning_rate);
  f.sgd.batch_size = c.batch_size;
  f.sgd.local_epochs = c.epochs;
  f.seed = c.seed;
  f.threads = c.threads;
  f.execution_order_seed = c.execution_order_seed;
  return f;
}

inline std::string fmt_double(double v) {
  if (std::isnan(v)) return "nan";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

inline std::string join_levels(const std::vector<double>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? ";" : "") + fmt_double(v[i]);
  return s;
}

inline std::string to_csv(const ExperimentResult& r) {
  std::ostringstream os;
  const auto& cols = csv_columns();
  for (std::size_t i = 0; i < cols.size(); ++i) os << (i ? "," : "") << cols[i];
  os << '\n';
  for (const auto& row : r.rows) {
    os << row.round << ',' << r.config.mode << ',' << r.config.seed << ',' << row.participants << ','
       << fmt_double(row.eval.full_accuracy) << ',' << join_levels(row.eval.level_accuracy) << ','
       << fmt_double(row.eval.spread) << ',' << join_levels(row.client_loss) << ',' << fmt_double(row.server_loss)
       << ',' << row.cumulative.flops_forward << ',' << row.cumulative.flops_backward << ','
       << row.cumulative.bytes_up << ',' << row.cumulative.bytes_down << ',' << row.cumulative.bytes_smashed << ','
       << row.cumulative.bytes_gradient_return << '\n';
  }
  return os.str();
}

inline nlohmann::json counters_json(const acct::Counters& c) {
  return {{"flops_forward", c.flops_forward},       {"flops_backward", c.flops_backward},
          {"bytes_up", c.bytes_up},                 {"bytes_down", c.bytes_down},
          {"bytes_smashed", c.bytes_smashed},       {"bytes_gradient_return", c.bytes_gradient_return}};
}

inline nlohmann::json number_or_null(double v) { return std::isnan(v) ? nlohmann::json(nullptr) : nlohmann::json(v); }

inline nlohmann::json summary_json(const ExperimentResult& r) {
  nlohmann::json j;
  j["schema_version"] = summary_schema_version;
  j["csv_columns"] = csv_columns();
  j["flop_convention"] = "1 multiply-accumulate = 1 FLOP (dense layers); backward = 2 x forward";
  j["config"] = nlohmann::json::object();
  std::istringstream cfg(to_text(r.config));
  for (std::string line; std::getline(cfg, line);) {
    const auto eq = line.find(" = ");
    if (eq != std::string::npos) j["config"][line.substr(0, eq)] = line.substr(eq + 3);
  }
  const auto& f = r.final_row();
  nlohmann::json levels = nlohmann::json::array();
  for (double a : f.eval.level_accuracy) levels.push_back(number_or_null(a));
  j["final"] = {{"round", f.round},
                {"full_acc", number_or_null(f.eval.full_accuracy)},
                {"client_acc", levels},
                {"spread", number_or_null(f.eval.spread)}};
  j["totals"] = counters_json(r.ledger.total());
  std::map<acct::Entity, acct::Counters> per;
  for (const auto& [key, c] : r.ledger.entries()) per[std::get<1>(key)] += c;
  j["per_entity"] = nlohmann::json::object();
  for (const auto& [e, c] : per) j["per_entity"][acct::to_string(e)] = counters_json(c);
  return j;
}

inline std::filesystem::path resolve_out_dir(const std::optional<std::filesystem::path>& flag) {
  if (flag) return *flag;
  if (const char* env = std::getenv(output_dir_env); env && *env) return env;
  return "fedsplitx-out";
}

inline void write_outputs(const ExperimentResult& r, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  {
    std::ofstream csv(dir / "metrics.csv", std::ios::binary | std::ios::trunc);
    csv << to_csv(r);
    if (!csv) throw std::runtime_error("failed writing " + (dir / "metrics.csv").string());
  }
  std::ofstream js(dir / "summary.json", std::ios::trunc);
  js << summary_json(r).dump(2) << '\n';
  if (!js) throw std::runtime_error("failed writing " + (dir / "summary.json").string());
}

// Runs T rounds; evaluates before training and then every eval_interval
// rounds plus after the last one.
inline ExperimentResult run_experiment(const ExperimentConfig& c) {
  try {
    auto p = prepare(c);
    fed::Federation fedn(p.built.model, p.built.plan, make_fleet(c, p.shards), federation_config(c));
    const auto mode = fedn.config().mode;
    ExperimentResult r;
    r.config = c;
    EvalRow first;
    first.eval = fed::evaluate(fedn.global(), fedn.plan(), mode, p.split.test);
    first.client_loss.assign(c.levels, fed::nan_value);
    r.rows.push_back(std::move(first));
    for (std::size_t t = 0; t < c.rounds; ++t) {
      auto st = fedn.run_round(t);
      if ((t + 1) % c.eval_interval == 0 || t + 1 == c.rounds) {
        EvalRow row;
        row.round = t + 1;
        row.participants = st.participants.size();
        row.eval = fed::evaluate(fedn.global(), fedn.plan(), mode, p.split.test);
        row.client_loss = st.client_loss_by_level;
        row.server_loss = st.server_loss;
        row.cumulative = fedn.ledger().total();
        r.rows.push_back(std::move(row));
      }
    }
    r.ledger = fedn.ledger();
    return r;
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw std::runtime_error("experiment (mode " + c.mode + ", model " + c.model + ", seed " +
                             std::to_string(c.seed) + "): " + e.what());
  }
}

struct CompareRow {
  std::string mode;
  std::uint64_t seed = 0;
  double full_acc = fed::nan_value;
  std::vector<double> client_acc;
  double spread = fed::nan_value;
  acct::Counters totals;
};

inline std::vector<CompareRow> compare(const std::vector<ExperimentConfig>& configs) {
  std::vector<CompareRow> rows;
  for (const auto& c : configs) {
    const auto r = run_experiment(c);
    const auto& f = r.final_row();
    rows.push_back({c.mode, c.seed, f.eval.full_accuracy, f.eval.level_accuracy, f.eval.spread, r.ledger.total()});
  }
  return rows;
}

inline std::string compare_table(const std::vector<CompareRow>& rows) {
  std::ostringstream os;
  char buf[256];
  std::snprintf(buf, sizeof buf, "%-18s %6s %9s %-26s %8s %14s %14s\n", "mode", "seed", "full_acc", "client_acc",
                "spread", "bytes_up", "grad_return");
  os << buf;
  for (const auto& r : rows) {
    std::string lv;
    for (std::size_t i = 0; i < r.client_acc.size(); ++i) {
      lv += (i ? " " : "") + (std::isnan(r.client_acc[i]) ? std::string("  -   ") : fmt_double(r.client_acc[i]).substr(0, 6));
    }
    std::snprintf(buf, sizeof buf, "%-18s %6llu %9s %-26s %8s %14llu %14llu\n", r.mode.c_str(),
                  static_cast<unsigned long long>(r.seed), fmt_double(r.full_acc).c_str(), lv.c_str(),
                  fmt_double(r.spread).c_str(), static_cast<unsigned long long>(r.totals.bytes_up),
                  static_cast<unsigned long long>(r.totals.bytes_gradient_return));
    os << buf;
  }
  return os.str();
}

}  // namespace fedsplitx::harness
