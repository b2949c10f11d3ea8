#include <chrono>
#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "fedsplitx/accounting/report.hpp"
#include "fedsplitx/harness/experiment.hpp"
#include "fedsplitx/harness/gradcheck_suite.hpp"
#include "fedsplitx/zoo/registry.hpp"
#include "json.hpp"

namespace fx = fedsplitx;

namespace {

void apply_sets(fx::harness::ExperimentConfig& c, const std::vector<std::string>& sets) {
  for (const auto& s : sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw fx::harness::ConfigError("--set expects key=value, got '" + s + "'");
    fx::harness::apply(c, fx::harness::detail::trim(s.substr(0, eq)), fx::harness::detail::trim(s.substr(eq + 1)));
  }
}

std::vector<std::size_t> parse_levels(const std::string& s) { return fx::harness::detail::parse_list("fleet", s); }

int cmd_flops(const std::string& model, bool json, const std::string& fleet) {
  const auto d = fx::zoo::descriptor(model);
  const auto rows = fx::acct::level_rows(d);
  const auto levels = parse_levels(fleet);
  const auto server = fx::acct::server_compute_report(d, levels);
  if (json) {
    nlohmann::json j;
    j["convention"] = fx::acct::flop_convention;
    j["rows"] = fx::acct::rows_json(rows, true);
    j["server"] = {{"model", server.model},
                   {"full_flops", server.full_flops},
                   {"accsfl_level1", server.accsfl_level1},
                   {"fedsplitx_mean", server.fedsplitx_mean},
                   {"fleet_levels", levels}};
    std::cout << j.dump(2) << '\n';
    return 0;
  }
  std::printf("%s forward FLOPs per sample (%s)\n", d.name.c_str(), fx::acct::flop_convention);
  std::printf("%-6s %12s %8s %12s %12s\n", "level", "flops", "share", "server", "elementwise");
  for (const auto& r : rows) {
    const double srv = static_cast<double>(server.full_flops - r.flops);
    std::printf("%-6s %12s %7.2f%% %12s %12s\n", r.level.c_str(), fx::acct::human(static_cast<double>(r.flops)).c_str(),
                r.flops_share, fx::acct::human(srv).c_str(), fx::acct::human(static_cast<double>(r.elementwise)).c_str());
  }
  std::printf("server FLOPs: AccSFL(level 1) %s, FedSplitX (mean over fleet %s) %s\n",
              fx::acct::human(static_cast<double>(server.accsfl_level1)).c_str(), fleet.c_str(),
              fx::acct::human(server.fedsplitx_mean).c_str());
  return 0;
}

int cmd_params(const std::string& model, bool json) {
  const auto d = fx::zoo::descriptor(model);
  const auto rows = fx::acct::level_rows(d);
  if (json) {
    nlohmann::json j;
    j["convention"] = fx::acct::flop_convention;
    j["rows"] = fx::acct::rows_json(rows, false);
    std::cout << j.dump(2) << '\n';
    return 0;
  }
  std::printf("%s client-side parameters (aux heads included)\n", d.name.c_str());
  std::printf("%-6s %14s %10s %8s\n", "level", "params", "", "share");
  for (const auto& r : rows) {
    std::printf("%-6s %14llu %10s %7.2f%%\n", r.level.c_str(), static_cast<unsigned long long>(r.params),
                fx::acct::human(static_cast<double>(r.params)).c_str(), r.params_share);
  }
  return 0;
}

int cmd_gradcheck(std::uint64_t seed, std::size_t count) {
  std::vector<std::uint64_t> seeds;
  for (std::size_t i = 0; i < count; ++i) seeds.push_back(seed + i);
  const auto r = fx::harness::run_gradient_suite(seeds);
  for (const auto& e : r.entries) {
    std::printf("%-18s seed %-4llu max rel err %.3e over %zu coords  %s\n", e.name.c_str(),
                static_cast<unsigned long long>(e.seed), e.result.max_rel_error, e.result.checked,
                e.result.passes(r.tolerance) ? "ok" : ("FAIL " + e.result.worst).c_str());
  }
  std::printf("%s: worst %.3e (tolerance %.0e)\n", r.passed() ? "PASS" : "FAIL", r.worst(), r.tolerance);
  return r.passed() ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"fedsplitx: federated split learning simulator and cost accountant"};
  app.require_subcommand(1);

  auto* run = app.add_subcommand("run", "run one experiment");
  std::string config_path, mode;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out_dir;
  std::vector<std::string> sets;
  run->add_option("--config", config_path, "key = value config file")->required()->check(CLI::ExistingFile);
  run->add_option("--mode", mode, "fedsplitx | fedsplitx-noaux | depthfl | exc:L | accsfl:L | vanilla-sfl:L");
  run->add_option("--seed", seed, "seed");
  run->add_option("--out", out_dir, "output directory (default $FEDSPLITX_OUT_DIR or ./fedsplitx-out)");
  run->add_option("--set", sets, "override a config key, key=value");

  auto* cmp = app.add_subcommand("compare", "run several configs and print a comparison table");
  std::vector<std::string> configs, modes;
  std::vector<std::uint64_t> seeds;
  cmp->add_option("--configs", configs, "config files")->required()->check(CLI::ExistingFile);
  cmp->add_option("--modes", modes, "run every config under each of these modes")->delimiter(',');
  cmp->add_option("--seeds", seeds, "run every config under each of these seeds")->delimiter(',');
  cmp->add_option("--set", sets, "override a config key, key=value");

  auto* flops = app.add_subcommand("flops", "forward FLOPs per depth level");
  std::string model;
  bool json = false;
  std::string fleet = "1,2,3";
  flops->add_option("--model", model, "model name")->required();
  flops->add_flag("--json", json, "machine-readable report");
  flops->add_option("--fleet", fleet, "levels averaged for the FedSplitX server figure");

  auto* params = app.add_subcommand("params", "client-side parameter counts per depth level");
  params->add_option("--model", model, "model name")->required();
  params->add_flag("--json", json, "machine-readable report");

  auto* grad = app.add_subcommand("gradcheck", "finite-difference gradient suite");
  std::uint64_t grad_seed = 1;
  std::size_t grad_count = 20;
  grad->add_option("--seed", grad_seed, "first seed");
  grad->add_option("--count", grad_count, "number of seeds");

  auto* models = app.add_subcommand("models", "model registry");
  models->require_subcommand(1);
  auto* list = models->add_subcommand("list", "list registered models");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run) {
      auto c = fx::harness::load_config(config_path);
      apply_sets(c, sets);
      if (!mode.empty()) c.mode = mode;
      if (seed) c.seed = *seed;
      const auto dir = fx::harness::resolve_out_dir(out_dir ? std::optional<std::filesystem::path>(*out_dir) : std::nullopt);
      const auto r = fx::harness::run_experiment(c);
      fx::harness::write_outputs(r, dir);
      const auto& f = r.final_row();
      std::printf("%s seed %llu: full-model acc %s, client acc %s after %zu rounds -> %s\n", c.mode.c_str(),
                  static_cast<unsigned long long>(c.seed), fx::harness::fmt_double(f.eval.full_accuracy).c_str(),
                  fx::harness::join_levels(f.eval.level_accuracy).c_str(), f.round, dir.string().c_str());
      return 0;
    }
    if (*cmp) {
      std::vector<fx::harness::ExperimentConfig> all;
      for (const auto& path : configs) {
        auto base = fx::harness::load_config(path);
        apply_sets(base, sets);
        const auto ms = modes.empty() ? std::vector<std::string>{base.mode} : modes;
        const auto ss = seeds.empty() ? std::vector<std::uint64_t>{base.seed} : seeds;
        for (const auto& m : ms) {
          for (auto s : ss) {
            auto c = base;
            c.mode = m;
            c.seed = s;
            all.push_back(c);
          }
        }
      }
      std::cout << fx::harness::compare_table(fx::harness::compare(all));
      return 0;
    }
    if (*flops) return cmd_flops(model, json, fleet);
    if (*params) return cmd_params(model, json);
    if (*grad) return cmd_gradcheck(grad_seed, grad_count);
    if (*list) {
      for (const auto& e : fx::zoo::registry()) {
        std::string detail = "static-only descriptor";
        if (e.toy) {
          const auto plan = fx::zoo::toy_plan(*e.toy, 2);
          detail = std::to_string(e.toy->blocks) + " blocks, width " + std::to_string(e.toy->width) + ", cuts ";
          for (std::size_t i = 0; i < plan.cut_points.size(); ++i) detail += (i ? "," : "") + std::to_string(plan.cut_points[i]);
        } else {
          const auto d = fx::zoo::descriptor(e.name);
          detail += ", " + std::to_string(d.num_levels()) + " cuts, " +
                    fx::acct::human(static_cast<double>(fx::acct::total_cost(d).params)) + " params";
        }
        std::printf("%-12s v%s  %s\n", e.name.c_str(), e.version.c_str(), detail.c_str());
      }
      return 0;
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 0;
}
