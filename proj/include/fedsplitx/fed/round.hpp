#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <exception>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "fedsplitx/accounting/ledger.hpp"
#include "fedsplitx/data/dataset.hpp"
#include "fedsplitx/fed/mode.hpp"
#include "fedsplitx/fed/segments.hpp"
#include "fedsplitx/fed/training.hpp"
#include "fedsplitx/split/ensemble.hpp"

namespace fedsplitx::fed {

class RoundError : public std::runtime_error {
 public:
  RoundError(std::size_t round, std::size_t client, const std::string& what)
      : std::runtime_error("round " + std::to_string(round) + ", client " + std::to_string(client) + ": " + what),
        round_(round),
        client_(client) {}

  std::size_t round() const noexcept { return round_; }
  std::size_t client() const noexcept { return client_; }

 private:
  std::size_t round_;
  std::size_t client_;
};

struct FederationConfig {
  Mode mode;
  double fraction = 0.5;
  nn::SgdConfig sgd;
  std::uint64_t seed = 0;
  std::size_t threads = 1;
  // Nonzero: shuffle the order participants are processed in with this
  // seed. Results must not change.
  std::uint64_t execution_order_seed = 0;
  // Test hook: skip all main-server computation.
  bool disable_server = false;
};

inline constexpr double nan_value = std::numeric_limits<double>::quiet_NaN();

struct ParticipantResult {
  std::size_t client_id = 0;
  std::size_t level = 0;
  Roles roles;
  SplitSide<float> client;
  SplitSide<float> server;
  LocalStats client_stats;
  LocalStats server_stats;
  std::size_t smashed_elements = 0;
  std::size_t smashed_rows = 0;  // round-start forward pass, not training
  std::size_t gradient_elements = 0;
  std::size_t client_params = 0;
  SideMacs client_macs;
  SideMacs server_macs;
};

struct RoundStats {
  std::size_t round = 0;
  std::vector<std::size_t> participants;
  std::vector<double> client_loss_by_level;  // NaN where no participant trained
  double server_loss = nan_value;
  AggregationWeights weights;
  std::vector<ParticipantResult> results;  // sorted by client id
};

class Federation {
 public:
  Federation(split::FullModel<float> initial, split::PartitionPlan plan, std::vector<ClientProfile> clients,
             FederationConfig cfg)
      : global_(std::move(initial)), plan_(std::move(plan)), clients_(std::move(clients)), cfg_(cfg) {
    global_.check_against(plan_);
    cfg_.sgd.validate();
    cfg_.mode.validate(plan_.num_levels());
    if (clients_.empty()) throw std::invalid_argument("federation needs at least one client");
    for (std::size_t i = 0; i < clients_.size(); ++i) {
      clients_[i].validate(plan_.num_levels());
      if (clients_[i].id != i) throw std::invalid_argument("client ids must be 0..K-1 in order");
    }
    if (eligible_clients().empty()) throw std::invalid_argument("no client is eligible for " + cfg_.mode.name());
    selection_count(eligible_clients().size(), cfg_.fraction);
  }

  const split::FullModel<float>& global() const { return global_; }
  const split::PartitionPlan& plan() const { return plan_; }
  const acct::CostLedger& ledger() const { return ledger_; }
  const FederationConfig& config() const { return cfg_; }
  const std::vector<ClientProfile>& clients() const { return clients_; }

  std::vector<std::size_t> eligible_clients() const {
    std::vector<std::size_t> ids;
    for (const auto& c : clients_) {
      if (eligible(cfg_.mode, c.depth_level)) ids.push_back(c.id);
    }
    return ids;
  }

  RoundPlan plan_round(std::size_t t) const { return sample_clients(t, eligible_clients(), cfg_.fraction, cfg_.seed); }

  RoundStats run_round(std::size_t t) {
    const auto rp = plan_round(t);
    const std::size_t n = rp.participants.size();
    std::vector<ParticipantResult> results(n);
    std::vector<std::exception_ptr> errors(n);

    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    if (cfg_.execution_order_seed != 0) {
      Rng r(derive_seed(cfg_.execution_order_seed, t));
      r.shuffle(std::span<std::size_t>(order));
    }
    auto work = [&](std::size_t slot) {
      try {
        results[slot] = train_participant(clients_[rp.participants[slot]], t);
      } catch (...) {
        errors[slot] = std::current_exception();
      }
    };
    const std::size_t threads = std::min(std::max<std::size_t>(cfg_.threads, 1), n);
    if (threads <= 1) {
      for (std::size_t slot : order) work(slot);
    } else {
      std::atomic<std::size_t> next{0};
      std::vector<std::jthread> pool;
      for (std::size_t w = 0; w < threads; ++w) {
        pool.emplace_back([&] {
          for (std::size_t i = next++; i < n; i = next++) work(order[i]);
        });
      }
    }
    for (std::size_t i = 0; i < n; ++i) {
      if (!errors[i]) continue;
      try {
        std::rethrow_exception(errors[i]);
      } catch (const std::exception& e) {
        throw RoundError(t, rp.participants[i], e.what());
      }
    }

    std::vector<ShellUpdate> updates;
    for (const auto& r : results) {
      updates.push_back(to_update(r.client, plan_, r.client_id, Side::client, r.roles.cut));
      if (r.roles.has_server && !cfg_.disable_server) {
        updates.push_back(to_update(r.server, plan_, r.client_id, Side::server, r.roles.cut));
      }
    }
    auto merged = heteroavg(to_segments(global_, plan_), std::move(updates));
    load(global_, plan_, merged.global);

    RoundStats st;
    st.round = t;
    st.participants = rp.participants;
    st.weights = std::move(merged.weights);
    record_costs(t, results);
    summarize(st, results);
    st.results = std::move(results);
    return st;
  }

 private:
  ParticipantResult train_participant(const ClientProfile& c, std::size_t t) const {
    ParticipantResult r;
    r.client_id = c.id;
    r.level = c.depth_level;
    r.roles = roles_for(cfg_.mode, c.depth_level, plan_.num_levels());
    auto sm = distribute(global_, plan_, r.roles);
    r.client = std::move(sm.client);
    r.server = std::move(sm.server);
    r.client_params = side_param_count(r.client);
    r.client_macs = side_macs(r.client);
    r.server_macs = side_macs(r.server);
    const bool server_on = r.roles.has_server && !cfg_.disable_server;
    Rng client_rng(derive_seed(cfg_.seed, c.id, t, 1));
    Rng server_rng(derive_seed(cfg_.seed, c.id, t, 2));

    if (r.roles.lockstep) {
      if (!server_on) throw std::logic_error("vanilla split learning cannot run without the server");
      auto ls = vanilla_update(r.client, r.server, *c.data, c.id, r.roles.cut, t, cfg_.sgd, client_rng);
      r.server_stats = ls.server;
      r.client_stats = {nan_value, ls.server.steps, ls.server.samples};
      r.smashed_elements = ls.smashed_elements;
      r.gradient_elements = ls.gradient_elements;
      return r;
    }
    std::optional<split::SmashedBatch> smashed;
    if (r.roles.has_server) {
      // Round-start weights: taken before the client trains.
      smashed = get_smashed_data(r.client, *c.data, c.id, r.roles.cut, t);
      r.smashed_elements = smashed->activations.size();
      r.smashed_rows = smashed->labels.size();
    }
    r.client_stats = client_update(r.client, *c.data, cfg_.sgd, client_rng);
    if (server_on) r.server_stats = server_update(r.server, *smashed, cfg_.sgd, server_rng);
    return r;
  }

  void record_costs(std::size_t t, const std::vector<ParticipantResult>& results) {
    using acct::Direction;
    using acct::Entity;
    for (const auto& r : results) {
      const auto client = Entity::client(r.client_id);
      acct::record_traffic(ledger_, {t, client, Direction::param_download, r.client_params});
      const std::uint64_t trained = r.client_stats.samples;
      std::uint64_t fwd = trained * (r.client_macs.blocks + r.client_macs.heads);
      fwd += r.smashed_rows * r.client_macs.blocks;
      acct::record_compute(ledger_, {t, client, fwd, 2 * trained * (r.client_macs.blocks + r.client_macs.heads)});
      if (r.smashed_elements) acct::record_traffic(ledger_, {t, client, Direction::smashed_upload, r.smashed_elements});
      if (r.gradient_elements) acct::record_traffic(ledger_, {t, client, Direction::gradient_return, r.gradient_elements});
      acct::record_traffic(ledger_, {t, client, Direction::param_upload, r.client_params});
      if (r.server_stats.steps) {
        const std::uint64_t s = r.server_stats.samples;
        const std::uint64_t per = r.server_macs.blocks + r.server_macs.heads;
        acct::record_compute(ledger_, {t, Entity::main_server(), s * per, 2 * s * per});
      }
    }
  }

  void summarize(RoundStats& st, const std::vector<ParticipantResult>& results) const {
    const std::size_t levels = plan_.num_levels();
    std::vector<double> sum(levels, 0.0);
    std::vector<std::size_t> cnt(levels, 0);
    double server_sum = 0.0;
    std::size_t server_cnt = 0;
    for (const auto& r : results) {
      if (!std::isnan(r.client_stats.mean_loss)) {
        sum[r.level - 1] += r.client_stats.mean_loss;
        ++cnt[r.level - 1];
      }
      if (r.server_stats.steps) {
        server_sum += r.server_stats.mean_loss;
        ++server_cnt;
      }
    }
    st.client_loss_by_level.assign(levels, nan_value);
    for (std::size_t m = 0; m < levels; ++m) {
      if (cnt[m]) st.client_loss_by_level[m] = sum[m] / static_cast<double>(cnt[m]);
    }
    if (server_cnt) st.server_loss = server_sum / static_cast<double>(server_cnt);
  }

  split::FullModel<float> global_;
  split::PartitionPlan plan_;
  std::vector<ClientProfile> clients_;
  FederationConfig cfg_;
  acct::CostLedger ledger_;
};

struct EvalResult {
  std::vector<double> level_accuracy;  // NaN where the mode has no level-m model
  double full_accuracy = nan_value;
  double spread = nan_value;           // max - min over the defined level accuracies
};

inline double accuracy_of(const split::SideActivations<float>& acts, const SplitSide<float>& side,
                          const std::vector<std::size_t>& heads, const std::vector<std::size_t>& labels) {
  std::vector<const nn::Tensor*> logits;
  for (std::size_t idx : heads) {
    std::size_t pos = side.heads.size();
    for (std::size_t k = 0; k < side.heads.size(); ++k) {
      if (side.heads[k].index == idx) pos = k;
    }
    if (pos == side.heads.size()) throw std::out_of_range("evaluation head " + std::to_string(idx) + " missing");
    logits.push_back(&acts.logits(pos));
  }
  const auto pred = split::ensemble_predict_batch<float>(std::span<const nn::Tensor* const>(logits));
  std::size_t hit = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) hit += pred[i] == labels[i] ? 1 : 0;
  return labels.empty() ? nan_value : static_cast<double>(hit) / static_cast<double>(labels.size());
}

// Top-1 accuracy of the ensembles named by eval_heads(mode).
inline EvalResult evaluate(const split::FullModel<float>& model, const split::PartitionPlan& plan, const Mode& mode,
                           const data::Dataset& test) {
  const auto side = split::whole(model, plan);
  const auto acts = split::side_forward(side, test.features);
  const auto heads = eval_heads(mode, plan.num_levels());
  EvalResult r;
  r.level_accuracy.assign(plan.num_levels(), nan_value);
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (std::size_t m = 0; m < heads.level.size(); ++m) {
    if (!heads.level[m]) continue;
    const double a = accuracy_of(acts, side, *heads.level[m], test.labels);
    r.level_accuracy[m] = a;
    lo = std::min(lo, a);
    hi = std::max(hi, a);
  }
  if (hi >= lo) r.spread = hi - lo;
  r.full_accuracy = accuracy_of(acts, side, heads.full, test.labels);
  return r;
}

}  // namespace fedsplitx::fed
