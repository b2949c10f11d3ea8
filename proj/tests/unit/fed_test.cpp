#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <map>

#include "fedsplitx/accounting/arch.hpp"
#include "fedsplitx/data/synthetic.hpp"
#include "fedsplitx/fed/round.hpp"
#include "fedsplitx/zoo/registry.hpp"

namespace fed = fedsplitx::fed;
namespace data = fedsplitx::data;
namespace split = fedsplitx::split;
namespace zoo = fedsplitx::zoo;
namespace nn = fedsplitx::nn;
using fedsplitx::Rng;

namespace {

struct Rig {
  zoo::ToySpec spec;
  data::Dataset pool;
  std::vector<data::Dataset> shards;
  split::FullModel<float> model;
  split::PartitionPlan plan;

  std::vector<fed::ClientProfile> fleet(const std::vector<std::size_t>& levels) const {
    std::vector<fed::ClientProfile> f;
    for (std::size_t k = 0; k < levels.size(); ++k) f.push_back({k, levels[k], &shards.at(k)});
    return f;
  }
};

Rig make_rig(zoo::ToySpec spec = {4, 8, 3}, std::size_t k = 4, std::size_t n = 160, std::uint64_t seed = 1) {
  Rig r;
  r.spec = spec;
  data::SyntheticSpec s;
  s.n = n;
  s.seed = seed;
  r.pool = data::make_synthetic(s);
  r.shards = data::iid_partition(r.pool, k, seed);
  r.model = zoo::toy_model(spec, 2, 2, seed);
  r.plan = zoo::toy_plan(spec, 2);
  return r;
}

fed::FederationConfig config(const std::string& mode, double fraction = 1.0) {
  fed::FederationConfig c;
  c.mode = fed::Mode::parse(mode);
  c.fraction = fraction;
  c.sgd.learning_rate = 0.05f;
  c.sgd.batch_size = 16;
  c.sgd.local_epochs = 1;
  c.seed = 3;
  return c;
}

std::vector<nn::Tensor> flat(const split::FullModel<float>& m, const split::PartitionPlan& plan) {
  std::vector<nn::Tensor> out;
  for (const auto& s : fed::to_segments(m, plan).shells) {
    out.insert(out.end(), s.blocks.begin(), s.blocks.end());
    out.insert(out.end(), s.head.begin(), s.head.end());
  }
  return out;
}

std::vector<nn::Tensor> flat(const split::SplitSide<float>& side) {
  std::vector<nn::Tensor> out;
  for (const auto& b : side.blocks) {
    for (const auto& l : b.layers) {
      for (const auto& p : l.params()) out.push_back(p);
    }
  }
  for (const auto& h : side.heads) {
    for (const auto& l : h.head.layers) {
      for (const auto& p : l.params()) out.push_back(p);
    }
  }
  return out;
}

double max_abs_diff(const std::vector<nn::Tensor>& a, const std::vector<nn::Tensor>& b) {
  EXPECT_EQ(a.size(), b.size());
  double d = 0.0;
  for (std::size_t k = 0; k < std::min(a.size(), b.size()); ++k) {
    for (std::size_t i = 0; i < a[k].size(); ++i) d = std::max(d, std::abs(double(a[k][i]) - double(b[k][i])));
  }
  return d;
}

split::FullModel<float> train(const Rig& r, const std::vector<std::size_t>& levels, fed::FederationConfig cfg,
                              std::size_t rounds) {
  fed::Federation f(r.model, r.plan, r.fleet(levels), cfg);
  for (std::size_t t = 1; t <= rounds; ++t) f.run_round(t);
  return f.global();
}

}  // namespace

// ---- client sampling ----

TEST(Sampling, FullFractionSelectsEveryone) {
  const auto p = fed::sample_clients(4, 10, 1.0, 0);
  EXPECT_EQ(p.participants, (std::vector<std::size_t>{0, 1, 2, 3, 4, 5, 6, 7, 8, 9}));
}

TEST(Sampling, CountIsRoundedFraction) {
  EXPECT_EQ(fed::sample_clients(1, 50, 0.1, 7).participants.size(), 5u);
  EXPECT_EQ(fed::sample_clients(1, 10, 0.05, 7).participants.size(), 1u);
  EXPECT_EQ(fed::selection_count(10, 0.5), 5u);
}

TEST(Sampling, PureFunctionOfSeedAndRound) {
  const auto a = fed::sample_clients(5, 50, 0.2, 9);
  EXPECT_EQ(a.participants, fed::sample_clients(5, 50, 0.2, 9).participants);
  EXPECT_TRUE(std::is_sorted(a.participants.begin(), a.participants.end()));
  EXPECT_EQ(std::adjacent_find(a.participants.begin(), a.participants.end()), a.participants.end());
  bool differs = false;
  for (std::size_t t = 6; t < 12; ++t) differs |= fed::sample_clients(t, 50, 0.2, 9).participants != a.participants;
  EXPECT_TRUE(differs);
}

TEST(Sampling, InvalidFractionThrows) {
  EXPECT_THROW(fed::sample_clients(1, 10, 0.0, 0), std::invalid_argument);
  EXPECT_THROW(fed::sample_clients(1, 10, 1.5, 0), std::invalid_argument);
  EXPECT_THROW(fed::sample_clients(1, 10, std::nan(""), 0), std::invalid_argument);
  EXPECT_THROW(fed::sample_clients(1, 0, 0.5, 0), std::invalid_argument);
}

TEST(Sampling, ExclusiveDrawsFromEligiblePool) {
  auto r = make_rig({4, 8, 3}, 50, 500);
  std::vector<std::size_t> levels;
  for (std::size_t k = 0; k < 50; ++k) levels.push_back(k < 16 ? 1 : k < 32 ? 2 : 3);
  fed::Federation f(r.model, r.plan, r.fleet(levels), config("exc:3", 0.5));
  EXPECT_EQ(f.eligible_clients().size(), 18u);
  const auto p = f.plan_round(1);
  EXPECT_EQ(p.participants.size(), 9u);
  for (std::size_t id : p.participants) EXPECT_EQ(levels[id], 3u);
  fed::Federation g(r.model, r.plan, r.fleet(levels), config("exc:2", 0.5));
  EXPECT_EQ(g.eligible_clients().size(), 34u);
}

// ---- modes ----

TEST(Mode, ParseForms) {
  EXPECT_EQ(fed::Mode::parse("exc:2").level, 2u);
  EXPECT_EQ(fed::Mode::parse("exc(3)").level, 3u);
  EXPECT_EQ(fed::Mode::parse("vanilla-sfl:1").kind, fed::ModeKind::vanilla_sfl);
  EXPECT_EQ(fed::Mode::parse("fedsplitx-noaux").name(), "fedsplitx-noaux");
  for (const char* bad : {"exc", "exc:", "exc:0", "exc:x", "exc(1", "fedsplitx:1", "depthfl(2)", "splitfed"}) {
    EXPECT_THROW(fed::Mode::parse(bad), std::invalid_argument) << bad;
  }
  EXPECT_THROW(fed::Mode::parse("accsfl:4").validate(3), std::invalid_argument);
}

TEST(Mode, Roles) {
  using V = std::vector<std::size_t>;
  auto r = fed::roles_for(fed::Mode::parse("fedsplitx"), 2, 3);
  EXPECT_EQ(r.cut, 2u);
  EXPECT_EQ(r.client_heads, (V{1, 2}));
  EXPECT_EQ(r.server_heads, (V{3, 4}));
  r = fed::roles_for(fed::Mode::parse("fedsplitx-noaux"), 2, 3);
  EXPECT_EQ(r.client_heads, (V{2}));
  EXPECT_EQ(r.server_heads, (V{4}));
  r = fed::roles_for(fed::Mode::parse("accsfl:1"), 3, 3);
  EXPECT_EQ(r.cut, 1u);
  EXPECT_EQ(r.client_heads, (V{1}));
  EXPECT_EQ(r.server_heads, (V{4}));
  r = fed::roles_for(fed::Mode::parse("vanilla-sfl:2"), 3, 3);
  EXPECT_TRUE(r.client_heads.empty());
  EXPECT_TRUE(r.lockstep);
  r = fed::roles_for(fed::Mode::parse("depthfl"), 3, 3);
  EXPECT_FALSE(r.has_server);
  EXPECT_EQ(r.client_heads, (V{1, 2, 3}));
  EXPECT_THROW(fed::roles_for(fed::Mode::parse("exc:3"), 2, 3), std::invalid_argument);
  EXPECT_THROW(fed::roles_for(fed::Mode::parse("fedsplitx"), 4, 3), std::out_of_range);
}

TEST(Mode, EvalHeads) {
  using V = std::vector<std::size_t>;
  auto e = fed::eval_heads(fed::Mode::parse("fedsplitx"), 3);
  EXPECT_EQ(*e.level[1], (V{1, 2}));
  EXPECT_EQ(e.full, (V{1, 2, 3, 4}));
  e = fed::eval_heads(fed::Mode::parse("depthfl"), 3);
  EXPECT_EQ(e.full, (V{1, 2, 3}));
  e = fed::eval_heads(fed::Mode::parse("exc:2"), 3);
  EXPECT_FALSE(e.level[0]);
  EXPECT_EQ(*e.level[1], (V{2}));
  EXPECT_FALSE(e.level[2]);
  e = fed::eval_heads(fed::Mode::parse("vanilla-sfl:1"), 3);
  EXPECT_EQ(e.full, (V{4}));
  for (const auto& l : e.level) EXPECT_FALSE(l);
}

// ---- distribution and local training ----

TEST(Distribute, BoundariesAndIsolation) {
  auto r = make_rig();
  for (std::size_t d = 1; d <= 3; ++d) {
    auto sm = fed::distribute(r.model, r.plan, fed::roles_for(fed::Mode::parse("fedsplitx"), d, 3));
    EXPECT_EQ(sm.client.blocks.size(), r.plan.cut(d));
    EXPECT_EQ(sm.server.first_block, r.plan.cut(d));
    EXPECT_EQ(sm.client.heads.size(), d);
    EXPECT_EQ(sm.server.heads.size(), 4 - d);
    const auto before = flat(r.model, r.plan);
    sm.client.blocks[0].layers[0].params()[0].fill(42.0f);
    sm.server.heads.back().head.layers[0].params()[0].fill(42.0f);
    EXPECT_EQ(max_abs_diff(before, flat(r.model, r.plan)), 0.0);
  }
  auto sm = fed::distribute(r.model, r.plan, fed::roles_for(fed::Mode::parse("depthfl"), 2, 3));
  EXPECT_TRUE(sm.server.blocks.empty());
  EXPECT_TRUE(sm.server.heads.empty());
}

TEST(ClientUpdate, ZeroEpochsRejected) {
  auto r = make_rig();
  auto sm = split::split(r.model, r.plan, 1);
  nn::SgdConfig cfg;
  cfg.local_epochs = 0;
  Rng rng(1);
  EXPECT_THROW(fed::client_update(sm.client, r.shards[0], cfg, rng), std::invalid_argument);
  cfg.local_epochs = 1;
  cfg.learning_rate = -1.0f;
  EXPECT_THROW(fed::client_update(sm.client, r.shards[0], cfg, rng), std::invalid_argument);
}

TEST(ClientUpdate, ZeroRateLeavesParams) {
  auto r = make_rig();
  auto sm = split::split(r.model, r.plan, 2);
  const auto before = flat(sm.client);
  nn::SgdConfig cfg;
  cfg.learning_rate = 0.0f;
  cfg.local_epochs = 3;
  Rng rng(1);
  const auto s = fed::client_update(sm.client, r.shards[0], cfg, rng);
  EXPECT_EQ(max_abs_diff(before, flat(sm.client)), 0.0);
  EXPECT_EQ(s.samples, 3 * r.shards[0].size());
  EXPECT_EQ(s.steps, 3 * ((r.shards[0].size() + 31) / 32));
}

// The client's update must not depend on anything the server does.
TEST(ClientUpdate, DecoupledFromServer) {
  auto r = make_rig();
  auto cfg = config("fedsplitx");
  fed::Federation with(r.model, r.plan, r.fleet({1, 2, 3, 3}), cfg);
  cfg.disable_server = true;
  fed::Federation without(r.model, r.plan, r.fleet({1, 2, 3, 3}), cfg);
  const auto a = with.run_round(1);
  const auto b = without.run_round(1);
  ASSERT_EQ(a.results.size(), b.results.size());
  for (std::size_t i = 0; i < a.results.size(); ++i) {
    EXPECT_EQ(max_abs_diff(flat(a.results[i].client), flat(b.results[i].client)), 0.0);
    EXPECT_GT(a.results[i].server_stats.steps, 0u);
    EXPECT_EQ(b.results[i].server_stats.steps, 0u);
  }
}

TEST(Smashed, OneSampleOneRow) {
  auto r = make_rig();
  std::vector<std::size_t> row{0};
  const auto one = r.pool.subset(row);
  auto sm = split::split(r.model, r.plan, 2);
  const auto b = fed::get_smashed_data(sm.client, one, 7, 2, 5);
  EXPECT_EQ(b.activations.shape(), (nn::Shape{1, 8}));
  EXPECT_EQ(b.labels, one.labels);
  EXPECT_EQ(b.client_id, 7u);
  EXPECT_EQ(b.round, 5u);
}

TEST(Smashed, EmptyClientPassesInputsThrough) {
  auto r = make_rig();
  split::SplitSide<float> empty;
  const auto b = fed::get_smashed_data(empty, r.shards[1], 1, 1, 0);
  EXPECT_EQ(b.activations, r.shards[1].features);
}

TEST(Smashed, MatchesPerSampleForward) {
  auto r = make_rig();
  auto sm = split::split(r.model, r.plan, 3);
  const auto b = fed::get_smashed_data(sm.client, r.shards[0], 0, 3, 0);
  for (std::size_t i = 0; i < r.shards[0].size(); ++i) {
    std::vector<std::size_t> row{i};
    nn::Tensor x = nn::gather_rows(r.shards[0].features, row);
    for (const auto& blk : sm.client.blocks) x = nn::forward(blk.layers, x).back();
    for (std::size_t j = 0; j < x.size(); ++j) EXPECT_FLOAT_EQ(b.activations.row(i)[j], x[j]);
  }
}

TEST(ServerUpdate, WholeBatchIsOneStep) {
  auto r = make_rig();
  auto sm = split::split(r.model, r.plan, 1);
  const auto b = fed::get_smashed_data(sm.client, r.shards[0], 0, 1, 0);
  nn::SgdConfig cfg;
  cfg.batch_size = r.shards[0].size();
  Rng rng(2);
  const auto s = fed::server_update(sm.server, b, cfg, rng);
  EXPECT_EQ(s.steps, 1u);
  EXPECT_EQ(s.samples, r.shards[0].size());
}

TEST(ServerUpdate, TopLevelTrainsOnlyTheOutputHead) {
  auto r = make_rig();
  auto sm = fed::distribute(r.model, r.plan, fed::roles_for(fed::Mode::parse("fedsplitx"), 3, 3));
  ASSERT_EQ(sm.server.heads.size(), 1u);
  EXPECT_EQ(sm.server.heads[0].index, 4u);
  const auto before = flat(sm.server);
  const auto b = fed::get_smashed_data(sm.client, r.shards[0], 0, 3, 0);
  Rng rng(2);
  fed::server_update(sm.server, b, {}, rng);
  const auto after = flat(sm.server);
  for (std::size_t k = 0; k < before.size(); ++k) EXPECT_FALSE(before[k] == after[k]) << "tensor " << k;
}

TEST(ServerUpdate, SmallStepDescends) {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    auto r = make_rig({4, 8, 3}, 4, 160, seed);
    auto sm = split::split(r.model, r.plan, 1);
    const auto b = fed::get_smashed_data(sm.client, r.shards[0], 0, 1, 0);
    auto probe = sm.server;
    const float before = split::server_loss(probe, b).loss;
    nn::SgdConfig cfg;
    cfg.learning_rate = 1e-3f;
    cfg.batch_size = b.labels.size();
    Rng rng(seed);
    fed::server_update(sm.server, b, cfg, rng);
    const float after = split::server_loss(sm.server, b).loss;
    EXPECT_LT(after, before) << "seed " << seed;
  }
}

// ---- heteroavg ----

namespace {

fed::Shell scalar_shell(float v) {
  fed::Shell s;
  s.blocks.push_back(nn::Tensor({1}, {v}));
  s.head.push_back(nn::Tensor({1}, {v}));
  return s;
}

fed::ParamSegments scalar_segments(std::size_t shells, float v) {
  fed::ParamSegments p;
  for (std::size_t m = 0; m < shells; ++m) p.shells.push_back(scalar_shell(v));
  return p;
}

fed::ShellUpdate scalar_update(std::size_t id, fed::Side side, std::size_t level, std::map<std::size_t, float> vals) {
  fed::ShellUpdate u{id, side, level, {}};
  for (auto [m, v] : vals) {
    auto s = scalar_shell(v);
    u.shells[m] = {s.blocks, s.head};
  }
  return u;
}

}  // namespace

TEST(HeteroAvg, HandOracle) {
  using fed::Side;
  std::vector<fed::ShellUpdate> ups{
      scalar_update(0, Side::client, 2, {{1, 3.f}, {2, 4.f}}),
      scalar_update(1, Side::client, 2, {{1, 6.f}, {2, 8.f}}),
      scalar_update(2, Side::client, 1, {{1, 9.f}}),
      scalar_update(2, Side::server, 1, {{3, 5.f}}),
  };
  const auto m = fed::heteroavg(scalar_segments(3, 0.f), ups);
  EXPECT_EQ(m.global.shell(1).blocks[0][0], 6.f);
  EXPECT_EQ(m.global.shell(2).blocks[0][0], 6.f);
  EXPECT_EQ(m.global.shell(3).head[0][0], 5.f);
  EXPECT_EQ(m.weights.client_count(1), 3u);
  EXPECT_EQ(m.weights.client_count(2), 2u);
  EXPECT_EQ(m.weights.server_count(3), 1u);
}

// Levels 1, 2, 3 each contribute their client shells.
TEST(HeteroAvg, NestedClientShells) {
  using fed::Side;
  const auto m = fed::heteroavg(scalar_segments(4, 0.f), {scalar_update(0, Side::client, 1, {{1, 3.f}}),
                                                          scalar_update(1, Side::client, 2, {{1, 6.f}, {2, 4.f}}),
                                                          scalar_update(2, Side::client, 3, {{1, 9.f}, {2, 8.f}, {3, 5.f}})});
  EXPECT_EQ(m.global.shell(1).blocks[0][0], 6.f);
  EXPECT_EQ(m.global.shell(2).blocks[0][0], 6.f);
  EXPECT_EQ(m.global.shell(3).blocks[0][0], 5.f);
  EXPECT_EQ(m.global.shell(4).blocks[0][0], 0.f);
}

TEST(HeteroAvg, UntouchedShellKeepsPrevious) {
  const auto m = fed::heteroavg(scalar_segments(3, 7.f), {scalar_update(0, fed::Side::client, 1, {{1, 1.f}})});
  EXPECT_EQ(m.global.shell(1).head[0][0], 1.f);
  EXPECT_EQ(m.global.shell(2).head[0][0], 7.f);
  EXPECT_EQ(m.global.shell(3).blocks[0][0], 7.f);
}

TEST(HeteroAvg, UnanimousUpdatesAreReturnedExactly) {
  auto r = make_rig();
  const auto prev = fed::to_segments(r.model, r.plan);
  auto trained = r.model;
  trained.blocks[1].layers[0].params()[0].fill(0.1f);
  std::vector<fed::ShellUpdate> ups;
  for (std::size_t k = 0; k < 5; ++k) {
    auto sm = split::split(trained, r.plan, 1 + k % 3);
    ups.push_back(fed::to_update(sm.client, r.plan, k, fed::Side::client, sm.level));
    ups.push_back(fed::to_update(sm.server, r.plan, k, fed::Side::server, sm.level));
  }
  split::FullModel<float> out = r.model;
  fed::load(out, r.plan, fed::heteroavg(prev, ups).global);
  EXPECT_EQ(max_abs_diff(flat(out, r.plan), flat(trained, r.plan)), 0.0);
}

TEST(HeteroAvg, SingleParticipantIsCopied) {
  auto r = make_rig();
  auto other = zoo::toy_model(r.spec, 2, 2, 99);
  auto sm = fed::distribute(other, r.plan, fed::roles_for(fed::Mode::parse("accsfl:2"), 3, 3));
  std::vector<fed::ShellUpdate> ups{fed::to_update(sm.client, r.plan, 0, fed::Side::client, 2),
                                    fed::to_update(sm.server, r.plan, 0, fed::Side::server, 2)};
  auto out = r.model;
  fed::load(out, r.plan, fed::heteroavg(fed::to_segments(r.model, r.plan), ups).global);
  const auto got = fed::to_segments(out, r.plan);
  const auto src = fed::to_segments(other, r.plan);
  const auto old = fed::to_segments(r.model, r.plan);
  // shells 1..2 blocks and the output head come from the participant; head 1
  // and head 3 were not held so they stay.
  EXPECT_EQ(max_abs_diff(got.shell(1).blocks, src.shell(1).blocks), 0.0);
  EXPECT_EQ(max_abs_diff(got.shell(2).blocks, src.shell(2).blocks), 0.0);
  EXPECT_EQ(max_abs_diff(got.shell(2).head, src.shell(2).head), 0.0);
  EXPECT_EQ(max_abs_diff(got.shell(4).head, src.shell(4).head), 0.0);
  EXPECT_EQ(max_abs_diff(got.shell(1).head, old.shell(1).head), 0.0);
  EXPECT_EQ(max_abs_diff(got.shell(3).head, old.shell(3).head), 0.0);
  EXPECT_EQ(max_abs_diff(got.shell(3).blocks, src.shell(3).blocks), 0.0);
}

TEST(HeteroAvg, RejectsMalformedUpdates) {
  using fed::Side;
  const auto prev = scalar_segments(3, 0.f);
  EXPECT_THROW(fed::heteroavg(prev, {scalar_update(0, Side::client, 1, {{2, 1.f}})}), std::invalid_argument);
  EXPECT_THROW(fed::heteroavg(prev, {scalar_update(0, Side::server, 2, {{2, 1.f}})}), std::invalid_argument);
  EXPECT_THROW(fed::heteroavg(prev, {scalar_update(0, Side::client, 3, {{1, 1.f}})}), std::invalid_argument);
  EXPECT_THROW(fed::heteroavg(prev, {scalar_update(0, Side::client, 1, {{1, 1.f}}),
                                     scalar_update(0, Side::client, 1, {{1, 2.f}})}),
               std::invalid_argument);
  auto bad = scalar_update(0, Side::client, 1, {{1, 1.f}});
  bad.shells[1].blocks->at(0) = nn::Tensor({2});
  EXPECT_THROW(fed::heteroavg(prev, {bad}), nn::ShapeError);
}

// Random fleets against a direct per-part mean, plus the min/max bound and
// order independence.
TEST(HeteroAvg, MatchesBruteForceMean) {
  auto r = make_rig();
  const auto prev = fed::to_segments(r.model, r.plan);
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    Rng rng(seed);
    std::vector<fed::ShellUpdate> ups;
    const std::size_t k = 2 + rng.below(6);
    for (std::size_t id = 0; id < k; ++id) {
      auto m = zoo::toy_model(r.spec, 2, 2, 100 * seed + id);
      const auto mode = fed::Mode::parse(rng.below(2) ? "fedsplitx" : "fedsplitx-noaux");
      const auto roles = fed::roles_for(mode, 1 + rng.below(3), 3);
      auto sm = fed::distribute(m, r.plan, roles);
      ups.push_back(fed::to_update(sm.client, r.plan, id, fed::Side::client, roles.cut));
      ups.push_back(fed::to_update(sm.server, r.plan, id, fed::Side::server, roles.cut));
    }
    const auto got = fed::heteroavg(prev, ups).global;
    for (std::size_t s = 1; s <= 4; ++s) {
      for (int part = 0; part < 2; ++part) {
        std::vector<const std::vector<nn::Tensor>*> src;
        for (const auto& u : ups) {
          auto it = u.shells.find(s);
          if (it == u.shells.end()) continue;
          const auto& p = part ? it->second.head : it->second.blocks;
          if (p) src.push_back(&*p);
        }
        const auto& out = part ? got.shell(s).head : got.shell(s).blocks;
        const auto& old = part ? prev.shell(s).head : prev.shell(s).blocks;
        for (std::size_t t = 0; t < out.size(); ++t) {
          for (std::size_t i = 0; i < out[t].size(); ++i) {
            if (src.empty()) {
              EXPECT_EQ(out[t][i], old[t][i]);
              continue;
            }
            double sum = 0.0, lo = 1e300, hi = -1e300;
            for (const auto* p : src) {
              sum += (*p)[t][i];
              lo = std::min(lo, double((*p)[t][i]));
              hi = std::max(hi, double((*p)[t][i]));
            }
            EXPECT_NEAR(out[t][i], sum / double(src.size()), 1e-6);
            EXPECT_GE(out[t][i], lo);
            EXPECT_LE(out[t][i], hi);
          }
        }
      }
    }
    auto shuffled = ups;
    rng.shuffle(std::span<fed::ShellUpdate>(shuffled));
    const auto again = fed::heteroavg(prev, shuffled).global;
    for (std::size_t s = 1; s <= 4; ++s) {
      EXPECT_EQ(max_abs_diff(again.shell(s).blocks, got.shell(s).blocks), 0.0);
      EXPECT_EQ(max_abs_diff(again.shell(s).head, got.shell(s).head), 0.0);
    }
  }
}

// ---- rounds ----

TEST(Round, ZeroRateRoundKeepsModel) {
  auto r = make_rig();
  for (const char* mode : {"fedsplitx", "depthfl", "accsfl:1", "vanilla-sfl:2", "fedsplitx-noaux"}) {
    auto cfg = config(mode);
    cfg.sgd.learning_rate = 0.0f;
    const auto out = train(r, {1, 2, 3, 3}, cfg, 2);
    EXPECT_EQ(max_abs_diff(flat(out, r.plan), flat(r.model, r.plan)), 0.0) << mode;
  }
}

// Two copies of one client average to that client alone.
TEST(Round, DuplicatedClientMatchesSingle) {
  auto r = make_rig();
  r.shards = {r.shards[0], r.shards[0]};
  auto cfg = config("fedsplitx");
  cfg.sgd.batch_size = r.shards[0].size();
  const auto one = train(r, {2}, cfg, 1);
  const auto two = train(r, {2, 2}, cfg, 1);
  EXPECT_LT(max_abs_diff(flat(one, r.plan), flat(two, r.plan)), 1e-6);
}

TEST(Round, Deterministic) {
  auto r = make_rig();
  const auto a = train(r, {1, 2, 3, 3}, config("fedsplitx", 0.5), 3);
  const auto b = train(r, {1, 2, 3, 3}, config("fedsplitx", 0.5), 3);
  EXPECT_EQ(max_abs_diff(flat(a, r.plan), flat(b, r.plan)), 0.0);
  EXPECT_GT(max_abs_diff(flat(a, r.plan), flat(r.model, r.plan)), 0.0);
}

TEST(Round, ExecutionOrderAndThreadsDoNotMatter) {
  auto r = make_rig();
  for (const char* mode : {"fedsplitx", "vanilla-sfl:1"}) {
    const auto base = train(r, {1, 2, 3, 3}, config(mode), 2);
    auto cfg = config(mode);
    cfg.execution_order_seed = 12345;
    EXPECT_EQ(max_abs_diff(flat(base, r.plan), flat(train(r, {1, 2, 3, 3}, cfg, 2), r.plan)), 0.0) << mode;
    cfg.threads = 3;
    EXPECT_EQ(max_abs_diff(flat(base, r.plan), flat(train(r, {1, 2, 3, 3}, cfg, 2), r.plan)), 0.0) << mode;
  }
}

TEST(Round, FedSplitXReturnsNoGradients) {
  auto r = make_rig();
  fed::Federation f(r.model, r.plan, r.fleet({1, 2, 3, 3}), config("fedsplitx"));
  f.run_round(1);
  f.run_round(2);
  const auto tot = f.ledger().total();
  EXPECT_EQ(tot.bytes_gradient_return, 0u);
  EXPECT_GT(tot.bytes_smashed, 0u);
  EXPECT_EQ(f.ledger().entity_total(fedsplitx::acct::Entity::fed_server()).bytes_up, 0u);
}

TEST(Round, VanillaGradientBytes) {
  auto r = make_rig();
  auto cfg = config("vanilla-sfl:2");
  cfg.sgd.local_epochs = 2;
  fed::Federation f(r.model, r.plan, r.fleet({2, 3, 2, 3}), cfg);
  f.run_round(1);
  for (std::size_t k = 0; k < 4; ++k) {
    const auto c = f.ledger().entity_total(fedsplitx::acct::Entity::client(k));
    EXPECT_EQ(c.bytes_gradient_return, 4u * 8u * r.shards[k].size() * 2u);
    EXPECT_EQ(c.bytes_smashed, c.bytes_gradient_return);
  }
}

// A level-1 client downloads exactly shell 1: blocks [0, p_1) and head 1.
TEST(Round, LevelOneDownloadIsShellOne) {
  auto r = make_rig();
  fed::Federation f(r.model, r.plan, r.fleet({1, 1, 1, 1}), config("fedsplitx"));
  f.run_round(1);
  const auto desc = zoo::toy_descriptor("toy", r.spec, 2, 2);
  const auto want = 4u * fedsplitx::acct::count_params(desc, fedsplitx::acct::Boundary::level(1));
  for (std::size_t k = 0; k < 4; ++k) {
    EXPECT_EQ(f.ledger().entity_total(fedsplitx::acct::Entity::client(k)).bytes_down, want);
  }
  EXPECT_EQ(want, 4u * fed::to_segments(r.model, r.plan).shell(1).param_count());
}

TEST(Round, ExclusiveLevelOneEqualsDepthFlOnLevelOneFleet) {
  auto r = make_rig();
  const auto a = train(r, {1, 1, 1, 1}, config("exc:1"), 2);
  const auto b = train(r, {1, 1, 1, 1}, config("depthfl"), 2);
  EXPECT_EQ(max_abs_diff(flat(a, r.plan), flat(b, r.plan)), 0.0);
}

TEST(Round, SingleCutAccSflEqualsFedSplitX) {
  auto r = make_rig({4, 8, 1});
  ASSERT_EQ(r.plan.num_levels(), 1u);
  const auto a = train(r, {1, 1, 1, 1}, config("accsfl:1"), 2);
  const auto b = train(r, {1, 1, 1, 1}, config("fedsplitx"), 2);
  EXPECT_EQ(max_abs_diff(flat(a, r.plan), flat(b, r.plan)), 0.0);
}

TEST(Round, ErrorsNameTheClient) {
  auto r = make_rig();
  r.shards[2].labels[0] = 5;
  fed::Federation f(r.model, r.plan, r.fleet({1, 2, 3, 3}), config("fedsplitx"));
  try {
    f.run_round(4);
    FAIL() << "expected RoundError";
  } catch (const fed::RoundError& e) {
    EXPECT_EQ(e.client(), 2u);
    EXPECT_EQ(e.round(), 4u);
  }
}

TEST(Round, LossSummaryByLevel) {
  auto r = make_rig();
  fed::Federation f(r.model, r.plan, r.fleet({1, 1, 3, 3}), config("fedsplitx"));
  const auto st = f.run_round(1);
  EXPECT_FALSE(std::isnan(st.client_loss_by_level[0]));
  EXPECT_TRUE(std::isnan(st.client_loss_by_level[1]));
  EXPECT_FALSE(std::isnan(st.server_loss));
}

TEST(Evaluate, DefinedLevelsFollowMode) {
  auto r = make_rig();
  auto e = fed::evaluate(r.model, r.plan, fed::Mode::parse("fedsplitx"), r.pool);
  for (double a : e.level_accuracy) EXPECT_FALSE(std::isnan(a));
  EXPECT_GE(e.spread, 0.0);
  e = fed::evaluate(r.model, r.plan, fed::Mode::parse("exc:2"), r.pool);
  EXPECT_TRUE(std::isnan(e.level_accuracy[0]));
  EXPECT_FALSE(std::isnan(e.level_accuracy[1]));
  EXPECT_EQ(e.spread, 0.0);
  EXPECT_EQ(e.full_accuracy, e.level_accuracy[1]);
  e = fed::evaluate(r.model, r.plan, fed::Mode::parse("vanilla-sfl:1"), r.pool);
  EXPECT_TRUE(std::isnan(e.spread));
  EXPECT_GE(e.full_accuracy, 0.0);
}
