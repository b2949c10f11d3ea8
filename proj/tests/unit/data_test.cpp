#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <array>
#include <map>
#include <set>
#include <tuple>
#include <numeric>

#include "fedsplitx/data/cifar.hpp"
#include "fedsplitx/data/synthetic.hpp"
#include "fedsplitx/nn/network.hpp"

namespace data = fedsplitx::data;
namespace nn = fedsplitx::nn;
using fedsplitx::Rng;

namespace {

std::filesystem::path temp_file(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("fedsplitx_data_test_" + name);
}

void write_bytes(const std::filesystem::path& p, const std::vector<unsigned char>& bytes) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

// Full-batch-ish SGD on a plain layer stack, returns train accuracy.
double train_accuracy(std::vector<nn::BasicLayer<float>> layers, const data::Dataset& d, std::size_t epochs,
                      float lr) {
  Rng rng(11);
  nn::initialize(std::span<nn::BasicLayer<float>>(layers), rng);
  std::vector<std::size_t> order(d.size());
  std::iota(order.begin(), order.end(), 0);
  nn::SgdConfig cfg;
  cfg.learning_rate = lr;
  for (std::size_t e = 0; e < epochs; ++e) {
    rng.shuffle(std::span<std::size_t>(order));
    for (std::size_t s = 0; s < order.size(); s += 32) {
      std::span<const std::size_t> rows(order.data() + s, std::min<std::size_t>(32, order.size() - s));
      auto batch = d.subset(rows);
      auto acts = nn::forward(layers, batch.features);
      auto ce = nn::softmax_cross_entropy(acts.back(), batch.labels);
      nn::backward(layers, acts, ce.logit_grad);
      nn::sgd_step(layers, cfg);
    }
  }
  const auto out = nn::forward(layers, d.features).back();
  std::size_t hit = 0;
  for (std::size_t i = 0; i < d.size(); ++i) {
    auto r = out.row(i);
    hit += static_cast<std::size_t>(std::max_element(r.begin(), r.end()) - r.begin()) == d.labels[i];
  }
  return static_cast<double>(hit) / static_cast<double>(d.size());
}

}  // namespace

TEST(Synthetic, NoiselessBlobsAreSeparableByCentroid) {
  data::SyntheticSpec s;
  s.kind = data::SyntheticKind::blobs;
  s.n = 300;
  s.classes = 4;
  s.noise = 0.0;
  const auto d = data::make_synthetic(s);
  ASSERT_NO_THROW(d.validate());
  std::vector<std::array<double, 3>> acc(4, {0, 0, 0});
  for (std::size_t i = 0; i < d.size(); ++i) {
    acc[d.labels[i]][0] += d.features.row(i)[0];
    acc[d.labels[i]][1] += d.features.row(i)[1];
    acc[d.labels[i]][2] += 1;
  }
  std::size_t hit = 0;
  for (std::size_t i = 0; i < d.size(); ++i) {
    std::size_t best = 0;
    double bd = 1e300;
    for (std::size_t c = 0; c < 4; ++c) {
      const double dx = d.features.row(i)[0] - acc[c][0] / acc[c][2];
      const double dy = d.features.row(i)[1] - acc[c][1] / acc[c][2];
      if (dx * dx + dy * dy < bd) bd = dx * dx + dy * dy, best = c;
    }
    hit += best == d.labels[i];
  }
  EXPECT_EQ(hit, d.size());
}

TEST(Synthetic, SameSeedSameBytes) {
  for (auto kind : {data::SyntheticKind::blobs, data::SyntheticKind::spirals}) {
    data::SyntheticSpec s;
    s.kind = kind;
    s.seed = 42;
    const auto a = data::make_synthetic(s);
    const auto b = data::make_synthetic(s);
    EXPECT_EQ(a.features, b.features);
    EXPECT_EQ(a.labels, b.labels);
    s.seed = 43;
    EXPECT_FALSE(data::make_synthetic(s).features == a.features);
  }
}

TEST(Synthetic, ClassesBalanced) {
  data::SyntheticSpec s;
  s.n = 1001;
  s.classes = 3;
  const auto h = data::make_synthetic(s).class_histogram();
  EXPECT_EQ(h, (std::vector<std::size_t>{334, 334, 333}));
}

// Centralised training oracle: the default spirals defeat a linear model
// but a small MLP fits them.
TEST(Synthetic, SpiralsNeedDepth) {
  const auto d = data::make_synthetic({});
  const double linear = train_accuracy({nn::BasicLayer<float>::dense(2, 2)}, d, 30, 0.1f);
  EXPECT_LT(linear, 0.70);
  const double mlp = train_accuracy({nn::BasicLayer<float>::dense(2, 32), nn::BasicLayer<float>::relu(),
                                     nn::BasicLayer<float>::residual(32), nn::BasicLayer<float>::dense(32, 2)},
                                    d, 150, 0.1f);
  EXPECT_GT(mlp, 0.90);
}

TEST(Synthetic, InvalidParametersThrow) {
  data::SyntheticSpec s;
  s.classes = 1;
  EXPECT_THROW(data::make_synthetic(s), std::invalid_argument);
  s = {};
  s.n = 1;
  EXPECT_THROW(data::make_synthetic(s), std::invalid_argument);
  s = {};
  s.noise = -0.1;
  EXPECT_THROW(data::make_synthetic(s), std::invalid_argument);
  s = {};
  s.turns = 0.0;
  EXPECT_THROW(data::make_synthetic(s), std::invalid_argument);
  EXPECT_THROW(data::parse_synthetic_kind("moons"), std::invalid_argument);
}

TEST(Cifar, SingleRecordFile) {
  const auto p = temp_file("one.bin");
  write_bytes(p, std::vector<unsigned char>(data::cifar_record, 0));
  const auto d = data::load_cifar_binary(p);
  EXPECT_EQ(d.size(), 1u);
  EXPECT_EQ(d.dim(), 3072u);
  EXPECT_EQ(d.labels[0], 0u);
  for (float v : d.features.data()) EXPECT_EQ(v, 0.0f);
  std::filesystem::remove(p);
}

TEST(Cifar, RoundTrip) {
  std::vector<data::CifarRecord> recs(2);
  recs[0].label = 7;
  recs[1].label = 2;
  for (std::size_t r = 0; r < 2; ++r) {
    recs[r].pixels.resize(data::cifar_pixels);
    for (std::size_t i = 0; i < data::cifar_pixels; ++i) recs[r].pixels[i] = static_cast<std::uint8_t>((i * 7 + r) % 256);
  }
  const auto p = temp_file("two.bin");
  data::write_cifar_binary(p, recs);
  EXPECT_EQ(std::filesystem::file_size(p), 2 * data::cifar_record);
  const auto d = data::load_cifar_binary(p);
  ASSERT_EQ(d.size(), 2u);
  EXPECT_EQ(d.labels, (std::vector<std::size_t>{7, 2}));
  for (std::size_t r = 0; r < 2; ++r) {
    for (std::size_t i = 0; i < data::cifar_pixels; i += 97) {
      EXPECT_FLOAT_EQ(d.features.row(r)[i], static_cast<float>(recs[r].pixels[i]) / 255.0f);
    }
  }
  EXPECT_EQ(data::load_cifar_binary(p, 1).size(), 1u);
  std::filesystem::remove(p);
}

TEST(Cifar, TruncatedFileReportsOffset) {
  std::vector<unsigned char> bytes(data::cifar_record + 100, 1);
  try {
    data::parse_cifar_binary(bytes, "short.bin");
    FAIL() << "expected CifarFormatError";
  } catch (const data::CifarFormatError& e) {
    EXPECT_EQ(e.offset(), data::cifar_record);
    EXPECT_NE(std::string(e.what()).find("short.bin"), std::string::npos);
  }
}

TEST(Cifar, BadLabelReportsRecordOffset) {
  std::vector<unsigned char> bytes(2 * data::cifar_record, 0);
  bytes[data::cifar_record] = 10;
  try {
    data::parse_cifar_binary(bytes, "bad.bin");
    FAIL() << "expected CifarFormatError";
  } catch (const data::CifarFormatError& e) {
    EXPECT_EQ(e.offset(), data::cifar_record);
  }
  EXPECT_THROW(data::load_cifar_binary(temp_file("missing.bin")), std::runtime_error);
}

TEST(Partition, SingleShardIsEverything) {
  const auto d = data::make_synthetic({});
  const auto shards = data::iid_partition(d, 1, 3);
  ASSERT_EQ(shards.size(), 1u);
  EXPECT_EQ(shards[0].size(), d.size());
  EXPECT_EQ(shards[0].class_histogram(), d.class_histogram());
}

TEST(Partition, UnionIsTheDataset) {
  data::SyntheticSpec s;
  s.n = 503;
  s.classes = 3;
  const auto d = data::make_synthetic(s);
  const auto shards = data::iid_partition(d, 7, 1);
  std::multiset<std::tuple<float, float, std::size_t>> want, got;
  for (std::size_t i = 0; i < d.size(); ++i) want.insert({d.features.row(i)[0], d.features.row(i)[1], d.labels[i]});
  std::size_t lo = d.size(), hi = 0;
  for (const auto& sh : shards) {
    lo = std::min(lo, sh.size());
    hi = std::max(hi, sh.size());
    for (std::size_t i = 0; i < sh.size(); ++i) got.insert({sh.features.row(i)[0], sh.features.row(i)[1], sh.labels[i]});
  }
  EXPECT_EQ(got, want);
  EXPECT_LE(hi - lo, 1u);
}

TEST(Partition, ClassCountsWithinOne) {
  data::SyntheticSpec s;
  s.n = 100;
  const auto shards = data::iid_partition(data::make_synthetic(s), 10, 5);
  for (const auto& sh : shards) {
    const auto h = sh.class_histogram();
    for (std::size_t c : h) EXPECT_NEAR(static_cast<double>(c), 5.0, 1.0);
  }
}

TEST(Partition, InvalidShardCounts) {
  data::SyntheticSpec s;
  s.n = 10;
  const auto d = data::make_synthetic(s);
  EXPECT_THROW(data::iid_partition(d, 11, 0), std::invalid_argument);
  EXPECT_THROW(data::iid_partition(d, 0, 0), std::invalid_argument);
  EXPECT_EQ(data::iid_partition(d, 10, 0).size(), 10u);
}

TEST(Split, TrainAndTestAreDisjoint) {
  data::SyntheticSpec s;
  s.n = 400;
  s.noise = 0.2;
  const auto d = data::make_synthetic(s);
  const auto tt = data::train_test_split(d, 0.25, 9);
  EXPECT_EQ(tt.train.size() + tt.test.size(), d.size());
  EXPECT_EQ(tt.test.size(), 100u);
  std::set<std::pair<float, float>> train;
  for (std::size_t i = 0; i < tt.train.size(); ++i) train.insert({tt.train.features.row(i)[0], tt.train.features.row(i)[1]});
  for (std::size_t i = 0; i < tt.test.size(); ++i) {
    EXPECT_EQ(train.count({tt.test.features.row(i)[0], tt.test.features.row(i)[1]}), 0u);
  }
  EXPECT_THROW(data::train_test_split(d, 0.0, 0), std::invalid_argument);
  EXPECT_THROW(data::train_test_split(d, 1.0, 0), std::invalid_argument);
}
