#pragma once

#include <array>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "fedsplitx/accounting/arch.hpp"

namespace fedsplitx::acct {

// Static ResNet descriptors at 32x32x3 input. The stem is a 3x3 stride-1
// convolution followed by BatchNorm, ReLU and a 3x3 stride-2 max-pool, so the
// first stage runs at 16x16. Bottleneck blocks stride in the 3x3 convolution.
// Cut 1 sits after the max-pool; cuts 2 and 3 sit after a given number of
// blocks inside a stage.
struct ResNetSpec {
  std::string name;
  bool bottleneck = false;
  std::array<std::size_t, 4> blocks{};
  struct Cut {
    std::size_t stage;        // 1-based stage index
    std::size_t blocks_done;  // blocks of that stage on the client side
  };
  std::array<Cut, 2> inner_cuts{};
};

namespace detail {

class ResNetBuilder {
 public:
  explicit ResNetBuilder(ArchDescriptor& d) : d_(d), cur_(d.input) {}

  void conv(std::size_t out_c, std::size_t k, std::size_t stride, const std::string& name, bool block_start = false,
            bool shortcut = false) {
    const Dims in = shortcut ? (d_.layers.back().shortcut ? d_.layers.back().out : block_in_) : cur_;
    Dims out{out_c, (in.h + stride - 1) / stride, (in.w + stride - 1) / stride};
    push({OpKind::conv2d, in, out, k, stride, false, block_start, shortcut, name}, shortcut);
  }
  void bn(const std::string& name, bool shortcut = false) {
    const Dims in = shortcut ? d_.layers.back().out : cur_;
    push({OpKind::batchnorm, in, in, 1, 1, false, false, shortcut, name}, shortcut);
  }
  void relu(const std::string& name) { push({OpKind::relu, cur_, cur_, 1, 1, false, false, false, name}, false); }
  void maxpool(std::size_t k, std::size_t stride, const std::string& name) {
    Dims out{cur_.c, (cur_.h + stride - 1) / stride, (cur_.w + stride - 1) / stride};
    push({OpKind::maxpool, cur_, out, k, stride, false, false, false, name}, false);
  }
  void add(const std::string& name) { push({OpKind::add, cur_, cur_, 1, 1, false, false, false, name}, false); }
  void avgpool(const std::string& name) {
    push({OpKind::avgpool, cur_, {cur_.c, 1, 1}, 1, 1, false, false, false, name}, false);
  }
  void dense(std::size_t out, const std::string& name) {
    push({OpKind::dense, cur_, {out, 1, 1}, 1, 1, true, false, false, name}, false);
  }

  void begin_block() { block_in_ = cur_; }
  Dims current() const { return cur_; }

 private:
  void push(LayerRecord r, bool shortcut) {
    if (!shortcut) cur_ = r.out;
    d_.layers.push_back(std::move(r));
  }

  ArchDescriptor& d_;
  Dims cur_;
  Dims block_in_;
};

}  // namespace detail

inline ArchDescriptor build_resnet(const ResNetSpec& spec, std::size_t classes = 10) {
  ArchDescriptor d;
  d.name = spec.name;
  d.input = {3, 32, 32};
  d.classes = classes;
  detail::ResNetBuilder b(d);

  b.conv(64, 3, 1, "stem.conv");
  b.bn("stem.bn");
  b.relu("stem.relu");
  b.maxpool(3, 2, "stem.maxpool");
  d.cuts.push_back({"after stem max-pool", d.layers.size()});
  d.aux_heads.push_back({b.current(), classes});

  const std::array<std::size_t, 4> widths{64, 128, 256, 512};
  const std::size_t expansion = spec.bottleneck ? 4 : 1;
  std::size_t in_c = 64;
  for (std::size_t s = 0; s < 4; ++s) {
    for (std::size_t k = 0; k < spec.blocks[s]; ++k) {
      const std::size_t stride = (s > 0 && k == 0) ? 2 : 1;
      const std::size_t c = widths[s];
      const std::string p = "stage" + std::to_string(s + 1) + ".block" + std::to_string(k + 1) + ".";
      b.begin_block();
      if (spec.bottleneck) {
        b.conv(c, 1, 1, p + "conv1", true);
        b.bn(p + "bn1");
        b.relu(p + "relu1");
        b.conv(c, 3, stride, p + "conv2");
        b.bn(p + "bn2");
        b.relu(p + "relu2");
        b.conv(c * expansion, 1, 1, p + "conv3");
        b.bn(p + "bn3");
      } else {
        b.conv(c, 3, stride, p + "conv1", true);
        b.bn(p + "bn1");
        b.relu(p + "relu1");
        b.conv(c, 3, 1, p + "conv2");
        b.bn(p + "bn2");
      }
      if (stride != 1 || in_c != c * expansion) {
        b.conv(c * expansion, 1, stride, p + "downsample.conv", false, true);
        b.bn(p + "downsample.bn", true);
      }
      b.add(p + "add");
      b.relu(p + "relu_out");
      in_c = c * expansion;

      for (const auto& cut : spec.inner_cuts) {
        if (cut.stage == s + 1 && cut.blocks_done == k + 1) {
          d.cuts.push_back({"stage " + std::to_string(s + 1) + " after block " + std::to_string(k + 1),
                            d.layers.size()});
          d.aux_heads.push_back({b.current(), classes});
        }
      }
    }
  }
  b.avgpool("avgpool");
  b.dense(classes, "fc");
  d.validate();
  check_chain(d);
  if (d.cuts.size() != 3) throw std::logic_error(spec.name + ": cut specification did not resolve to 3 cuts");
  return d;
}

inline const std::vector<ResNetSpec>& resnet_specs() {
  static const std::vector<ResNetSpec> specs{
      {"resnet18", false, {2, 2, 2, 2}, {{{1, 2}, {2, 2}}}},
      {"resnet34", false, {3, 4, 6, 3}, {{{2, 2}, {3, 2}}}},
      {"resnet50", true, {3, 4, 6, 3}, {{{2, 2}, {3, 2}}}},
      {"resnet101", true, {3, 4, 23, 3}, {{{3, 1}, {3, 11}}}},
  };
  return specs;
}

inline ArchDescriptor resnet(const std::string& name, std::size_t classes = 10) {
  for (const auto& s : resnet_specs()) {
    if (s.name == name) return build_resnet(s, classes);
  }
  throw std::invalid_argument("unknown resnet '" + name + "'");
}

}  // namespace fedsplitx::acct
