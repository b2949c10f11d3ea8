#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <string>
#include <vector>

#include "fedsplitx/nn/layers.hpp"
#include "fedsplitx/nn/tensor.hpp"

namespace fedsplitx::nn {

// Central finite differences against analytic gradients.
//
// Relative error per coordinate is |a - n| / max(|a|, |n|, floor); the floor
// keeps coordinates whose true gradient is ~0 from dividing truncation noise
// by zero.
//
// The default stencil is the fourth-order central one; the two-point stencil
// leaves an h^2 f'''/6 truncation term that is already ~1e-8 at h = 1e-3,
// which swamps coordinates whose gradient is ~1e-6.
struct GradCheckOptions {
  double step = 1e-3;
  double floor = 1e-6;
  bool fourth_order = true;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  std::string worst;

  bool passes(double tolerance) const { return checked > 0 && max_rel_error < tolerance; }
};

struct ParamRef {
  BasicTensor<double>* param = nullptr;
  const BasicTensor<double>* analytic = nullptr;
  std::string name;
};

inline double relative_error(double analytic, double numeric, double floor) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

// `loss()` must evaluate the scalar loss with the current parameter values
// and must not touch the analytic gradient tensors.
template <typename LossFn>
GradCheckResult finite_difference_check(const std::vector<ParamRef>& refs, LossFn&& loss,
                                        const GradCheckOptions& opts = {}) {
  GradCheckResult r;
  for (const auto& ref : refs) {
    auto p = ref.param->data();
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double saved = p[i];
      auto at = [&](double offset) {
        p[i] = saved + offset;
        return static_cast<double>(loss());
      };
      const double h = opts.step;
      double numeric = 0.0;
      if (opts.fourth_order) {
        numeric = (8.0 * (at(h) - at(-h)) - (at(2 * h) - at(-2 * h))) / (12.0 * h);
      } else {
        numeric = (at(h) - at(-h)) / (2.0 * h);
      }
      p[i] = saved;
      const double analytic = (*ref.analytic)[i];
      const double err = relative_error(analytic, numeric, opts.floor);
      ++r.checked;
      if (err > r.max_rel_error || std::isnan(err)) {
        r.max_rel_error = std::isnan(err) ? std::numeric_limits<double>::infinity() : err;
        r.worst = ref.name + "[" + std::to_string(i) + "] analytic=" + std::to_string(analytic) +
                  " numeric=" + std::to_string(numeric);
      }
    }
  }
  return r;
}

template <typename T>
void collect_param_refs(std::vector<BasicLayer<T>>& layers, const std::string& prefix, std::vector<ParamRef>& out)
  requires std::is_same_v<T, double>
{
  for (std::size_t l = 0; l < layers.size(); ++l) {
    auto ps = layers[l].params();
    auto gs = layers[l].grads();
    for (std::size_t k = 0; k < ps.size(); ++k) {
      out.push_back({&ps[k], &gs[k], prefix + "." + std::to_string(l) + "." + std::string(to_string(layers[l].kind())) +
                                         ".p" + std::to_string(k)});
    }
  }
}

// Smallest |pre-activation| over every ReLU decision in the stack for this
// input. A finite-difference step that is small next to this margin cannot
// flip a ReLU, so the loss is smooth over the probed interval.
template <typename T>
double relu_margin(const std::vector<BasicLayer<T>>& layers, const BasicTensor<T>& input) {
  double margin = std::numeric_limits<double>::infinity();
  BasicTensor<T> x = input;
  for (const auto& l : layers) {
    if (l.kind() == LayerKind::relu) {
      for (T v : x.data()) margin = std::min(margin, std::abs(static_cast<double>(v)));
    } else if (const auto* rb = l.template as<ResidualBlock<T>>()) {
      BasicTensor<T> z(x.shape());
      detail::affine(x, rb->params[0], rb->params[1], z);
      for (T v : z.data()) margin = std::min(margin, std::abs(static_cast<double>(v)));
    }
    x = l.forward(x);
  }
  return margin;
}

}  // namespace fedsplitx::nn
