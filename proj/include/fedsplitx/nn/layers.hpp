#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <type_traits>
#include <variant>
#include <vector>

#include "fedsplitx/nn/tensor.hpp"
#include "fedsplitx/rng.hpp"

namespace fedsplitx::nn {

enum class LayerKind { dense, relu, residual_block, mean_pool };

constexpr std::string_view to_string(LayerKind k) {
  switch (k) {
    case LayerKind::dense: return "dense";
    case LayerKind::relu: return "relu";
    case LayerKind::residual_block: return "residual-block";
    case LayerKind::mean_pool: return "mean-pool";
  }
  return "?";
}

namespace detail {

// out[b, o] = bias[o] + sum_i w[o, i] * in[b, i], summed in index order.
template <typename T>
void affine(const BasicTensor<T>& in, const BasicTensor<T>& w, const BasicTensor<T>& bias, BasicTensor<T>& out) {
  const std::size_t batch = in.dim(0);
  const std::size_t n_in = w.dim(1);
  const std::size_t n_out = w.dim(0);
  for (std::size_t b = 0; b < batch; ++b) {
    auto x = in.row(b);
    auto y = out.row(b);
    for (std::size_t o = 0; o < n_out; ++o) {
      T acc = bias[o];
      const T* wr = w.data().data() + o * n_in;
      for (std::size_t i = 0; i < n_in; ++i) acc += wr[i] * x[i];
      y[o] = acc;
    }
  }
}

// dW += g^T x, db += column sums of g; returns g W.
template <typename T>
BasicTensor<T> affine_backward(const BasicTensor<T>& in, const BasicTensor<T>& w, const BasicTensor<T>& grad_out,
                               BasicTensor<T>& dw, BasicTensor<T>& db) {
  const std::size_t batch = in.dim(0);
  const std::size_t n_in = w.dim(1);
  const std::size_t n_out = w.dim(0);
  BasicTensor<T> grad_in({batch, n_in});
  for (std::size_t b = 0; b < batch; ++b) {
    auto x = in.row(b);
    auto g = grad_out.row(b);
    auto gx = grad_in.row(b);
    for (std::size_t o = 0; o < n_out; ++o) {
      const T go = g[o];
      db[o] += go;
      T* dwr = dw.data().data() + o * n_in;
      const T* wr = w.data().data() + o * n_in;
      for (std::size_t i = 0; i < n_in; ++i) {
        dwr[i] += go * x[i];
        gx[i] += go * wr[i];
      }
    }
  }
  return grad_in;
}

template <typename T>
void init_uniform(BasicTensor<T>& t, std::size_t fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (auto& v : t.data()) v = static_cast<T>(rng.uniform(-bound, bound));
}

template <typename T>
std::vector<BasicTensor<T>> zeros_like(const std::vector<BasicTensor<T>>& ts) {
  std::vector<BasicTensor<T>> out;
  out.reserve(ts.size());
  for (const auto& t : ts) out.emplace_back(t.shape());
  return out;
}

}  // namespace detail

template <typename T>
struct Dense {
  static constexpr LayerKind kind = LayerKind::dense;

  Dense(std::size_t in, std::size_t out)
      : params{BasicTensor<T>({out, in}), BasicTensor<T>({out})}, grads(detail::zeros_like(params)) {}

  std::size_t in_features() const { return params[0].dim(1); }
  std::size_t out_features() const { return params[0].dim(0); }

  Shape output_shape(const Shape& in) const {
    if (in.size() != 2 || in[1] != in_features()) {
      throw ShapeError(ShapeError::npos, {in.empty() ? 0 : in[0], in_features()}, in, "dense input");
    }
    return {in[0], out_features()};
  }

  void initialize(Rng& rng) {
    detail::init_uniform(params[0], in_features(), rng);
    detail::init_uniform(params[1], in_features(), rng);
  }

  BasicTensor<T> forward(const BasicTensor<T>& in) const {
    BasicTensor<T> out(output_shape(in.shape()));
    detail::affine(in, params[0], params[1], out);
    return out;
  }

  BasicTensor<T> backward(const BasicTensor<T>& in, const BasicTensor<T>&, const BasicTensor<T>& grad_out) {
    return detail::affine_backward(in, params[0], grad_out, grads[0], grads[1]);
  }

  std::vector<BasicTensor<T>> params;  // weight [out, in], bias [out]
  std::vector<BasicTensor<T>> grads;
};

template <typename T>
struct Relu {
  static constexpr LayerKind kind = LayerKind::relu;

  Shape output_shape(const Shape& in) const { return in; }
  void initialize(Rng&) {}

  BasicTensor<T> forward(const BasicTensor<T>& in) const {
    BasicTensor<T> out(in.shape());
    for (std::size_t i = 0; i < in.size(); ++i) out[i] = in[i] > T{0} ? in[i] : T{0};
    return out;
  }

  BasicTensor<T> backward(const BasicTensor<T>& in, const BasicTensor<T>&, const BasicTensor<T>& grad_out) {
    BasicTensor<T> g(in.shape());
    for (std::size_t i = 0; i < in.size(); ++i) g[i] = in[i] > T{0} ? grad_out[i] : T{0};
    return g;
  }

  std::vector<BasicTensor<T>> params;
  std::vector<BasicTensor<T>> grads;
};

// y = x + relu(W x + b). Width-preserving, so the identity skip is defined.
template <typename T>
struct ResidualBlock {
  static constexpr LayerKind kind = LayerKind::residual_block;

  explicit ResidualBlock(std::size_t width)
      : params{BasicTensor<T>({width, width}), BasicTensor<T>({width})}, grads(detail::zeros_like(params)) {}

  std::size_t width() const { return params[1].size(); }

  Shape output_shape(const Shape& in) const {
    if (in.size() != 2 || in[1] != width()) {
      throw ShapeError(ShapeError::npos, {in.empty() ? 0 : in[0], width()}, in, "residual-block input");
    }
    return in;
  }

  void initialize(Rng& rng) {
    detail::init_uniform(params[0], width(), rng);
    detail::init_uniform(params[1], width(), rng);
  }

  BasicTensor<T> forward(const BasicTensor<T>& in) const {
    BasicTensor<T> z(output_shape(in.shape()));
    detail::affine(in, params[0], params[1], z);
    for (std::size_t i = 0; i < z.size(); ++i) z[i] = in[i] + (z[i] > T{0} ? z[i] : T{0});
    return z;
  }

  BasicTensor<T> backward(const BasicTensor<T>& in, const BasicTensor<T>&, const BasicTensor<T>& grad_out) {
    // The pre-activation is recomputed: out - in can round to zero when the
    // branch output is small next to the skip value.
    BasicTensor<T> z(in.shape());
    detail::affine(in, params[0], params[1], z);
    BasicTensor<T> gz(in.shape());
    for (std::size_t i = 0; i < z.size(); ++i) gz[i] = z[i] > T{0} ? grad_out[i] : T{0};
    BasicTensor<T> grad_in = detail::affine_backward(in, params[0], gz, grads[0], grads[1]);
    add_into(grad_in, grad_out);
    return grad_in;
  }

  std::vector<BasicTensor<T>> params;
  std::vector<BasicTensor<T>> grads;
};

// [batch, positions, channels] -> [batch, channels].
template <typename T>
struct MeanPool {
  static constexpr LayerKind kind = LayerKind::mean_pool;

  Shape output_shape(const Shape& in) const {
    if (in.size() != 3 || in[1] == 0) {
      throw ShapeError(ShapeError::npos, {in.empty() ? 0 : in[0], 1, 0}, in,
                       "mean-pool expects [batch, positions, channels]");
    }
    return {in[0], in[2]};
  }
  void initialize(Rng&) {}

  BasicTensor<T> forward(const BasicTensor<T>& in) const {
    BasicTensor<T> out(output_shape(in.shape()));
    const std::size_t n = in.dim(0), s = in.dim(1), c = in.dim(2);
    const T inv = T{1} / static_cast<T>(s);
    for (std::size_t b = 0; b < n; ++b) {
      for (std::size_t ch = 0; ch < c; ++ch) {
        T acc{0};
        for (std::size_t p = 0; p < s; ++p) acc += in[(b * s + p) * c + ch];
        out[b * c + ch] = acc * inv;
      }
    }
    return out;
  }

  BasicTensor<T> backward(const BasicTensor<T>& in, const BasicTensor<T>&, const BasicTensor<T>& grad_out) {
    BasicTensor<T> g(in.shape());
    const std::size_t n = in.dim(0), s = in.dim(1), c = in.dim(2);
    const T inv = T{1} / static_cast<T>(s);
    for (std::size_t b = 0; b < n; ++b) {
      for (std::size_t p = 0; p < s; ++p) {
        for (std::size_t ch = 0; ch < c; ++ch) g[(b * s + p) * c + ch] = grad_out[b * c + ch] * inv;
      }
    }
    return g;
  }

  std::vector<BasicTensor<T>> params;
  std::vector<BasicTensor<T>> grads;
};

template <typename T>
class BasicLayer {
 public:
  using Impl = std::variant<Dense<T>, Relu<T>, ResidualBlock<T>, MeanPool<T>>;

  template <typename L>
    requires std::is_constructible_v<Impl, L&&>
  BasicLayer(L&& impl) : impl_(std::forward<L>(impl)) {}  // NOLINT(google-explicit-constructor)

  static BasicLayer dense(std::size_t in, std::size_t out) { return BasicLayer(Dense<T>(in, out)); }
  static BasicLayer relu() { return BasicLayer(Relu<T>{}); }
  static BasicLayer residual(std::size_t width) { return BasicLayer(ResidualBlock<T>(width)); }
  static BasicLayer mean_pool() { return BasicLayer(MeanPool<T>{}); }

  LayerKind kind() const {
    return std::visit([](const auto& l) { return std::decay_t<decltype(l)>::kind; }, impl_);
  }

  Shape output_shape(const Shape& in) const {
    return std::visit([&](const auto& l) { return l.output_shape(in); }, impl_);
  }

  void initialize(Rng& rng) {
    std::visit([&](auto& l) { l.initialize(rng); }, impl_);
  }

  BasicTensor<T> forward(const BasicTensor<T>& in) const {
    return std::visit([&](const auto& l) { return l.forward(in); }, impl_);
  }

  BasicTensor<T> backward(const BasicTensor<T>& in, const BasicTensor<T>& out, const BasicTensor<T>& grad_out) {
    return std::visit([&](auto& l) { return l.backward(in, out, grad_out); }, impl_);
  }

  std::span<BasicTensor<T>> params() {
    return std::visit([](auto& l) { return std::span<BasicTensor<T>>(l.params); }, impl_);
  }
  std::span<const BasicTensor<T>> params() const {
    return std::visit([](const auto& l) { return std::span<const BasicTensor<T>>(l.params); }, impl_);
  }
  std::span<BasicTensor<T>> grads() {
    return std::visit([](auto& l) { return std::span<BasicTensor<T>>(l.grads); }, impl_);
  }
  std::span<const BasicTensor<T>> grads() const {
    return std::visit([](const auto& l) { return std::span<const BasicTensor<T>>(l.grads); }, impl_);
  }

  std::size_t param_count() const {
    std::size_t n = 0;
    for (const auto& p : params()) n += p.size();
    return n;
  }

  template <typename L>
  L* as() { return std::get_if<L>(&impl_); }
  template <typename L>
  const L* as() const { return std::get_if<L>(&impl_); }

  // Same layer with parameters (and gradients) converted to scalar U.
  template <typename U>
  BasicLayer<U> cast() const {
    return std::visit(
        [](const auto& l) -> BasicLayer<U> {
          using Src = std::decay_t<decltype(l)>;
          auto convert = [](const auto& src, auto& dst) {
            for (std::size_t k = 0; k < src.params.size(); ++k) {
              dst.params[k] = tensor_cast<U>(src.params[k]);
              dst.grads[k] = tensor_cast<U>(src.grads[k]);
            }
          };
          if constexpr (Src::kind == LayerKind::dense) {
            Dense<U> d(l.in_features(), l.out_features());
            convert(l, d);
            return d;
          } else if constexpr (Src::kind == LayerKind::residual_block) {
            ResidualBlock<U> r(l.width());
            convert(l, r);
            return r;
          } else if constexpr (Src::kind == LayerKind::relu) {
            return Relu<U>{};
          } else {
            return MeanPool<U>{};
          }
        },
        impl_);
  }

 private:
  Impl impl_;
};

using Layer = BasicLayer<float>;

}  // namespace fedsplitx::nn
