#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <utility>

#include "eifnet/ops.hpp"
#include "eifnet/rng.hpp"

namespace eifnet {

/// Uniform(-a, a) with a = 1/sqrt(fan_in), drawn in row-major order.
template <typename T>
Tensor<T> uniform_init(Shape shape, std::size_t fan_in, Rng& rng) {
  Tensor<T> t(std::move(shape));
  const double a = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (auto& v : t.data()) v = static_cast<T>(rng.uniform(-a, a));
  return t;
}

/// Convolution descriptor. Parameters live in a ParamStore as
/// "<name>.weight" [out,in,k,k] and "<name>.bias" [out]. Biases start at zero.
/// Bias-free convs use a constant zero bias.
class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(std::string name, std::size_t in, std::size_t out, std::size_t kernel,
         std::size_t stride = 1, std::size_t pad = 0, bool with_bias = true)
      : name_(std::move(name)),
        in_(in),
        out_(out),
        kernel_(kernel),
        stride_(stride),
        pad_(pad),
        with_bias_(with_bias) {}

  const std::string& name() const { return name_; }
  std::string weight() const { return name_ + ".weight"; }
  std::string bias() const { return name_ + ".bias"; }
  std::size_t in_channels() const { return in_; }
  std::size_t out_channels() const { return out_; }
  bool has_bias() const { return with_bias_; }

  template <typename T>
  void init(ParamStore<T>& store, Rng& rng) const {
    store.add(weight(), uniform_init<T>({out_, in_, kernel_, kernel_}, in_ * kernel_ * kernel_, rng),
              ParamKind::weight);
    if (with_bias_) store.add(bias(), Tensor<T>({out_}), ParamKind::bias);
  }

  template <typename T>
  Var<T> operator()(Context<T>& ctx, Var<T> x) const {
    Var<T> b = with_bias_ ? ctx.param(bias()) : ctx.constant(Tensor<T>({out_}));
    return ops::conv2d(x, ctx.param(weight()), b, stride_, pad_);
  }

 private:
  std::string name_;
  std::size_t in_ = 0, out_ = 0, kernel_ = 1, stride_ = 1, pad_ = 0;
  bool with_bias_ = true;
};

/// Batch normalization with current-batch statistics ("<name>.scale", "<name>.shift").
class BatchNorm2d {
 public:
  BatchNorm2d() = default;
  BatchNorm2d(std::string name, std::size_t channels) : name_(std::move(name)), channels_(channels) {}

  std::string scale() const { return name_ + ".scale"; }
  std::string shift() const { return name_ + ".shift"; }

  template <typename T>
  void init(ParamStore<T>& store, Rng&) const {
    store.add(scale(), Tensor<T>({channels_}, T{1}), ParamKind::norm_scale);
    store.add(shift(), Tensor<T>({channels_}), ParamKind::norm_shift);
  }

  template <typename T>
  Var<T> operator()(Context<T>& ctx, Var<T> x) const {
    return ops::batchnorm2d(x, ctx.param(scale()), ctx.param(shift()));
  }

 private:
  std::string name_;
  std::size_t channels_ = 0;
};

/// Per-pixel normalization across channels.
class LayerNorm2d {
 public:
  LayerNorm2d() = default;
  LayerNorm2d(std::string name, std::size_t channels) : name_(std::move(name)), channels_(channels) {}

  std::string scale() const { return name_ + ".scale"; }
  std::string shift() const { return name_ + ".shift"; }

  template <typename T>
  void init(ParamStore<T>& store, Rng&) const {
    store.add(scale(), Tensor<T>({channels_}, T{1}), ParamKind::norm_scale);
    store.add(shift(), Tensor<T>({channels_}), ParamKind::norm_shift);
  }

  template <typename T>
  Var<T> operator()(Context<T>& ctx, Var<T> x) const {
    return ops::layernorm_channels(x, ctx.param(scale()), ctx.param(shift()));
  }

 private:
  std::string name_;
  std::size_t channels_ = 0;
};

/// conv -> batchnorm -> relu. The conv has no bias: batchnorm removes any
/// per-channel constant.
class ConvBnRelu {
 public:
  ConvBnRelu() = default;
  ConvBnRelu(const std::string& name, std::size_t in, std::size_t out, std::size_t kernel,
             std::size_t stride, std::size_t pad)
      : conv_(name + ".conv", in, out, kernel, stride, pad, false), bn_(name + ".bn", out) {}

  const Conv2d& conv() const { return conv_; }
  const BatchNorm2d& bn() const { return bn_; }

  template <typename T>
  void init(ParamStore<T>& store, Rng& rng) const {
    conv_.init(store, rng);
    bn_.init(store, rng);
  }

  template <typename T>
  Var<T> operator()(Context<T>& ctx, Var<T> x) const {
    return ops::relu(bn_(ctx, conv_(ctx, x)));
  }

 private:
  Conv2d conv_;
  BatchNorm2d bn_;
};

}  // namespace eifnet
