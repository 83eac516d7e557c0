#pragma once

#include <cmath>
#include <functional>
#include <string>

#include "fedshot/rng.hpp"
#include "fedshot/tensor/ops.hpp"

namespace fedshot {

template <typename T>
using ParamVisitor = std::function<void(const std::string&, Tensor<T>&, bool learnable)>;

template <typename T>
Tensor<T> he_normal(Rng& rng, Shape shape, int fan_in) {
  const double std_dev = std::sqrt(2.0 / fan_in);
  std::vector<T> v(static_cast<size_t>(numel_of(shape)));
  for (auto& x : v) x = static_cast<T>(rng.normal() * std_dev);
  return Tensor<T>::from_vector(std::move(shape), std::move(v));
}

// Channel gate: sigmoid(MLP(avgpool F) + MLP(maxpool F)), shared two-layer
// MLP squeezing C to C/ratio and back.
template <typename T>
class ChannelAttention {
 public:
  ChannelAttention() = default;

  ChannelAttention(int channels, int ratio, Rng& rng) : channels_(channels), ratio_(ratio) {
    if (ratio <= 0 || channels % ratio != 0)
      throw BadRatio("channel attention: " + std::to_string(channels) +
                     " channels not divisible by ratio " + std::to_string(ratio));
    const int hidden = channels / ratio;
    w1_ = he_normal<T>(rng, {hidden, channels}, channels).set_requires_grad(true);
    b1_ = Tensor<T>::zeros({hidden}).set_requires_grad(true);
    w2_ = he_normal<T>(rng, {channels, hidden}, hidden).set_requires_grad(true);
    b2_ = Tensor<T>::zeros({channels}).set_requires_grad(true);
  }

  Tensor<T> mask(const Tensor<T>& f) const {
    if (f.ndim() != 4 || f.dim(1) != channels_)
      throw ShapeMismatch("channel attention: input " + shape_str(f.shape()) + " for C=" +
                          std::to_string(channels_));
    auto mlp = [&](const Tensor<T>& pooled) {
      return linear(relu(linear(pooled, w1_, b1_)), w2_, b2_);
    };
    return sigmoid(add(mlp(global_avg_pool(f)), mlp(global_max_pool(f))));
  }

  Tensor<T> forward(const Tensor<T>& f) const { return scale_channels(f, mask(f)); }

  void visit_params(const std::string& prefix, const ParamVisitor<T>& v) {
    v(prefix + ".w1", w1_, true);
    v(prefix + ".b1", b1_, true);
    v(prefix + ".w2", w2_, true);
    v(prefix + ".b2", b2_, true);
  }

  int channels() const { return channels_; }
  int ratio() const { return ratio_; }

 private:
  int channels_ = 0;
  int ratio_ = 0;
  Tensor<T> w1_, b1_, w2_, b2_;
};

// Spatial gate: sigmoid(conv_kxk([channel-mean F ; channel-max F])), padding
// chosen to preserve H x W.
template <typename T>
class SpatialAttention {
 public:
  SpatialAttention() = default;

  SpatialAttention(int kernel, Rng& rng) : kernel_(kernel) {
    if (kernel < 1 || kernel % 2 == 0)
      throw ConfigError("spatial attention kernel must be odd, got " + std::to_string(kernel));
    conv_w_ = he_normal<T>(rng, {1, 2, kernel, kernel}, 2 * kernel * kernel)
                  .set_requires_grad(true);
    conv_b_ = Tensor<T>::zeros({1}).set_requires_grad(true);
  }

  Tensor<T> mask(const Tensor<T>& f) const {
    if (f.ndim() != 4) throw ShapeMismatch("spatial attention: input " + shape_str(f.shape()));
    const int h = f.dim(2), w = f.dim(3);
    if (kernel_ > 2 * std::min(h, w) + 1)
      throw KernelTooLarge("spatial attention: kernel " + std::to_string(kernel_) +
                           " on feature map " + std::to_string(h) + "x" + std::to_string(w));
    auto pooled = concat(std::vector<Tensor<T>>{channel_mean(f), channel_max(f)}, 1);
    return sigmoid(conv2d(pooled, conv_w_, conv_b_, 1, (kernel_ - 1) / 2));
  }

  Tensor<T> forward(const Tensor<T>& f) const { return scale_spatial(f, mask(f)); }

  void visit_params(const std::string& prefix, const ParamVisitor<T>& v) {
    v(prefix + ".conv.w", conv_w_, true);
    v(prefix + ".conv.b", conv_b_, true);
  }

  int kernel() const { return kernel_; }

 private:
  int kernel_ = 0;
  Tensor<T> conv_w_, conv_b_;
};

}  // namespace fedshot
