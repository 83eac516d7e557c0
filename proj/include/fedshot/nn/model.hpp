#pragma once

#include <algorithm>
#include <memory>
#include <string>
#include <vector>

#include "fedshot/dsp/mfcc.hpp"
#include "fedshot/fed/params.hpp"
#include "fedshot/nn/attention.hpp"
#include "fedshot/tensor/ops.hpp"

namespace fedshot {

enum class Architecture { ResNet18Attention, ProtoConvSmall };

inline const char* architecture_name(Architecture a) {
  return a == Architecture::ResNet18Attention ? "resnet18_attention" : "proto_conv_small";
}

struct ModelConfig {
  Architecture arch = Architecture::ProtoConvSmall;
  int embed_dim = 64;
  int base_channels = 0;  // 0 = architecture default (8 small / 64 resnet)
  bool attention = true;  // ablation switch: false bypasses both gates
  int in_coeffs = 40;     // input height
  int in_frames = 14;     // input width

  int effective_base() const {
    if (base_channels > 0) return base_channels;
    return arch == Architecture::ResNet18Attention ? 64 : 8;
  }
};

namespace detail {

template <typename T>
struct ConvBn {
  Tensor<T> w, b, gamma, beta, rmean, rvar;

  ConvBn() = default;
  ConvBn(int in_ch, int out_ch, int k, Rng& rng) {
    w = he_normal<T>(rng, {out_ch, in_ch, k, k}, in_ch * k * k).set_requires_grad(true);
    b = Tensor<T>::zeros({out_ch}).set_requires_grad(true);
    gamma = Tensor<T>::full({out_ch}, T(1)).set_requires_grad(true);
    beta = Tensor<T>::zeros({out_ch}).set_requires_grad(true);
    rmean = Tensor<T>::zeros({out_ch});
    rvar = Tensor<T>::full({out_ch}, T(1));
  }

  Tensor<T> forward(const Tensor<T>& x, int stride, int padding, bool training) {
    return batch_norm2d(conv2d(x, w, b, stride, padding), gamma, beta, rmean, rvar, training);
  }

  void visit(const std::string& p, const ParamVisitor<T>& v) {
    v(p + ".conv.w", w, true);
    v(p + ".conv.b", b, true);
    v(p + ".bn.gamma", gamma, true);
    v(p + ".bn.beta", beta, true);
    v(p + ".bn.rmean", rmean, false);
    v(p + ".bn.rvar", rvar, false);
  }
};

inline int legal_spatial_kernel(int preferred, int h, int w) {
  int bound = 2 * std::min(h, w) + 1;
  if (bound % 2 == 0) --bound;
  return std::min(preferred, bound);
}

}  // namespace detail

template <typename T>
class EmbeddingNet {
 public:
  virtual ~EmbeddingNet() = default;
  virtual Tensor<T> forward(const Tensor<T>& x, bool training) = 0;
  virtual void visit_params(const ParamVisitor<T>& v) = 0;
};

// Four conv-BN-ReLU-attention-pool blocks, then global average pooling and a
// linear head. Pooling stops shrinking a dimension once it reaches one, so
// the default 40x14 input survives all four blocks.
template <typename T>
class ProtoConvSmallNet : public EmbeddingNet<T> {
 public:
  ProtoConvSmallNet(const ModelConfig& cfg, Rng& rng) : attention_(cfg.attention) {
    const int c = cfg.effective_base();
    const int chans[5] = {1, c, 2 * c, 4 * c, 4 * c};
    for (int i = 0; i < 4; ++i) {
      blocks_[i].conv = detail::ConvBn<T>(chans[i], chans[i + 1], 3, rng);
      if (attention_) {
        blocks_[i].ca = ChannelAttention<T>(chans[i + 1], 2, rng);
        blocks_[i].sa = SpatialAttention<T>(3, rng);
      }
    }
    head_w_ = he_normal<T>(rng, {cfg.embed_dim, 4 * c}, 4 * c).set_requires_grad(true);
    head_b_ = Tensor<T>::zeros({cfg.embed_dim}).set_requires_grad(true);
  }

  Tensor<T> forward(const Tensor<T>& x, bool training) override {
    Tensor<T> h = x;
    for (auto& blk : blocks_) {
      h = relu(blk.conv.forward(h, 1, 1, training));
      if (attention_) {
        h = blk.ca.forward(h);
        h = blk.sa.forward(h);
      }
      const int kh = std::min(2, h.dim(2));
      const int kw = std::min(2, h.dim(3));
      h = max_pool2d_full(h, kh, kw, kh, kw, 0, 0);
    }
    return linear(global_avg_pool(h), head_w_, head_b_);
  }

  void visit_params(const ParamVisitor<T>& v) override {
    for (int i = 0; i < 4; ++i) {
      const std::string p = "block" + std::to_string(i + 1);
      blocks_[i].conv.visit(p, v);
      if (attention_) {
        blocks_[i].ca.visit_params(p + ".ca", v);
        blocks_[i].sa.visit_params(p + ".sa", v);
      }
    }
    v("head.w", head_w_, true);
    v("head.b", head_b_, true);
  }

 private:
  struct Block {
    detail::ConvBn<T> conv;
    ChannelAttention<T> ca;
    SpatialAttention<T> sa;
  };
  Block blocks_[4];
  Tensor<T> head_w_, head_b_;
  bool attention_;
};

// ResNet-18 with channel and spatial gates applied to each residual branch
// before the skip addition. Spatial kernels clamp to the legal bound for the
// feature-map sizes implied by the configured input.
template <typename T>
class ResNet18AttentionNet : public EmbeddingNet<T> {
 public:
  ResNet18AttentionNet(const ModelConfig& cfg, Rng& rng) : attention_(cfg.attention) {
    const int base = cfg.effective_base();
    if (base % kCaRatio != 0)
      throw BadRatio("resnet base width " + std::to_string(base) +
                     " not divisible by channel-attention ratio " + std::to_string(kCaRatio));

    int h = cfg.in_coeffs, w = cfg.in_frames;
    stem_ = detail::ConvBn<T>(1, base, 7, rng);
    h = (h + 2 * 3 - 7) / 2 + 1;
    w = (w + 2 * 3 - 7) / 2 + 1;
    h = (h + 2 - 3) / 2 + 1;
    w = (w + 2 - 3) / 2 + 1;

    int in_ch = base;
    for (int s = 0; s < 4; ++s) {
      const int out_ch = base << s;
      const int stride = s == 0 ? 1 : 2;
      h = (h + 2 - 3) / stride + 1;
      w = (w + 2 - 3) / stride + 1;
      const int sa_k = detail::legal_spatial_kernel(kSaKernel, h, w);
      stages_[s][0] = BasicBlock(in_ch, out_ch, stride, sa_k, attention_, rng);
      stages_[s][1] = BasicBlock(out_ch, out_ch, 1, sa_k, attention_, rng);
      in_ch = out_ch;
    }
    head_w_ = he_normal<T>(rng, {cfg.embed_dim, in_ch}, in_ch).set_requires_grad(true);
    head_b_ = Tensor<T>::zeros({cfg.embed_dim}).set_requires_grad(true);
  }

  Tensor<T> forward(const Tensor<T>& x, bool training) override {
    Tensor<T> h = relu(stem_.forward(x, 2, 3, training));
    h = max_pool2d_full(h, 3, 3, 2, 2, 1, 1);
    for (auto& stage : stages_)
      for (auto& blk : stage) h = blk.forward(h, training);
    return linear(global_avg_pool(h), head_w_, head_b_);
  }

  void visit_params(const ParamVisitor<T>& v) override {
    stem_.visit("stem", v);
    for (int s = 0; s < 4; ++s)
      for (int b = 0; b < 2; ++b)
        stages_[s][b].visit("stage" + std::to_string(s + 1) + ".block" + std::to_string(b + 1),
                            v);
    v("head.w", head_w_, true);
    v("head.b", head_b_, true);
  }

 private:
  static constexpr int kCaRatio = 16;
  static constexpr int kSaKernel = 7;

  struct BasicBlock {
    detail::ConvBn<T> conv1, conv2, down;
    ChannelAttention<T> ca;
    SpatialAttention<T> sa;
    int stride = 1;
    bool has_down = false;
    bool attention = true;

    BasicBlock() = default;
    BasicBlock(int in_ch, int out_ch, int s, int sa_k, bool attn, Rng& rng)
        : stride(s), has_down(s != 1 || in_ch != out_ch), attention(attn) {
      conv1 = detail::ConvBn<T>(in_ch, out_ch, 3, rng);
      conv2 = detail::ConvBn<T>(out_ch, out_ch, 3, rng);
      if (attention) {
        ca = ChannelAttention<T>(out_ch, kCaRatio, rng);
        sa = SpatialAttention<T>(sa_k, rng);
      }
      if (has_down) down = detail::ConvBn<T>(in_ch, out_ch, 1, rng);
    }

    Tensor<T> forward(const Tensor<T>& x, bool training) {
      Tensor<T> h = relu(conv1.forward(x, stride, 1, training));
      h = conv2.forward(h, 1, 1, training);
      if (attention) {
        h = ca.forward(h);
        h = sa.forward(h);
      }
      Tensor<T> skip = has_down ? down.forward(x, stride, 0, training) : x;
      return relu(add(h, skip));
    }

    void visit(const std::string& p, const ParamVisitor<T>& v) {
      conv1.visit(p + ".conv1", v);
      conv2.visit(p + ".conv2", v);
      if (attention) {
        ca.visit_params(p + ".ca", v);
        sa.visit_params(p + ".sa", v);
      }
      if (has_down) down.visit(p + ".down", v);
    }
  };

  detail::ConvBn<T> stem_;
  BasicBlock stages_[4][2];
  Tensor<T> head_w_, head_b_;
  bool attention_;
};

template <typename T>
class EmbeddingModel {
 public:
  EmbeddingModel(ModelConfig cfg, uint64_t init_seed) : cfg_(cfg) {
    Rng rng(init_seed);
    if (cfg.arch == Architecture::ProtoConvSmall)
      net_ = std::make_unique<ProtoConvSmallNet<T>>(cfg, rng);
    else
      net_ = std::make_unique<ResNet18AttentionNet<T>>(cfg, rng);
  }

  const ModelConfig& config() const { return cfg_; }
  int embed_dim() const { return cfg_.embed_dim; }

  // (B, 1, coeffs, frames) -> (B, embed_dim)
  Tensor<T> forward(const Tensor<T>& x, bool training) {
    if (x.ndim() != 4 || x.dim(1) != 1)
      throw ShapeMismatch("embedding input must be (B,1,H,W), got " + shape_str(x.shape()));
    return net_->forward(x, training);
  }

  void visit_params(const ParamVisitor<T>& v) { net_->visit_params(v); }

  std::vector<Tensor<T>> trainable_params() {
    std::vector<Tensor<T>> out;
    net_->visit_params([&](const std::string&, Tensor<T>& t, bool learnable) {
      if (learnable) out.push_back(t);
    });
    return out;
  }

  ParameterSet parameter_set() {
    ParameterSet ps;
    net_->visit_params([&](const std::string& name, Tensor<T>& t, bool) {
      ParamEntry e;
      e.name = name;
      e.shape = t.shape();
      e.values.reserve(static_cast<size_t>(t.numel()));
      for (T v : t.data()) e.values.push_back(static_cast<float>(v));
      ps.entries.push_back(std::move(e));
    });
    return ps;
  }

  void load_parameter_set(const ParameterSet& ps) {
    size_t i = 0;
    net_->visit_params([&](const std::string& name, Tensor<T>& t, bool) {
      if (i >= ps.entries.size())
        throw StructureMismatch("parameter set ends before '" + name + "'");
      const auto& e = ps.entries[i++];
      if (e.name != name)
        throw StructureMismatch("entry " + std::to_string(i - 1) + ": expected '" + name +
                                "', got '" + e.name + "'");
      if (e.shape != t.shape())
        throw StructureMismatch("entry '" + name + "': shape " + shape_str(t.shape()) +
                                " vs " + shape_str(e.shape));
      auto& dst = t.raw_data();
      for (size_t j = 0; j < dst.size(); ++j) dst[j] = static_cast<T>(e.values[j]);
    });
    if (i != ps.entries.size())
      throw StructureMismatch("parameter set has " + std::to_string(ps.entries.size() - i) +
                              " extra entries");
  }

 private:
  ModelConfig cfg_;
  std::unique_ptr<EmbeddingNet<T>> net_;
};

// Stack equal-sized feature matrices into a (B,1,coeffs,frames) batch; the
// matrix rows are frames, the image layout is coeffs x frames.
template <typename T>
Tensor<T> batch_from_features(const std::vector<const MfccMatrix*>& batch) {
  if (batch.empty()) throw ShapeMismatch("empty feature batch");
  const int frames = batch[0]->frame_count;
  const int coeffs = batch[0]->n_coeffs;
  for (const auto* m : batch)
    if (m->frame_count != frames || m->n_coeffs != coeffs)
      throw ShapeMismatch("feature batch mixes " + std::to_string(frames) + "x" +
                          std::to_string(coeffs) + " with " + std::to_string(m->frame_count) +
                          "x" + std::to_string(m->n_coeffs));
  const int b = static_cast<int>(batch.size());
  std::vector<T> data(static_cast<size_t>(b) * coeffs * frames);
  size_t o = 0;
  for (const auto* m : batch)
    for (int c = 0; c < coeffs; ++c)
      for (int t = 0; t < frames; ++t) data[o++] = static_cast<T>(m->at(t, c));
  return Tensor<T>::from_vector({b, 1, coeffs, frames}, std::move(data));
}

template <typename T>
Tensor<T> embed_batch(EmbeddingModel<T>& model, const std::vector<const MfccMatrix*>& batch,
                      bool training) {
  return model.forward(batch_from_features<T>(batch), training);
}

}  // namespace fedshot
