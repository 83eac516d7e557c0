#pragma once

#include <cmath>
#include <limits>
#include <utility>

#include "fedshot/tensor/tensor.hpp"

// Dense forward ops with reverse-mode closures. Everything is single-threaded
// and uses a fixed summation order, so results are bit-stable across runs.

namespace fedshot {

namespace detail {

template <typename T>
void check_same_shape(const char* op, const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape())
    throw ShapeMismatch(std::string(op) + ": shapes " + shape_str(a.shape()) + " vs " +
                        shape_str(b.shape()));
}

template <typename T>
void accumulate(Node<T>& dst, const std::vector<T>& g) {
  dst.ensure_grad();
  for (size_t i = 0; i < g.size(); ++i) dst.grad[i] += g[i];
}

}  // namespace detail

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  detail::check_same_shape("add", a, b);
  std::vector<T> out(a.data());
  const auto& bv = b.data();
  for (size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  auto pa = a.node(), pb = b.node();
  return detail::make_op_node<T>(
      "add", a.shape(), std::move(out), {pa, pb}, [pa, pb](Node<T>& self) {
        if (pa->requires_grad) detail::accumulate(*pa, self.grad);
        if (pb->requires_grad) detail::accumulate(*pb, self.grad);
      });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  detail::check_same_shape("sub", a, b);
  std::vector<T> out(a.data());
  const auto& bv = b.data();
  for (size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  auto pa = a.node(), pb = b.node();
  return detail::make_op_node<T>(
      "sub", a.shape(), std::move(out), {pa, pb}, [pa, pb](Node<T>& self) {
        if (pa->requires_grad) detail::accumulate(*pa, self.grad);
        if (pb->requires_grad) {
          pb->ensure_grad();
          for (size_t i = 0; i < self.grad.size(); ++i) pb->grad[i] -= self.grad[i];
        }
      });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::check_same_shape("mul", a, b);
  std::vector<T> out(a.data());
  const auto& bv = b.data();
  for (size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  auto pa = a.node(), pb = b.node();
  return detail::make_op_node<T>(
      "mul", a.shape(), std::move(out), {pa, pb}, [pa, pb](Node<T>& self) {
        if (pa->requires_grad) {
          pa->ensure_grad();
          for (size_t i = 0; i < self.grad.size(); ++i)
            pa->grad[i] += self.grad[i] * pb->value[i];
        }
        if (pb->requires_grad) {
          pb->ensure_grad();
          for (size_t i = 0; i < self.grad.size(); ++i)
            pb->grad[i] += self.grad[i] * pa->value[i];
        }
      });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T c) {
  std::vector<T> out(a.data());
  for (T& v : out) v *= c;
  auto pa = a.node();
  return detail::make_op_node<T>(
      "scale", a.shape(), std::move(out), {pa}, [pa, c](Node<T>& self) {
        if (!pa->requires_grad) return;
        pa->ensure_grad();
        for (size_t i = 0; i < self.grad.size(); ++i) pa->grad[i] += c * self.grad[i];
      });
}

template <typename T>
Tensor<T> sum_all(const Tensor<T>& a) {
  T s = 0;
  for (T v : a.data()) s += v;
  auto pa = a.node();
  return detail::make_op_node<T>(
      "sum_all", Shape{1}, std::vector<T>{s}, {pa}, [pa](Node<T>& self) {
        if (!pa->requires_grad) return;
        pa->ensure_grad();
        const T g = self.grad[0];
        for (T& gv : pa->grad) gv += g;
      });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& a) {
  std::vector<T> out(a.data());
  for (T& v : out)
    if (v < T(0)) v = T(0);
  auto pa = a.node();
  return detail::make_op_node<T>(
      "relu", a.shape(), std::move(out), {pa}, [pa](Node<T>& self) {
        if (!pa->requires_grad) return;
        pa->ensure_grad();
        for (size_t i = 0; i < self.grad.size(); ++i)
          if (pa->value[i] > T(0)) pa->grad[i] += self.grad[i];
      });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& a) {
  std::vector<T> out(a.data());
  for (T& v : out) v = T(1) / (T(1) + std::exp(-v));
  auto pa = a.node();
  return detail::make_op_node<T>(
      "sigmoid", a.shape(), std::move(out), {pa}, [pa](Node<T>& self) {
        if (!pa->requires_grad) return;
        pa->ensure_grad();
        for (size_t i = 0; i < self.grad.size(); ++i) {
          const T y = self.value[i];
          pa->grad[i] += self.grad[i] * y * (T(1) - y);
        }
      });
}

// Clamped sqrt; used when plain Euclidean distances feed the logits.
template <typename T>
Tensor<T> sqrt_floor(const Tensor<T>& a, T floor) {
  std::vector<T> out(a.data());
  for (T& v : out) v = std::sqrt(std::max(v, floor));
  auto pa = a.node();
  return detail::make_op_node<T>(
      "sqrt_floor", a.shape(), std::move(out), {pa}, [pa, floor](Node<T>& self) {
        if (!pa->requires_grad) return;
        pa->ensure_grad();
        for (size_t i = 0; i < self.grad.size(); ++i)
          if (pa->value[i] > floor) pa->grad[i] += self.grad[i] / (T(2) * self.value[i]);
      });
}

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.ndim() != 2 || b.ndim() != 2 || a.dim(1) != b.dim(0))
    throw ShapeMismatch("matmul: shapes " + shape_str(a.shape()) + " vs " +
                        shape_str(b.shape()));
  const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<T> out(static_cast<size_t>(m) * n, T(0));
  const auto& av = a.data();
  const auto& bv = b.data();
  for (int i = 0; i < m; ++i)
    for (int p = 0; p < k; ++p) {
      const T aip = av[static_cast<size_t>(i) * k + p];
      for (int j = 0; j < n; ++j)
        out[static_cast<size_t>(i) * n + j] += aip * bv[static_cast<size_t>(p) * n + j];
    }
  auto pa = a.node(), pb = b.node();
  return detail::make_op_node<T>(
      "matmul", Shape{m, n}, std::move(out), {pa, pb}, [pa, pb, m, k, n](Node<T>& self) {
        if (pa->requires_grad) {
          pa->ensure_grad();
          for (int i = 0; i < m; ++i)
            for (int j = 0; j < n; ++j) {
              const T g = self.grad[static_cast<size_t>(i) * n + j];
              for (int p = 0; p < k; ++p)
                pa->grad[static_cast<size_t>(i) * k + p] +=
                    g * pb->value[static_cast<size_t>(p) * n + j];
            }
        }
        if (pb->requires_grad) {
          pb->ensure_grad();
          for (int i = 0; i < m; ++i)
            for (int p = 0; p < k; ++p) {
              const T av = pa->value[static_cast<size_t>(i) * k + p];
              for (int j = 0; j < n; ++j)
                pb->grad[static_cast<size_t>(p) * n + j] +=
                    av * self.grad[static_cast<size_t>(i) * n + j];
            }
        }
      });
}

// y = x * W^T + b, with x (B,in), W (out,in), b (out).
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  if (x.ndim() != 2 || w.ndim() != 2 || x.dim(1) != w.dim(1))
    throw ShapeMismatch("linear: input " + shape_str(x.shape()) + " vs weight " +
                        shape_str(w.shape()));
  const int batch = x.dim(0), in = x.dim(1), out_dim = w.dim(0);
  if (b.defined() && (b.ndim() != 1 || b.dim(0) != out_dim))
    throw ShapeMismatch("linear: bias " + shape_str(b.shape()) + " vs out " +
                        std::to_string(out_dim));
  std::vector<T> out(static_cast<size_t>(batch) * out_dim, T(0));
  const auto& xv = x.data();
  const auto& wv = w.data();
  for (int i = 0; i < batch; ++i)
    for (int o = 0; o < out_dim; ++o) {
      T acc = b.defined() ? b.data()[static_cast<size_t>(o)] : T(0);
      const size_t xoff = static_cast<size_t>(i) * in;
      const size_t woff = static_cast<size_t>(o) * in;
      for (int p = 0; p < in; ++p) acc += xv[xoff + p] * wv[woff + p];
      out[static_cast<size_t>(i) * out_dim + o] = acc;
    }
  auto px = x.node(), pw = w.node();
  auto pb = b.defined() ? b.node() : nullptr;
  std::vector<std::shared_ptr<Node<T>>> parents{px, pw};
  if (pb) parents.push_back(pb);
  return detail::make_op_node<T>(
      "linear", Shape{batch, out_dim}, std::move(out), std::move(parents),
      [px, pw, pb, batch, in, out_dim](Node<T>& self) {
        if (px->requires_grad) {
          px->ensure_grad();
          for (int i = 0; i < batch; ++i)
            for (int o = 0; o < out_dim; ++o) {
              const T g = self.grad[static_cast<size_t>(i) * out_dim + o];
              const size_t woff = static_cast<size_t>(o) * in;
              const size_t xoff = static_cast<size_t>(i) * in;
              for (int p = 0; p < in; ++p) px->grad[xoff + p] += g * pw->value[woff + p];
            }
        }
        if (pw->requires_grad) {
          pw->ensure_grad();
          for (int i = 0; i < batch; ++i)
            for (int o = 0; o < out_dim; ++o) {
              const T g = self.grad[static_cast<size_t>(i) * out_dim + o];
              const size_t woff = static_cast<size_t>(o) * in;
              const size_t xoff = static_cast<size_t>(i) * in;
              for (int p = 0; p < in; ++p) pw->grad[woff + p] += g * px->value[xoff + p];
            }
        }
        if (pb && pb->requires_grad) {
          pb->ensure_grad();
          for (int i = 0; i < batch; ++i)
            for (int o = 0; o < out_dim; ++o)
              pb->grad[static_cast<size_t>(o)] +=
                  self.grad[static_cast<size_t>(i) * out_dim + o];
        }
      });
}

// Cross-correlation convention; x (B,C,H,W), w (F,C,kh,kw), optional bias (F).
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b, int stride,
                 int padding) {
  if (x.ndim() != 4 || w.ndim() != 4 || x.dim(1) != w.dim(1))
    throw ShapeMismatch("conv2d: input " + shape_str(x.shape()) + " vs kernel " +
                        shape_str(w.shape()));
  if (stride < 1) throw ShapeMismatch("conv2d: stride must be >= 1");
  const int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int F = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  if (b.defined() && (b.ndim() != 1 || b.dim(0) != F))
    throw ShapeMismatch("conv2d: bias " + shape_str(b.shape()));
  const int Ho = (H + 2 * padding - kh) / stride + 1;
  const int Wo = (W + 2 * padding - kw) / stride + 1;
  if (H + 2 * padding < kh || W + 2 * padding < kw)
    throw InputTooSmall("conv2d: input " + shape_str(x.shape()) + " smaller than kernel " +
                        shape_str(w.shape()) + " with padding " + std::to_string(padding));

  std::vector<T> out(static_cast<size_t>(B) * F * Ho * Wo, T(0));
  const auto& xv = x.data();
  const auto& wv = w.data();
  for (int bi = 0; bi < B; ++bi)
    for (int f = 0; f < F; ++f) {
      const T bias = b.defined() ? b.data()[static_cast<size_t>(f)] : T(0);
      for (int oh = 0; oh < Ho; ++oh)
        for (int ow = 0; ow < Wo; ++ow) {
          T acc = bias;
          for (int c = 0; c < C; ++c)
            for (int i = 0; i < kh; ++i) {
              const int ih = oh * stride - padding + i;
              if (ih < 0 || ih >= H) continue;
              const size_t xrow = ((static_cast<size_t>(bi) * C + c) * H + ih) * W;
              const size_t wrow = ((static_cast<size_t>(f) * C + c) * kh + i) * kw;
              for (int j = 0; j < kw; ++j) {
                const int iw = ow * stride - padding + j;
                if (iw < 0 || iw >= W) continue;
                acc += xv[xrow + iw] * wv[wrow + j];
              }
            }
          out[((static_cast<size_t>(bi) * F + f) * Ho + oh) * Wo + ow] = acc;
        }
    }

  auto px = x.node(), pw = w.node();
  auto pb = b.defined() ? b.node() : nullptr;
  std::vector<std::shared_ptr<Node<T>>> parents{px, pw};
  if (pb) parents.push_back(pb);
  return detail::make_op_node<T>(
      "conv2d", Shape{B, F, Ho, Wo}, std::move(out), std::move(parents),
      [px, pw, pb, B, C, H, W, F, kh, kw, Ho, Wo, stride, padding](Node<T>& self) {
        const bool gx = px->requires_grad, gw = pw->requires_grad;
        const bool gb = pb && pb->requires_grad;
        if (gx) px->ensure_grad();
        if (gw) pw->ensure_grad();
        if (gb) pb->ensure_grad();
        for (int bi = 0; bi < B; ++bi)
          for (int f = 0; f < F; ++f)
            for (int oh = 0; oh < Ho; ++oh)
              for (int ow = 0; ow < Wo; ++ow) {
                const T g =
                    self.grad[((static_cast<size_t>(bi) * F + f) * Ho + oh) * Wo + ow];
                if (g == T(0)) continue;
                if (gb) pb->grad[static_cast<size_t>(f)] += g;
                if (!gx && !gw) continue;
                for (int c = 0; c < C; ++c)
                  for (int i = 0; i < kh; ++i) {
                    const int ih = oh * stride - padding + i;
                    if (ih < 0 || ih >= H) continue;
                    const size_t xrow = ((static_cast<size_t>(bi) * C + c) * H + ih) * W;
                    const size_t wrow = ((static_cast<size_t>(f) * C + c) * kh + i) * kw;
                    for (int j = 0; j < kw; ++j) {
                      const int iw = ow * stride - padding + j;
                      if (iw < 0 || iw >= W) continue;
                      if (gx) px->grad[xrow + iw] += g * pw->value[wrow + j];
                      if (gw) pw->grad[wrow + j] += g * px->value[xrow + iw];
                    }
                  }
              }
      });
}

// General form with rectangular windows and -inf padding; windows never fall
// entirely inside the padding because padding < kernel.
template <typename T>
Tensor<T> max_pool2d_full(const Tensor<T>& x, int kh, int kw, int sh, int sw, int ph, int pw) {
  if (x.ndim() != 4) throw ShapeMismatch("max_pool2d: input " + shape_str(x.shape()));
  if (ph >= kh || pw >= kw) throw ShapeMismatch("max_pool2d: padding must be below kernel");
  const int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (H + 2 * ph < kh || W + 2 * pw < kw)
    throw InputTooSmall("max_pool2d: input " + shape_str(x.shape()) + " smaller than window " +
                        std::to_string(kh) + "x" + std::to_string(kw));
  const int Ho = (H + 2 * ph - kh) / sh + 1;
  const int Wo = (W + 2 * pw - kw) / sw + 1;
  std::vector<T> out(static_cast<size_t>(B) * C * Ho * Wo);
  std::vector<int64_t> arg(out.size());
  const auto& xv = x.data();
  size_t o = 0;
  for (int bi = 0; bi < B; ++bi)
    for (int c = 0; c < C; ++c)
      for (int oh = 0; oh < Ho; ++oh)
        for (int ow = 0; ow < Wo; ++ow, ++o) {
          T best = -std::numeric_limits<T>::infinity();
          int64_t best_idx = -1;
          for (int i = 0; i < kh; ++i) {
            const int ih = oh * sh - ph + i;
            if (ih < 0 || ih >= H) continue;
            for (int j = 0; j < kw; ++j) {
              const int iw = ow * sw - pw + j;
              if (iw < 0 || iw >= W) continue;
              const size_t idx = ((static_cast<size_t>(bi) * C + c) * H + ih) * W + iw;
              if (xv[idx] > best) {
                best = xv[idx];
                best_idx = static_cast<int64_t>(idx);
              }
            }
          }
          out[o] = best;
          arg[o] = best_idx;
        }
  auto px = x.node();
  return detail::make_op_node<T>(
      "max_pool2d", Shape{B, C, Ho, Wo}, std::move(out), {px},
      [px, arg = std::move(arg)](Node<T>& self) {
        if (!px->requires_grad) return;
        px->ensure_grad();
        for (size_t i = 0; i < self.grad.size(); ++i)
          px->grad[static_cast<size_t>(arg[i])] += self.grad[i];
      });
}

template <typename T>
Tensor<T> max_pool2d(const Tensor<T>& x, int k, int stride) {
  return max_pool2d_full(x, k, k, stride, stride, 0, 0);
}

template <typename T>
Tensor<T> avg_pool2d(const Tensor<T>& x, int k, int stride) {
  if (x.ndim() != 4) throw ShapeMismatch("avg_pool2d: input " + shape_str(x.shape()));
  const int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (H < k || W < k)
    throw InputTooSmall("avg_pool2d: input " + shape_str(x.shape()) + " smaller than window " +
                        std::to_string(k));
  const int Ho = (H - k) / stride + 1;
  const int Wo = (W - k) / stride + 1;
  const T inv = T(1) / static_cast<T>(k * k);
  std::vector<T> out(static_cast<size_t>(B) * C * Ho * Wo);
  const auto& xv = x.data();
  size_t o = 0;
  for (int bi = 0; bi < B; ++bi)
    for (int c = 0; c < C; ++c)
      for (int oh = 0; oh < Ho; ++oh)
        for (int ow = 0; ow < Wo; ++ow, ++o) {
          T acc = 0;
          for (int i = 0; i < k; ++i)
            for (int j = 0; j < k; ++j)
              acc += xv[((static_cast<size_t>(bi) * C + c) * H + oh * stride + i) * W +
                        ow * stride + j];
          out[o] = acc * inv;
        }
  auto px = x.node();
  return detail::make_op_node<T>(
      "avg_pool2d", Shape{B, C, Ho, Wo}, std::move(out), {px},
      [px, B, C, H, W, Ho, Wo, k, stride, inv](Node<T>& self) {
        if (!px->requires_grad) return;
        px->ensure_grad();
        size_t o = 0;
        for (int bi = 0; bi < B; ++bi)
          for (int c = 0; c < C; ++c)
            for (int oh = 0; oh < Ho; ++oh)
              for (int ow = 0; ow < Wo; ++ow, ++o) {
                const T g = self.grad[o] * inv;
                for (int i = 0; i < k; ++i)
                  for (int j = 0; j < k; ++j)
                    px->grad[((static_cast<size_t>(bi) * C + c) * H + oh * stride + i) * W +
                             ow * stride + j] += g;
              }
      });
}

template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x) {
  if (x.ndim() != 4) throw ShapeMismatch("global_avg_pool: input " + shape_str(x.shape()));
  const int B = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
  const T inv = T(1) / static_cast<T>(HW);
  std::vector<T> out(static_cast<size_t>(B) * C);
  const auto& xv = x.data();
  for (int bi = 0; bi < B; ++bi)
    for (int c = 0; c < C; ++c) {
      T acc = 0;
      const size_t off = (static_cast<size_t>(bi) * C + c) * HW;
      for (int i = 0; i < HW; ++i) acc += xv[off + i];
      out[static_cast<size_t>(bi) * C + c] = acc * inv;
    }
  auto px = x.node();
  return detail::make_op_node<T>(
      "global_avg_pool", Shape{B, C}, std::move(out), {px}, [px, B, C, HW, inv](Node<T>& self) {
        if (!px->requires_grad) return;
        px->ensure_grad();
        for (int bi = 0; bi < B; ++bi)
          for (int c = 0; c < C; ++c) {
            const T g = self.grad[static_cast<size_t>(bi) * C + c] * inv;
            const size_t off = (static_cast<size_t>(bi) * C + c) * HW;
            for (int i = 0; i < HW; ++i) px->grad[off + i] += g;
          }
      });
}

template <typename T>
Tensor<T> global_max_pool(const Tensor<T>& x) {
  if (x.ndim() != 4) throw ShapeMismatch("global_max_pool: input " + shape_str(x.shape()));
  const int B = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
  std::vector<T> out(static_cast<size_t>(B) * C);
  std::vector<int64_t> arg(out.size());
  const auto& xv = x.data();
  for (int bi = 0; bi < B; ++bi)
    for (int c = 0; c < C; ++c) {
      const size_t off = (static_cast<size_t>(bi) * C + c) * HW;
      T best = xv[off];
      int64_t bidx = 0;
      for (int i = 1; i < HW; ++i)
        if (xv[off + i] > best) {
          best = xv[off + i];
          bidx = i;
        }
      out[static_cast<size_t>(bi) * C + c] = best;
      arg[static_cast<size_t>(bi) * C + c] = static_cast<int64_t>(off) + bidx;
    }
  auto px = x.node();
  return detail::make_op_node<T>(
      "global_max_pool", Shape{B, C}, std::move(out), {px},
      [px, arg = std::move(arg)](Node<T>& self) {
        if (!px->requires_grad) return;
        px->ensure_grad();
        for (size_t i = 0; i < self.grad.size(); ++i)
          px->grad[static_cast<size_t>(arg[i])] += self.grad[i];
      });
}

// Batch norm over (B,H,W) per channel. Training mode normalizes with batch
// statistics and updates the running buffers in place (they stay off the tape);
// eval mode is an affine map from the frozen running stats.
template <typename T>
Tensor<T> batch_norm2d(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                       Tensor<T>& running_mean, Tensor<T>& running_var, bool training,
                       T momentum = T(0.1), T eps = T(1e-5)) {
  if (x.ndim() != 4) throw ShapeMismatch("batch_norm2d: input " + shape_str(x.shape()));
  const int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (gamma.numel() != C || beta.numel() != C || running_mean.numel() != C ||
      running_var.numel() != C)
    throw ShapeMismatch("batch_norm2d: parameter length mismatch for C=" + std::to_string(C));
  const int64_t n = static_cast<int64_t>(B) * H * W;
  const auto& xv = x.data();
  const auto& gv = gamma.data();
  const auto& bv = beta.data();

  std::vector<T> mean(C), invstd(C);
  if (training) {
    for (int c = 0; c < C; ++c) {
      T m = 0;
      for (int bi = 0; bi < B; ++bi) {
        const size_t off = (static_cast<size_t>(bi) * C + c) * H * W;
        for (int i = 0; i < H * W; ++i) m += xv[off + i];
      }
      m /= static_cast<T>(n);
      T var = 0;
      for (int bi = 0; bi < B; ++bi) {
        const size_t off = (static_cast<size_t>(bi) * C + c) * H * W;
        for (int i = 0; i < H * W; ++i) {
          const T d = xv[off + i] - m;
          var += d * d;
        }
      }
      var /= static_cast<T>(n);  // biased, used for normalization
      mean[c] = m;
      invstd[c] = T(1) / std::sqrt(var + eps);
      // running update uses the unbiased estimate
      const T unbiased = n > 1 ? var * static_cast<T>(n) / static_cast<T>(n - 1) : var;
      running_mean.raw_data()[c] = (T(1) - momentum) * running_mean.data()[c] + momentum * m;
      running_var.raw_data()[c] =
          (T(1) - momentum) * running_var.data()[c] + momentum * unbiased;
    }
  } else {
    for (int c = 0; c < C; ++c) {
      mean[c] = running_mean.data()[c];
      invstd[c] = T(1) / std::sqrt(running_var.data()[c] + eps);
    }
  }

  std::vector<T> out(xv.size());
  for (int bi = 0; bi < B; ++bi)
    for (int c = 0; c < C; ++c) {
      const size_t off = (static_cast<size_t>(bi) * C + c) * H * W;
      const T m = mean[c], is = invstd[c], g = gv[c], b = bv[c];
      for (int i = 0; i < H * W; ++i) out[off + i] = (xv[off + i] - m) * is * g + b;
    }

  auto px = x.node(), pg = gamma.node(), pbta = beta.node();
  return detail::make_op_node<T>(
      "batch_norm2d", x.shape(), std::move(out), {px, pg, pbta},
      [px, pg, pbta, B, C, H, W, n, training, mean = std::move(mean),
       invstd = std::move(invstd)](Node<T>& self) {
        const int HW = H * W;
        std::vector<T> sum_g(C, T(0)), sum_gx(C, T(0));
        for (int bi = 0; bi < B; ++bi)
          for (int c = 0; c < C; ++c) {
            const size_t off = (static_cast<size_t>(bi) * C + c) * HW;
            for (int i = 0; i < HW; ++i) {
              const T xhat = (px->value[off + i] - mean[c]) * invstd[c];
              sum_g[c] += self.grad[off + i];
              sum_gx[c] += self.grad[off + i] * xhat;
            }
          }
        if (pg->requires_grad) {
          pg->ensure_grad();
          for (int c = 0; c < C; ++c) pg->grad[c] += sum_gx[c];
        }
        if (pbta->requires_grad) {
          pbta->ensure_grad();
          for (int c = 0; c < C; ++c) pbta->grad[c] += sum_g[c];
        }
        if (px->requires_grad) {
          px->ensure_grad();
          const T invn = T(1) / static_cast<T>(n);
          for (int bi = 0; bi < B; ++bi)
            for (int c = 0; c < C; ++c) {
              const size_t off = (static_cast<size_t>(bi) * C + c) * HW;
              const T gscale = pg->value[c] * invstd[c];
              for (int i = 0; i < HW; ++i) {
                if (training) {
                  const T xhat = (px->value[off + i] - mean[c]) * invstd[c];
                  px->grad[off + i] +=
                      gscale * (self.grad[off + i] - invn * sum_g[c] - invn * xhat * sum_gx[c]);
                } else {
                  px->grad[off + i] += gscale * self.grad[off + i];
                }
              }
            }
        }
      });
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, int axis) {
  if (parts.empty()) throw ShapeMismatch("concat: no inputs");
  const int nd = parts[0].ndim();
  if (axis < 0 || axis >= nd) throw ShapeMismatch("concat: bad axis " + std::to_string(axis));
  Shape out_shape = parts[0].shape();
  int64_t axis_total = 0;
  for (const auto& p : parts) {
    if (p.ndim() != nd) throw ShapeMismatch("concat: rank mismatch");
    for (int d = 0; d < nd; ++d)
      if (d != axis && p.dim(d) != out_shape[static_cast<size_t>(d)])
        throw ShapeMismatch("concat: shape " + shape_str(p.shape()) + " vs " +
                            shape_str(out_shape) + " on axis " + std::to_string(d));
    axis_total += p.dim(axis);
  }
  out_shape[static_cast<size_t>(axis)] = static_cast<int>(axis_total);

  int64_t outer = 1, inner = 1;
  for (int d = 0; d < axis; ++d) outer *= out_shape[static_cast<size_t>(d)];
  for (int d = axis + 1; d < nd; ++d) inner *= out_shape[static_cast<size_t>(d)];

  std::vector<T> out(static_cast<size_t>(numel_of(out_shape)));
  const int64_t out_row = axis_total * inner;
  int64_t axis_off = 0;
  for (const auto& p : parts) {
    const int64_t rows = p.dim(axis) * inner;
    const auto& pv = p.data();
    for (int64_t o = 0; o < outer; ++o)
      std::copy(pv.begin() + o * rows, pv.begin() + (o + 1) * rows,
                out.begin() + o * out_row + axis_off);
    axis_off += rows;
  }

  std::vector<std::shared_ptr<Node<T>>> parents;
  std::vector<int64_t> rows_per;
  for (const auto& p : parts) {
    parents.push_back(p.node());
    rows_per.push_back(p.dim(axis) * inner);
  }
  return detail::make_op_node<T>(
      "concat", out_shape, std::move(out), parents,
      [parents, rows_per, outer, out_row](Node<T>& self) {
        int64_t axis_off = 0;
        for (size_t pi = 0; pi < parents.size(); ++pi) {
          auto& p = *parents[pi];
          const int64_t rows = rows_per[pi];
          if (p.requires_grad) {
            p.ensure_grad();
            for (int64_t o = 0; o < outer; ++o)
              for (int64_t r = 0; r < rows; ++r)
                p.grad[static_cast<size_t>(o * rows + r)] +=
                    self.grad[static_cast<size_t>(o * out_row + axis_off + r)];
          }
          axis_off += rows;
        }
      });
}

template <typename T>
Tensor<T> log_softmax(const Tensor<T>& x, int axis) {
  const int nd = x.ndim();
  if (axis < 0 || axis >= nd)
    throw ShapeMismatch("log_softmax: bad axis " + std::to_string(axis));
  const int L = x.dim(axis);
  int64_t outer = 1, inner = 1;
  for (int d = 0; d < axis; ++d) outer *= x.dim(d);
  for (int d = axis + 1; d < nd; ++d) inner *= x.dim(d);

  const auto& xv = x.data();
  std::vector<T> out(xv.size());
  for (int64_t o = 0; o < outer; ++o)
    for (int64_t i = 0; i < inner; ++i) {
      const int64_t base = o * L * inner + i;
      T mx = xv[static_cast<size_t>(base)];
      for (int l = 1; l < L; ++l) mx = std::max(mx, xv[static_cast<size_t>(base + l * inner)]);
      T lse = 0;
      for (int l = 0; l < L; ++l)
        lse += std::exp(xv[static_cast<size_t>(base + l * inner)] - mx);
      lse = mx + std::log(lse);
      for (int l = 0; l < L; ++l)
        out[static_cast<size_t>(base + l * inner)] =
            xv[static_cast<size_t>(base + l * inner)] - lse;
    }
  auto px = x.node();
  return detail::make_op_node<T>(
      "log_softmax", x.shape(), std::move(out), {px}, [px, L, outer, inner](Node<T>& self) {
        if (!px->requires_grad) return;
        px->ensure_grad();
        for (int64_t o = 0; o < outer; ++o)
          for (int64_t i = 0; i < inner; ++i) {
            const int64_t base = o * L * inner + i;
            T gsum = 0;
            for (int l = 0; l < L; ++l) gsum += self.grad[static_cast<size_t>(base + l * inner)];
            for (int l = 0; l < L; ++l) {
              const size_t idx = static_cast<size_t>(base + l * inner);
              px->grad[idx] += self.grad[idx] - std::exp(self.value[idx]) * gsum;
            }
          }
      });
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape target) {
  if (numel_of(target) != x.numel())
    throw ShapeMismatch("reshape: " + shape_str(x.shape()) + " to " + shape_str(target));
  auto px = x.node();
  return detail::make_op_node<T>(
      "reshape", std::move(target), std::vector<T>(x.data()), {px}, [px](Node<T>& self) {
        if (!px->requires_grad) return;
        detail::accumulate(*px, self.grad);
      });
}

// (B, ...) -> (B, rest); the embedding-flatten op.
template <typename T>
Tensor<T> flatten2(const Tensor<T>& x) {
  if (x.ndim() < 2) throw ShapeMismatch("flatten2: input " + shape_str(x.shape()));
  const int B = x.dim(0);
  return reshape(x, Shape{B, static_cast<int>(x.numel() / B)});
}

template <typename T>
Tensor<T> slice_rows(const Tensor<T>& x, int start, int len) {
  if (x.ndim() != 2 || start < 0 || start + len > x.dim(0))
    throw ShapeMismatch("slice_rows: [" + std::to_string(start) + "," +
                        std::to_string(start + len) + ") of " + shape_str(x.shape()));
  const int d = x.dim(1);
  std::vector<T> out(x.data().begin() + static_cast<size_t>(start) * d,
                     x.data().begin() + static_cast<size_t>(start + len) * d);
  auto px = x.node();
  return detail::make_op_node<T>(
      "slice_rows", Shape{len, d}, std::move(out), {px}, [px, start, len, d](Node<T>& self) {
        if (!px->requires_grad) return;
        px->ensure_grad();
        for (int i = 0; i < len * d; ++i)
          px->grad[static_cast<size_t>(start) * d + i] += self.grad[static_cast<size_t>(i)];
      });
}

// Row-group means: rows of x sharing a group id are averaged. Used for class
// prototypes, so gradients flow back to every member row.
template <typename T>
Tensor<T> group_mean(const Tensor<T>& x, const std::vector<int>& group_of_row, int n_groups) {
  if (x.ndim() != 2 || static_cast<int64_t>(group_of_row.size()) != x.dim(0))
    throw ShapeMismatch("group_mean: input " + shape_str(x.shape()) + " vs " +
                        std::to_string(group_of_row.size()) + " group ids");
  const int m = x.dim(0), d = x.dim(1);
  std::vector<int> count(static_cast<size_t>(n_groups), 0);
  for (int g : group_of_row) {
    if (g < 0 || g >= n_groups) throw ShapeMismatch("group_mean: group id out of range");
    ++count[static_cast<size_t>(g)];
  }
  for (int c : count)
    if (c == 0) throw ShapeMismatch("group_mean: empty group");
  std::vector<T> out(static_cast<size_t>(n_groups) * d, T(0));
  const auto& xv = x.data();
  for (int r = 0; r < m; ++r) {
    const size_t g = static_cast<size_t>(group_of_row[static_cast<size_t>(r)]);
    for (int j = 0; j < d; ++j) out[g * d + j] += xv[static_cast<size_t>(r) * d + j];
  }
  for (int g = 0; g < n_groups; ++g) {
    const T inv = T(1) / static_cast<T>(count[static_cast<size_t>(g)]);
    for (int j = 0; j < d; ++j) out[static_cast<size_t>(g) * d + j] *= inv;
  }
  auto px = x.node();
  return detail::make_op_node<T>(
      "group_mean", Shape{n_groups, d}, std::move(out), {px},
      [px, group_of_row, count, m, d](Node<T>& self) {
        if (!px->requires_grad) return;
        px->ensure_grad();
        for (int r = 0; r < m; ++r) {
          const size_t g = static_cast<size_t>(group_of_row[static_cast<size_t>(r)]);
          const T inv = T(1) / static_cast<T>(count[g]);
          for (int j = 0; j < d; ++j)
            px->grad[static_cast<size_t>(r) * d + j] += self.grad[g * d + j] * inv;
        }
      });
}

// out[i][j] = squared Euclidean distance between row i of a and row j of b.
template <typename T>
Tensor<T> pairwise_sqdist(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.ndim() != 2 || b.ndim() != 2 || a.dim(1) != b.dim(1))
    throw ShapeMismatch("pairwise_sqdist: " + shape_str(a.shape()) + " vs " +
                        shape_str(b.shape()));
  const int m = a.dim(0), n = b.dim(0), d = a.dim(1);
  std::vector<T> out(static_cast<size_t>(m) * n, T(0));
  const auto& av = a.data();
  const auto& bv = b.data();
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) {
      T acc = 0;
      for (int p = 0; p < d; ++p) {
        const T diff = av[static_cast<size_t>(i) * d + p] - bv[static_cast<size_t>(j) * d + p];
        acc += diff * diff;
      }
      out[static_cast<size_t>(i) * n + j] = acc;
    }
  auto pa = a.node(), pb = b.node();
  return detail::make_op_node<T>(
      "pairwise_sqdist", Shape{m, n}, std::move(out), {pa, pb},
      [pa, pb, m, n, d](Node<T>& self) {
        const bool ga = pa->requires_grad, gb = pb->requires_grad;
        if (ga) pa->ensure_grad();
        if (gb) pb->ensure_grad();
        for (int i = 0; i < m; ++i)
          for (int j = 0; j < n; ++j) {
            const T g2 = T(2) * self.grad[static_cast<size_t>(i) * n + j];
            if (g2 == T(0)) continue;
            for (int p = 0; p < d; ++p) {
              const T diff = pa->value[static_cast<size_t>(i) * d + p] -
                             pb->value[static_cast<size_t>(j) * d + p];
              if (ga) pa->grad[static_cast<size_t>(i) * d + p] += g2 * diff;
              if (gb) pb->grad[static_cast<size_t>(j) * d + p] -= g2 * diff;
            }
          }
      });
}

// Negative log likelihood summed over rows, from log-probabilities.
template <typename T>
Tensor<T> nll_loss_sum(const Tensor<T>& logp, const std::vector<int>& targets) {
  if (logp.ndim() != 2 || static_cast<int64_t>(targets.size()) != logp.dim(0))
    throw ShapeMismatch("nll_loss_sum: " + shape_str(logp.shape()) + " vs " +
                        std::to_string(targets.size()) + " targets");
  const int m = logp.dim(0), n = logp.dim(1);
  T acc = 0;
  for (int i = 0; i < m; ++i) {
    const int t = targets[static_cast<size_t>(i)];
    if (t < 0 || t >= n) throw ShapeMismatch("nll_loss_sum: target out of range");
    acc -= logp.data()[static_cast<size_t>(i) * n + t];
  }
  auto pl = logp.node();
  return detail::make_op_node<T>(
      "nll_loss_sum", Shape{1}, std::vector<T>{acc}, {pl}, [pl, targets, n](Node<T>& self) {
        if (!pl->requires_grad) return;
        pl->ensure_grad();
        const T g = self.grad[0];
        for (size_t i = 0; i < targets.size(); ++i)
          pl->grad[i * n + static_cast<size_t>(targets[i])] -= g;
      });
}

template <typename T>
Tensor<T> channel_mean(const Tensor<T>& x) {
  if (x.ndim() != 4) throw ShapeMismatch("channel_mean: input " + shape_str(x.shape()));
  const int B = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
  const T inv = T(1) / static_cast<T>(C);
  std::vector<T> out(static_cast<size_t>(B) * HW, T(0));
  const auto& xv = x.data();
  for (int bi = 0; bi < B; ++bi)
    for (int c = 0; c < C; ++c) {
      const size_t off = (static_cast<size_t>(bi) * C + c) * HW;
      for (int i = 0; i < HW; ++i) out[static_cast<size_t>(bi) * HW + i] += xv[off + i];
    }
  for (T& v : out) v *= inv;
  auto px = x.node();
  return detail::make_op_node<T>(
      "channel_mean", Shape{B, 1, x.dim(2), x.dim(3)}, std::move(out), {px},
      [px, B, C, HW, inv](Node<T>& self) {
        if (!px->requires_grad) return;
        px->ensure_grad();
        for (int bi = 0; bi < B; ++bi)
          for (int c = 0; c < C; ++c) {
            const size_t off = (static_cast<size_t>(bi) * C + c) * HW;
            for (int i = 0; i < HW; ++i)
              px->grad[off + i] += self.grad[static_cast<size_t>(bi) * HW + i] * inv;
          }
      });
}

template <typename T>
Tensor<T> channel_max(const Tensor<T>& x) {
  if (x.ndim() != 4) throw ShapeMismatch("channel_max: input " + shape_str(x.shape()));
  const int B = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
  std::vector<T> out(static_cast<size_t>(B) * HW);
  std::vector<int64_t> arg(out.size());
  const auto& xv = x.data();
  for (int bi = 0; bi < B; ++bi)
    for (int i = 0; i < HW; ++i) {
      size_t best_idx = (static_cast<size_t>(bi) * C) * HW + i;
      T best = xv[best_idx];
      for (int c = 1; c < C; ++c) {
        const size_t idx = (static_cast<size_t>(bi) * C + c) * HW + i;
        if (xv[idx] > best) {
          best = xv[idx];
          best_idx = idx;
        }
      }
      out[static_cast<size_t>(bi) * HW + i] = best;
      arg[static_cast<size_t>(bi) * HW + i] = static_cast<int64_t>(best_idx);
    }
  auto px = x.node();
  return detail::make_op_node<T>(
      "channel_max", Shape{B, 1, x.dim(2), x.dim(3)}, std::move(out), {px},
      [px, arg = std::move(arg)](Node<T>& self) {
        if (!px->requires_grad) return;
        px->ensure_grad();
        for (size_t i = 0; i < self.grad.size(); ++i)
          px->grad[static_cast<size_t>(arg[i])] += self.grad[i];
      });
}

// Per-channel gates: y[b,c,h,w] = x[b,c,h,w] * s[b,c].
template <typename T>
Tensor<T> scale_channels(const Tensor<T>& x, const Tensor<T>& s) {
  if (x.ndim() != 4 || s.ndim() != 2 || s.dim(0) != x.dim(0) || s.dim(1) != x.dim(1))
    throw ShapeMismatch("scale_channels: " + shape_str(x.shape()) + " vs " +
                        shape_str(s.shape()));
  const int B = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
  std::vector<T> out(x.data());
  const auto& sv = s.data();
  for (int bi = 0; bi < B; ++bi)
    for (int c = 0; c < C; ++c) {
      const T f = sv[static_cast<size_t>(bi) * C + c];
      const size_t off = (static_cast<size_t>(bi) * C + c) * HW;
      for (int i = 0; i < HW; ++i) out[off + i] *= f;
    }
  auto px = x.node(), ps = s.node();
  return detail::make_op_node<T>(
      "scale_channels", x.shape(), std::move(out), {px, ps}, [px, ps, B, C, HW](Node<T>& self) {
        for (int bi = 0; bi < B; ++bi)
          for (int c = 0; c < C; ++c) {
            const size_t sidx = static_cast<size_t>(bi) * C + c;
            const size_t off = sidx * HW;
            if (px->requires_grad) {
              px->ensure_grad();
              const T f = ps->value[sidx];
              for (int i = 0; i < HW; ++i) px->grad[off + i] += self.grad[off + i] * f;
            }
            if (ps->requires_grad) {
              ps->ensure_grad();
              T acc = 0;
              for (int i = 0; i < HW; ++i) acc += self.grad[off + i] * px->value[off + i];
              ps->grad[sidx] += acc;
            }
          }
      });
}

// Spatial gate: y[b,c,h,w] = x[b,c,h,w] * m[b,0,h,w].
template <typename T>
Tensor<T> scale_spatial(const Tensor<T>& x, const Tensor<T>& m) {
  if (x.ndim() != 4 || m.ndim() != 4 || m.dim(0) != x.dim(0) || m.dim(1) != 1 ||
      m.dim(2) != x.dim(2) || m.dim(3) != x.dim(3))
    throw ShapeMismatch("scale_spatial: " + shape_str(x.shape()) + " vs " +
                        shape_str(m.shape()));
  const int B = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
  std::vector<T> out(x.data());
  const auto& mv = m.data();
  for (int bi = 0; bi < B; ++bi)
    for (int c = 0; c < C; ++c) {
      const size_t off = (static_cast<size_t>(bi) * C + c) * HW;
      const size_t moff = static_cast<size_t>(bi) * HW;
      for (int i = 0; i < HW; ++i) out[off + i] *= mv[moff + i];
    }
  auto px = x.node(), pm = m.node();
  return detail::make_op_node<T>(
      "scale_spatial", x.shape(), std::move(out), {px, pm}, [px, pm, B, C, HW](Node<T>& self) {
        if (px->requires_grad) px->ensure_grad();
        if (pm->requires_grad) pm->ensure_grad();
        for (int bi = 0; bi < B; ++bi)
          for (int c = 0; c < C; ++c) {
            const size_t off = (static_cast<size_t>(bi) * C + c) * HW;
            const size_t moff = static_cast<size_t>(bi) * HW;
            for (int i = 0; i < HW; ++i) {
              if (px->requires_grad) px->grad[off + i] += self.grad[off + i] * pm->value[moff + i];
              if (pm->requires_grad) pm->grad[moff + i] += self.grad[off + i] * px->value[off + i];
            }
          }
      });
}

}  // namespace fedshot
