#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "fv/error.hpp"
#include "fv/tensor.hpp"

// Differentiable operations over TensorT<S>. Every op computes its forward
// result eagerly and, when the graph is recording and an input carries
// requires_grad, appends one backward node to the tape. Backward closures
// accumulate (+=) into input gradients, so tensors used more than once in a
// forward pass receive the sum of their contributions.
//
// Tensors are shared handles, so ops take them by value: the copies captured
// in backward closures alias the caller's storage and stay mutable inside
// the mutable lambdas.

namespace fv {

enum class Activation { none, relu, sigmoid };

inline Activation parse_activation(const std::string& s) {
  if (s == "none") return Activation::none;
  if (s == "relu") return Activation::relu;
  if (s == "sigmoid") return Activation::sigmoid;
  throw ConfigError("unknown activation kind '" + s + "' (relu|sigmoid|none)");
}

namespace detail {

template <class S>
TensorT<S> make_out(GraphT<S>& g, Shape shape, bool input_grad) {
  return TensorT<S>(std::move(shape), S(0), g.recording() && input_grad);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// elementwise and broadcast arithmetic

template <class S>
TensorT<S> add(GraphT<S>& g, TensorT<S> a, TensorT<S> b) {
  if (a.shape() != b.shape())
    throw DimensionError("add: shape mismatch " + shape_str(a.shape()) +
                         " vs " + shape_str(b.shape()));
  auto out =
      detail::make_out(g, a.shape(), a.requires_grad() || b.requires_grad());
  const std::size_t n = a.data().size();
  for (std::size_t i = 0; i < n; ++i) out[i] = a[i] + b[i];
  if (out.requires_grad())
    g.record("add", [a, b, out]() mutable {
      const auto& go = out.grad();
      if (a.requires_grad()) {
        auto& ga = a.grad();
        for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i];
      }
      if (b.requires_grad()) {
        auto& gb = b.grad();
        for (std::size_t i = 0; i < go.size(); ++i) gb[i] += go[i];
      }
    });
  return out;
}

// x:[B x N] + v:[N], broadcast over rows.
template <class S>
TensorT<S> add_rowvec(GraphT<S>& g, TensorT<S> x, TensorT<S> v) {
  if (x.rank() != 2 || v.rank() != 1 || x.dim(1) != v.dim(0))
    throw DimensionError("add_rowvec: shape mismatch " + shape_str(x.shape()) +
                         " vs " + shape_str(v.shape()));
  const int B = x.dim(0), N = x.dim(1);
  auto out =
      detail::make_out(g, x.shape(), x.requires_grad() || v.requires_grad());
  for (int i = 0; i < B; ++i)
    for (int j = 0; j < N; ++j) out.at(i, j) = x.at(i, j) + v[j];
  if (out.requires_grad())
    g.record("add_rowvec", [x, v, out, B, N]() mutable {
      const auto& go = out.grad();
      if (x.requires_grad()) {
        auto& gx = x.grad();
        for (std::size_t i = 0; i < go.size(); ++i) gx[i] += go[i];
      }
      if (v.requires_grad()) {
        auto& gv = v.grad();
        for (int i = 0; i < B; ++i)
          for (int j = 0; j < N; ++j) gv[j] += go[static_cast<std::size_t>(i) * N + j];
      }
    });
  return out;
}

// x:[C x H x W] + b:[C], broadcast over the spatial plane.
template <class S>
TensorT<S> add_channel_bias(GraphT<S>& g, TensorT<S> x,
                            TensorT<S> b) {
  if (x.rank() != 3 || b.rank() != 1 || x.dim(0) != b.dim(0))
    throw DimensionError("add_channel_bias: shape mismatch " +
                         shape_str(x.shape()) + " vs " + shape_str(b.shape()));
  const int C = x.dim(0);
  const std::int64_t plane = static_cast<std::int64_t>(x.dim(1)) * x.dim(2);
  auto out =
      detail::make_out(g, x.shape(), x.requires_grad() || b.requires_grad());
  for (int c = 0; c < C; ++c)
    for (std::int64_t i = 0; i < plane; ++i)
      out[c * plane + i] = x[c * plane + i] + b[c];
  if (out.requires_grad())
    g.record("add_channel_bias", [x, b, out, C, plane]() mutable {
      const auto& go = out.grad();
      if (x.requires_grad()) {
        auto& gx = x.grad();
        for (std::size_t i = 0; i < go.size(); ++i) gx[i] += go[i];
      }
      if (b.requires_grad()) {
        auto& gb = b.grad();
        for (int c = 0; c < C; ++c) {
          S acc = S(0);
          for (std::int64_t i = 0; i < plane; ++i) acc += go[c * plane + i];
          gb[c] += acc;
        }
      }
    });
  return out;
}

template <class S>
TensorT<S> mul(GraphT<S>& g, TensorT<S> a, TensorT<S> b) {
  if (a.shape() != b.shape())
    throw DimensionError("mul: shape mismatch " + shape_str(a.shape()) +
                         " vs " + shape_str(b.shape()));
  auto out =
      detail::make_out(g, a.shape(), a.requires_grad() || b.requires_grad());
  const std::size_t n = a.data().size();
  for (std::size_t i = 0; i < n; ++i) out[i] = a[i] * b[i];
  if (out.requires_grad())
    g.record("mul", [a, b, out]() mutable {
      const auto& go = out.grad();
      if (a.requires_grad()) {
        auto& ga = a.grad();
        for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i] * b[i];
      }
      if (b.requires_grad()) {
        auto& gb = b.grad();
        for (std::size_t i = 0; i < go.size(); ++i) gb[i] += go[i] * a[i];
      }
    });
  return out;
}

template <class S>
TensorT<S> scale(GraphT<S>& g, TensorT<S> x, S c) {
  auto out = detail::make_out(g, x.shape(), x.requires_grad());
  const std::size_t n = x.data().size();
  for (std::size_t i = 0; i < n; ++i) out[i] = x[i] * c;
  if (out.requires_grad())
    g.record("scale", [x, out, c]() mutable {
      const auto& go = out.grad();
      auto& gx = x.grad();
      for (std::size_t i = 0; i < go.size(); ++i) gx[i] += go[i] * c;
    });
  return out;
}

// Copy into a new shape with identical numel; gradient is the inverse copy.
template <class S>
TensorT<S> reshape(GraphT<S>& g, TensorT<S> x, Shape shape) {
  if (shape_numel(shape) != x.numel())
    throw DimensionError("reshape: cannot view " + shape_str(x.shape()) +
                         " as " + shape_str(shape));
  auto out = detail::make_out(g, std::move(shape), x.requires_grad());
  out.data() = x.data();
  if (out.requires_grad())
    g.record("reshape", [x, out]() mutable {
      const auto& go = out.grad();
      auto& gx = x.grad();
      for (std::size_t i = 0; i < go.size(); ++i) gx[i] += go[i];
    });
  return out;
}

// ---------------------------------------------------------------------------
// matrix products

template <class S>
TensorT<S> matmul(GraphT<S>& g, TensorT<S> a, TensorT<S> b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
    throw DimensionError("matmul: shape mismatch " + shape_str(a.shape()) +
                         " x " + shape_str(b.shape()));
  const int M = a.dim(0), K = a.dim(1), N = b.dim(1);
  auto out = detail::make_out(g, Shape{M, N},
                              a.requires_grad() || b.requires_grad());
  const S* ap = a.data().data();
  const S* bp = b.data().data();
  S* op = out.data().data();
  for (int i = 0; i < M; ++i)
    for (int k = 0; k < K; ++k) {
      const S av = ap[static_cast<std::size_t>(i) * K + k];
      const S* brow = bp + static_cast<std::size_t>(k) * N;
      S* orow = op + static_cast<std::size_t>(i) * N;
      for (int j = 0; j < N; ++j) orow[j] += av * brow[j];
    }
  if (out.requires_grad())
    g.record("matmul", [a, b, out, M, K, N]() mutable {
      const S* go = out.grad().data();
      if (a.requires_grad()) {
        S* ga = a.grad().data();
        const S* bp = b.data().data();
        for (int i = 0; i < M; ++i)
          for (int k = 0; k < K; ++k) {
            S acc = S(0);
            const S* gorow = go + static_cast<std::size_t>(i) * N;
            const S* brow = bp + static_cast<std::size_t>(k) * N;
            for (int j = 0; j < N; ++j) acc += gorow[j] * brow[j];
            ga[static_cast<std::size_t>(i) * K + k] += acc;
          }
      }
      if (b.requires_grad()) {
        S* gb = b.grad().data();
        const S* ap = a.data().data();
        for (int i = 0; i < M; ++i)
          for (int k = 0; k < K; ++k) {
            const S av = ap[static_cast<std::size_t>(i) * K + k];
            const S* gorow = go + static_cast<std::size_t>(i) * N;
            S* gbrow = gb + static_cast<std::size_t>(k) * N;
            for (int j = 0; j < N; ++j) gbrow[j] += av * gorow[j];
          }
      }
    });
  return out;
}

// a:[M x K] times b-transposed where b:[N x K]; avoids materialized transposes
// in attention score computation.
template <class S>
TensorT<S> matmul_nt(GraphT<S>& g, TensorT<S> a, TensorT<S> b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(1))
    throw DimensionError("matmul_nt: shape mismatch " + shape_str(a.shape()) +
                         " x " + shape_str(b.shape()) + "^T");
  const int M = a.dim(0), K = a.dim(1), N = b.dim(0);
  auto out = detail::make_out(g, Shape{M, N},
                              a.requires_grad() || b.requires_grad());
  for (int i = 0; i < M; ++i)
    for (int j = 0; j < N; ++j) {
      S acc = S(0);
      const S* arow = a.data().data() + static_cast<std::size_t>(i) * K;
      const S* brow = b.data().data() + static_cast<std::size_t>(j) * K;
      for (int k = 0; k < K; ++k) acc += arow[k] * brow[k];
      out.at(i, j) = acc;
    }
  if (out.requires_grad())
    g.record("matmul_nt", [a, b, out, M, K, N]() mutable {
      const S* go = out.grad().data();
      if (a.requires_grad()) {
        S* ga = a.grad().data();
        const S* bp = b.data().data();
        for (int i = 0; i < M; ++i)
          for (int j = 0; j < N; ++j) {
            const S gv = go[static_cast<std::size_t>(i) * N + j];
            const S* brow = bp + static_cast<std::size_t>(j) * K;
            S* garow = ga + static_cast<std::size_t>(i) * K;
            for (int k = 0; k < K; ++k) garow[k] += gv * brow[k];
          }
      }
      if (b.requires_grad()) {
        S* gb = b.grad().data();
        const S* ap = a.data().data();
        for (int i = 0; i < M; ++i)
          for (int j = 0; j < N; ++j) {
            const S gv = go[static_cast<std::size_t>(i) * N + j];
            const S* arow = ap + static_cast<std::size_t>(i) * K;
            S* gbrow = gb + static_cast<std::size_t>(j) * K;
            for (int k = 0; k < K; ++k) gbrow[k] += gv * arow[k];
          }
      }
    });
  return out;
}

// ---------------------------------------------------------------------------
// convolution (cross-correlation convention, zero padding)

inline int conv_out_extent(int in, int k, int stride, int dilation, int padding) {
  const int k_eff = k + (k - 1) * (dilation - 1);
  return (in + 2 * padding - k_eff) / stride + 1;
}

// input:[C_in x H x W], kernel:[C_out x C_in x k x k].
template <class S>
TensorT<S> conv2d(GraphT<S>& g, TensorT<S> input,
                  TensorT<S> kernel, int stride, int dilation,
                  int padding) {
  if (input.rank() != 3 || kernel.rank() != 4)
    throw DimensionError("conv2d: expected input [CxHxW] and kernel "
                         "[CoxCixkxk], got " +
                         shape_str(input.shape()) + " and " +
                         shape_str(kernel.shape()));
  if (kernel.dim(2) != kernel.dim(3))
    throw DimensionError("conv2d: kernel must be square, got " +
                         shape_str(kernel.shape()));
  if (kernel.dim(1) != input.dim(0))
    throw DimensionError("conv2d: channel mismatch, input " +
                         shape_str(input.shape()) + " vs kernel " +
                         shape_str(kernel.shape()));
  const int k = kernel.dim(2);
  if (k < 1 || stride < 1 || dilation < 1 || padding < 0)
    throw ContractError("conv2d: k, stride, dilation must be >= 1 and padding >= 0");
  const int Ci = input.dim(0), H = input.dim(1), W = input.dim(2);
  const int Co = kernel.dim(0);
  const int k_eff = k + (k - 1) * (dilation - 1);
  if (k_eff > H + 2 * padding || k_eff > W + 2 * padding)
    throw DimensionError("conv2d: effective kernel extent " +
                         std::to_string(k_eff) + " exceeds padded input " +
                         shape_str(input.shape()) + " with padding " +
                         std::to_string(padding));
  const int Ho = conv_out_extent(H, k, stride, dilation, padding);
  const int Wo = conv_out_extent(W, k, stride, dilation, padding);
  auto out = detail::make_out(g, Shape{Co, Ho, Wo},
                              input.requires_grad() || kernel.requires_grad());
  const S* in = input.data().data();
  const S* ker = kernel.data().data();
  S* op = out.data().data();
  for (int co = 0; co < Co; ++co)
    for (int oh = 0; oh < Ho; ++oh)
      for (int ow = 0; ow < Wo; ++ow) {
        const int ih0 = oh * stride - padding;
        const int iw0 = ow * stride - padding;
        S acc = S(0);
        for (int ci = 0; ci < Ci; ++ci)
          for (int kh = 0; kh < k; ++kh) {
            const int ih = ih0 + kh * dilation;
            if (ih < 0 || ih >= H) continue;
            const S* inrow = in + (static_cast<std::size_t>(ci) * H + ih) * W;
            const S* krow =
                ker + ((static_cast<std::size_t>(co) * Ci + ci) * k + kh) * k;
            for (int kw = 0; kw < k; ++kw) {
              const int iw = iw0 + kw * dilation;
              if (iw < 0 || iw >= W) continue;
              acc += inrow[iw] * krow[kw];
            }
          }
        op[(static_cast<std::size_t>(co) * Ho + oh) * Wo + ow] = acc;
      }
  if (out.requires_grad())
    g.record("conv2d", [input, kernel, out, stride, dilation, padding, k, Ci,
                        H, W, Co, Ho, Wo]() mutable {
      const S* go = out.grad().data();
      const bool gi = input.requires_grad();
      const bool gk = kernel.requires_grad();
      S* gin = gi ? input.grad().data() : nullptr;
      S* gker = gk ? kernel.grad().data() : nullptr;
      const S* in = input.data().data();
      const S* ker = kernel.data().data();
      for (int co = 0; co < Co; ++co)
        for (int oh = 0; oh < Ho; ++oh)
          for (int ow = 0; ow < Wo; ++ow) {
            const S gv =
                go[(static_cast<std::size_t>(co) * Ho + oh) * Wo + ow];
            if (gv == S(0)) continue;
            const int ih0 = oh * stride - padding;
            const int iw0 = ow * stride - padding;
            for (int ci = 0; ci < Ci; ++ci)
              for (int kh = 0; kh < k; ++kh) {
                const int ih = ih0 + kh * dilation;
                if (ih < 0 || ih >= H) continue;
                const std::size_t inbase =
                    (static_cast<std::size_t>(ci) * H + ih) * W;
                const std::size_t kbase =
                    ((static_cast<std::size_t>(co) * Ci + ci) * k + kh) * k;
                for (int kw = 0; kw < k; ++kw) {
                  const int iw = iw0 + kw * dilation;
                  if (iw < 0 || iw >= W) continue;
                  if (gi) gin[inbase + iw] += gv * ker[kbase + kw];
                  if (gk) gker[kbase + kw] += gv * in[inbase + iw];
                }
              }
          }
    });
  return out;
}

// input:[C x H x W], kernel:[C x k x k]; one filter per channel.
template <class S>
TensorT<S> conv2d_depthwise(GraphT<S>& g, TensorT<S> input,
                            TensorT<S> kernel, int stride,
                            int padding) {
  if (input.rank() != 3 || kernel.rank() != 3 || kernel.dim(1) != kernel.dim(2))
    throw DimensionError("conv2d_depthwise: expected input [CxHxW] and kernel "
                         "[Cxkxk], got " +
                         shape_str(input.shape()) + " and " +
                         shape_str(kernel.shape()));
  if (kernel.dim(0) != input.dim(0))
    throw DimensionError("conv2d_depthwise: channel mismatch " +
                         shape_str(input.shape()) + " vs " +
                         shape_str(kernel.shape()));
  const int C = input.dim(0), H = input.dim(1), W = input.dim(2);
  const int k = kernel.dim(1);
  if (k > H + 2 * padding || k > W + 2 * padding)
    throw DimensionError("conv2d_depthwise: kernel extent exceeds padded input");
  const int Ho = conv_out_extent(H, k, stride, 1, padding);
  const int Wo = conv_out_extent(W, k, stride, 1, padding);
  auto out = detail::make_out(g, Shape{C, Ho, Wo},
                              input.requires_grad() || kernel.requires_grad());
  for (int c = 0; c < C; ++c)
    for (int oh = 0; oh < Ho; ++oh)
      for (int ow = 0; ow < Wo; ++ow) {
        const int ih0 = oh * stride - padding;
        const int iw0 = ow * stride - padding;
        S acc = S(0);
        for (int kh = 0; kh < k; ++kh) {
          const int ih = ih0 + kh;
          if (ih < 0 || ih >= H) continue;
          for (int kw = 0; kw < k; ++kw) {
            const int iw = iw0 + kw;
            if (iw < 0 || iw >= W) continue;
            acc += input.at(c, ih, iw) * kernel.at(c, kh, kw);
          }
        }
        out.at(c, oh, ow) = acc;
      }
  if (out.requires_grad())
    g.record("conv2d_depthwise",
             [input, kernel, out, stride, padding, k, C, H, W, Ho, Wo]() mutable {
               const bool gi = input.requires_grad();
               const bool gk = kernel.requires_grad();
               for (int c = 0; c < C; ++c)
                 for (int oh = 0; oh < Ho; ++oh)
                   for (int ow = 0; ow < Wo; ++ow) {
                     const S gv = out.grad()[(static_cast<std::size_t>(c) * Ho +
                                              oh) * Wo + ow];
                     if (gv == S(0)) continue;
                     const int ih0 = oh * stride - padding;
                     const int iw0 = ow * stride - padding;
                     for (int kh = 0; kh < k; ++kh) {
                       const int ih = ih0 + kh;
                       if (ih < 0 || ih >= H) continue;
                       for (int kw = 0; kw < k; ++kw) {
                         const int iw = iw0 + kw;
                         if (iw < 0 || iw >= W) continue;
                         if (gi)
                           input.grad()[(static_cast<std::size_t>(c) * H + ih) *
                                            W + iw] += gv * kernel.at(c, kh, kw);
                         if (gk)
                           kernel.grad()[(static_cast<std::size_t>(c) * k + kh) *
                                             k + kw] += gv * input.at(c, ih, iw);
                       }
                     }
                   }
             });
  return out;
}

// ---------------------------------------------------------------------------
// activations

template <class S>
TensorT<S> relu(GraphT<S>& g, TensorT<S> x) {
  auto out = detail::make_out(g, x.shape(), x.requires_grad());
  const std::size_t n = x.data().size();
  for (std::size_t i = 0; i < n; ++i) out[i] = x[i] > S(0) ? x[i] : S(0);
  if (out.requires_grad())
    g.record("relu", [x, out]() mutable {
      const auto& go = out.grad();
      auto& gx = x.grad();
      for (std::size_t i = 0; i < go.size(); ++i)
        if (x[i] > S(0)) gx[i] += go[i];
    });
  return out;
}

template <class S>
TensorT<S> sigmoid(GraphT<S>& g, TensorT<S> x) {
  auto out = detail::make_out(g, x.shape(), x.requires_grad());
  const std::size_t n = x.data().size();
  for (std::size_t i = 0; i < n; ++i) out[i] = S(1) / (S(1) + std::exp(-x[i]));
  if (out.requires_grad())
    g.record("sigmoid", [x, out]() mutable {
      const auto& go = out.grad();
      auto& gx = x.grad();
      for (std::size_t i = 0; i < go.size(); ++i)
        gx[i] += go[i] * out[i] * (S(1) - out[i]);
    });
  return out;
}

template <class S>
TensorT<S> elementwise_activation(GraphT<S>& g, TensorT<S> x,
                                  Activation kind) {
  switch (kind) {
    case Activation::none: return reshape(g, x, x.shape());
    case Activation::relu: return relu(g, x);
    case Activation::sigmoid: return sigmoid(g, x);
  }
  throw ConfigError("elementwise_activation: unknown kind");
}

// Softmax along the last dimension, max-subtracted for stability.
template <class S>
TensorT<S> softmax(GraphT<S>& g, TensorT<S> x) {
  if (x.rank() < 1)
    throw DimensionError("softmax: expected rank >= 1");
  const int K = x.dim(x.rank() - 1);
  const std::int64_t rows = x.numel() / K;
  for (const S v : x.data())
    if (!std::isfinite(v))
      throw NumericError("softmax: non-finite input");
  auto out = detail::make_out(g, x.shape(), x.requires_grad());
  for (std::int64_t r = 0; r < rows; ++r) {
    const S* xr = x.data().data() + r * K;
    S* yr = out.data().data() + r * K;
    S mx = xr[0];
    for (int j = 1; j < K; ++j) mx = std::max(mx, xr[j]);
    S sum = S(0);
    for (int j = 0; j < K; ++j) {
      yr[j] = std::exp(xr[j] - mx);
      sum += yr[j];
    }
    for (int j = 0; j < K; ++j) yr[j] /= sum;
  }
  if (out.requires_grad())
    g.record("softmax", [x, out, rows, K]() mutable {
      auto& gx = x.grad();
      const auto& go = out.grad();
      for (std::int64_t r = 0; r < rows; ++r) {
        const S* yr = out.data().data() + r * K;
        const S* gr = go.data() + r * K;
        S dot = S(0);
        for (int j = 0; j < K; ++j) dot += gr[j] * yr[j];
        for (int j = 0; j < K; ++j) gx[r * K + j] += yr[j] * (gr[j] - dot);
      }
    });
  return out;
}

// ---------------------------------------------------------------------------
// normalization

// Layer norm over the last dimension with affine parameters.
template <class S>
TensorT<S> layernorm(GraphT<S>& g, TensorT<S> x, TensorT<S> gamma,
                     TensorT<S> beta, S eps) {
  const int D = x.dim(x.rank() - 1);
  if (gamma.numel() != D || beta.numel() != D)
    throw DimensionError("layernorm: affine params must have " +
                         std::to_string(D) + " elements");
  const std::int64_t rows = x.numel() / D;
  const bool rg =
      x.requires_grad() || gamma.requires_grad() || beta.requires_grad();
  auto out = detail::make_out(g, x.shape(), rg);
  // Saved per-row statistics for backward.
  std::vector<S> inv_sigma(static_cast<std::size_t>(rows));
  std::vector<S> means(static_cast<std::size_t>(rows));
  for (std::int64_t r = 0; r < rows; ++r) {
    const S* xr = x.data().data() + r * D;
    S mu = S(0);
    for (int j = 0; j < D; ++j) mu += xr[j];
    mu /= S(D);
    S var = S(0);
    for (int j = 0; j < D; ++j) var += (xr[j] - mu) * (xr[j] - mu);
    var /= S(D);
    const S is = S(1) / std::sqrt(var + eps);
    means[static_cast<std::size_t>(r)] = mu;
    inv_sigma[static_cast<std::size_t>(r)] = is;
    S* yr = out.data().data() + r * D;
    for (int j = 0; j < D; ++j) yr[j] = gamma[j] * (xr[j] - mu) * is + beta[j];
  }
  if (out.requires_grad())
    g.record("layernorm", [x, gamma, beta, out, rows, D,
                           ms = std::move(means),
                           iss = std::move(inv_sigma)]() mutable {
      const auto& go = out.grad();
      for (std::int64_t r = 0; r < rows; ++r) {
        const S* xr = x.data().data() + r * D;
        const S* gr = go.data() + r * D;
        const S mu = ms[static_cast<std::size_t>(r)];
        const S is = iss[static_cast<std::size_t>(r)];
        S sum_dxh = S(0), sum_dxh_xh = S(0);
        for (int j = 0; j < D; ++j) {
          const S xh = (xr[j] - mu) * is;
          const S dxh = gr[j] * gamma[j];
          sum_dxh += dxh;
          sum_dxh_xh += dxh * xh;
          if (gamma.requires_grad()) gamma.grad()[j] += gr[j] * xh;
          if (beta.requires_grad()) beta.grad()[j] += gr[j];
        }
        if (x.requires_grad()) {
          auto& gx = x.grad();
          for (int j = 0; j < D; ++j) {
            const S xh = (xr[j] - mu) * is;
            const S dxh = gr[j] * gamma[j];
            gx[r * D + j] +=
                is * (dxh - sum_dxh / S(D) - xh * sum_dxh_xh / S(D));
          }
        }
      }
    });
  return out;
}

// Training-mode batch norm over x:[B x C]. Pure with respect to running
// statistics; the owning layer updates those from the same batch moments.
// Uses the biased batch variance.
template <class S>
TensorT<S> batchnorm_train(GraphT<S>& g, TensorT<S> x,
                           TensorT<S> gamma, TensorT<S> beta,
                           S eps) {
  if (x.rank() != 2)
    throw DimensionError("batchnorm_train: expected [BxC], got " +
                         shape_str(x.shape()));
  const int B = x.dim(0), C = x.dim(1);
  if (B < 2)
    throw ContractError("batchnorm_train: batch size must be >= 2, got " +
                        std::to_string(B));
  if (gamma.numel() != C || beta.numel() != C)
    throw DimensionError("batchnorm_train: affine params must have " +
                         std::to_string(C) + " elements");
  const bool rg =
      x.requires_grad() || gamma.requires_grad() || beta.requires_grad();
  auto out = detail::make_out(g, x.shape(), rg);
  std::vector<S> mean(static_cast<std::size_t>(C), S(0));
  std::vector<S> inv_sigma(static_cast<std::size_t>(C), S(0));
  for (int c = 0; c < C; ++c) {
    S mu = S(0);
    for (int b = 0; b < B; ++b) mu += x.at(b, c);
    mu /= S(B);
    S var = S(0);
    for (int b = 0; b < B; ++b) var += (x.at(b, c) - mu) * (x.at(b, c) - mu);
    var /= S(B);
    mean[static_cast<std::size_t>(c)] = mu;
    inv_sigma[static_cast<std::size_t>(c)] = S(1) / std::sqrt(var + eps);
  }
  for (int b = 0; b < B; ++b)
    for (int c = 0; c < C; ++c)
      out.at(b, c) = gamma[c] * (x.at(b, c) - mean[static_cast<std::size_t>(c)]) *
                         inv_sigma[static_cast<std::size_t>(c)] +
                     beta[c];
  if (out.requires_grad())
    g.record("batchnorm_train", [x, gamma, beta, out, B, C,
                                 ms = std::move(mean),
                                 iss = std::move(inv_sigma)]() mutable {
      const auto& go = out.grad();
      for (int c = 0; c < C; ++c) {
        const S mu = ms[static_cast<std::size_t>(c)];
        const S is = iss[static_cast<std::size_t>(c)];
        S sum_dxh = S(0), sum_dxh_xh = S(0);
        for (int b = 0; b < B; ++b) {
          const S xh = (x.at(b, c) - mu) * is;
          const S dxh = go[static_cast<std::size_t>(b) * C + c] * gamma[c];
          sum_dxh += dxh;
          sum_dxh_xh += dxh * xh;
          if (gamma.requires_grad())
            gamma.grad()[c] += go[static_cast<std::size_t>(b) * C + c] * xh;
          if (beta.requires_grad())
            beta.grad()[c] += go[static_cast<std::size_t>(b) * C + c];
        }
        if (x.requires_grad()) {
          auto& gx = x.grad();
          for (int b = 0; b < B; ++b) {
            const S xh = (x.at(b, c) - mu) * is;
            const S dxh = go[static_cast<std::size_t>(b) * C + c] * gamma[c];
            gx[static_cast<std::size_t>(b) * C + c] +=
                is * (dxh - sum_dxh / S(B) - xh * sum_dxh_xh / S(B));
          }
        }
      }
    });
  return out;
}

// Inference-mode batch norm using running statistics; x:[B x C].
template <class S>
TensorT<S> batchnorm_infer(GraphT<S>& g, TensorT<S> x,
                           TensorT<S> gamma, TensorT<S> beta,
                           TensorT<S> running_mean,
                           TensorT<S> running_var, S eps) {
  if (x.rank() != 2)
    throw DimensionError("batchnorm_infer: expected [BxC], got " +
                         shape_str(x.shape()));
  const int B = x.dim(0), C = x.dim(1);
  if (gamma.numel() != C || beta.numel() != C || running_mean.numel() != C ||
      running_var.numel() != C)
    throw DimensionError("batchnorm_infer: parameter size mismatch");
  const bool rg =
      x.requires_grad() || gamma.requires_grad() || beta.requires_grad();
  auto out = detail::make_out(g, x.shape(), rg);
  for (int b = 0; b < B; ++b)
    for (int c = 0; c < C; ++c)
      out.at(b, c) = gamma[c] * (x.at(b, c) - running_mean[c]) /
                         std::sqrt(running_var[c] + eps) +
                     beta[c];
  if (out.requires_grad())
    g.record("batchnorm_infer",
             [x, gamma, beta, running_mean, running_var, out, B, C, eps]() mutable {
               const auto& go = out.grad();
               for (int c = 0; c < C; ++c) {
                 const S is = S(1) / std::sqrt(running_var[c] + eps);
                 for (int b = 0; b < B; ++b) {
                   const S gv = go[static_cast<std::size_t>(b) * C + c];
                   if (x.requires_grad())
                     x.grad()[static_cast<std::size_t>(b) * C + c] +=
                         gv * gamma[c] * is;
                   if (gamma.requires_grad())
                     gamma.grad()[c] += gv * (x.at(b, c) - running_mean[c]) * is;
                   if (beta.requires_grad()) beta.grad()[c] += gv;
                 }
               }
             });
  return out;
}

// ---------------------------------------------------------------------------
// pooling / reshaping between network stages

// x:[C x H x W] -> [C]; out[c] = mean over the spatial plane.
template <class S>
TensorT<S> global_average_pool(GraphT<S>& g, TensorT<S> x) {
  if (x.rank() != 3)
    throw DimensionError("global_average_pool: expected [CxHxW], got " +
                         shape_str(x.shape()));
  const int C = x.dim(0);
  const std::int64_t plane = static_cast<std::int64_t>(x.dim(1)) * x.dim(2);
  auto out = detail::make_out(g, Shape{C}, x.requires_grad());
  for (int c = 0; c < C; ++c) {
    S acc = S(0);
    for (std::int64_t i = 0; i < plane; ++i) acc += x[c * plane + i];
    out[c] = acc / S(plane);
  }
  if (out.requires_grad())
    g.record("global_average_pool", [x, out, C, plane]() mutable {
      auto& gx = x.grad();
      for (int c = 0; c < C; ++c) {
        const S gv = out.grad()[c] / S(plane);
        for (std::int64_t i = 0; i < plane; ++i) gx[c * plane + i] += gv;
      }
    });
  return out;
}

// x:[T x D] -> [D]; token mean pooling.
template <class S>
TensorT<S> mean_rows(GraphT<S>& g, TensorT<S> x) {
  if (x.rank() != 2)
    throw DimensionError("mean_rows: expected [TxD], got " +
                         shape_str(x.shape()));
  const int T = x.dim(0), D = x.dim(1);
  auto out = detail::make_out(g, Shape{D}, x.requires_grad());
  for (int t = 0; t < T; ++t)
    for (int j = 0; j < D; ++j) out[j] += x.at(t, j);
  for (int j = 0; j < D; ++j) out[j] /= S(T);
  if (out.requires_grad())
    g.record("mean_rows", [x, out, T, D]() mutable {
      auto& gx = x.grad();
      for (int t = 0; t < T; ++t)
        for (int j = 0; j < D; ++j)
          gx[static_cast<std::size_t>(t) * D + j] += out.grad()[j] / S(T);
    });
  return out;
}

// B rank-1 tensors of equal length N -> [B x N].
template <class S>
TensorT<S> stack_rows(GraphT<S>& g, std::vector<TensorT<S>> rows) {
  if (rows.empty()) throw ContractError("stack_rows: empty input");
  const int N = static_cast<int>(rows[0].numel());
  bool rg = false;
  for (const auto& r : rows) {
    if (r.rank() != 1 || r.numel() != N)
      throw DimensionError("stack_rows: all inputs must be rank-1 of length " +
                           std::to_string(N));
    rg = rg || r.requires_grad();
  }
  const int B = static_cast<int>(rows.size());
  auto out = detail::make_out(g, Shape{B, N}, rg);
  for (int b = 0; b < B; ++b)
    for (int j = 0; j < N; ++j) out.at(b, j) = rows[static_cast<std::size_t>(b)][j];
  if (out.requires_grad())
    g.record("stack_rows", [rows, out, B, N]() mutable {
      for (int b = 0; b < B; ++b) {
        auto& r = rows[static_cast<std::size_t>(b)];
        if (!r.requires_grad()) continue;
        auto& gr = r.grad();
        for (int j = 0; j < N; ++j)
          gr[j] += out.grad()[static_cast<std::size_t>(b) * N + j];
      }
    });
  return out;
}

// x:[R x C] -> columns [c0, c0+len).
template <class S>
TensorT<S> slice_cols(GraphT<S>& g, TensorT<S> x, int c0, int len) {
  if (x.rank() != 2)
    throw DimensionError("slice_cols: expected rank-2, got " +
                         shape_str(x.shape()));
  const int R = x.dim(0), C = x.dim(1);
  if (c0 < 0 || len < 1 || c0 + len > C)
    throw DimensionError("slice_cols: range [" + std::to_string(c0) + "," +
                         std::to_string(c0 + len) + ") out of " +
                         std::to_string(C) + " columns");
  auto out = detail::make_out(g, Shape{R, len}, x.requires_grad());
  for (int i = 0; i < R; ++i)
    for (int j = 0; j < len; ++j) out.at(i, j) = x.at(i, c0 + j);
  if (out.requires_grad())
    g.record("slice_cols", [x, out, c0, len, R, C]() mutable {
      auto& gx = x.grad();
      for (int i = 0; i < R; ++i)
        for (int j = 0; j < len; ++j)
          gx[static_cast<std::size_t>(i) * C + c0 + j] +=
              out.grad()[static_cast<std::size_t>(i) * len + j];
    });
  return out;
}

// Horizontal concatenation of rank-2 tensors with equal row counts.
template <class S>
TensorT<S> concat_cols(GraphT<S>& g, std::vector<TensorT<S>> parts) {
  if (parts.empty()) throw ContractError("concat_cols: empty input");
  const int R = parts[0].dim(0);
  int Ctot = 0;
  bool rg = false;
  for (const auto& p : parts) {
    if (p.rank() != 2 || p.dim(0) != R)
      throw DimensionError("concat_cols: row count mismatch");
    Ctot += p.dim(1);
    rg = rg || p.requires_grad();
  }
  auto out = detail::make_out(g, Shape{R, Ctot}, rg);
  int off = 0;
  for (const auto& p : parts) {
    const int C = p.dim(1);
    for (int i = 0; i < R; ++i)
      for (int j = 0; j < C; ++j) out.at(i, off + j) = p.at(i, j);
    off += C;
  }
  if (out.requires_grad())
    g.record("concat_cols", [parts, out, R, Ctot]() mutable {
      int off = 0;
      for (auto& p : parts) {
        const int C = p.dim(1);
        if (p.requires_grad()) {
          auto& gp = p.grad();
          for (int i = 0; i < R; ++i)
            for (int j = 0; j < C; ++j)
              gp[static_cast<std::size_t>(i) * C + j] +=
                  out.grad()[static_cast<std::size_t>(i) * Ctot + off + j];
        }
        off += C;
      }
    });
  return out;
}

// Channel concatenation of rank-3 tensors with equal spatial extents.
template <class S>
TensorT<S> concat_channels(GraphT<S>& g, std::vector<TensorT<S>> parts) {
  if (parts.empty()) throw ContractError("concat_channels: empty input");
  const int H = parts[0].dim(1), W = parts[0].dim(2);
  int Ctot = 0;
  bool rg = false;
  for (const auto& p : parts) {
    if (p.rank() != 3 || p.dim(1) != H || p.dim(2) != W)
      throw DimensionError("concat_channels: spatial shape mismatch, expected " +
                           std::to_string(H) + "x" + std::to_string(W) +
                           ", got " + shape_str(p.shape()));
    Ctot += p.dim(0);
    rg = rg || p.requires_grad();
  }
  auto out = detail::make_out(g, Shape{Ctot, H, W}, rg);
  std::int64_t off = 0;
  for (const auto& p : parts) {
    const std::int64_t n = p.numel();
    for (std::int64_t i = 0; i < n; ++i) out[off + i] = p[i];
    off += n;
  }
  if (out.requires_grad())
    g.record("concat_channels", [parts, out]() mutable {
      std::int64_t off = 0;
      for (auto& p : parts) {
        const std::int64_t n = p.numel();
        if (p.requires_grad()) {
          auto& gp = p.grad();
          for (std::int64_t i = 0; i < n; ++i) gp[i] += out.grad()[off + i];
        }
        off += n;
      }
    });
  return out;
}

// Per-channel rescaling: out[c,h,w] = f[c,h,w] * e[c]; e has C elements in
// any rank (the excitation vector may arrive as [1 x C]).
template <class S>
TensorT<S> scale_channels(GraphT<S>& g, TensorT<S> f,
                          TensorT<S> e) {
  if (f.rank() != 3 || e.numel() != f.dim(0))
    throw DimensionError("scale_channels: feature " + shape_str(f.shape()) +
                         " vs gate with " + std::to_string(e.numel()) +
                         " elements");
  const int C = f.dim(0);
  const std::int64_t plane = static_cast<std::int64_t>(f.dim(1)) * f.dim(2);
  auto out =
      detail::make_out(g, f.shape(), f.requires_grad() || e.requires_grad());
  for (int c = 0; c < C; ++c)
    for (std::int64_t i = 0; i < plane; ++i)
      out[c * plane + i] = f[c * plane + i] * e[c];
  if (out.requires_grad())
    g.record("scale_channels", [f, e, out, C, plane]() mutable {
      const auto& go = out.grad();
      for (int c = 0; c < C; ++c) {
        if (f.requires_grad()) {
          auto& gf = f.grad();
          for (std::int64_t i = 0; i < plane; ++i)
            gf[c * plane + i] += go[c * plane + i] * e[c];
        }
        if (e.requires_grad()) {
          S acc = S(0);
          for (std::int64_t i = 0; i < plane; ++i)
            acc += go[c * plane + i] * f[c * plane + i];
          e.grad()[c] += acc;
        }
      }
    });
  return out;
}

// img:[C x H x W] -> [T x p*p*C] where T = (H/p)*(W/p); token t covers the
// patch at (t / (W/p), t % (W/p)) and its features are laid out as
// (c, di, dj) row-major.
template <class S>
TensorT<S> extract_patches(GraphT<S>& g, TensorT<S> img, int p) {
  if (img.rank() != 3)
    throw DimensionError("extract_patches: expected [CxHxW], got " +
                         shape_str(img.shape()));
  const int C = img.dim(0), H = img.dim(1), W = img.dim(2);
  if (p < 1 || H % p != 0 || W % p != 0)
    throw DimensionError(
        "extract_patches: image " + std::to_string(H) + "x" +
        std::to_string(W) + " not divisible by patch size " +
        std::to_string(p) + "; use a multiple of " + std::to_string(p) +
        " (e.g. " + std::to_string((H / p + 1) * p) + ")");
  const int th = H / p, tw = W / p;
  const int T = th * tw, F = p * p * C;
  auto out = detail::make_out(g, Shape{T, F}, img.requires_grad());
  for (int ph = 0; ph < th; ++ph)
    for (int pw = 0; pw < tw; ++pw) {
      const int t = ph * tw + pw;
      for (int c = 0; c < C; ++c)
        for (int di = 0; di < p; ++di)
          for (int dj = 0; dj < p; ++dj)
            out.at(t, (c * p + di) * p + dj) =
                img.at(c, ph * p + di, pw * p + dj);
    }
  if (out.requires_grad())
    g.record("extract_patches", [img, out, p, C, H, W, th, tw]() mutable {
      auto& gi = img.grad();
      const int F = p * p * C;
      for (int ph = 0; ph < th; ++ph)
        for (int pw = 0; pw < tw; ++pw) {
          const int t = ph * tw + pw;
          for (int c = 0; c < C; ++c)
            for (int di = 0; di < p; ++di)
              for (int dj = 0; dj < p; ++dj)
                gi[(static_cast<std::size_t>(c) * H + ph * p + di) * W +
                   pw * p + dj] +=
                    out.grad()[static_cast<std::size_t>(t) * F +
                               (c * p + di) * p + dj];
        }
    });
  return out;
}

// ---------------------------------------------------------------------------
// reductions to scalars

template <class S>
TensorT<S> sum_all(GraphT<S>& g, TensorT<S> x) {
  auto out = detail::make_out(g, Shape{1}, x.requires_grad());
  S acc = S(0);
  for (const S v : x.data()) acc += v;
  out[0] = acc;
  if (out.requires_grad())
    g.record("sum_all", [x, out]() mutable {
      const S gv = out.grad()[0];
      auto& gx = x.grad();
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gv;
    });
  return out;
}

template <class S>
TensorT<S> sum_squares(GraphT<S>& g, TensorT<S> x) {
  auto out = detail::make_out(g, Shape{1}, x.requires_grad());
  S acc = S(0);
  for (const S v : x.data()) acc += v * v;
  out[0] = acc;
  if (out.requires_grad())
    g.record("sum_squares", [x, out]() mutable {
      const S gv = out.grad()[0];
      auto& gx = x.grad();
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gv * S(2) * x[i];
    });
  return out;
}

// Sum of absolute values; subgradient 0 at exactly 0.
template <class S>
TensorT<S> sum_abs(GraphT<S>& g, TensorT<S> x) {
  auto out = detail::make_out(g, Shape{1}, x.requires_grad());
  S acc = S(0);
  for (const S v : x.data()) acc += v < S(0) ? -v : v;
  out[0] = acc;
  if (out.requires_grad())
    g.record("sum_abs", [x, out]() mutable {
      const S gv = out.grad()[0];
      auto& gx = x.grad();
      for (std::size_t i = 0; i < gx.size(); ++i) {
        if (x[i] > S(0)) gx[i] += gv;
        else if (x[i] < S(0)) gx[i] -= gv;
      }
    });
  return out;
}

template <class S>
TensorT<S> select_scalar(GraphT<S>& g, TensorT<S> x,
                         std::int64_t flat_index) {
  if (flat_index < 0 || flat_index >= x.numel())
    throw DimensionError("select_scalar: index " + std::to_string(flat_index) +
                         " out of range for " + shape_str(x.shape()));
  auto out = detail::make_out(g, Shape{1}, x.requires_grad());
  out[0] = x[flat_index];
  if (out.requires_grad())
    g.record("select_scalar", [x, out, flat_index]() mutable {
      x.grad()[static_cast<std::size_t>(flat_index)] += out.grad()[0];
    });
  return out;
}

// ---------------------------------------------------------------------------
// loss

// Mean over the batch of -sum_k target*log(max(p, 1e-12)). Targets must be
// exactly one-hot; probability rows must sum to 1 within 1e-4.
template <class S>
TensorT<S> cross_entropy_from_probs(GraphT<S>& g, TensorT<S> probs,
                                    TensorT<S> targets) {
  if (probs.rank() != 2 || targets.shape() != probs.shape())
    throw DimensionError("cross_entropy: probs " + shape_str(probs.shape()) +
                         " vs targets " + shape_str(targets.shape()));
  const int B = probs.dim(0), K = probs.dim(1);
  constexpr double kFloor = 1e-12;
  std::vector<int> target_class(static_cast<std::size_t>(B), -1);
  for (int b = 0; b < B; ++b) {
    S rowsum = S(0);
    int ones = 0;
    for (int k = 0; k < K; ++k) {
      rowsum += probs.at(b, k);
      const S t = targets.at(b, k);
      if (t == S(1)) {
        ++ones;
        target_class[static_cast<std::size_t>(b)] = k;
      } else if (t != S(0)) {
        throw ContractError("cross_entropy: targets must be one-hot");
      }
    }
    if (ones != 1)
      throw ContractError("cross_entropy: targets must be one-hot (row " +
                          std::to_string(b) + " has " + std::to_string(ones) +
                          " ones)");
    if (std::abs(static_cast<double>(rowsum) - 1.0) > 1e-4)
      throw ContractError("cross_entropy: probability row " +
                          std::to_string(b) + " sums to " +
                          std::to_string(static_cast<double>(rowsum)));
  }
  auto out = detail::make_out(g, Shape{1}, probs.requires_grad());
  S loss = S(0);
  for (int b = 0; b < B; ++b) {
    const S p = probs.at(b, target_class[static_cast<std::size_t>(b)]);
    loss -= std::log(std::max(p, static_cast<S>(kFloor)));
  }
  out[0] = loss / S(B);
  if (out.requires_grad())
    g.record("cross_entropy", [probs, out, B, tc = std::move(target_class)]() mutable {
      const S gv = out.grad()[0];
      auto& gp = probs.grad();
      const int K = probs.dim(1);
      for (int b = 0; b < B; ++b) {
        const int k = tc[static_cast<std::size_t>(b)];
        const S p = probs[static_cast<std::size_t>(b) * K + k];
        if (p > static_cast<S>(kFloor))
          gp[static_cast<std::size_t>(b) * K + k] -= gv / (p * S(B));
      }
    });
  return out;
}

}  // namespace fv
