#pragma once

#include <cmath>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "fv/error.hpp"
#include "fv/ops.hpp"
#include "fv/rng.hpp"
#include "fv/tensor.hpp"

// Network building blocks. Layers own their parameter tensors and expose
// visit_params / visit_buffers so the optimizer and checkpointing can walk
// every tensor by hierarchical name without knowing layer internals.

namespace fv {

template <class S>
using ParamVisitor = std::function<void(const std::string&, TensorT<S>&)>;

// ---------------------------------------------------------------------------
// initializers

template <class S>
void init_glorot_uniform(TensorT<S>& w, int fan_in, int fan_out, Rng& rng) {
  const double limit = std::sqrt(6.0 / (fan_in + fan_out));
  for (auto& v : w.data()) v = static_cast<S>(rng.uniform(-limit, limit));
}

template <class S>
void init_he_normal(TensorT<S>& w, int fan_in, Rng& rng) {
  const double stddev = std::sqrt(2.0 / fan_in);
  for (auto& v : w.data()) v = static_cast<S>(rng.normal(0.0, stddev));
}

template <class S>
void init_normal(TensorT<S>& w, double stddev, Rng& rng) {
  for (auto& v : w.data()) v = static_cast<S>(rng.normal(0.0, stddev));
}

// ---------------------------------------------------------------------------
// dense

template <class S>
struct RegularizerSpecT {
  S l2_kernel = S(0);
  S l2_activity = S(0);
  S l1_bias = S(0);

  bool any() const {
    return l2_kernel > S(0) || l2_activity > S(0) || l1_bias > S(0);
  }
  void validate() const {
    if (l2_kernel < S(0) || l2_activity < S(0) || l1_bias < S(0))
      throw ConfigError("regularizer coefficients must be >= 0");
  }
};

using RegularizerSpec = RegularizerSpecT<float>;

// Fully connected layer y = act(xW + b). The most recent post-activation
// output is kept so the activity regularizer can reach it after forward.
template <class S>
class DenseT {
 public:
  DenseT(int in, int out, Activation act, Rng& rng,
         RegularizerSpecT<S> reg = {})
      : in_(in),
        out_(out),
        act_(act),
        reg_(reg),
        W_(Shape{in, out}, S(0), true),
        b_(Shape{out}, S(0), true) {
    if (in < 1 || out < 1)
      throw ConfigError("dense layer dims must be >= 1, got " +
                        std::to_string(in) + "x" + std::to_string(out));
    reg_.validate();
    init_glorot_uniform(W_, in, out, rng);
  }

  TensorT<S> forward(GraphT<S>& g, TensorT<S> x) {
    if (x.rank() != 2 || x.dim(1) != in_)
      throw DimensionError("dense: input " + shape_str(x.shape()) +
                           " incompatible with weights " +
                           shape_str(W_.shape()));
    auto y = elementwise_activation(
        g, add_rowvec(g, matmul(g, x, W_), b_), act_);
    last_activity_ = y;
    return y;
  }

  // Appends this layer's penalty terms (scalar graph nodes) to `terms`.
  // The activity term is the batch mean of the squared post-activation
  // output, so it is batch-size independent.
  void penalty_terms(GraphT<S>& g, std::vector<TensorT<S>>& terms) {
    if (!reg_.any()) return;
    if (reg_.l2_kernel > S(0))
      terms.push_back(scale(g, sum_squares(g, W_), reg_.l2_kernel));
    if (reg_.l2_activity > S(0)) {
      if (!last_activity_.defined())
        throw StateError(
            "activity regularizer queried before any forward pass");
      const S batch = static_cast<S>(last_activity_.dim(0));
      terms.push_back(scale(g, sum_squares(g, last_activity_),
                            reg_.l2_activity / batch));
    }
    if (reg_.l1_bias > S(0))
      terms.push_back(scale(g, sum_abs(g, b_), reg_.l1_bias));
  }

  void visit_params(const std::string& prefix, const ParamVisitor<S>& fn) {
    fn(prefix + "/W", W_);
    fn(prefix + "/b", b_);
  }

  TensorT<S>& weights() { return W_; }
  TensorT<S>& bias() { return b_; }
  int out_width() const { return out_; }
  const RegularizerSpecT<S>& regularizers() const { return reg_; }

 private:
  int in_, out_;
  Activation act_;
  RegularizerSpecT<S> reg_;
  TensorT<S> W_, b_;
  TensorT<S> last_activity_;
};

// ---------------------------------------------------------------------------
// batch norm over [B x C] feature vectors

template <class S>
class BatchNormT {
 public:
  explicit BatchNormT(int channels, S momentum = S(0.99), S eps = S(0.001))
      : momentum_(momentum),
        eps_(eps),
        gamma_(Shape{channels}, S(1), true),
        beta_(Shape{channels}, S(0), true),
        running_mean_(Shape{channels}, S(0)),
        running_var_(Shape{channels}, S(1)) {
    if (channels < 1) throw ConfigError("batch norm needs >= 1 channel");
    if (momentum < S(0) || momentum >= S(1))
      throw ConfigError("batch norm momentum must lie in [0,1)");
  }

  TensorT<S> forward(GraphT<S>& g, TensorT<S> x, bool training) {
    if (!training)
      return batchnorm_infer(g, x, gamma_, beta_, running_mean_, running_var_,
                             eps_);
    auto y = batchnorm_train(g, x, gamma_, beta_, eps_);
    // Fold the batch moments (biased variance, matching normalization) into
    // the running statistics: running <- m*running + (1-m)*batch.
    const int B = x.dim(0), C = x.dim(1);
    for (int c = 0; c < C; ++c) {
      S mu = S(0);
      for (int b = 0; b < B; ++b) mu += x.at(b, c);
      mu /= S(B);
      S var = S(0);
      for (int b = 0; b < B; ++b) var += (x.at(b, c) - mu) * (x.at(b, c) - mu);
      var /= S(B);
      running_mean_[c] = momentum_ * running_mean_[c] + (S(1) - momentum_) * mu;
      running_var_[c] = momentum_ * running_var_[c] + (S(1) - momentum_) * var;
    }
    return y;
  }

  void visit_params(const std::string& prefix, const ParamVisitor<S>& fn) {
    fn(prefix + "/gamma", gamma_);
    fn(prefix + "/beta", beta_);
  }
  void visit_buffers(const std::string& prefix, const ParamVisitor<S>& fn) {
    fn(prefix + "/running_mean", running_mean_);
    fn(prefix + "/running_var", running_var_);
  }

  TensorT<S>& running_mean() { return running_mean_; }
  TensorT<S>& running_var() { return running_var_; }

 private:
  S momentum_, eps_;
  TensorT<S> gamma_, beta_, running_mean_, running_var_;
};

// ---------------------------------------------------------------------------
// layer norm over the last dimension

template <class S>
class LayerNormT {
 public:
  explicit LayerNormT(int dim, S eps = S(1e-5))
      : eps_(eps),
        gamma_(Shape{dim}, S(1), true),
        beta_(Shape{dim}, S(0), true) {}

  TensorT<S> forward(GraphT<S>& g, TensorT<S> x) {
    return layernorm(g, x, gamma_, beta_, eps_);
  }

  void visit_params(const std::string& prefix, const ParamVisitor<S>& fn) {
    fn(prefix + "/gamma", gamma_);
    fn(prefix + "/beta", beta_);
  }

 private:
  S eps_;
  TensorT<S> gamma_, beta_;
};

// ---------------------------------------------------------------------------
// convolution layers (single image [C x H x W])

template <class S>
class Conv2dT {
 public:
  Conv2dT(int in_ch, int out_ch, int k, int stride, int dilation, int padding,
          Rng& rng)
      : stride_(stride),
        dilation_(dilation),
        padding_(padding),
        kernel_(Shape{out_ch, in_ch, k, k}, S(0), true),
        bias_(Shape{out_ch}, S(0), true) {
    init_he_normal(kernel_, in_ch * k * k, rng);
  }

  TensorT<S> forward(GraphT<S>& g, TensorT<S> x) {
    return add_channel_bias(
        g, conv2d(g, x, kernel_, stride_, dilation_, padding_), bias_);
  }

  void visit_params(const std::string& prefix, const ParamVisitor<S>& fn) {
    fn(prefix + "/kernel", kernel_);
    fn(prefix + "/bias", bias_);
  }

  TensorT<S>& kernel() { return kernel_; }
  TensorT<S>& bias() { return bias_; }

 private:
  int stride_, dilation_, padding_;
  TensorT<S> kernel_, bias_;
};

// Depthwise 3x3 followed by a pointwise 1x1 projection.
template <class S>
class SeparableConv2dT {
 public:
  SeparableConv2dT(int in_ch, int out_ch, int k, int stride, int padding,
                   Rng& rng)
      : stride_(stride),
        padding_(padding),
        depthwise_(Shape{in_ch, k, k}, S(0), true),
        pointwise_(Shape{out_ch, in_ch, 1, 1}, S(0), true),
        bias_(Shape{out_ch}, S(0), true) {
    init_he_normal(depthwise_, k * k, rng);
    init_he_normal(pointwise_, in_ch, rng);
  }

  TensorT<S> forward(GraphT<S>& g, TensorT<S> x) {
    auto dw = conv2d_depthwise(g, x, depthwise_, stride_, padding_);
    return add_channel_bias(g, conv2d(g, dw, pointwise_, 1, 1, 0), bias_);
  }

  void visit_params(const std::string& prefix, const ParamVisitor<S>& fn) {
    fn(prefix + "/depthwise", depthwise_);
    fn(prefix + "/pointwise", pointwise_);
    fn(prefix + "/bias", bias_);
  }

 private:
  int stride_, padding_;
  TensorT<S> depthwise_, pointwise_, bias_;
};

// ---------------------------------------------------------------------------
// squeeze-and-excitation channel gate

// Channel recalibration: squeeze each channel to its spatial mean, pass the
// vector through a two-layer bottleneck ending in a sigmoid gate, and scale
// each input channel by its gate value. No bias terms.
template <class S>
class SEBlockT {
 public:
  SEBlockT(int channels, int reduction, Rng& rng)
      : channels_(channels),
        W1_(Shape{channels, bottleneck(channels, reduction)}, S(0), true),
        W2_(Shape{bottleneck(channels, reduction), channels}, S(0), true) {
    if (reduction < 1) throw ConfigError("SE reduction ratio must be >= 1");
    if (channels % reduction != 0)
      throw ConfigError("SE channels " + std::to_string(channels) +
                        " not divisible by reduction " +
                        std::to_string(reduction));
    const int mid = bottleneck(channels, reduction);
    init_glorot_uniform(W1_, channels, mid, rng);
    init_glorot_uniform(W2_, mid, channels, rng);
  }

  TensorT<S> forward(GraphT<S>& g, TensorT<S> f) {
    if (f.rank() != 3 || f.dim(0) != channels_)
      throw DimensionError("SE block expects " + std::to_string(channels_) +
                           " channels, got " + shape_str(f.shape()));
    auto squeezed = reshape(g, global_average_pool(g, f), Shape{1, channels_});
    auto gate = sigmoid(
        g, matmul(g, relu(g, matmul(g, squeezed, W1_)), W2_));
    return scale_channels(g, f, gate);
  }

  void visit_params(const std::string& prefix, const ParamVisitor<S>& fn) {
    fn(prefix + "/W1", W1_);
    fn(prefix + "/W2", W2_);
  }

  TensorT<S>& w1() { return W1_; }
  TensorT<S>& w2() { return W2_; }

 private:
  static int bottleneck(int channels, int reduction) {
    return std::max(1, channels / std::max(1, reduction));
  }
  int channels_;
  TensorT<S> W1_, W2_;
};

// ---------------------------------------------------------------------------
// atrous spatial pyramid

// Four parallel 3x3 convolutions at dilation rates 2/3/5/7 with
// padding = dilation (size-preserving), channel-concatenated and projected
// back down by a 1x1 convolution.
template <class S>
class AsppT {
 public:
  static constexpr int kRates[4] = {2, 3, 5, 7};

  AsppT(int in_ch, int branch_ch, int out_ch, Rng& rng) {
    branches_.reserve(4);
    for (int rate : kRates)
      branches_.emplace_back(in_ch, branch_ch, 3, 1, rate, rate, rng);
    project_.emplace(4 * branch_ch, out_ch, 1, 1, 1, 0, rng);
  }

  TensorT<S> forward(GraphT<S>& g, TensorT<S> x) {
    std::vector<TensorT<S>> outs;
    outs.reserve(4);
    for (auto& b : branches_) {
      auto y = b.forward(g, x);
      if (y.dim(1) != x.dim(1) || y.dim(2) != x.dim(2))
        throw DimensionError(
            "pyramid branch changed spatial shape: " + shape_str(y.shape()) +
            " from " + shape_str(x.shape()));
      outs.push_back(y);
    }
    return project_->forward(g, concat_channels(g, outs));
  }

  void visit_params(const std::string& prefix, const ParamVisitor<S>& fn) {
    for (std::size_t i = 0; i < branches_.size(); ++i)
      branches_[i].visit_params(prefix + "/branch" + std::to_string(i), fn);
    project_->visit_params(prefix + "/project", fn);
  }

  std::vector<Conv2dT<S>>& branches() { return branches_; }

 private:
  std::vector<Conv2dT<S>> branches_;
  std::optional<Conv2dT<S>> project_;
};

// ---------------------------------------------------------------------------
// patch embedding

// Splits the image into p x p patches, projects each flattened patch with a
// learned matrix, and adds a learned positional embedding per token.
template <class S>
class PatchEmbedT {
 public:
  PatchEmbedT(int channels, int image_size, int patch, int dim, Rng& rng)
      : channels_(channels),
        image_size_(image_size),
        patch_(patch),
        tokens_((image_size / patch) * (image_size / patch)),
        proj_(Shape{patch * patch * channels, dim}, S(0), true),
        pos_(Shape{tokens_, dim}, S(0), true) {
    if (patch < 1 || image_size % patch != 0)
      throw DimensionError("image size " + std::to_string(image_size) +
                           " not divisible by patch size " +
                           std::to_string(patch));
    init_glorot_uniform(proj_, patch * patch * channels, dim, rng);
    init_normal(pos_, 0.02, rng);
  }

  TensorT<S> forward(GraphT<S>& g, TensorT<S> img) {
    if (img.rank() != 3 || img.dim(0) != channels_ ||
        img.dim(1) != image_size_ || img.dim(2) != image_size_)
      throw DimensionError("patch embed configured for " +
                           std::to_string(channels_) + "x" +
                           std::to_string(image_size_) + "x" +
                           std::to_string(image_size_) + ", got " +
                           shape_str(img.shape()));
    return add(g, matmul(g, extract_patches(g, img, patch_), proj_), pos_);
  }

  void visit_params(const std::string& prefix, const ParamVisitor<S>& fn) {
    fn(prefix + "/proj", proj_);
    fn(prefix + "/pos", pos_);
  }

  int tokens() const { return tokens_; }

 private:
  int channels_, image_size_, patch_, tokens_;
  TensorT<S> proj_, pos_;
};

// ---------------------------------------------------------------------------
// multi-head self-attention

template <class S>
class AttentionT {
 public:
  AttentionT(int dim, int heads, Rng& rng)
      : dim_(dim),
        heads_(heads),
        Wq_(Shape{dim, dim}, S(0), true),
        Wk_(Shape{dim, dim}, S(0), true),
        Wv_(Shape{dim, dim}, S(0), true),
        Wo_(Shape{dim, dim}, S(0), true) {
    if (heads < 1 || dim % heads != 0)
      throw ConfigError("embed dim " + std::to_string(dim) +
                        " not divisible by head count " +
                        std::to_string(heads));
    for (auto* w : {&Wq_, &Wk_, &Wv_, &Wo_})
      init_glorot_uniform(*w, dim, dim, rng);
  }

  TensorT<S> forward(GraphT<S>& g, TensorT<S> x) {
    if (x.rank() != 2 || x.dim(1) != dim_)
      throw DimensionError("attention expects [Tx" + std::to_string(dim_) +
                           "], got " + shape_str(x.shape()));
    const int dh = dim_ / heads_;
    auto q = matmul(g, x, Wq_);
    auto k = matmul(g, x, Wk_);
    auto v = matmul(g, x, Wv_);
    std::vector<TensorT<S>> heads;
    heads.reserve(static_cast<std::size_t>(heads_));
    for (int h = 0; h < heads_; ++h) {
      auto qh = slice_cols(g, q, h * dh, dh);
      auto kh = slice_cols(g, k, h * dh, dh);
      auto vh = slice_cols(g, v, h * dh, dh);
      auto scores =
          scale(g, matmul_nt(g, qh, kh), S(1) / std::sqrt(static_cast<S>(dh)));
      last_weights_ = softmax(g, scores);
      heads.push_back(matmul(g, last_weights_, vh));
    }
    return matmul(g, concat_cols(g, heads), Wo_);
  }

  void visit_params(const std::string& prefix, const ParamVisitor<S>& fn) {
    fn(prefix + "/Wq", Wq_);
    fn(prefix + "/Wk", Wk_);
    fn(prefix + "/Wv", Wv_);
    fn(prefix + "/Wo", Wo_);
  }

  // Attention matrix of the last head processed, for diagnostics/tests.
  const TensorT<S>& last_attention_weights() const { return last_weights_; }
  TensorT<S>& wq() { return Wq_; }
  TensorT<S>& wv() { return Wv_; }
  TensorT<S>& wo() { return Wo_; }

 private:
  int dim_, heads_;
  TensorT<S> Wq_, Wk_, Wv_, Wo_;
  TensorT<S> last_weights_;
};

// ---------------------------------------------------------------------------
// pre-norm transformer block

// x + attn(LN(x)), then + MLP(LN(.)); the MLP widens to 4*dim with relu.
template <class S>
class TransformerBlockT {
 public:
  TransformerBlockT(int dim, int heads, Rng& rng)
      : ln1_(dim),
        attn_(dim, heads, rng),
        ln2_(dim),
        mlp1_(dim, 4 * dim, Activation::relu, rng),
        mlp2_(4 * dim, dim, Activation::none, rng) {}

  TensorT<S> forward(GraphT<S>& g, TensorT<S> x) {
    auto a = add(g, x, attn_.forward(g, ln1_.forward(g, x)));
    auto m = mlp2_.forward(g, mlp1_.forward(g, ln2_.forward(g, a)));
    return add(g, a, m);
  }

  void visit_params(const std::string& prefix, const ParamVisitor<S>& fn) {
    ln1_.visit_params(prefix + "/ln1", fn);
    attn_.visit_params(prefix + "/attn", fn);
    ln2_.visit_params(prefix + "/ln2", fn);
    mlp1_.visit_params(prefix + "/mlp1", fn);
    mlp2_.visit_params(prefix + "/mlp2", fn);
  }

  AttentionT<S>& attention() { return attn_; }

 private:
  LayerNormT<S> ln1_;
  AttentionT<S> attn_;
  LayerNormT<S> ln2_;
  DenseT<S> mlp1_, mlp2_;
};

}  // namespace fv
