#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "fv/error.hpp"
#include "fv/layers.hpp"
#include "fv/ops.hpp"
#include "fv/rng.hpp"
#include "fv/tensor.hpp"

// Model assembly: four CNN backbone flavors, the transformer stream, the
// concatenation-fusion classifier, and the soft-voting ensemble.

namespace fv {

enum class BackboneFlavor { plain, residual, dense_connected, depthwise_separable };

inline BackboneFlavor parse_flavor(const std::string& s) {
  if (s == "plain") return BackboneFlavor::plain;
  if (s == "residual") return BackboneFlavor::residual;
  if (s == "dense" || s == "dense_connected")
    return BackboneFlavor::dense_connected;
  if (s == "sep" || s == "depthwise_separable")
    return BackboneFlavor::depthwise_separable;
  throw ConfigError("unknown backbone flavor '" + s +
                    "' (plain|residual|dense|sep)");
}

inline std::string flavor_name(BackboneFlavor f) {
  switch (f) {
    case BackboneFlavor::plain: return "plain";
    case BackboneFlavor::residual: return "residual";
    case BackboneFlavor::dense_connected: return "dense";
    case BackboneFlavor::depthwise_separable: return "sep";
  }
  throw ConfigError("unknown backbone flavor value");
}

// ---------------------------------------------------------------------------
// model configuration

// Everything needed to rebuild a model architecture; echoed into checkpoints
// as key=value text so loads can validate compatibility.
struct ModelConfig {
  int num_classes = 8;
  int channels = 3;
  int image_size = 32;
  int final_spatial = 8;
  BackboneFlavor flavor = BackboneFlavor::plain;

  int patch_size = 4;
  int embed_dim = 16;
  int heads = 2;
  int depth = 2;

  int backbone_channels = 16;
  int dense_base = 4;
  int dense_growth = 4;
  int dense_layers = 3;
  int aspp_branch_channels = 4;
  int aspp_out_channels = 8;
  int se_reduction = 4;

  double width_factor = 0.25;
  double l2_kernel = 0.016;
  double l2_activity = 0.006;
  double l1_bias = 0.006;

  std::uint64_t init_seed = 1;

  // Head widths: the full-scale 512/256/121 stack scaled by width_factor.
  int mlp_width(int full) const {
    return std::max(1, static_cast<int>(full * width_factor));
  }
  int w1() const { return mlp_width(512); }
  int w2() const { return mlp_width(256); }
  int w3() const { return mlp_width(121); }

  void validate() const {
    if (num_classes < 2) throw ConfigError("num_classes must be >= 2");
    if (channels < 1) throw ConfigError("channels must be >= 1");
    if (width_factor <= 0) throw ConfigError("width_factor must be > 0");
    if (depth < 1) throw ConfigError("transformer depth must be >= 1");
    if (l2_kernel < 0 || l2_activity < 0 || l1_bias < 0)
      throw ConfigError("regularizer coefficients must be >= 0");
    if (dense_base + dense_growth * dense_layers != backbone_channels)
      throw ConfigError(
          "dense_connected channel bookkeeping: base + growth*layers must "
          "equal backbone_channels (" +
          std::to_string(dense_base) + " + " + std::to_string(dense_growth) +
          "*" + std::to_string(dense_layers) +
          " != " + std::to_string(backbone_channels) + ")");
  }

  std::string to_kv() const {
    std::ostringstream os;
    os << "num_classes=" << num_classes << "\n"
       << "channels=" << channels << "\n"
       << "image_size=" << image_size << "\n"
       << "final_spatial=" << final_spatial << "\n"
       << "flavor=" << flavor_name(flavor) << "\n"
       << "patch_size=" << patch_size << "\n"
       << "embed_dim=" << embed_dim << "\n"
       << "heads=" << heads << "\n"
       << "depth=" << depth << "\n"
       << "backbone_channels=" << backbone_channels << "\n"
       << "dense_base=" << dense_base << "\n"
       << "dense_growth=" << dense_growth << "\n"
       << "dense_layers=" << dense_layers << "\n"
       << "aspp_branch_channels=" << aspp_branch_channels << "\n"
       << "aspp_out_channels=" << aspp_out_channels << "\n"
       << "se_reduction=" << se_reduction << "\n"
       << "width_factor=" << width_factor << "\n"
       << "l2_kernel=" << l2_kernel << "\n"
       << "l2_activity=" << l2_activity << "\n"
       << "l1_bias=" << l1_bias << "\n"
       << "init_seed=" << init_seed << "\n";
    return os.str();
  }

  static ModelConfig from_kv(const std::string& text) {
    ModelConfig c;
    std::istringstream is(text);
    std::string line;
    while (std::getline(is, line)) {
      if (line.empty() || line[0] == '#') continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos)
        throw ConfigError("malformed model config line: '" + line + "'");
      const std::string key = line.substr(0, eq);
      const std::string val = line.substr(eq + 1);
      if (key == "num_classes") c.num_classes = std::stoi(val);
      else if (key == "channels") c.channels = std::stoi(val);
      else if (key == "image_size") c.image_size = std::stoi(val);
      else if (key == "final_spatial") c.final_spatial = std::stoi(val);
      else if (key == "flavor") c.flavor = parse_flavor(val);
      else if (key == "patch_size") c.patch_size = std::stoi(val);
      else if (key == "embed_dim") c.embed_dim = std::stoi(val);
      else if (key == "heads") c.heads = std::stoi(val);
      else if (key == "depth") c.depth = std::stoi(val);
      else if (key == "backbone_channels") c.backbone_channels = std::stoi(val);
      else if (key == "dense_base") c.dense_base = std::stoi(val);
      else if (key == "dense_growth") c.dense_growth = std::stoi(val);
      else if (key == "dense_layers") c.dense_layers = std::stoi(val);
      else if (key == "aspp_branch_channels")
        c.aspp_branch_channels = std::stoi(val);
      else if (key == "aspp_out_channels") c.aspp_out_channels = std::stoi(val);
      else if (key == "se_reduction") c.se_reduction = std::stoi(val);
      else if (key == "width_factor") c.width_factor = std::stod(val);
      else if (key == "l2_kernel") c.l2_kernel = std::stod(val);
      else if (key == "l2_activity") c.l2_activity = std::stod(val);
      else if (key == "l1_bias") c.l1_bias = std::stod(val);
      else if (key == "init_seed") c.init_seed = std::stoull(val);
      else throw ConfigError("unknown model config key '" + key + "'");
    }
    c.validate();
    return c;
  }
};

// ---------------------------------------------------------------------------
// backbone

// Shared geometry: a stem at stride 1, then stride-2 stages down to
// final_spatial. All flavors emit `channels` feature maps.
template <class S>
class BackboneT {
 public:
  BackboneT(const ModelConfig& cfg, Rng& rng)
      : flavor_(cfg.flavor),
        channels_(cfg.backbone_channels),
        stages_(count_stages(cfg.image_size, cfg.final_spatial)) {
    const int stages = stages_;
    const int C = cfg.backbone_channels;
    switch (flavor_) {
      case BackboneFlavor::plain:
        convs_.emplace_back(cfg.channels, C, 3, 1, 1, 1, rng);
        for (int s = 0; s < stages; ++s)
          convs_.emplace_back(C, C, 3, 2, 1, 1, rng);
        break;
      case BackboneFlavor::residual:
        convs_.emplace_back(cfg.channels, C, 3, 1, 1, 1, rng);
        for (int s = 0; s < stages; ++s) {
          convs_.emplace_back(C, C, 3, 2, 1, 1, rng);  // downsample
          convs_.emplace_back(C, C, 3, 1, 1, 1, rng);  // residual pair a
          convs_.emplace_back(C, C, 3, 1, 1, 1, rng);  // residual pair b
        }
        break;
      case BackboneFlavor::dense_connected: {
        convs_.emplace_back(cfg.channels, cfg.dense_base, 3, 1, 1, 1, rng);
        int cur = cfg.dense_base;
        for (int l = 0; l < cfg.dense_layers; ++l) {
          convs_.emplace_back(cur, cfg.dense_growth, 3, 1, 1, 1, rng);
          cur += cfg.dense_growth;
        }
        for (int s = 0; s < stages; ++s)
          convs_.emplace_back(C, C, 3, 2, 1, 1, rng);
        break;
      }
      case BackboneFlavor::depthwise_separable:
        convs_.emplace_back(cfg.channels, C, 3, 1, 1, 1, rng);
        for (int s = 0; s < stages; ++s)
          seps_.emplace_back(C, C, 3, 2, 1, rng);
        seps_.emplace_back(C, C, 3, 1, 1, rng);
        break;
    }
  }

  TensorT<S> forward(GraphT<S>& g, TensorT<S> img) {
    switch (flavor_) {
      case BackboneFlavor::plain: {
        auto x = img;
        for (auto& c : convs_) x = relu(g, c.forward(g, x));
        return x;
      }
      case BackboneFlavor::residual: {
        auto x = relu(g, convs_[0].forward(g, img));
        for (std::size_t i = 1; i + 2 < convs_.size(); i += 3) {
          x = relu(g, convs_[i].forward(g, x));
          x = residual_block(g, x, convs_[i + 1], convs_[i + 2]);
        }
        return x;
      }
      case BackboneFlavor::dense_connected: {
        const std::size_t block_layers = convs_.size() - 1;
        auto x = relu(g, convs_[0].forward(g, img));
        std::size_t i = 1;
        // densely connected block: each layer sees all prior features
        const std::size_t growth_layers =
            block_layers - static_cast<std::size_t>(stage_count());
        for (std::size_t l = 0; l < growth_layers; ++l, ++i) {
          auto nxt = relu(g, convs_[i].forward(g, x));
          x = concat_channels(g, {x, nxt});
        }
        for (; i < convs_.size(); ++i) x = relu(g, convs_[i].forward(g, x));
        return x;
      }
      case BackboneFlavor::depthwise_separable: {
        auto x = relu(g, convs_[0].forward(g, img));
        for (auto& sconv : seps_) x = relu(g, sconv.forward(g, x));
        return x;
      }
    }
    throw ConfigError("unknown backbone flavor value");
  }

  // Post-activation residual unit: relu(x + c2(relu(c1(x)))).
  static TensorT<S> residual_block(GraphT<S>& g, TensorT<S> x, Conv2dT<S>& c1,
                                   Conv2dT<S>& c2) {
    return relu(g, add(g, x, c2.forward(g, relu(g, c1.forward(g, x)))));
  }

  void visit_params(const std::string& prefix, const ParamVisitor<S>& fn) {
    for (std::size_t i = 0; i < convs_.size(); ++i)
      convs_[i].visit_params(prefix + "/conv" + std::to_string(i), fn);
    for (std::size_t i = 0; i < seps_.size(); ++i)
      seps_[i].visit_params(prefix + "/sep" + std::to_string(i), fn);
  }

  int out_channels() const { return channels_; }

  static int count_stages(int image_size, int final_spatial) {
    if (image_size < 16)
      throw DimensionError("backbone input spatial " +
                           std::to_string(image_size) +
                           " too small: needs >= 16x16");
    int sz = image_size, stages = 0;
    while (sz > final_spatial) {
      if (sz % 2 != 0)
        throw DimensionError("backbone cannot halve " + std::to_string(sz) +
                             " down to " + std::to_string(final_spatial));
      sz /= 2;
      ++stages;
    }
    if (sz != final_spatial || stages < 1)
      throw DimensionError("backbone input " + std::to_string(image_size) +
                           " incompatible with final spatial size " +
                           std::to_string(final_spatial));
    return stages;
  }

 private:
  int stage_count() const {
    // Only needed for the dense flavor; recovered from layer bookkeeping in
    // forward, stored at construction for clarity.
    return stages_;
  }

  BackboneFlavor flavor_;
  int channels_;
  int stages_ = 0;
  std::vector<Conv2dT<S>> convs_;
  std::vector<SeparableConv2dT<S>> seps_;
};

// ---------------------------------------------------------------------------
// streams

// Transformer stream: patch embedding, pre-norm blocks, token mean pooling,
// then BN + 3-layer MLP head (regularizers on the first layer only).
template <class S>
class TransformerStreamT {
 public:
  TransformerStreamT(const ModelConfig& cfg, Rng& rng)
      : embed_(cfg.channels, cfg.image_size, cfg.patch_size, cfg.embed_dim,
               rng),
        bn_(cfg.embed_dim) {
    for (int d = 0; d < cfg.depth; ++d)
      blocks_.emplace_back(cfg.embed_dim, cfg.heads, rng);
    const RegularizerSpecT<S> reg{static_cast<S>(cfg.l2_kernel),
                                  static_cast<S>(cfg.l2_activity),
                                  static_cast<S>(cfg.l1_bias)};
    mlp_.emplace_back(cfg.embed_dim, cfg.w1(), Activation::relu, rng, reg);
    mlp_.emplace_back(cfg.w1(), cfg.w2(), Activation::relu, rng);
    mlp_.emplace_back(cfg.w2(), cfg.w3(), Activation::relu, rng);
  }

  // Per-image feature vector [embed_dim].
  TensorT<S> features(GraphT<S>& g, TensorT<S> img) {
    auto tok = embed_.forward(g, img);
    for (auto& b : blocks_) tok = b.forward(g, tok);
    return mean_rows(g, tok);
  }

  // Batched head over stacked features [B x embed_dim] -> [B x w3].
  TensorT<S> head(GraphT<S>& g, TensorT<S> pooled, bool training) {
    auto x = bn_.forward(g, pooled, training);
    for (auto& l : mlp_) x = l.forward(g, x);
    return x;
  }

  void penalty_terms(GraphT<S>& g, std::vector<TensorT<S>>& terms) {
    for (auto& l : mlp_) l.penalty_terms(g, terms);
  }

  void visit_params(const std::string& prefix, const ParamVisitor<S>& fn) {
    embed_.visit_params(prefix + "/embed", fn);
    for (std::size_t i = 0; i < blocks_.size(); ++i)
      blocks_[i].visit_params(prefix + "/block" + std::to_string(i), fn);
    bn_.visit_params(prefix + "/bn", fn);
    for (std::size_t i = 0; i < mlp_.size(); ++i)
      mlp_[i].visit_params(prefix + "/mlp" + std::to_string(i), fn);
  }
  void visit_buffers(const std::string& prefix, const ParamVisitor<S>& fn) {
    bn_.visit_buffers(prefix + "/bn", fn);
  }

  int out_width() const { return mlp_.back().out_width(); }

 private:
  PatchEmbedT<S> embed_;
  std::vector<TransformerBlockT<S>> blocks_;
  BatchNormT<S> bn_;
  std::vector<DenseT<S>> mlp_;
};

// CNN stream: backbone -> spatial pyramid -> SE gate -> GAP -> BN -> MLP,
// with the spatial intermediates retained as named taps for explanations.
template <class S>
class CnnStreamT {
 public:
  CnnStreamT(const ModelConfig& cfg, Rng& rng)
      : backbone_(cfg, rng),
        aspp_(cfg.backbone_channels, cfg.aspp_branch_channels,
              cfg.aspp_out_channels, rng),
        se_(cfg.aspp_out_channels, cfg.se_reduction, rng),
        bn_(cfg.aspp_out_channels) {
    const RegularizerSpecT<S> reg{static_cast<S>(cfg.l2_kernel),
                                  static_cast<S>(cfg.l2_activity),
                                  static_cast<S>(cfg.l1_bias)};
    mlp_.emplace_back(cfg.aspp_out_channels, cfg.w1(), Activation::relu, rng,
                      reg);
    mlp_.emplace_back(cfg.w1(), cfg.w2(), Activation::relu, rng);
    mlp_.emplace_back(cfg.w2(), cfg.w3(), Activation::relu, rng);
  }

  TensorT<S> features(GraphT<S>& g, TensorT<S> img) {
    auto b = backbone_.forward(g, img);
    auto a = aspp_.forward(g, b);
    auto s = se_.forward(g, a);
    taps_["backbone"] = b;
    taps_["aspp"] = a;
    taps_["se"] = s;
    return global_average_pool(g, s);
  }

  TensorT<S> head(GraphT<S>& g, TensorT<S> pooled, bool training) {
    auto x = bn_.forward(g, pooled, training);
    for (auto& l : mlp_) x = l.forward(g, x);
    return x;
  }

  void penalty_terms(GraphT<S>& g, std::vector<TensorT<S>>& terms) {
    for (auto& l : mlp_) l.penalty_terms(g, terms);
  }

  // Spatial feature maps captured during the most recent features() call.
  const std::map<std::string, TensorT<S>>& taps() const { return taps_; }

  void visit_params(const std::string& prefix, const ParamVisitor<S>& fn) {
    backbone_.visit_params(prefix + "/backbone", fn);
    aspp_.visit_params(prefix + "/aspp", fn);
    se_.visit_params(prefix + "/se", fn);
    bn_.visit_params(prefix + "/bn", fn);
    for (std::size_t i = 0; i < mlp_.size(); ++i)
      mlp_[i].visit_params(prefix + "/mlp" + std::to_string(i), fn);
  }
  void visit_buffers(const std::string& prefix, const ParamVisitor<S>& fn) {
    bn_.visit_buffers(prefix + "/bn", fn);
  }

  int out_width() const { return mlp_.back().out_width(); }

 private:
  BackboneT<S> backbone_;
  AsppT<S> aspp_;
  SEBlockT<S> se_;
  BatchNormT<S> bn_;
  std::vector<DenseT<S>> mlp_;
  std::map<std::string, TensorT<S>> taps_;
};

// ---------------------------------------------------------------------------
// fusion model

template <class S>
class FusionModelT {
 public:
  explicit FusionModelT(const ModelConfig& cfg)
      : cfg_(cfg), init_rng_(mix_seed(cfg.init_seed)) {
    cfg_.validate();
    tstream_.emplace(cfg_, init_rng_);
    cstream_.emplace(cfg_, init_rng_);
    head_.emplace(tstream_->out_width() + cstream_->out_width(),
                  cfg_.num_classes, Activation::none, init_rng_);
  }

  // Class probabilities [B x num_classes] for a batch of [C x H x W] images.
  TensorT<S> forward_batch(GraphT<S>& g, const std::vector<TensorT<S>>& imgs,
                           bool training) {
    return softmax(g, forward_logits(g, imgs, training));
  }

  // Pre-softmax logits; kept separate so explanations can differentiate a
  // single class score.
  TensorT<S> forward_logits(GraphT<S>& g, const std::vector<TensorT<S>>& imgs,
                            bool training) {
    if (imgs.empty()) throw ContractError("forward: empty image batch");
    std::vector<TensorT<S>> trows, crows;
    trows.reserve(imgs.size());
    crows.reserve(imgs.size());
    for (const auto& img : imgs) {
      trows.push_back(tstream_->features(g, img));
      crows.push_back(cstream_->features(g, img));
    }
    auto t = tstream_->head(g, stack_rows(g, trows), training);
    auto c = cstream_->head(g, stack_rows(g, crows), training);
    return head_->forward(g, concat_cols(g, {t, c}));
  }

  // Single-image convenience: probabilities as a flat [num_classes] vector.
  TensorT<S> forward_single(GraphT<S>& g, TensorT<S> img,
                            bool training = false) {
    auto p = forward_batch(g, {img}, training);
    return reshape(g, p, Shape{cfg_.num_classes});
  }

  // Scalar penalty: sum over regularized layers of the kernel/activity/bias
  // terms. Requires a prior forward pass when activity terms are active.
  TensorT<S> regularization_penalty(GraphT<S>& g) {
    std::vector<TensorT<S>> terms;
    tstream_->penalty_terms(g, terms);
    cstream_->penalty_terms(g, terms);
    if (terms.empty()) return TensorT<S>(Shape{1}, S(0));
    auto total = terms[0];
    for (std::size_t i = 1; i < terms.size(); ++i)
      total = add(g, total, terms[i]);
    return total;
  }

  void visit_params(const ParamVisitor<S>& fn) {
    tstream_->visit_params("t", fn);
    cstream_->visit_params("c", fn);
    head_->visit_params("head", fn);
  }
  void visit_buffers(const ParamVisitor<S>& fn) {
    tstream_->visit_buffers("t", fn);
    cstream_->visit_buffers("c", fn);
  }

  // Feature-extractor parameters (frozen when freeze_extractors is set):
  // the patch embedding and the CNN backbone.
  static bool is_extractor_param(const std::string& name) {
    return name.rfind("t/embed/", 0) == 0 || name.rfind("c/backbone/", 0) == 0;
  }

  std::int64_t count_trainable() {
    std::int64_t n = 0;
    visit_params([&](const std::string&, TensorT<S>& t) { n += t.numel(); });
    return n;
  }

  // Named spatial tap from the CNN stream's latest forward pass.
  TensorT<S> tap(const std::string& name) const {
    const auto& taps = cstream_->taps();
    auto it = taps.find(name);
    if (it == taps.end()) {
      std::string valid;
      for (const auto& [k, v] : taps) valid += (valid.empty() ? "" : ", ") + k;
      if (valid.empty()) valid = "backbone, aspp, se (after a forward pass)";
      throw ConfigError("unknown explanation layer '" + name +
                        "'; valid layers: " + valid);
    }
    return it->second;
  }

  const ModelConfig& config() const { return cfg_; }
  DenseT<S>& head() { return *head_; }

 private:
  ModelConfig cfg_;
  Rng init_rng_;
  std::optional<TransformerStreamT<S>> tstream_;
  std::optional<CnnStreamT<S>> cstream_;
  std::optional<DenseT<S>> head_;
};

// ---------------------------------------------------------------------------
// soft voting

template <class S>
int argmax_lowest(const TensorT<S>& v) {
  int best = 0;
  for (std::int64_t i = 1; i < v.numel(); ++i)
    if (v[i] > v[best]) best = static_cast<int>(i);
  return best;
}

template <class S>
struct VoteResultT {
  int label = 0;
  TensorT<S> combined;  // elementwise sum of member distributions
};

// Sums the member distributions (no renormalization) and returns the argmax
// label with ties broken toward the lowest class index.
template <class S>
VoteResultT<S> soft_vote(const std::vector<TensorT<S>>& member_probs,
                         std::size_t expected_members = 4) {
  if (member_probs.size() != expected_members)
    throw ContractError("soft vote expects exactly " +
                        std::to_string(expected_members) +
                        " member distributions, got " +
                        std::to_string(member_probs.size()));
  const std::int64_t K = member_probs[0].numel();
  VoteResultT<S> result;
  result.combined = TensorT<S>(Shape{static_cast<int>(K)});
  for (std::size_t m = 0; m < member_probs.size(); ++m) {
    const auto& p = member_probs[m];
    if (p.numel() != K)
      throw DimensionError("soft vote: member " + std::to_string(m) +
                           " has " + std::to_string(p.numel()) +
                           " classes, expected " + std::to_string(K));
    S sum = S(0);
    for (std::int64_t i = 0; i < K; ++i) sum += p[i];
    if (std::abs(static_cast<double>(sum) - 1.0) > 1e-4)
      throw ContractError("soft vote: member " + std::to_string(m) +
                          " distribution sums to " +
                          std::to_string(static_cast<double>(sum)));
    for (std::int64_t i = 0; i < K; ++i) result.combined[i] += p[i];
  }
  result.label = argmax_lowest(result.combined);
  return result;
}

// ---------------------------------------------------------------------------
// ensemble

template <class S>
struct EnsemblePredictionT {
  int label = 0;
  TensorT<S> combined;
  std::vector<TensorT<S>> per_member;
};

template <class S>
class EnsembleT {
 public:
  explicit EnsembleT(std::size_t expected_members = 4)
      : expected_(expected_members) {}

  void add_member(FusionModelT<S> m) {
    if (!members_.empty()) {
      if (m.config().num_classes != members_.front().config().num_classes)
        throw ConfigError("ensemble members disagree on num_classes");
      for (const auto& existing : members_)
        if (existing.config().flavor == m.config().flavor)
          throw ConfigError("ensemble members must have distinct backbone "
                            "flavors; duplicate '" +
                            flavor_name(m.config().flavor) + "'");
    }
    members_.push_back(std::move(m));
  }

  EnsemblePredictionT<S> predict(TensorT<S> img) {
    if (members_.size() != expected_)
      throw StateError("ensemble has " + std::to_string(members_.size()) +
                       " of " + std::to_string(expected_) +
                       " members loaded");
    EnsemblePredictionT<S> out;
    out.per_member.reserve(members_.size());
    for (auto& m : members_) {
      GraphT<S> g(false);  // inference: no tape
      out.per_member.push_back(m.forward_single(g, img, false));
    }
    auto vote = soft_vote(out.per_member, expected_);
    out.label = vote.label;
    out.combined = vote.combined;
    return out;
  }

  std::vector<FusionModelT<S>>& members() { return members_; }
  std::size_t expected_members() const { return expected_; }

 private:
  std::size_t expected_;
  std::vector<FusionModelT<S>> members_;
};

using FusionModel = FusionModelT<float>;
using Ensemble = EnsembleT<float>;

}  // namespace fv
