#include "fv/train.hpp"

#include <cmath>
#include <sstream>
#include <string>
#include <vector>

#include "fv/csv.hpp"
#include "fv/ops.hpp"
#include "fv/rng.hpp"

namespace fv {

std::vector<NamedParam> collect_params(FusionModel& model,
                                       bool include_frozen) {
  std::vector<NamedParam> out;
  model.visit_params([&](const std::string& name, Tensor& t) {
    if (include_frozen || !FusionModel::is_extractor_param(name))
      out.push_back({name, t});
  });
  return out;
}

void adam_step(AdamState& st, std::vector<NamedParam>& params, double lr) {
  if (lr <= 0.0) throw ConfigError("adam: lr must be > 0");
  st.t += 1;
  const double bc1 = 1.0 - std::pow(AdamState::beta1, static_cast<double>(st.t));
  const double bc2 = 1.0 - std::pow(AdamState::beta2, static_cast<double>(st.t));
  for (auto& p : params) {
    Tensor& m = st.m[p.name];
    Tensor& v = st.v[p.name];
    if (!m.defined()) {
      m = Tensor::zeros(p.tensor.shape());
      v = Tensor::zeros(p.tensor.shape());
    } else if (m.shape() != p.tensor.shape()) {
      throw DimensionError("adam: moment shape " + shape_str(m.shape()) +
                           " does not match parameter '" + p.name + "' " +
                           shape_str(p.tensor.shape()));
    }
    const auto& grad = p.tensor.grad();
    for (std::int64_t i = 0; i < p.tensor.numel(); ++i) {
      const double g = grad[static_cast<std::size_t>(i)];
      const double mi = AdamState::beta1 * m[i] + (1.0 - AdamState::beta1) * g;
      const double vi =
          AdamState::beta2 * v[i] + (1.0 - AdamState::beta2) * g * g;
      m[i] = static_cast<float>(mi);
      v[i] = static_cast<float>(vi);
      const double m_hat = mi / bc1;
      const double v_hat = vi / bc2;
      p.tensor[i] = static_cast<float>(
          p.tensor[i] - lr * m_hat / (std::sqrt(v_hat) + AdamState::eps));
    }
  }
}

namespace {

Tensor one_hot(const std::vector<int>& labels, int num_classes) {
  Tensor t(Shape{static_cast<int>(labels.size()), num_classes});
  for (std::size_t b = 0; b < labels.size(); ++b)
    t.at(static_cast<int>(b), labels[b]) = 1.0f;
  return t;
}

// Mean CE + penalty over a dataset in inference mode, weighted by batch size.
double evaluate_loss(FusionModel& model, const std::vector<Tensor>& xs,
                     const std::vector<int>& labels, int batch_size,
                     int num_classes) {
  if (xs.empty()) return 0.0;
  double weighted = 0.0;
  for (std::size_t start = 0; start < xs.size();
       start += static_cast<std::size_t>(batch_size)) {
    const std::size_t stop =
        std::min(xs.size(), start + static_cast<std::size_t>(batch_size));
    std::vector<Tensor> batch(xs.begin() + static_cast<std::ptrdiff_t>(start),
                              xs.begin() + static_cast<std::ptrdiff_t>(stop));
    std::vector<int> ls(labels.begin() + static_cast<std::ptrdiff_t>(start),
                        labels.begin() + static_cast<std::ptrdiff_t>(stop));
    Graph g(false);
    auto probs = model.forward_batch(g, batch, false);
    auto ce = cross_entropy_from_probs(g, probs, one_hot(ls, num_classes));
    auto loss = add(g, ce, model.regularization_penalty(g));
    weighted += static_cast<double>(loss[0]) * static_cast<double>(ls.size());
  }
  return weighted / static_cast<double>(xs.size());
}

}  // namespace

TrainResult train_fusion_model(FusionModel& model, AdamState& adam,
                               const SplitDataset& data,
                               const PreprocessConfig& pre,
                               const TrainConfig& cfg) {
  cfg.validate();
  pre.validate();
  const int K = model.config().num_classes;
  const std::size_t n_train = data.train.items.size();
  if (n_train == 0) throw ConfigError("training set is empty");
  if (n_train < static_cast<std::size_t>(cfg.batch_size))
    throw ConfigError("training set has " + std::to_string(n_train) +
                      " items, fewer than one batch of " +
                      std::to_string(cfg.batch_size));
  for (const auto& item : data.train.items)
    if (item.label < 0 || item.label >= K)
      throw ConfigError("training label " + std::to_string(item.label) +
                        " outside [0," + std::to_string(K) + ")");

  // Preprocess once. Unit-mode images are kept for augmentation; tensors are
  // cached for the non-augmented path and for the test set.
  std::vector<Image> train_unit;
  std::vector<Tensor> train_x;
  std::vector<int> train_y;
  train_unit.reserve(n_train);
  train_x.reserve(n_train);
  for (const auto& item : data.train.items) {
    Image u = preprocess(item.image, pre);
    train_x.push_back(image_to_tensor(u));
    train_unit.push_back(std::move(u));
    train_y.push_back(item.label);
  }
  std::vector<Tensor> test_x;
  std::vector<int> test_y;
  for (const auto& item : data.test.items) {
    test_x.push_back(image_to_tensor(preprocess(item.image, pre)));
    test_y.push_back(item.label);
  }

  auto all_params = collect_params(model, true);
  auto trainable = collect_params(model, !cfg.freeze_extractors);

  Rng shuffle_rng(derive_seed(cfg.seed, 0x50f1e));
  TrainResult result;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::vector<std::size_t> perm(n_train);
    for (std::size_t i = 0; i < n_train; ++i) perm[i] = i;
    for (std::size_t i = n_train - 1; i > 0; --i) {
      const std::size_t j = static_cast<std::size_t>(shuffle_rng.below(i + 1));
      std::swap(perm[i], perm[j]);
    }

    // Batch boundaries: full batches, trailing partial kept, except a
    // trailing singleton which joins the previous batch.
    std::vector<std::size_t> starts;
    for (std::size_t s = 0; s < n_train;
         s += static_cast<std::size_t>(cfg.batch_size))
      starts.push_back(s);
    if (starts.size() > 1 && n_train - starts.back() == 1) starts.pop_back();

    double weighted_loss = 0.0;
    for (std::size_t bi = 0; bi < starts.size(); ++bi) {
      const std::size_t start = starts[bi];
      const std::size_t stop =
          (bi + 1 < starts.size()) ? starts[bi + 1] : n_train;

      std::vector<Tensor> batch;
      std::vector<int> labels;
      batch.reserve(stop - start);
      for (std::size_t k = start; k < stop; ++k) {
        const std::size_t idx = perm[k];
        if (cfg.augment) {
          Rng aug_rng(derive_seed(cfg.seed, 0xA6A,
                                  static_cast<std::uint64_t>(epoch), idx));
          batch.push_back(
              image_to_tensor(augment(train_unit[idx], cfg.augment_cfg,
                                      aug_rng)));
        } else {
          batch.push_back(train_x[idx]);
        }
        labels.push_back(train_y[idx]);
      }

      for (auto& p : all_params) p.tensor.zero_grad();
      Graph g(true);
      auto probs = model.forward_batch(g, batch, true);
      auto ce = cross_entropy_from_probs(g, probs, one_hot(labels, K));
      auto loss = add(g, ce, model.regularization_penalty(g));
      g.backward(loss);
      adam_step(adam, trainable, cfg.lr);
      weighted_loss +=
          static_cast<double>(loss[0]) * static_cast<double>(labels.size());
    }

    EpochStats stats;
    stats.train_loss = weighted_loss / static_cast<double>(n_train);
    stats.test_loss = evaluate_loss(model, test_x, test_y, cfg.batch_size, K);
    result.history.push_back(stats);
  }

  std::ostringstream os;
  os.imbue(std::locale::classic());
  os << shuffle_rng.engine();
  result.final_rng_state = os.str();
  return result;
}

void write_loss_csv(const std::string& path,
                    const std::vector<EpochStats>& history) {
  std::string out = "epoch,train_loss,test_loss\n";
  for (std::size_t e = 0; e < history.size(); ++e) {
    out += std::to_string(e + 1) + "," + format_g(history[e].train_loss) +
           "," + format_g(history[e].test_loss) + "\n";
  }
  write_file_atomic(path, out);
}

}  // namespace fv
