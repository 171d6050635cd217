#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "fv/dataset.hpp"
#include "fv/error.hpp"
#include "fv/image.hpp"
#include "fv/model.hpp"
#include "fv/tensor.hpp"

// Training loop: Adam, mini-batch schedule, optional augmentation, optional
// extractor freezing, and per-epoch train/test loss history.

namespace fv {

struct TrainConfig {
  double lr = 0.001;
  int batch_size = 16;  // toy default; full-scale runs would use 64
  int epochs = 20;
  std::uint64_t seed = 1;
  bool freeze_extractors = false;
  double width_factor = 0.25;
  bool augment = false;
  AugmentConfig augment_cfg{};

  void validate() const {
    if (lr <= 0.0) throw ConfigError("lr must be > 0");
    if (epochs < 1) throw ConfigError("epochs must be >= 1");
    if (batch_size < 2)
      throw ConfigError("batch_size must be >= 2 (batch statistics)");
    if (width_factor <= 0.0) throw ConfigError("width_factor must be > 0");
    augment_cfg.validate();
  }
};

struct NamedParam {
  std::string name;
  Tensor tensor;
};

// All parameters in deterministic visit order; set include_frozen=false to
// get only the tensors the optimizer may touch under freeze_extractors.
std::vector<NamedParam> collect_params(FusionModel& model,
                                       bool include_frozen = true);

struct AdamState {
  static constexpr double beta1 = 0.9;
  static constexpr double beta2 = 0.999;
  static constexpr double eps = 1e-8;
  std::int64_t t = 0;
  std::map<std::string, Tensor> m, v;  // first/second moments per parameter
};

// One bias-corrected Adam update over `params`; increments t exactly once.
// Moments are created lazily and keyed by parameter name.
void adam_step(AdamState& st, std::vector<NamedParam>& params, double lr);

struct EpochStats {
  double train_loss = 0.0;
  double test_loss = 0.0;
};

struct TrainResult {
  std::vector<EpochStats> history;  // one entry per epoch
  std::string final_rng_state;      // shuffle stream, for checkpointing
};

// Runs `cfg.epochs` over `data.train`, evaluating `data.test` each epoch.
// Losses are cross-entropy plus the regularization penalty (both sides, so
// the two curves are comparable). Raw images are preprocessed once with
// `pre`; augmentation (when enabled) re-warps each training image every
// epoch from a substream derived from (seed, epoch, item). Mini-batches
// follow a fresh seeded shuffle per epoch; a trailing batch of one sample is
// folded into the previous batch because training-mode batch statistics
// need at least two rows. Deterministic for a fixed (model, data, cfg).
TrainResult train_fusion_model(FusionModel& model, AdamState& adam,
                               const SplitDataset& data,
                               const PreprocessConfig& pre,
                               const TrainConfig& cfg);

// CSV with header `epoch,train_loss,test_loss`, epochs numbered from 1.
void write_loss_csv(const std::string& path,
                    const std::vector<EpochStats>& history);

}  // namespace fv
