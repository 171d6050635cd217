#pragma once
// Flat key=value run settings consumed by the command-line tools. One file
// drives dataset location, preprocessing, augmentation, model selection, and
// optimizer settings; unknown keys are rejected so typos fail loudly.

#include <cstdint>
#include <string>

#include "fv/image.hpp"
#include "fv/train.hpp"

namespace fv {

struct RunConfig {
  // data
  std::string data_dir = "data";  // dataset root (class subdirectories)
  std::string out_dir = "out";    // where reports and charts are written
  double test_frac = 0.2;         // held-out fraction per class
  std::uint64_t seed = 1;         // split/shuffle/augmentation seed

  // preprocessing
  GammaParams gamma{};  // keys gamma (exponent) and gamma_scale (multiplier)
  PipelineOrder order = PipelineOrder::normalize_gamma_resize;

  // augmentation (training only)
  bool augment = false;
  AugmentConfig aug{};

  // model
  std::string flavor = "plain";  // plain | residual | dense | sep
  int num_classes = 8;
  int image_size = 32;  // network input edge; images are resized to this
  double width_factor = 0.25;
  std::uint64_t init_seed = 1;  // base seed; per-flavor seeds derive from it
  bool freeze_extractors = false;

  // optimizer
  double lr = 0.001;
  int batch_size = 16;
  int epochs = 20;

  void validate() const;

  // Preprocessing settings with the network input size as resize target.
  PreprocessConfig preprocess() const;
  TrainConfig train_config() const;
};

// Parse `key = value` lines; '#' starts a comment, blank lines are skipped,
// unknown keys and malformed values raise ConfigError.
RunConfig parse_runconfig_text(const std::string& text);
RunConfig load_runconfig(const std::string& path);

// Emit every key with its current value plus a documenting comment; the
// output parses back to an identical RunConfig, so runconfig_text(RunConfig{})
// doubles as the annotated default configuration file.
std::string runconfig_text(const RunConfig& run);

}  // namespace fv
