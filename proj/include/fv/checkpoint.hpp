#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "fv/model.hpp"
#include "fv/tensor.hpp"
#include "fv/train.hpp"

// Binary checkpoint: model config echo, every parameter and batch-norm
// buffer, Adam moments, the training rng state, and the epoch counter.
// Loads reproduce forward outputs bitwise.
//
// Layout (all integers little-endian):
//   "FVCK" | u32 version | u32 epoch | str config | str rng_state |
//   u64 adam_t | tensors | adam_m tensors | adam_v tensors
// where str = u32 length + bytes, tensors = u32 count + records, and a
// record = str name | u32 rank | u32 dims[rank] | f32 data[numel].

namespace fv {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  std::uint32_t version = kCheckpointVersion;
  std::uint32_t epoch = 0;
  std::string config_kv;
  std::string rng_state;
  std::int64_t adam_t = 0;
  std::vector<std::pair<std::string, Tensor>> tensors;  // params + buffers
  std::vector<std::pair<std::string, Tensor>> adam_m;
  std::vector<std::pair<std::string, Tensor>> adam_v;
};

// Snapshot of the model (parameters + buffers) and optimizer.
Checkpoint make_checkpoint(FusionModel& model, const AdamState& adam,
                           const std::string& rng_state, int epoch);

void save_checkpoint(const std::string& path, const Checkpoint& ck);

// Parses the file; every malformed input maps to a CheckpointError kind
// (io, bad_magic, bad_version, truncated) rather than a crash.
Checkpoint load_checkpoint(const std::string& path);

// Copies checkpoint tensors into an existing model and optimizer. The model
// config echo must match exactly (config_mismatch), the tensor sets must
// agree (tensor_count / tensor_name), and shapes must line up.
void apply_checkpoint(FusionModel& model, AdamState& adam,
                      const Checkpoint& ck);

// Builds a model from the config echo, then applies the tensors.
FusionModel model_from_checkpoint(const Checkpoint& ck);

}  // namespace fv
