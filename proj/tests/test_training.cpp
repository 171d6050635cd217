#include <cmath>
#include <string>
#include <vector>

#include "doctest.h"
#include "fv/checkpoint.hpp"
#include "fv/dataset.hpp"
#include "fv/error.hpp"
#include "fv/image.hpp"
#include "fv/model.hpp"
#include "fv/train.hpp"
#include "testutil.hpp"

using fv::AdamState;
using fv::BackboneFlavor;
using fv::Checkpoint;
using fv::CheckpointError;
using fv::FusionModel;
using fv::Graph;
using fv::ModelConfig;
using fv::NamedParam;
using fv::Shape;
using fv::Tensor;
using fv::TrainConfig;
using Kind = fv::CheckpointError::Kind;
using testutil::TempDir;

namespace {

// Small geometry so the smoke training runs in well under a second.
ModelConfig tiny_config(BackboneFlavor flavor, int num_classes) {
  ModelConfig cfg;
  cfg.flavor = flavor;
  cfg.num_classes = num_classes;
  cfg.image_size = 16;
  cfg.patch_size = 4;
  cfg.embed_dim = 8;
  cfg.heads = 2;
  cfg.depth = 1;
  cfg.backbone_channels = 8;
  cfg.dense_base = 2;
  cfg.dense_growth = 2;
  cfg.dense_layers = 3;
  cfg.aspp_branch_channels = 2;
  cfg.aspp_out_channels = 4;
  cfg.se_reduction = 2;
  cfg.width_factor = 0.05;
  cfg.init_seed = 5;
  return cfg;
}

fv::SplitDataset tiny_split(int num_classes, int per_class) {
  auto ds = fv::generate_synthetic_dataset(num_classes, per_class, 16, 99);
  return fv::stratified_split(ds, 0.25, 31);
}

template <class Fn>
Kind checkpoint_kind(Fn&& fn) {
  try {
    fn();
  } catch (const CheckpointError& e) {
    return e.kind;
  }
  FAIL("expected a CheckpointError");
  return Kind::io;
}

Tensor forward_fixed(FusionModel& m) {
  fv::Rng rng(404);
  Tensor img(Shape{3, 16, 16});
  testutil::fill_uniform(img, rng, 0, 1);
  Graph g(false);
  return m.forward_single(g, img);
}

}  // namespace

TEST_CASE("adam: zero gradients leave parameters untouched") {
  Tensor w(Shape{3}, 0.5f, true);
  std::vector<NamedParam> params{{"w", w}};
  AdamState st;
  fv::adam_step(st, params, 0.001);
  CHECK(st.t == 1);
  for (int i = 0; i < 3; ++i) CHECK(w[i] == 0.5f);
}

TEST_CASE("adam: first-step update equals -lr/(1+eps) for unit gradient") {
  Tensor w(Shape{1}, 0.25f, true);
  w.grad()[0] = 1.0f;
  std::vector<NamedParam> params{{"w", w}};
  AdamState st;
  fv::adam_step(st, params, 0.001);
  const double delta = static_cast<double>(w[0]) - 0.25;
  CHECK(delta == doctest::Approx(-0.000999999).epsilon(1e-5));
}

TEST_CASE("adam: first-step magnitude is about lr regardless of scale") {
  for (float g : {1e-6f, 1.0f, 1e6f, -3.5f}) {
    Tensor w(Shape{1}, 1.0f, true);
    w.grad()[0] = g;
    std::vector<NamedParam> params{{"w", w}};
    AdamState st;
    fv::adam_step(st, params, 0.001);
    const double delta = static_cast<double>(w[0]) - 1.0;
    CHECK(std::abs(delta) <= 0.001 * 1.0001);
    CHECK(std::abs(delta) >= 0.001 * 0.9);
    CHECK(std::signbit(delta) == !std::signbit(g));  // moves against gradient
  }
}

TEST_CASE("adam: second step follows the closed-form moments") {
  Tensor w(Shape{1}, 0.0f, true);
  std::vector<NamedParam> params{{"w", w}};
  AdamState st;
  w.grad()[0] = 1.0f;
  fv::adam_step(st, params, 0.001);
  w.zero_grad();
  w.grad()[0] = 1.0f;
  fv::adam_step(st, params, 0.001);
  CHECK(st.t == 2);
  // m2 = 0.19/(1-0.81) = 1, v2 = 0.001999/(1-0.998001) ~= 1
  const double total = static_cast<double>(w[0]);
  CHECK(total == doctest::Approx(-0.002).epsilon(1e-4));
  CHECK(st.m.at("w")[0] == doctest::Approx(0.19f));
  CHECK(st.v.at("w")[0] == doctest::Approx(0.001999f));
}

TEST_CASE("adam: one step on f(w)=w^2 decreases f") {
  Tensor w(Shape{1}, 1.0f, true);
  std::vector<NamedParam> params{{"w", w}};
  AdamState st;
  w.grad()[0] = 2.0f * w[0];
  fv::adam_step(st, params, 0.001);
  CHECK(w[0] < 1.0f);
  CHECK(w[0] * w[0] < 1.0f);
}

TEST_CASE("adam: moment shape mismatch is rejected") {
  AdamState st;
  Tensor a(Shape{2}, 1.0f, true);
  std::vector<NamedParam> pa{{"w", a}};
  fv::adam_step(st, pa, 0.001);
  Tensor b(Shape{3}, 1.0f, true);
  std::vector<NamedParam> pb{{"w", b}};
  CHECK_THROWS_AS(fv::adam_step(st, pb, 0.001), fv::DimensionError);
  CHECK_THROWS_AS(fv::adam_step(st, pa, 0.0), fv::ConfigError);
}

TEST_CASE("train config: invariants enforced") {
  TrainConfig cfg;
  cfg.lr = 0.0;
  CHECK_THROWS_AS(cfg.validate(), fv::ConfigError);
  cfg = TrainConfig{};
  cfg.epochs = 0;
  CHECK_THROWS_AS(cfg.validate(), fv::ConfigError);
  cfg = TrainConfig{};
  cfg.batch_size = 1;
  CHECK_THROWS_AS(cfg.validate(), fv::ConfigError);
  TrainConfig ok;
  ok.validate();  // defaults are fine
}

TEST_CASE("collect_params: freeze filter removes exactly the extractors") {
  FusionModel m(tiny_config(BackboneFlavor::plain, 2));
  auto all = fv::collect_params(m, true);
  auto unfrozen = fv::collect_params(m, false);
  CHECK(all.size() > unfrozen.size());
  for (const auto& p : unfrozen)
    CHECK_FALSE(FusionModel::is_extractor_param(p.name));
  std::size_t frozen = 0;
  for (const auto& p : all)
    if (FusionModel::is_extractor_param(p.name)) ++frozen;
  CHECK(all.size() == unfrozen.size() + frozen);
  CHECK(frozen > 0);
}

TEST_CASE("training: loss decreases on a tiny two-class problem") {
  auto split = tiny_split(2, 12);  // 18 train / 6 test
  FusionModel model(tiny_config(BackboneFlavor::plain, 2));
  AdamState adam;
  TrainConfig cfg;
  cfg.batch_size = 6;
  cfg.epochs = 5;
  cfg.seed = 7;
  fv::PreprocessConfig pre;
  pre.target_size = 16;

  auto result = fv::train_fusion_model(model, adam, split, pre, cfg);
  REQUIRE(result.history.size() == 5);
  for (const auto& e : result.history) {
    CHECK(std::isfinite(e.train_loss));
    CHECK(std::isfinite(e.test_loss));
  }
  CHECK(result.history.back().train_loss < result.history.front().train_loss);
  CHECK_FALSE(result.final_rng_state.empty());
  CHECK(adam.t > 0);
}

TEST_CASE("training: bitwise deterministic for a fixed seed") {
  auto split = tiny_split(2, 8);
  TrainConfig cfg;
  cfg.batch_size = 4;
  cfg.epochs = 3;
  cfg.seed = 11;
  cfg.augment = true;  // exercise the augmentation path too
  cfg.augment_cfg.seed = 11;
  fv::PreprocessConfig pre;
  pre.target_size = 16;

  std::vector<std::vector<double>> losses;
  std::vector<Tensor> probe;
  for (int run = 0; run < 2; ++run) {
    FusionModel model(tiny_config(BackboneFlavor::residual, 2));
    AdamState adam;
    auto result = fv::train_fusion_model(model, adam, split, pre, cfg);
    std::vector<double> flat;
    for (const auto& e : result.history) {
      flat.push_back(e.train_loss);
      flat.push_back(e.test_loss);
    }
    losses.push_back(flat);
    probe.push_back(forward_fixed(model));
  }
  CHECK(losses[0] == losses[1]);
  for (std::int64_t i = 0; i < probe[0].numel(); ++i)
    CHECK(probe[0][i] == probe[1][i]);
}

TEST_CASE("training: frozen extractors stay bitwise constant") {
  auto split = tiny_split(2, 8);
  FusionModel model(tiny_config(BackboneFlavor::depthwise_separable, 2));

  std::vector<std::pair<std::string, std::vector<float>>> before;
  model.visit_params([&](const std::string& name, Tensor& t) {
    before.emplace_back(name, t.data());
  });

  AdamState adam;
  TrainConfig cfg;
  cfg.batch_size = 4;
  cfg.epochs = 2;
  cfg.seed = 3;
  cfg.freeze_extractors = true;
  fv::PreprocessConfig pre;
  pre.target_size = 16;
  fv::train_fusion_model(model, adam, split, pre, cfg);

  std::size_t changed = 0;
  std::size_t idx = 0;
  model.visit_params([&](const std::string& name, Tensor& t) {
    REQUIRE(before[idx].first == name);
    if (FusionModel::is_extractor_param(name)) {
      CHECK(t.data() == before[idx].second);  // frozen: bitwise equal
    } else if (t.data() != before[idx].second) {
      ++changed;
    }
    ++idx;
  });
  CHECK(changed > 0);
  // optimizer never created moments for frozen tensors
  for (const auto& [name, t] : adam.m)
    CHECK_FALSE(FusionModel::is_extractor_param(name));
}

TEST_CASE("training: dataset preconditions") {
  FusionModel model(tiny_config(BackboneFlavor::plain, 2));
  AdamState adam;
  TrainConfig cfg;
  fv::PreprocessConfig pre;
  pre.target_size = 16;

  fv::SplitDataset empty;
  empty.train.class_names = {"a", "b"};
  empty.test.class_names = {"a", "b"};
  CHECK_THROWS_AS(fv::train_fusion_model(model, adam, empty, pre, cfg),
                  fv::ConfigError);

  auto split = tiny_split(2, 8);  // 12 train items
  cfg.batch_size = 64;            // more than available
  CHECK_THROWS_AS(fv::train_fusion_model(model, adam, split, pre, cfg),
                  fv::ConfigError);

  // labels outside the model's class range
  auto split3 = tiny_split(3, 4);
  TrainConfig ok;
  ok.batch_size = 4;
  ok.epochs = 1;
  CHECK_THROWS_AS(fv::train_fusion_model(model, adam, split3, pre, ok),
                  fv::ConfigError);
}

TEST_CASE("loss csv: exact bytes") {
  TempDir dir("losscsv");
  std::vector<fv::EpochStats> hist{{1.5, 2.25}, {0.5, 0.125}};
  fv::write_loss_csv(dir.str("loss.csv"), hist);
  CHECK(fv::read_file(dir.str("loss.csv")) ==
        "epoch,train_loss,test_loss\n1,1.5,2.25\n2,0.5,0.125\n");
}

TEST_CASE("checkpoint: save-load round trip is bitwise faithful") {
  TempDir dir("ckpt");
  auto split = tiny_split(2, 8);
  FusionModel model(tiny_config(BackboneFlavor::residual, 2));
  AdamState adam;
  TrainConfig cfg;
  cfg.batch_size = 4;
  cfg.epochs = 2;
  cfg.seed = 17;
  fv::PreprocessConfig pre;
  pre.target_size = 16;
  auto result = fv::train_fusion_model(model, adam, split, pre, cfg);

  Tensor probe_before = forward_fixed(model);
  Checkpoint ck =
      fv::make_checkpoint(model, adam, result.final_rng_state, cfg.epochs);
  fv::save_checkpoint(dir.str("m.ckpt"), ck);

  Checkpoint loaded = fv::load_checkpoint(dir.str("m.ckpt"));
  CHECK(loaded.version == fv::kCheckpointVersion);
  CHECK(loaded.epoch == 2);
  CHECK(loaded.config_kv == model.config().to_kv());
  CHECK(loaded.rng_state == result.final_rng_state);
  CHECK(loaded.adam_t == adam.t);
  CHECK(loaded.tensors.size() == ck.tensors.size());

  // restoring into a differently initialized model reproduces outputs
  auto cfg2 = tiny_config(BackboneFlavor::residual, 2);
  cfg2.init_seed = 5;  // config echo includes the seed, so keep it equal
  FusionModel fresh(cfg2);
  AdamState fresh_adam;
  fv::apply_checkpoint(fresh, fresh_adam, loaded);
  Tensor probe_after = forward_fixed(fresh);
  REQUIRE(probe_after.numel() == probe_before.numel());
  for (std::int64_t i = 0; i < probe_before.numel(); ++i)
    CHECK(probe_after[i] == probe_before[i]);
  CHECK(fresh_adam.t == adam.t);
  for (const auto& [name, t] : adam.m) {
    REQUIRE(fresh_adam.m.count(name) == 1);
    CHECK(fresh_adam.m.at(name).data() == t.data());
  }

  // serialization itself is deterministic
  fv::save_checkpoint(dir.str("m2.ckpt"), ck);
  CHECK(fv::read_file(dir.str("m.ckpt")) == fv::read_file(dir.str("m2.ckpt")));

  // convenience constructor: model directly from the file
  FusionModel rebuilt = fv::model_from_checkpoint(loaded);
  Tensor probe_rebuilt = forward_fixed(rebuilt);
  for (std::int64_t i = 0; i < probe_before.numel(); ++i)
    CHECK(probe_rebuilt[i] == probe_before[i]);
}

TEST_CASE("checkpoint: every corruption maps to a distinct error kind") {
  TempDir dir("ckpt2");
  FusionModel model(tiny_config(BackboneFlavor::plain, 2));
  AdamState adam;
  Checkpoint ck = fv::make_checkpoint(model, adam, "rng", 0);
  const std::string path = dir.str("m.ckpt");
  fv::save_checkpoint(path, ck);
  const std::string good = fv::read_file(path);

  auto write_variant = [&](std::string bytes) {
    fv::write_file_atomic(dir.str("bad.ckpt"), bytes);
    return dir.str("bad.ckpt");
  };

  CHECK(checkpoint_kind([&] {
          fv::load_checkpoint(dir.str("missing.ckpt"));
        }) == Kind::io);

  std::string bad_magic = good;
  bad_magic[0] = 'X';
  CHECK(checkpoint_kind([&] {
          fv::load_checkpoint(write_variant(bad_magic));
        }) == Kind::bad_magic);

  std::string bad_version = good;
  bad_version[4] = 2;
  CHECK(checkpoint_kind([&] {
          fv::load_checkpoint(write_variant(bad_version));
        }) == Kind::bad_version);

  CHECK(checkpoint_kind([&] {
          fv::load_checkpoint(write_variant(good.substr(0, good.size() - 5)));
        }) == Kind::truncated);

  CHECK(checkpoint_kind([&] {
          fv::load_checkpoint(write_variant(good + "zz"));
        }) == Kind::truncated);

  // structural mismatches against the live model
  Checkpoint loaded = fv::load_checkpoint(path);
  FusionModel other(tiny_config(BackboneFlavor::plain, 3));
  AdamState scratch;
  CHECK(checkpoint_kind([&] {
          fv::apply_checkpoint(other, scratch, loaded);
        }) == Kind::config_mismatch);

  Checkpoint short_ck = loaded;
  short_ck.tensors.pop_back();
  CHECK(checkpoint_kind([&] {
          fv::apply_checkpoint(model, scratch, short_ck);
        }) == Kind::tensor_count);

  Checkpoint renamed = loaded;
  renamed.tensors[0].first = "no/such/tensor";
  CHECK(checkpoint_kind([&] {
          fv::apply_checkpoint(model, scratch, renamed);
        }) == Kind::tensor_name);
}
