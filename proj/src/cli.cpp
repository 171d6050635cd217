#include "fv/cli.hpp"

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <iostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "fv/checkpoint.hpp"
#include "fv/csv.hpp"
#include "fv/dataset.hpp"
#include "fv/error.hpp"
#include "fv/explain.hpp"
#include "fv/image.hpp"
#include "fv/metrics.hpp"
#include "fv/model.hpp"
#include "fv/rng.hpp"
#include "fv/runconfig.hpp"
#include "fv/train.hpp"

namespace fv {

namespace {

// Argument-shape problems detected after CLI parsing; mapped to exit code 2.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void make_dir(const std::string& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec)
    throw IoError("cannot create directory '" + dir + "': " + ec.message());
}

void make_parent_dir(const std::string& path) {
  auto parent = std::filesystem::path(path).parent_path();
  if (!parent.empty()) make_dir(parent.string());
}

RunConfig config_or_default(const std::string& path) {
  return path.empty() ? RunConfig{} : load_runconfig(path);
}

std::string pick_out_dir(const std::string& flag, const RunConfig& run) {
  return flag.empty() ? run.out_dir : flag;
}

std::vector<std::string> split_list(const std::string& csv) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start <= csv.size()) {
    auto comma = csv.find(',', start);
    if (comma == std::string::npos) comma = csv.size();
    out.push_back(csv.substr(start, comma - start));
    start = comma + 1;
  }
  return out;
}

// Distinct-flavor members start from distinct weights: each flavor gets its
// own substream of the base init seed.
ModelConfig model_config_for(const RunConfig& run, BackboneFlavor flavor) {
  ModelConfig mc;
  mc.num_classes = run.num_classes;
  mc.image_size = run.image_size;
  mc.flavor = flavor;
  mc.width_factor = run.width_factor;
  mc.init_seed =
      derive_seed(run.init_seed, 0xF1A7, static_cast<std::uint64_t>(flavor));
  mc.validate();
  return mc;
}

LabeledDataset load_checked_dataset(const std::string& dir, int num_classes) {
  LabeledDataset data = load_dataset(dir);
  if (data.num_classes() != num_classes)
    throw ConfigError("dataset '" + dir + "' has " +
                      std::to_string(data.num_classes()) +
                      " classes but the model/config expects " +
                      std::to_string(num_classes));
  return data;
}

// Resolve --split {test|train|all} to the item list to evaluate.
std::vector<LabeledImage> select_split(const LabeledDataset& data,
                                       const RunConfig& run,
                                       const std::string& which) {
  if (which == "all") return data.items;
  SplitDataset split = stratified_split(data, run.test_frac, run.seed);
  if (which == "test") return split.test.items;
  if (which == "train") return split.train.items;
  throw UsageError("--split must be one of test, train, all; got '" + which +
                   "'");
}

struct PredictionSet {
  std::vector<Tensor> scores;  // per-sample class scores
  std::vector<int> preds;
  std::vector<int> labels;
};

PredictionSet predict_single(FusionModel& model,
                             const std::vector<LabeledImage>& items,
                             const PreprocessConfig& pre) {
  PredictionSet out;
  for (const auto& it : items) {
    Tensor x = image_to_tensor(preprocess(it.image, pre));
    Graph g(false);
    Tensor p = model.forward_single(g, x, false);
    out.preds.push_back(argmax_lowest(p));
    out.scores.push_back(std::move(p));
    out.labels.push_back(it.label);
  }
  return out;
}

PredictionSet predict_ensemble(EnsembleT<float>& ens,
                               const std::vector<LabeledImage>& items,
                               const PreprocessConfig& pre,
                               std::vector<PredictionSet>* member_sets) {
  PredictionSet out;
  if (member_sets) member_sets->resize(ens.members().size());
  for (const auto& it : items) {
    Tensor x = image_to_tensor(preprocess(it.image, pre));
    auto result = ens.predict(x);
    out.preds.push_back(result.label);
    out.scores.push_back(result.combined);
    out.labels.push_back(it.label);
    if (member_sets)
      for (std::size_t m = 0; m < result.per_member.size(); ++m) {
        (*member_sets)[m].preds.push_back(argmax_lowest(result.per_member[m]));
        (*member_sets)[m].scores.push_back(result.per_member[m]);
        (*member_sets)[m].labels.push_back(it.label);
      }
  }
  return out;
}

double accuracy_of(const PredictionSet& ps) {
  std::int64_t hits = 0;
  for (std::size_t i = 0; i < ps.preds.size(); ++i)
    hits += ps.preds[i] == ps.labels[i] ? 1 : 0;
  return ps.preds.empty()
             ? 0.0
             : static_cast<double>(hits) / static_cast<double>(ps.preds.size());
}

struct ReportSummary {
  double accuracy = 0.0;
  double auc = 0.0;
};

ReportSummary write_report(const std::string& dir, const std::string& prefix,
                           const PredictionSet& ps, int num_classes,
                           const std::vector<std::string>& names) {
  auto cm = confusion_matrix(ps.preds, ps.labels, num_classes);
  auto report = classification_metrics(cm);
  auto roc = roc_auc_micro(ps.scores, ps.labels);
  write_metrics_csv(dir + "/" + prefix + "metrics.csv", report, names);
  write_confusion_csv(dir + "/" + prefix + "confusion.csv", cm, names);
  write_roc_csv(dir + "/" + prefix + "roc.csv", roc);
  write_roc_svg(dir + "/" + prefix + "roc.svg", roc);
  return {report.accuracy, roc.auc};
}

// ---------------------------------------------------------------------------
// subcommand option bags

struct SynthOpts {
  int classes = 8;
  int per_class = 50;
  int size = 32;
  std::uint64_t seed = 1;
  std::string out;
};

struct TrainOpts {
  std::string config, flavor, out;
};

struct EvalOpts {
  std::string ckpt, data, config, out;
  std::string split = "test";
};

struct EnsembleOpts {
  std::string ckpts, data, config, out;
  std::string split = "test";
};

struct AblateOpts {
  std::string config, out, data;
  std::string members = "1,2";
};

struct ExplainOpts {
  std::string ckpt, image, config, out;
  std::string layer = "se";
  int target_class = 0;
};

// ---------------------------------------------------------------------------
// subcommand bodies

int run_synth(const SynthOpts& o) {
  LabeledDataset ds =
      generate_synthetic_dataset(o.classes, o.per_class, o.size, o.seed);
  save_dataset(ds, o.out);
  std::cout << "classes " << ds.num_classes() << "\n"
            << "images " << ds.items.size() << "\n"
            << "root " << o.out << "\n";
  return 0;
}

int run_train(const TrainOpts& o) {
  RunConfig run = config_or_default(o.config);
  if (!o.flavor.empty()) run.flavor = o.flavor;
  run.validate();
  const BackboneFlavor flavor = parse_flavor(run.flavor);
  LabeledDataset data = load_checked_dataset(run.data_dir, run.num_classes);
  SplitDataset split = stratified_split(data, run.test_frac, run.seed);

  FusionModel model(model_config_for(run, flavor));
  AdamState adam;
  TrainResult result = train_fusion_model(model, adam, split, run.preprocess(),
                                          run.train_config());

  make_parent_dir(o.out);
  save_checkpoint(o.out,
                  make_checkpoint(model, adam, result.final_rng_state,
                                  run.epochs));
  write_loss_csv(o.out + ".loss.csv", result.history);
  write_loss_svg(o.out + ".loss.svg", result.history);

  std::cout << "flavor " << flavor_name(flavor) << "\n"
            << "epochs " << run.epochs << "\n"
            << "train_loss " << format_g(result.history.back().train_loss)
            << "\n"
            << "test_loss " << format_g(result.history.back().test_loss)
            << "\n"
            << "checkpoint " << o.out << "\n";
  return 0;
}

int run_eval(const EvalOpts& o) {
  RunConfig run = config_or_default(o.config);
  if (!o.data.empty()) run.data_dir = o.data;

  FusionModel model = model_from_checkpoint(load_checkpoint(o.ckpt));
  PreprocessConfig pre = run.preprocess();
  pre.target_size = model.config().image_size;

  LabeledDataset data =
      load_checked_dataset(run.data_dir, model.config().num_classes);
  auto items = select_split(data, run, o.split);
  PredictionSet ps = predict_single(model, items, pre);

  const std::string out = pick_out_dir(o.out, run);
  make_dir(out);
  ReportSummary s =
      write_report(out, "", ps, model.config().num_classes, data.class_names);
  std::cout << "samples " << items.size() << "\n"
            << "accuracy " << format_g(s.accuracy) << "\n"
            << "auc " << format_g(s.auc) << "\n";
  return 0;
}

int run_ensemble(const EnsembleOpts& o) {
  auto paths = split_list(o.ckpts);
  if (paths.size() != 4)
    throw UsageError("ensemble requires exactly 4 comma-separated checkpoints "
                     "(--ckpts A,B,C,D), got " + std::to_string(paths.size()));

  RunConfig run = config_or_default(o.config);
  if (!o.data.empty()) run.data_dir = o.data;

  EnsembleT<float> ens(4);
  for (const auto& p : paths)
    ens.add_member(model_from_checkpoint(load_checkpoint(p)));
  const ModelConfig& first = ens.members().front().config();
  for (const auto& m : ens.members())
    if (m.config().image_size != first.image_size)
      throw ConfigError("ensemble members disagree on image_size");

  PreprocessConfig pre = run.preprocess();
  pre.target_size = first.image_size;
  LabeledDataset data = load_checked_dataset(run.data_dir, first.num_classes);
  auto items = select_split(data, run, o.split);

  std::vector<PredictionSet> member_sets;
  PredictionSet combined = predict_ensemble(ens, items, pre, &member_sets);

  const std::string out = pick_out_dir(o.out, run);
  make_dir(out);
  ReportSummary s = write_report(out, "ensemble_", combined, first.num_classes,
                                 data.class_names);

  std::string members_csv = "member,accuracy\n";
  for (std::size_t m = 0; m < member_sets.size(); ++m) {
    const auto& cfg = ens.members()[m].config();
    members_csv += flavor_name(cfg.flavor) + "," +
                   format_g(accuracy_of(member_sets[m])) + "\n";
  }
  members_csv += "ensemble," + format_g(s.accuracy) + "\n";
  write_file_atomic(out + "/members.csv", members_csv);

  for (std::size_t m = 0; m < member_sets.size(); ++m)
    std::cout << "member " << flavor_name(ens.members()[m].config().flavor)
              << " accuracy " << format_g(accuracy_of(member_sets[m])) << "\n";
  std::cout << "ensemble accuracy " << format_g(s.accuracy) << "\n"
            << "ensemble auc " << format_g(s.auc) << "\n";
  return 0;
}

int run_ablate(const AblateOpts& o) {
  RunConfig run = config_or_default(o.config);
  if (!o.data.empty()) run.data_dir = o.data;
  run.validate();

  std::vector<int> counts;
  for (const auto& tok : split_list(o.members)) {
    try {
      std::size_t used = 0;
      const int v = std::stoi(tok, &used);
      if (used != tok.size() || v < 1 || v > 4)
        throw std::invalid_argument(tok);
      counts.push_back(v);
    } catch (const std::exception&) {
      throw UsageError("--members must be comma-separated counts in 1..4, "
                       "got '" + o.members + "'");
    }
  }
  if (counts.empty())
    throw UsageError("--members must name at least one member count");
  const int max_members = *std::max_element(counts.begin(), counts.end());

  LabeledDataset data = load_checked_dataset(run.data_dir, run.num_classes);
  SplitDataset split = stratified_split(data, run.test_frac, run.seed);
  PreprocessConfig pre = run.preprocess();
  TrainConfig tcfg = run.train_config();

  static constexpr BackboneFlavor kOrder[] = {
      BackboneFlavor::plain, BackboneFlavor::residual,
      BackboneFlavor::dense_connected, BackboneFlavor::depthwise_separable};
  std::vector<FusionModel> models;
  models.reserve(static_cast<std::size_t>(max_members));
  for (int i = 0; i < max_members; ++i) {
    FusionModel model(model_config_for(run, kOrder[i]));
    AdamState adam;
    TrainResult r = train_fusion_model(model, adam, split, pre, tcfg);
    std::cout << "trained " << flavor_name(kOrder[i]) << " train_loss "
              << format_g(r.history.back().train_loss) << "\n";
    models.push_back(std::move(model));
  }

  std::string csv = "members,accuracy\n";
  for (int m : counts) {
    EnsembleT<float> ens(static_cast<std::size_t>(m));
    for (int j = 0; j < m; ++j) ens.add_member(models[static_cast<std::size_t>(j)]);
    PredictionSet ps = predict_ensemble(ens, split.test.items, pre, nullptr);
    const double acc = accuracy_of(ps);
    csv += std::to_string(m) + "," + format_g(acc) + "\n";
    std::cout << "members " << m << " accuracy " << format_g(acc) << "\n";
  }

  const std::string out = pick_out_dir(o.out, run);
  make_dir(out);
  write_file_atomic(out + "/ablation.csv", csv);
  return 0;
}

int run_explain(const ExplainOpts& o) {
  RunConfig run = config_or_default(o.config);
  FusionModel model = model_from_checkpoint(load_checkpoint(o.ckpt));
  PreprocessConfig pre = run.preprocess();
  pre.target_size = model.config().image_size;

  Image unit = preprocess(load_ppm(o.image), pre);
  AttentionMap map = grad_cam(model, unit, o.target_class, o.layer);

  const std::string out = pick_out_dir(o.out, run);
  make_dir(out);
  Image cam = attention_to_image(map, unit.height(), unit.width());
  save_pgm(out + "/cam.pgm", quantize_to_raw8(cam));
  save_ppm(out + "/overlay.ppm", quantize_to_raw8(overlay_heatmap(unit, map)));

  Graph g(false);
  Tensor p = model.forward_single(g, image_to_tensor(unit), false);
  std::cout << "layer " << map.layer << "\n"
            << "target_class " << map.target_class << "\n"
            << "predicted_class " << argmax_lowest(p) << "\n"
            << "all_zero " << (map.all_zero ? "true" : "false") << "\n";
  return 0;
}

}  // namespace

int dispatch(const std::vector<std::string>& args) {
  CLI::App app{"dual-stream CNN+transformer fusion classifier toolkit",
               "fvnet"};
  app.require_subcommand(1);

  SynthOpts so;
  auto* synth = app.add_subcommand("synth", "Generate a synthetic PPM dataset");
  synth->option_defaults()->always_capture_default();
  synth->add_option("--classes", so.classes, "Number of classes");
  synth->add_option("--per-class", so.per_class, "Images per class");
  synth->add_option("--size", so.size, "Square image edge in pixels");
  synth->add_option("--seed", so.seed, "Generator seed");
  synth->add_option("--out", so.out, "Output dataset directory")->required();

  TrainOpts to;
  auto* train = app.add_subcommand("train", "Train one fusion model");
  train->option_defaults()->always_capture_default();
  train->add_option("--config", to.config,
                    "Run-config file (key = value; defaults when omitted)");
  train->add_option("--flavor", to.flavor,
                    "Backbone flavor override: plain|residual|dense|sep");
  train->add_option("--out", to.out, "Checkpoint output path")->required();

  EvalOpts eo;
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset");
  eval->option_defaults()->always_capture_default();
  eval->add_option("--ckpt", eo.ckpt, "Checkpoint path")->required();
  eval->add_option("--data", eo.data, "Dataset directory")->required();
  eval->add_option("--config", eo.config, "Run-config file");
  eval->add_option("--split", eo.split, "Evaluation split: test|train|all");
  eval->add_option("--out", eo.out, "Report directory (config out_dir when empty)");

  EnsembleOpts no;
  auto* ens = app.add_subcommand("ensemble",
                                 "Soft-vote four checkpoints on a dataset");
  ens->option_defaults()->always_capture_default();
  ens->add_option("--ckpts", no.ckpts,
                  "Exactly four comma-separated checkpoint paths")->required();
  ens->add_option("--data", no.data, "Dataset directory")->required();
  ens->add_option("--config", no.config, "Run-config file");
  ens->add_option("--split", no.split, "Evaluation split: test|train|all");
  ens->add_option("--out", no.out, "Report directory (config out_dir when empty)");

  AblateOpts ao;
  auto* ablate = app.add_subcommand(
      "ablate", "Train members and sweep soft-vote ensemble sizes");
  ablate->option_defaults()->always_capture_default();
  ablate->add_option("--config", ao.config, "Run-config file");
  ablate->add_option("--members", ao.members,
                     "Comma-separated ensemble sizes to score (1..4)");
  ablate->add_option("--data", ao.data, "Dataset directory override");
  ablate->add_option("--out", ao.out, "Report directory (config out_dir when empty)");

  ExplainOpts xo;
  auto* explain = app.add_subcommand(
      "explain", "Write attention heatmaps for one image");
  explain->option_defaults()->always_capture_default();
  explain->add_option("--ckpt", xo.ckpt, "Checkpoint path")->required();
  explain->add_option("--image", xo.image, "Input PPM image")->required();
  explain->add_option("--class", xo.target_class, "Target class index")
      ->required();
  explain->add_option("--layer", xo.layer,
                      "Feature tap: backbone|aspp|se");
  explain->add_option("--config", xo.config, "Run-config file");
  explain->add_option("--out", xo.out,
                      "Output directory (config out_dir when empty)");

  std::vector<const char*> argv;
  argv.reserve(args.size() + 1);
  argv.push_back("fvnet");
  for (const auto& a : args) argv.push_back(a.c_str());

  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }

  try {
    if (app.got_subcommand(synth)) return run_synth(so);
    if (app.got_subcommand(train)) return run_train(to);
    if (app.got_subcommand(eval)) return run_eval(eo);
    if (app.got_subcommand(ens)) return run_ensemble(no);
    if (app.got_subcommand(ablate)) return run_ablate(ao);
    if (app.got_subcommand(explain)) return run_explain(xo);
    std::cerr << "error: no subcommand selected\n";
    return 2;
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

int dispatch(int argc, const char* const* argv) {
  std::vector<std::string> args;
  args.reserve(argc > 0 ? static_cast<std::size_t>(argc - 1) : 0);
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return dispatch(args);
}

}  // namespace fv
