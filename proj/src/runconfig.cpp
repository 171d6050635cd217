#include "fv/runconfig.hpp"

#include <charconv>
#include <sstream>
#include <string>

#include "fv/csv.hpp"
#include "fv/error.hpp"
#include "fv/model.hpp"

namespace fv {

namespace {

std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

[[noreturn]] void bad_value(const std::string& key, const std::string& val) {
  throw ConfigError("config key '" + key + "' has malformed value '" + val +
                    "'");
}

int parse_int(const std::string& key, const std::string& val) {
  int out = 0;
  auto [p, ec] = std::from_chars(val.data(), val.data() + val.size(), out);
  if (ec != std::errc() || p != val.data() + val.size()) bad_value(key, val);
  return out;
}

std::uint64_t parse_u64(const std::string& key, const std::string& val) {
  std::uint64_t out = 0;
  auto [p, ec] = std::from_chars(val.data(), val.data() + val.size(), out);
  if (ec != std::errc() || p != val.data() + val.size()) bad_value(key, val);
  return out;
}

double parse_double(const std::string& key, const std::string& val) {
  try {
    std::size_t used = 0;
    double out = std::stod(val, &used);
    if (used != val.size()) bad_value(key, val);
    return out;
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception&) {
    bad_value(key, val);
  }
}

bool parse_bool(const std::string& key, const std::string& val) {
  if (val == "true" || val == "1") return true;
  if (val == "false" || val == "0") return false;
  bad_value(key, val);
}

void apply_key(RunConfig& r, const std::string& key, const std::string& val) {
  if (key == "data_dir") r.data_dir = val;
  else if (key == "out_dir") r.out_dir = val;
  else if (key == "test_frac") r.test_frac = parse_double(key, val);
  else if (key == "seed") r.seed = parse_u64(key, val);
  else if (key == "gamma") r.gamma.gamma = static_cast<float>(parse_double(key, val));
  else if (key == "gamma_scale") r.gamma.c = static_cast<float>(parse_double(key, val));
  else if (key == "pipeline_order") r.order = parse_pipeline_order(val);
  else if (key == "augment") r.augment = parse_bool(key, val);
  else if (key == "rotation_deg") r.aug.rotation_deg = static_cast<float>(parse_double(key, val));
  else if (key == "shift_frac") r.aug.shift_frac = static_cast<float>(parse_double(key, val));
  else if (key == "shear") r.aug.shear = static_cast<float>(parse_double(key, val));
  else if (key == "zoom_frac") r.aug.zoom_frac = static_cast<float>(parse_double(key, val));
  else if (key == "hflip") r.aug.hflip = parse_bool(key, val);
  else if (key == "flavor") r.flavor = val;
  else if (key == "num_classes") r.num_classes = parse_int(key, val);
  else if (key == "image_size") r.image_size = parse_int(key, val);
  else if (key == "width_factor") r.width_factor = parse_double(key, val);
  else if (key == "init_seed") r.init_seed = parse_u64(key, val);
  else if (key == "freeze_extractors") r.freeze_extractors = parse_bool(key, val);
  else if (key == "lr") r.lr = parse_double(key, val);
  else if (key == "batch_size") r.batch_size = parse_int(key, val);
  else if (key == "epochs") r.epochs = parse_int(key, val);
  else throw ConfigError("unknown config key '" + key + "'");
}

}  // namespace

void RunConfig::validate() const {
  parse_flavor(flavor);  // throws on unknown names
  if (test_frac < 0.0 || test_frac >= 1.0)
    throw ConfigError("test_frac must be in [0,1)");
  if (num_classes < 2) throw ConfigError("num_classes must be >= 2");
  if (image_size < 1) throw ConfigError("image_size must be >= 1");
  preprocess().validate();
  train_config().validate();
}

PreprocessConfig RunConfig::preprocess() const {
  PreprocessConfig pre;
  pre.gamma = gamma;
  pre.target_size = image_size;
  pre.order = order;
  return pre;
}

TrainConfig RunConfig::train_config() const {
  TrainConfig t;
  t.lr = lr;
  t.batch_size = batch_size;
  t.epochs = epochs;
  t.seed = seed;
  t.freeze_extractors = freeze_extractors;
  t.width_factor = width_factor;
  t.augment = augment;
  t.augment_cfg = aug;
  return t;
}

RunConfig parse_runconfig_text(const std::string& text) {
  RunConfig r;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(lineno) +
                        " is not 'key = value': '" + line + "'");
    apply_key(r, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return r;
}

RunConfig load_runconfig(const std::string& path) {
  return parse_runconfig_text(read_file(path));
}

std::string runconfig_text(const RunConfig& run) {
  std::ostringstream out;
  out << "# data\n"
      << "data_dir = " << run.data_dir << "  # dataset root directory\n"
      << "out_dir = " << run.out_dir << "  # report/chart output directory\n"
      << "test_frac = " << format_g(run.test_frac)
      << "  # held-out fraction per class\n"
      << "seed = " << run.seed << "  # split/shuffle/augmentation seed\n"
      << "\n# preprocessing\n"
      << "gamma = " << format_g(run.gamma.gamma)
      << "  # gamma-correction exponent\n"
      << "gamma_scale = " << format_g(run.gamma.c)
      << "  # gamma-correction multiplier\n"
      << "pipeline_order = " << pipeline_order_name(run.order)
      << "  # normalize,gamma,resize | normalize,resize,gamma | "
         "resize,normalize,gamma\n"
      << "\n# augmentation (training only)\n"
      << "augment = " << (run.augment ? "true" : "false")
      << "  # random affine warps per epoch\n"
      << "rotation_deg = " << format_g(run.aug.rotation_deg)
      << "  # max rotation, degrees\n"
      << "shift_frac = " << format_g(run.aug.shift_frac)
      << "  # max shift as a fraction of the edge\n"
      << "shear = " << format_g(run.aug.shear) << "  # max shear factor\n"
      << "zoom_frac = " << format_g(run.aug.zoom_frac)
      << "  # max zoom deviation from 1\n"
      << "hflip = " << (run.aug.hflip ? "true" : "false")
      << "  # allow horizontal flips\n"
      << "\n# model\n"
      << "flavor = " << run.flavor
      << "  # plain | residual | dense | sep\n"
      << "num_classes = " << run.num_classes << "  # label count\n"
      << "image_size = " << run.image_size << "  # network input edge\n"
      << "width_factor = " << format_g(run.width_factor)
      << "  # classifier-head width multiplier\n"
      << "init_seed = " << run.init_seed
      << "  # base weight-init seed (per-flavor seeds derive from it)\n"
      << "freeze_extractors = " << (run.freeze_extractors ? "true" : "false")
      << "  # freeze patch embedding and backbone\n"
      << "\n# optimizer\n"
      << "lr = " << format_g(run.lr) << "  # Adam learning rate\n"
      << "batch_size = " << run.batch_size << "  # minimum 2\n"
      << "epochs = " << run.epochs << "  # full passes over the train split\n";
  return out.str();
}

}  // namespace fv
