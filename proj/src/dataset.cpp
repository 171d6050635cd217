#include "fv/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include "fv/rng.hpp"

namespace fv {

namespace {

constexpr double kTwoPi = 6.283185307179586;

struct Rgb {
  double r, g, b;
};

// h in [0,1), s and v in [0,1].
Rgb hsv_to_rgb(double h, double s, double v) {
  h = h - std::floor(h);
  const double hh = h * 6.0;
  const int sector = static_cast<int>(hh) % 6;
  const double f = hh - std::floor(hh);
  const double p = v * (1.0 - s);
  const double q = v * (1.0 - s * f);
  const double t = v * (1.0 - s * (1.0 - f));
  switch (sector) {
    case 0: return {v, t, p};
    case 1: return {q, v, p};
    case 2: return {p, v, t};
    case 3: return {p, q, v};
    case 4: return {t, p, v};
    default: return {v, p, q};
  }
}

// Per-class appearance parameters, deterministic in (seed, class index).
struct ClassStyle {
  double angle;        // stripe orientation, radians
  double freq;         // stripe cycles across the image
  Rgb stripe_hi, stripe_lo, blob;
  int blob_count;
  double blob_radius;  // fraction of image size
};

ClassStyle class_style(int k, int num_classes, std::uint64_t seed) {
  Rng rng(derive_seed(seed, 0xC1A55, static_cast<std::uint64_t>(k)));
  ClassStyle st;
  const double hue = static_cast<double>(k) / num_classes;
  st.angle = kTwoPi / 2.0 * k / num_classes + rng.uniform(-0.03, 0.03);
  st.freq = 1.5 + 0.8 * (k % 4) + rng.uniform(-0.1, 0.1);
  st.stripe_hi = hsv_to_rgb(hue, 0.85, 0.95);
  st.stripe_lo = hsv_to_rgb(hue, 0.40, 0.45);
  st.blob = hsv_to_rgb(hue + 0.5, 0.75, 0.90);
  st.blob_count = 2 + static_cast<int>(rng.below(3));
  st.blob_radius = 0.10 + 0.05 * rng.uniform();
  return st;
}

float to_byte(double v) {
  v = v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
  return static_cast<float>(std::lround(v * 255.0));
}

Image synth_image(const ClassStyle& st, int size, Rng& rng) {
  const double phase = rng.uniform(0.0, kTwoPi);
  const double angle = st.angle + rng.uniform(-0.05, 0.05);
  struct Blob {
    double cx, cy, r2;
  };
  std::vector<Blob> blobs;
  for (int b = 0; b < st.blob_count; ++b) {
    const double cx = rng.uniform();
    const double cy = rng.uniform();
    const double r = st.blob_radius * (0.7 + 0.6 * rng.uniform());
    blobs.push_back({cx, cy, r * r});
  }
  const double ca = std::cos(angle), sa = std::sin(angle);

  Image img = Image::raw8(size, size, 3);
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      const double fx = (x + 0.5) / size, fy = (y + 0.5) / size;
      const double u = fx * ca + fy * sa;
      const double wave = 0.5 + 0.5 * std::sin(kTwoPi * st.freq * u + phase);
      double col[3] = {
          st.stripe_lo.r + (st.stripe_hi.r - st.stripe_lo.r) * wave,
          st.stripe_lo.g + (st.stripe_hi.g - st.stripe_lo.g) * wave,
          st.stripe_lo.b + (st.stripe_hi.b - st.stripe_lo.b) * wave};
      for (const auto& bl : blobs) {
        const double dx = fx - bl.cx, dy = fy - bl.cy;
        if (dx * dx + dy * dy < bl.r2) {
          col[0] = 0.25 * col[0] + 0.75 * st.blob.r;
          col[1] = 0.25 * col[1] + 0.75 * st.blob.g;
          col[2] = 0.25 * col[2] + 0.75 * st.blob.b;
        }
      }
      for (int c = 0; c < 3; ++c)
        img.at(y, x, c) = to_byte(col[c] + rng.uniform(-0.03, 0.03));
    }
  }
  return img;
}

std::string padded_name(const std::string& prefix, int value, int width) {
  std::string digits = std::to_string(value);
  while (static_cast<int>(digits.size()) < width) digits = "0" + digits;
  return prefix + digits;
}

int digit_width(int max_value) {
  return static_cast<int>(std::to_string(max_value).size());
}

}  // namespace

LabeledDataset generate_synthetic_dataset(int num_classes, int per_class,
                                          int size, std::uint64_t seed) {
  if (num_classes < 2) throw ConfigError("synthetic dataset needs >= 2 classes");
  if (per_class < 1) throw ConfigError("per_class must be >= 1");
  if (size < 1) throw ConfigError("image size must be >= 1");

  LabeledDataset ds;
  const int kw = digit_width(num_classes - 1);
  for (int k = 0; k < num_classes; ++k)
    ds.class_names.push_back(padded_name("class", k, kw));

  for (int k = 0; k < num_classes; ++k) {
    const ClassStyle st = class_style(k, num_classes, seed);
    for (int i = 0; i < per_class; ++i) {
      // Per-image substream: parallel generation by (class, index) would
      // produce the same dataset as this serial loop.
      Rng rng(derive_seed(seed, static_cast<std::uint64_t>(k),
                          static_cast<std::uint64_t>(i) + 1));
      ds.items.push_back({synth_image(st, size, rng), k});
    }
  }
  return ds;
}

void save_dataset(const LabeledDataset& ds, const std::string& root) {
  namespace fs = std::filesystem;
  ds.validate();
  if (ds.class_names.empty()) throw ConfigError("dataset has no classes");
  std::vector<int> next_index(ds.class_names.size(), 0);
  std::vector<std::size_t> counts = ds.class_counts();
  std::size_t max_count = 0;
  for (auto c : counts) max_count = std::max(max_count, c);
  const int iw =
      std::max(4, digit_width(static_cast<int>(max_count)));

  for (const auto& name : ds.class_names)
    fs::create_directories(fs::path(root) / name);
  for (const auto& item : ds.items) {
    const auto& cls = ds.class_names[static_cast<std::size_t>(item.label)];
    const std::string file =
        padded_name("img", next_index[static_cast<std::size_t>(item.label)]++,
                    iw) +
        ".ppm";
    save_ppm((fs::path(root) / cls / file).string(), item.image);
  }
}

LabeledDataset load_dataset(const std::string& root) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(root))
    throw ConfigError("dataset root '" + root + "' is not a directory");

  std::vector<std::string> class_dirs;
  for (const auto& entry : fs::directory_iterator(root))
    if (entry.is_directory())
      class_dirs.push_back(entry.path().filename().string());
  std::sort(class_dirs.begin(), class_dirs.end());
  if (class_dirs.empty())
    throw ConfigError("dataset root '" + root + "' has no class directories");

  LabeledDataset ds;
  ds.class_names = class_dirs;
  for (std::size_t k = 0; k < class_dirs.size(); ++k) {
    std::vector<std::string> files;
    for (const auto& entry : fs::directory_iterator(fs::path(root) / class_dirs[k]))
      if (entry.is_regular_file() && entry.path().extension() == ".ppm")
        files.push_back(entry.path().string());
    std::sort(files.begin(), files.end());
    for (const auto& f : files)
      ds.items.push_back({load_ppm(f), static_cast<int>(k)});
  }
  return ds;
}

SplitDataset stratified_split(const LabeledDataset& ds, double test_frac,
                              std::uint64_t seed) {
  if (test_frac < 0.0 || test_frac >= 1.0)
    throw ConfigError("test_frac must be in [0,1)");
  ds.validate();

  SplitDataset out;
  out.seed = seed;
  out.train.class_names = ds.class_names;
  out.test.class_names = ds.class_names;

  for (std::size_t k = 0; k < ds.class_names.size(); ++k) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < ds.items.size(); ++i)
      if (ds.items[i].label == static_cast<int>(k)) idx.push_back(i);
    if (idx.empty()) continue;

    Rng rng(derive_seed(seed, 0x5917, k));
    for (std::size_t i = idx.size() - 1; i > 0; --i) {
      const std::size_t j = static_cast<std::size_t>(rng.below(i + 1));
      std::swap(idx[i], idx[j]);
    }

    std::size_t n_test = static_cast<std::size_t>(
        std::lround(static_cast<double>(idx.size()) * test_frac));
    if (n_test >= idx.size()) n_test = idx.size() - 1;  // keep train nonempty
    for (std::size_t i = 0; i < idx.size(); ++i) {
      auto& side = (i < n_test) ? out.test : out.train;
      side.items.push_back(ds.items[idx[i]]);
    }
  }
  return out;
}

}  // namespace fv
