#include <algorithm>
#include <cmath>
#include <set>
#include <string>
#include <vector>

#include "doctest.h"
#include "fv/dataset.hpp"
#include "fv/error.hpp"
#include "fv/image.hpp"
#include "fv/rng.hpp"
#include "testutil.hpp"

using fv::AffineSample;
using fv::AugmentConfig;
using fv::GammaParams;
using fv::Image;
using fv::LabeledDataset;
using fv::LabeledImage;
using fv::PixelMode;
using fv::Rng;
using testutil::TempDir;

namespace {

Image random_raw(int h, int w, Rng& rng) {
  Image img = Image::raw8(h, w, 3);
  for (auto& v : img.data())
    v = static_cast<float>(rng.below(256));
  return img;
}

bool images_equal(const Image& a, const Image& b) {
  return a.height() == b.height() && a.width() == b.width() &&
         a.channels() == b.channels() && a.mode() == b.mode() &&
         a.data() == b.data();
}

}  // namespace

TEST_CASE("ppm: minimal one-pixel file parses") {
  TempDir dir("ppm1");
  const std::string path = dir.str("white.ppm");
  fv::write_file_atomic(path, std::string("P6\n1 1\n255\n") + "\xff\xff\xff");
  Image img = fv::load_ppm(path);
  CHECK(img.height() == 1);
  CHECK(img.width() == 1);
  CHECK(img.channels() == 3);
  CHECK(img.mode() == PixelMode::raw8);
  CHECK(img.at(0, 0, 0) == 255.0f);
  CHECK(img.at(0, 0, 1) == 255.0f);
  CHECK(img.at(0, 0, 2) == 255.0f);
}

TEST_CASE("ppm: header comments and multi-digit dims") {
  TempDir dir("ppm2");
  const std::string path = dir.str("c.ppm");
  std::string bytes = "P6 # comment\n2 1 # sizes\n255\n";
  bytes += std::string(6, '\x10');
  fv::write_file_atomic(path, bytes);
  Image img = fv::load_ppm(path);
  CHECK(img.width() == 2);
  CHECK(img.height() == 1);
  CHECK(img.at(0, 1, 2) == 16.0f);
}

TEST_CASE("ppm: malformed files fail with byte offsets") {
  TempDir dir("ppm3");

  auto write = [&](const std::string& name, const std::string& bytes) {
    fv::write_file_atomic(dir.str(name), bytes);
    return dir.str(name);
  };

  CHECK_THROWS_WITH_AS(fv::load_ppm(write("magic.ppm", "JUNKJUNK")),
                       doctest::Contains("bad magic"), fv::ParseError);
  CHECK_THROWS_WITH_AS(fv::load_ppm(write("pgm.ppm", "P5\n1 1\n255\n\x00")),
                       doctest::Contains("expected P6"), fv::ParseError);
  CHECK_THROWS_WITH_AS(
      fv::load_ppm(write("maxval.ppm", "P6\n1 1\n65535\n\x01\x02")),
      doctest::Contains("unsupported maxval 65535"), fv::ParseError);
  // 2x2 needs 12 raster bytes; provide 5 and expect the offset of the raster.
  CHECK_THROWS_WITH_AS(
      fv::load_ppm(write("trunc.ppm", std::string("P6\n2 2\n255\n") +
                                          std::string(5, '\x01'))),
      doctest::Contains("expected 12 bytes, found 5 at byte 11"),
      fv::ParseError);
  CHECK_THROWS_AS(fv::load_ppm(dir.str("missing.ppm")), fv::IoError);
}

TEST_CASE("ppm: save-load round trip is bitwise identity") {
  TempDir dir("ppm4");
  Rng rng(1);
  Image img = random_raw(7, 5, rng);
  const std::string path = dir.str("rt.ppm");
  fv::save_ppm(path, img);
  Image back = fv::load_ppm(path);
  CHECK(images_equal(img, back));

  // Two saves of the same image produce byte-identical files.
  const std::string path2 = dir.str("rt2.ppm");
  fv::save_ppm(path2, img);
  CHECK(fv::read_file(path) == fv::read_file(path2));

  // Unit-mode images must be quantized before hitting the writer.
  CHECK_THROWS_AS(fv::save_ppm(dir.str("bad.ppm"), fv::normalize(img)),
                  fv::ContractError);
}

TEST_CASE("pgm: single-channel round trip") {
  TempDir dir("pgm");
  Image gray = Image::raw8(3, 4, 1);
  Rng rng(2);
  for (auto& v : gray.data()) v = static_cast<float>(rng.below(256));
  fv::save_pgm(dir.str("g.pgm"), gray);
  CHECK(images_equal(gray, fv::load_pgm(dir.str("g.pgm"))));
  // channel mismatch rejected
  CHECK_THROWS_AS(fv::save_pgm(dir.str("bad.pgm"), random_raw(2, 2, rng)),
                  fv::ContractError);
}

TEST_CASE("normalize: divides by 255 exactly once") {
  Image img = Image::raw8(1, 3, 3);
  img.at(0, 0, 0) = 255.0f;
  img.at(0, 1, 1) = 0.0f;
  img.at(0, 2, 2) = 51.0f;
  Image unit = fv::normalize(img);
  CHECK(unit.mode() == PixelMode::unit);
  CHECK(unit.at(0, 0, 0) == 1.0f);
  CHECK(unit.at(0, 1, 1) == 0.0f);
  CHECK(unit.at(0, 2, 2) == doctest::Approx(0.2).epsilon(1e-7));
  CHECK_THROWS_AS(fv::normalize(unit), fv::ContractError);
}

TEST_CASE("quantize: inverse of normalize on byte values") {
  Rng rng(3);
  Image img = random_raw(4, 4, rng);
  CHECK(images_equal(img, fv::quantize_to_raw8(fv::normalize(img))));
  CHECK_THROWS_AS(fv::quantize_to_raw8(img), fv::ContractError);
}

TEST_CASE("gamma: fixpoints, the 0.5 oracle, clamping, and contracts") {
  Image img = Image::unit(1, 4, 3);
  img.at(0, 0, 0) = 0.0f;
  img.at(0, 1, 0) = 1.0f;
  img.at(0, 2, 0) = 0.5f;
  img.at(0, 3, 0) = 0.9f;

  GammaParams ident{1.0f, 1.0f};
  CHECK(images_equal(fv::gamma_transform(img, ident), img));

  GammaParams p;  // defaults c=1, gamma=1.1
  Image out = fv::gamma_transform(img, p);
  CHECK(out.at(0, 0, 0) == 0.0f);
  CHECK(out.at(0, 1, 0) == 1.0f);
  // 0.5^1.1 evaluated through 64-bit pow
  CHECK(out.at(0, 2, 0) ==
        doctest::Approx(std::pow(0.5, 1.1)).epsilon(1e-6));
  CHECK(out.at(0, 2, 0) == doctest::Approx(0.46651).epsilon(1e-4));

  // c > 1 pushes bright pixels past 1; the clamp catches them
  GammaParams bright{2.0f, 1.1f};
  CHECK(fv::gamma_transform(img, bright).at(0, 3, 0) == 1.0f);

  GammaParams bad{0.0f, 1.0f};
  CHECK_THROWS_AS(fv::gamma_transform(img, bad), fv::ConfigError);
  Image raw = Image::raw8(1, 1, 3);
  CHECK_THROWS_AS(fv::gamma_transform(raw, p), fv::ContractError);
  Image outside = Image::unit(1, 1, 3);
  outside.at(0, 0, 0) = 1.5f;
  CHECK_THROWS_AS(fv::gamma_transform(outside, p), fv::ContractError);
}

TEST_CASE("gamma: monotone and midtone-darkening for gamma > 1") {
  GammaParams p;
  Rng rng(4);
  Image img = Image::unit(1, 64, 3);
  for (auto& v : img.data()) v = static_cast<float>(rng.uniform());
  Image out = fv::gamma_transform(img, p);
  for (std::size_t i = 0; i < img.data().size(); ++i) {
    CHECK(out.data()[i] <= img.data()[i]);  // darkens on [0,1]
    for (std::size_t j = 0; j < img.data().size(); ++j)
      if (img.data()[i] < img.data()[j]) CHECK(out.data()[i] <= out.data()[j]);
  }
}

TEST_CASE("resize: identity, tiling up, striding down, no new values") {
  Rng rng(5);
  Image img = random_raw(2, 2, rng);
  CHECK(images_equal(fv::resize_nearest(img, 2, 2), img));

  Image up = fv::resize_nearest(img, 4, 4);
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j)
      for (int c = 0; c < 3; ++c)
        CHECK(up.at(i, j, c) == img.at(i / 2, j / 2, c));

  Image big = random_raw(4, 4, rng);
  Image down = fv::resize_nearest(big, 2, 2);
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j)
      for (int c = 0; c < 3; ++c)
        CHECK(down.at(i, j, c) == big.at(2 * i, 2 * j, c));

  Image odd = random_raw(5, 3, rng);
  Image warped = fv::resize_nearest(odd, 7, 11);
  std::set<float> source(odd.data().begin(), odd.data().end());
  for (float v : warped.data()) CHECK(source.count(v) == 1);

  CHECK_THROWS_AS(fv::resize_nearest(img, 0, 2), fv::ContractError);
}

TEST_CASE("augment: degenerate config is the identity") {
  AugmentConfig cfg;
  cfg.rotation_deg = 0;
  cfg.shift_frac = 0;
  cfg.shear = 0;
  cfg.zoom_frac = 0;
  cfg.hflip = false;
  Rng rng(6);
  AffineSample s = fv::draw_affine_sample(cfg, rng);
  CHECK(s.angle_rad == 0.0);
  CHECK(s.shift_x == 0.0);
  CHECK(s.shift_y == 0.0);
  CHECK(s.shear == 0.0);
  CHECK(s.zoom == 1.0);
  CHECK_FALSE(s.flip);

  Rng rng2(7);
  Image img = fv::normalize(random_raw(9, 6, rng2));
  CHECK(images_equal(fv::apply_affine(img, s), img));
}

TEST_CASE("augment: forced horizontal flip is an involution") {
  Rng rng(8);
  Image img = fv::normalize(random_raw(8, 8, rng));
  AffineSample flip;
  flip.flip = true;
  Image once = fv::apply_affine(img, flip);
  CHECK_FALSE(images_equal(once, img));  // random image: flip visibly differs
  CHECK(once.at(0, 0, 0) == img.at(0, 7, 0));
  CHECK(images_equal(fv::apply_affine(once, flip), img));
}

TEST_CASE("augment: deterministic per seed, preserves shape and range") {
  AugmentConfig cfg;  // full default ranges
  Rng rng(9);
  Image img = fv::normalize(random_raw(16, 16, rng));

  Rng a(42), b(42), c(43);
  Image outA = fv::augment(img, cfg, a);
  Image outB = fv::augment(img, cfg, b);
  Image outC = fv::augment(img, cfg, c);
  CHECK(images_equal(outA, outB));
  CHECK_FALSE(images_equal(outA, outC));
  CHECK(outA.height() == 16);
  CHECK(outA.width() == 16);
  for (float v : outA.data()) {
    CHECK(v >= 0.0f);
    CHECK(v <= 1.0f);
  }

  AugmentConfig bad;
  bad.rotation_deg = 360.0f;
  Rng r2(1);
  CHECK_THROWS_AS(fv::augment(img, bad, r2), fv::ConfigError);
}

TEST_CASE("preprocess: all legal stage orders produce unit images") {
  Rng rng(10);
  Image raw = random_raw(20, 20, rng);

  fv::PreprocessConfig cfg;
  cfg.target_size = 8;
  Image def = fv::preprocess(raw, cfg);
  CHECK(def.mode() == PixelMode::unit);
  CHECK(def.height() == 8);
  CHECK(def.width() == 8);

  // default order == hand-composed normalize -> gamma -> resize
  Image manual = fv::resize_nearest(
      fv::gamma_transform(fv::normalize(raw), cfg.gamma), 8, 8);
  CHECK(images_equal(def, manual));

  for (const char* name :
       {"normalize,gamma,resize", "normalize,resize,gamma",
        "resize,normalize,gamma"}) {
    fv::PreprocessConfig c2 = cfg;
    c2.order = fv::parse_pipeline_order(name);
    CHECK(fv::pipeline_order_name(c2.order) == name);
    Image out = fv::preprocess(raw, c2);
    CHECK(out.mode() == PixelMode::unit);
    CHECK(out.height() == 8);
  }
  CHECK_THROWS_AS(fv::parse_pipeline_order("gamma,first"), fv::ConfigError);
  CHECK_THROWS_AS(fv::preprocess(fv::normalize(raw), cfg), fv::ContractError);
}

TEST_CASE("image_to_tensor: planar channel-first layout") {
  Image img = Image::unit(2, 3, 3);
  Rng rng(11);
  for (auto& v : img.data()) v = static_cast<float>(rng.uniform());
  fv::Tensor t = fv::image_to_tensor(img);
  CHECK(t.shape() == fv::Shape{3, 2, 3});
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < 2; ++y)
      for (int x = 0; x < 3; ++x) CHECK(t.at(c, y, x) == img.at(y, x, c));
  CHECK_THROWS_AS(fv::image_to_tensor(Image::raw8(2, 2, 3)),
                  fv::ContractError);
}

TEST_CASE("synthetic dataset: balance, determinism, and geometry") {
  LabeledDataset ds = fv::generate_synthetic_dataset(8, 50, 32, 123);
  CHECK(ds.items.size() == 400);
  CHECK(ds.class_names.size() == 8);
  CHECK(ds.class_names[0] == "class0");
  CHECK(ds.class_names[7] == "class7");
  for (std::size_t count : ds.class_counts()) CHECK(count == 50);
  for (const auto& item : ds.items) {
    CHECK(item.image.height() == 32);
    CHECK(item.image.width() == 32);
    CHECK(item.image.mode() == PixelMode::raw8);
  }

  LabeledDataset again = fv::generate_synthetic_dataset(8, 50, 32, 123);
  REQUIRE(again.items.size() == ds.items.size());
  for (std::size_t i = 0; i < ds.items.size(); ++i)
    CHECK(images_equal(ds.items[i].image, again.items[i].image));

  LabeledDataset other = fv::generate_synthetic_dataset(8, 50, 32, 124);
  bool any_diff = false;
  for (std::size_t i = 0; i < ds.items.size() && !any_diff; ++i)
    any_diff = !images_equal(ds.items[i].image, other.items[i].image);
  CHECK(any_diff);

  CHECK_THROWS_AS(fv::generate_synthetic_dataset(1, 5, 32, 1),
                  fv::ConfigError);
  CHECK_THROWS_AS(fv::generate_synthetic_dataset(4, 0, 32, 1),
                  fv::ConfigError);
  CHECK_THROWS_AS(fv::generate_synthetic_dataset(4, 5, 0, 1),
                  fv::ConfigError);
}

TEST_CASE("synthetic dataset: classes separate in histogram space") {
  // 24-bin color histogram (8 bins x 3 channels), L1 distance: the mean
  // distance between images of different classes must exceed the mean
  // distance within a class.
  LabeledDataset ds = fv::generate_synthetic_dataset(8, 10, 32, 55);
  auto histogram = [](const Image& img) {
    std::vector<double> h(24, 0.0);
    for (int y = 0; y < img.height(); ++y)
      for (int x = 0; x < img.width(); ++x)
        for (int c = 0; c < 3; ++c) {
          const int bin = std::min(7, static_cast<int>(img.at(y, x, c)) / 32);
          h[static_cast<std::size_t>(c * 8 + bin)] += 1.0;
        }
    const double total = static_cast<double>(img.height()) * img.width();
    for (auto& v : h) v /= total;
    return h;
  };

  std::vector<std::vector<double>> hists;
  for (const auto& item : ds.items) hists.push_back(histogram(item.image));

  double intra = 0.0, inter = 0.0;
  std::size_t n_intra = 0, n_inter = 0;
  for (std::size_t i = 0; i < hists.size(); ++i)
    for (std::size_t j = i + 1; j < hists.size(); ++j) {
      double d = 0.0;
      for (std::size_t k = 0; k < 24; ++k)
        d += std::abs(hists[i][k] - hists[j][k]);
      if (ds.items[i].label == ds.items[j].label) {
        intra += d;
        ++n_intra;
      } else {
        inter += d;
        ++n_inter;
      }
    }
  REQUIRE(n_intra > 0);
  REQUIRE(n_inter > 0);
  CHECK(inter / static_cast<double>(n_inter) >
        intra / static_cast<double>(n_intra));
}

TEST_CASE("dataset tree: save then load reproduces images bitwise") {
  TempDir dir("tree");
  LabeledDataset ds = fv::generate_synthetic_dataset(3, 4, 16, 9);
  fv::save_dataset(ds, dir.str("data"));
  LabeledDataset back = fv::load_dataset(dir.str("data"));
  CHECK(back.class_names == ds.class_names);
  REQUIRE(back.items.size() == ds.items.size());
  for (std::size_t i = 0; i < ds.items.size(); ++i) {
    CHECK(back.items[i].label == ds.items[i].label);
    CHECK(images_equal(back.items[i].image, ds.items[i].image));
  }
  CHECK_THROWS_AS(fv::load_dataset(dir.str("nope")), fv::ConfigError);
}

TEST_CASE("stratified split: 80/20, per-class, disjoint, deterministic") {
  LabeledDataset ds = fv::generate_synthetic_dataset(4, 50, 16, 77);
  fv::SplitDataset split = fv::stratified_split(ds, 0.2, 31);
  CHECK(split.seed == 31);
  CHECK(split.train.items.size() == 160);
  CHECK(split.test.items.size() == 40);
  for (std::size_t c : split.train.class_counts()) CHECK(c == 40);
  for (std::size_t c : split.test.class_counts()) CHECK(c == 10);

  // disjoint and jointly exhaustive: byte-serialize every image
  auto key = [](const LabeledImage& li) {
    std::string k = std::to_string(li.label) + "|";
    for (float v : li.image.data())
      k.push_back(static_cast<char>(static_cast<unsigned char>(v)));
    return k;
  };
  std::multiset<std::string> all, recombined;
  for (const auto& it : ds.items) all.insert(key(it));
  std::set<std::string> train_keys;
  for (const auto& it : split.train.items) {
    recombined.insert(key(it));
    train_keys.insert(key(it));
  }
  for (const auto& it : split.test.items) {
    recombined.insert(key(it));
    CHECK(train_keys.count(key(it)) == 0);
  }
  CHECK(all == recombined);

  fv::SplitDataset rerun = fv::stratified_split(ds, 0.2, 31);
  REQUIRE(rerun.train.items.size() == split.train.items.size());
  for (std::size_t i = 0; i < split.train.items.size(); ++i)
    CHECK(images_equal(rerun.train.items[i].image,
                       split.train.items[i].image));

  CHECK_THROWS_AS(fv::stratified_split(ds, 1.0, 1), fv::ConfigError);
  CHECK_THROWS_AS(fv::stratified_split(ds, -0.1, 1), fv::ConfigError);
}
