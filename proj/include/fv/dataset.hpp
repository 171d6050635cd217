#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fv/error.hpp"
#include "fv/image.hpp"

// Labeled image collections: a deterministic synthetic generator, a
// class-per-directory PPM tree loader/saver, and a stratified train/test
// split.

namespace fv {

struct LabeledImage {
  Image image;
  int label = 0;
};

struct LabeledDataset {
  std::vector<LabeledImage> items;
  std::vector<std::string> class_names;

  int num_classes() const { return static_cast<int>(class_names.size()); }

  void validate() const {
    for (const auto& it : items)
      if (it.label < 0 || it.label >= num_classes())
        throw ContractError("dataset item label " + std::to_string(it.label) +
                            " outside [0," + std::to_string(num_classes()) +
                            ")");
  }

  std::vector<std::size_t> class_counts() const {
    std::vector<std::size_t> counts(class_names.size(), 0);
    for (const auto& it : items) counts[static_cast<std::size_t>(it.label)]++;
    return counts;
  }
};

// Procedural texture classes: class k gets a deterministic stripe angle,
// stripe frequency, color palette, and blob density; every image adds
// per-image jitter from a substream derived from (seed, k, image_index).
// Output images are raw8 so that saving and reloading is bitwise lossless.
LabeledDataset generate_synthetic_dataset(int num_classes, int per_class,
                                          int size, std::uint64_t seed);

// Directory tree `root/<class_name>/<image>.ppm`; class order is the
// lexicographic directory order.
void save_dataset(const LabeledDataset& ds, const std::string& root);
LabeledDataset load_dataset(const std::string& root);

struct SplitDataset {
  LabeledDataset train;
  LabeledDataset test;
  std::uint64_t seed = 0;  // recorded so the split is reproducible
};

// Shuffles within each class and sends round(n*test_frac) items to the test
// side (at least one stays in train when a class has >= 2 items).
SplitDataset stratified_split(const LabeledDataset& ds, double test_frac,
                              std::uint64_t seed);

}  // namespace fv
