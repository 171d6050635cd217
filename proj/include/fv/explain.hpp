#pragma once
// Gradient-weighted class activation maps over the CNN stream's spatial
// feature taps, plus raster helpers to upsample and overlay them.

#include <string>
#include <vector>

#include "fv/image.hpp"
#include "fv/model.hpp"

namespace fv {

// A spatial attention map aligned with one named feature tap. Values are
// row-major height*width, max-normalized into [0,1].
struct AttentionMap {
  int height = 0;
  int width = 0;
  std::vector<float> values;
  std::string layer;
  int target_class = 0;
  // Set when every gradient-weighted activation was <= 0: the map carries no
  // positive evidence for the class and all values are exactly zero.
  bool all_zero = false;

  float at(int y, int x) const {
    return values[static_cast<std::size_t>(y) * static_cast<std::size_t>(width) +
                  static_cast<std::size_t>(x)];
  }
};

// Core weighting step, exposed so its arithmetic can be verified directly:
// each channel of `feats` ([C x H x W], row-major) is weighted by the spatial
// mean of its gradient, the weighted channels are summed per pixel, negatives
// are clipped, and the result is scaled so its maximum is 1 (or flagged
// all_zero when nothing positive remains).
AttentionMap weighted_activation_map(const float* feats, const float* grads,
                                     int channels, int height, int width);

// Runs one inference-mode forward pass on `img`, backpropagates the
// `target_class` logit, and turns the chosen tap ("backbone", "aspp" or
// "se") into an attention map via weighted_activation_map.
AttentionMap grad_cam(FusionModel& model, const Image& img, int target_class,
                      const std::string& layer = "se");

// Nearest-neighbor upsample of the map as a single-channel unit-range image.
Image attention_to_image(const AttentionMap& map, int out_h, int out_w);

// Blend the map over a unit-range RGB image of the same geometry the map will
// be upsampled to: output red = base/2 + heat/2, green/blue = base/2, so hot
// regions glow red while the underlying structure stays visible.
Image overlay_heatmap(const Image& base, const AttentionMap& map);

}  // namespace fv
