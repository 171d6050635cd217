#include "fv/explain.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "fv/error.hpp"
#include "fv/ops.hpp"
#include "fv/tensor.hpp"

namespace fv {

AttentionMap weighted_activation_map(const float* feats, const float* grads,
                                     int channels, int height, int width) {
  if (channels < 1 || height < 1 || width < 1)
    throw ContractError("weighted_activation_map: non-positive dimensions");
  const std::size_t hw =
      static_cast<std::size_t>(height) * static_cast<std::size_t>(width);

  std::vector<double> weight(static_cast<std::size_t>(channels), 0.0);
  for (int c = 0; c < channels; ++c) {
    double acc = 0.0;
    const float* gc = grads + static_cast<std::size_t>(c) * hw;
    for (std::size_t i = 0; i < hw; ++i) acc += gc[i];
    weight[static_cast<std::size_t>(c)] = acc / static_cast<double>(hw);
  }

  AttentionMap map;
  map.height = height;
  map.width = width;
  map.values.assign(hw, 0.0f);
  double max_v = 0.0;
  for (std::size_t i = 0; i < hw; ++i) {
    double acc = 0.0;
    for (int c = 0; c < channels; ++c)
      acc += weight[static_cast<std::size_t>(c)] *
             static_cast<double>(feats[static_cast<std::size_t>(c) * hw + i]);
    if (acc < 0.0) acc = 0.0;
    map.values[i] = static_cast<float>(acc);
    max_v = std::max(max_v, acc);
  }
  // Normalize by the stored (float) maximum so the peak cell is exactly 1.
  float max_f = 0.0f;
  for (float v : map.values) max_f = std::max(max_f, v);
  if (max_v <= 0.0 || max_f <= 0.0f) {
    map.all_zero = true;
    std::fill(map.values.begin(), map.values.end(), 0.0f);
  } else {
    for (auto& v : map.values) v /= max_f;
  }
  return map;
}

AttentionMap grad_cam(FusionModel& model, const Image& img, int target_class,
                      const std::string& layer) {
  const auto& cfg = model.config();
  if (target_class < 0 || target_class >= cfg.num_classes)
    throw ConfigError("grad_cam: target class " + std::to_string(target_class) +
                      " out of range for " + std::to_string(cfg.num_classes) +
                      " classes");

  Tensor x = image_to_tensor(img);
  Graph g(true);
  auto logits = model.forward_logits(g, {x}, false);
  auto target = select_scalar(g, logits, target_class);
  backward(g, target);

  auto fmap = model.tap(layer);
  const auto& fs = fmap.shape();
  if (fs.size() != 3)
    throw ConfigError("grad_cam: tap '" + layer + "' is not spatial");
  auto map = weighted_activation_map(fmap.data().data(), fmap.grad().data(),
                                     fs[0], fs[1], fs[2]);
  map.layer = layer;
  map.target_class = target_class;
  return map;
}

Image attention_to_image(const AttentionMap& map, int out_h, int out_w) {
  Image small = Image::unit(map.height, map.width, 1);
  for (int y = 0; y < map.height; ++y)
    for (int x = 0; x < map.width; ++x) small.at(y, x, 0) = map.at(y, x);
  return resize_nearest(small, out_h, out_w);
}

Image overlay_heatmap(const Image& base, const AttentionMap& map) {
  if (base.mode() != PixelMode::unit)
    throw ContractError("overlay_heatmap: base image must be unit-range");
  if (base.channels() != 3)
    throw ContractError("overlay_heatmap: base image must have 3 channels");
  Image heat = attention_to_image(map, base.height(), base.width());
  Image out = Image::unit(base.height(), base.width(), 3);
  for (int y = 0; y < base.height(); ++y)
    for (int x = 0; x < base.width(); ++x) {
      const float h = heat.at(y, x, 0);
      out.at(y, x, 0) = 0.5f * base.at(y, x, 0) + 0.5f * h;
      out.at(y, x, 1) = 0.5f * base.at(y, x, 1);
      out.at(y, x, 2) = 0.5f * base.at(y, x, 2);
    }
  return out;
}

}  // namespace fv
