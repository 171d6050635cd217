#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fv/error.hpp"
#include "fv/rng.hpp"
#include "fv/tensor.hpp"

// Image container plus the preprocessing pipeline: PPM/PGM I/O, ÷255
// normalization, the gamma intensity transform, nearest-neighbor resizing,
// and the five-way random affine augmentation.

namespace fv {

// raw8: integral byte values in [0,255] straight from disk.
// unit: floats in [0,1] after normalization.
enum class PixelMode { raw8, unit };

// Row-major, channel-interleaved pixel grid (RGB RGB ...). Both modes store
// floats; raw8 keeps exact integral values so byte round-trips are lossless.
class Image {
 public:
  Image() = default;
  Image(int height, int width, int channels, PixelMode mode)
      : h_(height), w_(width), ch_(channels), mode_(mode) {
    if (height < 1 || width < 1 || channels < 1)
      throw DimensionError("image dims must be >= 1, got " +
                           std::to_string(height) + "x" +
                           std::to_string(width) + "x" +
                           std::to_string(channels));
    px_.assign(static_cast<std::size_t>(height) * width * channels, 0.0f);
  }

  static Image raw8(int h, int w, int ch) {
    return Image(h, w, ch, PixelMode::raw8);
  }
  static Image unit(int h, int w, int ch) {
    return Image(h, w, ch, PixelMode::unit);
  }

  int height() const { return h_; }
  int width() const { return w_; }
  int channels() const { return ch_; }
  PixelMode mode() const { return mode_; }
  bool defined() const { return !px_.empty(); }

  float& at(int y, int x, int c) {
    return px_[(static_cast<std::size_t>(y) * w_ + x) * ch_ + c];
  }
  float at(int y, int x, int c) const {
    return px_[(static_cast<std::size_t>(y) * w_ + x) * ch_ + c];
  }

  std::vector<float>& data() { return px_; }
  const std::vector<float>& data() const { return px_; }

 private:
  int h_ = 0, w_ = 0, ch_ = 0;
  PixelMode mode_ = PixelMode::raw8;
  std::vector<float> px_;
};

// Intensity map s = clamp(c * r^gamma, 0, 1) on unit-range pixels.
struct GammaParams {
  float c = 1.0f;
  float gamma = 1.1f;

  void validate() const {
    if (c <= 0.0f || gamma <= 0.0f)
      throw ConfigError("gamma params require c > 0 and gamma > 0");
  }
};

// Ranges for the five random affine augmentations. `seed` drives per-image
// substreams derived by the training loop.
struct AugmentConfig {
  float rotation_deg = 40.0f;
  float shift_frac = 0.2f;
  float shear = 0.2f;
  float zoom_frac = 0.2f;
  bool hflip = true;
  std::uint64_t seed = 0;

  void validate() const {
    if (rotation_deg < 0.0f || rotation_deg >= 360.0f)
      throw ConfigError("rotation_deg must be in [0,360)");
    if (shift_frac < 0.0f || shift_frac >= 1.0f || shear < 0.0f ||
        shear >= 1.0f || zoom_frac < 0.0f || zoom_frac >= 1.0f)
      throw ConfigError("augment fractions must be in [0,1)");
  }
};

// One concrete draw of the five augmentations, kept explicit so tests can
// force specific transforms (e.g. a pure flip).
struct AffineSample {
  double angle_rad = 0.0;
  double shift_x = 0.0;  // pixels
  double shift_y = 0.0;  // pixels
  double shear = 0.0;
  double zoom = 1.0;
  bool flip = false;
};

// --- file I/O ---------------------------------------------------------------

// Whole-file read; throws ParseError when the file cannot be opened.
std::string read_file(const std::string& path);

// Whole-file atomic write (temp file in the same directory, then rename).
void write_file_atomic(const std::string& path, const std::string& bytes);

// Binary P6 PPM with maxval 255. Parse failures report the byte offset.
Image load_ppm(const std::string& path);
void save_ppm(const std::string& path, const Image& img);  // raw8, 3 channels

// Binary P5 PGM with maxval 255 (single-channel raw8).
Image load_pgm(const std::string& path);
void save_pgm(const std::string& path, const Image& img);

// --- pixel transforms -------------------------------------------------------

// raw8 -> unit, dividing by 255. Normalizing twice is a contract error.
Image normalize(const Image& img);

// unit -> raw8, rounding v*255 to the nearest byte.
Image quantize_to_raw8(const Image& img);

// s = clamp(c * r^gamma, 0, 1); requires a normalized image.
Image gamma_transform(const Image& img, const GammaParams& p);

// out[i,j] = in[floor(i*H/out_h), floor(j*W/out_w)], either mode.
Image resize_nearest(const Image& img, int out_h, int out_w);

// Draws the five augmentation parameters in a fixed order (rotation, shift x,
// shift y, shear, zoom, flip).
AffineSample draw_affine_sample(const AugmentConfig& cfg, Rng& rng);

// Applies one composed affine map about the image center via inverse mapping
// with nearest-neighbor sampling and zero fill; requires a normalized image.
Image apply_affine(const Image& img, const AffineSample& s);

// One random affine augmentation: draw_affine_sample + apply_affine.
Image augment(const Image& img, const AugmentConfig& cfg, Rng& rng);

// --- preprocessing pipeline -------------------------------------------------

// Legal orderings of the normalize/gamma/resize stages. Gamma always runs on
// unit-range values, so normalize must precede it.
enum class PipelineOrder {
  normalize_gamma_resize,  // default
  normalize_resize_gamma,
  resize_normalize_gamma,
};

PipelineOrder parse_pipeline_order(const std::string& s);
std::string pipeline_order_name(PipelineOrder o);

struct PreprocessConfig {
  GammaParams gamma;
  int target_size = 32;
  PipelineOrder order = PipelineOrder::normalize_gamma_resize;

  void validate() const {
    gamma.validate();
    if (target_size < 1) throw ConfigError("target_size must be >= 1");
  }
};

// raw8 image from disk -> unit image at target_size x target_size.
Image preprocess(const Image& img, const PreprocessConfig& cfg);

// Planar [C x H x W] tensor from a normalized image.
Tensor image_to_tensor(const Image& img);

}  // namespace fv
