#include "fv/image.hpp"

#include <unistd.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

namespace fv {

namespace {

// Streaming view over an in-memory netpbm file that reports byte offsets in
// every error message.
class ByteReader {
 public:
  ByteReader(const std::string& bytes, const std::string& path)
      : bytes_(bytes), path_(path) {}

  std::size_t offset() const { return pos_; }
  bool eof() const { return pos_ >= bytes_.size(); }

  char peek() const {
    if (eof()) fail("unexpected end of file");
    return bytes_[pos_];
  }
  char take() {
    char c = peek();
    ++pos_;
    return c;
  }

  // netpbm whitespace: blanks, and '#' comments running to end of line.
  void skip_space_and_comments() {
    while (!eof()) {
      char c = bytes_[pos_];
      if (c == ' ' || c == '\t' || c == '\r' || c == '\n') {
        ++pos_;
      } else if (c == '#') {
        while (!eof() && bytes_[pos_] != '\n') ++pos_;
      } else {
        break;
      }
    }
  }

  int read_int(const char* what) {
    skip_space_and_comments();
    if (eof()) fail(std::string("missing ") + what);
    if (peek() < '0' || peek() > '9')
      fail(std::string("expected digit for ") + what);
    long v = 0;
    while (!eof() && peek() >= '0' && peek() <= '9') {
      v = v * 10 + (take() - '0');
      if (v > 1000000000L) fail(std::string(what) + " out of range");
    }
    return static_cast<int>(v);
  }

  const char* raster(std::size_t count, const char* what) {
    if (bytes_.size() - pos_ < count)
      fail("truncated " + std::string(what) + ": expected " +
           std::to_string(count) + " bytes, found " +
           std::to_string(bytes_.size() - pos_));
    const char* p = bytes_.data() + pos_;
    pos_ += count;
    return p;
  }

  [[noreturn]] void fail(const std::string& msg) const {
    throw ParseError(path_ + ": " + msg + " at byte " + std::to_string(pos_));
  }

 private:
  const std::string& bytes_;
  std::string path_;
  std::size_t pos_ = 0;
};

Image load_netpbm(const std::string& path, char magic_digit, int channels) {
  const std::string bytes = read_file(path);
  ByteReader r(bytes, path);
  if (r.eof() || r.take() != 'P') {
    throw ParseError(path + ": bad magic (not a netpbm file) at byte 0");
  }
  if (r.eof() || r.peek() != magic_digit) {
    throw ParseError(path + ": bad magic 'P" +
                     (r.eof() ? std::string("<eof>") : std::string(1, r.peek())) +
                     "' (expected P" + std::string(1, magic_digit) +
                     ") at byte 1");
  }
  r.take();
  const int width = r.read_int("width");
  const int height = r.read_int("height");
  const int maxval = r.read_int("maxval");
  if (maxval != 255)
    throw ParseError(path + ": unsupported maxval " + std::to_string(maxval) +
                     " (only 255) at byte " + std::to_string(r.offset()));
  if (width < 1 || height < 1)
    throw ParseError(path + ": non-positive dimensions " +
                     std::to_string(width) + "x" + std::to_string(height) +
                     " at byte " + std::to_string(r.offset()));
  // Exactly one whitespace byte separates the header from the raster.
  if (r.eof()) r.fail("missing raster separator");
  const char sep = r.take();
  if (sep != ' ' && sep != '\t' && sep != '\r' && sep != '\n')
    throw ParseError(path + ": expected whitespace before raster at byte " +
                     std::to_string(r.offset() - 1));

  const std::size_t count =
      static_cast<std::size_t>(width) * height * channels;
  const char* raster = r.raster(count, "pixel raster");
  Image img(height, width, channels, PixelMode::raw8);
  for (std::size_t i = 0; i < count; ++i)
    img.data()[i] = static_cast<float>(static_cast<unsigned char>(raster[i]));
  return img;
}

void save_netpbm(const std::string& path, const Image& img,
                 const char* magic, int channels) {
  if (img.mode() != PixelMode::raw8)
    throw ContractError("netpbm writer requires raw8 pixels; quantize first");
  if (img.channels() != channels)
    throw ContractError(std::string(magic) + " requires " +
                        std::to_string(channels) + " channel(s), image has " +
                        std::to_string(img.channels()));
  std::ostringstream os;
  os << magic << "\n" << img.width() << " " << img.height() << "\n255\n";
  std::string out = os.str();
  out.reserve(out.size() + img.data().size());
  for (float v : img.data()) {
    const long b = std::lround(v);
    if (b < 0 || b > 255)
      throw ContractError("raw8 pixel out of byte range: " +
                          std::to_string(v));
    out.push_back(static_cast<char>(static_cast<unsigned char>(b)));
  }
  write_file_atomic(path, out);
}

float clamp01(float v) { return v < 0.0f ? 0.0f : (v > 1.0f ? 1.0f : v); }

}  // namespace

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(path + ": cannot open file");
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void write_file_atomic(const std::string& path, const std::string& bytes) {
  namespace fs = std::filesystem;
  const fs::path target(path);
  const fs::path tmp =
      target.parent_path() /
      (target.filename().string() + ".tmp" + std::to_string(::getpid()));
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError(tmp.string() + ": cannot open for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError(tmp.string() + ": short write");
  }
  std::error_code ec;
  fs::rename(tmp, target, ec);
  if (ec) {
    fs::remove(tmp);
    throw IoError(path + ": rename failed: " + ec.message());
  }
}

Image load_ppm(const std::string& path) { return load_netpbm(path, '6', 3); }

void save_ppm(const std::string& path, const Image& img) {
  save_netpbm(path, img, "P6", 3);
}

Image load_pgm(const std::string& path) { return load_netpbm(path, '5', 1); }

void save_pgm(const std::string& path, const Image& img) {
  save_netpbm(path, img, "P5", 1);
}

Image normalize(const Image& img) {
  if (img.mode() != PixelMode::raw8)
    throw ContractError("normalize: image is already normalized");
  Image out(img.height(), img.width(), img.channels(), PixelMode::unit);
  for (std::size_t i = 0; i < img.data().size(); ++i)
    out.data()[i] = img.data()[i] / 255.0f;
  return out;
}

Image quantize_to_raw8(const Image& img) {
  if (img.mode() != PixelMode::unit)
    throw ContractError("quantize_to_raw8: image is not normalized");
  Image out(img.height(), img.width(), img.channels(), PixelMode::raw8);
  for (std::size_t i = 0; i < img.data().size(); ++i) {
    const float v = clamp01(img.data()[i]);
    out.data()[i] = static_cast<float>(std::lround(v * 255.0f));
  }
  return out;
}

Image gamma_transform(const Image& img, const GammaParams& p) {
  p.validate();
  if (img.mode() != PixelMode::unit)
    throw ContractError("gamma_transform requires a normalized image");
  Image out(img.height(), img.width(), img.channels(), PixelMode::unit);
  for (std::size_t i = 0; i < img.data().size(); ++i) {
    const float r = img.data()[i];
    if (r < 0.0f || r > 1.0f)
      throw ContractError("gamma_transform: pixel " + std::to_string(r) +
                          " outside [0,1]");
    out.data()[i] = clamp01(p.c * std::pow(r, p.gamma));
  }
  return out;
}

Image resize_nearest(const Image& img, int out_h, int out_w) {
  if (out_h < 1 || out_w < 1)
    throw ContractError("resize_nearest: output dims must be >= 1");
  Image out(out_h, out_w, img.channels(), img.mode());
  for (int i = 0; i < out_h; ++i) {
    const int src_i = static_cast<int>(
        (static_cast<std::int64_t>(i) * img.height()) / out_h);
    for (int j = 0; j < out_w; ++j) {
      const int src_j = static_cast<int>(
          (static_cast<std::int64_t>(j) * img.width()) / out_w);
      for (int c = 0; c < img.channels(); ++c)
        out.at(i, j, c) = img.at(src_i, src_j, c);
    }
  }
  return out;
}

AffineSample draw_affine_sample(const AugmentConfig& cfg, Rng& rng) {
  cfg.validate();
  constexpr double kDegToRad = 3.14159265358979323846 / 180.0;
  AffineSample s;
  s.angle_rad = rng.uniform(-cfg.rotation_deg, cfg.rotation_deg) * kDegToRad;
  s.shift_x = rng.uniform(-cfg.shift_frac, cfg.shift_frac);
  s.shift_y = rng.uniform(-cfg.shift_frac, cfg.shift_frac);
  s.shear = rng.uniform(-cfg.shear, cfg.shear);
  s.zoom = rng.uniform(1.0 - cfg.zoom_frac, 1.0 + cfg.zoom_frac);
  s.flip = cfg.hflip && rng.bernoulli(0.5);
  return s;
}

Image apply_affine(const Image& img, const AffineSample& s) {
  if (img.mode() != PixelMode::unit)
    throw ContractError("apply_affine requires a normalized image");
  const int H = img.height(), W = img.width(), C = img.channels();

  // Forward map about the center: p_dst = A*(p_src - c) + c + t, with
  // A = Flip * Rot * Shear * Zoom. Sampling inverts it analytically.
  const double cos_t = std::cos(s.angle_rad), sin_t = std::sin(s.angle_rad);
  // Rot * Shear * Zoom, with Shear = [[1, sh],[0, 1]] and Zoom = z*I.
  double a = s.zoom * cos_t;
  double b = s.zoom * (s.shear * cos_t - sin_t);
  double c = s.zoom * sin_t;
  double d = s.zoom * (s.shear * sin_t + cos_t);
  if (s.flip) {  // negate the x-output row
    a = -a;
    b = -b;
  }
  const double det = a * d - b * c;
  if (std::abs(det) < 1e-12)
    throw ContractError("affine sample is singular (zoom too small)");
  const double ia = d / det, ib = -b / det, ic = -c / det, id = a / det;

  const double cx = (W - 1) / 2.0, cy = (H - 1) / 2.0;
  const double tx = s.shift_x * W, ty = s.shift_y * H;

  Image out(H, W, C, PixelMode::unit);
  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x) {
      const double dx = (x - cx) - tx;
      const double dy = (y - cy) - ty;
      const double sx = ia * dx + ib * dy + cx;
      const double sy = ic * dx + id * dy + cy;
      const long xs = std::lround(sx);
      const long ys = std::lround(sy);
      if (xs < 0 || xs >= W || ys < 0 || ys >= H) continue;  // zero fill
      for (int ch = 0; ch < C; ++ch)
        out.at(y, x, ch) =
            img.at(static_cast<int>(ys), static_cast<int>(xs), ch);
    }
  }
  return out;
}

Image augment(const Image& img, const AugmentConfig& cfg, Rng& rng) {
  return apply_affine(img, draw_affine_sample(cfg, rng));
}

PipelineOrder parse_pipeline_order(const std::string& s) {
  if (s == "normalize,gamma,resize") return PipelineOrder::normalize_gamma_resize;
  if (s == "normalize,resize,gamma") return PipelineOrder::normalize_resize_gamma;
  if (s == "resize,normalize,gamma") return PipelineOrder::resize_normalize_gamma;
  throw ConfigError(
      "unknown pipeline order '" + s +
      "' (normalize,gamma,resize | normalize,resize,gamma | "
      "resize,normalize,gamma)");
}

std::string pipeline_order_name(PipelineOrder o) {
  switch (o) {
    case PipelineOrder::normalize_gamma_resize: return "normalize,gamma,resize";
    case PipelineOrder::normalize_resize_gamma: return "normalize,resize,gamma";
    case PipelineOrder::resize_normalize_gamma: return "resize,normalize,gamma";
  }
  throw ConfigError("unknown pipeline order value");
}

Image preprocess(const Image& img, const PreprocessConfig& cfg) {
  cfg.validate();
  if (img.mode() != PixelMode::raw8)
    throw ContractError("preprocess expects a raw8 image from the loader");
  const int sz = cfg.target_size;
  switch (cfg.order) {
    case PipelineOrder::normalize_gamma_resize:
      return resize_nearest(gamma_transform(normalize(img), cfg.gamma), sz, sz);
    case PipelineOrder::normalize_resize_gamma:
      return gamma_transform(resize_nearest(normalize(img), sz, sz), cfg.gamma);
    case PipelineOrder::resize_normalize_gamma:
      return gamma_transform(normalize(resize_nearest(img, sz, sz)), cfg.gamma);
  }
  throw ConfigError("unknown pipeline order value");
}

Tensor image_to_tensor(const Image& img) {
  if (img.mode() != PixelMode::unit)
    throw ContractError("image_to_tensor requires a normalized image");
  Tensor t(Shape{img.channels(), img.height(), img.width()});
  for (int c = 0; c < img.channels(); ++c)
    for (int y = 0; y < img.height(); ++y)
      for (int x = 0; x < img.width(); ++x) t.at(c, y, x) = img.at(y, x, c);
  return t;
}

}  // namespace fv
