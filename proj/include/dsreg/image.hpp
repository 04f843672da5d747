#pragma once

#include <png.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "dsreg/errors.hpp"
#include "dsreg/geometry.hpp"

namespace dsreg {

/// 8-bit grayscale raster, row-major.
class GrayImage {
 public:
  GrayImage() = default;
  GrayImage(int width, int height, std::uint8_t fill = 0)
      : width_(width), height_(height) {
    if (width < 1 || height < 1) throw ContractViolation("GrayImage: dimensions must be >= 1");
    pixels_.assign(static_cast<std::size_t>(width) * height, fill);
  }
  GrayImage(int width, int height, std::vector<std::uint8_t> pixels)
      : width_(width), height_(height), pixels_(std::move(pixels)) {
    if (width < 1 || height < 1) throw ContractViolation("GrayImage: dimensions must be >= 1");
    if (pixels_.size() != static_cast<std::size_t>(width) * height)
      throw ContractViolation("GrayImage: pixel count does not match dimensions");
  }

  int width() const { return width_; }
  int height() const { return height_; }
  bool empty() const { return pixels_.empty(); }
  bool contains(int x, int y) const { return x >= 0 && y >= 0 && x < width_ && y < height_; }

  std::uint8_t at(int x, int y) const { return pixels_[index(x, y)]; }
  std::uint8_t& at(int x, int y) { return pixels_[index(x, y)]; }

  std::span<const std::uint8_t> pixels() const { return pixels_; }
  std::span<std::uint8_t> pixels() { return pixels_; }

  bool operator==(const GrayImage&) const = default;

 private:
  std::size_t index(int x, int y) const {
    return static_cast<std::size_t>(y) * width_ + x;
  }
  int width_ = 0;
  int height_ = 0;
  std::vector<std::uint8_t> pixels_;
};

/// Per-pixel foreground flags (0 or 1).
class RoiMask {
 public:
  RoiMask() = default;
  RoiMask(int width, int height, bool fill = false)
      : width_(width), height_(height),
        bits_(static_cast<std::size_t>(width) * height, fill ? 1 : 0) {
    if (width < 1 || height < 1) throw ContractViolation("RoiMask: dimensions must be >= 1");
  }

  int width() const { return width_; }
  int height() const { return height_; }
  bool contains(int x, int y) const { return x >= 0 && y >= 0 && x < width_ && y < height_; }

  bool at(int x, int y) const { return bits_[index(x, y)] != 0; }
  void set(int x, int y, bool v) { bits_[index(x, y)] = v ? 1 : 0; }
  /// Outside the raster counts as background.
  bool test(int x, int y) const { return contains(x, y) && at(x, y); }

  std::span<const std::uint8_t> bits() const { return bits_; }
  std::span<std::uint8_t> bits() { return bits_; }

  std::size_t count() const {
    return static_cast<std::size_t>(std::count(bits_.begin(), bits_.end(), std::uint8_t{1}));
  }
  bool any() const { return count() > 0; }

  bool operator==(const RoiMask&) const = default;

 private:
  std::size_t index(int x, int y) const {
    return static_cast<std::size_t>(y) * width_ + x;
  }
  int width_ = 0;
  int height_ = 0;
  std::vector<std::uint8_t> bits_;
};

inline bool same_shape(const GrayImage& img, const RoiMask& roi) {
  return img.width() == roi.width() && img.height() == roi.height();
}

inline RoiMask intersect(const RoiMask& a, const RoiMask& b) {
  if (a.width() != b.width() || a.height() != b.height())
    throw ContractViolation("intersect: mask shapes differ");
  RoiMask out(a.width(), a.height());
  for (std::size_t i = 0; i < a.bits().size(); ++i)
    out.bits()[i] = (a.bits()[i] && b.bits()[i]) ? 1 : 0;
  return out;
}

/// Centroid of foreground pixels; raster center for an empty mask.
inline Vec2 roi_centroid(const RoiMask& roi) {
  double sx = 0.0, sy = 0.0;
  std::size_t n = 0;
  for (int y = 0; y < roi.height(); ++y)
    for (int x = 0; x < roi.width(); ++x)
      if (roi.at(x, y)) {
        sx += x;
        sy += y;
        ++n;
      }
  if (n == 0) return {roi.width() / 2.0, roi.height() / 2.0};
  return {sx / n, sy / n};
}

/// Bilinear intensity at p, or false when p falls outside [0,w-1]x[0,h-1].
inline bool sample_bilinear(const GrayImage& img, Vec2 p, double& value) {
  if (!(p.x >= 0.0 && p.y >= 0.0 && p.x <= img.width() - 1 && p.y <= img.height() - 1))
    return false;
  const int x0 = std::min(static_cast<int>(p.x), img.width() - 1);
  const int y0 = std::min(static_cast<int>(p.y), img.height() - 1);
  const int x1 = std::min(x0 + 1, img.width() - 1);
  const int y1 = std::min(y0 + 1, img.height() - 1);
  const double fx = p.x - x0, fy = p.y - y0;
  const double top = img.at(x0, y0) * (1.0 - fx) + img.at(x1, y0) * fx;
  const double bot = img.at(x0, y1) * (1.0 - fx) + img.at(x1, y1) * fx;
  value = top * (1.0 - fy) + bot * fy;
  return true;
}

inline bool sample_nearest(const RoiMask& roi, Vec2 p) {
  return roi.test(static_cast<int>(std::lround(p.x)), static_cast<int>(std::lround(p.y)));
}

inline std::uint8_t to_u8(double v) {
  return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
}

// ---------------------------------------------------------------------------
// Raster I/O: binary PGM (P5) and PNG.

namespace detail {

inline bool has_suffix(const std::string& s, const std::string& suffix) {
  if (s.size() < suffix.size()) return false;
  return std::equal(suffix.rbegin(), suffix.rend(), s.rbegin(), [](char a, char b) {
    return std::tolower(static_cast<unsigned char>(a)) == std::tolower(static_cast<unsigned char>(b));
  });
}

inline GrayImage read_pgm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError(LoadError::Kind::Unreadable, "cannot open " + path);
  auto token = [&]() {
    std::string t;
    char c;
    while (in.get(c)) {
      if (c == '#') {
        std::string skip;
        std::getline(in, skip);
        continue;
      }
      if (std::isspace(static_cast<unsigned char>(c))) {
        if (!t.empty()) break;
        continue;
      }
      t.push_back(c);
    }
    return t;
  };
  if (token() != "P5")
    throw LoadError(LoadError::Kind::UnsupportedFormat, path + ": not a binary PGM (P5)");
  int w = 0, h = 0, maxval = 0;
  try {
    w = std::stoi(token());
    h = std::stoi(token());
    maxval = std::stoi(token());
  } catch (const std::exception&) {
    throw LoadError(LoadError::Kind::Unreadable, path + ": malformed PGM header");
  }
  if (maxval > 255)
    throw LoadError(LoadError::Kind::UnsupportedFormat, path + ": 16-bit PGM is not supported");
  if (w < 1 || h < 1 || maxval < 1)
    throw LoadError(LoadError::Kind::Unreadable, path + ": invalid PGM dimensions");
  std::vector<std::uint8_t> px(static_cast<std::size_t>(w) * h);
  in.read(reinterpret_cast<char*>(px.data()), static_cast<std::streamsize>(px.size()));
  if (in.gcount() != static_cast<std::streamsize>(px.size()))
    throw LoadError(LoadError::Kind::Unreadable, path + ": truncated PGM data");
  return GrayImage(w, h, std::move(px));
}

inline GrayImage read_png(const std::string& path) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.c_str())) {
    const std::string msg = image.message;
    png_image_free(&image);
    throw LoadError(LoadError::Kind::Unreadable, path + ": " + msg);
  }
  if (image.format & (PNG_FORMAT_FLAG_LINEAR | PNG_FORMAT_FLAG_COLOR)) {
    png_image_free(&image);
    throw LoadError(LoadError::Kind::UnsupportedFormat,
                    path + ": only 8-bit grayscale PNG is supported");
  }
  image.format = PNG_FORMAT_GRAY;
  std::vector<std::uint8_t> px(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, px.data(), 0, nullptr)) {
    const std::string msg = image.message;
    png_image_free(&image);
    throw LoadError(LoadError::Kind::Unreadable, path + ": " + msg);
  }
  return GrayImage(static_cast<int>(image.width), static_cast<int>(image.height), std::move(px));
}

inline void write_png_raw(const std::string& path, int w, int h, const std::uint8_t* data,
                          bool rgb) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(w);
  image.height = static_cast<png_uint_32>(h);
  image.format = rgb ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  if (!png_image_write_to_file(&image, path.c_str(), 0, data, 0, nullptr)) {
    const std::string msg = image.message;
    png_image_free(&image);
    throw Error("cannot write " + path + ": " + msg);
  }
}

}  // namespace detail

/// Loads an 8-bit grayscale PGM (P5) or PNG. Throws LoadError.
inline GrayImage load_gray_image(const std::string& path) {
  std::FILE* f = std::fopen(path.c_str(), "rb");
  if (!f) throw LoadError(LoadError::Kind::Unreadable, "cannot open " + path);
  unsigned char magic[8] = {};
  const std::size_t got = std::fread(magic, 1, sizeof magic, f);
  std::fclose(f);
  if (got >= 2 && magic[0] == 'P' && magic[1] == '5') return detail::read_pgm(path);
  if (got == 8 && png_sig_cmp(magic, 0, 8) == 0) return detail::read_png(path);
  if (got >= 2 && magic[0] == 'P')
    throw LoadError(LoadError::Kind::UnsupportedFormat, path + ": only binary PGM (P5) is supported");
  throw LoadError(LoadError::Kind::UnsupportedFormat, path + ": unrecognized raster format");
}

inline void save_pgm(const GrayImage& img, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path);
  out << "P5\n" << img.width() << " " << img.height() << "\n255\n";
  out.write(reinterpret_cast<const char*>(img.pixels().data()),
            static_cast<std::streamsize>(img.pixels().size()));
}

inline void save_png(const GrayImage& img, const std::string& path) {
  detail::write_png_raw(path, img.width(), img.height(), img.pixels().data(), false);
}

/// Writes by extension: .pgm gives P5, anything else PNG.
inline void save_gray_image(const GrayImage& img, const std::string& path) {
  if (detail::has_suffix(path, ".pgm"))
    save_pgm(img, path);
  else
    save_png(img, path);
}

/// Any nonzero pixel is foreground.
inline RoiMask load_roi_mask(const std::string& path) {
  const GrayImage img = load_gray_image(path);
  RoiMask roi(img.width(), img.height());
  for (std::size_t i = 0; i < img.pixels().size(); ++i) roi.bits()[i] = img.pixels()[i] ? 1 : 0;
  return roi;
}

inline GrayImage mask_to_image(const RoiMask& roi) {
  GrayImage img(roi.width(), roi.height());
  for (std::size_t i = 0; i < roi.bits().size(); ++i) img.pixels()[i] = roi.bits()[i] ? 255 : 0;
  return img;
}

inline void save_roi_mask(const RoiMask& roi, const std::string& path) {
  save_gray_image(mask_to_image(roi), path);
}

/// Interleaved 8-bit RGB raster used for visual overlays.
struct RgbImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> data;

  RgbImage(int w, int h) : width(w), height(h), data(static_cast<std::size_t>(w) * h * 3, 255) {}

  void set(int x, int y, std::uint8_t r, std::uint8_t g, std::uint8_t b) {
    if (x < 0 || y < 0 || x >= width || y >= height) return;
    auto* p = &data[(static_cast<std::size_t>(y) * width + x) * 3];
    p[0] = r;
    p[1] = g;
    p[2] = b;
  }

  void save_png(const std::string& path) const {
    detail::write_png_raw(path, width, height, data.data(), true);
  }
};

}  // namespace dsreg
