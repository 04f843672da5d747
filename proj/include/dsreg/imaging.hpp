#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <deque>
#include <vector>

#include "dsreg/errors.hpp"
#include "dsreg/geometry.hpp"
#include "dsreg/image.hpp"

namespace dsreg {

// ---------------------------------------------------------------------------
// ROI extraction

struct RoiConfig {
  int closeRadius = 5;
  int openRadius = 5;
};

/// Otsu threshold; pixels <= threshold form the dark class. Returns -1 when
/// no threshold separates two nonempty classes.
inline int otsu_threshold(const GrayImage& img) {
  std::array<double, 256> hist{};
  for (auto v : img.pixels()) hist[v] += 1.0;
  const double total = static_cast<double>(img.pixels().size());
  double sum_all = 0.0;
  for (int i = 0; i < 256; ++i) sum_all += i * hist[i];

  double w0 = 0.0, sum0 = 0.0, best = 0.0;
  int best_t = -1;
  for (int t = 0; t < 255; ++t) {
    w0 += hist[t];
    sum0 += t * hist[t];
    const double w1 = total - w0;
    if (w0 == 0.0 || w1 == 0.0) continue;
    const double m0 = sum0 / w0;
    const double m1 = (sum_all - sum0) / w1;
    const double between = w0 * w1 * (m0 - m1) * (m0 - m1);
    if (between > best) {
      best = between;
      best_t = t;
    }
  }
  return best_t;
}

namespace detail {

// Disk morphology via per-row prefix sums. Pixels outside the raster are
// ignored, so closing stays extensive and opening anti-extensive at borders.
inline RoiMask morph_disk(const RoiMask& in, int radius, bool dilate) {
  if (radius <= 0) return in;
  const int w = in.width(), h = in.height();
  std::vector<int> prefix(static_cast<std::size_t>(w + 1) * h, 0);
  for (int y = 0; y < h; ++y) {
    int* row = &prefix[static_cast<std::size_t>(y) * (w + 1)];
    for (int x = 0; x < w; ++x) row[x + 1] = row[x] + (in.at(x, y) ? 1 : 0);
  }
  std::vector<int> half(2 * radius + 1);
  for (int dy = -radius; dy <= radius; ++dy)
    half[dy + radius] = static_cast<int>(std::floor(std::sqrt(double(radius * radius - dy * dy))));

  RoiMask out(w, h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      bool result = !dilate;
      for (int dy = -radius; dy <= radius; ++dy) {
        const int yy = y + dy;
        if (yy < 0 || yy >= h) continue;
        const int hw = half[dy + radius];
        const int x0 = std::max(0, x - hw), x1 = std::min(w - 1, x + hw);
        const int* row = &prefix[static_cast<std::size_t>(yy) * (w + 1)];
        const int ones = row[x1 + 1] - row[x0];
        if (dilate && ones > 0) {
          result = true;
          break;
        }
        if (!dilate && ones != x1 - x0 + 1) {
          result = false;
          break;
        }
      }
      out.set(x, y, result);
    }
  }
  return out;
}

inline RoiMask largest_component(const RoiMask& in) {
  const int w = in.width(), h = in.height();
  std::vector<int> label(static_cast<std::size_t>(w) * h, 0);
  int best_label = 0;
  std::size_t best_size = 0;
  int next = 0;
  std::vector<int> stack;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const std::size_t idx = static_cast<std::size_t>(y) * w + x;
      if (!in.at(x, y) || label[idx]) continue;
      ++next;
      std::size_t size = 0;
      stack.assign(1, static_cast<int>(idx));
      label[idx] = next;
      while (!stack.empty()) {
        const int cur = stack.back();
        stack.pop_back();
        ++size;
        const int cx = cur % w, cy = cur / w;
        for (int dy = -1; dy <= 1; ++dy)
          for (int dx = -1; dx <= 1; ++dx) {
            const int nx = cx + dx, ny = cy + dy;
            if (!in.test(nx, ny)) continue;
            const std::size_t nidx = static_cast<std::size_t>(ny) * w + nx;
            if (label[nidx]) continue;
            label[nidx] = next;
            stack.push_back(static_cast<int>(nidx));
          }
      }
      if (size > best_size) {
        best_size = size;
        best_label = next;
      }
    }
  }
  RoiMask out(w, h);
  if (best_label == 0) return out;
  for (std::size_t i = 0; i < label.size(); ++i) out.bits()[i] = label[i] == best_label ? 1 : 0;
  return out;
}

inline RoiMask fill_holes(const RoiMask& in) {
  const int w = in.width(), h = in.height();
  std::vector<std::uint8_t> outside(static_cast<std::size_t>(w) * h, 0);
  std::deque<int> queue;
  auto seed = [&](int x, int y) {
    const std::size_t idx = static_cast<std::size_t>(y) * w + x;
    if (!in.at(x, y) && !outside[idx]) {
      outside[idx] = 1;
      queue.push_back(static_cast<int>(idx));
    }
  };
  for (int x = 0; x < w; ++x) {
    seed(x, 0);
    seed(x, h - 1);
  }
  for (int y = 0; y < h; ++y) {
    seed(0, y);
    seed(w - 1, y);
  }
  constexpr int kDx[4] = {1, -1, 0, 0};
  constexpr int kDy[4] = {0, 0, 1, -1};
  while (!queue.empty()) {
    const int cur = queue.front();
    queue.pop_front();
    const int cx = cur % w, cy = cur / w;
    for (int k = 0; k < 4; ++k) {
      const int nx = cx + kDx[k], ny = cy + kDy[k];
      if (nx < 0 || ny < 0 || nx >= w || ny >= h) continue;
      seed(nx, ny);
    }
  }
  RoiMask out(w, h);
  for (std::size_t i = 0; i < outside.size(); ++i) out.bits()[i] = outside[i] ? 0 : 1;
  return out;
}

}  // namespace detail

/// Foreground mask: Otsu (dark class), close, open, largest 8-connected
/// component, hole fill.
inline RoiMask compute_roi(const GrayImage& img, const RoiConfig& cfg = {}) {
  RoiMask mask(img.width(), img.height());
  const int t = otsu_threshold(img);
  if (t < 0) return mask;
  for (std::size_t i = 0; i < img.pixels().size(); ++i) mask.bits()[i] = img.pixels()[i] <= t ? 1 : 0;
  mask = detail::morph_disk(mask, cfg.closeRadius, true);
  mask = detail::morph_disk(mask, cfg.closeRadius, false);
  mask = detail::morph_disk(mask, cfg.openRadius, false);
  mask = detail::morph_disk(mask, cfg.openRadius, true);
  mask = detail::largest_component(mask);
  return detail::fill_holes(mask);
}

// ---------------------------------------------------------------------------
// Orientation field

/// Doubled-angle encoding of a ridge orientation. The angle is reduced
/// modulo 180 first so O and O+180 encode identically.
inline Vec2 orientation_vector(double deg) {
  const double r = deg2rad(2.0 * wrap90(deg));
  return {std::cos(r), std::sin(r)};
}

/// Block-wise ridge orientation as (cos 2O, sin 2O) plus coherence.
struct OrientationField {
  int blockSize = 8;
  int cols = 0;
  int rows = 0;
  std::vector<double> cos2;
  std::vector<double> sin2;
  std::vector<double> coherence;

  std::size_t index(int bx, int by) const { return static_cast<std::size_t>(by) * cols + bx; }

  /// Ridge orientation of a block in [-90, 90).
  double orientation(int bx, int by) const {
    const std::size_t i = index(bx, by);
    return wrap90(0.5 * rad2deg(std::atan2(sin2[i], cos2[i])));
  }

  /// Block containing pixel position p (clamped to the grid).
  std::pair<int, int> block_at(Vec2 p) const {
    const int bx = std::clamp(static_cast<int>(std::floor(p.x / blockSize)), 0, cols - 1);
    const int by = std::clamp(static_cast<int>(std::floor(p.y / blockSize)), 0, rows - 1);
    return {bx, by};
  }

  Vec2 block_center(int bx, int by) const {
    return {bx * blockSize + 0.5 * (blockSize - 1), by * blockSize + 0.5 * (blockSize - 1)};
  }
};

struct OrientationConfig {
  int blockSize = 8;
  double smoothingSigmaBlocks = 1.0;
};

/// Averaged-squared-gradient orientation per block, Gaussian-smoothed over
/// foreground blocks. Background blocks get coherence 0 and a zero vector.
inline OrientationField estimate_orientation_field(const GrayImage& img, const RoiMask& roi,
                                                   const OrientationConfig& cfg = {}) {
  if (!same_shape(img, roi))
    throw ContractViolation("estimate_orientation_field: image and ROI dimensions differ");
  const int w = img.width(), h = img.height(), bs = cfg.blockSize;
  OrientationField f;
  f.blockSize = bs;
  f.cols = (w + bs - 1) / bs;
  f.rows = (h + bs - 1) / bs;
  const std::size_t nb = static_cast<std::size_t>(f.cols) * f.rows;
  std::vector<double> gxx(nb, 0.0), gxy(nb, 0.0), ge(nb, 0.0);
  std::vector<int> fg(nb, 0), cnt(nb, 0);

  auto px = [&](int x, int y) {
    return static_cast<double>(img.at(std::clamp(x, 0, w - 1), std::clamp(y, 0, h - 1)));
  };
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const std::size_t b = f.index(x / bs, y / bs);
      ++cnt[b];
      if (!roi.at(x, y)) continue;
      ++fg[b];
      const double gx = (px(x + 1, y - 1) + 2 * px(x + 1, y) + px(x + 1, y + 1)) -
                        (px(x - 1, y - 1) + 2 * px(x - 1, y) + px(x - 1, y + 1));
      const double gy = (px(x - 1, y + 1) + 2 * px(x, y + 1) + px(x + 1, y + 1)) -
                        (px(x - 1, y - 1) + 2 * px(x, y - 1) + px(x + 1, y - 1));
      gxx[b] += gx * gx - gy * gy;
      gxy[b] += 2.0 * gx * gy;
      ge[b] += gx * gx + gy * gy;
    }
  }

  f.cos2.assign(nb, 0.0);
  f.sin2.assign(nb, 0.0);
  f.coherence.assign(nb, 0.0);
  const double sigma = cfg.smoothingSigmaBlocks;
  const int rad = sigma > 0.0 ? static_cast<int>(std::ceil(2.0 * sigma)) : 0;
  for (int by = 0; by < f.rows; ++by) {
    for (int bx = 0; bx < f.cols; ++bx) {
      const std::size_t b = f.index(bx, by);
      if (2 * fg[b] < cnt[b] || fg[b] == 0) continue;
      double sxx = 0.0, sxy = 0.0, se = 0.0;
      for (int dy = -rad; dy <= rad; ++dy) {
        for (int dx = -rad; dx <= rad; ++dx) {
          const int nx = bx + dx, ny = by + dy;
          if (nx < 0 || ny < 0 || nx >= f.cols || ny >= f.rows) continue;
          const std::size_t nbi = f.index(nx, ny);
          if (2 * fg[nbi] < cnt[nbi] || fg[nbi] == 0) continue;
          const double wgt = sigma > 0.0 ? std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma)) : 1.0;
          sxx += wgt * gxx[nbi];
          sxy += wgt * gxy[nbi];
          se += wgt * ge[nbi];
        }
      }
      const double mag = std::hypot(sxx, sxy);
      if (se <= 0.0 || mag <= 0.0) continue;
      f.cos2[b] = -sxx / mag;
      f.sin2[b] = -sxy / mag;
      f.coherence[b] = std::min(1.0, mag / se);
    }
  }
  return f;
}

// ---------------------------------------------------------------------------
// Patch extraction

struct PatchSpec {
  Vec2 center;
  double direction = 0.0;  // degrees, mapped to the patch +x axis
  int size = 200;
};

struct Patch {
  GrayImage image;
  RoiMask mask;
};

/// Offset of patch pixel (i, j) from the patch center.
inline Vec2 patch_offset(int i, int j, int size) {
  return {static_cast<double>(i - size / 2), static_cast<double>(j - size / 2)};
}

/// Size x size window centered at spec.center, rotated so spec.direction
/// maps to +x. Bilinear intensity, nearest-neighbour mask, out-of-image
/// samples are 255 with mask 0.
inline Patch extract_patch(const GrayImage& img, const RoiMask& roi, const PatchSpec& spec) {
  if (spec.size <= 0) throw ContractViolation("extract_patch: size must be positive");
  if (!same_shape(img, roi)) throw ContractViolation("extract_patch: image and ROI dimensions differ");
  Patch out{GrayImage(spec.size, spec.size, 255), RoiMask(spec.size, spec.size)};
  const double c = std::cos(deg2rad(spec.direction));
  const double s = std::sin(deg2rad(spec.direction));
  for (int j = 0; j < spec.size; ++j) {
    for (int i = 0; i < spec.size; ++i) {
      const Vec2 u = patch_offset(i, j, spec.size);
      const Vec2 p{spec.center.x + c * u.x - s * u.y, spec.center.y + s * u.x + c * u.y};
      double v;
      if (!sample_bilinear(img, p, v)) continue;
      out.image.at(i, j) = to_u8(v);
      out.mask.set(i, j, sample_nearest(roi, p));
    }
  }
  return out;
}

inline double foreground_fraction(const RoiMask& mask) {
  return static_cast<double>(mask.count()) / static_cast<double>(mask.bits().size());
}

}  // namespace dsreg
