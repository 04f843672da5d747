#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <limits>
#include <istream>
#include <ostream>
#include <span>
#include <vector>

#include "dsreg/align.hpp"
#include "dsreg/errors.hpp"
#include "dsreg/geometry.hpp"
#include "dsreg/image.hpp"
#include "dsreg/imaging.hpp"
#include "dsreg/parallel.hpp"
#include "dsreg/sampling.hpp"

namespace dsreg {

inline constexpr int kDescriptorLength = 512;
using Descriptor = std::array<float, kDescriptorLength>;

// Reference descriptor layout: an 8x8 grid of 25 px cells over the 200 px
// patch, each cell holding a 6-bin doubled-angle orientation histogram and
// two ridge-period statistics.
inline constexpr int kDescriptorCells = 8;
inline constexpr int kOrientationBins = 6;
inline constexpr int kCellValues = 8;
inline constexpr int kDescriptorPatch = 200;
inline constexpr int kCellSamples = 5;

static_assert(kDescriptorCells * kDescriptorCells * kCellValues == kDescriptorLength);

struct DescriptorConfig {
  double tensorSigma = 3.0;       // smoothing of the gradient tensor, px
  double intensitySigma = 4.0;    // local mean/variance window, px
  double minCellCoverage = 0.5;   // cells below this foreground share are zeroed
  double frequencyWeight = 6.0;   // scale of the signed period statistic
  double energyWeight = 4.0;      // scale of the signed ridge-regularity statistic
  double fineSigma = 2.0;         // tensor smoothing for the regularity statistic, px
  double nominalPeriod = 9.0;     // px
  double histogramWeight = 1.0;
  bool centerHistogram = true;   // zero-mean orientation bins per cell
};

namespace detail {

inline std::vector<double> gaussian_kernel(double sigma) {
  const int rad = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<double> k(2 * rad + 1);
  double sum = 0.0;
  for (int i = -rad; i <= rad; ++i) sum += k[i + rad] = std::exp(-0.5 * i * i / (sigma * sigma));
  for (double& v : k) v /= sum;
  return k;
}

/// Separable Gaussian blur with edge clamping.
inline void blur(std::vector<float>& data, int w, int h, double sigma) {
  const auto k = gaussian_kernel(sigma);
  const int rad = static_cast<int>(k.size() / 2);
  std::vector<float> tmp(data.size());
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int i = -rad; i <= rad; ++i)
        acc += k[i + rad] * data[static_cast<std::size_t>(y) * w + std::clamp(x + i, 0, w - 1)];
      tmp[static_cast<std::size_t>(y) * w + x] = static_cast<float>(acc);
    }
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int i = -rad; i <= rad; ++i)
        acc += k[i + rad] * tmp[static_cast<std::size_t>(std::clamp(y + i, 0, h - 1)) * w + x];
      data[static_cast<std::size_t>(y) * w + x] = static_cast<float>(acc);
    }
}

}  // namespace detail

/// Dense per-pixel statistics from which descriptors at any position and
/// direction are sampled: smoothed structure tensor, gradient energy and
/// local intensity variance.
class DescriptorField {
 public:
  DescriptorField() = default;
  DescriptorField(const GrayImage& img, const RoiMask& roi, const DescriptorConfig& cfg = {})
      : cfg_(cfg), width_(img.width()), height_(img.height()) {
    if (!same_shape(img, roi)) throw ContractViolation("DescriptorField: image and ROI dimensions differ");
    const int w = width_, h = height_;
    const std::size_t n = static_cast<std::size_t>(w) * h;
    jxx_.assign(n, 0.0f);
    jxy_.assign(n, 0.0f);
    je_.assign(n, 0.0f);
    grad_.assign(n, 0.0f);
    fxx_.assign(n, 0.0f);
    fxy_.assign(n, 0.0f);
    fe_.assign(n, 0.0f);
    mean_.assign(n, 0.0f);
    sq_.assign(n, 0.0f);
    mask_.assign(roi.bits().begin(), roi.bits().end());
    auto px = [&](int x, int y) {
      return static_cast<double>(img.at(std::clamp(x, 0, w - 1), std::clamp(y, 0, h - 1)));
    };
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const std::size_t i = static_cast<std::size_t>(y) * w + x;
        const double v = px(x, y);
        mean_[i] = static_cast<float>(v);
        sq_[i] = static_cast<float>(v * v);
        if (!roi.at(x, y)) continue;
        const double gx = 0.5 * (px(x + 1, y) - px(x - 1, y));
        const double gy = 0.5 * (px(x, y + 1) - px(x, y - 1));
        jxx_[i] = static_cast<float>(gx * gx - gy * gy);
        jxy_[i] = static_cast<float>(2.0 * gx * gy);
        je_[i] = static_cast<float>(gx * gx + gy * gy);
        grad_[i] = je_[i];
        fxx_[i] = jxx_[i];
        fxy_[i] = jxy_[i];
        fe_[i] = je_[i];
      }
    detail::blur(jxx_, w, h, cfg.tensorSigma);
    detail::blur(jxy_, w, h, cfg.tensorSigma);
    detail::blur(je_, w, h, cfg.tensorSigma);
    detail::blur(fxx_, w, h, cfg.fineSigma);
    detail::blur(fxy_, w, h, cfg.fineSigma);
    detail::blur(fe_, w, h, cfg.fineSigma);
    detail::blur(grad_, w, h, cfg.intensitySigma);
    detail::blur(mean_, w, h, cfg.intensitySigma);
    detail::blur(sq_, w, h, cfg.intensitySigma);
  }

  int width() const { return width_; }
  int height() const { return height_; }
  const DescriptorConfig& config() const { return cfg_; }

  /// Descriptor of the 200 px patch centered at pos whose +x axis points
  /// along `direction`.
  Descriptor describe(Vec2 pos, double direction) const {
    Descriptor d{};
    const double ca = std::cos(deg2rad(direction)), sa = std::sin(deg2rad(direction));
    const double c2 = std::cos(deg2rad(2 * direction)), s2 = std::sin(deg2rad(2 * direction));
    constexpr double cell = static_cast<double>(kDescriptorPatch) / kDescriptorCells;
    constexpr double step = cell / kCellSamples;
    constexpr double binWidth = 180.0 / kOrientationBins;
    std::array<double, kDescriptorCells * kDescriptorCells> irregular{};
    std::array<bool, kDescriptorCells * kDescriptorCells> hasStats{};
    for (int cy = 0; cy < kDescriptorCells; ++cy) {
      for (int cx = 0; cx < kDescriptorCells; ++cx) {
        std::array<double, kOrientationBins> hist{};
        int valid = 0;
        double freqSum = 0.0, freqW = 0.0, deficit = 0.0;
        for (int sy = 0; sy < kCellSamples; ++sy) {
          for (int sx = 0; sx < kCellSamples; ++sx) {
            const double ux = -kDescriptorPatch / 2.0 + cx * cell + (sx + 0.5) * step;
            const double uy = -kDescriptorPatch / 2.0 + cy * cell + (sy + 0.5) * step;
            const Vec2 p{pos.x + ca * ux - sa * uy, pos.y + sa * ux + ca * uy};
            Sample smp;
            if (!sample(p, smp)) continue;
            ++valid;
            const double mag = std::hypot(smp.jxx, smp.jxy);
            if (smp.je <= 0.0 || mag <= 0.0) continue;
            const double coh = std::min(1.0, mag / smp.je);
            // ridge doubled angle in the patch frame
            const double rc = -(c2 * smp.jxx + s2 * smp.jxy);
            const double rs = -(-s2 * smp.jxx + c2 * smp.jxy);
            double phi = 0.5 * rad2deg(std::atan2(rs, rc));
            if (phi < 0.0) phi += 180.0;
            const double pos_bins = phi / binWidth - 0.5;
            const int b0 = static_cast<int>(std::floor(pos_bins));
            const double frac = pos_bins - b0;
            hist[(b0 % kOrientationBins + kOrientationBins) % kOrientationBins] += coh * (1.0 - frac);
            hist[((b0 + 1) % kOrientationBins + kOrientationBins) % kOrientationBins] += coh * frac;
            if (smp.var > 1.0) {
              const double ratio = std::min(1.0, std::sqrt(smp.grad / smp.var));
              freqSum += coh * std::asin(ratio);
              freqW += coh;
              deficit += 1.0 - smp.fineCoherence;
            }
          }
        }
        const int base = (cy * kDescriptorCells + cx) * kCellValues;
        if (valid < cfg_.minCellCoverage * kCellSamples * kCellSamples) continue;
        double hm = 0.0;
        if (cfg_.centerHistogram) {
          for (double v : hist) hm += v;
          hm /= kOrientationBins;
        }
        for (int b = 0; b < kOrientationBins; ++b) d[base + b] = static_cast<float>(cfg_.histogramWeight * (hist[b] - hm));
        if (freqW > 0.0) {
          const double omega = freqSum / freqW;
          const double period = omega > 1e-6 ? 2.0 * kPi / omega : cfg_.nominalPeriod;
          const double relPeriod = std::clamp((period - cfg_.nominalPeriod) / cfg_.nominalPeriod, -1.0, 1.0);
          d[base + 6] = static_cast<float>(cfg_.frequencyWeight * relPeriod);
          irregular[cy * kDescriptorCells + cx] = deficit / valid;
          hasStats[cy * kDescriptorCells + cx] = true;
        }
      }
    }
    // Regularity relative to the patch average, so a uniformly noisy
    // impression does not shift every cell.
    double mean = 0.0;
    int count = 0;
    for (std::size_t c = 0; c < irregular.size(); ++c)
      if (hasStats[c]) {
        mean += irregular[c];
        ++count;
      }
    if (count > 0) {
      mean /= count;
      for (std::size_t c = 0; c < irregular.size(); ++c)
        if (hasStats[c]) d[c * kCellValues + 7] = static_cast<float>(cfg_.energyWeight * (irregular[c] - mean));
    }
    return normalize(d);
  }

  /// Unit-normalises in double precision; an all-zero vector maps to e1.
  static Descriptor normalize(Descriptor d) {
    double sum = 0.0;
    for (float v : d) sum += double(v) * double(v);
    if (sum <= 0.0) {
      d.fill(0.0f);
      d[0] = 1.0f;
      return d;
    }
    const double inv = 1.0 / std::sqrt(sum);
    for (float& v : d) v = static_cast<float>(v * inv);
    return d;
  }

 private:
  struct Sample {
    double jxx, jxy, je, grad, var, fineCoherence;
  };

  bool sample(Vec2 p, Sample& out) const {
    if (!(p.x >= 0.0 && p.y >= 0.0 && p.x <= width_ - 1 && p.y <= height_ - 1)) return false;
    const int nx = static_cast<int>(std::lround(p.x)), ny = static_cast<int>(std::lround(p.y));
    if (!mask_[static_cast<std::size_t>(ny) * width_ + nx]) return false;
    const int x0 = std::min(static_cast<int>(p.x), width_ - 1);
    const int y0 = std::min(static_cast<int>(p.y), height_ - 1);
    const int x1 = std::min(x0 + 1, width_ - 1);
    const int y1 = std::min(y0 + 1, height_ - 1);
    const double fx = p.x - x0, fy = p.y - y0;
    const std::size_t i00 = static_cast<std::size_t>(y0) * width_ + x0, i10 = static_cast<std::size_t>(y0) * width_ + x1;
    const std::size_t i01 = static_cast<std::size_t>(y1) * width_ + x0, i11 = static_cast<std::size_t>(y1) * width_ + x1;
    auto lerp = [&](const std::vector<float>& v) {
      return (v[i00] * (1 - fx) + v[i10] * fx) * (1 - fy) + (v[i01] * (1 - fx) + v[i11] * fx) * fy;
    };
    out.jxx = lerp(jxx_);
    out.jxy = lerp(jxy_);
    out.je = lerp(je_);
    out.grad = lerp(grad_);
    const double m = lerp(mean_);
    out.var = std::max(0.0, lerp(sq_) - m * m);
    const double fe = lerp(fe_);
    out.fineCoherence = fe > 0.0 ? std::min(1.0, std::hypot(lerp(fxx_), lerp(fxy_)) / fe) : 0.0;
    return true;
  }

  DescriptorConfig cfg_;
  int width_ = 0;
  int height_ = 0;
  std::vector<float> jxx_, jxy_, je_, fxx_, fxy_, fe_, grad_, mean_, sq_;
  std::vector<std::uint8_t> mask_;
};

/// Descriptor of a direction-aligned 200x200 patch.
inline Descriptor describe_patch(const Patch& patch, const DescriptorConfig& cfg = {}) {
  if (patch.image.width() != kDescriptorPatch || patch.image.height() != kDescriptorPatch ||
      !same_shape(patch.image, patch.mask))
    throw ContractViolation("describe_patch: expected a 200x200 patch with matching mask");
  const DescriptorField field(patch.image, patch.mask, cfg);
  return field.describe({kDescriptorPatch / 2.0, kDescriptorPatch / 2.0}, 0.0);
}

inline double dot(const Descriptor& a, const Descriptor& b) {
  double s = 0.0;
  for (int i = 0; i < kDescriptorLength; ++i) s += double(a[i]) * double(b[i]);
  return s;
}

/// (1 + cos) / 2 in [0, 1]; identical descriptors score exactly 1.
inline double similarity(const Descriptor& a, const Descriptor& b) {
  if (a == b) return 1.0;
  return std::clamp(0.5 * (1.0 + dot(a, b)), 0.0, 1.0);
}

/// Descriptor of the same patch turned by 180 degrees: the cell grid is
/// reversed while relative orientations and period statistics stay put.
inline Descriptor rotate_descriptor_180(const Descriptor& d) {
  Descriptor out{};
  for (int cy = 0; cy < kDescriptorCells; ++cy)
    for (int cx = 0; cx < kDescriptorCells; ++cx) {
      const int src = (cy * kDescriptorCells + cx) * kCellValues;
      const int dst = ((kDescriptorCells - 1 - cy) * kDescriptorCells + (kDescriptorCells - 1 - cx)) * kCellValues;
      std::copy_n(d.begin() + src, kCellValues, out.begin() + dst);
    }
  return out;
}

// ---------------------------------------------------------------------------
// Training losses of the descriptor network.

struct DescriptorPair {
  const Descriptor& a;
  const Descriptor& b;
  bool positive;
};

inline constexpr double kLambdaSimi = 0.5;
inline constexpr double kContrastiveMargin = 1.0;

inline double euclidean_distance(const Descriptor& a, const Descriptor& b) {
  double s = 0.0;
  for (int i = 0; i < kDescriptorLength; ++i) s += (double(a[i]) - b[i]) * (double(a[i]) - b[i]);
  return std::sqrt(s);
}

/// Mean over pairs of D^2 (positive) or max(0, margin - D)^2 (negative).
inline double contrastive_loss(std::span<const DescriptorPair> pairs, double margin = kContrastiveMargin) {
  if (pairs.empty()) throw ContractViolation("contrastive_loss: empty pair list");
  double sum = 0.0;
  for (const auto& p : pairs) {
    const double dist = euclidean_distance(p.a, p.b);
    sum += p.positive ? dist * dist : std::pow(std::max(0.0, margin - dist), 2);
  }
  return sum / static_cast<double>(pairs.size());
}

struct DescriptorLosses {
  double lContrastive = 0.0;
  double lOri1 = 0.0;
  double lOri2 = 0.0;
  double lSimi = 0.0;
};


// ---------------------------------------------------------------------------
// Dense offline template

struct TemplateEntry {
  Vec2 pos;
  double direction = 0.0;
  Descriptor descriptor{};
};

struct TemplateBank {
  Side side = Side::Latent;
  int interval = 16;
  std::vector<TemplateEntry> entries;
};

struct TemplateConfig {
  GridConfig latentGrid{16, 16, 0.0, 200};
  GridConfig rolledGrid{80, 80, 0.4, 200};
  int latentDirections = 19;  // every 10 degrees over [-90, 90]
  int threads = 1;
  DescriptorConfig descriptor{};
};

/// Directions stored for latent banks: -90, -80, ..., 90.
inline std::vector<double> latent_template_directions(int count = 19) {
  std::vector<double> dirs;
  const double step = 180.0 / (count - 1);
  for (int i = 0; i < count; ++i) dirs.push_back(-90.0 + i * step);
  return dirs;
}

inline TemplateBank build_template(const GrayImage& img, const RoiMask& roi, const OrientationField& field,
                                   Side side, const TemplateConfig& cfg = {}) {
  TemplateBank bank;
  bank.side = side;
  const GridConfig& grid = side == Side::Latent ? cfg.latentGrid : cfg.rolledGrid;
  bank.interval = grid.intervalX;
  auto points = grid_sample_points(roi, grid, side);
  if (points.empty()) return bank;
  const DescriptorField dfield(img, roi, cfg.descriptor);
  if (side == Side::Rolled) {
    points = assign_directions(std::move(points), field);
    bank.entries.resize(points.size());
    parallel_for(points.size(), cfg.threads, [&](std::size_t i) {
      const double dir = points[i].direction.value_or(0.0);
      bank.entries[i] = {points[i].pos, dir, dfield.describe(points[i].pos, dir)};
    });
  } else {
    const auto dirs = latent_template_directions(cfg.latentDirections);
    bank.entries.resize(points.size() * dirs.size());
    parallel_for(points.size(), cfg.threads, [&](std::size_t i) {
      for (std::size_t k = 0; k < dirs.size(); ++k)
        bank.entries[i * dirs.size() + k] = {points[i].pos, dirs[k], dfield.describe(points[i].pos, dirs[k])};
    });
  }
  std::stable_sort(bank.entries.begin(), bank.entries.end(), [](const TemplateEntry& a, const TemplateEntry& b) {
    if (a.pos.y != b.pos.y) return a.pos.y < b.pos.y;
    if (a.pos.x != b.pos.x) return a.pos.x < b.pos.x;
    return a.direction < b.direction;
  });
  return bank;
}

struct TemplateMatch {
  Descriptor descriptor{};
  Vec2 pos;              // position of the chosen entry
  double direction = 0;  // effective direction of the returned descriptor
};

/// Nearest-neighbour lookup: the closest lattice position first, then the
/// closest direction. Latent banks cover [-90, 90]; a query pointing the
/// other way is served by the 180-degree turned descriptor of the opposite
/// direction.
inline TemplateMatch query_template(const TemplateBank& bank, Vec2 pos, double direction) {
  if (bank.entries.empty()) throw LookupError("query_template: empty template bank");
  // Entries are sorted by (y, x, direction); scan distinct positions.
  double best = std::numeric_limits<double>::infinity();
  std::size_t first = 0;
  for (std::size_t i = 0; i < bank.entries.size();) {
    std::size_t j = i;
    while (j < bank.entries.size() && bank.entries[j].pos == bank.entries[i].pos) ++j;
    const Vec2 d = bank.entries[i].pos - pos;
    const double dist = dot(d, d);
    if (dist < best) {
      best = dist;
      first = i;
    }
    i = j;
  }
  std::size_t last = first;
  while (last < bank.entries.size() && bank.entries[last].pos == bank.entries[first].pos) ++last;

  TemplateMatch m;
  m.pos = bank.entries[first].pos;
  if (bank.side == Side::Rolled || last - first == 1) {
    m.descriptor = bank.entries[first].descriptor;
    m.direction = bank.entries[first].direction;
    return m;
  }
  const double q = wrap180(direction);
  double bestErr = std::numeric_limits<double>::infinity();
  std::size_t pick = first;
  bool flip = false;
  for (std::size_t k = first; k < last; ++k) {
    const double e0 = angle_distance(q, bank.entries[k].direction);
    const double e1 = angle_distance(q, bank.entries[k].direction + 180.0);
    if (e0 < bestErr) {
      bestErr = e0;
      pick = k;
      flip = false;
    }
    if (e1 < bestErr) {
      bestErr = e1;
      pick = k;
      flip = true;
    }
  }
  m.descriptor = flip ? rotate_descriptor_180(bank.entries[pick].descriptor) : bank.entries[pick].descriptor;
  m.direction = wrap180(bank.entries[pick].direction + (flip ? 180.0 : 0.0));
  return m;
}

// Binary layout, little-endian:
//   "DRTB" | u32 version | u32 side | u32 interval | u32 count | u32 dims
//   count x { f32 x | f32 y | f32 dir | dims x f32 }
inline constexpr std::uint32_t kTemplateVersion = 1;

namespace detail {

inline void put_u32(std::ostream& out, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

inline void put_f32(std::ostream& out, float f) { put_u32(out, std::bit_cast<std::uint32_t>(f)); }

inline std::uint32_t get_u32(std::istream& in) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) throw FormatError("template bank: truncated file");
  return std::uint32_t(b[0]) | (std::uint32_t(b[1]) << 8) | (std::uint32_t(b[2]) << 16) | (std::uint32_t(b[3]) << 24);
}

inline float get_f32(std::istream& in) { return std::bit_cast<float>(get_u32(in)); }

}  // namespace detail

inline void write_template_bank(const TemplateBank& bank, std::ostream& out) {
  out.write("DRTB", 4);
  detail::put_u32(out, kTemplateVersion);
  detail::put_u32(out, bank.side == Side::Latent ? 0u : 1u);
  detail::put_u32(out, static_cast<std::uint32_t>(bank.interval));
  detail::put_u32(out, static_cast<std::uint32_t>(bank.entries.size()));
  detail::put_u32(out, kDescriptorLength);
  for (const auto& e : bank.entries) {
    detail::put_f32(out, static_cast<float>(e.pos.x));
    detail::put_f32(out, static_cast<float>(e.pos.y));
    detail::put_f32(out, static_cast<float>(e.direction));
    for (float v : e.descriptor) detail::put_f32(out, v);
  }
  if (!out) throw Error("template bank: write failed");
}

inline TemplateBank read_template_bank(std::istream& in) {
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, "DRTB", 4) != 0) throw FormatError("template bank: bad magic");
  if (detail::get_u32(in) != kTemplateVersion) throw FormatError("template bank: unsupported version");
  TemplateBank bank;
  const std::uint32_t side = detail::get_u32(in);
  if (side > 1) throw FormatError("template bank: bad side");
  bank.side = side == 0 ? Side::Latent : Side::Rolled;
  bank.interval = static_cast<int>(detail::get_u32(in));
  const std::uint32_t count = detail::get_u32(in);
  if (detail::get_u32(in) != kDescriptorLength) throw FormatError("template bank: unexpected descriptor length");
  bank.entries.resize(count);
  for (auto& e : bank.entries) {
    e.pos.x = detail::get_f32(in);
    e.pos.y = detail::get_f32(in);
    e.direction = detail::get_f32(in);
    for (float& v : e.descriptor) v = detail::get_f32(in);
  }
  return bank;
}

inline DescriptorLosses descriptor_losses(std::span<const DescriptorPair> pairs, double margin,
                                          const OrientationField& oriGt1, const OrientationField& oriPred1,
                                          const OrientationField& oriGt2, const OrientationField& oriPred2,
                                          double lambdaSimi = kLambdaSimi) {
  DescriptorLosses l;
  l.lContrastive = contrastive_loss(pairs, margin);
  l.lOri1 = orientation_loss(oriGt1, oriPred1);
  l.lOri2 = orientation_loss(oriGt2, oriPred2);
  l.lSimi = l.lContrastive + lambdaSimi * (l.lOri1 + l.lOri2);
  return l;
}

}  // namespace dsreg
