#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <span>
#include <tuple>
#include <vector>

#include "dsreg/errors.hpp"
#include "dsreg/geometry.hpp"
#include "dsreg/image.hpp"
#include "dsreg/imaging.hpp"
#include "dsreg/sampling.hpp"

namespace dsreg {

/// Rigid transform taking latent-patch coordinates onto rolled-patch
/// coordinates: x -> R(da) (x - c) + c + (dx, dy), with c the patch center.
struct AlignmentEstimate {
  double dx = 0.0;
  double dy = 0.0;
  double da = 0.0;
  double score = 0.0;
  bool insufficientOverlap = false;
};

struct AlignStageConfig {
  double maxTranslation = 50.0;
  double maxRotation = 40.0;
  double translationStep = 2.0;
  double rotationStep = 2.0;

  static AlignStageConfig coarse() { return {50.0, 40.0, 2.0, 2.0}; }
  static AlignStageConfig precise() { return {25.0, 20.0, 1.0, 1.0}; }

  void validate() const {
    if (!(translationStep >= 1.0) || !(rotationStep >= 1.0))
      throw ContractViolation("AlignStageConfig: steps must be >= 1 px / 1 degree");
    if (!(maxTranslation > 0.0) || !(maxRotation > 0.0))
      throw ContractViolation("AlignStageConfig: bounds must be positive");
  }
};

/// Minimum overlapping foreground area (pixels) for a meaningful score.
inline constexpr double kMinOverlapPixels = 400.0;

/// Dense per-pixel coherence-weighted doubled-angle field, interpolated
/// bilinearly between block centers, plus the pixel ROI.
class OrientationFeatureMap {
 public:
  OrientationFeatureMap() = default;
  OrientationFeatureMap(const OrientationField& field, const RoiMask& roi)
      : width_(roi.width()), height_(roi.height()) {
    const std::size_t n = static_cast<std::size_t>(width_) * height_;
    c_.assign(n, 0.0f);
    s_.assign(n, 0.0f);
    valid_.assign(roi.bits().begin(), roi.bits().end());
    const double bs = field.blockSize;
    for (int y = 0; y < height_; ++y) {
      const double gy = std::clamp((y - 0.5 * (bs - 1)) / bs, 0.0, double(field.rows - 1));
      const int y0 = std::min(static_cast<int>(gy), field.rows - 1);
      const int y1 = std::min(y0 + 1, field.rows - 1);
      const double fy = gy - y0;
      for (int x = 0; x < width_; ++x) {
        const double gx = std::clamp((x - 0.5 * (bs - 1)) / bs, 0.0, double(field.cols - 1));
        const int x0 = std::min(static_cast<int>(gx), field.cols - 1);
        const int x1 = std::min(x0 + 1, field.cols - 1);
        const double fx = gx - x0;
        double vc = 0.0, vs = 0.0;
        const std::array<std::tuple<int, int, double>, 4> taps{
            {{x0, y0, (1 - fx) * (1 - fy)}, {x1, y0, fx * (1 - fy)}, {x0, y1, (1 - fx) * fy}, {x1, y1, fx * fy}}};
        for (const auto& [bx, by, wgt] : taps) {
          const std::size_t b = field.index(bx, by);
          vc += wgt * field.coherence[b] * field.cos2[b];
          vs += wgt * field.coherence[b] * field.sin2[b];
        }
        const std::size_t i = static_cast<std::size_t>(y) * width_ + x;
        c_[i] = static_cast<float>(vc);
        s_[i] = static_cast<float>(vs);
      }
    }
  }

  int width() const { return width_; }
  int height() const { return height_; }

  bool at(int x, int y, float& c, float& s) const {
    if (x < 0 || y < 0 || x >= width_ || y >= height_) return false;
    const std::size_t i = static_cast<std::size_t>(y) * width_ + x;
    if (!valid_[i]) return false;
    c = c_[i];
    s = s_[i];
    return true;
  }

  /// Bilinear feature at p; the ROI is tested at the nearest pixel.
  bool sample(Vec2 p, float& c, float& s) const {
    if (!(p.x >= 0.0 && p.y >= 0.0 && p.x <= width_ - 1 && p.y <= height_ - 1)) return false;
    const int nx = static_cast<int>(std::lround(p.x)), ny = static_cast<int>(std::lround(p.y));
    if (!valid_[static_cast<std::size_t>(ny) * width_ + nx]) return false;
    const int x0 = std::min(static_cast<int>(p.x), width_ - 1);
    const int y0 = std::min(static_cast<int>(p.y), height_ - 1);
    const int x1 = std::min(x0 + 1, width_ - 1);
    const int y1 = std::min(y0 + 1, height_ - 1);
    const float fx = static_cast<float>(p.x - x0), fy = static_cast<float>(p.y - y0);
    auto lerp2 = [&](const std::vector<float>& v) {
      const float top = v[idx(x0, y0)] * (1 - fx) + v[idx(x1, y0)] * fx;
      const float bot = v[idx(x0, y1)] * (1 - fx) + v[idx(x1, y1)] * fx;
      return top * (1 - fy) + bot * fy;
    };
    c = lerp2(c_);
    s = lerp2(s_);
    return true;
  }

 private:
  std::size_t idx(int x, int y) const { return static_cast<std::size_t>(y) * width_ + x; }
  int width_ = 0;
  int height_ = 0;
  std::vector<float> c_, s_;
  std::vector<std::uint8_t> valid_;
};

/// Exhaustive-then-local search for the rigid transform between a latent
/// window and rolled windows. The latent side is prepared once (rotated
/// feature samples for every rotation on the search lattice) and reused
/// against any number of rolled windows.
class AlignmentSearch {
 public:
  static constexpr int kFineSpacing = 8;
  static constexpr int kCoarseSpacing = 16;

  AlignmentSearch(const OrientationFeatureMap& latent, Vec2 latentCenter, int patchSize,
                  const AlignStageConfig& cfg)
      : cfg_(cfg), half_(patchSize / 2) {
    cfg.validate();
    if (patchSize < 2 * kFineSpacing) throw ContractViolation("AlignmentSearch: patch too small");
    kt_ = static_cast<int>(std::floor(cfg.maxTranslation / cfg.translationStep + 1e-9));
    kr_ = static_cast<int>(std::floor(cfg.maxRotation / cfg.rotationStep + 1e-9));
    samples_.resize(2 * kr_ + 1);
    const int reach = half_ - kFineSpacing / 2;
    for (int m = -kr_; m <= kr_; ++m) {
      const double da = m * cfg.rotationStep;
      const double ca = std::cos(deg2rad(da)), sa = std::sin(deg2rad(da));
      const double c2 = std::cos(deg2rad(2 * da)), s2 = std::sin(deg2rad(2 * da));
      auto& list = samples_[m + kr_];
      for (int uy = -reach; uy <= reach; uy += kFineSpacing) {
        for (int ux = -reach; ux <= reach; ux += kFineSpacing) {
          // latent offset = R(-da) u
          const double vx = ca * ux + sa * uy;
          const double vy = -sa * ux + ca * uy;
          if (vx < -half_ || vx > half_ - 1 || vy < -half_ || vy > half_ - 1) continue;
          float fc, fs;
          if (!latent.sample({latentCenter.x + vx, latentCenter.y + vy}, fc, fs)) continue;
          Sample smp;
          smp.ux = static_cast<std::int16_t>(ux);
          smp.uy = static_cast<std::int16_t>(uy);
          smp.c = static_cast<float>(c2 * fc - s2 * fs);
          smp.s = static_cast<float>(s2 * fc + c2 * fs);
          smp.coarse = ((ux + reach) % kCoarseSpacing == 0) && ((uy + reach) % kCoarseSpacing == 0);
          list.push_back(smp);
        }
      }
    }
  }

  AlignmentEstimate estimate(const OrientationFeatureMap& rolled, Vec2 rolledCenter) const {
    Evaluator ev{*this, rolled, rolledCenter};

    // Stage 1: strided scan over the whole lattice with the sparse samples.
    const int st0 = std::max(1, static_cast<int>(std::lround(8.0 / cfg_.translationStep)));
    const int sr0 = std::max(1, static_cast<int>(std::lround(4.0 / cfg_.rotationStep)));
    const std::vector<int> tks = strided(kt_, st0);
    const std::vector<int> rks = strided(kr_, sr0);
    struct Seed {
      double score;
      int kx, ky, m;
    };
    std::vector<Seed> seeds;
    for (int m : rks)
      for (int ky : tks)
        for (int kx : tks) {
          const double sc = ev.score(kx, ky, m, true);
          if (sc >= 0.0) seeds.push_back({sc, kx, ky, m});
        }
    if (seeds.empty()) return insufficient();
    std::stable_sort(seeds.begin(), seeds.end(), [](const Seed& a, const Seed& b) { return a.score > b.score; });

    std::vector<Seed> basins;
    for (const auto& s : seeds) {
      bool near = false;
      for (const auto& b : basins)
        if (std::abs(b.kx - s.kx) <= st0 && std::abs(b.ky - s.ky) <= st0 && std::abs(b.m - s.m) <= sr0) {
          near = true;
          break;
        }
      if (!near) basins.push_back(s);
      if (static_cast<int>(basins.size()) == kBasins) break;
    }

    // Stage 2: refine each basin with the dense samples, halving strides.
    Candidate best;
    bool found = false;
    for (const auto& b : basins) {
      int kx = b.kx, ky = b.ky, m = b.m;
      int st = st0, sr = sr0;
      for (;;) {
        st = std::max(1, (st + 1) / 2);
        sr = std::max(1, (sr + 1) / 2);
        const bool last = st == 1 && sr == 1;
        for (int guard = 0; guard < 64; ++guard) {
          Candidate local = ev.candidate(kx, ky, m);
          bool moved = false;
          for (int dm = -1; dm <= 1; ++dm)
            for (int dky = -1; dky <= 1; ++dky)
              for (int dkx = -1; dkx <= 1; ++dkx) {
                const int nx = kx + dkx * st, ny = ky + dky * st, nm = m + dm * sr;
                if (std::abs(nx) > kt_ || std::abs(ny) > kt_ || std::abs(nm) > kr_) continue;
                const Candidate c = ev.candidate(nx, ny, nm);
                if (better(c, local)) {
                  local = c;
                  moved = true;
                }
              }
          kx = local.kx;
          ky = local.ky;
          m = local.m;
          if (!last || !moved) break;
        }
        if (last) break;
      }
      const Candidate c = ev.candidate(kx, ky, m);
      if (c.score >= 0.0 && (!found || better(c, best))) {
        best = c;
        found = true;
      }
    }
    if (!found) return insufficient();
    return refine(ev, best);
  }

  /// Reference exhaustive scan of the full lattice with the dense samples.
  AlignmentEstimate estimate_exhaustive(const OrientationFeatureMap& rolled, Vec2 rolledCenter) const {
    Evaluator ev{*this, rolled, rolledCenter};
    Candidate best;
    bool found = false;
    for (int m = -kr_; m <= kr_; ++m)
      for (int ky = -kt_; ky <= kt_; ++ky)
        for (int kx = -kt_; kx <= kt_; ++kx) {
          const Candidate c = ev.candidate(kx, ky, m);
          if (c.score >= 0.0 && (!found || better(c, best))) {
            best = c;
            found = true;
          }
        }
    if (!found) return insufficient();
    return refine(ev, best);
  }

  /// Score of one lattice transform (dense samples); -1 if the overlap is
  /// below the minimum.
  double score_at(const OrientationFeatureMap& rolled, Vec2 rolledCenter, int kx, int ky, int m) const {
    Evaluator ev{*this, rolled, rolledCenter};
    return ev.score(kx, ky, m, false);
  }

  const AlignStageConfig& config() const { return cfg_; }

 private:
  static constexpr int kBasins = 3;

  struct Sample {
    std::int16_t ux, uy;
    float c, s;
    bool coarse;
  };

  struct Candidate {
    double score = -1.0;
    int kx = 0, ky = 0, m = 0;
  };

  // Higher score first; ties go to the smallest |da|, then the smallest
  // translation, then row-major order.
  bool better(const Candidate& a, const Candidate& b) const {
    if (a.score != b.score) return a.score > b.score;
    if (std::abs(a.m) != std::abs(b.m)) return std::abs(a.m) < std::abs(b.m);
    const int ra = a.kx * a.kx + a.ky * a.ky, rb = b.kx * b.kx + b.ky * b.ky;
    if (ra != rb) return ra < rb;
    if (a.m != b.m) return a.m < b.m;
    if (a.ky != b.ky) return a.ky < b.ky;
    return a.kx < b.kx;
  }

  static std::vector<int> strided(int k, int stride) {
    std::vector<int> v;
    for (int i = -(k / stride) * stride; i <= k; i += stride) v.push_back(i);
    if (v.front() != -k) v.insert(v.begin(), -k);
    if (v.back() != k) v.push_back(k);
    return v;
  }

  static AlignmentEstimate insufficient() {
    AlignmentEstimate e;
    e.insufficientOverlap = true;
    return e;
  }

  struct Evaluator {
    const AlignmentSearch& self;
    const OrientationFeatureMap& rolled;
    Vec2 center;
    mutable std::map<std::tuple<int, int, int>, double> cache{};

    double score(int kx, int ky, int m, bool coarseOnly) const {
      const double dx = kx * self.cfg_.translationStep;
      const double dy = ky * self.cfg_.translationStep;
      const double ox = center.x + dx, oy = center.y + dy;
      const bool integral = ox == std::floor(ox) && oy == std::floor(oy);
      const int iox = static_cast<int>(ox), ioy = static_cast<int>(oy);
      const int half = self.half_;
      double num = 0.0, nk = 0.0, nr = 0.0;
      int n = 0;
      for (const Sample& smp : self.samples_[m + self.kr_]) {
        if (coarseOnly && !smp.coarse) continue;
        const double wx = smp.ux + dx, wy = smp.uy + dy;
        if (wx < -half || wx > half - 1 || wy < -half || wy > half - 1) continue;
        float rc, rs;
        const bool ok = integral ? rolled.at(iox + smp.ux, ioy + smp.uy, rc, rs)
                                 : rolled.sample({ox + smp.ux, oy + smp.uy}, rc, rs);
        if (!ok) continue;
        num += smp.c * rc + smp.s * rs;
        nk += smp.c * smp.c + smp.s * smp.s;
        nr += rc * rc + rs * rs;
        ++n;
      }
      const double spacing = coarseOnly ? kCoarseSpacing : kFineSpacing;
      if (n * spacing * spacing < kMinOverlapPixels) return -1.0;
      if (nk <= 0.0 || nr <= 0.0) return 0.0;
      return num / std::sqrt(nk * nr);
    }

    Candidate candidate(int kx, int ky, int m) const {
      const auto key = std::make_tuple(kx, ky, m);
      auto it = cache.find(key);
      double sc;
      if (it != cache.end()) {
        sc = it->second;
      } else {
        sc = score(kx, ky, m, false);
        cache.emplace(key, sc);
      }
      return {sc, kx, ky, m};
    }
  };

  /// Parabolic sub-step peak along each axis; axes whose neighbours fall
  /// off the lattice or lack overlap keep the lattice value.
  AlignmentEstimate refine(const Evaluator& ev, const Candidate& best) const {
    const auto offset = [&](int ax, int ay, int am) {
      const int kx0 = best.kx - ax, ky0 = best.ky - ay, m0 = best.m - am;
      const int kx1 = best.kx + ax, ky1 = best.ky + ay, m1 = best.m + am;
      if (std::max(std::abs(kx0), std::abs(kx1)) > kt_ || std::max(std::abs(ky0), std::abs(ky1)) > kt_ ||
          std::max(std::abs(m0), std::abs(m1)) > kr_)
        return 0.0;
      const double sm = ev.candidate(kx0, ky0, m0).score, sp = ev.candidate(kx1, ky1, m1).score;
      const double den = sm - 2.0 * best.score + sp;
      if (sm < 0.0 || sp < 0.0 || !(den < 0.0)) return 0.0;
      return std::clamp(0.5 * (sm - sp) / den, -0.5, 0.5);
    };
    AlignmentEstimate est;
    est.dx = (best.kx + offset(1, 0, 0)) * cfg_.translationStep;
    est.dy = (best.ky + offset(0, 1, 0)) * cfg_.translationStep;
    est.da = (best.m + offset(0, 0, 1)) * cfg_.rotationStep;
    est.score = std::clamp(best.score, 0.0, 1.0);
    return est;
  }

  AlignStageConfig cfg_;
  int half_;
  int kt_ = 0, kr_ = 0;
  std::vector<std::vector<Sample>> samples_;
};

/// A patch handed to the aligner. The direction travels with the rolled
/// patch for backends that use it; the reference backend does not.
struct RolledPatchInput {
  const Patch& patch;
  double direction = 0.0;
};

/// Estimates the rigid transform between two equally sized square patches
/// from their coherence-weighted orientation fields.
inline AlignmentEstimate align_patches(const RolledPatchInput& rolled, const Patch& latent,
                                       const AlignStageConfig& cfg) {
  const int size = rolled.patch.image.width();
  if (rolled.patch.image.height() != size || latent.image.width() != size || latent.image.height() != size)
    throw ContractViolation("align_patches: patches must be square and of equal size");
  const OrientationFeatureMap rmap(estimate_orientation_field(rolled.patch.image, rolled.patch.mask),
                                   rolled.patch.mask);
  const OrientationFeatureMap lmap(estimate_orientation_field(latent.image, latent.mask), latent.mask);
  const Vec2 center{static_cast<double>(size / 2), static_cast<double>(size / 2)};
  return AlignmentSearch(lmap, center, size, cfg).estimate(rmap, center);
}

struct AdjustedPoint {
  SamplePoint point;
  bool adjusted = true;
};

/// The latent point hypothesised to correspond exactly to rolledPoint:
/// the inverse of the estimate applied around the latent point, with the
/// rolled direction carried across the estimated rotation.
inline AdjustedPoint adjust_point(const SamplePoint& latentPoint, const SamplePoint& rolledPoint,
                                  const AlignmentEstimate& est) {
  if (est.insufficientOverlap) return {latentPoint, false};
  SamplePoint c = latentPoint;
  c.pos = latentPoint.pos - rotate({est.dx, est.dy}, -est.da);
  c.direction = wrap180(rolledPoint.direction.value_or(0.0) - est.da);
  return {c, true};
}

// ---------------------------------------------------------------------------
// Training losses of the alignment network.

using Theta = std::array<double, 3>;

/// Maps translations onto [-1, 1] by the stage bound; rotation is unchanged.
inline Theta normalize_translation(const AlignmentEstimate& e, const AlignStageConfig& cfg) {
  return {e.dx / cfg.maxTranslation, e.dy / cfg.maxTranslation, e.da};
}

/// Mean squared error over every scalar component of the batch.
inline double parameter_loss(std::span<const Theta> gt, std::span<const Theta> pred) {
  if (gt.size() != pred.size() || gt.empty())
    throw ContractViolation("parameter_loss: batches must be nonempty and of equal size");
  double sum = 0.0;
  for (std::size_t i = 0; i < gt.size(); ++i)
    for (int k = 0; k < 3; ++k) sum += (gt[i][k] - pred[i][k]) * (gt[i][k] - pred[i][k]);
  return sum / (3.0 * gt.size());
}

/// Mean squared error over both channels (cos 2O, sin 2O) of the map.
inline double orientation_loss(const OrientationField& gt, const OrientationField& pred) {
  if (gt.rows != pred.rows || gt.cols != pred.cols || gt.cos2.size() != pred.cos2.size() ||
      gt.sin2.size() != pred.sin2.size() || gt.cos2.empty())
    throw ContractViolation("orientation_loss: map shapes differ");
  double sum = 0.0;
  for (std::size_t i = 0; i < gt.cos2.size(); ++i) {
    sum += (gt.cos2[i] - pred.cos2[i]) * (gt.cos2[i] - pred.cos2[i]);
    sum += (gt.sin2[i] - pred.sin2[i]) * (gt.sin2[i] - pred.sin2[i]);
  }
  return sum / (2.0 * gt.cos2.size());
}

struct AlignmentLosses {
  double lPara = 0.0;
  double lOri1 = 0.0;
  double lOri2 = 0.0;
  double lMatch = 0.0;
};

inline constexpr double kLambdaMatch = 0.25;

inline AlignmentLosses alignment_losses(std::span<const Theta> thetaGt, std::span<const Theta> thetaPred,
                                        const OrientationField& oriGt1, const OrientationField& oriPred1,
                                        const OrientationField& oriGt2, const OrientationField& oriPred2,
                                        double lambdaMatch = kLambdaMatch) {
  AlignmentLosses l;
  l.lPara = parameter_loss(thetaGt, thetaPred);
  l.lOri1 = orientation_loss(oriGt1, oriPred1);
  l.lOri2 = orientation_loss(oriGt2, oriPred2);
  l.lMatch = l.lPara + lambdaMatch * (l.lOri1 + l.lOri2);
  return l;
}

}  // namespace dsreg
