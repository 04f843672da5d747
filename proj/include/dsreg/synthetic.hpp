#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <vector>

#include "dsreg/descriptor.hpp"
#include "dsreg/geometry.hpp"
#include "dsreg/image.hpp"
#include "dsreg/imaging.hpp"
#include "dsreg/random.hpp"
#include "dsreg/simeval.hpp"
#include "dsreg/transform.hpp"

namespace dsreg::synth {

/// Smooth ridge-orientation model: singular points (zero-pole form) plus a
/// few low-frequency modes.
struct OrientationModel {
  std::vector<Vec2> cores;
  std::vector<Vec2> deltas;
  double base = 0.0;  // degrees
  struct Mode {
    double kx, ky, phase, amplitude;  // amplitude in degrees
  };
  std::vector<Mode> modes;

  /// Ridge orientation at p, in [-90, 90).
  double operator()(Vec2 p) const {
    double o = base;
    for (const auto& c : cores) o += 0.5 * rad2deg(std::atan2(p.y - c.y, p.x - c.x));
    for (const auto& d : deltas) o -= 0.5 * rad2deg(std::atan2(p.y - d.y, p.x - d.x));
    for (const auto& m : modes) o += m.amplitude * std::sin(m.kx * p.x + m.ky * p.y + m.phase);
    return wrap90(o);
  }
};

struct PeriodModel {
  double mean = 9.0;
  double amplitude = 1.0;
  double kx = 0.01, ky = 0.01, phase = 0.0;

  double operator()(Vec2 p) const {
    return std::clamp(mean + amplitude * std::sin(kx * p.x + ky * p.y + phase), 7.0, 11.0);
  }
};

enum class PatternClass { Any, Arch, Loop, Whorl };

struct MasterConfig {
  int size = 320;
  PatternClass pattern = PatternClass::Any;
  int iterations = 8;
  int kernelRadius = 8;
};

/// A full-canvas ridge pattern with no ROI.
struct MasterPrint {
  GrayImage image;
  OrientationModel orientation;
  PeriodModel period;
};

namespace detail {

inline OrientationModel random_orientation(Rng& rng, double size, PatternClass cls) {
  OrientationModel m;
  const Vec2 c{size / 2 + rng.uniform(-25, 25), size * 0.42 + rng.uniform(-25, 25)};
  const double draw = rng.uniform();
  if (cls == PatternClass::Any) cls = draw < 0.2 ? PatternClass::Arch : draw < 0.75 ? PatternClass::Loop : PatternClass::Whorl;
  if (cls == PatternClass::Arch) {
    // arch
    m.base = rng.uniform(-15, 15);
    m.modes.push_back({kPi / size, 0.0, rng.uniform(0, 2 * kPi), rng.uniform(20, 35)});
  } else if (cls == PatternClass::Loop) {
    // loop, leaning left or right
    const double lean = rng.uniform() < 0.5 ? -1.0 : 1.0;
    m.cores.push_back(c);
    m.deltas.push_back({c.x + lean * rng.uniform(50, 90), c.y + rng.uniform(70, 110)});
    m.base = rng.uniform(-10, 10);
  } else {
    // whorl
    m.cores.push_back({c.x - rng.uniform(8, 18), c.y});
    m.cores.push_back({c.x + rng.uniform(8, 18), c.y + rng.uniform(-6, 6)});
    m.deltas.push_back({c.x - rng.uniform(70, 100), c.y + rng.uniform(80, 110)});
    m.deltas.push_back({c.x + rng.uniform(70, 100), c.y + rng.uniform(80, 110)});
    m.base = rng.uniform(-10, 10);
  }
  for (int i = 0; i < 2; ++i) {
    const double ang = rng.uniform(0, 2 * kPi);
    const double k = rng.uniform(0.6, 1.6) * kPi / size;
    m.modes.push_back({k * std::cos(ang), k * std::sin(ang), rng.uniform(0, 2 * kPi), rng.uniform(3, 8)});
  }
  return m;
}

}  // namespace detail

/// Iterative oriented-Gabor growth from sparse random seeds over the
/// orientation and period models, rendered with dark ridges near 50 and
/// light valleys near 240.
inline MasterPrint generate_master(std::uint64_t seed, const MasterConfig& cfg = {}) {
  Rng rng(seed);
  MasterPrint mp;
  const int n = cfg.size;
  mp.orientation = detail::random_orientation(rng, n, cfg.pattern);
  {
    const double ang = rng.uniform(0, 2 * kPi);
    const double k = rng.uniform(0.8, 1.6) * kPi / n;
    mp.period = {rng.uniform(8.2, 9.8), rng.uniform(0.4, 1.0), k * std::cos(ang), k * std::sin(ang),
                 rng.uniform(0, 2 * kPi)};
  }

  constexpr int kOri = 36;
  constexpr int kPer = 9;  // 7, 7.5, ..., 11
  const int r = cfg.kernelRadius, ks = 2 * r + 1;
  std::vector<float> bank(static_cast<std::size_t>(kOri) * kPer * ks * ks);
  for (int o = 0; o < kOri; ++o)
    for (int t = 0; t < kPer; ++t) {
      const double theta = deg2rad(o * 180.0 / kOri);
      const double period = 7.0 + 0.5 * t;
      const double sigma = 0.45 * period;
      const double nx = -std::sin(theta), ny = std::cos(theta);
      float* k = &bank[(static_cast<std::size_t>(o) * kPer + t) * ks * ks];
      double sum = 0.0, wsum = 0.0;
      for (int y = -r; y <= r; ++y)
        for (int x = -r; x <= r; ++x) {
          const double g = std::exp(-(x * x + y * y) / (2 * sigma * sigma));
          sum += g * std::cos(2 * kPi * (x * nx + y * ny) / period);
          wsum += g;
        }
      const double dc = sum / wsum;
      for (int y = -r; y <= r; ++y)
        for (int x = -r; x <= r; ++x) {
          const double g = std::exp(-(x * x + y * y) / (2 * sigma * sigma));
          k[(y + r) * ks + (x + r)] = static_cast<float>(g * (std::cos(2 * kPi * (x * nx + y * ny) / period) - dc));
        }
    }

  std::vector<int> which(static_cast<std::size_t>(n) * n);
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x) {
      const Vec2 p{double(x), double(y)};
      double o = mp.orientation(p);
      if (o < 0) o += 180.0;
      const int oi = static_cast<int>(std::lround(o / (180.0 / kOri))) % kOri;
      const int ti = std::clamp(static_cast<int>(std::lround((mp.period(p) - 7.0) / 0.5)), 0, kPer - 1);
      which[static_cast<std::size_t>(y) * n + x] = oi * kPer + ti;
    }

  std::vector<float> v(static_cast<std::size_t>(n) * n, 0.0f), next(v.size());
  for (float& f : v) {
    const double u = rng.uniform();
    f = u < 0.01 ? 1.0f : (u < 0.02 ? -1.0f : 0.0f);
  }
  for (int it = 0; it < cfg.iterations; ++it) {
    double ss = 0.0;
    for (int y = 0; y < n; ++y)
      for (int x = 0; x < n; ++x) {
        const float* k = &bank[static_cast<std::size_t>(which[static_cast<std::size_t>(y) * n + x]) * ks * ks];
        double acc = 0.0;
        const int y0 = std::max(-r, -y), y1 = std::min(r, n - 1 - y);
        const int x0 = std::max(-r, -x), x1 = std::min(r, n - 1 - x);
        for (int dy = y0; dy <= y1; ++dy) {
          const float* row = &v[static_cast<std::size_t>(y + dy) * n + x];
          const float* krow = &k[(dy + r) * ks + r];
          for (int dx = x0; dx <= x1; ++dx) acc += krow[dx] * row[dx];
        }
        next[static_cast<std::size_t>(y) * n + x] = static_cast<float>(acc);
        ss += acc * acc;
      }
    const double rms = std::sqrt(ss / next.size());
    const double gain = rms > 0.0 ? 1.5 / rms : 1.0;
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = std::clamp(static_cast<float>(next[i] * gain), -1.0f, 1.0f);
  }
  ::dsreg::detail::blur(v, n, n, 0.7);
  mp.image = GrayImage(n, n);
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x) mp.image.at(x, y) = to_u8(145.0 - 95.0 * v[static_cast<std::size_t>(y) * n + x]);
  return mp;
}

struct Ellipse {
  Vec2 center;
  double a = 100.0, b = 100.0;  // semi-axes along the rotated x / y
  double angle = 0.0;

  bool contains(Vec2 p) const {
    const Vec2 u = rotate(p - center, -angle);
    return (u.x * u.x) / (a * a) + (u.y * u.y) / (b * b) <= 1.0;
  }
};

inline RoiMask render_ellipse(int w, int h, const Ellipse& e) {
  RoiMask m(w, h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) m.set(x, y, e.contains({double(x), double(y)}));
  return m;
}

/// Latent -> rolled ground truth: a mild TPS distortion followed by a rigid motion.
struct GroundTruth {
  TpsTransform distortion;
  RigidTransform2D rigid;

  Vec2 apply(Vec2 q) const { return rigid.apply(distortion.apply(q)); }
  Vec2 inverse(Vec2 p) const { return distortion.inverse(rigid.inverse(p)); }
  double apply_direction(Vec2 q, double dir) const {
    return rigid.apply_direction(q, distortion.apply_direction(q, dir));
  }
};

struct PairConfig {
  int size = 320;
  double maxTranslation = 50.0;
  double maxRotation = 40.0;
  double distortion = 3.0;  // px, control-point jitter of the TPS
  int landmarks = 12;
  AugmentConfig latentAppearance{};
  AugmentConfig rolledAppearance{0.8, 1.25, 0.9, 1.1, 0.0, 3.0, 1.0, 0, 0, 6.0, 16.0};
};

struct SyntheticPair {
  GrayImage rolled;
  RoiMask rolledRoi;
  GrayImage latent;
  RoiMask latentRoi;
  GroundTruth truth;
  std::vector<MarkedMinutia> latentMarks;
  std::vector<MarkedMinutia> rolledMarks;
  bool mated = true;
};

namespace detail {

inline void make_rolled(const MasterPrint& mp, const PairConfig& cfg, Rng& rng, SyntheticPair& out) {
  const int n = cfg.size;
  const Ellipse e{{n / 2.0 + rng.uniform(-8, 8), n / 2.0 + rng.uniform(-8, 8)},
                  rng.uniform(112, 128),
                  rng.uniform(135, 148),
                  rng.uniform(-8, 8)};
  out.rolledRoi = render_ellipse(n, n, e);
  GrayImage img(n, n, 255);
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x)
      if (out.rolledRoi.at(x, y)) img.at(x, y) = mp.image.at(x, y);
  Rng arng(rng.next());
  const auto ap = draw_appearance(cfg.rolledAppearance, arng, out.rolledRoi);
  out.rolled = apply_appearance(img, ap, arng, cfg.rolledAppearance.noiseBlur);
}

inline GroundTruth random_truth(const PairConfig& cfg, Rng& rng) {
  const int n = cfg.size;
  GroundTruth t;
  std::vector<LandmarkPair> ctrl;
  for (int j = 0; j < 3; ++j)
    for (int i = 0; i < 3; ++i) {
      const Vec2 s{n * (0.2 + 0.3 * i), n * (0.2 + 0.3 * j)};
      ctrl.push_back({s, s + Vec2{rng.uniform(-cfg.distortion, cfg.distortion),
                                  rng.uniform(-cfg.distortion, cfg.distortion)}});
    }
  t.distortion = fit_tps(ctrl);
  t.rigid = {rng.uniform(-cfg.maxTranslation, cfg.maxTranslation), rng.uniform(-cfg.maxTranslation, cfg.maxTranslation),
             rng.uniform(-cfg.maxRotation, cfg.maxRotation), {n / 2.0, n / 2.0}};
  return t;
}

/// Latent impression of `mp` seen through `truth`, clipped to an elliptical
/// partial ROI whose image lies inside `rolledRoi`.
inline void make_latent(const MasterPrint& mp, const RoiMask& rolledRoi, const PairConfig& cfg, Rng& rng,
                        SyntheticPair& out) {
  const int n = cfg.size;
  const Vec2 rc = roi_centroid(rolledRoi) + Vec2{rng.uniform(-30, 30), rng.uniform(-30, 30)};
  const Ellipse e{out.truth.inverse(rc), rng.uniform(78, 100), rng.uniform(88, 110), rng.uniform(-90, 90)};
  out.latentRoi = RoiMask(n, n);
  GrayImage img(n, n, 255);
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x) {
      const Vec2 q{double(x), double(y)};
      if (!e.contains(q)) continue;
      const Vec2 p = out.truth.apply(q);
      double v;
      if (!sample_nearest(rolledRoi, p) || !sample_bilinear(mp.image, p, v)) continue;
      img.at(x, y) = to_u8(v);
      out.latentRoi.set(x, y, true);
    }
  Rng arng(rng.next());
  const auto ap = draw_appearance(cfg.latentAppearance, arng, out.latentRoi);
  out.latent = apply_appearance(img, ap, arng, cfg.latentAppearance.noiseBlur);
}

inline bool interior(const RoiMask& roi, Vec2 q, int margin) {
  const int x = static_cast<int>(std::lround(q.x)), y = static_cast<int>(std::lround(q.y));
  for (int dy = -margin; dy <= margin; dy += margin)
    for (int dx = -margin; dx <= margin; dx += margin)
      if (!roi.test(x + dx, y + dy)) return false;
  return true;
}

}  // namespace detail

/// Rolled impression of a master plus a distorted, partial, degraded latent
/// of the same master, with marked landmarks in both frames.
inline SyntheticPair make_mated_pair(std::uint64_t seed, const PairConfig& cfg = {}) {
  Rng rng(seed);
  const MasterPrint mp = generate_master(rng.next(), {cfg.size});
  SyntheticPair out;
  detail::make_rolled(mp, cfg, rng, out);
  out.truth = detail::random_truth(cfg, rng);
  detail::make_latent(mp, out.rolledRoi, cfg, rng, out);
  for (int id = 0, tries = 0; id < cfg.landmarks && tries < 10000; ++tries) {
    const Vec2 q{rng.uniform(0, cfg.size - 1), rng.uniform(0, cfg.size - 1)};
    if (!detail::interior(out.latentRoi, q, 10)) continue;
    const Vec2 p = out.truth.apply(q);
    const double rolledDir = wrap180(mp.orientation(p) + (rng.uniform() < 0.5 ? 0.0 : 180.0));
    // latent direction: pull the rolled direction back through the truth
    const Vec2 ahead = out.truth.inverse(p + rotate({1.0, 0.0}, rolledDir));
    const double latentDir = wrap180(rad2deg(std::atan2(ahead.y - q.y, ahead.x - q.x)));
    out.latentMarks.push_back({q, latentDir, id});
    out.rolledMarks.push_back({p, rolledDir, id});
    ++id;
  }
  return out;
}

/// Rolled impression of one master and a latent built the same way from an
/// unrelated master.
inline SyntheticPair make_non_mated_pair(std::uint64_t seed, const PairConfig& cfg = {}) {
  Rng rng(seed);
  // The two patterns come from different classes.
  const int ca = rng.uniform_int(0, 2);
  const int cb = (ca + rng.uniform_int(1, 2)) % 3;
  const auto cls = [](int k) { return static_cast<PatternClass>(k + 1); };
  MasterConfig ma{cfg.size}, mb{cfg.size};
  ma.pattern = cls(ca);
  mb.pattern = cls(cb);
  const MasterPrint a = generate_master(rng.next(), ma);
  const MasterPrint b = generate_master(rng.next(), mb);
  SyntheticPair out;
  out.mated = false;
  detail::make_rolled(a, cfg, rng, out);
  out.truth = detail::random_truth(cfg, rng);
  detail::make_latent(b, out.rolledRoi, cfg, rng, out);
  return out;
}

}  // namespace dsreg::synth
