#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "dsreg/descriptor.hpp"
#include "dsreg/errors.hpp"
#include "dsreg/geometry.hpp"
#include "dsreg/image.hpp"
#include "dsreg/imaging.hpp"
#include "dsreg/random.hpp"
#include "dsreg/sampling.hpp"
#include "dsreg/transform.hpp"

namespace dsreg {

struct EmptyRegionError : Error {
  using Error::Error;
};

// ---------------------------------------------------------------------------
// Appearance augmentation

struct AugmentConfig {
  double gammaMin = 0.5, gammaMax = 2.0;
  double contrastMin = 0.6, contrastMax = 1.4;
  double noiseMin = 0.0, noiseMax = 12.0;  // std-dev in intensity levels
  double noiseBlur = 1.0;                  // px, band limit of the noise
  int blobsMin = 0, blobsMax = 3;
  double blobRadiusMin = 6.0, blobRadiusMax = 16.0;

  static AugmentConfig none() { return {1.0, 1.0, 1.0, 1.0, 0.0, 0.0, 1.0, 0, 0, 6.0, 16.0}; }
};

struct AppearanceParams {
  double gamma = 1.0;
  double contrast = 1.0;
  double noiseSigma = 0.0;
  struct Blob {
    Vec2 center;
    double radius;
  };
  std::vector<Blob> blobs;
};

inline AppearanceParams draw_appearance(const AugmentConfig& cfg, Rng& rng, const RoiMask& roi) {
  AppearanceParams p;
  p.gamma = std::exp(rng.uniform(std::log(cfg.gammaMin), std::log(cfg.gammaMax)));
  p.contrast = rng.uniform(cfg.contrastMin, cfg.contrastMax);
  p.noiseSigma = rng.uniform(cfg.noiseMin, cfg.noiseMax);
  const int blobs = cfg.blobsMax > cfg.blobsMin ? rng.uniform_int(cfg.blobsMin, cfg.blobsMax) : cfg.blobsMin;
  const Vec2 c = roi_centroid(roi);
  for (int i = 0; i < blobs; ++i) {
    const double r = rng.uniform(cfg.blobRadiusMin, cfg.blobRadiusMax);
    p.blobs.push_back({{c.x + rng.uniform(-60.0, 60.0), c.y + rng.uniform(-60.0, 60.0)}, r});
  }
  return p;
}

/// Contrast about mid-grey, gamma, band-limited Gaussian noise and smudge
/// blobs that wash ridges out toward a light grey.
inline GrayImage apply_appearance(const GrayImage& img, const AppearanceParams& p, Rng& rng,
                                  double noiseBlur = 1.0) {
  const int w = img.width(), h = img.height();
  std::vector<float> noise(static_cast<std::size_t>(w) * h, 0.0f);
  if (p.noiseSigma > 0.0) {
    for (float& v : noise) v = static_cast<float>(rng.normal());
    if (noiseBlur > 0.0) {
      detail::blur(noise, w, h, noiseBlur);
      double ss = 0.0;
      for (float v : noise) ss += double(v) * v;
      const double sd = std::sqrt(ss / noise.size());
      if (sd > 0.0)
        for (float& v : noise) v = static_cast<float>(v / sd);
    }
  }
  GrayImage out(w, h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double v = img.at(x, y) / 255.0;
      v = std::clamp(0.5 + p.contrast * (v - 0.5), 0.0, 1.0);
      v = std::pow(v, p.gamma);
      double iv = 255.0 * v + p.noiseSigma * noise[static_cast<std::size_t>(y) * w + x];
      for (const auto& b : p.blobs) {
        const double d = distance({double(x), double(y)}, b.center);
        if (d < b.radius) {
          const double a = 0.8 * (1.0 - d / b.radius);
          iv = (1.0 - a) * iv + a * 200.0;
        }
      }
      out.at(x, y) = to_u8(iv);
    }
  return out;
}

// ---------------------------------------------------------------------------
// Distortion profiles and simulated impressions

struct DistortionProfile {
  RoiMask roi;       // common ROI in the rolled frame
  TpsTransform tps;  // latent -> rolled
  Vec2 center;
};

inline RoiMask warp_mask(const TpsTransform& t, const RoiMask& mask, int width, int height) {
  RoiMask out(width, height);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) out.set(x, y, sample_nearest(mask, t.inverse({double(x), double(y)})));
  return out;
}

inline DistortionProfile learn_distortion_profile(const std::vector<Vec2>& latentPts, const std::vector<Vec2>& rolledPts,
                                                  const RoiMask& latentRoi, const RoiMask& rolledRoi,
                                                  Vec2 rolledCenter) {
  if (latentPts.size() != rolledPts.size())
    throw ContractViolation("learn_distortion_profile: point lists differ in length");
  std::vector<LandmarkPair> pairs;
  for (std::size_t i = 0; i < latentPts.size(); ++i) pairs.push_back({latentPts[i], rolledPts[i]});
  DistortionProfile p;
  p.tps = fit_tps(pairs);
  p.roi = intersect(warp_mask(p.tps, latentRoi, rolledRoi.width(), rolledRoi.height()), rolledRoi);
  if (!p.roi.any()) throw EmptyRegionError("learn_distortion_profile: common ROI is empty");
  p.center = rolledCenter;
  return p;
}

struct ProfileQuality {
  double maxResidual = 0.0;
  std::size_t roiArea = 0;
  bool accepted = false;
};

/// Automatic stand-in for manual review: landmark residual <= 2 px and a
/// common ROI of at least 20000 px^2.
inline ProfileQuality assess_profile(const DistortionProfile& p, const std::vector<Vec2>& latentPts,
                                     const std::vector<Vec2>& rolledPts) {
  ProfileQuality q;
  for (std::size_t i = 0; i < latentPts.size() && i < rolledPts.size(); ++i)
    q.maxResidual = std::max(q.maxResidual, distance(p.tps.apply(latentPts[i]), rolledPts[i]));
  q.roiArea = p.roi.count();
  q.accepted = q.maxResidual <= 2.0 && q.roiArea >= 20000;
  return q;
}

/// Rolled frame -> simulated frame: F(p) = tps^-1(p - shift) + shift.
struct ImpressionMap {
  TpsTransform tps;
  Vec2 shift;

  Vec2 forward(Vec2 p) const { return tps.inverse(p - shift) + shift; }
  Vec2 backward(Vec2 q) const { return tps.apply(q - shift) + shift; }

  double forward_direction(Vec2 p, double dir) const {
    // inverse of the local linear map of the tps at the mapped point
    const auto j = tps.jacobian(forward(p) - shift);
    const double det = j[0] * j[3] - j[1] * j[2];
    const double c = std::cos(deg2rad(dir)), s = std::sin(deg2rad(dir));
    const double vx = (j[3] * c - j[1] * s) / det, vy = (-j[2] * c + j[0] * s) / det;
    return wrap180(rad2deg(std::atan2(vy, vx)));
  }
};

struct Impression {
  GrayImage image;
  RoiMask roi;
  ImpressionMap map;
  AppearanceParams appearance;
};

struct RolledInput {
  const GrayImage& image;
  const RoiMask& roi;
  Vec2 center;
};

inline Impression simulate_impression(const RolledInput& rolled, const DistortionProfile& profile,
                                      const AugmentConfig& appearance, std::uint64_t seed) {
  if (!same_shape(rolled.image, rolled.roi)) throw ContractViolation("simulate_impression: image and ROI differ");
  const int w = rolled.image.width(), h = rolled.image.height();
  Impression out;
  out.map = {profile.tps, rolled.center - profile.center};
  const Vec2 shift = out.map.shift;
  GrayImage img(w, h, 255);
  RoiMask roi(w, h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const Vec2 p = out.map.backward({double(x), double(y)});
      const Vec2 pr = p - shift;  // position in the profile's rolled frame
      if (!sample_nearest(profile.roi, pr) || !sample_nearest(rolled.roi, p)) continue;
      double v;
      if (!sample_bilinear(rolled.image, p, v)) continue;
      img.at(x, y) = to_u8(v);
      roi.set(x, y, true);
    }
  if (!roi.any()) throw EmptyRegionError("simulate_impression: cropped region is empty");
  Rng rng(seed);
  out.appearance = draw_appearance(appearance, rng, roi);
  out.image = apply_appearance(img, out.appearance, rng, appearance.noiseBlur);
  out.roi = std::move(roi);
  return out;
}

struct KeyPoint {
  Vec2 pos;  // rolled frame
  double direction = 0.0;
};

struct PatchCluster {
  int label = 0;
  int keyPoint = 0;
  std::vector<int> impressions;
  std::vector<Patch> patches;
};

/// Direction-aligned 200 px patches of every key point across impressions;
/// patches under 40% foreground are skipped and clusters of eight or fewer
/// patches dropped. Labels are consecutive over kept clusters.
inline std::vector<PatchCluster> generate_patch_dataset(const std::vector<Impression>& impressions,
                                                        const std::vector<KeyPoint>& keyPoints,
                                                        double minForeground = 0.4, int minPatches = 9) {
  std::vector<PatchCluster> out;
  for (std::size_t k = 0; k < keyPoints.size(); ++k) {
    PatchCluster c;
    c.keyPoint = static_cast<int>(k);
    for (std::size_t m = 0; m < impressions.size(); ++m) {
      const auto& imp = impressions[m];
      const Vec2 q = imp.map.forward(keyPoints[k].pos);
      const double dir = imp.map.forward_direction(keyPoints[k].pos, keyPoints[k].direction);
      Patch patch = extract_patch(imp.image, imp.roi, {q, dir, kDescriptorPatch});
      if (foreground_fraction(patch.mask) < minForeground) continue;
      c.impressions.push_back(static_cast<int>(m));
      c.patches.push_back(std::move(patch));
    }
    if (static_cast<int>(c.patches.size()) < minPatches) continue;
    c.label = static_cast<int>(out.size());
    out.push_back(std::move(c));
  }
  return out;
}

inline nlohmann::json to_json(const ImpressionMap& m) {
  return {{"tps", to_json(m.tps)}, {"shift", {m.shift.x, m.shift.y}}};
}

/// Writes tps.json-style profile data plus the ROI PNG into `dir`.
inline void save_profile(const DistortionProfile& p, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  save_roi_mask(p.roi, (dir / "roi.png").string());
  const nlohmann::json j = {{"tps", to_json(p.tps)}, {"center", {p.center.x, p.center.y}}, {"roi", "roi.png"}};
  std::ofstream(dir / "profile.json") << j.dump(2) << '\n';
}

inline DistortionProfile load_profile(const std::filesystem::path& jsonPath) {
  std::ifstream in(jsonPath);
  if (!in) throw LoadError(LoadError::Kind::Unreadable, "cannot read profile: " + jsonPath.string());
  nlohmann::json j;
  try {
    in >> j;
    DistortionProfile p;
    p.tps = tps_from_json(j.at("tps"));
    p.center = {j.at("center").at(0).get<double>(), j.at("center").at(1).get<double>()};
    p.roi = load_roi_mask((jsonPath.parent_path() / j.at("roi").get<std::string>()).string());
    return p;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("profile: ") + e.what());
  }
}

// ---------------------------------------------------------------------------
// Evaluation

struct MarkedMinutia {
  Vec2 pos;
  double direction = 0.0;
  int pairId = 0;
};

inline void write_minutiae_tsv(std::ostream& out, const std::vector<MarkedMinutia>& ms) {
  out << "pairId\tx\ty\tdirection\n";
  out.precision(17);
  for (const auto& m : ms) out << m.pairId << '\t' << m.pos.x << '\t' << m.pos.y << '\t' << m.direction << '\n';
}

inline std::vector<MarkedMinutia> read_minutiae_tsv(std::istream& in) {
  std::vector<MarkedMinutia> out;
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (first) {
      first = false;
      if (line.rfind("pairId", 0) == 0) continue;
    }
    std::istringstream ss(line);
    MarkedMinutia m;
    if (!(ss >> m.pairId >> m.pos.x >> m.pos.y >> m.direction)) throw FormatError("minutiae TSV: bad row: " + line);
    out.push_back(m);
  }
  return out;
}

/// Pairs two minutiae lists by pairId, in ascending pairId order.
inline std::vector<std::pair<MarkedMinutia, MarkedMinutia>> pair_minutiae(const std::vector<MarkedMinutia>& latent,
                                                                          const std::vector<MarkedMinutia>& rolled) {
  std::map<int, MarkedMinutia> byId;
  for (const auto& r : rolled) {
    if (!byId.emplace(r.pairId, r).second) throw FormatError("minutiae: duplicate pairId on rolled side");
  }
  std::map<int, std::pair<MarkedMinutia, MarkedMinutia>> out;
  for (const auto& l : latent) {
    auto it = byId.find(l.pairId);
    if (it == byId.end()) continue;
    if (!out.emplace(l.pairId, std::make_pair(l, it->second)).second)
      throw FormatError("minutiae: duplicate pairId on latent side");
  }
  std::vector<std::pair<MarkedMinutia, MarkedMinutia>> v;
  for (auto& [id, p] : out) v.push_back(p);
  return v;
}

struct DeviationReport {
  struct Entry {
    int pairId;
    double location;
    double direction;
  };
  std::vector<Entry> perPair;
  double locThreshold = 20.0;
  double dirThreshold = 15.0;
  double accuracyLoc = 0.0;
  double accuracyDir = 0.0;
  std::vector<double> cdfLoc;  // fraction with deviation <= k px, k = 0, 1, ...
  std::vector<double> cdfDir;  // fraction with deviation <= k degrees, k = 0..180
};

template <class Transform>
DeviationReport eval_deviations(const std::vector<std::pair<MarkedMinutia, MarkedMinutia>>& pairs,
                                const Transform& t, double locThreshold = 20.0, double dirThreshold = 15.0,
                                int cdfMaxPx = 100) {
  if (pairs.empty()) throw ContractViolation("eval_deviations: no minutia pairs");
  DeviationReport r;
  r.locThreshold = locThreshold;
  r.dirThreshold = dirThreshold;
  int okLoc = 0, okDir = 0;
  for (const auto& [l, ro] : pairs) {
    const Vec2 p = t.apply(l.pos);
    const double dl = distance(p, ro.pos);
    const double dd = angle_distance(t.apply_direction(l.pos, l.direction), ro.direction);
    r.perPair.push_back({l.pairId, dl, dd});
    okLoc += dl <= locThreshold;
    okDir += dd <= dirThreshold;
  }
  const double n = static_cast<double>(pairs.size());
  r.accuracyLoc = okLoc / n;
  r.accuracyDir = okDir / n;
  for (int k = 0; k <= cdfMaxPx; ++k)
    r.cdfLoc.push_back(std::count_if(r.perPair.begin(), r.perPair.end(), [&](const auto& e) { return e.location <= k; }) / n);
  for (int k = 0; k <= 180; ++k)
    r.cdfDir.push_back(std::count_if(r.perPair.begin(), r.perPair.end(), [&](const auto& e) { return e.direction <= k; }) / n);
  return r;
}

inline nlohmann::json to_json(const DeviationReport& r) {
  nlohmann::json per = nlohmann::json::array();
  for (const auto& e : r.perPair) per.push_back({{"pairId", e.pairId}, {"location", e.location}, {"direction", e.direction}});
  return {{"perPair", per},
          {"locThreshold", r.locThreshold},
          {"dirThreshold", r.dirThreshold},
          {"accuracyLoc", r.accuracyLoc},
          {"accuracyDir", r.accuracyDir},
          {"cdfLoc", r.cdfLoc},
          {"cdfDir", r.cdfDir}};
}

inline void write_cdf_csv(std::ostream& out, const DeviationReport& r) {
  out << "kind,threshold,fraction\n";
  for (std::size_t k = 0; k < r.cdfLoc.size(); ++k) out << "location," << k << ',' << r.cdfLoc[k] << '\n';
  for (std::size_t k = 0; k < r.cdfDir.size(); ++k) out << "direction," << k << ',' << r.cdfDir[k] << '\n';
}

struct MatchingScore {
  double score = 0.0;
  bool emptyOverlap = false;
  std::vector<double> perPoint;
};

/// Mean descriptor similarity over a 24 px grid on the ROI overlap of a
/// registered pair, each point directed by the rolled ridge orientation.
/// Failed registrations score 0.
inline MatchingScore matching_score(const GrayImage& latentWarped, const RoiMask& latentRoi, const GrayImage& rolled,
                                    const RoiMask& rolledRoi, const OrientationField& rolledField, bool failed,
                                    const DescriptorConfig& dcfg = {}, int interval = 24, int threads = 1) {
  MatchingScore s;
  if (failed) return s;
  const RoiMask overlap = intersect(latentRoi, rolledRoi);
  auto pts = assign_directions(grid_sample_points(overlap, {interval, interval, 0.0, kDescriptorPatch}, Side::Rolled),
                               rolledField);
  if (pts.empty()) {
    s.emptyOverlap = true;
    return s;
  }
  const DescriptorField lf(latentWarped, latentRoi, dcfg), rf(rolled, rolledRoi, dcfg);
  s.perPoint.resize(pts.size());
  parallel_for(pts.size(), threads, [&](std::size_t i) {
    const double dir = pts[i].direction.value_or(0.0);
    s.perPoint[i] = similarity(lf.describe(pts[i].pos, dir), rf.describe(pts[i].pos, dir));
  });
  double sum = 0.0;
  for (double v : s.perPoint) sum += v;
  s.score = sum / static_cast<double>(s.perPoint.size());
  return s;
}

}  // namespace dsreg
