#pragma once

#include <chrono>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "dsreg/align.hpp"
#include "dsreg/descriptor.hpp"
#include "dsreg/errors.hpp"
#include "dsreg/global_match.hpp"
#include "dsreg/image.hpp"
#include "dsreg/imaging.hpp"
#include "dsreg/parallel.hpp"
#include "dsreg/sampling.hpp"
#include "dsreg/transform.hpp"

namespace dsreg {

struct StageConfig {
  GridConfig latentGrid;
  GridConfig rolledGrid;
  AlignStageConfig align;
  double tau = 0.0;
  int n = 4;
};

struct PipelineConfig {
  StageConfig coarse{{48, 48, 0.4, 200}, {80, 80, 0.4, 200}, AlignStageConfig::coarse(), 0.5, 4};
  StageConfig precise{{24, 24, 0.4, 200}, {24, 24, 0.4, 200}, AlignStageConfig::precise(), 0.0, 4};
  int neighborRadius = 2;
  int minCorrespondences = 3;
  bool dropPinnedEstimates = true;  // estimates on the translation bound
  double tpsLambda = 0.0;
  CompatibilityConfig compatibility{};
  SpectralConfig spectral{};
  DescriptorConfig descriptor{};
  OrientationConfig orientation{};
  int threads = 1;

  void validate() const {
    for (const StageConfig* s : {&coarse, &precise}) {
      s->align.validate();
      if (s->latentGrid.intervalX < 1 || s->latentGrid.intervalY < 1 || s->rolledGrid.intervalX < 1 ||
          s->rolledGrid.intervalY < 1)
        throw ContractViolation("PipelineConfig: grid intervals must be >= 1");
      if (s->n < 1) throw ContractViolation("PipelineConfig: N must be >= 1");
      if (s->tau < 0.0 || s->tau > 1.0) throw ContractViolation("PipelineConfig: tau must lie in [0, 1]");
    }
    if (neighborRadius < 0) throw ContractViolation("PipelineConfig: neighbour radius must be >= 0");
    if (minCorrespondences < 1) throw ContractViolation("PipelineConfig: minCorrespondences must be >= 1");
    if (tpsLambda < 0.0) throw ContractViolation("PipelineConfig: tpsLambda must be >= 0");
  }
};

// ---------------------------------------------------------------------------
// Config JSON: every key optional, missing keys keep their defaults.

namespace detail {

template <class T>
void read_opt(const nlohmann::json& j, const char* key, T& v) {
  if (j.contains(key)) v = j.at(key).get<T>();
}

inline nlohmann::json grid_json(const GridConfig& g) {
  return {{"intervalX", g.intervalX}, {"intervalY", g.intervalY}, {"minForegroundFraction", g.minForegroundFraction}};
}

inline void grid_from(const nlohmann::json& j, GridConfig& g) {
  read_opt(j, "intervalX", g.intervalX);
  read_opt(j, "intervalY", g.intervalY);
  read_opt(j, "minForegroundFraction", g.minForegroundFraction);
}

inline nlohmann::json stage_json(const StageConfig& s) {
  return {{"latentGrid", grid_json(s.latentGrid)},
          {"rolledGrid", grid_json(s.rolledGrid)},
          {"maxTranslation", s.align.maxTranslation},
          {"maxRotation", s.align.maxRotation},
          {"translationStep", s.align.translationStep},
          {"rotationStep", s.align.rotationStep},
          {"tau", s.tau},
          {"n", s.n}};
}

inline void stage_from(const nlohmann::json& j, StageConfig& s) {
  if (j.contains("latentGrid")) grid_from(j.at("latentGrid"), s.latentGrid);
  if (j.contains("rolledGrid")) grid_from(j.at("rolledGrid"), s.rolledGrid);
  read_opt(j, "maxTranslation", s.align.maxTranslation);
  read_opt(j, "maxRotation", s.align.maxRotation);
  read_opt(j, "translationStep", s.align.translationStep);
  read_opt(j, "rotationStep", s.align.rotationStep);
  read_opt(j, "tau", s.tau);
  read_opt(j, "n", s.n);
}

}  // namespace detail

inline nlohmann::json to_json(const PipelineConfig& c) {
  return {{"coarse", detail::stage_json(c.coarse)},
          {"precise", detail::stage_json(c.precise)},
          {"neighborRadius", c.neighborRadius},
          {"minCorrespondences", c.minCorrespondences},
          {"dropPinnedEstimates", c.dropPinnedEstimates},
          {"tpsLambda", c.tpsLambda},
          {"compatibility",
           {{"sigmaDist", c.compatibility.sigmaDist},
            {"sigmaAngle", c.compatibility.sigmaAngle},
            {"gateDist", c.compatibility.gateDist},
            {"gateAngle", c.compatibility.gateAngle}}},
          {"threads", c.threads}};
}

inline PipelineConfig pipeline_config_from_json(const nlohmann::json& j) {
  PipelineConfig c;
  try {
    if (!j.is_object()) throw FormatError("config: expected a JSON object");
    if (j.contains("coarse")) detail::stage_from(j.at("coarse"), c.coarse);
    if (j.contains("precise")) detail::stage_from(j.at("precise"), c.precise);
    detail::read_opt(j, "neighborRadius", c.neighborRadius);
    detail::read_opt(j, "minCorrespondences", c.minCorrespondences);
    detail::read_opt(j, "dropPinnedEstimates", c.dropPinnedEstimates);
    detail::read_opt(j, "tpsLambda", c.tpsLambda);
    if (j.contains("compatibility")) {
      const auto& k = j.at("compatibility");
      detail::read_opt(k, "sigmaDist", c.compatibility.sigmaDist);
      detail::read_opt(k, "sigmaAngle", c.compatibility.sigmaAngle);
      detail::read_opt(k, "gateDist", c.compatibility.gateDist);
      detail::read_opt(k, "gateAngle", c.compatibility.gateAngle);
    }
    detail::read_opt(j, "threads", c.threads);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("config: ") + e.what());
  }
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------

/// Whole-image features computed once per image and shared by all pairs.
struct PreparedImage {
  GrayImage image;
  RoiMask roi;
  OrientationField field;
  OrientationFeatureMap features;
  DescriptorField descriptors;

  PreparedImage(GrayImage img, RoiMask mask, const PipelineConfig& cfg)
      : image(std::move(img)), roi(std::move(mask)) {
    if (!same_shape(image, roi)) throw ContractViolation("register: image and ROI dimensions differ");
    field = estimate_orientation_field(image, roi, cfg.orientation);
    features = OrientationFeatureMap(field, roi);
    descriptors = DescriptorField(image, roi, cfg.descriptor);
  }
};

struct TemplateSet {
  const TemplateBank* latent = nullptr;
  const TemplateBank* rolled = nullptr;
};

struct StageResult {
  bool ok = false;
  int compared = 0;
  int candidates = 0;
  CorrespondenceSet set;
  std::optional<RigidTransform2D> rigid;
  double seconds = 0.0;
};

namespace detail {

/// Aligns and scores the given (latent index, rolled index) pairs, then
/// runs candidate selection and spectral matching.
inline StageResult run_stage(const PreparedImage& latent, const PreparedImage& rolled,
                             const std::vector<SamplePoint>& latentPts, const std::vector<SamplePoint>& rolledPts,
                             const std::vector<std::pair<int, int>>& pairs, const StageConfig& stage,
                             const PipelineConfig& cfg, const TemplateSet& templates) {
  const auto t0 = std::chrono::steady_clock::now();
  StageResult r;
  r.compared = static_cast<int>(pairs.size());

  std::vector<Descriptor> rolledDesc(rolledPts.size());
  parallel_for(rolledPts.size(), cfg.threads, [&](std::size_t i) {
    const double dir = rolledPts[i].direction.value_or(0.0);
    rolledDesc[i] = templates.rolled ? query_template(*templates.rolled, rolledPts[i].pos, dir).descriptor
                                     : rolled.descriptors.describe(rolledPts[i].pos, dir);
  });

  // Group pairs by latent point so each latent search is prepared once.
  std::vector<std::vector<std::size_t>> byLatent(latentPts.size());
  for (std::size_t k = 0; k < pairs.size(); ++k) byLatent[pairs[k].first].push_back(k);
  std::vector<PairScore> scores(pairs.size());
  parallel_for(latentPts.size(), cfg.threads, [&](std::size_t li) {
    if (byLatent[li].empty()) return;
    const AlignmentSearch search(latent.features, latentPts[li].pos, kDescriptorPatch, stage.align);
    for (std::size_t k : byLatent[li]) {
      const int ri = pairs[k].second;
      PairScore& s = scores[k];
      s.latent = static_cast<int>(li);
      s.rolled = ri;
      s.alignment = search.estimate(rolled.features, rolledPts[ri].pos);
      if (s.alignment.insufficientOverlap) continue;
      const SamplePoint c = adjust_point(latentPts[li], rolledPts[ri], s.alignment).point;
      const double dir = c.direction.value_or(0.0);
      const Descriptor d = templates.latent ? query_template(*templates.latent, c.pos, dir).descriptor
                                            : latent.descriptors.describe(c.pos, dir);
      s.similarity = similarity(d, rolledDesc[ri]);
    }
  });

  if (cfg.dropPinnedEstimates) {
    const double edge = stage.align.maxTranslation - 0.5 * stage.align.translationStep;
    std::erase_if(scores, [&](const PairScore& s) {
      return std::abs(s.alignment.dx) > edge || std::abs(s.alignment.dy) > edge;
    });
  }
  const auto cands = select_candidates(latentPts, rolledPts, scores, stage.tau, stage.n);
  r.candidates = static_cast<int>(cands.size());
  if (!cands.empty()) {
    const auto m = build_compatibility(cands, cfg.compatibility);
    r.set = spectral_select(cands, m, cfg.spectral);
  }
  if (static_cast<int>(r.set.selected.size()) >= cfg.minCorrespondences) {
    r.ok = true;
    r.rigid = average_rigid(r.set);
  }
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

inline std::vector<SamplePoint> index_ids(std::vector<SamplePoint> pts) {
  for (std::size_t i = 0; i < pts.size(); ++i) pts[i].id = static_cast<int>(i);
  return pts;
}

}  // namespace detail

/// Every latent point against every rolled point on the coarse grids.
inline StageResult register_coarse(const PreparedImage& latent, const PreparedImage& rolled, const PipelineConfig& cfg,
                                   const TemplateSet& templates = {}) {
  const auto lp = detail::index_ids(grid_sample_points(latent.roi, cfg.coarse.latentGrid, Side::Latent));
  const auto rp = detail::index_ids(
      assign_directions(grid_sample_points(rolled.roi, cfg.coarse.rolledGrid, Side::Rolled), rolled.field));
  std::vector<std::pair<int, int>> pairs;
  for (std::size_t i = 0; i < lp.size(); ++i)
    for (std::size_t j = 0; j < rp.size(); ++j) pairs.emplace_back(static_cast<int>(i), static_cast<int>(j));
  return detail::run_stage(latent, rolled, lp, rp, pairs, cfg.coarse, cfg, templates);
}

/// Neighbour-restricted comparison of a latent already warped into the
/// rolled frame.
inline StageResult register_precise(const PreparedImage& latentWarped, const PreparedImage& rolled,
                                    const PipelineConfig& cfg) {
  const auto lp = detail::index_ids(grid_sample_points(latentWarped.roi, cfg.precise.latentGrid, Side::Latent));
  const auto rp = detail::index_ids(
      assign_directions(grid_sample_points(rolled.roi, cfg.precise.rolledGrid, Side::Rolled), rolled.field));
  const auto pairs = precise_candidate_pairs(lp, rp, cfg.neighborRadius, cfg.precise.rolledGrid.intervalX,
                                             cfg.precise.rolledGrid.intervalY);
  return detail::run_stage(latentWarped, rolled, lp, rp, pairs, cfg.precise, cfg, {});
}

enum class RegistrationStatus { Ok, CoarseOnly, Failed };

inline const char* to_string(RegistrationStatus s) {
  switch (s) {
    case RegistrationStatus::Ok: return "ok";
    case RegistrationStatus::CoarseOnly: return "coarse-only";
    case RegistrationStatus::Failed: return "failed";
  }
  return "failed";
}

inline RegistrationStatus parse_status(const std::string& s) {
  if (s == "ok") return RegistrationStatus::Ok;
  if (s == "coarse-only") return RegistrationStatus::CoarseOnly;
  if (s == "failed") return RegistrationStatus::Failed;
  throw FormatError("unknown registration status '" + s + "'");
}

struct RegistrationResult {
  RegistrationStatus status = RegistrationStatus::Failed;
  // coarse stage, latent -> rolled
  std::optional<CorrespondenceSet> coarseSet;
  std::optional<RigidTransform2D> coarse;
  // precise stage: correspondences mapped back to the latent frame, the
  // rigid average in the warped frame, and the TPS latent -> rolled
  std::optional<CorrespondenceSet> preciseSet;
  std::optional<RigidTransform2D> preciseRigid;
  std::optional<TpsTransform> tps;
  // final rigid latent -> rolled
  std::optional<RigidTransform2D> final;
  int coarseCandidates = 0;
  int coarseSelected = 0;
  int preciseCandidates = 0;
  int preciseSelected = 0;
  double coarseSeconds = 0.0;
  double preciseSeconds = 0.0;

  /// Correspondences of the most refined successful stage, latent frame.
  const CorrespondenceSet* best_correspondences() const {
    if (preciseSet) return &*preciseSet;
    if (coarseSet) return &*coarseSet;
    return nullptr;
  }
};

/// Coarse stage, warp, precise stage. Stage failures become statuses.
inline RegistrationResult register_images(const GrayImage& latentImg, const RoiMask& latentRoi,
                                          const GrayImage& rolledImg, const RoiMask& rolledRoi,
                                          const PipelineConfig& cfg = {}, const TemplateSet& templates = {}) {
  cfg.validate();
  RegistrationResult res;
  const PreparedImage latent(latentImg, latentRoi, cfg);
  const PreparedImage rolled(rolledImg, rolledRoi, cfg);
  if (!latent.roi.any() || !rolled.roi.any()) return res;

  const StageResult coarse = register_coarse(latent, rolled, cfg, templates);
  res.coarseCandidates = coarse.candidates;
  res.coarseSelected = static_cast<int>(coarse.set.selected.size());
  res.coarseSeconds = coarse.seconds;
  if (!coarse.ok) return res;
  res.status = RegistrationStatus::CoarseOnly;
  res.coarseSet = coarse.set;
  res.coarse = coarse.rigid;
  res.final = coarse.rigid;

  const auto warped = apply_transform(*coarse.rigid, latent.image, latent.roi, rolled.image.width(),
                                      rolled.image.height());
  if (!warped.mask.any()) return res;
  const PreparedImage latentWarped(warped.image, warped.mask, cfg);
  const StageResult precise = register_precise(latentWarped, rolled, cfg);
  res.preciseCandidates = precise.candidates;
  res.preciseSelected = static_cast<int>(precise.set.selected.size());
  res.preciseSeconds = precise.seconds;
  if (!precise.ok) return res;

  // Back to the latent frame.
  CorrespondenceSet mapped = precise.set;
  std::vector<LandmarkPair> landmarks;
  for (auto& c : mapped.selected) {
    c.latentPoint.pos = coarse.rigid->inverse(c.latentPoint.pos);
    c.latentPoint.direction = wrap180(c.latentPoint.direction.value_or(0.0) - coarse.rigid->da);
    landmarks.push_back({c.latentPoint.pos, c.rolledPoint.pos});
  }
  try {
    res.tps = fit_tps(landmarks, cfg.tpsLambda);
  } catch (const DegenerateConfiguration&) {
    return res;
  }
  res.status = RegistrationStatus::Ok;
  res.preciseSet = std::move(mapped);
  res.preciseRigid = precise.rigid;
  res.final = compose(*precise.rigid, *coarse.rigid);
  return res;
}

inline nlohmann::json to_json(const RegistrationResult& r, const std::string& correspondencesPath = "",
                              bool timing = false) {
  nlohmann::json j;
  j["status"] = to_string(r.status);
  j["coarse"] = {{"candidates", r.coarseCandidates}, {"selected", r.coarseSelected}};
  if (r.coarse) j["coarse"]["transform"] = to_json(*r.coarse);
  if (r.coarseSet) j["coarse"]["totalScore"] = r.coarseSet->totalScore;
  j["precise"] = {{"candidates", r.preciseCandidates}, {"selected", r.preciseSelected}};
  if (r.preciseRigid) j["precise"]["transform"] = to_json(*r.preciseRigid);
  if (r.tps) j["precise"]["tps"] = to_json(*r.tps);
  if (r.preciseSet) j["precise"]["totalScore"] = r.preciseSet->totalScore;
  j["final"] = r.final ? to_json(*r.final) : nlohmann::json(nullptr);
  if (!correspondencesPath.empty()) j["correspondences"] = correspondencesPath;
  if (timing) j["timing"] = {{"coarseSeconds", r.coarseSeconds}, {"preciseSeconds", r.preciseSeconds}};
  return j;
}

/// Status and transforms back from result JSON (correspondences are not
/// reconstructed).
inline RegistrationResult registration_from_json(const nlohmann::json& j) {
  RegistrationResult r;
  try {
    r.status = parse_status(j.at("status").get<std::string>());
    if (j.contains("coarse") && j["coarse"].contains("transform")) r.coarse = rigid_from_json(j["coarse"]["transform"]);
    if (j.contains("precise")) {
      if (j["precise"].contains("transform")) r.preciseRigid = rigid_from_json(j["precise"]["transform"]);
      if (j["precise"].contains("tps")) r.tps = tps_from_json(j["precise"]["tps"]);
    }
    if (j.contains("final") && !j["final"].is_null()) r.final = rigid_from_json(j["final"]);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("result: ") + e.what());
  }
  if (r.status != RegistrationStatus::Failed && !r.final) throw FormatError("result: missing final transform");
  return r;
}

}  // namespace dsreg
