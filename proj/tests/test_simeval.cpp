#include <gtest/gtest.h>

#include <sstream>

#include "fixtures.hpp"

using namespace dsreg;

namespace {

const synth::SyntheticPair& pair_1004() {
  static const synth::SyntheticPair p = synth::make_mated_pair(1004);
  return p;
}

std::vector<LandmarkPair> as_pairs(const std::vector<Vec2>& a, const std::vector<Vec2>& b) {
  std::vector<LandmarkPair> v;
  for (std::size_t i = 0; i < a.size(); ++i) v.push_back({a[i], b[i]});
  return v;
}

const std::vector<Vec2> kGrid{{80, 80}, {160, 80}, {240, 80}, {80, 160}, {160, 160},
                              {240, 160}, {80, 240}, {160, 240}, {240, 240}};

DistortionProfile identity_profile(const RoiMask& roi) {
  return learn_distortion_profile(kGrid, kGrid, roi, roi, roi_centroid(roi));
}

MarkedMinutia mk(int id, Vec2 p, double dir) { return {p, dir, id}; }

}  // namespace

TEST(Appearance, NoneIsIdentity) {
  const auto& p = pair_1004();
  Rng rng(1);
  const auto ap = draw_appearance(AugmentConfig::none(), rng, p.rolledRoi);
  EXPECT_EQ(ap.gamma, 1.0);
  EXPECT_EQ(ap.contrast, 1.0);
  EXPECT_EQ(ap.noiseSigma, 0.0);
  EXPECT_TRUE(ap.blobs.empty());
  const auto out = apply_appearance(p.rolled, ap, rng);
  EXPECT_TRUE(std::ranges::equal(out.pixels(), p.rolled.pixels()));
}

TEST(Appearance, RangesRespected) {
  const auto& p = pair_1004();
  const AugmentConfig cfg;
  Rng rng(2);
  for (int i = 0; i < 50; ++i) {
    const auto ap = draw_appearance(cfg, rng, p.rolledRoi);
    EXPECT_GE(ap.gamma, cfg.gammaMin - 1e-12);
    EXPECT_LE(ap.gamma, cfg.gammaMax + 1e-12);
    EXPECT_GE(ap.contrast, cfg.contrastMin);
    EXPECT_LE(ap.contrast, cfg.contrastMax);
    EXPECT_LE(static_cast<int>(ap.blobs.size()), cfg.blobsMax);
  }
}

TEST(Profile, IdentityLandmarks) {
  const RoiMask roi = fx::disk(320, 320, {160, 160}, 120);
  const auto p = identity_profile(roi);
  EXPECT_EQ(p.roi.count(), roi.count());
  EXPECT_LE(distance(p.tps.apply({123, 201}), {123, 201}), 1e-6);
  const auto q = assess_profile(p, kGrid, kGrid);
  EXPECT_LE(q.maxResidual, 1e-6);
  EXPECT_TRUE(q.accepted);
}

TEST(Profile, KnownTps) {
  Rng rng(3);
  std::vector<Vec2> moved;
  for (Vec2 g : kGrid) moved.push_back(g + Vec2{rng.uniform(-4, 4), rng.uniform(-4, 4)});
  const auto truth = fit_tps(as_pairs(kGrid, moved));
  const RoiMask roi(320, 320, true);
  const auto p = learn_distortion_profile(kGrid, moved, roi, roi, {160, 160});
  for (Vec2 q : {Vec2{100, 130}, Vec2{210, 95}, Vec2{170, 230}})
    EXPECT_LE(distance(p.tps.apply(q), truth.apply(q)), 1e-6);
  EXPECT_LE(assess_profile(p, kGrid, moved).maxResidual, 1e-6);
}

TEST(Profile, DisjointRoisRejected) {
  const RoiMask a = fx::disk(320, 320, {60, 60}, 40), b = fx::disk(320, 320, {260, 260}, 40);
  EXPECT_THROW(learn_distortion_profile(kGrid, kGrid, a, b, {260, 260}), EmptyRegionError);
}

TEST(Profile, SmallRoiNotAccepted) {
  const RoiMask roi = fx::disk(320, 320, {160, 160}, 60);
  EXPECT_FALSE(assess_profile(identity_profile(roi), kGrid, kGrid).accepted);
}

TEST(Profile, SaveLoad) {
  const RoiMask roi = fx::disk(320, 320, {160, 160}, 120);
  const auto p = identity_profile(roi);
  const auto dir = fx::temp_dir("profile");
  save_profile(p, dir);
  const auto back = load_profile(dir / "profile.json");
  EXPECT_EQ(back.roi.count(), p.roi.count());
  EXPECT_EQ(back.center, p.center);
  EXPECT_EQ(back.tps.apply({90, 100}).x, p.tps.apply({90, 100}).x);
  EXPECT_THROW(load_profile(dir / "missing.json"), LoadError);
}

TEST(Simulate, IdentityProfileReproducesRolled) {
  const auto& p = pair_1004();
  const auto prof = identity_profile(p.rolledRoi);
  const auto imp = simulate_impression({p.rolled, p.rolledRoi, roi_centroid(p.rolledRoi)}, prof, AugmentConfig::none(), 7);
  int worst = 0;
  for (int y = 0; y < p.rolled.height(); ++y)
    for (int x = 0; x < p.rolled.width(); ++x)
      if (imp.roi.at(x, y)) worst = std::max(worst, std::abs(int(imp.image.at(x, y)) - int(p.rolled.at(x, y))));
  EXPECT_LE(worst, 1);
  EXPECT_GE(imp.roi.count(), p.rolledRoi.count() * 95 / 100);
}

TEST(Simulate, DirectionFollowsMap) {
  std::vector<Vec2> turned;
  for (Vec2 g : kGrid) turned.push_back(rotate(g - Vec2{160, 160}, 10.0) + Vec2{160, 160});
  ImpressionMap m{fit_tps(as_pairs(kGrid, turned)), {0, 0}};
  for (double dir : {0.0, 45.0, -120.0}) EXPECT_NEAR(angle_distance(m.forward_direction({150, 170}, dir), dir - 10.0), 0.0, 1e-6);
}

TEST(Simulate, SameSeedSameImpression) {
  const auto& p = pair_1004();
  std::vector<Vec2> moved;
  Rng rng(4);
  for (Vec2 g : kGrid) moved.push_back(g + Vec2{rng.uniform(-5, 5), rng.uniform(-5, 5)});
  const auto prof = learn_distortion_profile(kGrid, moved, p.rolledRoi, p.rolledRoi, roi_centroid(p.rolledRoi));
  const RolledInput in{p.rolled, p.rolledRoi, roi_centroid(p.rolledRoi) + Vec2{6, -4}};
  const auto a = simulate_impression(in, prof, {}, 99), b = simulate_impression(in, prof, {}, 99);
  const auto c = simulate_impression(in, prof, {}, 100);
  EXPECT_TRUE(std::ranges::equal(a.image.pixels(), b.image.pixels()));
  EXPECT_FALSE(std::ranges::equal(a.image.pixels(), c.image.pixels()));
  double worst = 0.0;
  for (Vec2 q : {Vec2{120, 140}, Vec2{170, 150}, Vec2{200, 210}}) worst = std::max(worst, distance(a.map.forward(a.map.backward(q)), q));
  EXPECT_LT(worst, 1e-3);
}

namespace {

Impression flat_impression(const GrayImage& img, const RoiMask& roi) {
  Impression imp;
  imp.image = img;
  imp.roi = roi;
  imp.map = {fit_tps(as_pairs(kGrid, kGrid)), {0, 0}};
  return imp;
}

RoiMask left_columns(int w, int h, int upto) {
  RoiMask m(w, h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < upto; ++x) m.set(x, y, true);
  return m;
}

}  // namespace

TEST(PatchDataset, ClusterRules) {
  const GrayImage img = fx::ridges(320, 320, 20.0);
  // Patch window at (160, 160) spans x in [60, 260).
  const Impression wide = flat_impression(img, left_columns(320, 320, 160));    // 50% foreground
  const Impression narrow = flat_impression(img, left_columns(320, 320, 120));  // 30% foreground
  const std::vector<KeyPoint> kp{{{160, 160}, 20.0}};

  const auto kept = generate_patch_dataset(std::vector<Impression>(9, wide), kp);
  ASSERT_EQ(kept.size(), 1u);
  EXPECT_EQ(kept[0].patches.size(), 9u);
  EXPECT_EQ(kept[0].label, 0);
  EXPECT_EQ(kept[0].patches[0].image.width(), kDescriptorPatch);

  EXPECT_TRUE(generate_patch_dataset(std::vector<Impression>(9, narrow), kp).empty());
  EXPECT_TRUE(generate_patch_dataset(std::vector<Impression>(2, wide), kp).empty());

  std::vector<Impression> mixed(9, wide);
  mixed[4] = narrow;
  EXPECT_TRUE(generate_patch_dataset(mixed, kp).empty());
  mixed.push_back(wide);
  const auto c = generate_patch_dataset(mixed, kp);
  ASSERT_EQ(c.size(), 1u);
  EXPECT_EQ(std::count(c[0].impressions.begin(), c[0].impressions.end(), 4), 0);
}

TEST(PatchDataset, LabelsConsecutive) {
  const GrayImage img = fx::ridges(320, 320, 20.0);
  const Impression imp = flat_impression(img, RoiMask(320, 320, true));
  const std::vector<KeyPoint> kp{{{160, 160}, 0.0}, {{-500, -500}, 0.0}, {{150, 170}, 30.0}};
  const auto c = generate_patch_dataset(std::vector<Impression>(9, imp), kp);
  ASSERT_EQ(c.size(), 2u);
  EXPECT_EQ(c[0].label, 0);
  EXPECT_EQ(c[1].label, 1);
  EXPECT_EQ(c[1].keyPoint, 2);
}

TEST(EvalDeviations, Identity) {
  const std::vector<std::pair<MarkedMinutia, MarkedMinutia>> pairs{{mk(0, {10, 10}, 30), mk(0, {10, 10}, 30)},
                                                                   {mk(1, {50, 20}, -100), mk(1, {50, 20}, -100)}};
  const auto r = eval_deviations(pairs, RigidTransform2D{});
  EXPECT_EQ(r.accuracyLoc, 1.0);
  EXPECT_EQ(r.accuracyDir, 1.0);
  EXPECT_EQ(r.cdfLoc.front(), 1.0);
  EXPECT_EQ(r.cdfDir.size(), 181u);
}

TEST(EvalDeviations, ThreePairs) {
  const std::vector<std::pair<MarkedMinutia, MarkedMinutia>> pairs{{mk(0, {0, 0}, 0), mk(0, {3, 4}, 10)},
                                                                   {mk(1, {0, 0}, 0), mk(1, {15, 20}, 20)},
                                                                   {mk(2, {0, 0}, 0), mk(2, {6, 8}, -30)}};
  const auto r = eval_deviations(pairs, RigidTransform2D{});
  EXPECT_NEAR(r.perPair[0].location, 5.0, 1e-12);
  EXPECT_NEAR(r.perPair[1].location, 25.0, 1e-12);
  EXPECT_NEAR(r.perPair[2].location, 10.0, 1e-12);
  EXPECT_NEAR(r.accuracyLoc, 2.0 / 3.0, 1e-12);
  EXPECT_NEAR(r.accuracyDir, 1.0 / 3.0, 1e-12);
  EXPECT_NEAR(r.cdfLoc[9], 1.0 / 3.0, 1e-12);
  EXPECT_NEAR(r.cdfLoc[25], 1.0, 1e-12);
  EXPECT_THROW(eval_deviations({}, RigidTransform2D{}), ContractViolation);
}

TEST(EvalDeviations, DirectionWrapsSymmetrically) {
  const std::vector<std::pair<MarkedMinutia, MarkedMinutia>> a{{mk(0, {0, 0}, 170), mk(0, {0, 0}, -170)}};
  const std::vector<std::pair<MarkedMinutia, MarkedMinutia>> b{{mk(0, {0, 0}, -170), mk(0, {0, 0}, 170)}};
  EXPECT_NEAR(eval_deviations(a, RigidTransform2D{}).perPair[0].direction, 20.0, 1e-12);
  EXPECT_NEAR(eval_deviations(b, RigidTransform2D{}).perPair[0].direction, 20.0, 1e-12);
}

TEST(EvalDeviations, AppliesTransform) {
  const RigidTransform2D t{5, 0, 90, {0, 0}};
  const std::vector<std::pair<MarkedMinutia, MarkedMinutia>> pairs{{mk(0, {10, 0}, 0), mk(0, {5, 10}, 90)}};
  const auto r = eval_deviations(pairs, t);
  EXPECT_NEAR(r.perPair[0].location, 0.0, 1e-9);
  EXPECT_NEAR(r.perPair[0].direction, 0.0, 1e-9);
}

TEST(MatchingScore, Rules) {
  const auto& p = pair_1004();
  const auto field = estimate_orientation_field(p.rolled, p.rolledRoi);
  EXPECT_EQ(matching_score(p.rolled, p.rolledRoi, p.rolled, p.rolledRoi, field, true).score, 0.0);

  const auto self = matching_score(p.rolled, p.rolledRoi, p.rolled, p.rolledRoi, field, false);
  EXPECT_GE(self.score, 0.95);
  double mean = 0.0;
  for (double v : self.perPoint) mean += v / self.perPoint.size();
  EXPECT_NEAR(self.score, mean, 1e-12);

  const auto empty = matching_score(p.rolled, RoiMask(320, 320), p.rolled, p.rolledRoi, field, false);
  EXPECT_TRUE(empty.emptyOverlap);
  EXPECT_EQ(empty.score, 0.0);
}

TEST(MatchingScore, ReplacementLowersScore) {
  const auto& p = pair_1004();
  const auto other = synth::make_non_mated_pair(5001);
  const auto field = estimate_orientation_field(p.rolled, p.rolledRoi);
  const double self = matching_score(p.rolled, p.rolledRoi, p.rolled, p.rolledRoi, field, false).score;
  const double foreign = matching_score(other.rolled, p.rolledRoi, p.rolled, p.rolledRoi, field, false).score;
  EXPECT_LT(foreign, self);
}

TEST(Minutiae, TsvRoundTripAndPairing) {
  const std::vector<MarkedMinutia> l{mk(2, {1.5, 2}, 30), mk(0, {3, 4.25}, -45)}, r{mk(0, {5, 6}, 10), mk(7, {1, 1}, 0)};
  std::stringstream ss;
  write_minutiae_tsv(ss, l);
  const auto back = read_minutiae_tsv(ss);
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[0].pos, l[0].pos);
  EXPECT_EQ(back[1].direction, -45.0);
  const auto pairs = pair_minutiae(l, r);
  ASSERT_EQ(pairs.size(), 1u);
  EXPECT_EQ(pairs[0].first.pairId, 0);
  EXPECT_EQ(pairs[0].second.pos, (Vec2{5, 6}));
  EXPECT_THROW(pair_minutiae(l, {mk(0, {0, 0}, 0), mk(0, {1, 1}, 0)}), FormatError);
  std::stringstream bad("pairId\tx\ty\tdirection\n1\tfoo\n");
  EXPECT_THROW(read_minutiae_tsv(bad), FormatError);
}
