#include <gtest/gtest.h>

#include <sstream>

#include "fixtures.hpp"

using namespace dsreg;

TEST(GridSample, EmptyRoi) {
  EXPECT_TRUE(grid_sample_points(RoiMask(300, 300), GridConfig::uniform(80), Side::Rolled).empty());
}

TEST(GridSample, FullRoiCount) {
  const auto pts = grid_sample_points(RoiMask(400, 400, true), {80, 80, 0.0, 200}, Side::Rolled);
  EXPECT_EQ(pts.size(), 25u);
}

TEST(GridSample, RowMajorIdsAndStableOrder) {
  const RoiMask roi = fx::disk(400, 400, {200, 200}, 170);
  const auto a = grid_sample_points(roi, GridConfig::uniform(48), Side::Latent);
  const auto b = grid_sample_points(roi, GridConfig::uniform(48), Side::Latent);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].id, static_cast<int>(i));
    EXPECT_EQ(a[i].pos, b[i].pos);
    if (i > 0) {
      EXPECT_TRUE(a[i].pos.y > a[i - 1].pos.y || (a[i].pos.y == a[i - 1].pos.y && a[i].pos.x > a[i - 1].pos.x));
    }
  }
}

TEST(GridSample, ForegroundRuleRecheck) {
  const RoiMask roi = fx::disk(360, 360, {150, 190}, 140);
  const GridConfig cfg = GridConfig::uniform(24);
  const auto pts = grid_sample_points(roi, cfg, Side::Latent);
  ASSERT_FALSE(pts.empty());
  // Brute force over the whole lattice.
  std::size_t expected = 0;
  for (int y = 12; y < 360; y += 24)
    for (int x = 12; x < 360; x += 24) {
      if (!roi.at(x, y)) continue;
      int fg = 0;
      for (int v = y - 100; v < y + 100; ++v)
        for (int u = x - 100; u < x + 100; ++u) fg += roi.test(u, v);
      if (fg / 40000.0 >= 0.4) ++expected;
    }
  EXPECT_EQ(pts.size(), expected);
  for (const auto& p : pts)
    EXPECT_GE(window_foreground_fraction(roi, int(p.pos.x), int(p.pos.y), 200), 0.4);
}

TEST(GridSample, PaperDefaults) {
  PipelineConfig cfg;
  EXPECT_EQ(cfg.coarse.rolledGrid.intervalX, 80);
  EXPECT_EQ(cfg.coarse.rolledGrid.intervalY, 80);
  EXPECT_EQ(cfg.coarse.latentGrid.intervalX, 48);
  EXPECT_EQ(cfg.coarse.latentGrid.intervalY, 48);
}

TEST(AssignDirections, ThirtyDegreeField) {
  const GrayImage img = fx::ridges(240, 240, 30.0);
  const RoiMask roi(240, 240, true);
  const auto field = estimate_orientation_field(img, roi);
  const auto pts = assign_directions(grid_sample_points(roi, {80, 80, 0.0, 200}, Side::Rolled), field);
  ASSERT_EQ(pts.size(), 9u);
  for (const auto& p : pts) {
    ASSERT_TRUE(p.direction.has_value());
    EXPECT_LE(angle_distance(2 * *p.direction, 60.0) / 2, 3.0);
    EXPECT_FALSE(p.lowConfidence);
  }
}

TEST(AssignDirections, LatentUntouched) {
  const RoiMask roi(240, 240, true);
  const auto field = estimate_orientation_field(fx::ridges(240, 240, 30.0), roi);
  const auto pts = assign_directions(grid_sample_points(roi, {80, 80, 0.0, 200}, Side::Latent), field);
  for (const auto& p : pts) EXPECT_FALSE(p.direction.has_value());
}

TEST(AssignDirections, ZeroCoherenceConvention) {
  const RoiMask roi(160, 160, true);
  const auto field = estimate_orientation_field(GrayImage(160, 160, 100), roi);
  const auto pts = assign_directions(grid_sample_points(roi, {80, 80, 0.0, 200}, Side::Rolled), field);
  ASSERT_FALSE(pts.empty());
  for (const auto& p : pts) {
    EXPECT_EQ(*p.direction, 0.0);
    EXPECT_TRUE(p.lowConfidence);
  }
}

namespace {

std::vector<SamplePoint> lattice(int cols, int rows, int step, Side side, Vec2 origin = {0, 0}) {
  std::vector<SamplePoint> v;
  for (int j = 0; j < rows; ++j)
    for (int i = 0; i < cols; ++i) {
      SamplePoint p;
      p.id = static_cast<int>(v.size());
      p.pos = {origin.x + i * step, origin.y + j * step};
      p.side = side;
      v.push_back(p);
    }
  return v;
}

}  // namespace

TEST(PreciseCandidates, TwentyFivePerInteriorPoint) {
  const auto l = lattice(9, 9, 24, Side::Latent), r = lattice(9, 9, 24, Side::Rolled);
  const auto pairs = precise_candidate_pairs(l, r, 2, 24, 24);
  std::vector<int> per(l.size(), 0);
  for (const auto& [a, b] : pairs) ++per[a];
  for (int j = 2; j < 7; ++j)
    for (int i = 2; i < 7; ++i) EXPECT_EQ(per[j * 9 + i], 25);
  EXPECT_LE(pairs.size(), l.size() * 25);
}

TEST(PreciseCandidates, EmptyNeighbourhood) {
  auto l = lattice(1, 1, 24, Side::Latent, {1000, 1000});
  const auto r = lattice(5, 5, 24, Side::Rolled);
  EXPECT_TRUE(precise_candidate_pairs(l, r, 2, 24, 24).empty());
}

TEST(PreciseCandidates, HandEnumeratedNine) {
  const auto r = lattice(3, 3, 24, Side::Rolled);
  const auto l = lattice(1, 1, 24, Side::Latent, {24, 24});
  const auto pairs = precise_candidate_pairs(l, r, 1, 24, 24);
  ASSERT_EQ(pairs.size(), 9u);
  for (int k = 0; k < 9; ++k) EXPECT_EQ(pairs[k].second, k);
}

TEST(PreciseCandidates, BoundHolds) {
  Rng rng(8);
  for (int t = 0; t < 20; ++t) {
    std::vector<SamplePoint> l, r;
    for (int i = 0; i < 30; ++i) l.push_back({i, {rng.uniform(0, 300), rng.uniform(0, 300)}, {}, Side::Latent, false});
    for (int i = 0; i < 40; ++i) r.push_back({i, {rng.uniform(0, 300), rng.uniform(0, 300)}, 0.0, Side::Rolled, false});
    const int rad = rng.uniform_int(0, 3);
    EXPECT_LE(precise_candidate_pairs(l, r, rad, 24, 24).size(), l.size() * (2 * rad + 1) * (2 * rad + 1));
  }
}

TEST(PointsTsv, RoundTrip) {
  std::vector<SamplePoint> pts{{0, {12.5, 7}, 33.25, Side::Rolled, false}, {1, {3, 4}, std::nullopt, Side::Latent, false}};
  std::stringstream ss;
  write_points_tsv(ss, pts);
  const auto back = read_points_tsv(ss);
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[0].pos, pts[0].pos);
  EXPECT_EQ(*back[0].direction, 33.25);
  EXPECT_EQ(back[0].side, Side::Rolled);
  EXPECT_FALSE(back[1].direction.has_value());
  EXPECT_EQ(back[1].side, Side::Latent);
}
