#include <gtest/gtest.h>

#include <sstream>

#include "fixtures.hpp"

using namespace dsreg;

namespace {

const synth::MasterPrint& master() {
  static const synth::MasterPrint m = synth::generate_master(33, {360});
  return m;
}

RoiMask full_roi() { return RoiMask(360, 360, true); }

double l2(const Descriptor& d) { return std::sqrt(dot(d, d)); }

Descriptor random_unit(Rng& rng) {
  Descriptor d{};
  for (auto& v : d) v = static_cast<float>(rng.normal());
  const double n = l2(d);
  for (auto& v : d) v = static_cast<float>(v / n);
  return d;
}

}  // namespace

TEST(DescribePatch, UnitNorm) {
  const auto& m = master();
  for (double dir : {0.0, 35.0, -120.0}) {
    const Descriptor d = describe_patch(extract_patch(m.image, full_roi(), {{180, 180}, dir, 200}));
    EXPECT_NEAR(l2(d), 1.0, 1e-6);
  }
}

TEST(DescribePatch, WrongSizeRejected) {
  const auto& m = master();
  EXPECT_THROW(describe_patch(extract_patch(m.image, full_roi(), {{180, 180}, 0.0, 100})), ContractViolation);
}

TEST(DescribePatch, JointRotation) {
  const auto& m = master();
  const Vec2 P{180, 180};
  const auto rotated = apply_transform(RigidTransform2D{0, 0, 10.0, P}, m.image, full_roi());
  for (double dir : {0.0, 40.0, -70.0}) {
    const Descriptor a = describe_patch(extract_patch(m.image, full_roi(), {P, dir, 200}));
    const Descriptor b = describe_patch(extract_patch(rotated.image, rotated.mask, {P, dir + 10.0, 200}));
    EXPECT_GE(dot(a, b), 0.95) << "direction " << dir;
  }
}

TEST(DescribePatch, BackgroundFallback) {
  const Patch p{GrayImage(200, 200, 255), RoiMask(200, 200)};
  const Descriptor d = describe_patch(p);
  EXPECT_EQ(d[0], 1.0f);
  for (int i = 1; i < kDescriptorLength; ++i) ASSERT_EQ(d[i], 0.0f);
}

TEST(DescribePatch, BitIdentical) {
  const auto& m = master();
  const Patch p = extract_patch(m.image, full_roi(), {{170, 190}, 12.0, 200});
  const Descriptor a = describe_patch(p), b = describe_patch(Patch{p.image, p.mask});
  EXPECT_EQ(a, b);
}

TEST(DescriptorField, MatchesPatchPath) {
  // The whole-image field and the patch route see the same ridges.
  const auto& m = master();
  const DescriptorField field(m.image, full_roi());
  const Vec2 P{180, 180};
  const Descriptor a = field.describe(P, 25.0);
  const Descriptor b = describe_patch(extract_patch(m.image, full_roi(), {P, 25.0, 200}));
  EXPECT_GE(dot(a, b), 0.95);
}

TEST(DescriptorField, HalfTurnPermutesCells) {
  const auto& m = master();
  const DescriptorField field(m.image, full_roi());
  const Descriptor a = field.describe({175, 185}, 30.0);
  const Descriptor b = field.describe({175, 185}, -150.0);
  EXPECT_GE(dot(rotate_descriptor_180(a), b), 0.99);
}

TEST(Similarity, Identity) {
  Rng rng(1);
  const Descriptor d = random_unit(rng);
  EXPECT_EQ(similarity(d, d), 1.0);
}

TEST(Similarity, Orthogonal) {
  Descriptor a{}, b{};
  a[0] = 1.0f;
  b[1] = 1.0f;
  EXPECT_EQ(similarity(a, b), 0.5);
}

TEST(Similarity, Recomputation) {
  Rng rng(2);
  for (int t = 0; t < 20; ++t) {
    const Descriptor a = random_unit(rng), b = random_unit(rng);
    double s = 0.0;
    for (int i = 0; i < kDescriptorLength; ++i) s += static_cast<double>(a[i]) * b[i];
    EXPECT_NEAR(similarity(a, b), (1.0 + s) / 2.0, 1e-9);
    EXPECT_EQ(similarity(a, b), similarity(b, a));
    EXPECT_GE(similarity(a, b), 0.0);
    EXPECT_LE(similarity(a, b), 1.0);
  }
}

namespace {

OrientationField flat_field(double deg) {
  OrientationField f;
  f.cols = 3;
  f.rows = 2;
  const Vec2 v = orientation_vector(deg);
  f.cos2.assign(6, v.x);
  f.sin2.assign(6, v.y);
  f.coherence.assign(6, 1.0);
  return f;
}

}  // namespace

TEST(DescriptorLosses, PositiveIdenticalIsZero) {
  Rng rng(3);
  const Descriptor d = random_unit(rng);
  const std::vector<DescriptorPair> pairs{{d, d, true}};
  EXPECT_EQ(contrastive_loss(pairs), 0.0);
}

TEST(DescriptorLosses, NegativeBeyondMarginIsZero) {
  Descriptor a{}, b{};
  a[0] = 1.0f;
  b[0] = -1.0f;  // distance 2
  const std::vector<DescriptorPair> pairs{{a, b, false}};
  EXPECT_EQ(contrastive_loss(pairs, 1.0), 0.0);
}

TEST(DescriptorLosses, LambdaAndRecomputation) {
  EXPECT_EQ(kLambdaSimi, 0.5);
  Rng rng(4);
  std::vector<Descriptor> ds;
  for (int i = 0; i < 6; ++i) ds.push_back(random_unit(rng));
  const std::vector<DescriptorPair> pairs{{ds[0], ds[1], true}, {ds[2], ds[3], false}, {ds[4], ds[5], false}};
  const auto g1 = flat_field(10), p1 = flat_field(40), g2 = flat_field(-30), p2 = flat_field(-25);
  const auto l = descriptor_losses(pairs, 1.5, g1, p1, g2, p2);
  double expect = 0.0;
  for (const auto& p : pairs) {
    double s = 0.0;
    for (int i = 0; i < kDescriptorLength; ++i) s += (double(p.a[i]) - p.b[i]) * (double(p.a[i]) - p.b[i]);
    const double dist = std::sqrt(s);
    expect += p.positive ? s : std::pow(std::max(0.0, 1.5 - dist), 2);
  }
  expect /= 3.0;
  EXPECT_NEAR(l.lContrastive, expect, 1e-9);
  EXPECT_EQ(l.lSimi - l.lContrastive, 0.5 * (l.lOri1 + l.lOri2));
}

TEST(Template, EmptyRoiGivesEmptyBank) {
  const GrayImage img(240, 240, 200);
  const RoiMask roi(240, 240);
  const auto bank = build_template(img, roi, estimate_orientation_field(img, roi), Side::Latent);
  EXPECT_TRUE(bank.entries.empty());
  EXPECT_THROW(query_template(bank, {10, 10}, 0.0), LookupError);
}

TEST(Template, LatentEntryCountAndDirections) {
  const auto& m = master();
  const RoiMask roi = fx::disk(360, 360, {180, 180}, 60);
  TemplateConfig cfg;
  cfg.latentGrid = {32, 32, 0.0, 200};
  const auto bank = build_template(m.image, roi, estimate_orientation_field(m.image, roi), Side::Latent, cfg);
  const auto pts = grid_sample_points(roi, cfg.latentGrid, Side::Latent);
  ASSERT_FALSE(pts.empty());
  EXPECT_EQ(bank.entries.size(), 19 * pts.size());
  const auto dirs = latent_template_directions();
  ASSERT_EQ(dirs.size(), 19u);
  for (int i = 0; i < 19; ++i) EXPECT_NEAR(dirs[i], -90.0 + 10.0 * i, 1e-12);
}

namespace {

const TemplateBank& small_latent_bank() {
  static const TemplateBank bank = [] {
    const auto& m = master();
    const RoiMask roi = fx::disk(360, 360, {180, 180}, 40);
    return build_template(m.image, roi, estimate_orientation_field(m.image, roi), Side::Latent);
  }();
  return bank;
}

}  // namespace

TEST(Template, ExactHit) {
  const auto& bank = small_latent_bank();
  for (std::size_t k = 0; k < bank.entries.size(); k += 37) {
    const auto& e = bank.entries[k];
    const auto m = query_template(bank, e.pos, e.direction);
    EXPECT_EQ(m.pos, e.pos);
    EXPECT_EQ(m.descriptor, e.descriptor);
  }
}

TEST(Template, MidpointWithinEightPixels) {
  const auto& bank = small_latent_bank();
  const Vec2 q = bank.entries.front().pos + Vec2{8, 8};
  const auto m = query_template(bank, q, 0.0);
  EXPECT_LE(std::abs(m.pos.x - q.x), 8.0);
  EXPECT_LE(std::abs(m.pos.y - q.y), 8.0);
}

TEST(Template, RandomQueriesBounded) {
  const auto& bank = small_latent_bank();
  double x0 = 1e9, x1 = -1e9, y0 = 1e9, y1 = -1e9;
  for (const auto& e : bank.entries) {
    x0 = std::min(x0, e.pos.x);
    x1 = std::max(x1, e.pos.x);
    y0 = std::min(y0, e.pos.y);
    y1 = std::max(y1, e.pos.y);
  }
  Rng rng(6);
  double worstDir = 0.0;
  int tried = 0;
  while (tried < 1000) {
    const Vec2 q{rng.uniform(x0, x1), rng.uniform(y0, y1)};
    // keep queries whose four surrounding lattice nodes are all in the bank
    const double gx = std::floor((q.x - x0) / 16) * 16 + x0, gy = std::floor((q.y - y0) / 16) * 16 + y0;
    bool inside = true;
    for (Vec2 c : {Vec2{gx, gy}, Vec2{gx + 16, gy}, Vec2{gx, gy + 16}, Vec2{gx + 16, gy + 16}})
      inside = inside && std::any_of(bank.entries.begin(), bank.entries.end(), [&](const auto& e) { return e.pos == c; });
    if (!inside) continue;
    ++tried;
    const double dir = rng.uniform(-180, 180);
    const auto m = query_template(bank, q, dir);
    EXPECT_LE(std::abs(m.pos.x - q.x), 8.0);
    EXPECT_LE(std::abs(m.pos.y - q.y), 8.0);
    worstDir = std::max(worstDir, angle_distance(m.direction, dir));
  }
  EXPECT_LE(worstDir, 5.0 + 1e-9);
}

TEST(Template, BinaryRoundTrip) {
  const auto& bank = small_latent_bank();
  std::stringstream ss;
  write_template_bank(bank, ss);
  const TemplateBank back = read_template_bank(ss);
  EXPECT_EQ(back.side, bank.side);
  EXPECT_EQ(back.interval, bank.interval);
  ASSERT_EQ(back.entries.size(), bank.entries.size());
  for (std::size_t i = 0; i < bank.entries.size(); ++i) {
    EXPECT_EQ(back.entries[i].pos, bank.entries[i].pos);
    EXPECT_EQ(back.entries[i].direction, bank.entries[i].direction);
    EXPECT_EQ(back.entries[i].descriptor, bank.entries[i].descriptor);
  }
}

TEST(Template, CorruptBankRejected) {
  std::stringstream ss("XXXX garbage");
  EXPECT_THROW(read_template_bank(ss), FormatError);
}
