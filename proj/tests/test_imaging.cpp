#include <gtest/gtest.h>

#include <png.h>

#include <cstdio>
#include <fstream>

#include "fixtures.hpp"

using namespace dsreg;

TEST(LoadGrayImage, ZeroPgm) {
  const auto dir = fx::temp_dir("zero_pgm");
  const auto path = (dir / "z.pgm").string();
  {
    std::ofstream f(path, std::ios::binary);
    f << "P5\n4 4\n255\n";
    for (int i = 0; i < 16; ++i) f.put('\0');
  }
  const GrayImage img = load_gray_image(path);
  EXPECT_EQ(img.width(), 4);
  EXPECT_EQ(img.height(), 4);
  for (auto v : img.pixels()) EXPECT_EQ(v, 0);
}

TEST(LoadGrayImage, PngRoundTrip) {
  Rng rng(3);
  GrayImage img(64, 64);
  for (auto& v : img.pixels()) v = static_cast<std::uint8_t>(rng.uniform_int(0, 255));
  const auto dir = fx::temp_dir("png_rt");
  save_png(img, (dir / "a.png").string());
  save_gray_image(img, (dir / "a.pgm").string());
  EXPECT_EQ(load_gray_image((dir / "a.png").string()), img);
  EXPECT_EQ(load_gray_image((dir / "a.pgm").string()), img);
}

TEST(LoadGrayImage, SixteenBitRejected) {
  const auto dir = fx::temp_dir("png16");
  const auto path = (dir / "d.png").string();
  std::FILE* f = std::fopen(path.c_str(), "wb");
  ASSERT_NE(f, nullptr);
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  png_init_io(png, f);
  png_set_IHDR(png, info, 4, 4, 16, PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  std::vector<png_byte> row(8, 0);
  for (int y = 0; y < 4; ++y) png_write_row(png, row.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  std::fclose(f);
  try {
    load_gray_image(path);
    FAIL() << "expected LoadError";
  } catch (const LoadError& e) {
    EXPECT_EQ(e.kind, LoadError::Kind::UnsupportedFormat);
  }
}

TEST(LoadGrayImage, MissingFile) {
  try {
    load_gray_image("/nonexistent/x.png");
    FAIL();
  } catch (const LoadError& e) {
    EXPECT_EQ(e.kind, LoadError::Kind::Unreadable);
  }
}

TEST(ComputeRoi, UniformImageIsBackground) {
  const RoiMask m = compute_roi(GrayImage(50, 40, 128));
  EXPECT_FALSE(m.any());
}

namespace {

GrayImage dark_disk_image(int n, Vec2 c, double r) {
  GrayImage img(n, n, 230);
  const RoiMask d = fx::disk(n, n, c, r);
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x)
      if (d.at(x, y)) img.at(x, y) = 40;
  return img;
}

}  // namespace

TEST(ComputeRoi, DiskCoverage) {
  const int n = 160;
  const Vec2 c{80, 76};
  const GrayImage img = dark_disk_image(n, c, 50);
  const RoiMask m = compute_roi(img);
  const RoiMask d = fx::disk(n, n, c, 50), dil = fx::disk(n, n, c, 60);
  std::size_t inside = 0, outside = 0;
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x) {
      if (d.at(x, y) && m.at(x, y)) ++inside;
      if (m.at(x, y) && !dil.at(x, y)) ++outside;
    }
  EXPECT_GE(static_cast<double>(inside), 0.95 * d.count());
  EXPECT_EQ(outside, 0u);
}

TEST(ComputeRoi, SpecklesRemoved) {
  const int n = 160;
  GrayImage img = dark_disk_image(n, {70, 80}, 40);
  for (Vec2 s : {Vec2{140, 20}, Vec2{20, 145}, Vec2{145, 140}})
    for (int dy = -1; dy <= 1; ++dy)
      for (int dx = -1; dx <= 1; ++dx) img.at(static_cast<int>(s.x) + dx, static_cast<int>(s.y) + dy) = 40;
  const RoiMask m = compute_roi(img);
  EXPECT_FALSE(m.at(140, 20));
  EXPECT_FALSE(m.at(20, 145));
  EXPECT_FALSE(m.at(145, 140));
  EXPECT_TRUE(m.at(70, 80));
}

TEST(ComputeRoi, IdempotentOnOwnMask) {
  const GrayImage img = dark_disk_image(140, {70, 70}, 45);
  const RoiMask m = compute_roi(img);
  GrayImage rendered(140, 140, 255);
  for (int y = 0; y < 140; ++y)
    for (int x = 0; x < 140; ++x)
      if (m.at(x, y)) rendered.at(x, y) = 0;
  EXPECT_EQ(compute_roi(rendered), m);
}

namespace {

void expect_field_angle(double deg) {
  const GrayImage img = fx::ridges(128, 128, deg);
  const OrientationField f = estimate_orientation_field(img, RoiMask(128, 128, true));
  int checked = 0;
  for (int by = 1; by < f.rows - 1; ++by)
    for (int bx = 1; bx < f.cols - 1; ++bx) {
      if (f.coherence[f.index(bx, by)] <= 0.5) continue;
      EXPECT_LE(angle_distance(2 * f.orientation(bx, by), 2 * deg) / 2, 3.0);
      ++checked;
    }
  EXPECT_GT(checked, 100);
}

}  // namespace

TEST(OrientationField, VerticalRidges) { expect_field_angle(90.0); }
TEST(OrientationField, ThirtyDegreeRidges) { expect_field_angle(30.0); }

TEST(OrientationField, ConstantImageHasNoCoherence) {
  const OrientationField f = estimate_orientation_field(GrayImage(64, 64, 90), RoiMask(64, 64, true));
  for (double c : f.coherence) EXPECT_EQ(c, 0.0);
}

TEST(OrientationField, PiPeriodicEncoding) {
  for (double o : {-80.0, -12.5, 0.0, 33.0, 89.0}) {
    const Vec2 a = orientation_vector(o), b = orientation_vector(o + 180.0);
    EXPECT_EQ(a.x, b.x);
    EXPECT_EQ(a.y, b.y);
  }
}

TEST(ExtractPatch, ExactCrop) {
  Rng rng(11);
  GrayImage img(300, 300);
  for (auto& v : img.pixels()) v = static_cast<std::uint8_t>(rng.uniform_int(0, 255));
  const RoiMask roi(300, 300, true);
  const Patch p = extract_patch(img, roi, {{150, 140}, 0.0, 200});
  ASSERT_EQ(p.image.width(), 200);
  ASSERT_EQ(p.image.height(), 200);
  for (int j = 0; j < 200; ++j)
    for (int i = 0; i < 200; ++i) ASSERT_EQ(p.image.at(i, j), img.at(50 + i, 40 + j));
  EXPECT_EQ(p.mask.count(), 200u * 200u);
}

TEST(ExtractPatch, DoubleRotation) {
  const int n = 260;
  GrayImage img = fx::ridges(n, n, 20.0, 11.0);
  // Rotated copy: rot(x, y) = img at the point turned by -90 degrees about the center.
  GrayImage rot(n, n, 255);
  const Vec2 c{(n - 1) / 2.0, (n - 1) / 2.0};
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x) {
      const Vec2 src = rotate(Vec2{double(x), double(y)} - c, -90.0) + c;
      double v;
      if (sample_bilinear(img, src, v)) rot.at(x, y) = to_u8(v);
    }
  const RoiMask full(n, n, true);
  const Patch a = extract_patch(img, full, {c, 0.0, 120});
  const Patch b = extract_patch(rot, full, {c, 90.0, 120});
  int maxDiff = 0;
  for (int j = 10; j < 110; ++j)
    for (int i = 10; i < 110; ++i) maxDiff = std::max(maxDiff, std::abs(int(a.image.at(i, j)) - int(b.image.at(i, j))));
  EXPECT_LE(maxDiff, 3);
}

TEST(ExtractPatch, TranslationEquivariant) {
  Rng rng(5);
  GrayImage img(200, 200);
  for (auto& v : img.pixels()) v = static_cast<std::uint8_t>(rng.uniform_int(0, 255));
  GrayImage shifted(200, 200, 255);
  for (int y = 0; y < 200; ++y)
    for (int x = 0; x < 200; ++x)
      if (x >= 7 && y >= 4) shifted.at(x, y) = img.at(x - 7, y - 4);
  const RoiMask full(200, 200, true);
  const Patch a = extract_patch(img, full, {{90, 95}, 25.0, 64});
  const Patch b = extract_patch(shifted, full, {{97, 99}, 25.0, 64});
  EXPECT_EQ(a.image, b.image);
}

TEST(ExtractPatch, OutsideIsWhiteBackground) {
  const Patch p = extract_patch(GrayImage(50, 50, 0), RoiMask(50, 50, true), {{0, 0}, 0.0, 40});
  EXPECT_EQ(p.image.at(0, 0), 255);
  EXPECT_FALSE(p.mask.at(0, 0));
  EXPECT_TRUE(p.mask.at(30, 30));
}
