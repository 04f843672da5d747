#pragma once

#include <cmath>
#include <filesystem>
#include <string>

#include "dsreg/dsreg.hpp"

namespace fx {

using namespace dsreg;

/// Sinusoidal ridges running along `deg`; dark ridges near 30, valleys near 230.
inline GrayImage ridges(int w, int h, double deg, double period = 9.0, double phase = 0.0) {
  GrayImage img(w, h);
  const double nx = -std::sin(deg2rad(deg)), ny = std::cos(deg2rad(deg));
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      img.at(x, y) = to_u8(130.0 + 100.0 * std::cos(2 * kPi * (x * nx + y * ny) / period + phase));
  return img;
}

inline RoiMask disk(int w, int h, Vec2 c, double r) {
  RoiMask m(w, h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) m.set(x, y, (x - c.x) * (x - c.x) + (y - c.y) * (y - c.y) <= r * r);
  return m;
}

inline std::filesystem::path temp_dir(const std::string& name) {
  const auto p = std::filesystem::temp_directory_path() / ("dsreg_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

inline double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace fx
