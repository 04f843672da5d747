#pragma once

#include <cmath>
#include <numbers>

namespace dsreg {

// Image coordinates: x to the right, y down. A positive angle turns +x
// toward +y, i.e. clockwise on screen. Angles are in degrees everywhere.

inline constexpr double kPi = std::numbers::pi;

struct Vec2 {
  double x = 0.0;
  double y = 0.0;

  constexpr Vec2 operator+(Vec2 o) const { return {x + o.x, y + o.y}; }
  constexpr Vec2 operator-(Vec2 o) const { return {x - o.x, y - o.y}; }
  constexpr Vec2 operator-() const { return {-x, -y}; }
  constexpr Vec2 operator*(double s) const { return {x * s, y * s}; }
  constexpr Vec2 operator/(double s) const { return {x / s, y / s}; }
  constexpr Vec2& operator+=(Vec2 o) { x += o.x; y += o.y; return *this; }
  constexpr Vec2& operator-=(Vec2 o) { x -= o.x; y -= o.y; return *this; }
  constexpr bool operator==(const Vec2&) const = default;
};

constexpr double dot(Vec2 a, Vec2 b) { return a.x * b.x + a.y * b.y; }
inline double norm(Vec2 a) { return std::hypot(a.x, a.y); }
inline double distance(Vec2 a, Vec2 b) { return norm(a - b); }

constexpr double deg2rad(double deg) { return deg * kPi / 180.0; }
constexpr double rad2deg(double rad) { return rad * 180.0 / kPi; }

/// Wraps an angle into [-180, 180).
inline double wrap180(double deg) {
  double r = std::fmod(deg + 180.0, 360.0);
  if (r < 0.0) r += 360.0;
  r -= 180.0;
  return r >= 180.0 ? r - 360.0 : r;
}

/// Wraps an orientation (pi-periodic) into [-90, 90).
inline double wrap90(double deg) {
  double r = std::fmod(deg + 90.0, 180.0);
  if (r < 0.0) r += 180.0;
  r -= 90.0;
  return r >= 90.0 ? r - 180.0 : r;
}

/// Absolute wrapped difference in [0, 180].
inline double angle_distance(double a, double b) {
  return std::abs(wrap180(a - b));
}

inline Vec2 rotate(Vec2 v, double deg) {
  const double c = std::cos(deg2rad(deg));
  const double s = std::sin(deg2rad(deg));
  return {c * v.x - s * v.y, s * v.x + c * v.y};
}

/// Circular mean of angles in degrees; returns 0 for a balanced set.
template <class Range>
double circular_mean(const Range& angles) {
  double c = 0.0, s = 0.0;
  for (double a : angles) {
    c += std::cos(deg2rad(a));
    s += std::sin(deg2rad(a));
  }
  if (std::abs(c) < 1e-12 && std::abs(s) < 1e-12) return 0.0;
  return wrap180(rad2deg(std::atan2(s, c)));
}

}  // namespace dsreg
