#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <span>
#include <tuple>
#include <utility>
#include <vector>

#include <json.hpp>

#include "dsreg/errors.hpp"
#include "dsreg/geometry.hpp"
#include "dsreg/global_match.hpp"
#include "dsreg/image.hpp"
#include "dsreg/imaging.hpp"

namespace dsreg {

/// p' = R(da) (p - pivot) + pivot + (dx, dy)
struct RigidTransform2D {
  double dx = 0.0;
  double dy = 0.0;
  double da = 0.0;
  Vec2 pivot;

  Vec2 apply(Vec2 p) const { return rotate(p - pivot, da) + pivot + Vec2{dx, dy}; }
  Vec2 inverse(Vec2 q) const { return rotate(q - pivot - Vec2{dx, dy}, -da) + pivot; }
  double apply_direction(Vec2, double dir) const { return wrap180(dir + da); }

  RigidTransform2D inverted() const {
    // q = R(p - c) + c + d  <=>  p = R^-1 (q - c') + c' - d  with c' = c + d
    return {-dx, -dy, wrap180(-da), pivot + Vec2{dx, dy}};
  }
};

/// second ∘ first, pivoted at first's pivot.
inline RigidTransform2D compose(const RigidTransform2D& second, const RigidTransform2D& first) {
  const Vec2 c1 = first.pivot;
  const Vec2 t = rotate(c1 + Vec2{first.dx, first.dy} - second.pivot, second.da) + second.pivot +
                 Vec2{second.dx, second.dy} - c1;
  return {t.x, t.y, wrap180(first.da + second.da), c1};
}

/// Rigid average of a correspondence set: circular-mean rotation, pivot at
/// the adjusted latent centroid, mean residual translation.
inline RigidTransform2D average_rigid(const CorrespondenceSet& set) {
  if (set.selected.empty()) throw NoTransformError("average_rigid: empty correspondence set");
  // Canonical order so the floating-point sums do not depend on input order.
  std::vector<const CandidateCorrespondence*> order;
  for (const auto& c : set.selected) order.push_back(&c);
  std::sort(order.begin(), order.end(), [](const CandidateCorrespondence* a, const CandidateCorrespondence* b) {
    const auto key = [](const CandidateCorrespondence* c) {
      return std::make_tuple(c->latentPoint.pos.x, c->latentPoint.pos.y, c->rolledPoint.pos.x, c->rolledPoint.pos.y,
                             c->latentPoint.direction.value_or(0.0), c->rolledPoint.direction.value_or(0.0));
    };
    return key(a) < key(b);
  });
  std::vector<double> rots;
  Vec2 pivot;
  for (const auto* pc : order) {
    const auto& c = *pc;
    rots.push_back(c.rotation());
    pivot += c.latentPoint.pos;
  }
  pivot = pivot / static_cast<double>(set.selected.size());
  RigidTransform2D t;
  t.da = circular_mean(rots);
  t.pivot = pivot;
  Vec2 d;
  for (const auto* c : order) d += c->rolledPoint.pos - (rotate(c->latentPoint.pos - pivot, t.da) + pivot);
  d = d / static_cast<double>(set.selected.size());
  t.dx = d.x;
  t.dy = d.y;
  return t;
}

// ---------------------------------------------------------------------------
// Thin-plate spline

inline double tps_kernel(double r2) { return r2 > 0.0 ? r2 * std::log(r2) : 0.0; }

/// f(p) = A [1, x, y]^T + sum_i w_i U(|p - c_i|), U(r) = r^2 log r^2.
struct TpsTransform {
  std::vector<Vec2> controls;
  std::vector<Vec2> weights;
  std::array<std::array<double, 3>, 2> affine{{{0.0, 1.0, 0.0}, {0.0, 0.0, 1.0}}};
  double lambda = 0.0;

  Vec2 apply(Vec2 p) const {
    double x = affine[0][0] + affine[0][1] * p.x + affine[0][2] * p.y;
    double y = affine[1][0] + affine[1][1] * p.x + affine[1][2] * p.y;
    for (std::size_t i = 0; i < controls.size(); ++i) {
      const Vec2 d = p - controls[i];
      const double u = tps_kernel(dot(d, d));
      x += weights[i].x * u;
      y += weights[i].y * u;
    }
    return {x, y};
  }

  /// Jacobian rows (d f_x / dx, d f_x / dy), (d f_y / dx, d f_y / dy).
  std::array<double, 4> jacobian(Vec2 p) const {
    std::array<double, 4> j{affine[0][1], affine[0][2], affine[1][1], affine[1][2]};
    for (std::size_t i = 0; i < controls.size(); ++i) {
      const Vec2 d = p - controls[i];
      const double r2 = dot(d, d);
      if (r2 <= 0.0) continue;
      const double g = 2.0 * (std::log(r2) + 1.0);
      j[0] += weights[i].x * g * d.x;
      j[1] += weights[i].x * g * d.y;
      j[2] += weights[i].y * g * d.x;
      j[3] += weights[i].y * g * d.y;
    }
    return j;
  }

  /// Newton inversion seeded by the inverse of the affine part.
  Vec2 inverse(Vec2 q) const {
    const double a = affine[0][1], b = affine[0][2], c = affine[1][1], d = affine[1][2];
    const double det = a * d - b * c;
    Vec2 p = q;
    if (std::abs(det) > 1e-12) {
      const double rx = q.x - affine[0][0], ry = q.y - affine[1][0];
      p = {(d * rx - b * ry) / det, (-c * rx + a * ry) / det};
    }
    for (int it = 0; it < 50; ++it) {
      const Vec2 r = apply(p) - q;
      if (dot(r, r) < 1e-20) break;
      const auto j = jacobian(p);
      const double jd = j[0] * j[3] - j[1] * j[2];
      if (std::abs(jd) < 1e-12) break;
      const Vec2 step{(j[3] * r.x - j[1] * r.y) / jd, (-j[2] * r.x + j[0] * r.y) / jd};
      p -= step;
      if (dot(step, step) < 1e-24) break;
    }
    return p;
  }

  /// Direction carried through the local linearisation of the warp.
  double apply_direction(Vec2 p, double dir) const {
    const auto j = jacobian(p);
    const double c = std::cos(deg2rad(dir)), s = std::sin(deg2rad(dir));
    return wrap180(rad2deg(std::atan2(j[2] * c + j[3] * s, j[0] * c + j[1] * s)));
  }

  /// sum over both output coordinates of w^T K w.
  double bending_energy() const {
    double e = 0.0;
    for (std::size_t i = 0; i < controls.size(); ++i)
      for (std::size_t k = 0; k < controls.size(); ++k) {
        const Vec2 d = controls[i] - controls[k];
        e += tps_kernel(dot(d, d)) * dot(weights[i], weights[k]);
      }
    return e;
  }
};

struct LandmarkPair {
  Vec2 source;
  Vec2 target;
};

/// Fits a TPS from source to target landmarks. The system is solved in
/// centred, scaled source coordinates and converted back. A near-singular
/// exact system falls back to a 1e-6 ridge term.
inline TpsTransform fit_tps(std::span<const LandmarkPair> pairs, double lambda = 0.0) {
  const int n = static_cast<int>(pairs.size());
  if (n < 3) throw DegenerateConfiguration("fit_tps: at least 3 landmarks are required");
  if (lambda < 0.0) throw ContractViolation("fit_tps: lambda must be >= 0");
  Vec2 mean;
  for (const auto& p : pairs) mean += p.source;
  mean = mean / n;
  Eigen::MatrixXd centered(n, 2);
  double ss = 0.0;
  for (int i = 0; i < n; ++i) {
    centered(i, 0) = pairs[i].source.x - mean.x;
    centered(i, 1) = pairs[i].source.y - mean.y;
    ss += centered.row(i).squaredNorm();
  }
  const Eigen::JacobiSVD<Eigen::MatrixXd> svd(centered);
  const auto sv = svd.singularValues();
  if (!(sv(0) > 0.0) || sv(1) <= 1e-6 * sv(0)) throw DegenerateConfiguration("fit_tps: collinear landmarks");
  const double scale = std::sqrt(ss / n);

  std::vector<Vec2> src(n);
  for (int i = 0; i < n; ++i) src[i] = (pairs[i].source - mean) / scale;

  auto solve = [&](double lam, Eigen::MatrixXd& sol) {
    Eigen::MatrixXd a = Eigen::MatrixXd::Zero(n + 3, n + 3);
    Eigen::MatrixXd b = Eigen::MatrixXd::Zero(n + 3, 2);
    for (int i = 0; i < n; ++i) {
      for (int k = 0; k < n; ++k) {
        const Vec2 d = src[i] - src[k];
        a(i, k) = tps_kernel(dot(d, d));
      }
      a(i, i) += lam;
      a(i, n) = a(n, i) = 1.0;
      a(i, n + 1) = a(n + 1, i) = src[i].x;
      a(i, n + 2) = a(n + 2, i) = src[i].y;
      b(i, 0) = pairs[i].target.x;
      b(i, 1) = pairs[i].target.y;
    }
    const Eigen::FullPivLU<Eigen::MatrixXd> lu(a);
    if (!lu.isInvertible() || lu.rcond() < 1e-13) return false;
    sol = lu.solve(b);
    return ((a * sol - b).cwiseAbs().maxCoeff() < 1e-9 * std::max(1.0, b.cwiseAbs().maxCoeff()));
  };
  Eigen::MatrixXd sol;
  double used = lambda;
  if (!solve(lambda, sol)) {
    used = std::max(lambda, 1e-6);
    if (!solve(used, sol)) throw DegenerateConfiguration("fit_tps: singular landmark system");
  }

  // Back to raw coordinates: U(r/s) = U(r)/s^2 - log(s^2) r^2 / s^2, and the
  // r^2 part reduces to a constant under the side conditions.
  TpsTransform t;
  t.lambda = used;
  const double s2 = scale * scale;
  double constant[2] = {0.0, 0.0};
  for (int i = 0; i < n; ++i) {
    t.controls.push_back(pairs[i].source);
    t.weights.push_back({sol(i, 0) / s2, sol(i, 1) / s2});
    const double c2 = dot(pairs[i].source, pairs[i].source);
    constant[0] -= std::log(s2) / s2 * sol(i, 0) * c2;
    constant[1] -= std::log(s2) / s2 * sol(i, 1) * c2;
  }
  for (int k = 0; k < 2; ++k) {
    const double a0 = sol(n, k), ax = sol(n + 1, k) / scale, ay = sol(n + 2, k) / scale;
    t.affine[k] = {a0 - ax * mean.x - ay * mean.y + constant[k], ax, ay};
  }
  return t;
}

/// Side conditions: sum w = 0 and sum w c = 0, largest violation.
inline double tps_side_condition_error(const TpsTransform& t) {
  Vec2 s0, sx, sy;
  for (std::size_t i = 0; i < t.controls.size(); ++i) {
    s0 += t.weights[i];
    sx += t.weights[i] * t.controls[i].x;
    sy += t.weights[i] * t.controls[i].y;
  }
  return std::max({std::abs(s0.x), std::abs(s0.y), std::abs(sx.x), std::abs(sx.y), std::abs(sy.x), std::abs(sy.y)});
}

// ---------------------------------------------------------------------------
// Resampling

struct WarpedImage {
  GrayImage image;
  RoiMask mask;
};

/// Inverse-mapped resampling into a width x height target frame: bilinear
/// intensity, nearest mask, 255 / background outside the source.
template <class Transform>
WarpedImage apply_transform(const Transform& t, const GrayImage& img, const RoiMask& roi, int width, int height) {
  if (!same_shape(img, roi)) throw ContractViolation("apply_transform: image and ROI dimensions differ");
  WarpedImage out{GrayImage(width, height, 255), RoiMask(width, height)};
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) {
      const Vec2 p = t.inverse({static_cast<double>(x), static_cast<double>(y)});
      double v;
      if (!sample_bilinear(img, p, v)) continue;
      out.image.at(x, y) = to_u8(v);
      out.mask.set(x, y, sample_nearest(roi, p));
    }
  return out;
}

template <class Transform>
WarpedImage apply_transform(const Transform& t, const GrayImage& img, const RoiMask& roi) {
  return apply_transform(t, img, roi, img.width(), img.height());
}

// ---------------------------------------------------------------------------
// JSON

inline nlohmann::json to_json(const RigidTransform2D& t) {
  return {{"type", "rigid"}, {"dx", t.dx}, {"dy", t.dy}, {"da", t.da}, {"pivot", {t.pivot.x, t.pivot.y}}};
}

inline nlohmann::json to_json(const TpsTransform& t) {
  nlohmann::json controls = nlohmann::json::array(), weights = nlohmann::json::array();
  for (const auto& c : t.controls) controls.push_back({c.x, c.y});
  for (const auto& w : t.weights) weights.push_back({w.x, w.y});
  return {{"type", "tps"},
          {"controls", controls},
          {"weights", weights},
          {"affine", {{t.affine[0][0], t.affine[0][1], t.affine[0][2]}, {t.affine[1][0], t.affine[1][1], t.affine[1][2]}}},
          {"lambda", t.lambda}};
}

inline RigidTransform2D rigid_from_json(const nlohmann::json& j) {
  try {
    if (j.at("type") != "rigid") throw FormatError("transform: expected type rigid");
    return {j.at("dx").get<double>(), j.at("dy").get<double>(), j.at("da").get<double>(),
            {j.at("pivot").at(0).get<double>(), j.at("pivot").at(1).get<double>()}};
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("transform: ") + e.what());
  }
}

inline TpsTransform tps_from_json(const nlohmann::json& j) {
  try {
    if (j.at("type") != "tps") throw FormatError("transform: expected type tps");
    TpsTransform t;
    for (const auto& c : j.at("controls")) t.controls.push_back({c.at(0).get<double>(), c.at(1).get<double>()});
    for (const auto& w : j.at("weights")) t.weights.push_back({w.at(0).get<double>(), w.at(1).get<double>()});
    if (t.controls.size() != t.weights.size()) throw FormatError("transform: controls and weights differ in length");
    for (int r = 0; r < 2; ++r)
      for (int c = 0; c < 3; ++c) t.affine[r][c] = j.at("affine").at(r).at(c).get<double>();
    t.lambda = j.at("lambda").get<double>();
    return t;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("transform: ") + e.what());
  }
}

}  // namespace dsreg
