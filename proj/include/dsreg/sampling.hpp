#pragma once

#include <cmath>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "dsreg/errors.hpp"
#include "dsreg/geometry.hpp"
#include "dsreg/image.hpp"
#include "dsreg/imaging.hpp"

namespace dsreg {

enum class Side { Latent, Rolled };

inline const char* to_string(Side s) { return s == Side::Latent ? "latent" : "rolled"; }

inline Side parse_side(const std::string& s) {
  if (s == "latent") return Side::Latent;
  if (s == "rolled") return Side::Rolled;
  throw FormatError("unknown side '" + s + "'");
}

/// A grid key point; directed on rolled prints, undirected on latents
/// until a correspondence adjusts it.
struct SamplePoint {
  int id = 0;
  Vec2 pos;
  std::optional<double> direction;
  Side side = Side::Latent;
  bool lowConfidence = false;
};

struct GridConfig {
  int intervalX = 80;
  int intervalY = 80;
  double minForegroundFraction = 0.4;
  int windowSize = 200;

  static GridConfig uniform(int interval, double minFraction = 0.4) {
    return {interval, interval, minFraction, 200};
  }
};

namespace detail {

/// Summed-area table over a mask, for O(1) window counts.
class MaskIntegral {
 public:
  explicit MaskIntegral(const RoiMask& roi) : w_(roi.width()), h_(roi.height()) {
    sums_.assign(static_cast<std::size_t>(w_ + 1) * (h_ + 1), 0);
    for (int y = 0; y < h_; ++y)
      for (int x = 0; x < w_; ++x)
        at(x + 1, y + 1) = at(x, y + 1) + at(x + 1, y) - at(x, y) + (roi.at(x, y) ? 1 : 0);
  }

  /// Foreground count in [x0, x1) x [y0, y1); outside the raster counts as 0.
  long long count(int x0, int y0, int x1, int y1) const {
    x0 = std::clamp(x0, 0, w_);
    x1 = std::clamp(x1, 0, w_);
    y0 = std::clamp(y0, 0, h_);
    y1 = std::clamp(y1, 0, h_);
    if (x1 <= x0 || y1 <= y0) return 0;
    return at(x1, y1) - at(x0, y1) - at(x1, y0) + at(x0, y0);
  }

 private:
  long long& at(int x, int y) { return sums_[static_cast<std::size_t>(y) * (w_ + 1) + x]; }
  long long at(int x, int y) const { return sums_[static_cast<std::size_t>(y) * (w_ + 1) + x]; }
  int w_, h_;
  std::vector<long long> sums_;
};

}  // namespace detail

/// Foreground fraction of the window x window square centered at (x, y),
/// using the same pixel span as extract_patch.
inline double window_foreground_fraction(const RoiMask& roi, int x, int y, int window) {
  detail::MaskIntegral integral(roi);
  const int half = window / 2;
  return static_cast<double>(integral.count(x - half, y - half, x - half + window, y - half + window)) /
         (static_cast<double>(window) * window);
}

/// Lattice points at (i*ix + ix/2, j*iy + iy/2) that are foreground and whose
/// centered window passes the foreground-fraction test. Ids are row-major.
inline std::vector<SamplePoint> grid_sample_points(const RoiMask& roi, const GridConfig& cfg, Side side) {
  if (cfg.intervalX < 1 || cfg.intervalY < 1) throw ContractViolation("GridConfig: intervals must be >= 1");
  if (cfg.windowSize < 1) throw ContractViolation("GridConfig: window size must be >= 1");
  const detail::MaskIntegral integral(roi);
  const int half = cfg.windowSize / 2;
  const double area = static_cast<double>(cfg.windowSize) * cfg.windowSize;
  std::vector<SamplePoint> out;
  int id = 0;
  for (int y = cfg.intervalY / 2; y < roi.height(); y += cfg.intervalY) {
    for (int x = cfg.intervalX / 2; x < roi.width(); x += cfg.intervalX) {
      if (!roi.at(x, y)) continue;
      const double frac =
          integral.count(x - half, y - half, x - half + cfg.windowSize, y - half + cfg.windowSize) / area;
      if (frac < cfg.minForegroundFraction) continue;
      SamplePoint p;
      p.id = id++;
      p.pos = {static_cast<double>(x), static_cast<double>(y)};
      p.side = side;
      out.push_back(p);
    }
  }
  return out;
}

/// Rolled points take the ridge orientation of their block, in [-90, 90).
/// A block without coherent ridges yields 0 degrees and a low-confidence
/// flag. Latent points are returned unchanged.
inline std::vector<SamplePoint> assign_directions(std::vector<SamplePoint> points,
                                                  const OrientationField& field) {
  for (auto& p : points) {
    if (p.side != Side::Rolled) continue;
    const auto [bx, by] = field.block_at(p.pos);
    const std::size_t b = field.index(bx, by);
    if (field.coherence[b] <= 0.0) {
      p.direction = 0.0;
      p.lowConfidence = true;
    } else {
      p.direction = field.orientation(bx, by);
      p.lowConfidence = false;
    }
  }
  return points;
}

/// Pairs each latent point with every rolled point inside its
/// (2r+1)x(2r+1) lattice neighbourhood. Returned as (latent id, rolled id).
inline std::vector<std::pair<int, int>> precise_candidate_pairs(const std::vector<SamplePoint>& latent,
                                                                const std::vector<SamplePoint>& rolled,
                                                                int radius, int intervalX, int intervalY) {
  if (radius < 0 || intervalX < 1 || intervalY < 1)
    throw ContractViolation("precise_candidate_pairs: invalid radius or interval");
  const double limx = radius * intervalX + 0.5;
  const double limy = radius * intervalY + 0.5;
  std::vector<std::pair<int, int>> out;
  for (const auto& l : latent)
    for (const auto& r : rolled)
      if (std::abs(l.pos.x - r.pos.x) <= limx && std::abs(l.pos.y - r.pos.y) <= limy)
        out.emplace_back(l.id, r.id);
  return out;
}

// ---------------------------------------------------------------------------
// TSV: id, x, y, direction (blank if absent), side

inline void write_points_tsv(std::ostream& out, const std::vector<SamplePoint>& pts) {
  out << "id\tx\ty\tdirection\tside\n";
  out.precision(17);
  for (const auto& p : pts) {
    out << p.id << '\t' << p.pos.x << '\t' << p.pos.y << '\t';
    if (p.direction) out << *p.direction;
    out << '\t' << to_string(p.side) << '\n';
  }
}

inline std::vector<SamplePoint> read_points_tsv(std::istream& in) {
  std::vector<SamplePoint> pts;
  std::string line;
  bool header = true;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (header) {
      header = false;
      if (line.rfind("id\t", 0) == 0) continue;
    }
    std::vector<std::string> cols;
    std::stringstream ss(line);
    std::string col;
    while (std::getline(ss, col, '\t')) cols.push_back(col);
    if (cols.size() != 5) throw FormatError("point TSV: expected 5 columns: " + line);
    SamplePoint p;
    try {
      p.id = std::stoi(cols[0]);
      p.pos = {std::stod(cols[1]), std::stod(cols[2])};
      if (!cols[3].empty()) p.direction = std::stod(cols[3]);
    } catch (const std::exception&) {
      throw FormatError("point TSV: malformed row: " + line);
    }
    p.side = parse_side(cols[4]);
    pts.push_back(p);
  }
  return pts;
}

}  // namespace dsreg
