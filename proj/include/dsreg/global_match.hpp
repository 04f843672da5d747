#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>
#include <vector>

#include "dsreg/align.hpp"
#include "dsreg/errors.hpp"
#include "dsreg/geometry.hpp"
#include "dsreg/sampling.hpp"

namespace dsreg {

/// Similarity and alignment of one compared (latent, rolled) point pair.
/// Indices refer to positions in the latent and rolled point lists.
struct PairScore {
  int latent = 0;
  int rolled = 0;
  double similarity = 0.0;
  AlignmentEstimate alignment;
};

struct CandidateCorrespondence {
  SamplePoint latentPoint;  // adjusted point C
  SamplePoint rolledPoint;
  double rawSimilarity = 0.0;
  double normSimilarity = 0.0;
  AlignmentEstimate alignment;

  /// Rotation implied by the pair: rolled direction minus adjusted latent direction.
  double rotation() const {
    return wrap180(rolledPoint.direction.value_or(0.0) - latentPoint.direction.value_or(0.0));
  }
};

struct CorrespondenceSet {
  std::vector<CandidateCorrespondence> selected;
  double totalScore = 0.0;
};

/// Threshold, global min-max normalisation and mutual top-n filtering.
/// Pairs whose alignment had insufficient overlap carry no geometry and are
/// dropped together with those under tau.
inline std::vector<CandidateCorrespondence> select_candidates(const std::vector<SamplePoint>& latent,
                                                              const std::vector<SamplePoint>& rolled,
                                                              const std::vector<PairScore>& scores, double tau,
                                                              int n) {
  if (n < 1) throw ContractViolation("select_candidates: n must be >= 1");
  std::vector<PairScore> kept;
  for (const auto& s : scores) {
    if (s.latent < 0 || s.rolled < 0 || s.latent >= static_cast<int>(latent.size()) ||
        s.rolled >= static_cast<int>(rolled.size()))
      throw ContractViolation("select_candidates: pair index out of range");
    if (s.similarity < tau || s.alignment.insufficientOverlap) continue;
    kept.push_back(s);
  }
  if (kept.empty()) return {};

  double lo = kept.front().similarity, hi = lo;
  for (const auto& s : kept) {
    lo = std::min(lo, s.similarity);
    hi = std::max(hi, s.similarity);
  }
  std::vector<double> norm(kept.size());
  for (std::size_t i = 0; i < kept.size(); ++i)
    norm[i] = hi > lo ? std::clamp((kept[i].similarity - lo) / (hi - lo), 0.0, 1.0) : 1.0;

  // Rank within each latent row and each rolled column.
  std::vector<std::vector<std::size_t>> byLatent(latent.size()), byRolled(rolled.size());
  for (std::size_t i = 0; i < kept.size(); ++i) {
    byLatent[kept[i].latent].push_back(i);
    byRolled[kept[i].rolled].push_back(i);
  }
  std::vector<char> topL(kept.size(), 0), topR(kept.size(), 0);
  auto mark = [&](std::vector<std::size_t>& list, std::vector<char>& flag, bool rowIsLatent) {
    std::stable_sort(list.begin(), list.end(), [&](std::size_t a, std::size_t b) {
      if (norm[a] != norm[b]) return norm[a] > norm[b];
      return rowIsLatent ? kept[a].rolled < kept[b].rolled : kept[a].latent < kept[b].latent;
    });
    for (std::size_t k = 0; k < list.size() && k < static_cast<std::size_t>(n); ++k) flag[list[k]] = 1;
  };
  for (auto& l : byLatent) mark(l, topL, true);
  for (auto& r : byRolled) mark(r, topR, false);

  std::vector<std::size_t> order;
  for (std::size_t i = 0; i < kept.size(); ++i)
    if (topL[i] && topR[i]) order.push_back(i);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (kept[a].latent != kept[b].latent) return kept[a].latent < kept[b].latent;
    return kept[a].rolled < kept[b].rolled;
  });

  std::vector<CandidateCorrespondence> out;
  for (std::size_t i : order) {
    const auto& s = kept[i];
    CandidateCorrespondence c;
    c.latentPoint = adjust_point(latent[s.latent], rolled[s.rolled], s.alignment).point;
    c.rolledPoint = rolled[s.rolled];
    c.rawSimilarity = s.similarity;
    c.normSimilarity = norm[i];
    c.alignment = s.alignment;
    out.push_back(c);
  }
  return out;
}

struct CompatibilityConfig {
  double sigmaDist = 8.0;
  double sigmaAngle = 8.0;
  double gateDist = 15.0;
  double gateAngle = 15.0;
};

/// Symmetric n x n matrix, row-major.
struct CompatibilityMatrix {
  int n = 0;
  std::vector<double> entries;

  double at(int i, int j) const { return entries[static_cast<std::size_t>(i) * n + j]; }
  double& at(int i, int j) { return entries[static_cast<std::size_t>(i) * n + j]; }
};

inline bool shares_point(const CandidateCorrespondence& a, const CandidateCorrespondence& b) {
  return a.latentPoint.id == b.latentPoint.id || a.rolledPoint.id == b.rolledPoint.id;
}

/// Pairwise geometric consistency of two candidates: 0 for conflicts and
/// gate failures, a Gaussian of the length and rotation disagreement otherwise.
inline double compatibility(const CandidateCorrespondence& a, const CandidateCorrespondence& b,
                            const CompatibilityConfig& cfg) {
  if (shares_point(a, b)) return 0.0;
  const double dLat = distance(a.latentPoint.pos, b.latentPoint.pos);
  const double dRol = distance(a.rolledPoint.pos, b.rolledPoint.pos);
  const double dd = std::abs(dLat - dRol);
  const double dt = angle_distance(a.rotation(), b.rotation());
  if (dd > cfg.gateDist || dt > cfg.gateAngle) return 0.0;
  return std::exp(-dd * dd / (cfg.sigmaDist * cfg.sigmaDist) - dt * dt / (cfg.sigmaAngle * cfg.sigmaAngle));
}

inline CompatibilityMatrix build_compatibility(const std::vector<CandidateCorrespondence>& cands,
                                               const CompatibilityConfig& cfg = {}) {
  if (cands.empty()) throw ContractViolation("build_compatibility: no candidates");
  CompatibilityMatrix m;
  m.n = static_cast<int>(cands.size());
  m.entries.assign(static_cast<std::size_t>(m.n) * m.n, 0.0);
  for (int i = 0; i < m.n; ++i) {
    m.at(i, i) = cands[i].normSimilarity;
    for (int j = i + 1; j < m.n; ++j) m.at(i, j) = m.at(j, i) = compatibility(cands[i], cands[j], cfg);
  }
  return m;
}

struct SpectralConfig {
  int maxIterations = 200;
  double tolerance = 1e-9;
  double stopRatio = 0.05;
};

/// Principal eigenvector by power iteration from the uniform vector.
inline std::vector<double> principal_eigenvector(const CompatibilityMatrix& m, const SpectralConfig& cfg = {}) {
  const int n = m.n;
  std::vector<double> u(n, 1.0 / std::sqrt(static_cast<double>(n))), next(n);
  for (int it = 0; it < cfg.maxIterations; ++it) {
    for (int i = 0; i < n; ++i) {
      double s = 0.0;
      for (int j = 0; j < n; ++j) s += m.at(i, j) * u[j];
      next[i] = s;
    }
    double len = 0.0;
    for (double v : next) len += v * v;
    len = std::sqrt(len);
    if (len <= 0.0) break;
    double change = 0.0;
    for (int i = 0; i < n; ++i) {
      next[i] /= len;
      change += (next[i] - u[i]) * (next[i] - u[i]);
    }
    u.swap(next);
    if (std::sqrt(change) < cfg.tolerance) break;
  }
  return u;
}

/// x^T M x for the indicator vector of `subset`.
inline double subset_score(const CompatibilityMatrix& m, const std::vector<int>& subset) {
  double s = 0.0;
  for (int i : subset)
    for (int j : subset) s += m.at(i, j);
  return s;
}

namespace detail {

inline std::vector<int> greedy_select(const CompatibilityMatrix& m, const SpectralConfig& cfg) {
  if (m.n == 0) return {};
  const auto u = principal_eigenvector(m, cfg);
  const double umax = *std::max_element(u.begin(), u.end());
  std::vector<char> open(m.n, 1);
  std::vector<int> chosen;
  for (;;) {
    int best = -1;
    for (int i = 0; i < m.n; ++i)
      if (open[i] && (best < 0 || u[i] > u[best])) best = i;
    if (best < 0) break;
    if (!chosen.empty() && u[best] < cfg.stopRatio * umax) break;
    chosen.push_back(best);
    open[best] = 0;
    for (int j = 0; j < m.n; ++j)
      if (open[j] && m.at(best, j) <= 0.0) open[j] = 0;
  }
  std::sort(chosen.begin(), chosen.end());
  return chosen;
}

}  // namespace detail

/// Selection indices from greedy discretisation of the eigenvector. Two
/// candidates are in conflict when their matrix entry is zero, which covers
/// shared points as well as gated pairs. Each connected component of the
/// nonzero-entry graph is discretised on its own and the best-scoring
/// component result is kept.
inline std::vector<int> spectral_select_indices(const CompatibilityMatrix& m, const SpectralConfig& cfg = {}) {
  if (m.n == 0) return {};
  std::vector<int> comp(m.n, -1);
  int ncomp = 0;
  for (int s = 0; s < m.n; ++s) {
    if (comp[s] >= 0) continue;
    std::vector<int> stack{s};
    comp[s] = ncomp;
    while (!stack.empty()) {
      const int i = stack.back();
      stack.pop_back();
      for (int j = 0; j < m.n; ++j)
        if (comp[j] < 0 && j != i && m.at(i, j) > 0.0) {
          comp[j] = ncomp;
          stack.push_back(j);
        }
    }
    ++ncomp;
  }
  if (ncomp == 1) return detail::greedy_select(m, cfg);

  std::vector<int> best;
  double bestScore = -1.0;
  for (int c = 0; c < ncomp; ++c) {
    std::vector<int> members;
    for (int i = 0; i < m.n; ++i)
      if (comp[i] == c) members.push_back(i);
    CompatibilityMatrix sub{static_cast<int>(members.size()), {}};
    sub.entries.resize(members.size() * members.size());
    for (int a = 0; a < sub.n; ++a)
      for (int b = 0; b < sub.n; ++b) sub.at(a, b) = m.at(members[a], members[b]);
    std::vector<int> picked;
    for (int k : detail::greedy_select(sub, cfg)) picked.push_back(members[k]);
    const double sc = subset_score(m, picked);
    if (sc > bestScore) {
      bestScore = sc;
      best = std::move(picked);
    }
  }
  std::sort(best.begin(), best.end());
  return best;
}

inline CorrespondenceSet spectral_select(const std::vector<CandidateCorrespondence>& cands,
                                         const CompatibilityMatrix& m, const SpectralConfig& cfg = {}) {
  if (static_cast<int>(cands.size()) != m.n) throw ContractViolation("spectral_select: size mismatch");
  CorrespondenceSet out;
  const auto idx = spectral_select_indices(m, cfg);
  for (int i : idx) out.selected.push_back(cands[i]);
  out.totalScore = subset_score(m, idx);
  return out;
}

/// latentX, latentY, latentDir, rolledX, rolledY, rolledDir, rawSim, normSim
inline void write_correspondences_tsv(std::ostream& out, const CorrespondenceSet& set) {
  out << "latentX\tlatentY\tlatentDir\trolledX\trolledY\trolledDir\trawSim\tnormSim\n";
  out.precision(10);
  for (const auto& c : set.selected)
    out << c.latentPoint.pos.x << '\t' << c.latentPoint.pos.y << '\t' << c.latentPoint.direction.value_or(0.0)
        << '\t' << c.rolledPoint.pos.x << '\t' << c.rolledPoint.pos.y << '\t'
        << c.rolledPoint.direction.value_or(0.0) << '\t' << c.rawSimilarity << '\t' << c.normSimilarity << '\n';
}

}  // namespace dsreg
