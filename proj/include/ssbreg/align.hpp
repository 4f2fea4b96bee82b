#pragma once

// Score-based z prealignment: the three-slice fast estimate and the exhaustive
// l1 shift search over resampled score curves.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <tuple>
#include <vector>

#include <json.hpp>

#include "error.hpp"
#include "parallel.hpp"
#include "scorer.hpp"
#include "volume.hpp"

namespace ssbreg {

enum class Method { Fast, L1, Fasta };

inline const char *method_name(Method m) {
  switch (m) {
  case Method::Fast: return "fast";
  case Method::L1: return "l1";
  case Method::Fasta: return "fasta";
  }
  return "?";
}

inline Method parse_method(const std::string &name) {
  if (name == "fast") return Method::Fast;
  if (name == "l1") return Method::L1;
  if (name == "fasta") return Method::Fasta;
  throw ValidationError("method", "unknown method '" + name + "'");
}

/// z_offset_mm maps moving world z onto fixed world z: z_fixed = z_moving + z_offset_mm.
struct AlignmentResult {
  Method method = Method::L1;
  double z_offset_mm = 0.0;
  double residual = 0.0;
  double overlap_mm = 0.0;
  double elapsed_s = 0.0;
  std::optional<std::int64_t> shift_samples; // l1 only
  std::optional<Vec3> translation_mm;        // fasta only
};

inline nlohmann::json to_json(const AlignmentResult &r) {
  nlohmann::json j{{"method", method_name(r.method)},
                   {"z_offset_mm", r.z_offset_mm},
                   {"residual", r.residual},
                   {"overlap_mm", r.overlap_mm},
                   {"elapsed_s", r.elapsed_s}};
  if (r.shift_samples) j["shift_samples"] = *r.shift_samples;
  if (r.translation_mm)
    j["translation_mm"] = {r.translation_mm->x, r.translation_mm->y, r.translation_mm->z};
  return j;
}

namespace detail {

class Stopwatch {
public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

} // namespace detail

// ---------------------------------------------------------------------------
// Fast three-slice method

struct ScorePoint {
  double z_mm;
  double score;
};

/// Locate the moving center slice inside the fixed volume by linear
/// interpolation (or extrapolation) between the fixed first and last scores.
inline AlignmentResult fast_prealign(ScorePoint fixed_first, ScorePoint fixed_last,
                                     ScorePoint moving_center, double rel_eps = 1e-9) {
  const double dz = fixed_last.z_mm - fixed_first.z_mm;
  if (!(dz > 0.0)) throw ValidationError("fixed_last", "must lie above fixed_first");
  const double ds = fixed_last.score - fixed_first.score;
  if (!(std::abs(ds) > rel_eps * std::abs(dz)))
    throw DegenerateScoreGradientError("fixed first/last scores are (nearly) equal");
  const double z_hat = fixed_first.z_mm + (moving_center.score - fixed_first.score) * dz / ds;
  AlignmentResult r;
  r.method = Method::Fast;
  r.z_offset_mm = z_hat - moving_center.z_mm;
  return r;
}

/// Scores fixed slices 0 and nz-1 and moving slice floor(nz/2): three scorer calls.
inline AlignmentResult fast_prealign_volumes(const SliceScorer &scorer, const Volume &fixed,
                                             const Volume &moving) {
  detail::Stopwatch watch;
  const std::size_t nf = fixed.dims().nz;
  const std::size_t c = moving.dims().nz / 2;
  const ScorePoint first{fixed.z_position(0), scorer.score(fixed, 0)};
  const ScorePoint last{fixed.z_position(nf - 1), scorer.score(fixed, nf - 1)};
  const ScorePoint center{moving.z_position(c), scorer.score(moving, c)};
  AlignmentResult r = fast_prealign(first, last, center);
  // geometric overlap of the slice-center spans after applying the offset
  const double lo = std::max(first.z_mm, moving.z_position(0) + r.z_offset_mm);
  const double hi =
      std::min(last.z_mm, moving.z_position(moving.dims().nz - 1) + r.z_offset_mm);
  r.overlap_mm = std::max(0.0, hi - lo);
  r.elapsed_s = watch.seconds();
  return r;
}

// ---------------------------------------------------------------------------
// l1 curve alignment

/// Linear interpolation onto a uniform grid z_min + i*spacing, i = 0.. while
/// the grid point does not exceed z_max. Never extrapolates.
inline ScoreCurve resample_curve(const ScoreCurve &curve, double spacing_mm) {
  if (curve.size() < 2) throw ValidationError("curve", "need >= 2 points to resample");
  if (!(spacing_mm > 0.0) || !std::isfinite(spacing_mm))
    throw ValidationError("spacing_mm", "must be finite and > 0");
  if (curve.spacing() && std::abs(*curve.spacing() - spacing_mm) <= 1e-12 * spacing_mm)
    return curve;
  const auto &z = curve.z();
  const auto &s = curve.scores();
  const double z0 = z.front();
  const auto n = static_cast<std::size_t>(std::floor((z.back() - z0) / spacing_mm + 1e-9)) + 1;
  std::vector<double> oz(n), os(n);
  std::size_t j = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double zi = std::min(z0 + static_cast<double>(i) * spacing_mm, z.back());
    while (j + 2 < z.size() && z[j + 1] < zi) ++j;
    const double t = std::clamp((zi - z[j]) / (z[j + 1] - z[j]), 0.0, 1.0);
    oz[i] = z0 + static_cast<double>(i) * spacing_mm;
    os[i] = s[j] + t * (s[j + 1] - s[j]);
  }
  return ScoreCurve(std::move(oz), std::move(os), n >= 2 ? std::optional<double>(spacing_mm)
                                                         : std::nullopt);
}

struct L1Config {
  std::optional<double> common_spacing_mm;          // default: max of the two curve spacings
  std::optional<std::size_t> min_overlap_samples;   // default: max(20, 10% of shorter curve)
  unsigned threads = 1;
};

/// Cost and tie-break key of one candidate shift.
struct ShiftCandidate {
  std::int64_t shift = 0;
  double cost = std::numeric_limits<double>::infinity();
  double abs_offset_mm = std::numeric_limits<double>::infinity();
  std::size_t overlap = 0;

  bool better_than(const ShiftCandidate &o) const {
    return std::tie(cost, abs_offset_mm, shift) < std::tie(o.cost, o.abs_offset_mm, o.shift);
  }
};

namespace detail {

inline double curve_spacing(const ScoreCurve &c) {
  if (c.spacing()) return *c.spacing();
  if (c.size() < 2) throw ValidationError("curve", "need >= 2 points");
  return (c.z().back() - c.z().front()) / static_cast<double>(c.size() - 1);
}

/// Mean absolute difference of fixed[i] and moving[i - shift] over the overlap,
/// summed in ascending i. Returns +inf once the running mean provably exceeds
/// `bound` (the final cost can only be larger).
inline double shift_cost(const std::vector<double> &f, const std::vector<double> &m,
                         std::int64_t shift, std::size_t &overlap, double bound) {
  const auto n = static_cast<std::int64_t>(f.size());
  const auto k = static_cast<std::int64_t>(m.size());
  const std::int64_t lo = std::max<std::int64_t>(0, shift);
  const std::int64_t hi = std::min<std::int64_t>(n, k + shift);
  overlap = hi > lo ? static_cast<std::size_t>(hi - lo) : 0;
  if (overlap == 0) return std::numeric_limits<double>::infinity();
  const double denom = static_cast<double>(overlap);
  double sum = 0.0;
  for (std::int64_t i = lo; i < hi; ++i) {
    sum += std::abs(f[static_cast<std::size_t>(i)] - m[static_cast<std::size_t>(i - shift)]);
    if (((i - lo) & 15) == 15 && sum / denom > bound) return std::numeric_limits<double>::infinity();
  }
  return sum / denom;
}

} // namespace detail

/// Resolved minimum overlap for curves of the given lengths.
inline std::size_t default_min_overlap(std::size_t fixed_len, std::size_t moving_len) {
  const std::size_t shorter = std::min(fixed_len, moving_len);
  return std::max<std::size_t>(20, shorter / 10);
}

/// Exhaustive integer shift search minimizing the mean absolute score
/// difference over the overlapping part of the two curves. Ties go to the
/// smallest |offset|, then the smallest shift.
inline AlignmentResult l1_align(const ScoreCurve &fixed_curve, const ScoreCurve &moving_curve,
                                const L1Config &cfg = {}) {
  detail::Stopwatch watch;
  const double h = cfg.common_spacing_mm.value_or(
      std::max(detail::curve_spacing(fixed_curve), detail::curve_spacing(moving_curve)));
  if (!(h > 0.0)) throw ValidationError("common_spacing_mm", "must be > 0");
  const ScoreCurve f = resample_curve(fixed_curve, h);
  const ScoreCurve m = resample_curve(moving_curve, h);
  const std::size_t min_overlap =
      cfg.min_overlap_samples.value_or(default_min_overlap(f.size(), m.size()));
  if (min_overlap < 1) throw ValidationError("min_overlap_samples", "must be >= 1");

  const auto n = static_cast<std::int64_t>(f.size());
  const auto k = static_cast<std::int64_t>(m.size());
  const double base_offset = f.z().front() - m.z().front();
  const std::int64_t first = -(k - 1);
  const auto count = static_cast<std::size_t>(n + k - 1);

  const unsigned workers = std::max(1u, std::min<unsigned>(cfg.threads, 64));
  std::vector<ShiftCandidate> best(workers);
  parallel_for(workers, workers, [&](std::size_t w) {
    ShiftCandidate local;
    for (std::size_t idx = count * w / workers; idx < count * (w + 1) / workers; ++idx) {
      const std::int64_t t = first + static_cast<std::int64_t>(idx);
      std::size_t overlap = 0;
      const double cost = detail::shift_cost(f.scores(), m.scores(), t, overlap, local.cost);
      if (overlap < min_overlap) continue;
      ShiftCandidate c{t, cost, std::abs(base_offset + static_cast<double>(t) * h), overlap};
      if (c.better_than(local)) local = c;
    }
    best[w] = local;
  });
  ShiftCandidate win;
  for (const auto &c : best)
    if (c.overlap > 0 && c.better_than(win)) win = c;
  if (win.overlap == 0)
    throw NoFeasibleShiftError("no shift leaves >= " + std::to_string(min_overlap) +
                               " overlapping samples");

  AlignmentResult r;
  r.method = Method::L1;
  r.z_offset_mm = base_offset + static_cast<double>(win.shift) * h;
  r.residual = win.cost;
  r.overlap_mm = static_cast<double>(win.overlap) * h;
  r.shift_samples = win.shift;
  r.elapsed_s = watch.seconds();
  return r;
}

inline AlignmentResult l1_align_volumes(const SliceScorer &scorer, const Volume &fixed,
                                        const Volume &moving, L1Config cfg = {}) {
  detail::Stopwatch watch;
  if (fixed.dims().nz < 2 || moving.dims().nz < 2)
    throw ValidationError("volume", "l1 alignment needs >= 2 slices per volume");
  if (!cfg.common_spacing_mm)
    cfg.common_spacing_mm = std::max(fixed.spacing().z, moving.spacing().z);
  const ScoreCurve fc = scorer.score_all(fixed, cfg.threads);
  const ScoreCurve mc = scorer.score_all(moving, cfg.threads);
  AlignmentResult r = l1_align(fc, mc, cfg);
  r.elapsed_s = watch.seconds();
  return r;
}

} // namespace ssbreg
