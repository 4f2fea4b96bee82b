#pragma once

// Brute-force translation search (FASTA baseline): mean SSD between the moving
// volume and the trilinearly sampled fixed volume on a regular translation grid.

#include <array>
#include <cmath>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <string>
#include <limits>
#include <optional>
#include <tuple>
#include <vector>

#include "align.hpp"
#include "error.hpp"
#include "metaio.hpp"
#include "parallel.hpp"
#include "volume.hpp"

namespace ssbreg {

struct AxisRange {
  double lo = 0.0, hi = 0.0;
};

struct FastaConfig {
  Index3 grid_samples{3, 3, 71};
  std::array<std::optional<AxisRange>, 3> range_mm{}; // unset: see default_fasta_ranges
  Index3 max_dims{128, 128, 128};
  double min_overlap_fraction = 0.25;
  unsigned threads = 1;
  bool keep_table = false;

  void validate() const {
    for (int a = 0; a < 3; ++a) {
      if (grid_samples[a] < 1) throw ValidationError("grid_samples", "must be >= 1 per axis");
      if (max_dims[a] < 1) throw ValidationError("max_dims", "must be >= 1 per axis");
      if (range_mm[a] && (!std::isfinite(range_mm[a]->lo) || !std::isfinite(range_mm[a]->hi) ||
                          range_mm[a]->hi < range_mm[a]->lo))
        throw ValidationError("range_mm", "must be finite with lo <= hi");
    }
    if (!(min_overlap_fraction > 0.0 && min_overlap_fraction <= 1.0))
      throw ValidationError("min_overlap_fraction", "must lie in (0, 1]");
  }
};

struct GridPoint {
  Vec3 t;
  double ssd = std::numeric_limits<double>::infinity();
  bool feasible = false;
};

struct FastaResult {
  AlignmentResult alignment;
  Vec3 translation;
  std::vector<GridPoint> table; // filled when FastaConfig::keep_table is set
};

namespace detail {

struct AxisTap {
  std::size_t lo, hi;
  double t;
};

/// Taps into the fixed axis for every moving voxel index that falls inside the
/// fixed extent (half a voxel beyond the outer centers).
inline std::vector<std::pair<std::size_t, AxisTap>>
axis_taps(std::size_t n_moving, double o_moving, double s_moving, double shift, std::size_t n_fixed,
          double o_fixed, double s_fixed) {
  std::vector<std::pair<std::size_t, AxisTap>> taps;
  taps.reserve(n_moving);
  const double hi_bound = static_cast<double>(n_fixed) - 0.5;
  for (std::size_t i = 0; i < n_moving; ++i) {
    const double u = (o_moving + static_cast<double>(i) * s_moving + shift - o_fixed) / s_fixed;
    if (u < -0.5 || u > hi_bound) continue;
    const auto tap = linear_tap(u, n_fixed);
    taps.push_back({i, AxisTap{tap.lo, tap.hi, tap.t}});
  }
  return taps;
}

} // namespace detail

/// Mean squared difference between moving voxels translated by `t` and the
/// fixed volume sampled there. nullopt when fewer than `min_overlap_fraction`
/// of the moving voxels land inside the fixed volume.
inline std::optional<double> ssd_at(const Volume &fixed, const Volume &moving, const Vec3 &t,
                                    double min_overlap_fraction = 0.25) {
  const Index3 &df = fixed.dims();
  const Index3 &dm = moving.dims();
  const Vec3 of = fixed.origin(), om = moving.origin();
  const Vec3 &sf = fixed.spacing(), &sm = moving.spacing();
  std::array<std::vector<std::pair<std::size_t, detail::AxisTap>>, 3> taps;
  for (int a = 0; a < 3; ++a)
    taps[a] = detail::axis_taps(dm[a], om[a], sm[a], t[a], df[a], of[a], sf[a]);
  const std::size_t overlap = taps[0].size() * taps[1].size() * taps[2].size();
  if (overlap == 0 ||
      static_cast<double>(overlap) < min_overlap_fraction * static_cast<double>(dm.count()))
    return std::nullopt;

  const std::size_t plane_size = df.nx * df.ny;
  const auto fv = fixed.voxels();
  const auto mv = moving.voxels();
  std::vector<double> plane(plane_size);
  double sum = 0.0;
  for (const auto &[mz, tz] : taps[2]) {
    const float *p0 = fv.data() + tz.lo * plane_size;
    const float *p1 = fv.data() + tz.hi * plane_size;
    for (std::size_t i = 0; i < plane_size; ++i)
      plane[i] = p0[i] + tz.t * (static_cast<double>(p1[i]) - p0[i]);
    for (const auto &[my, ty] : taps[1]) {
      const double *r0 = plane.data() + ty.lo * df.nx;
      const double *r1 = plane.data() + ty.hi * df.nx;
      const float *mrow = mv.data() + (mz * dm.ny + my) * dm.nx;
      for (const auto &[mx, tx] : taps[0]) {
        const double a = r0[tx.lo] + tx.t * (r0[tx.hi] - r0[tx.lo]);
        const double b = r1[tx.lo] + tx.t * (r1[tx.hi] - r1[tx.lo]);
        const double d = (a + ty.t * (b - a)) - mrow[mx];
        sum += d * d;
      }
    }
  }
  return sum / static_cast<double>(overlap);
}

/// Default search ranges relative to the origin difference: z spans every
/// placement with partial overlap, x and y span +-10% of the fixed extent.
inline std::array<AxisRange, 3> default_fasta_ranges(const Volume &fixed, const Volume &moving) {
  const Vec3 ef = fixed.extent(), em = moving.extent();
  const Vec3 of = fixed.origin(), om = moving.origin();
  std::array<AxisRange, 3> r;
  for (int a = 0; a < 2; ++a) {
    const double c = of[a] - om[a];
    r[a] = {c - 0.1 * ef[a], c + 0.1 * ef[a]};
  }
  const double cz = of.z - om.z;
  r[2] = {cz - em.z, cz + ef.z};
  return r;
}

/// Uniform samples over [lo, hi], endpoints included; a single sample sits at the center.
inline std::vector<double> grid_axis(const AxisRange &r, std::size_t n) {
  std::vector<double> v(n);
  if (n == 1) {
    v[0] = 0.5 * (r.lo + r.hi);
    return v;
  }
  for (std::size_t i = 0; i < n; ++i)
    v[i] = r.lo + (r.hi - r.lo) * static_cast<double>(i) / static_cast<double>(n - 1);
  return v;
}

/// Resamples moving to within max_dims and fixed to the moving spacing, then
/// evaluates every grid translation. Ties go to the smallest |t|.
inline FastaResult fasta_align(const Volume &fixed, const Volume &moving,
                               const FastaConfig &cfg = {}) {
  detail::Stopwatch watch;
  cfg.validate();
  const auto defaults = default_fasta_ranges(fixed, moving);
  const Volume mov = resample_volume(moving, cfg.max_dims);
  const Volume fix = resample_to_spacing(fixed, mov.spacing());

  std::array<std::vector<double>, 3> axes;
  for (int a = 0; a < 3; ++a)
    axes[a] = grid_axis(cfg.range_mm[a].value_or(defaults[a]), cfg.grid_samples[a]);
  const std::size_t gx = axes[0].size(), gy = axes[1].size(), gz = axes[2].size();
  std::vector<GridPoint> table(gx * gy * gz);
  parallel_for(table.size(), cfg.threads, [&](std::size_t i) {
    GridPoint &g = table[i];
    g.t = {axes[0][i % gx], axes[1][(i / gx) % gy], axes[2][i / (gx * gy)]};
    if (auto ssd = ssd_at(fix, mov, g.t, cfg.min_overlap_fraction)) {
      g.ssd = *ssd;
      g.feasible = true;
    }
  });

  const GridPoint *best = nullptr;
  auto key = [](const GridPoint &g) {
    const double norm = std::sqrt(g.t.x * g.t.x + g.t.y * g.t.y + g.t.z * g.t.z);
    return std::make_tuple(g.ssd, norm, g.t.x, g.t.y, g.t.z);
  };
  for (const auto &g : table)
    if (g.feasible && (!best || key(g) < key(*best))) best = &g;
  if (!best) throw NoFeasibleTranslationError("no grid translation reaches the minimum overlap");

  FastaResult out;
  out.translation = best->t;
  out.alignment.method = Method::Fasta;
  out.alignment.z_offset_mm = best->t.z;
  out.alignment.residual = best->ssd;
  const double lo = std::max(fixed.z_position(0), moving.z_position(0) + best->t.z);
  const double hi = std::min(fixed.z_position(fixed.dims().nz - 1),
                             moving.z_position(moving.dims().nz - 1) + best->t.z);
  out.alignment.overlap_mm = std::max(0.0, hi - lo);
  out.alignment.translation_mm = best->t;
  if (cfg.keep_table) out.table = std::move(table);
  out.alignment.elapsed_s = watch.seconds();
  return out;
}

/// Grid dump: `tx_mm,ty_mm,tz_mm,ssd,feasible`.
inline void write_grid_csv(const std::vector<GridPoint> &table, const std::filesystem::path &path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "tx_mm,ty_mm,tz_mm,ssd,feasible\n";
  for (const auto &g : table)
    out << format_double(g.t.x) << ',' << format_double(g.t.y) << ',' << format_double(g.t.z)
        << ',' << (g.feasible ? format_double(g.ssd) : std::string("nan")) << ','
        << (g.feasible ? 1 : 0) << '\n';
  if (!out) throw IoError("failed writing " + path.string());
}

} // namespace ssbreg
