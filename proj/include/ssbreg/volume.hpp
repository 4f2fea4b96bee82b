#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <complex>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "error.hpp"
#include "random.hpp"

namespace ssbreg {

struct Index3 {
  std::size_t nx = 1, ny = 1, nz = 1;
  std::size_t operator[](int axis) const { return axis == 0 ? nx : axis == 1 ? ny : nz; }
  std::size_t &operator[](int axis) { return axis == 0 ? nx : axis == 1 ? ny : nz; }
  std::size_t count() const { return nx * ny * nz; }
  friend bool operator==(const Index3 &, const Index3 &) = default;
};

struct Vec3 {
  double x = 0.0, y = 0.0, z = 0.0;
  double operator[](int axis) const { return axis == 0 ? x : axis == 1 ? y : z; }
  double &operator[](int axis) { return axis == 0 ? x : axis == 1 ? y : z; }
  friend bool operator==(const Vec3 &, const Vec3 &) = default;
};

/// Row-major 2D image of doubles, x fastest.
struct Image2D {
  std::size_t width = 0, height = 0;
  std::vector<double> pixels;

  double operator()(std::size_t x, std::size_t y) const { return pixels[y * width + x]; }
};

class Volume;
Volume crop_subvolume(const Volume &vol, std::size_t start_slice, std::size_t n_slices);

/// Scalar 3D grid with physical spacing and origin. Voxels are stored x-fastest
/// as 32-bit floats. Volumes are immutable once built.
///
/// The z-position of slice k is computed as base_z + (slice_base + k) * sz, where
/// crops only advance slice_base. Every slice of a crop therefore reports the
/// bit-identical world z it had in the parent volume.
class Volume {
public:
  Volume(Index3 dims, Vec3 spacing, Vec3 origin, std::vector<float> voxels)
      : Volume(dims, spacing, origin, std::move(voxels), 0) {}

  const Index3 &dims() const { return dims_; }
  const Vec3 &spacing() const { return spacing_; }
  Vec3 origin() const { return {base_origin_.x, base_origin_.y, z_position(0)}; }
  std::size_t voxel_count() const { return voxels_.size(); }
  std::span<const float> voxels() const { return voxels_; }

  float at(std::size_t x, std::size_t y, std::size_t z) const {
    return voxels_[(z * dims_.ny + y) * dims_.nx + x];
  }

  std::span<const float> slice(std::size_t k) const {
    if (k >= dims_.nz)
      throw BoundsError("slice " + std::to_string(k) + " out of range [0, " +
                        std::to_string(dims_.nz) + ")");
    const std::size_t n = dims_.nx * dims_.ny;
    return std::span<const float>(voxels_).subspan(k * n, n);
  }

  double z_position(std::size_t k) const {
    return base_origin_.z + static_cast<double>(slice_base_ + static_cast<std::int64_t>(k)) *
                                spacing_.z;
  }

  /// Physical extent dim * spacing per axis.
  Vec3 extent() const {
    return {dims_.nx * spacing_.x, dims_.ny * spacing_.y, dims_.nz * spacing_.z};
  }

  /// Same voxels, new origin.
  Volume with_origin(Vec3 origin) const { return Volume(dims_, spacing_, origin, voxels_); }

  /// Hash of one slice's voxel bit patterns.
  std::uint64_t slice_hash(std::size_t k) const {
    std::uint64_t h = 0xCBF29CE484222325ull;
    for (float v : slice(k)) h = hash_combine(h, std::bit_cast<std::uint32_t>(v));
    return h;
  }

  friend bool operator==(const Volume &a, const Volume &b) {
    return a.dims_ == b.dims_ && a.spacing_ == b.spacing_ && a.origin() == b.origin() &&
           a.voxels_ == b.voxels_;
  }

private:
  Volume(Index3 dims, Vec3 spacing, Vec3 origin, std::vector<float> voxels,
         std::int64_t slice_base)
      : dims_(dims), spacing_(spacing), base_origin_(origin), slice_base_(slice_base),
        voxels_(std::move(voxels)) {
    static constexpr const char *dim_names[] = {"dims.nx", "dims.ny", "dims.nz"};
    static constexpr const char *spacing_names[] = {"spacing.x", "spacing.y", "spacing.z"};
    for (int a = 0; a < 3; ++a) {
      if (dims_[a] < 1) throw ValidationError(dim_names[a], "must be >= 1");
      if (!(spacing_[a] > 0.0) || !std::isfinite(spacing_[a]))
        throw ValidationError(spacing_names[a], "must be finite and > 0");
      if (!std::isfinite(base_origin_[a]))
        throw ValidationError("origin", "must be finite");
    }
    if (voxels_.size() != dims_.count())
      throw SizeMismatchError("voxel count " + std::to_string(voxels_.size()) +
                              " does not match dims product " +
                              std::to_string(dims_.count()));
  }

  friend Volume crop_subvolume(const Volume &, std::size_t, std::size_t);

  Index3 dims_;
  Vec3 spacing_;
  Vec3 base_origin_;
  std::int64_t slice_base_;
  std::vector<float> voxels_;
};

/// Sub-volume of `n_slices` consecutive axial slices starting at `start_slice`.
/// World positions of the retained slices are unchanged.
inline Volume crop_subvolume(const Volume &vol, std::size_t start_slice, std::size_t n_slices) {
  const auto &d = vol.dims();
  if (n_slices < 1 || start_slice > d.nz || n_slices > d.nz - start_slice)
    throw BoundsError("crop [" + std::to_string(start_slice) + ", +" +
                      std::to_string(n_slices) + ") outside [0, " + std::to_string(d.nz) +
                      ")");
  const std::size_t per_slice = d.nx * d.ny;
  std::vector<float> voxels(vol.voxels().begin() + start_slice * per_slice,
                            vol.voxels().begin() + (start_slice + n_slices) * per_slice);
  return Volume({d.nx, d.ny, n_slices}, vol.spacing(), vol.base_origin_, std::move(voxels),
                vol.slice_base_ + static_cast<std::int64_t>(start_slice));
}

// ---------------------------------------------------------------------------
// Interpolation

namespace detail {

struct LinearTap {
  std::size_t lo, hi;
  double t;
};

/// Clamp a continuous index to [0, n-1] and split it into two taps.
inline LinearTap linear_tap(double u, std::size_t n) {
  const double max_u = static_cast<double>(n - 1);
  u = std::clamp(u, 0.0, max_u);
  const auto lo = static_cast<std::size_t>(std::floor(u));
  const std::size_t hi = std::min(lo + 1, n - 1);
  return {lo, hi, u - static_cast<double>(lo)};
}

/// Resample one axis of `vol` onto `new_n` samples at world positions
/// new_origin + j * new_spacing, linearly interpolated with edge clamping.
inline Volume resample_axis(const Volume &vol, int axis, std::size_t new_n, double new_spacing,
                            double new_origin) {
  const Index3 d = vol.dims();
  const Vec3 o = vol.origin();
  const double s = vol.spacing()[axis];
  std::vector<LinearTap> taps(new_n);
  for (std::size_t j = 0; j < new_n; ++j) {
    const double u = (new_origin + static_cast<double>(j) * new_spacing - o[axis]) / s;
    taps[j] = linear_tap(u, d[axis]);
  }
  Index3 nd = d;
  nd[axis] = new_n;
  Vec3 ns = vol.spacing();
  ns[axis] = new_spacing;
  Vec3 no = o;
  no[axis] = new_origin;

  std::vector<float> out(nd.count());
  const auto in = vol.voxels();
  const std::size_t stride = axis == 0 ? 1 : axis == 1 ? d.nx : d.nx * d.ny;
  for (std::size_t z = 0; z < nd.nz; ++z)
    for (std::size_t y = 0; y < nd.ny; ++y)
      for (std::size_t x = 0; x < nd.nx; ++x) {
        std::size_t idx[3] = {x, y, z};
        const LinearTap &tap = taps[idx[axis]];
        idx[axis] = 0;
        const std::size_t base = (idx[2] * d.ny + idx[1]) * d.nx + idx[0];
        const double a = in[base + tap.lo * stride];
        const double b = in[base + tap.hi * stride];
        out[(z * nd.ny + y) * nd.nx + x] = static_cast<float>(a + tap.t * (b - a));
      }
  return Volume(nd, ns, no, std::move(out));
}

} // namespace detail

/// Trilinear sample at a world position, edge-clamped.
inline double sample_trilinear(const Volume &vol, const Vec3 &p) {
  const Vec3 o = vol.origin();
  const Vec3 &s = vol.spacing();
  const Index3 &d = vol.dims();
  const auto tx = detail::linear_tap((p.x - o.x) / s.x, d.nx);
  const auto ty = detail::linear_tap((p.y - o.y) / s.y, d.ny);
  const auto tz = detail::linear_tap((p.z - o.z) / s.z, d.nz);
  auto lerp_x = [&](std::size_t y, std::size_t z) {
    const double a = vol.at(tx.lo, y, z), b = vol.at(tx.hi, y, z);
    return a + tx.t * (b - a);
  };
  auto lerp_xy = [&](std::size_t z) {
    const double a = lerp_x(ty.lo, z), b = lerp_x(ty.hi, z);
    return a + ty.t * (b - a);
  };
  const double a = lerp_xy(tz.lo), b = lerp_xy(tz.hi);
  return a + tz.t * (b - a);
}

/// Downsample every axis whose size exceeds `max_dims` to exactly that size.
/// Sample points are voxel centers of the new grid; the physical extent
/// dim * spacing is preserved. Axes already within bounds are left untouched.
inline Volume resample_volume(const Volume &vol, Index3 max_dims) {
  for (int a = 0; a < 3; ++a)
    if (max_dims[a] < 1) throw ValidationError("max_dims", "must be >= 1 per axis");
  Volume out = vol;
  for (int a = 0; a < 3; ++a) {
    const std::size_t n = out.dims()[a];
    const std::size_t m = max_dims[a];
    if (n <= m) continue;
    const double s = out.spacing()[a];
    const double new_s = static_cast<double>(n) * s / static_cast<double>(m);
    const double new_o = out.origin()[a] - 0.5 * s + 0.5 * new_s;
    out = detail::resample_axis(out, a, m, new_s, new_o);
  }
  return out;
}

/// Resample onto the given voxel spacing, keeping the grid centered on the
/// original physical extent. Axes whose spacing already matches are untouched.
inline Volume resample_to_spacing(const Volume &vol, Vec3 spacing) {
  Volume out = vol;
  for (int a = 0; a < 3; ++a) {
    if (!(spacing[a] > 0.0)) throw ValidationError("spacing", "must be > 0");
    const double s = out.spacing()[a];
    if (s == spacing[a]) continue;
    const std::size_t n = out.dims()[a];
    const auto new_n = static_cast<std::size_t>(
        std::max<long long>(1, std::llround(static_cast<double>(n) * s / spacing[a])));
    const double center = out.origin()[a] + 0.5 * static_cast<double>(n - 1) * s;
    const double new_o = center - 0.5 * static_cast<double>(new_n - 1) * spacing[a];
    out = detail::resample_axis(out, a, new_n, spacing[a], new_o);
  }
  return out;
}

/// Bilinear resampling of axial slice k onto a width x height grid spanning
/// the slice's physical extent (voxel-center anchored, edge-clamped).
inline Image2D resample_slice(const Volume &vol, std::size_t k, std::size_t width = 128,
                              std::size_t height = 128) {
  if (k >= vol.dims().nz)
    throw BoundsError("slice " + std::to_string(k) + " out of range [0, " +
                      std::to_string(vol.dims().nz) + ")");
  if (width < 1 || height < 1) throw ValidationError("out_size", "must be >= 1");
  const std::size_t nx = vol.dims().nx, ny = vol.dims().ny;
  auto taps = [](std::size_t n_in, std::size_t n_out) {
    std::vector<detail::LinearTap> t(n_out);
    const double ratio = static_cast<double>(n_in) / static_cast<double>(n_out);
    for (std::size_t j = 0; j < n_out; ++j)
      t[j] = detail::linear_tap((static_cast<double>(j) + 0.5) * ratio - 0.5, n_in);
    return t;
  };
  const auto tx = taps(nx, width);
  const auto ty = taps(ny, height);
  const auto in = vol.slice(k);
  Image2D img{width, height, std::vector<double>(width * height)};
  for (std::size_t y = 0; y < height; ++y) {
    const float *r0 = in.data() + ty[y].lo * nx;
    const float *r1 = in.data() + ty[y].hi * nx;
    for (std::size_t x = 0; x < width; ++x) {
      const auto &t = tx[x];
      const double a = r0[t.lo] + t.t * (static_cast<double>(r0[t.hi]) - r0[t.lo]);
      const double b = r1[t.lo] + t.t * (static_cast<double>(r1[t.hi]) - r1[t.lo]);
      img.pixels[y * width + x] = a + ty[y].t * (b - a);
    }
  }
  return img;
}

// ---------------------------------------------------------------------------
// Synthetic phantoms

struct AnatomyKnot {
  double height; // relative, in [0, 1]
  double mean;   // intensity
};

struct PhantomSpec {
  std::uint64_t seed = 1;
  Index3 dims{64, 64, 160};
  Vec3 spacing{3.0, 3.0, 2.0};
  std::vector<AnatomyKnot> anatomy_knots{
      {0.0, -300.0}, {0.2, -180.0}, {0.45, -60.0}, {0.7, 40.0}, {1.0, 250.0}};
  double noise_sigma = 15.0;
  double texture_scale = 24.0;     // mm, dominant wavelength
  double texture_amplitude = 60.0; // standard deviation of the texture field
  std::size_t texture_components = 24;

  void validate() const {
    for (int a = 0; a < 3; ++a) {
      if (dims[a] < 1) throw ValidationError("dims", "must be >= 1 per axis");
      if (!(spacing[a] > 0.0) || !std::isfinite(spacing[a]))
        throw ValidationError("spacing", "must be finite and > 0");
    }
    if (anatomy_knots.size() < 2) throw ValidationError("anatomy_knots", "need >= 2 knots");
    for (std::size_t i = 0; i < anatomy_knots.size(); ++i) {
      const auto &k = anatomy_knots[i];
      if (!(k.height >= 0.0 && k.height <= 1.0) || !std::isfinite(k.mean))
        throw ValidationError("anatomy_knots", "height must lie in [0,1], mean finite");
      if (i > 0 && !(k.height > anatomy_knots[i - 1].height))
        throw ValidationError("anatomy_knots", "heights must be strictly increasing");
    }
    if (!(noise_sigma >= 0.0) || !std::isfinite(noise_sigma))
      throw ValidationError("noise_sigma", "must be finite and >= 0");
    if (!(texture_scale >= 0.0) || !std::isfinite(texture_scale))
      throw ValidationError("texture_scale", "must be finite and >= 0");
    if (!(texture_amplitude >= 0.0) || !std::isfinite(texture_amplitude))
      throw ValidationError("texture_amplitude", "must be finite and >= 0");
  }
};

/// Piecewise-linear profile through the knots, constant beyond the end knots.
inline double anatomy_profile(const std::vector<AnatomyKnot> &knots, double t) {
  if (t <= knots.front().height) return knots.front().mean;
  if (t >= knots.back().height) return knots.back().mean;
  auto it = std::upper_bound(knots.begin(), knots.end(), t,
                             [](double v, const AnatomyKnot &k) { return v < k.height; });
  const auto &hi = *it;
  const auto &lo = *(it - 1);
  const double w = (t - lo.height) / (hi.height - lo.height);
  return lo.mean + w * (hi.mean - lo.mean);
}

/// Deterministic synthetic volume: axial anatomy profile + band-limited texture
/// (zero mean within every slice) + white Gaussian noise.
inline Volume make_phantom(const PhantomSpec &spec) {
  spec.validate();
  const Index3 d = spec.dims;
  const Vec3 s = spec.spacing;
  std::vector<float> voxels(d.count());
  const std::size_t per_slice = d.nx * d.ny;

  const bool textured = spec.texture_scale > 0.0 && spec.texture_amplitude > 0.0 &&
                        spec.texture_components > 0;
  struct Wave {
    std::vector<std::complex<double>> ex, ey, ez;
    double amplitude;
  };
  std::vector<Wave> waves;
  if (textured) {
    Rng rng = Rng::stream(spec.seed, 0x7E57);
    const double amp =
        spec.texture_amplitude * std::sqrt(2.0 / static_cast<double>(spec.texture_components));
    for (std::size_t c = 0; c < spec.texture_components; ++c) {
      // random direction on the sphere, wavelength in [0.7, 1.4] * scale
      const double cz = rng.uniform(-1.0, 1.0);
      const double phi = rng.uniform(0.0, 2.0 * std::numbers::pi);
      const double r = std::sqrt(1.0 - cz * cz);
      const double k = 2.0 * std::numbers::pi / (spec.texture_scale * rng.uniform(0.7, 1.4));
      const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
      const double kv[3] = {k * r * std::cos(phi), k * r * std::sin(phi), k * cz};
      Wave w;
      w.amplitude = amp;
      auto axis_terms = [&](int a, double offset) {
        std::vector<std::complex<double>> e(d[a]);
        for (std::size_t i = 0; i < d[a]; ++i)
          e[i] = std::polar(1.0, kv[a] * static_cast<double>(i) * s[a] + offset);
        return e;
      };
      w.ex = axis_terms(0, 0.0);
      w.ey = axis_terms(1, 0.0);
      w.ez = axis_terms(2, phase);
      waves.push_back(std::move(w));
    }
  }

  Rng noise = Rng::stream(spec.seed, 0x4015E);
  std::vector<double> texture(per_slice);
  for (std::size_t z = 0; z < d.nz; ++z) {
    const double t = d.nz > 1 ? static_cast<double>(z) / static_cast<double>(d.nz - 1) : 0.0;
    const double base = anatomy_profile(spec.anatomy_knots, t);
    std::fill(texture.begin(), texture.end(), 0.0);
    if (textured) {
      for (const auto &w : waves)
        for (std::size_t y = 0; y < d.ny; ++y) {
          const std::complex<double> yz = w.ey[y] * w.ez[z];
          double *row = texture.data() + y * d.nx;
          for (std::size_t x = 0; x < d.nx; ++x) row[x] += w.amplitude * (w.ex[x] * yz).real();
        }
      double mean = 0.0;
      for (double v : texture) mean += v;
      mean /= static_cast<double>(per_slice);
      for (double &v : texture) v -= mean;
    }
    float *out = voxels.data() + z * per_slice;
    for (std::size_t i = 0; i < per_slice; ++i) {
      double v = base + texture[i];
      if (spec.noise_sigma > 0.0) v += spec.noise_sigma * noise.normal();
      out[i] = static_cast<float>(v);
    }
  }
  return Volume(d, s, Vec3{}, std::move(voxels));
}

/// Mean intensity of every axial slice.
inline std::vector<double> axial_means(const Volume &vol) {
  std::vector<double> means(vol.dims().nz);
  for (std::size_t k = 0; k < means.size(); ++k) {
    double sum = 0.0;
    for (float v : vol.slice(k)) sum += v;
    means[k] = sum / static_cast<double>(vol.dims().nx * vol.dims().ny);
  }
  return means;
}

} // namespace ssbreg
