#pragma once

// Self-supervised slice-ordering loss.
//
// For a stack of scores s_0..s_{m-1} taken from m equidistant slices,
//   order(s) = -sum_i log sigmoid(s_{i+1} - s_i)                 i = 0..m-2
//   dist(s)  =  sum_i smooth_l1(d_{i+1} - d_i),  d_i = s_{i+1} - s_i,  i = 0..m-3
// and a batch loss is the mean of order + dist over its stacks.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "error.hpp"
#include "random.hpp"
#include "volume.hpp"

namespace ssbreg {

using ScoreStack = std::vector<double>;

inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

/// log(sigmoid(x)) without overflow or cancellation for large |x|.
inline double log_sigmoid(double x) {
  if (x >= 0.0) return -std::log1p(std::exp(-x));
  return x - std::log1p(std::exp(x));
}

/// Smooth L1 with threshold 1.
inline double smooth_l1(double x) {
  const double a = std::abs(x);
  return a < 1.0 ? 0.5 * x * x : a - 0.5;
}

inline double smooth_l1_derivative(double x) { return std::clamp(x, -1.0, 1.0); }

inline double loss_order(std::span<const double> s) {
  if (s.size() < 2) throw ValidationError("stack", "order loss needs >= 2 scores");
  double loss = 0.0;
  for (std::size_t i = 0; i + 1 < s.size(); ++i) loss -= log_sigmoid(s[i + 1] - s[i]);
  return loss;
}

inline double loss_dist(std::span<const double> s) {
  if (s.size() < 3) throw ValidationError("stack", "distance loss needs >= 3 scores");
  double loss = 0.0;
  for (std::size_t i = 0; i + 2 < s.size(); ++i)
    loss += smooth_l1((s[i + 2] - s[i + 1]) - (s[i + 1] - s[i]));
  return loss;
}

namespace detail {

inline std::size_t check_batch(std::span<const ScoreStack> batch) {
  if (batch.empty()) throw ValidationError("batch", "must not be empty");
  const std::size_t m = batch.front().size();
  if (m < 3) throw ValidationError("batch", "stacks need >= 3 scores");
  for (const auto &s : batch)
    if (s.size() != m) throw ValidationError("batch", "inconsistent stack length");
  return m;
}

} // namespace detail

/// Mean over stacks of order + dist.
inline double loss_ssbr(std::span<const ScoreStack> batch) {
  detail::check_batch(batch);
  double total = 0.0;
  for (const auto &s : batch) total += loss_order(s) + loss_dist(s);
  return total / static_cast<double>(batch.size());
}

/// Analytic partial derivatives of loss_ssbr with respect to every score.
inline std::vector<ScoreStack> grad_loss_ssbr(std::span<const ScoreStack> batch) {
  const std::size_t m = detail::check_batch(batch);
  const double scale = 1.0 / static_cast<double>(batch.size());
  std::vector<ScoreStack> grad(batch.size(), ScoreStack(m, 0.0));
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const auto &s = batch[b];
    auto &g = grad[b];
    // d/dx [-log sigmoid(x)] = -sigmoid(-x)
    for (std::size_t i = 0; i + 1 < m; ++i) {
      const double w = sigmoid(-(s[i + 1] - s[i])) * scale;
      g[i] += w;
      g[i + 1] -= w;
    }
    for (std::size_t i = 0; i + 2 < m; ++i) {
      const double w =
          smooth_l1_derivative((s[i + 2] - s[i + 1]) - (s[i + 1] - s[i])) * scale;
      g[i] += w;
      g[i + 1] -= 2.0 * w;
      g[i + 2] += w;
    }
  }
  return grad;
}

struct StackSample {
  std::size_t volume_id = 0;
  std::vector<std::size_t> slice_indices;
  std::size_t slice_gap = 1;
};

/// Draw m equidistant slice indices from a volume with nz slices: the gap is
/// uniform in [1, (nz-1)/(m-1)], the start uniform over all positions that fit.
inline StackSample sample_stack(std::size_t nz, std::size_t m, Rng &rng,
                                std::size_t volume_id = 0) {
  if (m < 2) throw ValidationError("m", "must be >= 2");
  if (nz < m)
    throw VolumeTooShortError("volume has " + std::to_string(nz) + " slices, stack needs " +
                              std::to_string(m));
  const auto max_gap = static_cast<std::int64_t>((nz - 1) / (m - 1));
  const auto gap = static_cast<std::size_t>(rng.uniform_int(1, max_gap));
  const auto last_start = static_cast<std::int64_t>(nz - 1 - (m - 1) * gap);
  const auto start = static_cast<std::size_t>(rng.uniform_int(0, last_start));
  StackSample out{volume_id, std::vector<std::size_t>(m), gap};
  for (std::size_t i = 0; i < m; ++i) out.slice_indices[i] = start + i * gap;
  return out;
}

inline StackSample sample_stack(const Volume &vol, std::size_t m, Rng &rng,
                                std::size_t volume_id = 0) {
  return sample_stack(vol.dims().nz, m, rng, volume_id);
}

/// Pearson correlation coefficient.
inline double pearson(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ValidationError("pearson", "length mismatch");
  if (a.size() < 2) throw ValidationError("pearson", "need >= 2 samples");
  const double n = static_cast<double>(a.size());
  double ma = 0.0, mb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= n;
  mb /= n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double da = a[i] - ma, db = b[i] - mb;
    sab += da * db;
    saa += da * da;
    sbb += db * db;
  }
  if (!(saa > 0.0) || !(sbb > 0.0))
    throw UndefinedCorrelationError("correlation undefined for zero-variance input");
  return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

} // namespace ssbreg
