#pragma once

#include <atomic>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "error.hpp"
#include "metaio.hpp"
#include "parallel.hpp"
#include "random.hpp"
#include "regressor.hpp"
#include "volume.hpp"

namespace ssbreg {

/// Per-slice scores at strictly increasing world z positions.
class ScoreCurve {
public:
  ScoreCurve(std::vector<double> z_mm, std::vector<double> scores,
             std::optional<double> spacing_mm = std::nullopt)
      : z_(std::move(z_mm)), s_(std::move(scores)), spacing_(spacing_mm) {
    if (z_.empty()) throw EmptyCurveError("score curve is empty");
    if (z_.size() != s_.size())
      throw SizeMismatchError("score curve has " + std::to_string(z_.size()) + " positions but " +
                              std::to_string(s_.size()) + " scores");
    for (std::size_t i = 1; i < z_.size(); ++i)
      if (!(z_[i] > z_[i - 1]))
        throw MonotonicityError("z positions not strictly increasing at index " +
                                std::to_string(i));
    if (spacing_) {
      if (!(*spacing_ > 0.0)) throw ValidationError("spacing_mm", "must be > 0");
      for (std::size_t i = 1; i < z_.size(); ++i)
        if (std::abs(z_[i] - z_[i - 1] - *spacing_) > 1e-6)
          throw ValidationError("spacing_mm", "positions are not uniformly spaced");
    }
  }

  std::size_t size() const { return z_.size(); }
  const std::vector<double> &z() const { return z_; }
  const std::vector<double> &scores() const { return s_; }
  std::optional<double> spacing() const { return spacing_; }

  friend bool operator==(const ScoreCurve &, const ScoreCurve &) = default;

private:
  std::vector<double> z_, s_;
  std::optional<double> spacing_;
};

/// Scores axial slices. Implementations must be deterministic and safe to call
/// concurrently.
class SliceScorer {
public:
  virtual ~SliceScorer() = default;
  virtual double score(const Volume &vol, std::size_t k) const = 0;

  /// Scores every slice of `vol`. Implementations may override to share work.
  virtual ScoreCurve score_all(const Volume &vol, unsigned threads = 1) const {
    const std::size_t nz = vol.dims().nz;
    std::vector<double> z(nz), s(nz);
    for (std::size_t k = 0; k < nz; ++k) z[k] = vol.z_position(k);
    parallel_for(nz, threads, [&](std::size_t k) { s[k] = score(vol, k); });
    return ScoreCurve(std::move(z), std::move(s), vol.spacing().z);
  }
};

inline ScoreCurve score_all(const SliceScorer &scorer, const Volume &vol, unsigned threads = 1) {
  return scorer.score_all(vol, threads);
}

/// Ground-truth stand-in: score = slope * z + offset + noise, where the noise
/// is keyed by (slice content, world z) so a physically identical slice always
/// receives the same score, regardless of cropping.
class OracleScorer final : public SliceScorer {
public:
  OracleScorer(double slope, double offset, double noise_sigma = 0.0, std::uint64_t seed = 0)
      : a_(slope), b_(offset), sigma_(noise_sigma), seed_(seed) {}

  double score(const Volume &vol, std::size_t k) const override {
    const double z = vol.z_position(k);
    double s = a_ * z + b_;
    if (sigma_ > 0.0) {
      const auto zq = static_cast<std::uint64_t>(std::llround(z * 1e6));
      s += sigma_ * keyed_normal(hash_combine(hash_combine(seed_, vol.slice_hash(k)), zq));
    }
    return s;
  }

private:
  double a_, b_, sigma_;
  std::uint64_t seed_;
};

/// Applies a trained regressor to the slice feature pipeline used in training.
class LearnedScorer final : public SliceScorer {
public:
  explicit LearnedScorer(RegressorParams params) : params_(std::move(params)) { params_.validate(); }
  LearnedScorer(RegressorParams params, std::size_t feature_size) : params_(std::move(params)) {
    if (params_.feature_size != feature_size)
      throw ValidationError("feature_size", "regressor expects " +
                                                std::to_string(params_.feature_size));
    params_.validate();
  }

  double score(const Volume &vol, std::size_t k) const override {
    return regressor_forward(params_, slice_features(vol, k, params_.feature_size));
  }

  const RegressorParams &params() const { return params_; }

private:
  RegressorParams params_;
};

// ---------------------------------------------------------------------------
// Score CSV: header `index,z_mm,score`

inline void write_curve(const ScoreCurve &curve, const std::filesystem::path &path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "index,z_mm,score\n";
  for (std::size_t i = 0; i < curve.size(); ++i)
    out << i << ',' << format_double(curve.z()[i]) << ',' << format_double(curve.scores()[i])
        << '\n';
  if (!out) throw IoError("failed writing " + path.string());
}

inline ScoreCurve read_curve(const std::filesystem::path &path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || detail::trim(line).empty())
    throw EmptyCurveError(path.string() + " is empty");
  if (detail::trim(line) != "index,z_mm,score")
    throw ParseError("header", "expected 'index,z_mm,score'");
  std::vector<double> z, s;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    ++row;
    const std::string t = detail::trim(line);
    if (t.empty()) continue;
    double fields[3];
    const char *p = t.data();
    const char *end = p + t.size();
    for (int f = 0; f < 3; ++f) {
      auto [next, ec] = std::from_chars(p, end, fields[f]);
      const bool last = f == 2;
      if (ec != std::errc() || (last ? next != end : (next == end || *next != ',')))
        throw ParseError("row " + std::to_string(row), "malformed row '" + t + "'");
      p = next + 1;
    }
    if (fields[0] != static_cast<double>(z.size()))
      throw ParseError("row " + std::to_string(row), "index out of sequence");
    z.push_back(fields[1]);
    s.push_back(fields[2]);
  }
  if (z.empty()) throw EmptyCurveError(path.string() + " has no rows");
  std::optional<double> spacing;
  if (z.size() >= 2) {
    const double h = (z.back() - z.front()) / static_cast<double>(z.size() - 1);
    bool uniform = true;
    for (std::size_t i = 1; i < z.size() && uniform; ++i)
      uniform = std::abs(z[i] - z[i - 1] - h) <= 1e-6;
    if (uniform && h > 0.0) spacing = h;
  }
  return ScoreCurve(std::move(z), std::move(s), spacing);
}

/// Serves scores precomputed in a Score-CSV file, looked up by slice world z.
class FileScorer final : public SliceScorer {
public:
  explicit FileScorer(const std::filesystem::path &path) : curve_(read_curve(path)) {}
  explicit FileScorer(ScoreCurve curve) : curve_(std::move(curve)) {}

  double score(const Volume &vol, std::size_t k) const override {
    const double z = vol.z_position(k);
    const auto &zs = curve_.z();
    auto it = std::lower_bound(zs.begin(), zs.end(), z - 1e-6);
    if (it == zs.end() || std::abs(*it - z) > 1e-6)
      throw BoundsError("no score stored for z = " + format_double(z) + " mm");
    return curve_.scores()[static_cast<std::size_t>(it - zs.begin())];
  }

  const ScoreCurve &curve() const { return curve_; }

private:
  ScoreCurve curve_;
};

/// Wraps a scorer and counts score() invocations.
class CountingScorer final : public SliceScorer {
public:
  explicit CountingScorer(const SliceScorer &inner) : inner_(inner) {}

  double score(const Volume &vol, std::size_t k) const override {
    calls_.fetch_add(1, std::memory_order_relaxed);
    return inner_.score(vol, k);
  }

  std::size_t calls() const { return calls_.load(); }

private:
  const SliceScorer &inner_;
  mutable std::atomic<std::size_t> calls_{0};
};

} // namespace ssbreg
