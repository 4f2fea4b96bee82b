#pragma once

// Benchmark harness: crop-pair generation, per-method runs, category scoring,
// Pearson statistics, and report files.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "align.hpp"
#include "error.hpp"
#include "fasta.hpp"
#include "metaio.hpp"
#include "parallel.hpp"
#include "random.hpp"
#include "scorer.hpp"
#include "ssbr_loss.hpp"
#include "volume.hpp"

namespace ssbreg {

inline constexpr std::size_t kMinPairSlices = 20;

struct PairSpec {
  std::size_t pair_id = 0;
  std::size_t volume_id = 0;
  std::size_t start_slice = 0;
  std::size_t n_slices = 0;
  double z_shift_mm = 0.0;     // added to the moving origin
  double true_offset_mm = 0.0; // = -z_shift_mm, crops keep world z
};

/// Draws a moving crop: start uniform in [0, nz-101] and length uniform in
/// [20, nz-start]. Volumes with fewer than 121 slices draw the start from
/// [0, nz-21] instead; volumes shorter than 20 slices yield nullopt.
inline std::optional<PairSpec> sample_pair_spec(std::size_t nz, Rng &rng) {
  if (nz < kMinPairSlices) return std::nullopt;
  const auto n = static_cast<std::int64_t>(nz);
  const std::int64_t last_start = nz >= 121 ? n - 101 : n - 21;
  PairSpec p;
  p.start_slice = static_cast<std::size_t>(rng.uniform_int(0, std::max<std::int64_t>(0, last_start)));
  p.n_slices = static_cast<std::size_t>(
      rng.uniform_int(static_cast<std::int64_t>(kMinPairSlices), n - static_cast<std::int64_t>(p.start_slice)));
  return p;
}

inline std::optional<PairSpec> sample_pair_spec(const Volume &vol, Rng &rng) {
  return sample_pair_spec(vol.dims().nz, rng);
}

struct CategoryThresholds {
  double cat1_mm = 5.0, cat2_mm = 20.0, cat3_mm = 80.0;

  void validate() const {
    if (!(cat1_mm > 0.0 && cat1_mm < cat2_mm && cat2_mm < cat3_mm) || !std::isfinite(cat3_mm))
      throw ValidationError("thresholds", "need 0 < cat1 < cat2 < cat3");
  }
};

/// 1 very good, 2 good, 3 correct region, 4 failure. Bounds are inclusive.
inline int categorize(double error_mm, const CategoryThresholds &t) {
  if (!(error_mm >= 0.0)) return 4;
  if (error_mm <= t.cat1_mm) return 1;
  if (error_mm <= t.cat2_mm) return 2;
  if (error_mm <= t.cat3_mm) return 3;
  return 4;
}

struct EvalRecord {
  std::size_t pair_id = 0;
  Method method = Method::L1;
  double z_offset_mm = std::numeric_limits<double>::quiet_NaN();
  double true_offset_mm = 0.0;
  double error_mm = std::numeric_limits<double>::quiet_NaN();
  int category = 4;
  double elapsed_s = 0.0;
  bool failed = false;
  std::string reason;
};

struct MethodSummary {
  std::size_t pairs = 0;
  double mean_score = 0.0;
  std::array<std::size_t, 4> counts{};
  double mean_error_mm = 0.0;   // over non-failed runs
  double median_error_mm = 0.0; // over non-failed runs
  double mean_elapsed_s = 0.0;
  double median_elapsed_s = 0.0;
  std::size_t failures = 0;
};

using BenchmarkSummary = std::map<std::string, MethodSummary>;

struct BenchmarkConfig {
  std::size_t n_pairs = 100;
  std::vector<Method> methods{Method::Fast, Method::L1, Method::Fasta};
  CategoryThresholds thresholds;
  std::uint64_t seed = 0;
  unsigned threads = 1;
  double max_z_shift_mm = 0.0; // > 0: moving origin shifted by U(-max, max)
  L1Config l1;
  FastaConfig fasta;
};

struct BenchmarkResult {
  std::vector<PairSpec> pairs;
  std::vector<EvalRecord> records; // pair-major, methods in config order
  BenchmarkSummary summary;
};

namespace detail {

inline double median(std::vector<double> v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(v.begin(), v.end());
  const std::size_t h = v.size() / 2;
  return v.size() % 2 ? v[h] : 0.5 * (v[h - 1] + v[h]);
}

inline double mean(const std::vector<double> &v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

} // namespace detail

inline BenchmarkSummary summarize(std::span<const EvalRecord> records,
                                  std::span<const Method> methods) {
  BenchmarkSummary out;
  for (Method m : methods) {
    MethodSummary s;
    std::vector<double> errors, elapsed;
    double score_sum = 0.0;
    for (const auto &r : records) {
      if (r.method != m) continue;
      ++s.pairs;
      ++s.counts[static_cast<std::size_t>(r.category - 1)];
      score_sum += r.category;
      elapsed.push_back(r.elapsed_s);
      if (r.failed)
        ++s.failures;
      else
        errors.push_back(r.error_mm);
    }
    s.mean_score = s.pairs ? score_sum / static_cast<double>(s.pairs) : 0.0;
    s.mean_error_mm = detail::mean(errors);
    s.median_error_mm = detail::median(errors);
    s.mean_elapsed_s = detail::mean(elapsed);
    s.median_elapsed_s = detail::median(elapsed);
    out[method_name(m)] = s;
  }
  return out;
}

/// Runs one method on one pair. Library errors become a failed record.
inline EvalRecord evaluate_method(Method method, const SliceScorer &scorer, const Volume &fixed,
                                  const Volume &moving, const PairSpec &pair,
                                  const BenchmarkConfig &cfg) {
  EvalRecord rec;
  rec.pair_id = pair.pair_id;
  rec.method = method;
  rec.true_offset_mm = pair.true_offset_mm;
  detail::Stopwatch watch;
  try {
    AlignmentResult r;
    switch (method) {
    case Method::Fast: r = fast_prealign_volumes(scorer, fixed, moving); break;
    case Method::L1: {
      L1Config l1 = cfg.l1;
      l1.threads = 1;
      r = l1_align_volumes(scorer, fixed, moving, l1);
      break;
    }
    case Method::Fasta: {
      FastaConfig fc = cfg.fasta;
      fc.threads = 1;
      fc.keep_table = false;
      r = fasta_align(fixed, moving, fc).alignment;
      break;
    }
    }
    rec.z_offset_mm = r.z_offset_mm;
    rec.error_mm = std::abs(r.z_offset_mm - pair.true_offset_mm);
    rec.category = categorize(rec.error_mm, cfg.thresholds);
  } catch (const Error &e) {
    rec.failed = true;
    rec.reason = e.what();
    rec.category = 4;
  }
  rec.elapsed_s = watch.seconds();
  return rec;
}

/// Generates the pair list for a benchmark run: pair i uses its own random
/// stream derived from (seed, i).
inline std::vector<PairSpec> make_pairs(std::span<const Volume> volumes, std::size_t n_pairs,
                                        std::uint64_t seed, double max_z_shift_mm = 0.0) {
  std::vector<std::size_t> eligible;
  for (std::size_t v = 0; v < volumes.size(); ++v)
    if (volumes[v].dims().nz >= kMinPairSlices) eligible.push_back(v);
  if (eligible.empty())
    throw ValidationError("volumes", "no volume has >= " + std::to_string(kMinPairSlices) +
                                         " slices");
  std::vector<PairSpec> pairs(n_pairs);
  for (std::size_t i = 0; i < n_pairs; ++i) {
    Rng rng = Rng::stream(seed, i);
    const std::size_t v = eligible[static_cast<std::size_t>(
        rng.uniform_int(0, static_cast<std::int64_t>(eligible.size()) - 1))];
    PairSpec p = *sample_pair_spec(volumes[v], rng);
    p.pair_id = i;
    p.volume_id = v;
    if (max_z_shift_mm > 0.0) {
      p.z_shift_mm = rng.uniform(-max_z_shift_mm, max_z_shift_mm);
      p.true_offset_mm = -p.z_shift_mm;
    }
    pairs[i] = p;
  }
  return pairs;
}

/// The moving volume of a pair: a crop of `source` with its origin shifted.
inline Volume make_moving(const Volume &source, const PairSpec &p) {
  Volume crop = crop_subvolume(source, p.start_slice, p.n_slices);
  if (p.z_shift_mm == 0.0) return crop;
  Vec3 o = crop.origin();
  o.z += p.z_shift_mm;
  return crop.with_origin(o);
}

/// Runs every configured method on every pair. `moving_sources`, when
/// non-empty, supplies the volume each moving crop is cut from (e.g. a
/// follow-up scan of the same anatomy); otherwise the fixed volume is cropped.
inline BenchmarkResult run_benchmark(std::span<const Volume> volumes, const SliceScorer &scorer,
                                     const BenchmarkConfig &cfg,
                                     std::span<const Volume> moving_sources = {}) {
  cfg.thresholds.validate();
  if (cfg.methods.empty()) throw ValidationError("methods", "no methods selected");
  if (!moving_sources.empty() && moving_sources.size() != volumes.size())
    throw ValidationError("moving_sources", "must match the number of volumes");
  BenchmarkResult out;
  out.pairs = make_pairs(volumes, cfg.n_pairs, cfg.seed, cfg.max_z_shift_mm);
  const std::size_t nm = cfg.methods.size();
  out.records.resize(out.pairs.size() * nm);
  parallel_for(out.pairs.size(), cfg.threads, [&](std::size_t i) {
    const PairSpec &p = out.pairs[i];
    const Volume &fixed = volumes[p.volume_id];
    const Volume &source = moving_sources.empty() ? fixed : moving_sources[p.volume_id];
    const Volume moving = make_moving(source, p);
    for (std::size_t m = 0; m < nm; ++m)
      out.records[i * nm + m] = evaluate_method(cfg.methods[m], scorer, fixed, moving, p, cfg);
  });
  out.summary = summarize(out.records, cfg.methods);
  return out;
}

// ---------------------------------------------------------------------------
// Pearson statistics

struct PearsonReport {
  std::vector<std::optional<double>> per_volume; // nullopt: undefined (constant scores)
  double mean = std::numeric_limits<double>::quiet_NaN();
  double median = std::numeric_limits<double>::quiet_NaN();
  double min = std::numeric_limits<double>::quiet_NaN();
  std::size_t undefined = 0;
};

/// Pearson correlation of each volume's scores with its slice indices.
inline PearsonReport pearson_report(const SliceScorer &scorer, std::span<const Volume> volumes,
                                    unsigned threads = 1) {
  PearsonReport rep;
  rep.per_volume.resize(volumes.size());
  parallel_for(volumes.size(), threads, [&](std::size_t v) {
    if (volumes[v].dims().nz < 2) throw ValidationError("volume", "need >= 2 slices");
    const ScoreCurve c = scorer.score_all(volumes[v]);
    std::vector<double> idx(c.size());
    std::iota(idx.begin(), idx.end(), 0.0);
    try {
      rep.per_volume[v] = pearson(c.scores(), idx);
    } catch (const UndefinedCorrelationError &) {
      rep.per_volume[v] = std::nullopt;
    }
  });
  std::vector<double> defined;
  for (const auto &r : rep.per_volume) {
    if (r)
      defined.push_back(*r);
    else
      ++rep.undefined;
  }
  if (!defined.empty()) {
    rep.mean = detail::mean(defined);
    rep.median = detail::median(defined);
    rep.min = *std::min_element(defined.begin(), defined.end());
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Reports

inline nlohmann::json summary_to_json(const BenchmarkSummary &summary) {
  auto num = [](double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(); };
  nlohmann::json j = nlohmann::json::object();
  for (const auto &[name, s] : summary)
    j[name] = {{"pairs", s.pairs},
               {"mean_score", s.mean_score},
               {"counts", s.counts},
               {"mean_error_mm", num(s.mean_error_mm)},
               {"median_error_mm", num(s.median_error_mm)},
               {"mean_elapsed_s", num(s.mean_elapsed_s)},
               {"median_elapsed_s", num(s.median_elapsed_s)},
               {"failures", s.failures}};
  return j;
}

inline BenchmarkSummary summary_from_json(const nlohmann::json &j) {
  auto num = [](const nlohmann::json &v) {
    return v.is_null() ? std::numeric_limits<double>::quiet_NaN() : v.get<double>();
  };
  BenchmarkSummary out;
  for (const auto &[name, v] : j.items()) {
    MethodSummary s;
    s.pairs = v.at("pairs").get<std::size_t>();
    s.mean_score = v.at("mean_score").get<double>();
    s.counts = v.at("counts").get<std::array<std::size_t, 4>>();
    s.mean_error_mm = num(v.at("mean_error_mm"));
    s.median_error_mm = num(v.at("median_error_mm"));
    s.mean_elapsed_s = num(v.at("mean_elapsed_s"));
    s.median_elapsed_s = num(v.at("median_elapsed_s"));
    s.failures = v.at("failures").get<std::size_t>();
    out[name] = s;
  }
  return out;
}

/// Per-pair CSV. With `include_timing` false the elapsed_s column is left
/// empty so repeated runs produce identical bytes.
inline void write_pairs_csv(std::span<const EvalRecord> records, const std::filesystem::path &path,
                            bool include_timing = true) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  auto num = [](double v) { return std::isfinite(v) ? format_double(v) : std::string("nan"); };
  out << "pair_id,method,offset_mm,true_offset_mm,error_mm,category,elapsed_s,failed\n";
  for (const auto &r : records)
    out << r.pair_id << ',' << method_name(r.method) << ',' << num(r.z_offset_mm) << ','
        << num(r.true_offset_mm) << ',' << num(r.error_mm) << ',' << r.category << ','
        << (include_timing ? num(r.elapsed_s) : std::string()) << ',' << (r.failed ? 1 : 0)
        << '\n';
  if (!out) throw IoError("failed writing " + path.string());
}

/// Writes `summary.json` and `pairs.csv` into `dir` (created if missing).
inline void write_report(std::span<const EvalRecord> records, const BenchmarkSummary &summary,
                         const std::filesystem::path &dir, bool include_timing = true) {
  if (records.empty()) throw ValidationError("records", "nothing to report");
  if (summary.empty()) throw ValidationError("summary", "no methods to report");
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  {
    std::ofstream out(dir / "summary.json");
    if (!out) throw IoError("cannot write " + (dir / "summary.json").string());
    out << summary_to_json(summary).dump(2) << '\n';
  }
  write_pairs_csv(records, dir / "pairs.csv", include_timing);
}

namespace detail {

inline std::string polyline(std::span<const double> xs, std::span<const double> ys, double x0,
                            double x1, double y0, double y1, double left, double top, double w,
                            double h, const char *color) {
  std::ostringstream os;
  os << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double px = left + (xs[i] - x0) / (x1 - x0) * w;
    const double py = top + h - (ys[i] - y0) / (y1 - y0) * h;
    os << (i ? " " : "") << px << ',' << py;
  }
  os << "\"/>";
  return os.str();
}

} // namespace detail

/// Two-panel SVG of the fixed and moving score curves, before and after
/// shifting the moving curve by `z_offset_mm`. Each panel holds two polylines.
inline void write_alignment_svg(const ScoreCurve &fixed, const ScoreCurve &moving,
                                double z_offset_mm, const std::filesystem::path &path,
                                const std::string &title = {}) {
  std::vector<double> shifted = moving.z();
  for (double &z : shifted) z += z_offset_mm;
  double x0 = std::min({fixed.z().front(), moving.z().front(), shifted.front()});
  double x1 = std::max({fixed.z().back(), moving.z().back(), shifted.back()});
  auto [fmin, fmax] = std::minmax_element(fixed.scores().begin(), fixed.scores().end());
  auto [mmin, mmax] = std::minmax_element(moving.scores().begin(), moving.scores().end());
  double y0 = std::min(*fmin, *mmin), y1 = std::max(*fmax, *mmax);
  if (x1 <= x0) x1 = x0 + 1.0;
  if (y1 <= y0) y1 = y0 + 1.0;

  const double pw = 360, ph = 220, margin = 30;
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << 2 * pw + 3 * margin
      << "\" height=\"" << ph + 3 * margin << "\">\n";
  out << "<text x=\"" << margin << "\" y=\"18\" font-size=\"13\">" << title << "</text>\n";
  const char *labels[2] = {"before", "after"};
  for (int panel = 0; panel < 2; ++panel) {
    const double left = margin + panel * (pw + margin);
    const double top = 2 * margin;
    const auto &mz = panel == 0 ? moving.z() : shifted;
    out << "<g class=\"plot\" id=\"" << labels[panel] << "\">\n";
    out << "<rect x=\"" << left << "\" y=\"" << top << "\" width=\"" << pw << "\" height=\"" << ph
        << "\" fill=\"none\" stroke=\"#888\"/>\n";
    out << "<text x=\"" << left << "\" y=\"" << top - 6 << "\" font-size=\"11\">"
        << labels[panel] << "</text>\n";
    out << detail::polyline(fixed.z(), fixed.scores(), x0, x1, y0, y1, left, top, pw, ph,
                            "#1f77b4")
        << '\n';
    out << detail::polyline(mz, moving.scores(), x0, x1, y0, y1, left, top, pw, ph, "#d62728")
        << '\n';
    out << "</g>\n";
  }
  out << "</svg>\n";
  if (!out) throw IoError("failed writing " + path.string());
}

} // namespace ssbreg
