// Acceptance suite: prints one PASS/FAIL line per criterion and exits
// nonzero if any criterion fails.

#include <sys/wait.h>

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <numbers>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <ssbreg/ssbreg.hpp>

using namespace ssbreg;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char *f, double a, double b = 0, double c = 0, double d = 0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c, d);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

unsigned hw_threads() { return std::max(1u, std::thread::hardware_concurrency()); }

Volume default_phantom(std::uint64_t seed, double noise = 15.0) {
  PhantomSpec s;
  s.seed = seed;
  s.noise_sigma = noise;
  return make_phantom(s);
}

std::vector<Volume> phantom_set(std::uint64_t first_seed, std::size_t n) {
  std::vector<Volume> v(n, default_phantom(first_seed));
  parallel_for(n, hw_threads(), [&](std::size_t i) { v[i] = default_phantom(first_seed + i); });
  return v;
}

ScoreCurve uniform_curve(std::vector<double> s, double z0, double h) {
  const std::size_t n = s.size();
  std::vector<double> z(n);
  for (std::size_t i = 0; i < n; ++i) z[i] = z0 + static_cast<double>(i) * h;
  return ScoreCurve(std::move(z), std::move(s), h);
}

std::vector<double> random_walk(Rng &rng, std::size_t n) {
  std::vector<double> s(n);
  double x = 0.0;
  for (double &v : s) v = (x += 1.0 + rng.normal());
  return s;
}

/// Shared state: the trained regressor feeds criteria 3, 9, 10 and 11.
struct Shared {
  std::vector<Volume> train, held_out;
  std::optional<RegressorParams> params;
  fs::path work = fs::temp_directory_path() / "ssbreg_acceptance";
};

// ---------------------------------------------------------------------------

Outcome loss_identities() {
  const auto t0 = std::chrono::steady_clock::now();
  const std::vector<double> equal(8, 1.75);
  const double lo = loss_order(equal);
  std::vector<double> lin(8);
  for (int i = 0; i < 8; ++i) lin[i] = 0.37 * i - 2.0;
  const double ld = loss_dist(lin);
  const double dt = seconds_since(t0);
  const double err = std::abs(lo - 7.0 * std::numbers::ln2);
  return {err <= 1e-9 && std::abs(ld) <= 1e-12 && dt < 1.0,
          fmt("|order - 7 ln2| = %.2e, dist = %.2e, %.4f s", err, ld, dt)};
}

Outcome gradient_check() {
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng(20240611);
  const double h = 1e-5;
  double worst = 0.0;
  for (int s = 0; s < 100; ++s) {
    std::vector<ScoreStack> batch{ScoreStack(8)};
    for (double &x : batch[0]) x = 2.0 * rng.normal();
    const auto g = grad_loss_ssbr(batch);
    for (std::size_t i = 0; i < 8; ++i) {
      auto p = batch, m = batch;
      p[0][i] += h;
      m[0][i] -= h;
      const double fd = (loss_ssbr(p) - loss_ssbr(m)) / (2 * h);
      worst = std::max(worst, std::abs(fd - g[0][i]) / std::max(1.0, std::abs(fd)));
    }
  }
  const double dt = seconds_since(t0);
  return {worst <= 1e-4 && dt < 10.0, fmt("max rel err %.2e over 100 stacks, %.3f s", worst, dt)};
}

Outcome pearson_reproduction(Shared &sh) {
  TrainConfig cfg;
  cfg.learning_rate = 1e-2;
  cfg.iterations = 2000;
  cfg.seed = 7;
  const std::clock_t c0 = std::clock();
  sh.params = train_regressor(sh.train, cfg).params;
  const double cpu = static_cast<double>(std::clock() - c0) / CLOCKS_PER_SEC;
  const auto rep = pearson_report(LearnedScorer(*sh.params), sh.held_out, hw_threads());
  return {rep.undefined == 0 && rep.median >= 0.99 && cpu <= 300.0,
          fmt("median Pearson %.5f (min %.5f) on 10 held-out, training %.1f s CPU", rep.median,
              rep.min, cpu)};
}

Outcome l1_exact_embedding() {
  Rng rng(4);
  int ok = 0;
  for (int i = 0; i < 100; ++i) {
    const auto n = static_cast<std::size_t>(rng.uniform_int(60, 300));
    const double h = 0.25 * static_cast<double>(rng.uniform_int(2, 12));
    const double zf = 0.25 * static_cast<double>(rng.uniform_int(-400, 400));
    const double zm = 0.25 * static_cast<double>(rng.uniform_int(-400, 400));
    const ScoreCurve f = uniform_curve(random_walk(rng, n), zf, h);
    const auto len = static_cast<std::size_t>(rng.uniform_int(20, static_cast<std::int64_t>(n)));
    const auto k = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(n - len)));
    const ScoreCurve m = uniform_curve({f.scores().begin() + k, f.scores().begin() + k + len}, zm, h);
    const auto r = l1_align(f, m);
    const double truth = (zf - zm) + static_cast<double>(k) * h;
    if (r.z_offset_mm == truth && r.residual == 0.0) ++ok;
  }
  return {ok == 100, fmt("%.0f/100 exact (offset and zero residual)", ok)};
}

Outcome l1_noisy_recovery(const Shared &sh) {
  // score range of the fixed volumes: a * (nz - 1) * sz
  const Volume &ref = sh.held_out.front();
  const double range = ref.z_position(ref.dims().nz - 1) - ref.z_position(0);
  const OracleScorer oracle(1.0, 0.0, 0.02 * range, 17);
  const auto pairs = make_pairs(sh.held_out, 200, 2025);
  std::vector<int> good(pairs.size(), 0);
  double spacing = 0.0;
  parallel_for(pairs.size(), hw_threads(), [&](std::size_t i) {
    const Volume &fixed = sh.held_out[pairs[i].volume_id];
    const Volume moving = make_moving(fixed, pairs[i]);
    const double h = std::max(fixed.spacing().z, moving.spacing().z);
    const auto r = l1_align_volumes(oracle, fixed, moving);
    good[i] = std::abs(r.z_offset_mm - pairs[i].true_offset_mm) <= h + 1e-9;
    if (i == 0) spacing = h;
  });
  const int n = std::accumulate(good.begin(), good.end(), 0);
  return {n >= 190, fmt("%.0f/200 within one spacing (%.1f mm), noise sigma %.2f", n, spacing,
                        0.02 * range)};
}

Outcome l1_naive_equivalence() {
  Rng rng(66);
  int ok = 0;
  for (int trial = 0; trial < 50; ++trial) {
    const auto n = static_cast<std::size_t>(rng.uniform_int(20, 300));
    const auto k = static_cast<std::size_t>(rng.uniform_int(20, 300));
    std::vector<double> fs(n), ms(k);
    for (double &v : fs) v = rng.normal();
    for (double &v : ms) v = rng.normal();
    const double zf = rng.uniform(-50, 50), zm = rng.uniform(-50, 50);
    L1Config cfg;
    cfg.threads = 4;
    const auto r = l1_align(uniform_curve(fs, zf, 1.5), uniform_curve(ms, zm, 1.5), cfg);

    // independent enumeration: every shift, every overlapping pair, no pruning
    const std::size_t min_ov = std::max<std::size_t>(20, std::min(n, k) / 10);
    std::int64_t best_t = 0;
    double best_c = INFINITY, best_a = INFINITY;
    for (std::int64_t t = -static_cast<std::int64_t>(k) + 1; t < static_cast<std::int64_t>(n); ++t) {
      double sum = 0.0;
      std::size_t cnt = 0;
      for (std::int64_t i = 0; i < static_cast<std::int64_t>(n); ++i)
        for (std::int64_t j = 0; j < static_cast<std::int64_t>(k); ++j)
          if (i - j == t) {
            sum += std::abs(fs[i] - ms[j]);
            ++cnt;
          }
      if (cnt < min_ov) continue;
      const double c = sum / static_cast<double>(cnt);
      const double a = std::abs((zf - zm) + static_cast<double>(t) * 1.5);
      if (c < best_c || (c == best_c && a < best_a)) {
        best_t = t;
        best_c = c;
        best_a = a;
      }
    }
    if (r.shift_samples && *r.shift_samples == best_t && r.residual == best_c) ++ok;
  }
  return {ok == 50, fmt("%.0f/50 bit-exact (shift, cost)", ok)};
}

Outcome fast_non_overlap() {
  const Volume v = default_phantom(31);
  const OracleScorer oracle(1.0, 0.0);
  Rng rng(12);
  int ok = 0;
  double worst = 0.0;
  for (int i = 0; i < 50; ++i) {
    // two disjoint windows in a 160-slice volume
    const auto nf = static_cast<std::size_t>(rng.uniform_int(20, 70));
    const auto nm = static_cast<std::size_t>(rng.uniform_int(20, 70));
    const auto gap = static_cast<std::size_t>(rng.uniform_int(0, 160 - static_cast<std::int64_t>(nf + nm)));
    const auto lo = static_cast<std::size_t>(
        rng.uniform_int(0, 160 - static_cast<std::int64_t>(nf + nm + gap)));
    const bool fixed_first = rng.uniform() < 0.5;
    const std::size_t af = fixed_first ? lo : lo + nm + gap;
    const std::size_t am = fixed_first ? lo + nf + gap : lo;
    const auto r = fast_prealign_volumes(oracle, crop_subvolume(v, af, nf), crop_subvolume(v, am, nm));
    const double err = std::abs(r.z_offset_mm);
    worst = std::max(worst, err);
    if (err <= 2.0 * v.spacing().z + 1e-9) ++ok;
  }
  return {ok == 50, fmt("%.0f/50 within 2 slice spacings (worst %.3g mm)", ok, worst)};
}

Outcome fasta_recovery() {
  const Volume v = default_phantom(41, 0.0);
  Rng rng(9);
  std::vector<std::array<std::size_t, 4>> cases;
  while (cases.size() < 50) {
    const auto nf = static_cast<std::size_t>(rng.uniform_int(60, 160));
    const auto nm = static_cast<std::size_t>(rng.uniform_int(40, 120));
    const auto af = static_cast<std::size_t>(rng.uniform_int(0, 160 - static_cast<std::int64_t>(nf)));
    const auto am = static_cast<std::size_t>(rng.uniform_int(0, 160 - static_cast<std::int64_t>(nm)));
    const std::size_t ov_lo = std::max(af, am), ov_hi = std::min(af + nf, am + nm);
    if (ov_hi <= ov_lo || 2 * (ov_hi - ov_lo) < nm) continue; // need >= 50% of moving overlapping
    cases.push_back({af, nf, am, nm});
  }
  std::vector<int> good(50, 0);
  parallel_for(50, hw_threads(), [&](std::size_t i) {
    const auto [af, nf, am, nm] = cases[i];
    const Volume fixed = crop_subvolume(v, af, nf);
    // moving stored in its own frame: true offset is its original world z
    Volume moving = crop_subvolume(v, am, nm);
    const double truth = moving.origin().z;
    moving = moving.with_origin({moving.origin().x, moving.origin().y, 0.0});
    FastaConfig cfg;
    const auto range = default_fasta_ranges(fixed, moving)[2];
    const double cell = (range.hi - range.lo) / 70.0;
    const auto r = fasta_align(fixed, moving, cfg);
    good[i] = range.lo <= truth && truth <= range.hi &&
              std::abs(r.alignment.z_offset_mm - truth) <= cell + 1e-9;
  });
  const int n = std::accumulate(good.begin(), good.end(), 0);
  return {n >= 45, fmt("%.0f/50 within one z grid cell", n)};
}

Outcome runtime_ordering(const Shared &sh) {
  BenchmarkConfig cfg;
  cfg.n_pairs = 20;
  cfg.seed = 314;
  cfg.threads = 1;
  const auto r = run_benchmark(sh.held_out, LearnedScorer(*sh.params), cfg);
  const double f = r.summary.at("fast").median_elapsed_s;
  const double l = r.summary.at("l1").median_elapsed_s;
  const double b = r.summary.at("fasta").median_elapsed_s;
  return {f < l && l < b, fmt("median elapsed fast %.2e s < l1 %.2e s < fasta %.2e s", f, l, b)};
}

Outcome table_direction(const Shared &sh) {
  BenchmarkConfig cfg;
  cfg.n_pairs = 100;
  cfg.seed = 2718;
  cfg.threads = hw_threads();
  const auto r = run_benchmark(sh.held_out, LearnedScorer(*sh.params), cfg);
  const double f = r.summary.at("fast").mean_score;
  const double l = r.summary.at("l1").mean_score;
  const double b = r.summary.at("fasta").mean_score;
  return {l <= f, fmt("mean category l1 %.2f <= fast %.2f (fasta %.2f)", l, f, b)};
}

int run_cli(const std::string &args) {
  const std::string cmd = std::string(SSBREG_CLI_PATH) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path &p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Outcome cli_determinism(const Shared &sh) {
  const fs::path vols = sh.work / "volumes";
  fs::create_directories(vols);
  for (std::size_t i = 0; i < sh.held_out.size(); ++i) {
    const fs::path p = vols / ("vol_" + std::to_string(i) + ".mhd");
    write_volume(sh.held_out[i], p);
  }
  write_params(*sh.params, sh.work / "params.txt");
  const std::string base = "--seed 5 bench --volumes " + vols.string() + " --params " +
                           (sh.work / "params.txt").string() + " --pairs 100 --no-timing --out-dir ";
  const int a = run_cli("--threads 1 " + base + (sh.work / "bench_t1").string());
  const int b = run_cli("--threads 8 " + base + (sh.work / "bench_t8").string());
  if (a != 0 || b != 0) return {false, fmt("bench exit codes %.0f and %.0f", a, b)};
  const std::string c1 = slurp(sh.work / "bench_t1" / "pairs.csv");
  const std::string c8 = slurp(sh.work / "bench_t8" / "pairs.csv");
  const auto rows = std::count(c1.begin(), c1.end(), '\n');
  const bool same = !c1.empty() && c1 == c8;
  return {same, std::string(same ? "pairs.csv identical" : "pairs.csv differs") +
                    fmt(" for --threads 1 vs 8 (%.0f lines, %.0f bytes)", static_cast<double>(rows),
                        static_cast<double>(c1.size()))};
}

} // namespace

int main() {
  Shared sh;
  fs::remove_all(sh.work);
  fs::create_directories(sh.work);
  sh.train = phantom_set(1000, 20);
  sh.held_out = phantom_set(2000, 10);

  const std::vector<std::pair<const char *, std::function<Outcome()>>> criteria{
      {"loss identities", loss_identities},
      {"gradient check", gradient_check},
      {"pearson reproduction", [&] { return pearson_reproduction(sh); }},
      {"l1 exact embedding", l1_exact_embedding},
      {"l1 noisy recovery", [&] { return l1_noisy_recovery(sh); }},
      {"l1 naive equivalence", l1_naive_equivalence},
      {"fast non-overlap", fast_non_overlap},
      {"fasta recovery", fasta_recovery},
      {"runtime ordering", [&] { return runtime_ordering(sh); }},
      {"mean score direction", [&] { return table_direction(sh); }},
      {"bench determinism", [&] { return cli_determinism(sh); }},
  };
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    const bool needs_model = i >= 8;
    if (needs_model && !sh.params) {
      o = {false, "no trained regressor available"};
    } else {
      try {
        o = criteria[i].second();
      } catch (const std::exception &e) {
        o = {false, std::string("exception: ") + e.what()};
      }
    }
    failures += !o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << "  " << (i + 1) << ". " << criteria[i].first
              << ": " << o.detail << std::endl;
  }
  std::cout << (criteria.size() - failures) << "/" << criteria.size() << " criteria passed\n";
  return failures == 0 ? 0 : 1;
}
