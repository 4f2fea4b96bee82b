// ssbreg: command-line front end for phantom generation, regressor training,
// slice scoring, prealignment and benchmarking.
//
// Exit codes: 0 success, 1 runtime or data error, 2 usage error.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include <ssbreg/ssbreg.hpp>

namespace fs = std::filesystem;
using namespace ssbreg;

namespace {

struct Globals {
  std::uint64_t seed = 0;
  unsigned threads = 1;
  bool verbose = false;
};

struct ScorerFlags {
  std::string params;
  std::vector<double> oracle; // a,b,sigma

  void add(CLI::App *cmd) {
    auto *p = cmd->add_option("--params", params, "Trained regressor parameter file");
    auto *o = cmd->add_option("--oracle", oracle, "Oracle scorer a,b,sigma (score = a*z + b + noise)")
                  ->delimiter(',')
                  ->expected(3);
    p->excludes(o);
  }

  std::unique_ptr<SliceScorer> make(std::uint64_t seed) const {
    if (!params.empty()) return std::make_unique<LearnedScorer>(read_params(params));
    if (oracle.size() == 3) return std::make_unique<OracleScorer>(oracle[0], oracle[1], oracle[2], seed);
    throw CLI::ValidationError("scorer", "one of --params or --oracle is required");
  }
};

/// Expands .mhd files, directories (all .mhd inside, sorted) and phantom manifests.
std::vector<fs::path> expand_volume_paths(const std::vector<std::string> &inputs) {
  std::vector<fs::path> out;
  for (const auto &in : inputs) {
    const fs::path p(in);
    if (fs::is_directory(p)) {
      std::vector<fs::path> found;
      for (const auto &e : fs::directory_iterator(p))
        if (e.path().extension() == ".mhd") found.push_back(e.path());
      std::sort(found.begin(), found.end());
      out.insert(out.end(), found.begin(), found.end());
    } else if (p.extension() == ".json") {
      std::ifstream f(p);
      if (!f) throw IoError("cannot open " + p.string());
      const auto j = nlohmann::json::parse(f);
      for (const auto &v : j.at("volumes")) out.push_back(p.parent_path() / v.at("file").get<std::string>());
    } else {
      out.push_back(p);
    }
  }
  return out;
}

std::vector<Volume> load_volumes(const std::vector<std::string> &inputs, bool verbose) {
  std::vector<Volume> vols;
  for (const auto &p : expand_volume_paths(inputs)) {
    vols.push_back(read_volume(p));
    if (verbose) std::cout << "loaded " << p.string() << '\n';
  }
  if (vols.empty()) throw IoError("no volumes found");
  return vols;
}

void write_json(const nlohmann::json &j, const fs::path &path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

// ---------------------------------------------------------------------------

struct PhantomCmd {
  std::string out_dir;
  std::size_t nx = 64, ny = 64, nz = 160;
  std::vector<double> spacing{3.0, 3.0, 2.0};
  std::size_t count = 1;
  double noise = PhantomSpec{}.noise_sigma;
  double texture = PhantomSpec{}.texture_amplitude;
  std::string element = "float";

  void add(CLI::App &app) {
    auto *c = app.add_subcommand("phantom", "Generate synthetic phantom volumes");
    c->add_option("--out", out_dir, "Output directory")->required();
    c->add_option("--nz", nz, "Slices per volume")->check(CLI::PositiveNumber);
    c->add_option("--nx", nx, "Voxels along x")->check(CLI::PositiveNumber);
    c->add_option("--ny", ny, "Voxels along y")->check(CLI::PositiveNumber);
    c->add_option("--spacing", spacing, "Voxel spacing sx,sy,sz in mm")
        ->delimiter(',')
        ->expected(3)
        ->check(CLI::PositiveNumber);
    c->add_option("--count", count, "Number of volumes")->check(CLI::PositiveNumber);
    c->add_option("--noise", noise, "Noise standard deviation")->check(CLI::NonNegativeNumber);
    c->add_option("--texture", texture, "Texture amplitude")->check(CLI::NonNegativeNumber);
    c->add_option("--element", element, "Stored element type")->check(CLI::IsMember({"float", "short"}));
  }

  int run(const Globals &g) const {
    fs::create_directories(out_dir);
    nlohmann::json manifest{{"seed", g.seed}, {"count", count}, {"volumes", nlohmann::json::array()}};
    for (std::size_t i = 0; i < count; ++i) {
      PhantomSpec spec;
      spec.seed = hash_combine(g.seed, i);
      spec.dims = {nx, ny, nz};
      spec.spacing = {spacing[0], spacing[1], spacing[2]};
      spec.noise_sigma = noise;
      spec.texture_amplitude = texture;
      char name[32];
      std::snprintf(name, sizeof name, "phantom_%03zu.mhd", i);
      write_volume(make_phantom(spec), fs::path(out_dir) / name,
                   element == "short" ? ElementType::Int16 : ElementType::Float32);
      manifest["volumes"].push_back({{"file", name}, {"seed", spec.seed}});
      std::cout << "wrote " << (fs::path(out_dir) / name).string() << '\n';
    }
    write_json(manifest, fs::path(out_dir) / "manifest.json");
    return 0;
  }
};

struct TrainCmd {
  std::vector<std::string> volumes;
  TrainConfig cfg;
  std::string out_params, trace;
  std::string activation = "relu";

  void add(CLI::App &app) {
    auto *c = app.add_subcommand("train", "Train the slice regressor without labels");
    c->add_option("--volumes", volumes, "Volume files, directories or manifests")->required();
    c->add_option("--iters", cfg.iterations, "Gradient descent iterations");
    c->add_option("--lr", cfg.learning_rate, "Learning rate")->check(CLI::NonNegativeNumber);
    c->add_option("--batch", cfg.batch_size, "Stacks per batch")->check(CLI::PositiveNumber);
    c->add_option("--m", cfg.m, "Slices per stack")->check(CLI::Range(3, 1 << 20));
    c->add_option("--feature-size", cfg.feature_size, "Slice feature grid size")->check(CLI::Range(1, 128));
    c->add_option("--hidden", cfg.hidden, "Hidden layer widths")->delimiter(',');
    c->add_option("--activation", activation, "Hidden activation")
        ->check(CLI::IsMember({"relu", "tanh"}));
    c->add_option("--out-params", out_params, "Parameter output file")->required();
    c->add_option("--trace", trace, "Loss trace CSV (iteration,loss)");
  }

  int run(const Globals &g) {
    cfg.seed = g.seed;
    cfg.hidden_activation = parse_activation(activation);
    const auto vols = load_volumes(volumes, g.verbose);
    std::cout << "training on " << vols.size() << " volumes, " << cfg.iterations << " iterations\n";
    const std::size_t every = std::max<std::size_t>(1, cfg.iterations / 10);
    TrainResult r;
    try {
      r = train_regressor(vols, cfg, make_regressor(cfg.feature_size, cfg.hidden, cfg.seed, cfg.hidden_activation),
                          [&](std::size_t it, double loss) {
                            if (g.verbose && it % every == 0)
                              std::cout << "iter " << it << " loss " << loss << '\n';
                          });
    } catch (const TrainingDivergedError &e) {
      std::cerr << "error: training diverged at iteration " << e.iteration() << '\n';
      return 1;
    }
    write_params(r.params, out_params);
    if (!trace.empty()) write_loss_trace(r.loss_trace, trace);
    if (!r.loss_trace.empty())
      std::cout << "initial loss " << r.loss_trace.front() << ", final loss " << r.loss_trace.back() << '\n';
    std::cout << "wrote " << out_params << " (" << r.params.parameter_count() << " parameters)\n";
    return 0;
  }
};

struct ScoreCmd {
  ScorerFlags scorer;
  std::string volume, out_csv;

  void add(CLI::App &app) {
    auto *c = app.add_subcommand("score", "Score every slice of a volume");
    scorer.add(c);
    c->add_option("--volume", volume, "Volume header (.mhd)")->required();
    c->add_option("--out-csv", out_csv, "Score CSV output")->required();
  }

  int run(const Globals &g) const {
    const auto sc = scorer.make(g.seed);
    const Volume vol = read_volume(volume);
    const ScoreCurve curve = sc->score_all(vol, g.threads);
    write_curve(curve, out_csv);
    std::cout << "wrote " << curve.size() << " scores to " << out_csv << '\n';
    return 0;
  }
};

struct AlignCmd {
  ScorerFlags scorer;
  std::string method = "l1";
  std::string fixed, moving, out_json, plot_svg, grid_csv;
  std::optional<double> spacing;
  std::optional<std::size_t> min_overlap;
  std::vector<std::size_t> grid{3, 3, 71};
  double min_overlap_fraction = 0.25;

  void add(CLI::App &app) {
    auto *c = app.add_subcommand("align", "Estimate the z offset between two volumes");
    c->add_option("--method", method, "fast | l1 | fasta")->check(CLI::IsMember({"fast", "l1", "fasta"}));
    c->add_option("--fixed", fixed, "Fixed volume")->required();
    c->add_option("--moving", moving, "Moving volume")->required();
    scorer.add(c);
    c->add_option("--spacing", spacing, "l1: common curve spacing in mm")->check(CLI::PositiveNumber);
    c->add_option("--min-overlap", min_overlap, "l1: minimum overlapping samples")->check(CLI::PositiveNumber);
    c->add_option("--grid", grid, "fasta: grid samples gx,gy,gz")->delimiter(',')->expected(3)->check(CLI::PositiveNumber);
    c->add_option("--min-overlap-fraction", min_overlap_fraction, "fasta: minimum overlap fraction")
        ->check(CLI::Range(1e-9, 1.0));
    c->add_option("--out-json", out_json, "AlignmentResult JSON output");
    c->add_option("--plot-svg", plot_svg, "Score curve overlay before/after alignment");
    c->add_option("--grid-csv", grid_csv, "fasta: dump of every grid point");
  }

  int run(const Globals &g) const {
    const Volume f = read_volume(fixed);
    const Volume m = read_volume(moving);
    const Method meth = parse_method(method);
    std::unique_ptr<SliceScorer> sc;
    if (meth != Method::Fasta || !plot_svg.empty()) sc = scorer.make(g.seed);
    std::optional<CountingScorer> counter;
    if (sc) counter.emplace(*sc);

    AlignmentResult r;
    if (meth == Method::Fast) {
      r = fast_prealign_volumes(*counter, f, m);
    } else if (meth == Method::L1) {
      L1Config cfg;
      cfg.common_spacing_mm = spacing;
      cfg.min_overlap_samples = min_overlap;
      cfg.threads = g.threads;
      r = l1_align_volumes(*counter, f, m, cfg);
    } else {
      FastaConfig cfg;
      cfg.grid_samples = {grid[0], grid[1], grid[2]};
      cfg.min_overlap_fraction = min_overlap_fraction;
      cfg.threads = g.threads;
      cfg.keep_table = !grid_csv.empty();
      auto fr = fasta_align(f, m, cfg);
      if (!grid_csv.empty()) write_grid_csv(fr.table, grid_csv);
      r = fr.alignment;
    }
    if (g.verbose && meth != Method::Fasta) std::cout << "scorer calls: " << counter->calls() << '\n';
    std::cout << method_name(r.method) << ": z offset " << r.z_offset_mm << " mm, residual "
              << r.residual << ", overlap " << r.overlap_mm << " mm, " << r.elapsed_s << " s\n";
    if (!out_json.empty()) write_json(to_json(r), out_json);
    if (!plot_svg.empty())
      write_alignment_svg(sc->score_all(f, g.threads), sc->score_all(m, g.threads), r.z_offset_mm,
                          plot_svg, std::string(method_name(r.method)) + " alignment");
    return 0;
  }
};

struct BenchCmd {
  ScorerFlags scorer;
  std::vector<std::string> volumes, followups;
  std::size_t pairs = 20;
  std::vector<std::string> methods{"fast", "l1", "fasta"};
  std::vector<double> thresholds{5.0, 20.0, 80.0};
  std::string out_dir;
  double z_shift = 0.0;
  std::size_t plots = 0;
  bool no_timing = false;
  std::vector<std::size_t> grid{3, 3, 71};

  void add(CLI::App &app) {
    auto *c = app.add_subcommand("bench", "Run the prealignment benchmark");
    c->add_option("--volumes", volumes, "Fixed volumes (files, directories or manifests)")->required();
    c->add_option("--followups", followups, "Volumes the moving crops are cut from (one per fixed volume)");
    c->add_option("--pairs", pairs, "Number of registration pairs")->check(CLI::PositiveNumber);
    c->add_option("--methods", methods, "Methods to run")->delimiter(',')->check(CLI::IsMember({"fast", "l1", "fasta"}));
    c->add_option("--thresholds", thresholds, "Category thresholds cat1,cat2,cat3 in mm")
        ->delimiter(',')
        ->expected(3);
    c->add_option("--out-dir", out_dir, "Report directory")->required();
    scorer.add(c);
    c->add_option("--z-shift", z_shift, "Max synthetic z shift applied to moving origins (mm)")
        ->check(CLI::NonNegativeNumber);
    c->add_option("--plots", plots, "Write score overlay SVGs for the first N pairs");
    c->add_option("--grid", grid, "fasta grid samples gx,gy,gz")->delimiter(',')->expected(3)->check(CLI::PositiveNumber);
    c->add_flag("--no-timing", no_timing, "Leave elapsed_s empty in pairs.csv (byte-reproducible)");
  }

  int run(const Globals &g) const {
    const CategoryThresholds thr{thresholds[0], thresholds[1], thresholds[2]};
    try {
      thr.validate();
    } catch (const ssbreg::ValidationError &e) {
      throw CLI::ValidationError("--thresholds", e.what());
    }
    const auto vols = load_volumes(volumes, g.verbose);
    std::vector<Volume> follow;
    if (!followups.empty()) follow = load_volumes(followups, g.verbose);
    const auto sc = scorer.make(g.seed);
    BenchmarkConfig cfg;
    cfg.n_pairs = pairs;
    cfg.methods.clear();
    for (const auto &m : methods) cfg.methods.push_back(parse_method(m));
    cfg.thresholds = thr;
    cfg.seed = g.seed;
    cfg.threads = g.threads;
    cfg.max_z_shift_mm = z_shift;
    cfg.fasta.grid_samples = {grid[0], grid[1], grid[2]};
    const auto res = run_benchmark(vols, *sc, cfg, follow);
    write_report(res.records, res.summary, out_dir, !no_timing);

    for (std::size_t i = 0; i < std::min(plots, res.pairs.size()); ++i) {
      const PairSpec &p = res.pairs[i];
      const Volume &fixed = vols[p.volume_id];
      const Volume moving = make_moving(follow.empty() ? fixed : follow[p.volume_id], p);
      const ScoreCurve fc = sc->score_all(fixed), mc = sc->score_all(moving);
      fs::create_directories(fs::path(out_dir) / "plots");
      for (std::size_t k = 0; k < cfg.methods.size(); ++k) {
        const EvalRecord &r = res.records[i * cfg.methods.size() + k];
        if (r.failed) continue;
        const std::string name = "pair_" + std::to_string(p.pair_id) + "_" + method_name(r.method) + ".svg";
        write_alignment_svg(fc, mc, r.z_offset_mm, fs::path(out_dir) / "plots" / name,
                            "pair " + std::to_string(p.pair_id) + " " + method_name(r.method));
      }
    }

    std::cout << "method  mean_score  c1  c2  c3  c4  median_err_mm  mean_s  failures\n";
    for (const auto &[name, s] : res.summary)
      std::cout << name << "  " << s.mean_score << "  " << s.counts[0] << "  " << s.counts[1] << "  "
                << s.counts[2] << "  " << s.counts[3] << "  " << s.median_error_mm << "  "
                << s.mean_elapsed_s << "  " << s.failures << '\n';
    std::cout << "wrote " << (fs::path(out_dir) / "summary.json").string() << '\n';
    return 0;
  }
};

} // namespace

int main(int argc, char **argv) {
  CLI::App app{"ssbreg - slice-score based z prealignment"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--seed", g.seed, "Seed for all randomness");
  app.add_option("--threads", g.threads, "Worker threads")->check(CLI::PositiveNumber);
  app.add_flag("--verbose", g.verbose, "Verbose progress output");

  PhantomCmd phantom;
  TrainCmd train;
  ScoreCmd score;
  AlignCmd align;
  BenchCmd bench;
  phantom.add(app);
  train.add(app);
  score.add(app);
  align.add(app);
  bench.add(app);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp &e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp &e) {
    return app.exit(e);
  } catch (const CLI::ParseError &e) {
    app.exit(e);
    return 2;
  }

  try {
    auto *cmd = app.get_subcommands().front();
    const std::string name = cmd->get_name();
    if (name == "phantom") return phantom.run(g);
    if (name == "train") return train.run(g);
    if (name == "score") return score.run(g);
    if (name == "align") return align.run(g);
    if (name == "bench") return bench.run(g);
  } catch (const CLI::Error &e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception &e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 2;
}
