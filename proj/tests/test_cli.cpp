#include <gtest/gtest.h>

#include <sys/wait.h>
#include <unistd.h>

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>
#include <ssbreg/ssbreg.hpp>

namespace fs = std::filesystem;

namespace {

struct RunResult {
  int code = -1;
  std::string out;
};

RunResult run(const std::string &args) {
  const std::string cmd = std::string(SSBREG_CLI_PATH) + " " + args + " 2>&1";
  RunResult r;
  FILE *pipe = popen(cmd.c_str(), "r");
  if (!pipe) return r;
  std::array<char, 4096> buf;
  std::size_t n;
  while ((n = fread(buf.data(), 1, buf.size(), pipe)) > 0) r.out.append(buf.data(), n);
  const int status = pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string slurp(const fs::path &p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

class Cli : public ::testing::Test {
protected:
  // one directory per process: ctest may run these cases concurrently
  static fs::path dir() {
    return fs::temp_directory_path() / ("ssbreg_cli_test_" + std::to_string(getpid()));
  }

  static void SetUpTestSuite() {
    fs::remove_all(dir());
    fs::create_directories(dir());
    const auto r = run("--seed 3 phantom --out " + (dir() / "ph").string() +
                       " --count 3 --nz 130 --nx 16 --ny 16");
    ASSERT_EQ(r.code, 0) << r.out;
  }
  static void TearDownTestSuite() { fs::remove_all(dir()); }
  static fs::path vol(int i) {
    char name[32];
    std::snprintf(name, sizeof name, "phantom_%03d.mhd", i);
    return dir() / "ph" / name;
  }
};

} // namespace

TEST_F(Cli, PhantomWritesFilesAndManifest) {
  const fs::path out = dir() / "one";
  const auto r = run("--seed 5 phantom --out " + out.string() + " --count 1 --nz 30");
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_TRUE(fs::exists(out / "phantom_000.mhd"));
  EXPECT_TRUE(fs::exists(out / "phantom_000.raw"));
  EXPECT_TRUE(fs::exists(out / "manifest.json"));
  const auto m = nlohmann::json::parse(slurp(out / "manifest.json"));
  EXPECT_FALSE(m.empty());

  const fs::path again = dir() / "two";
  ASSERT_EQ(run("--seed 5 phantom --out " + again.string() + " --count 1 --nz 30").code, 0);
  EXPECT_EQ(slurp(out / "phantom_000.raw"), slurp(again / "phantom_000.raw"));
  EXPECT_EQ(slurp(out / "phantom_000.mhd"), slurp(again / "phantom_000.mhd"));
}

TEST_F(Cli, UsageErrors) {
  EXPECT_EQ(run("phantom --out " + (dir() / "z").string() + " --nz 0").code, 2);
  EXPECT_EQ(run("phantom --bogus 1").code, 2);
  EXPECT_EQ(run("").code, 2);
  EXPECT_EQ(run("align --method l2 --fixed a --moving b --oracle 1,0,0").code, 2);
  EXPECT_EQ(run("--help").code, 0);
}

TEST_F(Cli, ScoreWithOracle) {
  const fs::path csv = dir() / "scores.csv";
  const auto r = run("score --oracle 1,0,0 --volume " + vol(0).string() + " --out-csv " + csv.string());
  ASSERT_EQ(r.code, 0) << r.out;
  const auto curve = ssbreg::read_curve(csv);
  EXPECT_EQ(curve.size(), 130u);
  EXPECT_EQ(curve.scores(), curve.z());
}

TEST_F(Cli, ScoreMissingVolume) {
  const std::string missing = (dir() / "nope.mhd").string();
  const auto r = run("score --oracle 1,0,0 --volume " + missing + " --out-csv " +
                     (dir() / "x.csv").string());
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.out.find(missing), std::string::npos) << r.out;
}

TEST_F(Cli, TrainThenScore) {
  const fs::path params = dir() / "params.txt", trace = dir() / "trace.csv";
  auto r = run("--seed 1 train --volumes " + (dir() / "ph").string() + " --iters 40 --lr 1e-2 --out-params " +
               params.string() + " --trace " + trace.string());
  ASSERT_EQ(r.code, 0) << r.out;
  const std::string t = slurp(trace);
  EXPECT_EQ(t.rfind("iteration,loss\n", 0), 0u);
  EXPECT_EQ(std::count(t.begin(), t.end(), '\n'), 41);
  r = run("score --params " + params.string() + " --volume " + vol(1).string() + " --out-csv " +
          (dir() / "learned.csv").string());
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_EQ(ssbreg::read_curve(dir() / "learned.csv").size(), 130u);

  const fs::path params2 = dir() / "params2.txt";
  ASSERT_EQ(run("--seed 1 train --volumes " + (dir() / "ph" / "manifest.json").string() +
                " --iters 40 --lr 1e-2 --out-params " + params2.string())
                .code,
            0);
  EXPECT_EQ(slurp(params), slurp(params2));
}

TEST_F(Cli, TrainZeroLearningRateKeepsInit) {
  const fs::path a = dir() / "lr0_a.txt", b = dir() / "lr0_b.txt";
  ASSERT_EQ(run("--seed 2 train --volumes " + vol(0).string() + " --iters 0 --out-params " + a.string()).code, 0);
  ASSERT_EQ(run("--seed 2 train --volumes " + vol(0).string() + " --iters 5 --lr 0 --out-params " + b.string()).code, 0);
  EXPECT_EQ(slurp(a), slurp(b));
}

TEST_F(Cli, TrainDivergenceExitsOne) {
  const auto r = run("train --volumes " + vol(0).string() + " --iters 50 --lr 1e300 --out-params " +
                     (dir() / "div.txt").string());
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.out.find("iteration"), std::string::npos) << r.out;
}

TEST_F(Cli, AlignL1Self) {
  const fs::path json = dir() / "self.json";
  const auto r = run("align --method l1 --oracle 1,0,0 --fixed " + vol(0).string() + " --moving " +
                     vol(0).string() + " --out-json " + json.string() + " --plot-svg " +
                     (dir() / "self.svg").string());
  ASSERT_EQ(r.code, 0) << r.out;
  const auto j = nlohmann::json::parse(slurp(json));
  EXPECT_EQ(j.at("method"), "l1");
  EXPECT_EQ(j.at("z_offset_mm"), 0.0);
  for (const char *k : {"residual", "overlap_mm", "elapsed_s"}) EXPECT_TRUE(j.contains(k));
  EXPECT_TRUE(fs::exists(dir() / "self.svg"));
}

TEST_F(Cli, AlignFastReportsThreeCalls) {
  const auto r = run("--verbose align --method fast --oracle 1,0,0 --fixed " + vol(0).string() +
                     " --moving " + vol(1).string());
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_NE(r.out.find("scorer calls: 3"), std::string::npos) << r.out;
}

TEST_F(Cli, AlignFastaZOnlyGrid) {
  // moving: noiseless crop written to disk
  ssbreg::PhantomSpec s;
  s.dims = {24, 24, 100};
  s.noise_sigma = 0;
  const auto full = ssbreg::make_phantom(s);
  ssbreg::write_volume(full, dir() / "fx.mhd");
  ssbreg::write_volume(ssbreg::crop_subvolume(full, 30, 50), dir() / "mv.mhd");
  const fs::path json = dir() / "fasta.json";
  const auto r = run("align --method fasta --grid 1,1,71 --fixed " + (dir() / "fx.mhd").string() +
                     " --moving " + (dir() / "mv.mhd").string() + " --out-json " + json.string() +
                     " --grid-csv " + (dir() / "grid.csv").string());
  ASSERT_EQ(r.code, 0) << r.out;
  const auto j = nlohmann::json::parse(slurp(json));
  const double cell = (full.extent().z + 50 * 2.0) / 70.0;
  EXPECT_LE(std::abs(j.at("z_offset_mm").get<double>()), cell);
  const std::string grid = slurp(dir() / "grid.csv");
  EXPECT_EQ(std::count(grid.begin(), grid.end(), '\n'), 72);
}

TEST_F(Cli, BenchSmokeAndDeterminism) {
  const std::string base = "--seed 4 bench --volumes " + (dir() / "ph").string() +
                           " --oracle 1,0,2 --pairs 5 --grid 1,1,11 --no-timing --plots 1 --out-dir ";
  auto r = run(base + (dir() / "b1").string());
  ASSERT_EQ(r.code, 0) << r.out;
  const auto j = nlohmann::json::parse(slurp(dir() / "b1" / "summary.json"));
  for (const char *m : {"fast", "l1", "fasta"}) {
    std::size_t total = 0;
    for (const auto &c : j.at(m).at("counts")) total += c.get<std::size_t>();
    EXPECT_EQ(total, 5u) << m;
  }
  EXPECT_FALSE(fs::is_empty(dir() / "b1" / "plots"));
  r = run("--threads 4 " + base + (dir() / "b2").string());
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_EQ(slurp(dir() / "b1" / "pairs.csv"), slurp(dir() / "b2" / "pairs.csv"));
}

TEST_F(Cli, BenchBadThresholds) {
  const auto r = run("bench --volumes " + (dir() / "ph").string() +
                     " --oracle 1,0,0 --thresholds 20,5,80 --out-dir " + (dir() / "bad").string());
  EXPECT_EQ(r.code, 2) << r.out;
}
