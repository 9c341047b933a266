#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "tancount/density.hpp"
#include "tancount/dataset.hpp"
#include "tancount/tensor_io.hpp"

using namespace tancount;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::string cli_bin() {
  const char* bin = std::getenv("TANCOUNT_BIN");
  REQUIRE_MESSAGE(bin != nullptr, "TANCOUNT_BIN must point at the binary");
  return bin;
}

struct RunResult {
  int exit_code = 0;
  std::string out, err;
};

RunResult run(const std::string& args) {
  static int counter = 0;
  fs::path dir = fs::temp_directory_path() / "tancount_cli_io";
  fs::create_directories(dir);
  fs::path out = dir / ("out" + std::to_string(counter) + ".txt");
  fs::path err = dir / ("err" + std::to_string(counter) + ".txt");
  ++counter;
  std::string cmd = cli_bin() + " " + args + " >" + out.string() + " 2>" +
                    err.string();
  int rc = std::system(cmd.c_str());
  RunResult r;
  r.exit_code = WEXITSTATUS(rc);
  auto slurp = [](const fs::path& p) {
    std::ifstream is(p);
    std::ostringstream ss;
    ss << is.rdbuf();
    return ss.str();
  };
  r.out = slurp(out);
  r.err = slurp(err);
  return r;
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag)
      : path(fs::temp_directory_path() / ("tancount_cli_" + tag)) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

std::string read_file(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("params: reports the default budgets") {
  TempDir tmp("params");
  auto r = run("params --out " + (tmp.path / "p.json").string());
  CHECK(r.exit_code == 0);
  json j = json::parse(read_file(tmp.path / "p.json"));
  CHECK(j["lcn"] == 32641);
  CHECK(j["tan"] == 14943);
  CHECK(j["combined"] == 47584);
}

TEST_CASE("synth + gen-density: integrals match authored counts") {
  TempDir tmp("gen");
  fs::path ds = tmp.path / "ds";
  auto r1 = run("synth --out " + ds.string() +
                " --walkers 7 --frames 4 --size 96x64 --seed 11");
  REQUIRE(r1.exit_code == 0);

  SUBCASE("fixed sigma") {
    fs::path dens = tmp.path / "dens";
    auto r2 = run("gen-density --data " + ds.string() + " --out " +
                  dens.string() + " --sigma fixed:15");
    REQUIRE(r2.exit_code == 0);
    for (int t = 0; t < 4; ++t) {
      char name[16];
      std::snprintf(name, sizeof(name), "%06d.tan", t);
      auto grid = load_tensor<float>(dens / "synth" / name);
      CHECK(grid.sum() == doctest::Approx(7.0).epsilon(1e-3));
    }
  }

  SUBCASE("adaptive sigma equals the in-process render bit for bit") {
    fs::path dens = tmp.path / "dens_adaptive";
    auto r2 = run("gen-density --data " + ds.string() + " --out " +
                  dens.string() + " --sigma adaptive --beta 0.3 --knn 3");
    REQUIRE(r2.exit_code == 0);
    Dataset loaded = load_dataset(ds);
    const Frame& f = loaded.sequences[0].frames[0];
    SigmaOptions opt;  // beta 0.3, knn 3 defaults match the flags
    auto expect = render_density(f.ann, adaptive_sigmas(f.ann, opt));
    auto got = load_tensor<float>(dens / "synth" / "000000.tan");
    REQUIRE(got.same_shape(expect.grid));
    for (int64_t i = 0; i < got.size(); ++i)
      CHECK(got[i] == expect.grid[i]);
  }

  SUBCASE("missing annotations file names the path and fails") {
    fs::remove(ds / "synth" / "annotations.jsonl");
    auto r2 = run("gen-density --data " + ds.string() + " --out " +
                  (tmp.path / "x").string());
    CHECK(r2.exit_code != 0);
    CHECK(r2.err.find("annotations.jsonl") != std::string::npos);
  }
}

TEST_CASE("train-lcn: --iters 0 writes the seeded init; seeds reproduce") {
  TempDir tmp("train");
  fs::path ds = tmp.path / "ds";
  REQUIRE(run("synth --out " + ds.string() +
              " --walkers 4 --frames 3 --size 64x48 --seed 5")
              .exit_code == 0);
  fs::path c1 = tmp.path / "c1", c2 = tmp.path / "c2", c3 = tmp.path / "c3";
  auto r1 = run("train-lcn --data " + ds.string() + " --out " + c1.string() +
                " --iters 0 --seed 9 --sigma fixed:4");
  REQUIRE(r1.exit_code == 0);
  CHECK(fs::exists(c1 / "manifest.json"));
  CHECK(fs::exists(c1 / "conv1_w.tan"));

  auto r2 = run("train-lcn --data " + ds.string() + " --out " + c2.string() +
                " --iters 4 --lr 1e-4 --seed 9 --sigma fixed:4");
  auto r3 = run("train-lcn --data " + ds.string() + " --out " + c3.string() +
                " --iters 4 --lr 1e-4 --seed 9 --sigma fixed:4");
  REQUIRE(r2.exit_code == 0);
  REQUIRE(r3.exit_code == 0);
  for (const char* f : {"conv1_w.tan", "conv5_w.tan", "conv9_b.tan"})
    CHECK(read_file(c2 / f) == read_file(c3 / f));
  // Training moved the parameters away from the init.
  CHECK(read_file(c1 / "conv9_b.tan") != read_file(c2 / "conv9_b.tan"));
}

TEST_CASE("infer: single-frame equals fusion on an identical-frames video") {
  TempDir tmp("infer");
  fs::path ds = tmp.path / "ds";
  // Static walkers, no noise: every frame is pixel-identical.
  REQUIRE(run("synth --out " + ds.string() +
              " --walkers 5 --frames 6 --size 64x48 --speed 0 --seed 3")
              .exit_code == 0);
  fs::path lcn = tmp.path / "lcn", tan = tmp.path / "tan";
  REQUIRE(run("train-lcn --data " + ds.string() + " --out " + lcn.string() +
              " --iters 30 --lr 1e-3 --seed 4 --sigma fixed:4")
              .exit_code == 0);
  REQUIRE(run("train-tan --data " + ds.string() + " --out " + tan.string() +
              " --lcn " + lcn.string() +
              " --iters 10 --seed 5 --sigma fixed:4")
              .exit_code == 0);

  auto single = run("infer --data " + ds.string() + " --lcn " + lcn.string() +
                    " --single-frame");
  auto fused = run("infer --data " + ds.string() + " --lcn " + lcn.string() +
                   " --tan " + tan.string());
  REQUIRE(single.exit_code == 0);
  REQUIRE(fused.exit_code == 0);
  std::istringstream s1(single.out), s2(fused.out);
  std::string l1, l2;
  int rows = 0;
  while (std::getline(s1, l1) && std::getline(s2, l2)) {
    double c1 = json::parse(l1)["count"].get<double>();
    double c2 = json::parse(l2)["count"].get<double>();
    CHECK(c1 == doctest::Approx(c2).epsilon(1e-5));
    ++rows;
  }
  CHECK(rows == 6);
}

TEST_CASE("infer: an empty video yields empty output and exit 0") {
  TempDir tmp("empty");
  fs::path ds = tmp.path / "ds";
  fs::create_directories(ds / "seq0" / "frames");
  std::ofstream(ds / "seq0" / "annotations.jsonl").close();
  fs::path lcn = tmp.path / "lcn";
  fs::path source = tmp.path / "src";
  REQUIRE(run("synth --out " + source.string() +
              " --walkers 2 --frames 2 --size 48x48 --seed 1")
              .exit_code == 0);
  REQUIRE(run("train-lcn --data " + source.string() + " --out " +
              lcn.string() + " --iters 0 --seed 1 --sigma fixed:4")
              .exit_code == 0);
  auto r = run("infer --data " + ds.string() + " --lcn " + lcn.string());
  CHECK(r.exit_code == 0);
  CHECK(r.out.empty());
}

TEST_CASE("eval: perfect counts file gives MAE 0; reports reproduce byte-wise") {
  TempDir tmp("eval");
  fs::path ds = tmp.path / "ds";
  REQUIRE(run("synth --out " + ds.string() +
              " --walkers 6 --frames 5 --size 64x48 --seed 13")
              .exit_code == 0);
  fs::path counts = tmp.path / "counts.txt";
  {
    std::ofstream os(counts);
    for (int i = 0; i < 5; ++i) os << 6.0 << '\n';
  }
  fs::path rep1 = tmp.path / "r1.json", rep2 = tmp.path / "r2.json";
  auto r1 = run("eval --data " + ds.string() + " --counts-file " +
                counts.string() + " --out " + rep1.string() +
                " --no-timestamp");
  auto r2 = run("eval --data " + ds.string() + " --counts-file " +
                counts.string() + " --out " + rep2.string() +
                " --no-timestamp");
  REQUIRE(r1.exit_code == 0);
  REQUIRE(r2.exit_code == 0);
  json j = json::parse(read_file(rep1));
  CHECK(j["mae"] == 0.0);
  CHECK(j["mse"] == 0.0);
  CHECK(read_file(rep1) == read_file(rep2));
}

TEST_CASE("bench: report schema and positive throughput") {
  TempDir tmp("bench");
  fs::path rep = tmp.path / "bench.json";
  auto r = run("bench --resolution 64x48 --frames 12 --warmup 2 --threads 1 "
               "--seed 2 --no-timestamp --out " +
               rep.string());
  REQUIRE(r.exit_code == 0);
  json j = json::parse(read_file(rep));
  CHECK(j["resolution"] == "64x48");
  CHECK(j["frames"] == 12);
  CHECK(j["fps"].get<double>() > 0.0);
  CHECK(j["threads"] == 1);
  CHECK(j["precision"] == "f32");
  CHECK(j.contains("config_hash"));
  CHECK(!j.contains("timestamp"));
}

TEST_CASE("TANCOUNT_THREADS env is the fallback for --threads") {
  TempDir tmp("envthreads");
  fs::path rep = tmp.path / "bench.json";
  std::string cmd = "TANCOUNT_THREADS=2 " + cli_bin() +
                    " bench --resolution 48x48 --frames 4 --warmup 1 "
                    "--seed 1 --no-timestamp --out " +
                    rep.string() + " >/dev/null 2>&1";
  REQUIRE(WEXITSTATUS(std::system(cmd.c_str())) == 0);
  json j = json::parse(read_file(rep));
  CHECK(j["threads"] == 2);
}

TEST_CASE("config file provides defaults, flags override") {
  TempDir tmp("config");
  fs::path cfg = tmp.path / "cfg.json";
  {
    std::ofstream os(cfg);
    os << R"({"hidden": 10, "blocks": 2})";
  }
  fs::path rep = tmp.path / "p.json";
  // hidden comes from the config file, blocks from the flag.
  auto r = run("params --config " + cfg.string() + " --blocks 1 --out " +
               rep.string());
  REQUIRE(r.exit_code == 0);
  json j = json::parse(read_file(rep));
  // One block at H=10: 12*100 + 9*10 + 1 = 1291.
  CHECK(j["tan"] == 1291);
  CHECK(j["config"]["hidden"] == 10);
  CHECK(j["config"]["blocks"] == 1);
}
