#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <regex>
#include <sstream>

#include "json.hpp"
#include "lithoseg/data/png_io.hpp"
#include "lithoseg/plot/plot.hpp"

using namespace lithoseg;
namespace fs = std::filesystem;

namespace {

struct RunResult {
  int code = -1;
  std::string out, err;
};

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  REQUIRE(bool(f));
  std::ostringstream os;
  os << f.rdbuf();
  return os.str();
}

// Runs the installed binary through the shell, capturing exit code and both
// streams. `env` is prepended verbatim (e.g. "FOO=bar").
RunResult run_cli(const std::string& args, const std::string& env = "") {
  static int counter = 0;
  fs::path dir = fs::temp_directory_path() / "lithoseg_cli_tests";
  fs::create_directories(dir);
  fs::path out = dir / ("out_" + std::to_string(counter) + ".txt");
  fs::path err = dir / ("err_" + std::to_string(counter) + ".txt");
  ++counter;
  std::string cmd = env + (env.empty() ? "" : " ") + LITHOSEG_CLI_PATH + " " + args + " > " +
                    out.string() + " 2> " + err.string();
  int status = std::system(cmd.c_str());
  RunResult r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = slurp(out);
  r.err = slurp(err);
  return r;
}

// A scratch directory per test case, cleaned up on destruction.
struct Scratch {
  fs::path dir;
  Scratch(const char* tag) {
    static int counter = 0;
    dir = fs::temp_directory_path() /
          ("lithoseg_cli_" + std::string(tag) + "_" + std::to_string(counter++));
    fs::remove_all(dir);
    fs::create_directories(dir);
  }
  ~Scratch() { fs::remove_all(dir); }
  std::string operator/(const char* name) const { return (dir / name).string(); }
};

// Shared tiny run used by the train/eval/infer/bench cases below.
const Scratch& trained_run() {
  static Scratch s("trained");
  static bool made = false;
  if (!made) {
    REQUIRE(run_cli("synth --out " + (s / "data") + " --count 6 --size 32 --seed 3").code == 0);
    std::ofstream cfg(s / "cfg.json");
    cfg << R"({"epochs": 1, "augmentation": "none",
               "seg1": {"base_width": 8}, "seg2": {"base_width": 8},
               "dvfnet": {"widths": [4,4,4,4], "refine_width": 4}})";
    cfg.close();
    RunResult r = run_cli("train --config " + (s / "cfg.json") + " --data " + (s / "data") +
                          " --out " + (s / "run"));
    REQUIRE(r.code == 0);
    made = true;
  }
  return s;
}

}  // namespace

TEST_CASE("cli synth: split proportions, manifest and reproducibility") {
  Scratch s("synth");
  RunResult a = run_cli("synth --out " + (s / "a") + " --count 10 --size 32 --seed 11");
  CHECK(a.code == 0);
  CHECK(a.out.find("wrote 10 clips (train 6 / val 2 / test 2)") != std::string::npos);

  CsvTable manifest = read_csv_text(slurp(fs::path(s / "a") / "manifest.csv"));
  CHECK(manifest.rows.size() == 10);
  CHECK(manifest.column("stone_area") == 2);

  // Same flags -> identical manifest bytes.
  RunResult b = run_cli("synth --out " + (s / "b") + " --count 10 --size 32 --seed 11");
  CHECK(b.code == 0);
  CHECK(slurp(fs::path(s / "a") / "manifest.csv") == slurp(fs::path(s / "b") / "manifest.csv"));

  // Clip layout: five frames plus a valid mask.
  fs::path clip = fs::path(s / "a") / "train" / "clip_0000";
  for (int k = 1; k <= 5; ++k) CHECK(fs::exists(clip / ("frame_" + std::to_string(k) + ".png")));
  RawImage mask = read_png((clip / "mask.png").string());
  CHECK(mask.channels == 1);
  for (uint8_t v : mask.data) CHECK(v <= 2);
}

TEST_CASE("cli train: emits bundle, CSVs, plots and a config snapshot") {
  const Scratch& s = trained_run();
  for (const char* f : {"bundle.lsb", "losses.csv", "val_metrics.csv", "config.json",
                        "loss_curves.png", "val_curves.png", "trend_summary.csv"})
    CHECK(fs::exists(fs::path(s / "run") / f));

  // One epoch -> exactly one validation row.
  CsvTable val = read_csv_text(slurp(fs::path(s / "run") / "val_metrics.csv"));
  CHECK(val.rows.size() == 1);
  CHECK(val.header[0] == "epoch");

  // The snapshot records the resolved configuration.
  auto snap = nlohmann::json::parse(slurp(fs::path(s / "run") / "config.json"));
  CHECK(snap["epochs"] == 1);
  CHECK(snap["seg1"]["base_width"] == 8);
  CHECK(snap["wiring"] == "warped_input");  // channel counts derive from this
  CHECK(snap["dataset_root"] == s / "data");
}

TEST_CASE("cli train: config file overrides flags, flags override defaults") {
  const Scratch& t = trained_run();
  Scratch s("prec");
  // Config pins epochs=1; the contradictory flag must lose.
  std::ofstream cfg(s / "cfg.json");
  cfg << R"({"epochs": 1, "augmentation": "none",
             "seg1": {"base_width": 8}, "seg2": {"base_width": 8},
             "dvfnet": {"widths": [4,4,4,4], "refine_width": 4}})";
  cfg.close();
  RunResult r = run_cli("train --config " + (s / "cfg.json") + " --epochs 2 --data " +
                        (t / "data") + " --out " + (s / "run"));
  CHECK(r.code == 0);
  auto snap = nlohmann::json::parse(slurp(fs::path(s / "run") / "config.json"));
  CHECK(snap["epochs"] == 1);

  // Flags override the scale preset's defaults: desk pins width 32 unless a
  // flag says otherwise.
  RunResult r2 = run_cli("train --scale desk --base-width 8 --epochs 1 --augmentation none "
                         "--data " + (t / "data") + " --out " + (s / "run2") + " 2>/dev/null");
  // Desk scale at width 8 still trains the full dvfnet default; keep it quick
  // by checking only the recorded snapshot.
  CHECK(r2.code == 0);
  auto snap2 = nlohmann::json::parse(slurp(fs::path(s / "run2") / "config.json"));
  CHECK(snap2["seg1"]["base_width"] == 8);
  CHECK(snap2["epochs"] == 1);
}

TEST_CASE("cli eval: CSV report on stdout or to a file") {
  const Scratch& s = trained_run();
  RunResult r = run_cli("eval --bundle " + (s / "run/bundle.lsb") + " --data " + (s / "data") +
                        " --split test");
  CHECK(r.code == 0);
  CHECK(r.out.rfind("image,class,dsc,ji,ppv,sensitivity\n", 0) == 0);
  CHECK(r.out.find("mean_dsc_ji") != std::string::npos);

  RunResult rf = run_cli("eval --bundle " + (s / "run/bundle.lsb") + " --data " + (s / "data") +
                         " --split test --out " + (s / "report.csv"));
  CHECK(rf.code == 0);
  CsvTable rep = read_csv_text(slurp(s / "report.csv"));
  CHECK(rep.header == std::vector<std::string>{"image", "class", "dsc", "ji", "ppv",
                                               "sensitivity"});
}

TEST_CASE("cli infer: mask raster with values in {0,1,2}, deterministic") {
  const Scratch& s = trained_run();
  std::string frame = (fs::path(s / "data") / "test" / "clip_0004" / "frame_5.png").string();
  RunResult r = run_cli("infer --bundle " + (s / "run/bundle.lsb") + " --image " + frame +
                        " --out " + (s / "mask.png"));
  CHECK(r.code == 0);
  RawImage mask = read_png(s / "mask.png");
  CHECK(mask.channels == 1);
  CHECK(mask.width == 32);
  for (uint8_t v : mask.data) CHECK(v <= 2);

  RunResult r2 = run_cli("infer --bundle " + (s / "run/bundle.lsb") + " --image " + frame +
                         " --out " + (s / "mask2.png"));
  CHECK(r2.code == 0);
  CHECK(slurp(s / "mask.png") == slurp(s / "mask2.png"));
}

TEST_CASE("cli bench: timing line in the expected format") {
  const Scratch& s = trained_run();
  RunResult r = run_cli("bench --bundle " + (s / "run/bundle.lsb") + " --n 2 --size 32");
  CHECK(r.code == 0);
  // e.g. "hybresunet     0.0021 s / 2 images (973.12 fps)"
  std::regex line(R"(^\w+\s+\d+\.\d{4} s / 2 images \(\d+(\.\d+)? fps\)\s*$)");
  CHECK(std::regex_search(r.out, line));
}

TEST_CASE("cli plot: charts and trend summary from run CSVs") {
  const Scratch& s = trained_run();
  Scratch p("plots");
  RunResult r = run_cli("plot --losses-csv " + (s / "run/losses.csv") + " --val-csv " +
                        (s / "run/val_metrics.csv") + " --manifest " +
                        (fs::path(s / "data") / "manifest.csv").string() + " --out " +
                        (p / "charts") + " --windows 2");
  CHECK(r.code == 0);
  CHECK(r.out.rfind("series,windows,fraction_decreasing,decreasing_90pct\n", 0) == 0);
  for (const char* f : {"loss_curves.png", "trend_summary.csv", "val_curves.png",
                        "size_boxplot.png"})
    CHECK(fs::exists(fs::path(p / "charts") / f));
  CHECK(read_png((fs::path(p / "charts") / "loss_curves.png").string()).width == 640);
}

TEST_CASE("cli errors: single-line messages, nonzero exit, nothing written") {
  Scratch s("errs");
  // Not a bundle file.
  std::ofstream junk(s / "junk.bin");
  junk << "not a bundle";
  junk.close();
  RunResult r1 = run_cli("eval --bundle " + (s / "junk.bin") + " --data " + (s / "nowhere"));
  CHECK(r1.code != 0);
  CHECK(r1.err.rfind("error: ", 0) == 0);
  CHECK(std::count(r1.err.begin(), r1.err.end(), '\n') == 1);

  // Unknown key in the run config fails before the output dir is created.
  std::ofstream bad(s / "bad.json");
  bad << R"({"bogus_key": 1})";
  bad.close();
  RunResult r2 = run_cli("train --config " + (s / "bad.json") + " --data " + (s / "nowhere") +
                         " --out " + (s / "never"));
  CHECK(r2.code != 0);
  CHECK(r2.err.find("unknown key 'bogus_key'") != std::string::npos);
  CHECK(!fs::exists(s / "never"));

  // Missing subcommand / invalid flag values are rejected by the parser.
  CHECK(run_cli("").code != 0);
  CHECK(run_cli("synth --out x --count 0").code != 0);
  CHECK(run_cli("plot").code != 0);
  CHECK(run_cli("train --data d --wiring sideways").code != 0);
}

TEST_CASE("cli: LITHOSEG_OUTPUT_ROOT reroots relative output paths") {
  Scratch s("envroot");
  RunResult r = run_cli("synth --out nested/ds --count 1 --size 32",
                        "LITHOSEG_OUTPUT_ROOT=" + (s / "root"));
  CHECK(r.code == 0);
  CHECK(fs::exists(fs::path(s / "root") / "nested" / "ds" / "manifest.csv"));

  // Absolute paths are taken as-is.
  RunResult r2 = run_cli("synth --out " + (s / "abs") + " --count 1 --size 32",
                         "LITHOSEG_OUTPUT_ROOT=" + (s / "root"));
  CHECK(r2.code == 0);
  CHECK(fs::exists(fs::path(s / "abs") / "manifest.csv"));
}
