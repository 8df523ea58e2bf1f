#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "fbsr/volume.hpp"

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <sys/wait.h>
#include <vector>

// End-to-end checks of the command-line driver as a subprocess: exit codes,
// artifact layout, and byte-level reproducibility of a rerun.

namespace fs = std::filesystem;

namespace {

struct CliResult {
  int exit_code = -1;
  std::string output;
};

CliResult run_cli(const std::string& args) {
  const std::string cmd = std::string(FBSR_CLI_PATH) + " " + args + " 2>&1";
  CliResult result;
  FILE* pipe = popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  char buffer[512];
  while (fgets(buffer, sizeof buffer, pipe) != nullptr) result.output += buffer;
  const int status = pclose(pipe);
  result.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return result;
}

fs::path sandbox() {
  static const fs::path root = [] {
    const fs::path p = fs::temp_directory_path() / "fbsr_cli_test";
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
  }();
  return root;
}

std::vector<char> file_bytes(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  REQUIRE(is.good());
  return std::vector<char>(std::istreambuf_iterator<char>(is),
                           std::istreambuf_iterator<char>());
}

std::string file_text(const fs::path& path) {
  const auto bytes = file_bytes(path);
  return std::string(bytes.begin(), bytes.end());
}

// Small, fast settings shared by the happy-path pipeline tests.
const std::string kTinySim =
    "--set phantom.nx=24 --set phantom.ny=24 --set phantom.nz=12 "
    "--set acq.fwhm=2 --set acq.gap=0 --seed 5";
const std::string kTinyStage1 = "--set stage1.steps=40 --set stage1.batch=4";
const std::string kTinyStage2 =
    "--set stage2.steps=30 --set stage2.batch=2 --set stage2.pairs=16 "
    "--set stage2.patch=8 --set stage2.blocks=1 --set stage2.features=2";

}  // namespace

TEST_CASE("help exits cleanly") {
  CHECK(run_cli("--help").exit_code == 0);
  CHECK(run_cli("simulate --help").exit_code == 0);
}

TEST_CASE("unknown and malformed configuration keys exit with code 2") {
  const fs::path out = sandbox() / "bad_key";
  const CliResult unknown =
      run_cli("simulate --out " + out.string() + " --set bogus.key=1");
  CHECK(unknown.exit_code == 2);
  CHECK(unknown.output.find("bogus.key") != std::string::npos);

  const CliResult malformed =
      run_cli("simulate --out " + out.string() + " --set nonsense");
  CHECK(malformed.exit_code == 2);

  const CliResult missing_input =
      run_cli("simulate --out " + out.string() +
              " --set input.volume=/nonexistent/path.fbv1");
  CHECK(missing_input.exit_code == 2);
  CHECK(missing_input.output.find("input.volume") != std::string::npos);
}

TEST_CASE("indivisible through extent exits with code 2") {
  const fs::path out = sandbox() / "indivisible";
  const CliResult r = run_cli(
      "simulate --out " + out.string() +
      " --set phantom.nx=8 --set phantom.ny=8 --set phantom.nz=9 "
      "--set acq.fwhm=2 --set acq.gap=0");
  CHECK(r.exit_code == 2);
}

TEST_CASE("missing prerequisites exit with code 3") {
  const fs::path out = sandbox() / "no_inputs";
  fs::create_directories(out);
  const CliResult stage1 = run_cli("stage1 --out " + out.string());
  CHECK(stage1.exit_code == 3);
  CHECK(stage1.output.find("lr") != std::string::npos);

  const CliResult sr = run_cli("sr --out " + out.string());
  CHECK(sr.exit_code == 3);
}

TEST_CASE("tiny pipeline runs end to end with the documented artifacts") {
  const fs::path run = sandbox() / "run";
  const std::string out = " --out " + run.string() + " ";

  const CliResult sim = run_cli("simulate" + out + kTinySim);
  INFO(sim.output);
  REQUIRE(sim.exit_code == 0);
  for (const char* name :
       {"gt.fbv1", "lr.fbv1", "meta.txt", "config.resolved.txt", "inputs.txt",
        "log.txt"})
    CHECK(fs::exists(run / name));
  const fbsr::Volume lr = fbsr::load_volume(run / "lr.fbv1");
  CHECK(lr.dims == std::array<Eigen::Index, 3>{24, 24, 6});
  CHECK(lr.spacing[2] == 2.0f);
  CHECK(file_text(run / "meta.txt").find("m=2") != std::string::npos);

  const CliResult s1 =
      run_cli("stage1" + out + kTinySim + " " + kTinyStage1);
  INFO(s1.output);
  REQUIRE(s1.exit_code == 0);
  CHECK(fs::exists(run / "bank.fbk1"));
  const std::string trace1 = file_text(run / "stage1_trace.csv");
  CHECK(trace1.rfind("step,lr,loss", 0) == 0);

  const CliResult s2 =
      run_cli("stage2" + out + kTinySim + " " + kTinyStage2);
  INFO(s2.output);
  REQUIRE(s2.exit_code == 0);
  CHECK(fs::exists(run / "model.rgr1"));
  CHECK(fs::exists(run / "stage2_trace.csv"));

  const CliResult sr = run_cli("sr" + out + kTinySim);
  INFO(sr.output);
  REQUIRE(sr.exit_code == 0);
  const fbsr::Volume upsampled = fbsr::load_volume(run / "sr.fbv1");
  CHECK(upsampled.dims == std::array<Eigen::Index, 3>{24, 24, 12});
  CHECK(upsampled.spacing[2] == 1.0f);

  const CliResult ev = run_cli("eval" + out + kTinySim +
                               " --set eval.cubic=true --set eval.spectrum=true");
  INFO(ev.output);
  REQUIRE(ev.exit_code == 0);
  const std::string csv = file_text(run / "metrics.csv");
  CHECK(csv.find("zero_fill,") != std::string::npos);
  CHECK(csv.find("zero_detail,") != std::string::npos);
  CHECK(csv.find("cubic,") != std::string::npos);
  CHECK(csv.find("proposed,") != std::string::npos);
  CHECK(fs::exists(run / "metrics.txt"));
  CHECK(fs::exists(run / "spectrum_gt.pgm"));
  CHECK(fs::exists(run / "spectrum_proposed.pgm"));

  // The inputs manifest records a hash per consumed artifact.
  const std::string manifest = file_text(run / "inputs.txt");
  CHECK(manifest.find("fnv1a64 ") != std::string::npos);
  CHECK(manifest.find("sr.fbv1") != std::string::npos);
}

TEST_CASE("reruns with the same seed are byte-identical") {
  const fs::path a = sandbox() / "rerun_a";
  const fs::path b = sandbox() / "rerun_b";
  for (const fs::path& dir : {a, b}) {
    const std::string out = " --out " + dir.string() + " ";
    REQUIRE(run_cli("simulate" + out + kTinySim).exit_code == 0);
    REQUIRE(run_cli("stage1" + out + kTinySim + " " + kTinyStage1).exit_code == 0);
    REQUIRE(run_cli("stage2" + out + kTinySim + " " + kTinyStage2).exit_code == 0);
    REQUIRE(run_cli("sr" + out + kTinySim).exit_code == 0);
  }
  // config.resolved.txt is excluded: the resolved defaults embed the run
  // directory in the artifact paths, which is the one intended difference.
  for (const char* name : {"gt.fbv1", "lr.fbv1", "bank.fbk1",
                           "stage1_trace.csv", "model.rgr1",
                           "stage2_trace.csv", "sr.fbv1"})
    CHECK(file_bytes(a / name) == file_bytes(b / name));
}

TEST_CASE("eval rejects mismatched volume shapes with code 2") {
  const fs::path run = sandbox() / "run";  // reuse the pipeline artifacts
  REQUIRE(fs::exists(run / "sr.fbv1"));
  const CliResult r = run_cli("eval --out " + (sandbox() / "bad_eval").string() +
                              " " + kTinySim + " --set in.gt=" +
                              (run / "lr.fbv1").string() + " --set in.lr=" +
                              (run / "lr.fbv1").string() + " --set in.bank=" +
                              (run / "bank.fbk1").string() + " --set in.sr=" +
                              (run / "sr.fbv1").string());
  CHECK(r.exit_code == 2);
}

TEST_CASE("the acquisition grid emits nine labeled rows") {
  const fs::path out = sandbox() / "grid";
  const CliResult r = run_cli(
      "grid --out " + out.string() +
      " --seed 3 --set grid.volumes=1 --set grid.slices=2"
      " --set phantom.nx=48 --set phantom.ny=48"
      " --set stage1.steps=5 --set stage1.batch=2 --set stage1.length=21"
      " --set stage2.steps=5 --set stage2.batch=2 --set stage2.pairs=4"
      " --set stage2.patch=4 --set stage2.blocks=1 --set stage2.features=2");
  INFO(r.output);
  REQUIRE(r.exit_code == 0);

  const std::string csv = file_text(out / "grid.csv");
  std::size_t rows = 0;
  for (char c : csv) rows += c == '\n' ? 1 : 0;
  CHECK(rows == 10);  // header + 9 cells
  CHECK(csv.find("2\xE2\x8A\x95") != std::string::npos);  // "2(+)0" label
  CHECK(csv.find("6\xE2\x8A\x95" "2,8,") != std::string::npos);  // M = 8 cell
  // One volume per cell: the spread columns are exactly zero, and no
  // significance test is attempted.
  CHECK(csv.find(",0,") != std::string::npos);
}
