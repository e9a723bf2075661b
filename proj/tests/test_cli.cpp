#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <unistd.h>

#include "bufd/checkpoint.hpp"
#include "bufd/cli.hpp"
#include "bufd/image_io.hpp"

using namespace bufd;

namespace {

struct TempDir {
  std::filesystem::path path;
  TempDir() {
    path = std::filesystem::temp_directory_path() /
           ("bufd_cli_" + std::to_string(::getpid()));
    std::filesystem::create_directories(path);
  }
  ~TempDir() { std::filesystem::remove_all(path); }
  std::string file(const std::string& name) const {
    return (path / name).string();
  }
};

}  // namespace

TEST_CASE("run config parsing is strict") {
  CHECK_NOTHROW(parse_run_config(R"({"train": {"epochs": 2}})"));
  CHECK_THROWS_WITH_AS(parse_run_config(R"({"trian": {}})"),
                       doctest::Contains("unknown key"),
                       std::invalid_argument);
  CHECK_THROWS_WITH_AS(parse_run_config(R"({"train": {"epoch": 2}})"),
                       doctest::Contains("unknown key"),
                       std::invalid_argument);
  CHECK_THROWS_AS(parse_run_config("not json"), std::invalid_argument);
  CHECK_THROWS_AS(parse_run_config(R"({"train": {"epochs": 0}})"),
                  std::invalid_argument);

  const RunConfig rc = parse_run_config(
      R"({"synth": {"train_count": 32, "seed": 3},
          "model": {"variant": "fusion", "backbone_depth": 3, "width": 4},
          "train": {"epochs": 2, "batch_size": 8, "seed": 3}})");
  CHECK(rc.model.variant == ModelVariant::fusion);
  CHECK(rc.synth.train_count == 32);
  CHECK(rc.train.batch_size == 8);
}

TEST_CASE("gen-data emits readable samples and a manifest") {
  TempDir dir;
  const int rc = run_cli({"gen-data", "--out", dir.file("d"), "--seed", "5",
                          "--count", "2", "--size", "32"});
  CHECK(rc == 0);
  CHECK(read_image(dir.file("d/clean_000.pgm")).shape() ==
        Shape{1, 1, 32, 32});
  CHECK(read_image(dir.file("d/noisy_001_sigma25.pgm")).shape() ==
        Shape{1, 1, 32, 32});
  const std::string manifest = read_file(dir.file("d/manifest.json"));
  CHECK(manifest.find("\"seed\": 5") != std::string::npos);
}

TEST_CASE("eval determinism: identical seeds give identical bytes") {
  TempDir dir;
  auto run = [&](const std::string& tag) {
    REQUIRE(run_cli({"eval", "--protocol", "table1", "--methods", "optimal",
                     "--seed", "7", "--sigmas", "25", "--count", "3", "--size",
                     "64", "--out-csv", dir.file(tag + ".csv"), "--out-json",
                     dir.file(tag + ".json")}) == 0);
  };
  run("a");
  run("b");
  CHECK(read_file(dir.file("a.csv")) == read_file(dir.file("b.csv")));
  CHECK(read_file(dir.file("a.json")) == read_file(dir.file("b.json")));
  CHECK(read_file(dir.file("a.csv")).find("method,sigma,meanPSNR") !=
        std::string::npos);
}

TEST_CASE("denoise with the closed form at sigma 0 is the identity") {
  TempDir dir;
  REQUIRE(run_cli({"gen-data", "--out", dir.file("d"), "--seed", "1",
                   "--count", "1", "--size", "24"}) == 0);
  const std::string in = dir.file("d/clean_000.pgm");
  REQUIRE(run_cli({"denoise", "--in", in, "--out", dir.file("out.pgm"),
                   "--method", "optimal", "--sigma", "0"}) == 0);
  CHECK(read_image(dir.file("out.pgm")) == read_image(in));
}

TEST_CASE("train subcommand produces a loadable checkpoint") {
  TempDir dir;
  atomic_write(dir.file("cfg.json"),
               R"({"synth": {"train_count": 24, "train_patch": 12, "seed": 9},
                   "model": {"backbone_depth": 2, "width": 2},
                   "train": {"epochs": 1, "batch_size": 8, "seed": 9}})");
  REQUIRE(run_cli({"train", "--config", dir.file("cfg.json"), "--variant",
                   "residual", "--out", dir.file("m.bufd"), "--log",
                   dir.file("log.csv")}) == 0);
  const Checkpoint ck = load_checkpoint(dir.file("m.bufd"));
  CHECK(ck.meta.model.variant == ModelVariant::residual);
  CHECK(ck.meta.train_seed == 9);
  const std::string log = read_file(dir.file("log.csv"));
  CHECK(log.find("epoch,recon_loss") != std::string::npos);

  // the checkpoint drives the denoise subcommand
  REQUIRE(run_cli({"gen-data", "--out", dir.file("d"), "--seed", "2",
                   "--count", "1", "--size", "16"}) == 0);
  CHECK(run_cli({"denoise", "--in", dir.file("d/noisy_000_sigma25.pgm"),
                 "--out", dir.file("den.pgm"), "--model",
                 dir.file("m.bufd")}) == 0);
  CHECK(read_image(dir.file("den.pgm")).shape() == Shape{1, 1, 16, 16});
}

TEST_CASE("noise-level map export for models that predict one") {
  TempDir dir;
  atomic_write(dir.file("cfg.json"),
               R"({"synth": {"train_count": 24, "train_patch": 16, "seed": 4},
                   "model": {"backbone_depth": 2, "noise_head_depth": 1,
                             "width": 2, "fusion_channels": 2},
                   "train": {"epochs": 1, "batch_size": 8, "seed": 4}})");
  REQUIRE(run_cli({"train", "--config", dir.file("cfg.json"), "--variant",
                   "buifd", "--out", dir.file("b.bufd")}) == 0);
  REQUIRE(run_cli({"gen-data", "--out", dir.file("d"), "--seed", "8",
                   "--count", "1", "--size", "20"}) == 0);
  REQUIRE(run_cli({"denoise", "--in", dir.file("d/noisy_000_sigma25.pgm"),
                   "--out", dir.file("den.pgm"), "--model", dir.file("b.bufd"),
                   "--sigma-report", dir.file("level.pgm")}) == 0);
  const Tensor<float> level = read_image(dir.file("level.pgm"));
  CHECK(level.shape() == Shape{1, 1, 20, 20});

  // the closed-form method has no level output to report
  CHECK(run_cli({"denoise", "--in", dir.file("d/noisy_000_sigma25.pgm"),
                 "--out", dir.file("x.pgm"), "--method", "optimal",
                 "--sigma-report", dir.file("no.pgm")}) == 2);
}

TEST_CASE("spatial protocol end to end") {
  TempDir dir;
  REQUIRE(run_cli({"eval", "--protocol", "spatial", "--methods",
                   "optimal,optimal-central", "--sigmas", "25", "--count",
                   "3", "--size", "48", "--seed", "13", "--out-csv",
                   dir.file("s.csv")}) == 0);
  const std::string csv = read_file(dir.file("s.csv"));
  CHECK(csv.find("protocol=spatial") != std::string::npos);
  CHECK(csv.find("optimal-central") != std::string::npos);
}

TEST_CASE("report renders a table from the JSON document") {
  TempDir dir;
  REQUIRE(run_cli({"eval", "--methods", "optimal,noisy", "--sigmas", "15,25",
                   "--count", "2", "--size", "48", "--seed", "3", "--out-json",
                   dir.file("r.json")}) == 0);
  REQUIRE(run_cli({"report", "--in", dir.file("r.json"), "--out",
                   dir.file("r.txt")}) == 0);
  const std::string txt = read_file(dir.file("r.txt"));
  CHECK(txt.find("optimal") != std::string::npos);
  CHECK(txt.find("noisy") != std::string::npos);
}

TEST_CASE("failures exit nonzero with a diagnostic") {
  CHECK(run_cli({"denoise", "--in", "/nonexistent.pgm", "--out",
                 "/tmp/x.pgm", "--method", "optimal"}) != 0);
  CHECK(run_cli({"no-such-command"}) != 0);
  TempDir dir;
  atomic_write(dir.file("bad.json"), R"({"synth": {"bogus_key": 1}})");
  CHECK(run_cli({"train", "--config", dir.file("bad.json"), "--out",
                 dir.file("m.bufd")}) == 2);
}
