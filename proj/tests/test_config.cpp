#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "tcam/config.hpp"

namespace fs = std::filesystem;
using namespace tcam;

namespace {

std::string write_temp(const std::string& name, const std::string& body) {
  const std::string path = (fs::temp_directory_path() / name).string();
  std::ofstream f(path);
  f << body;
  return path;
}

}  // namespace

TEST_CASE("defaults load from an empty document") {
  const RunConfig c = load_config(write_temp("cfg_empty.json", "{}"));
  CHECK(c.seed == 0);
  CHECK(c.tau == 0.5);
  CHECK(c.decoder.n == 1);
  CHECK(c.decoder.loss.lambda_crf == 2e-9);
  CHECK(c.cam.kind == CamKind::LayerCam);
}

TEST_CASE("seed propagates into both training stages") {
  const RunConfig c =
      load_config(write_temp("cfg_seed.json", R"({"seed": 41})"));
  CHECK(c.seed == 41);
  CHECK(c.classifier.seed == 41);
  CHECK(c.decoder.seed == 41);
}

TEST_CASE("unknown keys are rejected at every level") {
  CHECK_THROWS_WITH_AS(
      load_config(write_temp("cfg_bad1.json", R"({"sede": 1})")),
      doctest::Contains("unknown key"), Error);
  CHECK_THROWS_AS(
      load_config(write_temp("cfg_bad2.json",
                             R"({"decoder": {"epohcs": 10}})")),
      Error);
  CHECK_THROWS_AS(
      load_config(write_temp("cfg_bad3.json",
                             R"({"loss": {"lambda": 1.0}})")),
      Error);
  CHECK_THROWS_AS(load_config("/nonexistent/cfg.json"), Error);
}

TEST_CASE("hash is stable and sensitive to every section") {
  RunConfig base;
  const std::string h = base.hash();
  CHECK(h.size() == 16);
  CHECK(RunConfig{}.hash() == h);

  RunConfig seed = base;
  seed.seed = 1;
  CHECK(seed.hash() != h);

  RunConfig dec = base;
  dec.decoder.n = 4;
  CHECK(dec.hash() != h);

  RunConfig loss = base;
  loss.decoder.loss.lambda_crf = 1e-8;
  CHECK(loss.hash() != h);

  RunConfig cam = base;
  cam.cam.kind = CamKind::GradCam;
  CHECK(cam.hash() != h);

  RunConfig t = base;
  t.tau = 0.7;
  CHECK(t.hash() != h);
}

TEST_CASE("save/load round trip preserves the hash") {
  RunConfig c;
  c.seed = 9;
  c.tau = 0.6;
  c.data_dir = "data/synth";
  c.synth.speed = 2.5;
  c.classifier.epochs = 3;
  c.cam.kind = CamKind::GradCam;
  c.decoder.n = 2;
  c.decoder.loss.crf_downsample = 2;

  const std::string path =
      (fs::temp_directory_path() / "cfg_rt.json").string();
  save_config(c, path);
  const RunConfig back = load_config(path);
  CHECK(back.hash() == c.hash());
  CHECK(back.synth.speed == 2.5);
  CHECK(back.decoder.n == 2);
  CHECK(back.cam.kind == CamKind::GradCam);
  CHECK(back.tau == 0.6);
}
