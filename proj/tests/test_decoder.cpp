#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <random>

#include "tcam/decoder.hpp"
#include "tcam/losses.hpp"

using namespace tcam;

namespace {

Frame random_frame(ImageDomain dom, std::mt19937& rng) {
  std::uniform_real_distribution<float> ud(0.f, 1.f);
  Frame f;
  f.image = Image(dom);
  for (auto& v : f.image.chw) v = ud(rng);
  return f;
}

DecoderModel make_model(unsigned seed = 3) {
  return DecoderModel(Classifier(2, 32, 32, seed), seed);
}

std::vector<Cam> blob_shot(ImageDomain dom, int frames) {
  std::vector<Cam> cams;
  for (int t = 0; t < frames; ++t) {
    Cam c(dom, t, 0);
    for (int y = 4; y < 12; ++y)
      for (int x = 4 + t; x < 12 + t; ++x) c.at(y, x) = 1.f;
    cams.push_back(std::move(c));
  }
  return cams;
}

std::vector<std::vector<float>> snapshot(const std::vector<nn::Param*>& ps) {
  std::vector<std::vector<float>> out;
  for (auto* p : ps) out.push_back(p->value);
  return out;
}

}  // namespace

TEST_CASE("decoder output is a per-pixel distribution at frame resolution") {
  DecoderModel model = make_model();
  std::mt19937 rng(1);
  const Frame f = random_frame(ImageDomain(32, 32), rng);
  const SoftmaxMaps maps = decoder_forward(model, f);
  CHECK(maps.dom == f.image.dom);
  for (int p = 0; p < maps.dom.area(); ++p) {
    CHECK(maps.background[p] >= 0.f);
    CHECK(maps.foreground[p] >= 0.f);
    CHECK(maps.background[p] + maps.foreground[p] ==
          doctest::Approx(1.f).epsilon(1e-6));
  }
}

TEST_CASE("decoder evaluation is bit-identical across runs") {
  std::mt19937 rng(2);
  const Frame f = random_frame(ImageDomain(32, 32), rng);
  DecoderModel a = make_model(9), b = make_model(9);
  const SoftmaxMaps ma = decoder_forward(a, f);
  const SoftmaxMaps mb = decoder_forward(b, f);
  CHECK(ma.foreground == mb.foreground);
  CHECK(decoder_forward(a, f).foreground == ma.foreground);
}

TEST_CASE("decoder accepts sizes other than the encoder default") {
  DecoderModel model = make_model();
  std::mt19937 rng(3);
  const Frame f = random_frame(ImageDomain(64, 48), rng);
  const SoftmaxMaps maps = decoder_forward(model, f);
  CHECK(maps.dom == ImageDomain(64, 48));
}

TEST_CASE("train_step leaves the encoder untouched") {
  DecoderModel model = make_model();
  std::mt19937 rng(4);
  Frame f = random_frame(ImageDomain(32, 32), rng);
  f.frame_index = 2;
  const auto shot = blob_shot(f.image.dom, 4);

  const auto enc_before = snapshot(model.encoder.params());
  const auto dec_before = snapshot(model.decoder_params());
  DecoderTrainConfig cfg;
  cfg.resize_to = 32;
  cfg.crop_to = 32;
  cfg.loss.lambda_crf = 1e-4;
  for (int i = 0; i < 3; ++i) train_step(model, f, shot, cfg, 1.0, rng);

  CHECK(snapshot(model.encoder.params()) == enc_before);
  CHECK(snapshot(model.decoder_params()) != dec_before);
}

TEST_CASE("disabling every loss term freezes the decoder too") {
  DecoderModel model = make_model();
  std::mt19937 rng(5);
  Frame f = random_frame(ImageDomain(32, 32), rng);
  f.frame_index = 1;
  const auto shot = blob_shot(f.image.dom, 4);

  DecoderTrainConfig cfg;
  cfg.resize_to = 32;
  cfg.crop_to = 32;
  cfg.use_pixel_loss = false;
  cfg.use_size_loss = false;
  cfg.use_crf_loss = false;

  const auto before = snapshot(model.decoder_params());
  const LossBreakdown bd = train_step(model, f, shot, cfg, 1.0, rng);
  CHECK(bd.partial_ce == 0.0);
  CHECK(bd.size_barrier == 0.0);
  CHECK(bd.crf == 0.0);
  CHECK(bd.total == 0.0);
  CHECK(snapshot(model.decoder_params()) == before);
}

TEST_CASE("train_step breakdown composes and is seed-reproducible") {
  std::mt19937 rng_a(6), rng_b(6);
  Frame f;
  {
    std::mt19937 rng(7);
    f = random_frame(ImageDomain(32, 32), rng);
  }
  f.frame_index = 3;
  const auto shot = blob_shot(f.image.dom, 4);

  DecoderTrainConfig cfg;
  cfg.resize_to = 32;
  cfg.crop_to = 32;
  cfg.loss.lambda_crf = 0.5;
  cfg.loss.barrier_t = 2.0;

  DecoderModel a = make_model(13), b = make_model(13);
  const LossBreakdown ba = train_step(a, f, shot, cfg, 2.0, rng_a);
  const LossBreakdown bb = train_step(b, f, shot, cfg, 2.0, rng_b);
  CHECK(ba.total == bb.total);
  CHECK(snapshot(a.decoder_params()) == snapshot(b.decoder_params()));
  CHECK(ba.total ==
        doctest::Approx(ba.partial_ce + 0.5 * ba.crf + ba.size_barrier)
            .epsilon(1e-9));
  CHECK(ba.partial_ce > 0.0);
  CHECK(ba.crf > 0.0);
}

TEST_CASE("decoder parameter gradients match finite differences") {
  DecoderModel model = make_model(17);
  std::mt19937 rng(8);
  const Frame f = random_frame(ImageDomain(32, 32), rng);
  PseudoLabelMask mask(f.image.dom);
  mask.labels[100] = kForeground;
  mask.labels[900] = kBackground;
  LossConfig cfg;
  cfg.lambda_crf = 0.1;
  cfg.barrier_t = 2.0;

  auto eval = [&]() {
    const SoftmaxMaps maps = decoder_forward(model, f);
    return total_loss(&mask, maps, f.image, cfg).total;
  };
  auto eval_grad = [&]() {
    const SoftmaxMaps maps = decoder_forward(model, f);
    SoftmaxMaps g;
    total_loss(&mask, maps, f.image, cfg, &g);
    nn::Tensor d(1, 2, f.image.dom.height, f.image.dom.width);
    std::copy(g.background.begin(), g.background.end(), d.data.begin());
    std::copy(g.foreground.begin(), g.foreground.end(),
              d.data.begin() + f.image.dom.area());
    nn::Sgd::zero_grad(model.decoder_params());
    model.backward_batch(d);
  };
  eval_grad();

  auto fd_at = [&](float* slot, float v, float h) {
    const float vp = v + h, vm = v - h;
    *slot = vp;
    const double lp = eval();
    *slot = vm;
    const double lm = eval();
    *slot = v;
    return (lp - lm) / (double(vp) - double(vm));
  };
  for (nn::Param* p : {&model.conv_out.weight, &model.conv_full.bias,
                       &model.conv_s4.weight}) {
    const std::vector<float> grad = p->grad;
    std::uniform_int_distribution<std::size_t> pick(0, p->value.size() - 1);
    for (int probe = 0; probe < 4; ++probe) {
      const std::size_t i = pick(rng);
      const float v = p->value[i];
      const double fd1 = fd_at(&p->value[i], v, 1e-2f);
      const double fd2 = fd_at(&p->value[i], v, 5e-3f);
      // Probes whose estimate is step-size dependent straddle a ReLU kink.
      if (std::abs(fd1 - fd2) > 1e-3 * std::max(1.0, std::abs(fd2))) continue;
      CHECK(std::abs(double(grad[i]) - fd2) <=
            5e-3 * std::max(1.0, std::abs(fd2)));
    }
  }
}

TEST_CASE("cam store round trip") {
  namespace fs = std::filesystem;
  const std::string dir =
      (fs::temp_directory_path() / "camstore_test").string();
  fs::create_directories(dir);

  VideoRecord video;
  video.video_id = "v0";
  video.class_id = 1;
  ShotRecord shot;
  shot.shot_id = "s0";
  NamedArrays arrays;
  std::vector<Cam> want;
  std::mt19937 rng(9);
  std::uniform_real_distribution<float> ud(0.f, 1.f);
  for (int t = 0; t < 3; ++t) {
    Cam c(ImageDomain(8, 8), t, 1);
    for (auto& v : c.values) v = ud(rng);
    char name[8];
    std::snprintf(name, sizeof(name), "f%03d", t);
    arrays[name] = ArrayData::from_floats(c.values, {8, 8});
    FrameRecord fr;
    fr.frame_index = t;
    shot.frames.push_back(fr);
    want.push_back(std::move(c));
  }
  video.shots.push_back(shot);
  save_arrays(CamStore::shot_file(dir, "v0", "s0"), arrays);

  const CamStore store(dir);
  const auto got = store.shot_cams(video, video.shots[0]);
  REQUIRE(got.size() == 3);
  for (int t = 0; t < 3; ++t) {
    CHECK(got[t].values == want[t].values);
    CHECK(got[t].frame_index == t);
    CHECK(got[t].class_id == 1);
  }
}

TEST_CASE("decoder save/load round trip") {
  const std::string path =
      (std::filesystem::temp_directory_path() / "dec.arrs").string();
  DecoderModel model = make_model(21);
  std::mt19937 rng(10);
  const Frame f = random_frame(ImageDomain(32, 32), rng);
  const SoftmaxMaps before = decoder_forward(model, f);
  save_decoder(model, path);
  DecoderModel loaded = load_decoder(path);
  const SoftmaxMaps after = decoder_forward(loaded, f);
  CHECK(after.foreground == before.foreground);
  CHECK(after.background == before.background);
}
