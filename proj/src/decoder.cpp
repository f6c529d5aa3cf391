#include "tcam/decoder.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <unordered_map>

#include <json.hpp>

#include "tcam/localize.hpp"
#include "tcam/temporal.hpp"

namespace fs = std::filesystem;

namespace tcam {

namespace {

nn::Tensor concat_channels(const nn::Tensor& a, const nn::Tensor& b) {
  if (a.n != b.n || a.h != b.h || a.w != b.w)
    throw Error("concat: spatial mismatch");
  nn::Tensor out(a.n, a.c + b.c, a.h, a.w);
  for (int i = 0; i < a.n; ++i) {
    std::memcpy(out.sample(i), a.sample(i), sizeof(float) * a.sample_size());
    std::memcpy(out.sample(i) + a.sample_size(), b.sample(i),
                sizeof(float) * b.sample_size());
  }
  return out;
}

nn::Tensor take_first_channels(const nn::Tensor& x, int c) {
  nn::Tensor out(x.n, c, x.h, x.w);
  for (int i = 0; i < x.n; ++i)
    std::memcpy(out.sample(i), x.sample(i), sizeof(float) * out.sample_size());
  return out;
}

nn::Tensor take_last_channels(const nn::Tensor& x, int c) {
  nn::Tensor out(x.n, c, x.h, x.w);
  const std::size_t skip = std::size_t(x.c - c) * x.plane();
  for (int i = 0; i < x.n; ++i)
    std::memcpy(out.sample(i), x.sample(i) + skip,
                sizeof(float) * out.sample_size());
  return out;
}

// Standardizes each channel of each sample to zero mean, unit variance.
// The encoder taps are frozen activations with arbitrary magnitudes; putting
// them on the image skip's scale keeps the decoder optimization conditioned.
// No backward needed: gradients into the encoder are dropped anyway.
nn::Tensor standardize(nn::Tensor x) {
  const int plane = x.plane();
  for (int i = 0; i < x.n; ++i)
    for (int c = 0; c < x.c; ++c) {
      float* p = x.sample(i) + std::size_t(c) * plane;
      double mean = 0.0;
      for (int q = 0; q < plane; ++q) mean += p[q];
      mean /= plane;
      double var = 0.0;
      for (int q = 0; q < plane; ++q) var += (p[q] - mean) * (p[q] - mean);
      const float inv = float(1.0 / std::sqrt(var / plane + 1e-5));
      for (int q = 0; q < plane; ++q) p[q] = (p[q] - float(mean)) * inv;
    }
  return x;
}

}  // namespace

DecoderModel::DecoderModel(Classifier enc, unsigned seed)
    : DecoderModel(std::move(enc), std::mt19937(seed ^ 0x5bd1e995u)) {}

// Delegation target lives only in this TU.
DecoderModel::DecoderModel(Classifier enc, std::mt19937 rng)
    : encoder(std::move(enc)),
      conv_s8(Backbone::kOutChannels + 64, 64, 3, 1, 1, rng),
      conv_s4(64 + 32, 32, 3, 1, 1, rng),
      conv_img(3, 16, 3, 1, 1, rng),
      conv_full(32 + 16, 32, 3, 1, 1, rng),
      conv_out(32, 2, 1, 1, 0, rng),
      up_to_s8(1, 1),
      up_to_s4(1, 1),
      up_to_full(1, 1) {}

std::vector<nn::Param*> DecoderModel::decoder_params() {
  return {&conv_s8.weight,   &conv_s8.bias,   &conv_s4.weight,  &conv_s4.bias,
          &conv_img.weight,  &conv_img.bias,  &conv_full.weight,
          &conv_full.bias,   &conv_out.weight, &conv_out.bias};
}

nn::Tensor DecoderModel::forward_batch(const nn::Tensor& x) {
  Backbone::Features f = encoder.backbone.forward(x);
  const nn::Tensor s16 = standardize(f.s16);
  const nn::Tensor s8 = standardize(f.s8);
  const nn::Tensor s4 = standardize(f.s4);

  up_to_s8.out_h = s8.h;
  up_to_s8.out_w = s8.w;
  nn::Tensor a = relu_s8.forward(
      conv_s8.forward(concat_channels(up_to_s8.forward(s16), s8)));

  up_to_s4.out_h = s4.h;
  up_to_s4.out_w = s4.w;
  nn::Tensor b = relu_s4.forward(
      conv_s4.forward(concat_channels(up_to_s4.forward(a), s4)));

  up_to_full.out_h = x.h;
  up_to_full.out_w = x.w;
  // Full-resolution image stem: gives the raw-pixel pathway learnable
  // features of its own, so fine appearance can compete with the upsampled
  // (and heavily smoothed) coarse features.
  nn::Tensor e = relu_img.forward(conv_img.forward(x));
  nn::Tensor c = relu_full.forward(
      conv_full.forward(concat_channels(up_to_full.forward(b), e)));
  nn::Tensor logits = conv_out.forward(c);

  // Per-pixel two-way softmax.
  maps_ = nn::Tensor(logits.n, 2, logits.h, logits.w);
  const int plane = logits.plane();
  for (int i = 0; i < logits.n; ++i) {
    const float* z = logits.sample(i);
    float* s = maps_.sample(i);
    for (int p = 0; p < plane; ++p) {
      const float z0 = z[p], z1 = z[plane + p];
      const float m = std::max(z0, z1);
      const float e0 = std::exp(z0 - m), e1 = std::exp(z1 - m);
      s[p] = e0 / (e0 + e1);
      s[plane + p] = e1 / (e0 + e1);
    }
  }
  return maps_;
}

void DecoderModel::backward_batch(const nn::Tensor& d_maps) {
  if (!d_maps.same_shape(maps_)) throw Error("backward_batch: shape mismatch");
  nn::Tensor d_logits(d_maps.n, 2, d_maps.h, d_maps.w);
  const int plane = d_maps.plane();
  for (int i = 0; i < d_maps.n; ++i) {
    const float* s = maps_.sample(i);
    const float* g = d_maps.sample(i);
    float* dz = d_logits.sample(i);
    for (int p = 0; p < plane; ++p) {
      const float s0 = s[p], s1 = s[plane + p];
      const float common = s0 * s1 * (g[p] - g[plane + p]);
      dz[p] = common;
      dz[plane + p] = -common;
    }
  }
  nn::Tensor d_c = relu_full.backward(conv_out.backward(d_logits));
  nn::Tensor d_cat_full = conv_full.backward(d_c);
  nn::Tensor d_b = up_to_full.backward(take_first_channels(d_cat_full, 32));
  conv_img.backward(relu_img.backward(take_last_channels(d_cat_full, 16)));
  nn::Tensor d_cat4 = conv_s4.backward(relu_s4.backward(d_b));
  nn::Tensor d_a = up_to_s4.backward(take_first_channels(d_cat4, 64));
  conv_s8.backward(relu_s8.backward(d_a));
  // Gradients into the encoder taps are dropped: the encoder is frozen.
}

SoftmaxMaps decoder_forward(DecoderModel& model, const Frame& frame) {
  nn::Tensor maps = model.forward_batch(frame_to_tensor(frame));
  SoftmaxMaps out(frame.image.dom);
  const int plane = maps.plane();
  std::copy(maps.data.begin(), maps.data.begin() + plane, out.background.begin());
  std::copy(maps.data.begin() + plane, maps.data.begin() + 2 * plane,
            out.foreground.begin());
  return out;
}

// --- CAM cache ----------------------------------------------------------------

std::string CamStore::shot_file(const std::string& dir,
                                const std::string& video_id,
                                const std::string& shot_id) {
  return (fs::path(dir) / (video_id + "__" + shot_id + ".arrs")).string();
}

std::vector<Cam> CamStore::shot_cams(const VideoRecord& video,
                                     const ShotRecord& shot) const {
  NamedArrays arrays =
      load_arrays(shot_file(dir_, video.video_id, shot.shot_id));
  std::vector<Cam> cams;
  for (const auto& rec : shot.frames) {
    char name[16];
    std::snprintf(name, sizeof(name), "f%03d", rec.frame_index);
    auto it = arrays.find(name);
    if (it == arrays.end())
      throw Error("CamStore: missing CAM for frame " +
                  std::to_string(rec.frame_index));
    const auto& a = it->second;
    if (a.shape.size() != 2) throw Error("CamStore: bad CAM shape");
    Cam cam(ImageDomain(int(a.shape[0]), int(a.shape[1])), rec.frame_index,
            video.class_id);
    cam.values = a.to_floats();
    cams.push_back(std::move(cam));
  }
  return cams;
}

void dump_cams(Classifier& classifier, const CamMethod& method,
               const VideoManifest& manifest, const std::string& manifest_dir,
               const std::string& cams_dir) {
  fs::create_directories(cams_dir);
  for (const auto& video : manifest.videos) {
    for (const auto& shot : video.shots) {
      NamedArrays arrays;
      for (const auto& rec : shot.frames) {
        Frame frame = load_frame(manifest_dir, video, shot, rec);
        if (frame.image.dom.height != classifier.input_h ||
            frame.image.dom.width != classifier.input_w)
          frame.image = resize_image(
              frame.image, ImageDomain(classifier.input_h, classifier.input_w));
        Cam cam = extract_cam(classifier, method, frame, video.class_id);
        char name[16];
        std::snprintf(name, sizeof(name), "f%03d", rec.frame_index);
        arrays[name] = ArrayData::from_floats(
            cam.values, {cam.dom.height, cam.dom.width});
      }
      save_arrays(CamStore::shot_file(cams_dir, video.video_id, shot.shot_id),
                  arrays);
    }
  }
}

// --- training -------------------------------------------------------------------

namespace {

struct ClipSample {
  Frame frame;          // X_t at training resolution (after crop)
  Cam aggregated;       // CAM-TMP output, cropped with the frame
};

Frame crop_frame(const Frame& f, int oy, int ox, int size) {
  Frame out = f;
  out.image = Image(ImageDomain(size, size));
  const int plane_in = f.image.dom.area();
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < size; ++y)
      for (int x = 0; x < size; ++x)
        out.image.chw[(c * size + y) * size + x] =
            f.image.chw[c * plane_in + (y + oy) * f.image.dom.width + (x + ox)];
  return out;
}

Cam crop_cam(const Cam& c, int oy, int ox, int size) {
  Cam out(ImageDomain(size, size), c.frame_index, c.class_id);
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x)
      out.at(y, x) = c.at(y + oy, x + ox);
  return out;
}

// Aggregate, sample a consistent crop, and package one training clip.
ClipSample make_clip(const Frame& frame, const std::vector<Cam>& shot_cams,
                     const DecoderTrainConfig& cfg, std::mt19937& rng) {
  CamSequence seq = select_sequence(shot_cams, frame.frame_index, cfg.n);
  Cam agg = cam_tmp(seq);

  ClipSample clip{frame, std::move(agg)};
  const int fh = frame.image.dom.height;
  if (cfg.crop_to < fh) {
    std::uniform_int_distribution<int> dy(0, fh - cfg.crop_to);
    std::uniform_int_distribution<int> dx(0, frame.image.dom.width - cfg.crop_to);
    const int oy = dy(rng), ox = dx(rng);
    clip.frame = crop_frame(frame, oy, ox, cfg.crop_to);
    clip.aggregated = crop_cam(clip.aggregated, oy, ox, cfg.crop_to);
  }
  return clip;
}

// Loss + gradient for one clip; honors the per-term ablation switches.
LossBreakdown clip_loss(DecoderModel& model, const ClipSample& clip,
                        const DecoderTrainConfig& cfg, double barrier_t,
                        std::mt19937& rng, nn::Tensor* d_maps_out) {
  std::optional<PseudoLabelMask> mask;
  if (cfg.use_pixel_loss) {
    RegionSplit split = split_regions(clip.aggregated);
    if (!split.degenerate)
      mask = sample_pseudo_labels(split, clip.aggregated, rng);
  }

  nn::Tensor maps_t = model.forward_batch(frame_to_tensor(clip.frame));
  SoftmaxMaps maps(clip.frame.image.dom);
  const int plane = maps_t.plane();
  std::copy(maps_t.data.begin(), maps_t.data.begin() + plane,
            maps.background.begin());
  std::copy(maps_t.data.begin() + plane, maps_t.data.begin() + 2 * plane,
            maps.foreground.begin());

  LossBreakdown bd;
  SoftmaxMaps g_ce, g_size, g_crf;
  if (mask) bd.partial_ce = partial_cross_entropy(*mask, maps, &g_ce);
  if (cfg.use_size_loss)
    bd.size_barrier = size_barrier(maps, barrier_t, &g_size);
  if (cfg.use_crf_loss)
    bd.crf = crf_loss(maps, clip.frame.image, cfg.loss, &g_crf);
  bd.total = bd.partial_ce + cfg.loss.lambda_crf * bd.crf + bd.size_barrier;
  if (!std::isfinite(bd.total)) throw Error("train: non-finite loss");

  if (d_maps_out) {
    *d_maps_out = nn::Tensor(1, 2, clip.frame.image.dom.height,
                             clip.frame.image.dom.width);
    for (int p = 0; p < plane; ++p) {
      float gb = 0.f, gf = 0.f;
      if (mask) {
        gb += g_ce.background[p];
        gf += g_ce.foreground[p];
      }
      if (cfg.use_size_loss) {
        gb += g_size.background[p];
        gf += g_size.foreground[p];
      }
      if (cfg.use_crf_loss) {
        gb += float(cfg.loss.lambda_crf) * g_crf.background[p];
        gf += float(cfg.loss.lambda_crf) * g_crf.foreground[p];
      }
      d_maps_out->data[p] = gb;
      d_maps_out->data[plane + p] = gf;
    }
  }
  return bd;
}

}  // namespace

LossBreakdown train_step(DecoderModel& model, const Frame& frame,
                         const std::vector<Cam>& shot_cams,
                         const DecoderTrainConfig& cfg, double barrier_t,
                         std::mt19937& rng) {
  ClipSample clip = make_clip(frame, shot_cams, cfg, rng);
  nn::Tensor d_maps;
  LossBreakdown bd = clip_loss(model, clip, cfg, barrier_t, rng, &d_maps);

  auto params = model.decoder_params();
  nn::Sgd::zero_grad(params);
  model.backward_batch(d_maps);
  nn::Sgd(cfg.lr).step(params);
  return bd;
}

std::vector<EpochMetrics> train_decoder(DecoderModel& model,
                                        const VideoManifest& manifest,
                                        const std::string& manifest_dir,
                                        const CamStore& cams,
                                        const DecoderTrainConfig& cfg) {
  struct ShotRef {
    const VideoRecord* video;
    const ShotRecord* shot;
  };
  std::vector<ShotRef> shots;
  for (const auto* v : manifest.split_videos("train"))
    for (const auto& s : v->shots) shots.push_back({v, &s});
  if (shots.empty()) throw Error("train_decoder: empty train split");

  std::unordered_map<std::string, Image> image_cache;
  auto load_image = [&](const FrameRecord& rec) -> const Image& {
    auto it = image_cache.find(rec.path);
    if (it == image_cache.end()) {
      Image img = load_png((fs::path(manifest_dir) / rec.path).string());
      if (img.dom.height != cfg.resize_to || img.dom.width != cfg.resize_to)
        img = resize_image(img, ImageDomain(cfg.resize_to, cfg.resize_to));
      it = image_cache.emplace(rec.path, std::move(img)).first;
    }
    return it->second;
  };
  std::unordered_map<std::string, std::vector<Cam>> cam_cache;
  auto load_cams = [&](const ShotRef& sr) -> const std::vector<Cam>& {
    const std::string key = sr.video->video_id + "/" + sr.shot->shot_id;
    auto it = cam_cache.find(key);
    if (it == cam_cache.end())
      it = cam_cache.emplace(key, cams.shot_cams(*sr.video, *sr.shot)).first;
    return it->second;
  };

  auto params = model.decoder_params();
  nn::Sgd opt(cfg.lr);

  std::vector<std::vector<float>> best_params;
  double best_val = -1.0;
  std::vector<EpochMetrics> log;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double barrier_t =
        std::min(10.0, cfg.loss.barrier_t * std::pow(1.01, epoch));

    std::seed_seq epoch_seq{cfg.seed, unsigned(epoch)};
    std::mt19937 epoch_rng(epoch_seq);

    // One uniformly sampled frame index per shot, visited in random order.
    std::vector<int> t_of_shot(shots.size());
    for (std::size_t i = 0; i < shots.size(); ++i) {
      std::uniform_int_distribution<int> dt(0,
                                            int(shots[i].shot->frames.size()) - 1);
      t_of_shot[i] = dt(epoch_rng);
    }
    std::vector<int> order(shots.size());
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), epoch_rng);

    EpochMetrics em;
    em.epoch = epoch;
    for (std::size_t start = 0; start < order.size();
         start += std::size_t(cfg.batch_size)) {
      const std::size_t end =
          std::min(order.size(), start + std::size_t(cfg.batch_size));
      const float scale = 1.f / float(end - start);
      nn::Sgd::zero_grad(params);
      for (std::size_t i = start; i < end; ++i) {
        const ShotRef& sr = shots[order[i]];
        const FrameRecord& rec = sr.shot->frames[t_of_shot[order[i]]];
        Frame frame;
        frame.image = load_image(rec);
        frame.frame_index = rec.frame_index;
        frame.shot_id = sr.shot->shot_id;
        frame.video_id = sr.video->video_id;

        std::seed_seq clip_seq{cfg.seed, unsigned(epoch), unsigned(order[i])};
        std::mt19937 clip_rng(clip_seq);
        ClipSample clip = make_clip(frame, load_cams(sr), cfg, clip_rng);
        nn::Tensor d_maps;
        LossBreakdown bd =
            clip_loss(model, clip, cfg, barrier_t, clip_rng, &d_maps);
        for (auto& g : d_maps.data) g *= scale;
        model.backward_batch(d_maps);
        em.partial_ce += bd.partial_ce;
        em.size_barrier += bd.size_barrier;
        em.crf += bd.crf;
        em.total += bd.total;
      }
      opt.step(params);
    }
    const double inv = 1.0 / double(shots.size());
    em.partial_ce *= inv;
    em.size_barrier *= inv;
    em.crf *= inv;
    em.total *= inv;

    // Validation CorLoc drives model selection.
    std::vector<Prediction> preds =
        infer_split(model, manifest, manifest_dir, "val", cfg.val_tau);
    em.val_corloc = corloc(preds, manifest, "val").overall;
    log.push_back(em);

    // >= keeps the most recent of tied-best epochs, so a flat validation
    // curve still returns the most-trained weights.
    if (em.val_corloc >= best_val) {
      best_val = em.val_corloc;
      best_params.clear();
      for (nn::Param* p : params) best_params.push_back(p->value);
    }
  }

  if (!best_params.empty())
    for (std::size_t i = 0; i < params.size(); ++i)
      params[i]->value = best_params[i];
  return log;
}

void save_decoder(DecoderModel& model, const std::string& path) {
  NamedArrays arrays;
  int idx = 0;
  for (nn::Param* p : model.encoder.params()) {
    char name[16];
    std::snprintf(name, sizeof(name), "e%03d", idx++);
    arrays[name] = ArrayData::from_floats(p->value, {std::int64_t(p->value.size())});
  }
  idx = 0;
  for (nn::Param* p : model.decoder_params()) {
    char name[16];
    std::snprintf(name, sizeof(name), "d%03d", idx++);
    arrays[name] = ArrayData::from_floats(p->value, {std::int64_t(p->value.size())});
  }
  save_arrays(path, arrays);
  nlohmann::json side = {{"arch", "unet-small"},
                         {"num_classes", model.encoder.num_classes},
                         {"input_h", model.encoder.input_h},
                         {"input_w", model.encoder.input_w}};
  std::ofstream f(path + ".json");
  f << side.dump(2) << "\n";
  if (!f) throw Error("save_decoder: cannot write sidecar");
}

DecoderModel load_decoder(const std::string& path) {
  std::ifstream sf(path + ".json");
  if (!sf) throw Error("load_decoder: missing sidecar");
  nlohmann::json side = nlohmann::json::parse(sf);
  Classifier enc(side.at("num_classes").get<int>(),
                 side.at("input_h").get<int>(), side.at("input_w").get<int>(),
                 0);
  DecoderModel model(std::move(enc), 0);
  NamedArrays arrays = load_arrays(path);
  auto fill = [&](const char* prefix, std::vector<nn::Param*> params) {
    int idx = 0;
    for (nn::Param* p : params) {
      char name[16];
      std::snprintf(name, sizeof(name), "%s%03d", prefix, idx++);
      auto it = arrays.find(name);
      if (it == arrays.end()) throw Error("load_decoder: missing array");
      std::vector<float> v = it->second.to_floats();
      if (v.size() != p->value.size()) throw Error("load_decoder: size mismatch");
      p->value = std::move(v);
    }
  };
  fill("e", model.encoder.params());
  fill("d", model.decoder_params());
  return model;
}

}  // namespace tcam
