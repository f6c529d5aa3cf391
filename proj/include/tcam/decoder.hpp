#pragma once

#include <random>
#include <string>
#include <vector>

#include "tcam/cams.hpp"
#include "tcam/core.hpp"
#include "tcam/data.hpp"
#include "tcam/losses.hpp"
#include "tcam/nn.hpp"
#include "tcam/pseudo.hpp"

namespace tcam {

// U-Net style segmentation head over the frozen classifier encoder.
// Skip connections tap the encoder at strides 4/8/16 plus the raw image at
// full resolution; the head emits a two-channel per-pixel softmax at frame
// resolution. The image skip matters: the frozen encoder keeps only what
// classification needed, so pixel-level appearance has to reenter here.
struct DecoderModel {
  Classifier encoder;  // weights frozen; only theta below is trained
  nn::Conv2d conv_s8, conv_s4, conv_img, conv_full, conv_out;
  nn::ReLU relu_s8, relu_s4, relu_img, relu_full;
  nn::BilinearResize up_to_s8, up_to_s4, up_to_full;

  DecoderModel(Classifier enc, unsigned seed);

  // Decoder parameters theta (the encoder is excluded on purpose).
  std::vector<nn::Param*> decoder_params();

  // Forward pass for a batch; returns per-pixel 2-channel softmax (NCHW).
  nn::Tensor forward_batch(const nn::Tensor& x);
  // Backprop d(loss)/d(softmax maps) into decoder parameter gradients.
  void backward_batch(const nn::Tensor& d_maps);

 private:
  DecoderModel(Classifier enc, std::mt19937 rng);
  nn::Tensor maps_;  // softmax output of the last forward_batch
};

SoftmaxMaps decoder_forward(DecoderModel& model, const Frame& frame);

struct DecoderTrainConfig {
  int n = 1;
  int epochs = 100;
  int batch_size = 32;
  double lr = 0.01;
  int resize_to = 256;
  int crop_to = 224;
  unsigned seed = 0;
  double val_tau = 0.5;  // box threshold used for per-epoch validation CorLoc
  bool use_pixel_loss = true;
  bool use_size_loss = true;
  bool use_crf_loss = true;
  LossConfig loss;
};

struct EpochMetrics {
  int epoch = 0;
  double partial_ce = 0.0;
  double size_barrier = 0.0;
  double crf = 0.0;
  double total = 0.0;
  double val_corloc = 0.0;
};

// Precomputed per-shot CAM cache (one .arrs file per shot).
class CamStore {
 public:
  CamStore(std::string dir) : dir_(std::move(dir)) {}
  static std::string shot_file(const std::string& dir,
                               const std::string& video_id,
                               const std::string& shot_id);
  std::vector<Cam> shot_cams(const VideoRecord& video,
                             const ShotRecord& shot) const;

 private:
  std::string dir_;
};

// Extracts and caches CAMs (class = video label) for every frame.
void dump_cams(Classifier& classifier, const CamMethod& method,
               const VideoManifest& manifest, const std::string& manifest_dir,
               const std::string& cams_dir);

// One SGD update of theta from a single clip: temporal aggregation,
// pseudo-label sampling, loss, backward.
LossBreakdown train_step(DecoderModel& model, const Frame& frame,
                         const std::vector<Cam>& shot_cams,
                         const DecoderTrainConfig& cfg, double barrier_t,
                         std::mt19937& rng);

// Full training loop; on return the model holds the parameters of the
// best-validation-CorLoc epoch.
std::vector<EpochMetrics> train_decoder(DecoderModel& model,
                                        const VideoManifest& manifest,
                                        const std::string& manifest_dir,
                                        const CamStore& cams,
                                        const DecoderTrainConfig& cfg);

void save_decoder(DecoderModel& model, const std::string& path);
DecoderModel load_decoder(const std::string& path);

}  // namespace tcam
