#pragma once

#include <memory>
#include <random>
#include <string>
#include <vector>

#include "tcam/core.hpp"
#include "tcam/nn.hpp"

namespace tcam {

// Encoder backbone: stem + four strided residual stages.
// Stage outputs are kept so CAM extraction and the decoder can tap them.
struct Backbone {
  nn::Conv2d stem;
  nn::ReLU stem_relu;
  nn::ResBlock stage1, stage2, stage3, stage4;

  struct Features {
    nn::Tensor s2, s4, s8, s16;  // stage outputs, named by stride
  };

  explicit Backbone(std::mt19937& rng);
  Features forward(const nn::Tensor& x);
  // Gradient of some scalar w.r.t. the named stage output, given its
  // gradient at the s16 output. Overwrites layer scratch state.
  nn::Tensor grad_at_stage(const std::string& stage, const nn::Tensor& d_s16);
  std::vector<nn::Param*> params();

  static constexpr int kOutChannels = 128;
};

// Frame classifier g: backbone + global-average-pool + linear head.
struct Classifier {
  int num_classes;
  int input_h, input_w;
  Backbone backbone;
  nn::GlobalAvgPool gap;
  nn::Linear head;

  Classifier(int k, int in_h, int in_w, unsigned seed);

  nn::Tensor logits(const nn::Tensor& x);        // also refreshes features()
  const Backbone::Features& features() const { return feats_; }
  std::vector<float> classify(const Frame& frame);
  std::vector<nn::Param*> params();

 private:
  Classifier(int k, int in_h, int in_w, std::mt19937 rng);
  Backbone::Features feats_;
};

struct ClassifierTrainConfig {
  int epochs = 10;
  double lr = 0.01;
  int batch_size = 32;
  unsigned seed = 0;
};

struct ClassifierHistory {
  std::vector<double> epoch_loss;
  std::vector<double> epoch_accuracy;
};

struct LabeledFrame {
  Frame frame;
  int class_id = 0;
};

Classifier train_classifier(const std::vector<LabeledFrame>& frames, int k,
                            const ClassifierTrainConfig& cfg,
                            ClassifierHistory* history = nullptr);

enum class CamKind { Cam, GradCam, LayerCam };

struct CamMethod {
  CamKind kind = CamKind::LayerCam;
  std::string target_layer = "stage4";
};

CamKind cam_kind_from_name(const std::string& name);
std::string cam_kind_name(CamKind kind);

// Extracts a CAM for class_id, bilinearly upsampled to the frame size and
// min-max normalized to [0,1] (flat maps collapse to all zeros).
Cam extract_cam(Classifier& c, const CamMethod& method, const Frame& frame,
                int class_id);

nn::Tensor frame_to_tensor(const Frame& frame);
Image resize_image(const Image& src, ImageDomain target);

void save_classifier(const Classifier& c, const std::string& path);
Classifier load_classifier(const std::string& path);

}  // namespace tcam
