#pragma once

#include <memory>
#include <random>
#include <string>
#include <vector>

#include "tcam/tensor.hpp"

namespace tcam::nn {

// A learnable array with its gradient buffer.
struct Param {
  std::string name;
  std::vector<float> value;
  std::vector<float> grad;

  Param(std::string n, std::size_t size)
      : name(std::move(n)), value(size, 0.f), grad(size, 0.f) {}
  void zero_grad() { std::fill(grad.begin(), grad.end(), 0.f); }
};

struct Layer {
  virtual ~Layer() = default;
  virtual Tensor forward(const Tensor& x) = 0;
  // Gradient w.r.t. the input of the last forward; accumulates into params.
  virtual Tensor backward(const Tensor& dy) = 0;
  virtual std::vector<Param*> params() { return {}; }
};

struct Conv2d final : Layer {
  int in_ch, out_ch, ksize, stride, pad;
  Param weight;  // [out_ch, in_ch * k * k]
  Param bias;    // [out_ch]

  Conv2d(int in_c, int out_c, int k, int s, int p, std::mt19937& rng);
  Tensor forward(const Tensor& x) override;
  Tensor backward(const Tensor& dy) override;
  std::vector<Param*> params() override { return {&weight, &bias}; }

 private:
  Tensor last_x_;
};

struct ReLU final : Layer {
  Tensor forward(const Tensor& x) override;
  Tensor backward(const Tensor& dy) override;

 private:
  Tensor last_x_;
};

struct Linear final : Layer {
  int in_dim, out_dim;
  Param weight;  // [out_dim, in_dim]
  Param bias;    // [out_dim]

  Linear(int in_d, int out_d, std::mt19937& rng);
  Tensor forward(const Tensor& x) override;
  Tensor backward(const Tensor& dy) override;
  std::vector<Param*> params() override { return {&weight, &bias}; }

 private:
  Tensor last_x_;
};

struct GlobalAvgPool final : Layer {
  Tensor forward(const Tensor& x) override;
  Tensor backward(const Tensor& dy) override;

 private:
  int last_h_ = 0, last_w_ = 0;
};

// Resizes to a fixed spatial size with bilinear interpolation (align_corners=false).
struct BilinearResize final : Layer {
  int out_h, out_w;
  BilinearResize(int oh, int ow) : out_h(oh), out_w(ow) {}
  Tensor forward(const Tensor& x) override;
  Tensor backward(const Tensor& dy) override;

 private:
  int last_h_ = 0, last_w_ = 0;
};

// Downsampling residual block: y = relu(conv2(relu(conv1(x))) + proj(x)).
// conv1 carries the stride; proj is a strided 1x1 when shape changes.
struct ResBlock final : Layer {
  Conv2d conv1, conv2;
  std::unique_ptr<Conv2d> proj;
  ReLU relu1, relu2;

  ResBlock(int in_c, int out_c, int stride, std::mt19937& rng);
  Tensor forward(const Tensor& x) override;
  Tensor backward(const Tensor& dy) override;
  std::vector<Param*> params() override;

 private:
  Tensor pre_act_;  // conv2 out + shortcut, before the final relu
  Tensor shortcut_;
};

// --- free functions --------------------------------------------------------

// Per-sample softmax over the channel axis (h = w = 1 expected for logits).
Tensor softmax_rows(const Tensor& logits);

// Mean cross-entropy of softmax(logits) against integer labels.
// d_logits receives the gradient (softmax - onehot) / n.
double softmax_cross_entropy(const Tensor& logits, const std::vector<int>& labels,
                             Tensor* d_logits);

// Bilinear resize of a single-channel map to the given domain.
std::vector<float> bilinear_resize_plane(const std::vector<float>& src, int sh,
                                         int sw, int dh, int dw);

struct Sgd {
  double lr;
  explicit Sgd(double learning_rate) : lr(learning_rate) {}
  void step(const std::vector<Param*>& params) const;
  static void zero_grad(const std::vector<Param*>& params);
};

void he_init(std::vector<float>& w, int fan_in, std::mt19937& rng);

}  // namespace tcam::nn
