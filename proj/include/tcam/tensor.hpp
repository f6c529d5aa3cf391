#pragma once

#include <cstddef>
#include <vector>

#include "tcam/core.hpp"

namespace tcam::nn {

// Dense NCHW float tensor. Fully-connected activations use h = w = 1.
struct Tensor {
  int n = 0, c = 0, h = 0, w = 0;
  std::vector<float> data;

  Tensor() = default;
  Tensor(int n_, int c_, int h_, int w_)
      : n(n_), c(c_), h(h_), w(w_), data(std::size_t(n_) * c_ * h_ * w_, 0.f) {}

  std::size_t size() const { return data.size(); }
  int plane() const { return h * w; }
  int sample_size() const { return c * h * w; }

  float* sample(int i) { return data.data() + std::size_t(i) * sample_size(); }
  const float* sample(int i) const {
    return data.data() + std::size_t(i) * sample_size();
  }
  float& at(int i, int ch, int y, int x) {
    return data[((std::size_t(i) * c + ch) * h + y) * w + x];
  }
  float at(int i, int ch, int y, int x) const {
    return data[((std::size_t(i) * c + ch) * h + y) * w + x];
  }
  bool same_shape(const Tensor& o) const {
    return n == o.n && c == o.c && h == o.h && w == o.w;
  }
};

}  // namespace tcam::nn
