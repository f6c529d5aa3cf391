#include "tcam/nn.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/Dense>

namespace tcam::nn {

using RowMat =
    Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

void he_init(std::vector<float>& w, int fan_in, std::mt19937& rng) {
  std::normal_distribution<float> dist(0.f, std::sqrt(2.f / float(fan_in)));
  for (auto& v : w) v = dist(rng);
}

// --- Conv2d ----------------------------------------------------------------

Conv2d::Conv2d(int in_c, int out_c, int k, int s, int p, std::mt19937& rng)
    : in_ch(in_c),
      out_ch(out_c),
      ksize(k),
      stride(s),
      pad(p),
      weight("conv.w", std::size_t(out_c) * in_c * k * k),
      bias("conv.b", out_c) {
  he_init(weight.value, in_c * k * k, rng);
}

namespace {

void im2col(const float* x, int c, int h, int w, int k, int stride, int pad,
            int oh, int ow, float* col) {
  // col is [c*k*k, oh*ow]
  for (int ch = 0; ch < c; ++ch) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        float* row = col + std::size_t((ch * k + ky) * k + kx) * oh * ow;
        for (int oy = 0; oy < oh; ++oy) {
          const int iy = oy * stride + ky - pad;
          if (iy < 0 || iy >= h) {
            std::fill(row + oy * ow, row + (oy + 1) * ow, 0.f);
            continue;
          }
          for (int ox = 0; ox < ow; ++ox) {
            const int ix = ox * stride + kx - pad;
            row[oy * ow + ox] =
                (ix >= 0 && ix < w) ? x[(ch * h + iy) * w + ix] : 0.f;
          }
        }
      }
    }
  }
}

void col2im(const float* col, int c, int h, int w, int k, int stride, int pad,
            int oh, int ow, float* x) {
  for (int ch = 0; ch < c; ++ch) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const float* row = col + std::size_t((ch * k + ky) * k + kx) * oh * ow;
        for (int oy = 0; oy < oh; ++oy) {
          const int iy = oy * stride + ky - pad;
          if (iy < 0 || iy >= h) continue;
          for (int ox = 0; ox < ow; ++ox) {
            const int ix = ox * stride + kx - pad;
            if (ix >= 0 && ix < w) x[(ch * h + iy) * w + ix] += row[oy * ow + ox];
          }
        }
      }
    }
  }
}

}  // namespace

// Every GEMM below runs on Eigen-owned (aligned) buffers. Mapping the raw
// std::vector storage directly would make the vectorized reduction order —
// and thus the low-order result bits — depend on heap pointer alignment,
// breaking bit-exact reproducibility between otherwise identical runs.

Tensor Conv2d::forward(const Tensor& x) {
  if (x.c != in_ch) throw Error("Conv2d: channel mismatch");
  const int oh = (x.h + 2 * pad - ksize) / stride + 1;
  const int ow = (x.w + 2 * pad - ksize) / stride + 1;
  Tensor y(x.n, out_ch, oh, ow);
  const int kdim = in_ch * ksize * ksize;
  const RowMat W = ConstMapMat(weight.value.data(), out_ch, kdim);
  RowMat C(kdim, oh * ow);
  RowMat Y(out_ch, oh * ow);
  for (int i = 0; i < x.n; ++i) {
    im2col(x.sample(i), in_ch, x.h, x.w, ksize, stride, pad, oh, ow, C.data());
    Y.noalias() = W * C;
    for (int oc = 0; oc < out_ch; ++oc) Y.row(oc).array() += bias.value[oc];
    MapMat(y.sample(i), out_ch, oh * ow) = Y;
  }
  last_x_ = x;
  return y;
}

Tensor Conv2d::backward(const Tensor& dy) {
  const Tensor& x = last_x_;
  const int oh = dy.h, ow = dy.w;
  const int kdim = in_ch * ksize * ksize;
  Tensor dx(x.n, x.c, x.h, x.w);
  const RowMat W = ConstMapMat(weight.value.data(), out_ch, kdim);
  RowMat dW = RowMat::Zero(out_ch, kdim);
  RowMat C(kdim, oh * ow);
  RowMat dY(out_ch, oh * ow);
  RowMat dC(kdim, oh * ow);
  for (int i = 0; i < x.n; ++i) {
    im2col(x.sample(i), in_ch, x.h, x.w, ksize, stride, pad, oh, ow, C.data());
    dY = ConstMapMat(dy.sample(i), out_ch, oh * ow);
    dW.noalias() += dY * C.transpose();
    for (int oc = 0; oc < out_ch; ++oc) bias.grad[oc] += dY.row(oc).sum();
    dC.noalias() = W.transpose() * dY;
    col2im(dC.data(), in_ch, x.h, x.w, ksize, stride, pad, oh, ow,
           dx.sample(i));
  }
  MapMat(weight.grad.data(), out_ch, kdim) += dW;
  return dx;
}

// --- ReLU -------------------------------------------------------------------

Tensor ReLU::forward(const Tensor& x) {
  last_x_ = x;
  Tensor y = x;
  for (auto& v : y.data) v = std::max(v, 0.f);
  return y;
}

Tensor ReLU::backward(const Tensor& dy) {
  Tensor dx = dy;
  for (std::size_t i = 0; i < dx.data.size(); ++i)
    if (last_x_.data[i] <= 0.f) dx.data[i] = 0.f;
  return dx;
}

// --- Linear -----------------------------------------------------------------

Linear::Linear(int in_d, int out_d, std::mt19937& rng)
    : in_dim(in_d),
      out_dim(out_d),
      weight("linear.w", std::size_t(out_d) * in_d),
      bias("linear.b", out_d) {
  he_init(weight.value, in_d, rng);
}

Tensor Linear::forward(const Tensor& x) {
  if (x.sample_size() != in_dim) throw Error("Linear: dimension mismatch");
  Tensor y(x.n, out_dim, 1, 1);
  const RowMat X = ConstMapMat(x.data.data(), x.n, in_dim);
  const RowMat W = ConstMapMat(weight.value.data(), out_dim, in_dim);
  RowMat Yl(x.n, out_dim);
  Yl.noalias() = X * W.transpose();
  MapMat(y.data.data(), x.n, out_dim) = Yl;
  for (int i = 0; i < x.n; ++i)
    for (int j = 0; j < out_dim; ++j) y.data[i * out_dim + j] += bias.value[j];
  last_x_ = x;
  return y;
}

Tensor Linear::backward(const Tensor& dy) {
  const Tensor& x = last_x_;
  Tensor dx(x.n, x.c, x.h, x.w);
  const RowMat X = ConstMapMat(x.data.data(), x.n, in_dim);
  const RowMat dY = ConstMapMat(dy.data.data(), x.n, out_dim);
  const RowMat W = ConstMapMat(weight.value.data(), out_dim, in_dim);
  RowMat dW(out_dim, in_dim);
  dW.noalias() = dY.transpose() * X;
  MapMat(weight.grad.data(), out_dim, in_dim) += dW;
  for (int i = 0; i < x.n; ++i)
    for (int j = 0; j < out_dim; ++j) bias.grad[j] += dy.data[i * out_dim + j];
  RowMat dX(x.n, in_dim);
  dX.noalias() = dY * W;
  MapMat(dx.data.data(), x.n, in_dim) = dX;
  return dx;
}

// --- GlobalAvgPool ------------------------------------------------------------

Tensor GlobalAvgPool::forward(const Tensor& x) {
  last_h_ = x.h;
  last_w_ = x.w;
  Tensor y(x.n, x.c, 1, 1);
  const float inv = 1.f / float(x.plane());
  for (int i = 0; i < x.n; ++i)
    for (int ch = 0; ch < x.c; ++ch) {
      const float* p = x.sample(i) + std::size_t(ch) * x.plane();
      float s = 0.f;
      for (int k = 0; k < x.plane(); ++k) s += p[k];
      y.data[std::size_t(i) * x.c + ch] = s * inv;
    }
  return y;
}

Tensor GlobalAvgPool::backward(const Tensor& dy) {
  Tensor dx(dy.n, dy.c, last_h_, last_w_);
  const float inv = 1.f / float(last_h_ * last_w_);
  for (int i = 0; i < dy.n; ++i)
    for (int ch = 0; ch < dy.c; ++ch) {
      const float g = dy.data[std::size_t(i) * dy.c + ch] * inv;
      float* p = dx.sample(i) + std::size_t(ch) * dx.plane();
      for (int k = 0; k < dx.plane(); ++k) p[k] = g;
    }
  return dx;
}

// --- BilinearResize -----------------------------------------------------------

namespace {

struct LerpIndex {
  int lo, hi;
  float w_hi;
};

std::vector<LerpIndex> resize_axis(int src, int dst) {
  std::vector<LerpIndex> idx(dst);
  const float scale = float(src) / float(dst);
  for (int d = 0; d < dst; ++d) {
    float s = (float(d) + 0.5f) * scale - 0.5f;
    s = std::clamp(s, 0.f, float(src - 1));
    const int lo = int(std::floor(s));
    idx[d] = {lo, std::min(lo + 1, src - 1), s - float(lo)};
  }
  return idx;
}

}  // namespace

std::vector<float> bilinear_resize_plane(const std::vector<float>& src, int sh,
                                         int sw, int dh, int dw) {
  const auto ys = resize_axis(sh, dh);
  const auto xs = resize_axis(sw, dw);
  std::vector<float> dst(std::size_t(dh) * dw);
  for (int y = 0; y < dh; ++y)
    for (int x = 0; x < dw; ++x) {
      const auto& iy = ys[y];
      const auto& ix = xs[x];
      const float top = src[iy.lo * sw + ix.lo] * (1 - ix.w_hi) +
                        src[iy.lo * sw + ix.hi] * ix.w_hi;
      const float bot = src[iy.hi * sw + ix.lo] * (1 - ix.w_hi) +
                        src[iy.hi * sw + ix.hi] * ix.w_hi;
      dst[y * dw + x] = top * (1 - iy.w_hi) + bot * iy.w_hi;
    }
  return dst;
}

Tensor BilinearResize::forward(const Tensor& x) {
  last_h_ = x.h;
  last_w_ = x.w;
  const auto ys = resize_axis(x.h, out_h);
  const auto xs = resize_axis(x.w, out_w);
  Tensor y(x.n, x.c, out_h, out_w);
  for (int i = 0; i < x.n; ++i)
    for (int ch = 0; ch < x.c; ++ch) {
      const float* s = x.sample(i) + std::size_t(ch) * x.plane();
      float* d = y.sample(i) + std::size_t(ch) * y.plane();
      for (int oy = 0; oy < out_h; ++oy)
        for (int ox = 0; ox < out_w; ++ox) {
          const auto& iy = ys[oy];
          const auto& ix = xs[ox];
          const float top = s[iy.lo * x.w + ix.lo] * (1 - ix.w_hi) +
                            s[iy.lo * x.w + ix.hi] * ix.w_hi;
          const float bot = s[iy.hi * x.w + ix.lo] * (1 - ix.w_hi) +
                            s[iy.hi * x.w + ix.hi] * ix.w_hi;
          d[oy * out_w + ox] = top * (1 - iy.w_hi) + bot * iy.w_hi;
        }
    }
  return y;
}

Tensor BilinearResize::backward(const Tensor& dy) {
  const auto ys = resize_axis(last_h_, out_h);
  const auto xs = resize_axis(last_w_, out_w);
  Tensor dx(dy.n, dy.c, last_h_, last_w_);
  for (int i = 0; i < dy.n; ++i)
    for (int ch = 0; ch < dy.c; ++ch) {
      const float* g = dy.sample(i) + std::size_t(ch) * dy.plane();
      float* d = dx.sample(i) + std::size_t(ch) * dx.plane();
      for (int oy = 0; oy < out_h; ++oy)
        for (int ox = 0; ox < out_w; ++ox) {
          const auto& iy = ys[oy];
          const auto& ix = xs[ox];
          const float v = g[oy * out_w + ox];
          d[iy.lo * last_w_ + ix.lo] += v * (1 - iy.w_hi) * (1 - ix.w_hi);
          d[iy.lo * last_w_ + ix.hi] += v * (1 - iy.w_hi) * ix.w_hi;
          d[iy.hi * last_w_ + ix.lo] += v * iy.w_hi * (1 - ix.w_hi);
          d[iy.hi * last_w_ + ix.hi] += v * iy.w_hi * ix.w_hi;
        }
    }
  return dx;
}

// --- ResBlock -----------------------------------------------------------------

ResBlock::ResBlock(int in_c, int out_c, int stride, std::mt19937& rng)
    : conv1(in_c, out_c, 3, stride, 1, rng), conv2(out_c, out_c, 3, 1, 1, rng) {
  if (stride != 1 || in_c != out_c)
    proj = std::make_unique<Conv2d>(in_c, out_c, 1, stride, 0, rng);
}

Tensor ResBlock::forward(const Tensor& x) {
  Tensor h = relu1.forward(conv1.forward(x));
  h = conv2.forward(h);
  shortcut_ = proj ? proj->forward(x) : x;
  pre_act_ = h;
  for (std::size_t i = 0; i < pre_act_.data.size(); ++i)
    pre_act_.data[i] += shortcut_.data[i];
  return relu2.forward(pre_act_);
}

Tensor ResBlock::backward(const Tensor& dy) {
  Tensor d_pre = relu2.backward(dy);
  Tensor dx_main = conv1.backward(relu1.backward(conv2.backward(d_pre)));
  Tensor dx_skip = proj ? proj->backward(d_pre) : d_pre;
  for (std::size_t i = 0; i < dx_main.data.size(); ++i)
    dx_main.data[i] += dx_skip.data[i];
  return dx_main;
}

std::vector<Param*> ResBlock::params() {
  std::vector<Param*> p = {&conv1.weight, &conv1.bias, &conv2.weight,
                           &conv2.bias};
  if (proj) {
    p.push_back(&proj->weight);
    p.push_back(&proj->bias);
  }
  return p;
}

// --- classification helpers ----------------------------------------------------

Tensor softmax_rows(const Tensor& logits) {
  Tensor p = logits;
  const int k = logits.sample_size();
  for (int i = 0; i < logits.n; ++i) {
    float* row = p.data.data() + std::size_t(i) * k;
    const float m = *std::max_element(row, row + k);
    float s = 0.f;
    for (int j = 0; j < k; ++j) {
      row[j] = std::exp(row[j] - m);
      s += row[j];
    }
    for (int j = 0; j < k; ++j) row[j] /= s;
  }
  return p;
}

double softmax_cross_entropy(const Tensor& logits, const std::vector<int>& labels,
                             Tensor* d_logits) {
  const int k = logits.sample_size();
  Tensor p = softmax_rows(logits);
  double loss = 0.0;
  if (d_logits) *d_logits = Tensor(logits.n, logits.c, logits.h, logits.w);
  for (int i = 0; i < logits.n; ++i) {
    const float* row = p.data.data() + std::size_t(i) * k;
    loss -= std::log(std::max(row[labels[i]], 1e-12f));
    if (d_logits) {
      float* g = d_logits->data.data() + std::size_t(i) * k;
      for (int j = 0; j < k; ++j)
        g[j] = (row[j] - (j == labels[i] ? 1.f : 0.f)) / float(logits.n);
    }
  }
  return loss / double(logits.n);
}

void Sgd::step(const std::vector<Param*>& params) const {
  for (Param* p : params)
    for (std::size_t i = 0; i < p->value.size(); ++i)
      p->value[i] -= float(lr) * p->grad[i];
}

void Sgd::zero_grad(const std::vector<Param*>& params) {
  for (Param* p : params) p->zero_grad();
}

}  // namespace tcam::nn
