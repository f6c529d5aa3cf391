#include "tcam/losses.hpp"

#include <cmath>

#include <Eigen/Dense>

namespace tcam {

namespace {

constexpr double kLogEps = 1e-8;

double clamped_log(double v) { return std::log(std::max(v, kLogEps)); }

}  // namespace

double partial_cross_entropy(const PseudoLabelMask& mask,
                             const SoftmaxMaps& maps, SoftmaxMaps* grad) {
  if (!(mask.dom == maps.dom))
    throw Error("partial_cross_entropy: domain mismatch");
  if (grad) {
    *grad = SoftmaxMaps(maps.dom);
    grad->background.assign(maps.dom.area(), 0.f);
    grad->foreground.assign(maps.dom.area(), 0.f);
  }

  double loss = 0.0;
  for (int p = 0; p < maps.dom.area(); ++p) {
    if (mask.labels[p] == kForeground) {
      loss -= clamped_log(maps.foreground[p]);
      if (grad)
        grad->foreground[p] +=
            float(-1.0 / std::max(double(maps.foreground[p]), kLogEps));
    } else if (mask.labels[p] == kBackground) {
      loss -= clamped_log(maps.background[p]);
      if (grad)
        grad->background[p] +=
            float(-1.0 / std::max(double(maps.background[p]), kLogEps));
    }
  }
  return loss;
}

double barrier_psi(double z, double t) {
  if (z <= -1.0 / (t * t)) return -std::log(-z) / t;
  return t * z - std::log(1.0 / (t * t)) / t + 1.0 / t;
}

namespace {

double barrier_psi_deriv(double z, double t) {
  if (z <= -1.0 / (t * t)) return -1.0 / (t * z);
  return t;
}

}  // namespace

double size_barrier(const SoftmaxMaps& maps, double barrier_t,
                    SoftmaxMaps* grad) {
  if (barrier_t < 1.0) throw Error("size_barrier: barrier_t must be >= 1");
  const int area = maps.dom.area();
  if (grad) {
    *grad = SoftmaxMaps(maps.dom);
    grad->background.assign(area, 0.f);
    grad->foreground.assign(area, 0.f);
  }

  double loss = 0.0;
  for (int r = 0; r < 2; ++r) {
    const auto& ch = r == 0 ? maps.background : maps.foreground;
    double size = 0.0;
    for (float v : ch) {
      if (!std::isfinite(v)) throw Error("size_barrier: non-finite map value");
      size += double(v);
    }
    size /= double(area);
    const double z = -size;
    loss += barrier_psi(z, barrier_t);
    if (grad) {
      const float g =
          float(-barrier_psi_deriv(z, barrier_t) / double(area));
      auto& gch = r == 0 ? grad->background : grad->foreground;
      for (auto& v : gch) v = g;
    }
  }
  return loss;
}

namespace {

// Non-overlapping block average pooling; trailing partial blocks allowed.
struct Pooled {
  int h = 0, w = 0;
  std::vector<float> data;  // one plane
};

Pooled avg_pool_plane(const float* src, int h, int w, int d) {
  Pooled out;
  out.h = (h + d - 1) / d;
  out.w = (w + d - 1) / d;
  out.data.assign(std::size_t(out.h) * out.w, 0.f);
  for (int by = 0; by < out.h; ++by)
    for (int bx = 0; bx < out.w; ++bx) {
      const int y1 = std::min(h, (by + 1) * d);
      const int x1 = std::min(w, (bx + 1) * d);
      float s = 0.f;
      for (int y = by * d; y < y1; ++y)
        for (int x = bx * d; x < x1; ++x) s += src[y * w + x];
      out.data[by * out.w + bx] =
          s / float((y1 - by * d) * (x1 - bx * d));
    }
  return out;
}

void avg_pool_backward(const std::vector<float>& gpool, int h, int w, int d,
                       int ph, int pw, float* gsrc) {
  for (int by = 0; by < ph; ++by)
    for (int bx = 0; bx < pw; ++bx) {
      const int y1 = std::min(h, (by + 1) * d);
      const int x1 = std::min(w, (bx + 1) * d);
      const float g =
          gpool[by * pw + bx] / float((y1 - by * d) * (x1 - bx * d));
      for (int y = by * d; y < y1; ++y)
        for (int x = bx * d; x < x1; ++x) gsrc[y * w + x] += g;
    }
}

}  // namespace

double crf_loss(const SoftmaxMaps& maps, const Image& frame,
                const LossConfig& cfg, SoftmaxMaps* grad) {
  if (!(maps.dom == frame.dom)) throw Error("crf_loss: domain mismatch");
  const int h = maps.dom.height, w = maps.dom.width;
  const int d = std::max(1, cfg.crf_downsample);

  std::array<Pooled, 3> rgb;
  for (int c = 0; c < 3; ++c)
    rgb[c] = avg_pool_plane(frame.chw.data() + std::size_t(c) * h * w, h, w, d);
  Pooled s0 = avg_pool_plane(maps.background.data(), h, w, d);
  Pooled s1 = avg_pool_plane(maps.foreground.data(), h, w, d);
  const int ph = s0.h, pw = s0.w, m = ph * pw;
  if (ph < 2 || pw < 2) throw Error("crf_loss: downsampled domain below 2x2");

  const double inv2_rgb = 1.0 / (2.0 * cfg.crf_sigma_rgb * cfg.crf_sigma_rgb);
  const double inv2_xy = 1.0 / (2.0 * cfg.crf_sigma_xy * cfg.crf_sigma_xy);

  Eigen::MatrixXd W(m, m);
  for (int i = 0; i < m; ++i) {
    W(i, i) = 0.0;
    const int yi = i / pw, xi = i % pw;
    for (int j = i + 1; j < m; ++j) {
      const int yj = j / pw, xj = j % pw;
      double color = 0.0;
      for (int c = 0; c < 3; ++c) {
        const double dc = double(rgb[c].data[i]) - double(rgb[c].data[j]);
        color += dc * dc;
      }
      const double dy = double(yi - yj), dx = double(xi - xj);
      const double val =
          std::exp(-color * inv2_rgb - (dy * dy + dx * dx) * inv2_xy);
      W(i, j) = val;
      W(j, i) = val;
    }
  }

  Eigen::Map<const Eigen::VectorXf> v0(s0.data.data(), m);
  Eigen::Map<const Eigen::VectorXf> v1(s1.data.data(), m);
  const Eigen::VectorXd sd0 = v0.cast<double>();
  const Eigen::VectorXd sd1 = v1.cast<double>();
  const Eigen::VectorXd ones = Eigen::VectorXd::Ones(m);

  const Eigen::VectorXd W_om_s0 = W * (ones - sd0);
  const Eigen::VectorXd W_om_s1 = W * (ones - sd1);
  const double loss = sd0.dot(W_om_s0) + sd1.dot(W_om_s1);

  if (grad) {
    *grad = SoftmaxMaps(maps.dom);
    grad->background.assign(maps.dom.area(), 0.f);
    grad->foreground.assign(maps.dom.area(), 0.f);
    // d/dS_k of S'W(1-S) = [W(1-S)]_k - [W S]_k  (W symmetric)
    const Eigen::VectorXd g0 = W_om_s0 - W * sd0;
    const Eigen::VectorXd g1 = W_om_s1 - W * sd1;
    std::vector<float> gp0(m), gp1(m);
    for (int i = 0; i < m; ++i) {
      gp0[i] = float(g0(i));
      gp1[i] = float(g1(i));
    }
    avg_pool_backward(gp0, h, w, d, ph, pw, grad->background.data());
    avg_pool_backward(gp1, h, w, d, ph, pw, grad->foreground.data());
  }
  return loss;
}

LossBreakdown total_loss(const PseudoLabelMask* mask, const SoftmaxMaps& maps,
                         const Image& frame, const LossConfig& cfg,
                         SoftmaxMaps* grad) {
  LossBreakdown out;
  SoftmaxMaps g_ce, g_size, g_crf;

  out.partial_ce =
      mask ? partial_cross_entropy(*mask, maps, grad ? &g_ce : nullptr) : 0.0;
  out.size_barrier = size_barrier(maps, cfg.barrier_t, grad ? &g_size : nullptr);
  out.crf = crf_loss(maps, frame, cfg, grad ? &g_crf : nullptr);
  out.total = out.partial_ce + cfg.lambda_crf * out.crf + out.size_barrier;
  if (!std::isfinite(out.total)) throw Error("total_loss: non-finite loss");

  if (grad) {
    *grad = SoftmaxMaps(maps.dom);
    const int area = maps.dom.area();
    grad->background.assign(area, 0.f);
    grad->foreground.assign(area, 0.f);
    for (int p = 0; p < area; ++p) {
      float gb = g_size.background[p] + float(cfg.lambda_crf) * g_crf.background[p];
      float gf = g_size.foreground[p] + float(cfg.lambda_crf) * g_crf.foreground[p];
      if (mask) {
        gb += g_ce.background[p];
        gf += g_ce.foreground[p];
      }
      grad->background[p] = gb;
      grad->foreground[p] = gf;
    }
  }
  return out;
}

}  // namespace tcam
