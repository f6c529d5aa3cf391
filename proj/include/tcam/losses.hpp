#pragma once

#include "tcam/core.hpp"
#include "tcam/pseudo.hpp"

namespace tcam {

struct LossConfig {
  double lambda_crf = 2e-9;
  double barrier_t = 1.0;  // annealed x1.01 per epoch, capped at 10
  double crf_sigma_rgb = 15.0 / 255.0;
  double crf_sigma_xy = 100.0;
  int crf_downsample = 4;
};

struct LossBreakdown {
  double partial_ce = 0.0;
  double size_barrier = 0.0;
  double crf = 0.0;  // raw R value, before the lambda weight
  double total = 0.0;
};

// Cross-entropy restricted to the labeled pixels of the mask; unknown pixels
// contribute nothing. Logs are clamped at 1e-8.
double partial_cross_entropy(const PseudoLabelMask& mask,
                             const SoftmaxMaps& maps,
                             SoftmaxMaps* grad = nullptr);

// Extended log-barrier pressure on both normalized region sizes:
//   psi_t(z) = -(1/t) log(-z)                    for z <= -1/t^2
//            = t z - (1/t) log(1/t^2) + 1/t      otherwise
// applied at z = -sum_p S^r(p)/|Omega| for r in {0,1}.
double size_barrier(const SoftmaxMaps& maps, double barrier_t,
                    SoftmaxMaps* grad = nullptr);

double barrier_psi(double z, double t);

// Dense-kernel CRF relaxation sum_r S^r' W (1 - S^r) over a crf_downsample-
// pooled domain; W is the Gaussian affinity over (rgb/sigma_rgb, xy/sigma_xy)
// with zero diagonal. grad (when given) is w.r.t. the full-resolution maps.
double crf_loss(const SoftmaxMaps& maps, const Image& frame,
                const LossConfig& cfg, SoftmaxMaps* grad = nullptr);

// mask may be null (degenerate CAM: no pixel supervision this step).
LossBreakdown total_loss(const PseudoLabelMask* mask, const SoftmaxMaps& maps,
                         const Image& frame, const LossConfig& cfg,
                         SoftmaxMaps* grad = nullptr);

}  // namespace tcam
