#include "tcam/pseudo.hpp"

#include <array>
#include <cmath>

namespace tcam {

namespace {

constexpr int kBins = 256;

int bin_of(float v) {
  int b = int(v * kBins);
  return std::clamp(b, 0, kBins - 1);
}

}  // namespace

OtsuResult otsu_threshold(const std::vector<float>& values) {
  if (values.empty()) throw Error("otsu_threshold: empty input");
  std::array<std::int64_t, kBins> hist{};
  for (float v : values) {
    if (v < 0.f || v > 1.f) throw Error("otsu_threshold: value outside [0,1]");
    ++hist[bin_of(v)];
  }

  int occupied = 0;
  for (auto h : hist)
    if (h > 0) ++occupied;
  if (occupied <= 1) return {0.f, true};

  const double total = double(values.size());
  double sum_all = 0.0;
  for (int b = 0; b < kBins; ++b) sum_all += double(b) * double(hist[b]);

  // Classic sweep: class 0 = bins 0..k, class 1 = bins k+1..255.
  double w0 = 0.0, sum0 = 0.0, best = -1.0;
  int best_k = 0;
  for (int k = 0; k < kBins - 1; ++k) {
    w0 += double(hist[k]);
    sum0 += double(k) * double(hist[k]);
    const double w1 = total - w0;
    if (w0 == 0.0 || w1 == 0.0) continue;
    const double mu0 = sum0 / w0;
    const double mu1 = (sum_all - sum0) / w1;
    const double between = w0 * w1 * (mu0 - mu1) * (mu0 - mu1);
    if (between > best) {
      best = between;
      best_k = k;
    }
  }

  // Boundary of the first class-1 bin, nudged down so that values landing
  // exactly on the bin edge satisfy the strict "activation > threshold" test.
  const float thr = std::nextafter(float(best_k + 1) / float(kBins), 0.f);
  return {thr, false};
}

RegionSplit split_regions(const Cam& cam) {
  RegionSplit split;
  const OtsuResult o = otsu_threshold(cam.values);
  split.threshold = o.threshold;
  split.degenerate = o.degenerate;
  if (o.degenerate) {
    split.background.resize(cam.values.size());
    for (int p = 0; p < int(cam.values.size()); ++p) split.background[p] = p;
    return split;
  }
  for (int p = 0; p < int(cam.values.size()); ++p) {
    if (cam.values[p] > o.threshold)
      split.foreground.push_back(p);
    else
      split.background.push_back(p);
  }
  return split;
}

std::optional<PseudoLabelMask> sample_pseudo_labels(const RegionSplit& split,
                                                    const Cam& cam,
                                                    std::mt19937& rng) {
  if (split.foreground.empty() || split.background.empty()) return std::nullopt;

  double total = 0.0;
  for (int p : split.foreground) total += double(cam.values[p]);
  if (total <= 0.0) return std::nullopt;

  // Multinomial draw over foreground activations.
  std::uniform_real_distribution<double> ud(0.0, 1.0);
  const double u = ud(rng) * total;
  double acc = 0.0;
  int fg_pixel = split.foreground.back();
  for (int p : split.foreground) {
    acc += double(cam.values[p]);
    if (u < acc) {
      fg_pixel = p;
      break;
    }
  }

  std::uniform_int_distribution<std::size_t> bd(0, split.background.size() - 1);
  const int bg_pixel = split.background[bd(rng)];

  PseudoLabelMask mask(cam.dom);
  mask.labels[fg_pixel] = kForeground;
  mask.labels[bg_pixel] = kBackground;
  return mask;
}

}  // namespace tcam
