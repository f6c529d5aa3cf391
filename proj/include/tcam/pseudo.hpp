#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <vector>

#include "tcam/core.hpp"

namespace tcam {

constexpr std::int8_t kBackground = 0;
constexpr std::int8_t kForeground = 1;
constexpr std::int8_t kUnknown = -1;

// Otsu split of a CAM into foreground (activation > threshold) and the rest.
struct RegionSplit {
  std::vector<int> foreground;  // flat pixel indices, row-major
  std::vector<int> background;
  float threshold = 0.f;
  bool degenerate = false;  // flat map: no usable split
};

// Sparse per-pixel labels: exactly one foreground and one background pixel,
// everything else unknown.
struct PseudoLabelMask {
  ImageDomain dom;
  std::vector<std::int8_t> labels;

  PseudoLabelMask() = default;
  explicit PseudoLabelMask(ImageDomain d) : dom(d), labels(d.area(), kUnknown) {}
};

struct OtsuResult {
  float threshold = 0.f;
  bool degenerate = false;
};

// 256-bin Otsu threshold over values in [0,1], maximizing between-class
// variance. degenerate is set when the histogram has a single occupied bin.
OtsuResult otsu_threshold(const std::vector<float>& values);

RegionSplit split_regions(const Cam& cam);

// One multinomial foreground pixel (weights = activations over C+) and one
// uniform background pixel. nullopt when either region is empty.
std::optional<PseudoLabelMask> sample_pseudo_labels(const RegionSplit& split,
                                                    const Cam& cam,
                                                    std::mt19937& rng);

}  // namespace tcam
