#pragma once

#include <string>
#include <vector>

#include "tcam/core.hpp"
#include "tcam/data.hpp"
#include "tcam/decoder.hpp"

namespace tcam {

struct Localization {
  BoundingBox box;
  int class_id = 0;
  Cam cam;  // the foreground map the box was derived from
  double score = 0.0;
};

// Binarize at tau * max(cam), take the largest 8-connected component
// (row-major scan order breaks ties), return its tight half-open box.
BoundingBox cam_to_box(const Cam& cam, double tau);

// Per-frame inference: class from the classifier, box from the decoder's
// foreground map. Uses no other frame.
Localization infer_frame(DecoderModel& model, Classifier& classifier,
                         const Frame& frame, double tau);

// One prediction per annotated frame of the given split ("" = all frames).
std::vector<Prediction> infer_split(DecoderModel& model,
                                    const VideoManifest& manifest,
                                    const std::string& manifest_dir,
                                    const std::string& split, double tau,
                                    bool annotated_only = true);

// Frame + CAM heat + boxes (green ground truth, red prediction).
Image render_overlay(const Frame& frame, const Cam& cam,
                     const BoundingBox& prediction,
                     const std::vector<BoundingBox>& gt_boxes);

}  // namespace tcam
