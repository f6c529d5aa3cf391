#pragma once

#include <vector>

#include "tcam/core.hpp"

namespace tcam {

// Ordered CAMs [C_t, C_{t-1}, ..., C_{t-n}] from one shot.
struct CamSequence {
  std::vector<Cam> cams;
  int n = 0;
};

// Picks the CAMs at indices max(shot_start, t-n)..t, newest first.
// The sequence is truncated at the shot start rather than padded.
CamSequence select_sequence(const std::vector<Cam>& shot_cams, int t, int n);

// Temporal max pooling: output(p) = max over the sequence at p.
// frame_index / class_id are copied from C_t.
Cam cam_tmp(const CamSequence& seq);

}  // namespace tcam
