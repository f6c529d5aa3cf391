#pragma once

#include <string>

#include "tcam/cams.hpp"
#include "tcam/data.hpp"
#include "tcam/decoder.hpp"

namespace tcam {

// One declarative document wiring every pipeline knob.
struct RunConfig {
  unsigned seed = 0;
  std::string data_dir;   // dataset root (manifest.json inside)
  std::string run_dir;    // outputs: checkpoints/, cams/, preds/, report.json
  SynthConfig synth;
  ClassifierTrainConfig classifier;
  CamMethod cam;
  DecoderTrainConfig decoder;
  double tau = 0.5;

  // Stable content hash; stamped into every output artifact.
  std::string hash() const;
  std::string canonical_json() const;
};

RunConfig load_config(const std::string& path);
void save_config(const RunConfig& cfg, const std::string& path);

}  // namespace tcam
