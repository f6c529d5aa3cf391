#pragma once

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "tcam/core.hpp"

namespace tcam {

struct FrameRecord {
  std::string path;  // relative to the manifest directory
  int frame_index = 0;
  std::vector<BoundingBox> gt_boxes;
};

struct ShotRecord {
  std::string shot_id;
  std::vector<FrameRecord> frames;
};

struct VideoRecord {
  std::string video_id;
  int class_id = 0;
  std::string split;  // train | val | test
  std::vector<ShotRecord> shots;
};

struct VideoManifest {
  int num_classes = 0;
  std::vector<std::string> class_names;
  ImageDomain frame_size;
  std::vector<VideoRecord> videos;

  std::vector<const VideoRecord*> split_videos(const std::string& split) const;
  void validate() const;
};

void save_manifest(const VideoManifest& m, const std::string& path);
VideoManifest load_manifest(const std::string& path);

Image load_png(const std::string& path);
void save_png(const std::string& path, const Image& img);

Frame load_frame(const std::string& manifest_dir, const VideoRecord& video,
                 const ShotRecord& shot, const FrameRecord& rec);

// Data-loading parallelism, from TCAM_NUM_WORKERS (default 1, clamped to
// [1, hardware_concurrency]).
int num_workers();

// Runs fn(i) for i in [0, count) across num_workers() threads. Work is
// partitioned by index, so writes to distinct slots of a preallocated
// output are deterministic regardless of worker count.
void parallel_for_index(std::size_t count,
                        const std::function<void(std::size_t)>& fn);

// --- synthetic videos -------------------------------------------------------
//
// Moving uniform-body shapes over a low-frequency color-noise background.
// Each class is marked by a small colored patch that shifts position inside
// the object from frame to frame, so single-frame CAMs cover only part of
// the object while consecutive frames cover different parts.
struct SynthConfig {
  int num_classes = 2;
  int videos_per_class = 20;
  int shots_per_video = 1;
  int frames_per_shot = 8;
  double speed = 1.0;  // px/frame
  int image_size = 96;
  int val_videos_per_class = 2;
  int test_videos_per_class = 4;
  bool distractors = false;
};

VideoManifest generate_synthetic(const SynthConfig& cfg, unsigned seed,
                                 const std::string& out_dir);

// --- metrics ----------------------------------------------------------------

struct Prediction {
  std::string video_id;
  std::string shot_id;
  int frame_index = 0;
  int class_id = 0;
  double score = 0.0;
  BoundingBox box;
};

struct CorLocReport {
  double overall = 0.0;
  std::map<int, double> per_class;
  int annotated_frames = 0;
};

// Fraction of annotated frames whose prediction overlaps some ground-truth
// box with IoU strictly greater than 0.5. Every annotated frame must have
// exactly one prediction.
CorLocReport corloc(const std::vector<Prediction>& predictions,
                    const VideoManifest& manifest,
                    const std::string& split = "");

double cl_accuracy(const std::vector<Prediction>& predictions,
                   const VideoManifest& manifest,
                   const std::string& split = "");

void save_predictions(const std::vector<Prediction>& preds,
                      const std::string& path);
std::vector<Prediction> load_predictions(const std::string& path);

// --- YouTube-Objects-style ingest --------------------------------------------
//
// Expects root/<class>/<video>/<shot>/<frame>.png with an optional .txt
// ground-truth file per annotated frame, one "x_min y_min x_max y_max" box
// per line. Videos listed in root/test_videos.txt form the test split;
// val videos are drawn from the rest with a fixed seed.
struct YtoSplitSpec {
  int val_videos_per_class = 5;
  unsigned seed = 0;
};

VideoManifest ingest_yto(const std::string& root, const YtoSplitSpec& spec);

}  // namespace tcam
