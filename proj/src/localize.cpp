#include "tcam/localize.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <filesystem>

namespace fs = std::filesystem;

namespace tcam {

BoundingBox cam_to_box(const Cam& cam, double tau) {
  if (tau <= 0.0 || tau >= 1.0) throw Error("cam_to_box: tau must be in (0,1)");
  const auto [mn_it, mx_it] =
      std::minmax_element(cam.values.begin(), cam.values.end());
  if (*mx_it - *mn_it < 1e-8f) throw Error("no localizable region");
  const float thr = float(tau) * *mx_it;

  const int h = cam.dom.height, w = cam.dom.width;
  std::vector<std::uint8_t> fg(cam.values.size());
  for (std::size_t p = 0; p < cam.values.size(); ++p)
    fg[p] = cam.values[p] >= thr;

  // Largest 8-connected component, first-found wins ties.
  std::vector<std::int32_t> comp(fg.size(), -1);
  int best_count = 0;
  BoundingBox best;
  int next_id = 0;
  std::deque<int> queue;
  for (int start = 0; start < int(fg.size()); ++start) {
    if (!fg[start] || comp[start] >= 0) continue;
    const int id = next_id++;
    comp[start] = id;
    queue.push_back(start);
    int count = 0;
    int x0 = w, y0 = h, x1 = -1, y1 = -1;
    while (!queue.empty()) {
      const int p = queue.front();
      queue.pop_front();
      ++count;
      const int y = p / w, x = p % w;
      x0 = std::min(x0, x);
      y0 = std::min(y0, y);
      x1 = std::max(x1, x);
      y1 = std::max(y1, y);
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
          const int ny = y + dy, nx = x + dx;
          if (ny < 0 || ny >= h || nx < 0 || nx >= w) continue;
          const int q = ny * w + nx;
          if (fg[q] && comp[q] < 0) {
            comp[q] = id;
            queue.push_back(q);
          }
        }
    }
    if (count > best_count) {
      best_count = count;
      best = {x0, y0, x1 + 1, y1 + 1};
    }
  }
  return best;
}

Localization infer_frame(DecoderModel& model, Classifier& classifier,
                         const Frame& frame, double tau) {
  Localization out;
  const std::vector<float> probs = classifier.classify(frame);
  out.class_id =
      int(std::max_element(probs.begin(), probs.end()) - probs.begin());
  out.score = probs[out.class_id];

  SoftmaxMaps maps = decoder_forward(model, frame);
  out.cam = Cam(frame.image.dom, frame.frame_index, out.class_id);
  out.cam.values = maps.foreground;
  try {
    out.box = cam_to_box(out.cam, tau);
  } catch (const Error&) {
    // A flat foreground map has no localizable region; fall back to the
    // whole frame so inference over a split never aborts mid-run.
    out.box = {0, 0, frame.image.dom.width, frame.image.dom.height};
  }
  return out;
}

std::vector<Prediction> infer_split(DecoderModel& model,
                                    const VideoManifest& manifest,
                                    const std::string& manifest_dir,
                                    const std::string& split, double tau,
                                    bool annotated_only) {
  std::vector<Prediction> preds;
  const ImageDomain input(model.encoder.input_h, model.encoder.input_w);
  for (const auto* v : manifest.split_videos(split)) {
    for (const auto& s : v->shots)
      for (const auto& rec : s.frames) {
        if (annotated_only && rec.gt_boxes.empty()) continue;
        Frame frame = load_frame(manifest_dir, *v, s, rec);
        const ImageDomain native = frame.image.dom;
        if (!(native == input)) frame.image = resize_image(frame.image, input);
        Localization loc = infer_frame(model, model.encoder, frame, tau);

        Prediction p;
        p.video_id = v->video_id;
        p.shot_id = s.shot_id;
        p.frame_index = rec.frame_index;
        p.class_id = loc.class_id;
        p.score = loc.score;
        p.box = loc.box;
        if (!(native == input)) {
          // Map the box back to native frame coordinates.
          const double sy = double(native.height) / input.height;
          const double sx = double(native.width) / input.width;
          p.box = {int(std::lround(loc.box.x_min * sx)),
                   int(std::lround(loc.box.y_min * sy)),
                   int(std::lround(loc.box.x_max * sx)),
                   int(std::lround(loc.box.y_max * sy))};
        }
        preds.push_back(std::move(p));
      }
  }
  return preds;
}

namespace {

void draw_box(Image& img, const BoundingBox& b, float r, float g, float bch) {
  const int plane = img.dom.area();
  auto put = [&](int y, int x) {
    if (y < 0 || y >= img.dom.height || x < 0 || x >= img.dom.width) return;
    img.chw[0 * plane + y * img.dom.width + x] = r;
    img.chw[1 * plane + y * img.dom.width + x] = g;
    img.chw[2 * plane + y * img.dom.width + x] = bch;
  };
  for (int x = b.x_min; x < b.x_max; ++x) {
    put(b.y_min, x);
    put(b.y_max - 1, x);
  }
  for (int y = b.y_min; y < b.y_max; ++y) {
    put(y, b.x_min);
    put(y, b.x_max - 1);
  }
}

}  // namespace

Image render_overlay(const Frame& frame, const Cam& cam,
                     const BoundingBox& prediction,
                     const std::vector<BoundingBox>& gt_boxes) {
  Image img = frame.image;
  const int plane = img.dom.area();
  for (int p = 0; p < plane; ++p) {
    const float heat = cam.values[p];
    img.chw[p] = std::min(1.f, img.chw[p] * (1.f - 0.5f * heat) + heat * 0.9f);
    img.chw[plane + p] *= (1.f - 0.5f * heat);
    img.chw[2 * plane + p] *= (1.f - 0.5f * heat);
  }
  for (const auto& gt : gt_boxes) draw_box(img, gt, 0.f, 1.f, 0.f);
  draw_box(img, prediction, 1.f, 0.f, 0.f);
  return img;
}

}  // namespace tcam
