#include "tcam/data.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>
#include <set>
#include <thread>

#include <json.hpp>
#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include "tcam/nn.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace tcam {

std::vector<const VideoRecord*> VideoManifest::split_videos(
    const std::string& split) const {
  std::vector<const VideoRecord*> out;
  for (const auto& v : videos)
    if (split.empty() || v.split == split) out.push_back(&v);
  return out;
}

void VideoManifest::validate() const {
  if (num_classes < 2) throw Error("manifest: need at least 2 classes");
  std::set<std::string> ids;
  for (const auto& v : videos) {
    if (!ids.insert(v.video_id).second)
      throw Error("manifest: duplicate video id '" + v.video_id + "'");
    if (v.class_id < 0 || v.class_id >= num_classes)
      throw Error("manifest: class id out of range in '" + v.video_id + "'");
    if (v.shots.empty())
      throw Error("manifest: video '" + v.video_id + "' has no shots");
    for (const auto& s : v.shots) {
      if (s.frames.empty())
        throw Error("manifest: empty shot in '" + v.video_id + "'");
      std::set<int> t;
      for (const auto& f : s.frames)
        if (!t.insert(f.frame_index).second)
          throw Error("manifest: duplicate frame index in '" + v.video_id + "'");
    }
  }
}

namespace {

json box_to_json(const BoundingBox& b) {
  return json::array({b.x_min, b.y_min, b.x_max, b.y_max});
}

BoundingBox box_from_json(const json& j) {
  return {j.at(0).get<int>(), j.at(1).get<int>(), j.at(2).get<int>(),
          j.at(3).get<int>()};
}

}  // namespace

void save_manifest(const VideoManifest& m, const std::string& path) {
  json j;
  j["num_classes"] = m.num_classes;
  j["class_names"] = m.class_names;
  j["frame_height"] = m.frame_size.height;
  j["frame_width"] = m.frame_size.width;
  j["videos"] = json::array();
  for (const auto& v : m.videos) {
    json jv = {{"video_id", v.video_id},
               {"class_id", v.class_id},
               {"split", v.split},
               {"shots", json::array()}};
    for (const auto& s : v.shots) {
      json js = {{"shot_id", s.shot_id}, {"frames", json::array()}};
      for (const auto& f : s.frames) {
        json jf = {{"path", f.path}, {"frame_index", f.frame_index}};
        if (!f.gt_boxes.empty()) {
          jf["gt_boxes"] = json::array();
          for (const auto& b : f.gt_boxes) jf["gt_boxes"].push_back(box_to_json(b));
        }
        js["frames"].push_back(std::move(jf));
      }
      jv["shots"].push_back(std::move(js));
    }
    j["videos"].push_back(std::move(jv));
  }
  std::ofstream f(path);
  f << j.dump(1) << "\n";
  if (!f) throw Error("save_manifest: cannot write '" + path + "'");
}

VideoManifest load_manifest(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw Error("load_manifest: cannot open '" + path + "'");
  json j = json::parse(f);
  VideoManifest m;
  m.num_classes = j.at("num_classes").get<int>();
  m.class_names = j.at("class_names").get<std::vector<std::string>>();
  m.frame_size =
      ImageDomain(j.at("frame_height").get<int>(), j.at("frame_width").get<int>());
  for (const auto& jv : j.at("videos")) {
    VideoRecord v;
    v.video_id = jv.at("video_id").get<std::string>();
    v.class_id = jv.at("class_id").get<int>();
    v.split = jv.at("split").get<std::string>();
    for (const auto& js : jv.at("shots")) {
      ShotRecord s;
      s.shot_id = js.at("shot_id").get<std::string>();
      for (const auto& jf : js.at("frames")) {
        FrameRecord r;
        r.path = jf.at("path").get<std::string>();
        r.frame_index = jf.at("frame_index").get<int>();
        if (jf.contains("gt_boxes"))
          for (const auto& jb : jf.at("gt_boxes"))
            r.gt_boxes.push_back(box_from_json(jb));
        s.frames.push_back(std::move(r));
      }
      v.shots.push_back(std::move(s));
    }
    m.videos.push_back(std::move(v));
  }
  m.validate();
  return m;
}

Image load_png(const std::string& path) {
  cv::Mat bgr = cv::imread(path, cv::IMREAD_COLOR);
  if (bgr.empty()) throw Error("load_png: cannot read '" + path + "'");
  Image img(ImageDomain(bgr.rows, bgr.cols));
  const int plane = img.dom.area();
  for (int y = 0; y < bgr.rows; ++y)
    for (int x = 0; x < bgr.cols; ++x) {
      const cv::Vec3b px = bgr.at<cv::Vec3b>(y, x);
      img.chw[0 * plane + y * bgr.cols + x] = float(px[2]) / 255.f;
      img.chw[1 * plane + y * bgr.cols + x] = float(px[1]) / 255.f;
      img.chw[2 * plane + y * bgr.cols + x] = float(px[0]) / 255.f;
    }
  return img;
}

void save_png(const std::string& path, const Image& img) {
  cv::Mat bgr(img.dom.height, img.dom.width, CV_8UC3);
  const int plane = img.dom.area();
  for (int y = 0; y < img.dom.height; ++y)
    for (int x = 0; x < img.dom.width; ++x) {
      auto q = [&](int c) {
        const float v = std::clamp(img.chw[c * plane + y * img.dom.width + x],
                                   0.f, 1.f);
        return uchar(std::lround(v * 255.f));
      };
      bgr.at<cv::Vec3b>(y, x) = cv::Vec3b(q(2), q(1), q(0));
    }
  if (!cv::imwrite(path, bgr)) throw Error("save_png: cannot write '" + path + "'");
}

Frame load_frame(const std::string& manifest_dir, const VideoRecord& video,
                 const ShotRecord& shot, const FrameRecord& rec) {
  Frame f;
  f.image = load_png((fs::path(manifest_dir) / rec.path).string());
  f.frame_index = rec.frame_index;
  f.shot_id = shot.shot_id;
  f.video_id = video.video_id;
  return f;
}

int num_workers() {
  const char* env = std::getenv("TCAM_NUM_WORKERS");
  if (!env) return 1;
  int n = 1;
  try {
    n = std::stoi(env);
  } catch (const std::exception&) {
    throw Error("TCAM_NUM_WORKERS is not an integer");
  }
  const int hw = std::max(1u, std::thread::hardware_concurrency());
  return std::clamp(n, 1, hw);
}

void parallel_for_index(std::size_t count,
                        const std::function<void(std::size_t)>& fn) {
  const int workers = std::min<std::size_t>(num_workers(), count);
  if (workers <= 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  for (int w = 0; w < workers; ++w)
    pool.emplace_back([&]() {
      for (std::size_t i = next++; i < count; i = next++) fn(i);
    });
  for (auto& t : pool) t.join();
}

// --- synthetic generator ------------------------------------------------------

namespace {

constexpr int kObjW = 40, kObjH = 22, kPatch = 8;

struct ClassStyle {
  float r, g, b;
};

// Fully saturated marks on a muted background (see make_background): no
// background blob can fall within the patch palette, so the class patch is
// the only feature that generalizes across videos.
const ClassStyle kPalette[] = {
    {1.f, 0.f, 0.f}, {0.f, 0.f, 1.f}, {0.f, 1.f, 0.f},
    {1.f, 1.f, 0.f}, {1.f, 0.f, 1.f}, {0.f, 1.f, 1.f},
};

Image make_background(int size, std::mt19937& rng) {
  // Low-frequency color noise: coarse random grid, bilinearly upscaled.
  // The range leaves a margin to the saturated class-patch palette.
  constexpr int kGrid = 6;
  std::uniform_real_distribution<float> ud(0.2f, 0.8f);
  Image img{ImageDomain(size, size)};
  for (int c = 0; c < 3; ++c) {
    std::vector<float> grid(kGrid * kGrid);
    for (auto& v : grid) v = ud(rng);
    std::vector<float> up =
        nn::bilinear_resize_plane(grid, kGrid, kGrid, size, size);
    std::copy(up.begin(), up.end(), img.chw.begin() + c * size * size);
  }
  return img;
}

void fill_rect(Image& img, int x0, int y0, int x1, int y1, float r, float g,
               float b) {
  const int plane = img.dom.area();
  x0 = std::max(0, x0);
  y0 = std::max(0, y0);
  x1 = std::min(img.dom.width, x1);
  y1 = std::min(img.dom.height, y1);
  for (int y = y0; y < y1; ++y)
    for (int x = x0; x < x1; ++x) {
      img.chw[0 * plane + y * img.dom.width + x] = r;
      img.chw[1 * plane + y * img.dom.width + x] = g;
      img.chw[2 * plane + y * img.dom.width + x] = b;
    }
}

}  // namespace

VideoManifest generate_synthetic(const SynthConfig& cfg, unsigned seed,
                                 const std::string& out_dir) {
  if (cfg.num_classes < 2) throw Error("generate_synthetic: need K >= 2");
  if (cfg.num_classes > int(std::size(kPalette)))
    throw Error("generate_synthetic: at most 6 classes supported");
  if (cfg.speed < 0) throw Error("generate_synthetic: negative speed");

  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw Error("generate_synthetic: cannot create '" + out_dir + "'");

  std::mt19937 rng(seed);
  VideoManifest m;
  m.num_classes = cfg.num_classes;
  m.frame_size = ImageDomain(cfg.image_size, cfg.image_size);
  for (int k = 0; k < cfg.num_classes; ++k)
    m.class_names.push_back("class" + std::to_string(k));

  const int size = cfg.image_size;

  for (int k = 0; k < cfg.num_classes; ++k) {
    // Split assignment: shuffle within class, then carve off val and test.
    std::vector<int> order(cfg.videos_per_class);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);

    for (int vi = 0; vi < cfg.videos_per_class; ++vi) {
      VideoRecord video;
      video.video_id = m.class_names[k] + "_v" + std::to_string(vi);
      video.class_id = k;
      const int rank =
          int(std::find(order.begin(), order.end(), vi) - order.begin());
      video.split = rank < cfg.val_videos_per_class ? "val"
                    : rank < cfg.val_videos_per_class + cfg.test_videos_per_class
                        ? "test"
                        : "train";

      for (int si = 0; si < cfg.shots_per_video; ++si) {
        ShotRecord shot;
        shot.shot_id = "s" + std::to_string(si);
        const Image bg = make_background(size, rng);

        // Direction and a start that keeps the whole trajectory in frame.
        std::uniform_int_distribution<int> dir3(-1, 1);
        int ux = 0, uy = 0;
        while (ux == 0 && uy == 0) {
          ux = dir3(rng);
          uy = dir3(rng);
        }
        const double travel = cfg.speed * double(cfg.frames_per_shot - 1);
        auto pick_start = [&](int udir, int extent) {
          const double lo = 2.0 + (udir < 0 ? travel : 0.0);
          const double hi = double(size - extent - 2) - (udir > 0 ? travel : 0.0);
          if (hi < lo) throw Error("generate_synthetic: speed too high for frame");
          std::uniform_real_distribution<double> d(lo, hi);
          return d(rng);
        };
        double px = pick_start(ux, kObjW);
        double py = pick_start(uy, kObjH);

        std::uniform_int_distribution<int> phase_d(0, 2);
        int phase = phase_d(rng);

        int dis_x = 0, dis_y = 0;
        if (cfg.distractors) {
          std::uniform_int_distribution<int> dx(2, size - kPatch - 2);
          dis_x = dx(rng);
          dis_y = dx(rng);
        }

        for (int t = 0; t < cfg.frames_per_shot; ++t) {
          Image img = bg;
          const int ox = int(std::lround(px + cfg.speed * t * ux));
          const int oy = int(std::lround(py + cfg.speed * t * uy));
          if (cfg.distractors)
            fill_rect(img, dis_x, dis_y, dis_x + kPatch, dis_y + kPatch, 0.45f,
                      0.45f, 0.45f);
          fill_rect(img, ox, oy, ox + kObjW, oy + kObjH, 0.45f, 0.45f, 0.45f);

          // Class-colored patch; its slot inside the body cycles over time so
          // consecutive frames highlight different parts of the object.
          const int slot = (phase + t) % 3;
          const int patch_x = ox + 1 + slot * ((kObjW - 2 - kPatch) / 2);
          const int patch_y = oy + (kObjH - kPatch) / 2;
          const ClassStyle& st = kPalette[k];
          fill_rect(img, patch_x, patch_y, patch_x + kPatch, patch_y + kPatch,
                    st.r, st.g, st.b);

          FrameRecord rec;
          rec.frame_index = t;
          rec.gt_boxes.push_back({ox, oy, ox + kObjW, oy + kObjH});
          char name[64];
          std::snprintf(name, sizeof(name), "f%03d.png", t);
          const fs::path rel =
              fs::path(video.video_id) / shot.shot_id / name;
          fs::create_directories(fs::path(out_dir) / rel.parent_path());
          save_png((fs::path(out_dir) / rel).string(), img);
          rec.path = rel.string();
          shot.frames.push_back(std::move(rec));
        }
        video.shots.push_back(std::move(shot));
      }
      m.videos.push_back(std::move(video));
    }
  }

  m.validate();
  save_manifest(m, (fs::path(out_dir) / "manifest.json").string());
  return m;
}

// --- metrics -------------------------------------------------------------------

namespace {

std::string pred_key(const std::string& v, const std::string& s, int t) {
  return v + "\x1f" + s + "\x1f" + std::to_string(t);
}

}  // namespace

CorLocReport corloc(const std::vector<Prediction>& predictions,
                    const VideoManifest& manifest, const std::string& split) {
  std::map<std::string, const Prediction*> by_key;
  for (const auto& p : predictions)
    by_key[pred_key(p.video_id, p.shot_id, p.frame_index)] = &p;

  CorLocReport rep;
  std::map<int, std::pair<int, int>> per_class;  // hits, total
  int hits = 0;
  for (const auto* v : manifest.split_videos(split)) {
    for (const auto& s : v->shots)
      for (const auto& f : s.frames) {
        if (f.gt_boxes.empty()) continue;
        auto it = by_key.find(pred_key(v->video_id, s.shot_id, f.frame_index));
        if (it == by_key.end())
          throw Error("corloc: missing prediction for " + v->video_id + "/" +
                      s.shot_id + "/" + std::to_string(f.frame_index));
        double best = 0.0;
        for (const auto& gt : f.gt_boxes)
          best = std::max(best, iou(it->second->box, gt));
        const bool hit = best > 0.5;  // strict: IoU exactly 0.5 fails
        hits += hit;
        ++rep.annotated_frames;
        auto& pc = per_class[v->class_id];
        pc.first += hit;
        ++pc.second;
      }
  }
  if (rep.annotated_frames == 0) throw Error("corloc: no annotated frames");
  rep.overall = double(hits) / double(rep.annotated_frames);
  for (const auto& [cls, pc] : per_class)
    rep.per_class[cls] = double(pc.first) / double(pc.second);
  return rep;
}

double cl_accuracy(const std::vector<Prediction>& predictions,
                   const VideoManifest& manifest, const std::string& split) {
  std::map<std::string, const Prediction*> by_key;
  for (const auto& p : predictions)
    by_key[pred_key(p.video_id, p.shot_id, p.frame_index)] = &p;

  int correct = 0, total = 0;
  for (const auto* v : manifest.split_videos(split))
    for (const auto& s : v->shots)
      for (const auto& f : s.frames) {
        if (f.gt_boxes.empty()) continue;
        auto it = by_key.find(pred_key(v->video_id, s.shot_id, f.frame_index));
        if (it == by_key.end()) throw Error("cl_accuracy: missing prediction");
        correct += it->second->class_id == v->class_id;
        ++total;
      }
  if (total == 0) throw Error("cl_accuracy: no annotated frames");
  return double(correct) / double(total);
}

void save_predictions(const std::vector<Prediction>& preds,
                      const std::string& path) {
  std::ofstream f(path);
  for (const auto& p : preds) {
    json j = {{"video_id", p.video_id},   {"shot_id", p.shot_id},
              {"frame_index", p.frame_index}, {"class_id", p.class_id},
              {"score", p.score},         {"box", box_to_json(p.box)}};
    f << j.dump() << "\n";
  }
  if (!f) throw Error("save_predictions: cannot write '" + path + "'");
}

std::vector<Prediction> load_predictions(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw Error("load_predictions: cannot open '" + path + "'");
  std::vector<Prediction> out;
  std::string line;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    json j = json::parse(line);
    Prediction p;
    p.video_id = j.at("video_id").get<std::string>();
    p.shot_id = j.at("shot_id").get<std::string>();
    p.frame_index = j.at("frame_index").get<int>();
    p.class_id = j.at("class_id").get<int>();
    p.score = j.at("score").get<double>();
    p.box = box_from_json(j.at("box"));
    out.push_back(std::move(p));
  }
  return out;
}

// --- YouTube-Objects-style ingest ------------------------------------------------

VideoManifest ingest_yto(const std::string& root, const YtoSplitSpec& spec) {
  if (!fs::is_directory(root))
    throw Error("ingest_yto: '" + root + "' is not a directory");

  std::set<std::string> test_ids;
  {
    std::ifstream tf(fs::path(root) / "test_videos.txt");
    std::string line;
    while (std::getline(tf, line))
      if (!line.empty()) test_ids.insert(line);
  }

  std::vector<std::string> class_dirs;
  for (const auto& e : fs::directory_iterator(root))
    if (e.is_directory()) class_dirs.push_back(e.path().filename().string());
  std::sort(class_dirs.begin(), class_dirs.end());
  if (class_dirs.empty()) throw Error("ingest_yto: no class directories");

  VideoManifest m;
  m.num_classes = int(class_dirs.size());
  m.class_names = class_dirs;

  for (int k = 0; k < int(class_dirs.size()); ++k) {
    std::vector<std::string> video_dirs;
    for (const auto& e : fs::directory_iterator(fs::path(root) / class_dirs[k]))
      if (e.is_directory()) video_dirs.push_back(e.path().filename().string());
    std::sort(video_dirs.begin(), video_dirs.end());

    // Val split drawn with a fixed seed from the non-test videos.
    std::vector<std::string> pool;
    for (const auto& v : video_dirs)
      if (!test_ids.count(v)) pool.push_back(v);
    std::mt19937 split_rng(spec.seed + unsigned(k));
    std::shuffle(pool.begin(), pool.end(), split_rng);
    std::set<std::string> val_ids(
        pool.begin(),
        pool.begin() + std::min<std::size_t>(pool.size(),
                                             spec.val_videos_per_class));

    for (const auto& vd : video_dirs) {
      VideoRecord video;
      video.video_id = vd;
      video.class_id = k;
      video.split = test_ids.count(vd) ? "test" : val_ids.count(vd) ? "val" : "train";

      const fs::path vpath = fs::path(root) / class_dirs[k] / vd;
      std::vector<std::string> shot_dirs;
      for (const auto& e : fs::directory_iterator(vpath))
        if (e.is_directory()) shot_dirs.push_back(e.path().filename().string());
      std::sort(shot_dirs.begin(), shot_dirs.end());

      for (const auto& sd : shot_dirs) {
        ShotRecord shot;
        shot.shot_id = sd;
        std::vector<fs::path> frames;
        for (const auto& e : fs::directory_iterator(vpath / sd))
          if (e.path().extension() == ".png") frames.push_back(e.path());
        std::sort(frames.begin(), frames.end());

        int idx = 0;
        for (const auto& fp : frames) {
          FrameRecord rec;
          rec.frame_index = idx++;
          rec.path = fs::relative(fp, root).string();
          const fs::path gt = fs::path(fp).replace_extension(".txt");
          if (fs::exists(gt)) {
            std::ifstream gf(gt);
            int x0, y0, x1, y1;
            while (gf >> x0 >> y0 >> x1 >> y1)
              rec.gt_boxes.push_back({x0, y0, x1, y1});
            if (rec.gt_boxes.empty())
              throw Error("ingest_yto: unparsable annotation '" + gt.string() +
                          "'");
          }
          shot.frames.push_back(std::move(rec));
        }
        if (!shot.frames.empty()) video.shots.push_back(std::move(shot));
      }
      if (!video.shots.empty()) m.videos.push_back(std::move(video));
    }
  }

  // Frame size is taken from the first frame on disk.
  if (m.videos.empty()) throw Error("ingest_yto: no videos found");
  const Image first = load_png(
      (fs::path(root) / m.videos[0].shots[0].frames[0].path).string());
  m.frame_size = first.dom;
  m.validate();
  return m;
}

}  // namespace tcam
