#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include "tcam/data.hpp"

namespace fs = std::filesystem;
using namespace tcam;

namespace {

fs::path fresh_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

SynthConfig small_synth(double speed) {
  SynthConfig cfg;
  cfg.num_classes = 2;
  cfg.videos_per_class = 4;
  cfg.frames_per_shot = 5;
  cfg.speed = speed;
  cfg.image_size = 64;
  cfg.val_videos_per_class = 1;
  cfg.test_videos_per_class = 1;
  return cfg;
}

// Minimal in-memory manifest for the metric fixtures; no files involved.
VideoManifest metric_manifest(const std::vector<BoundingBox>& gts) {
  VideoManifest m;
  m.num_classes = 2;
  m.class_names = {"a", "b"};
  m.frame_size = ImageDomain(64, 64);
  VideoRecord v;
  v.video_id = "v0";
  v.class_id = 1;
  v.split = "test";
  ShotRecord s;
  s.shot_id = "s0";
  for (int t = 0; t < int(gts.size()); ++t) {
    FrameRecord f;
    f.frame_index = t;
    f.path = "x.png";
    f.gt_boxes = {gts[t]};
    s.frames.push_back(std::move(f));
  }
  v.shots.push_back(std::move(s));
  m.videos.push_back(std::move(v));
  return m;
}

Prediction make_pred(int t, const BoundingBox& box, int cls = 1) {
  Prediction p;
  p.video_id = "v0";
  p.shot_id = "s0";
  p.frame_index = t;
  p.class_id = cls;
  p.box = box;
  return p;
}

}  // namespace

TEST_CASE("static synthetic videos keep a fixed ground-truth box") {
  const fs::path dir = fresh_dir("synth_static");
  const VideoManifest m = generate_synthetic(small_synth(0.0), 7, dir.string());
  for (const auto& v : m.videos)
    for (const auto& s : v.shots) {
      const BoundingBox first = s.frames[0].gt_boxes.at(0);
      CHECK(first.x_max - first.x_min == 40);
      CHECK(first.y_max - first.y_min == 22);
      for (const auto& f : s.frames) CHECK(f.gt_boxes.at(0) == first);
    }
}

TEST_CASE("synthetic motion advances exactly speed px per frame") {
  const fs::path dir = fresh_dir("synth_motion");
  const VideoManifest m = generate_synthetic(small_synth(3.0), 9, dir.string());
  for (const auto& v : m.videos)
    for (const auto& s : v.shots) {
      const BoundingBox b0 = s.frames[0].gt_boxes.at(0);
      const BoundingBox b1 = s.frames[1].gt_boxes.at(0);
      const int dx = b1.x_min - b0.x_min, dy = b1.y_min - b0.y_min;
      CHECK((dx != 0 || dy != 0));
      CHECK((dx == 0 || std::abs(dx) == 3));
      CHECK((dy == 0 || std::abs(dy) == 3));
      for (std::size_t t = 1; t < s.frames.size(); ++t) {
        const BoundingBox prev = s.frames[t - 1].gt_boxes.at(0);
        const BoundingBox cur = s.frames[t].gt_boxes.at(0);
        CHECK(cur.x_min - prev.x_min == dx);
        CHECK(cur.y_min - prev.y_min == dy);
        CHECK(cur.x_min >= 0);
        CHECK(cur.y_min >= 0);
        CHECK(cur.x_max <= 64);
        CHECK(cur.y_max <= 64);
      }
    }
}

TEST_CASE("synthetic manifest structure, splits and pixels") {
  const fs::path dir = fresh_dir("synth_full");
  const VideoManifest m = generate_synthetic(small_synth(1.0), 3, dir.string());
  m.validate();
  CHECK(m.videos.size() == 8);

  std::map<std::string, std::map<std::string, int>> split_count;
  for (const auto& v : m.videos)
    ++split_count[m.class_names[v.class_id]][v.split];
  for (const auto& cls : m.class_names) {
    CHECK(split_count[cls]["val"] == 1);
    CHECK(split_count[cls]["test"] == 1);
    CHECK(split_count[cls]["train"] == 2);
  }

  // The round trip through disk preserves everything.
  const VideoManifest loaded =
      load_manifest((dir / "manifest.json").string());
  CHECK(loaded.videos.size() == m.videos.size());
  CHECK(loaded.num_classes == 2);
  CHECK(loaded.frame_size == m.frame_size);
  for (std::size_t i = 0; i < m.videos.size(); ++i) {
    CHECK(loaded.videos[i].video_id == m.videos[i].video_id);
    CHECK(loaded.videos[i].split == m.videos[i].split);
    CHECK(loaded.videos[i].shots[0].frames[0].gt_boxes ==
          m.videos[i].shots[0].frames[0].gt_boxes);
  }

  // The object body is the uniform gray rectangle the box claims.
  const VideoRecord& v = m.videos.front();
  const Frame frame = load_frame(dir.string(), v, v.shots[0],
                                 v.shots[0].frames[0]);
  CHECK(frame.image.dom == ImageDomain(64, 64));
  const BoundingBox b = v.shots[0].frames[0].gt_boxes.at(0);
  for (int c = 0; c < 3; ++c)
    CHECK(frame.image.at(c, b.y_min, b.x_min) ==
          doctest::Approx(0.45f).epsilon(0.02));
}

TEST_CASE("excessive speed is rejected") {
  const fs::path dir = fresh_dir("synth_fast");
  CHECK_THROWS_WITH_AS(generate_synthetic(small_synth(20.0), 1, dir.string()),
                       doctest::Contains("speed too high"), Error);
}

TEST_CASE("png round trip is exact after quantization") {
  const fs::path dir = fresh_dir("png_rt");
  Image img(ImageDomain(16, 16));
  for (std::size_t i = 0; i < img.chw.size(); ++i)
    img.chw[i] = float(i % 256) / 255.f;
  const std::string path = (dir / "img.png").string();
  save_png(path, img);
  const Image back = load_png(path);
  REQUIRE(back.dom == img.dom);
  for (std::size_t i = 0; i < img.chw.size(); ++i)
    CHECK(back.chw[i] == doctest::Approx(img.chw[i]).epsilon(1e-6));
}

TEST_CASE("manifest validation catches malformed inputs") {
  VideoManifest m = metric_manifest({{0, 0, 10, 10}});
  CHECK_NOTHROW(m.validate());

  VideoManifest dup = m;
  dup.videos.push_back(dup.videos[0]);
  CHECK_THROWS_AS(dup.validate(), Error);

  VideoManifest bad_class = m;
  bad_class.videos[0].class_id = 5;
  CHECK_THROWS_AS(bad_class.validate(), Error);

  VideoManifest no_shots = m;
  no_shots.videos[0].shots.clear();
  CHECK_THROWS_AS(no_shots.validate(), Error);

  VideoManifest dup_frame = m;
  dup_frame.videos[0].shots[0].frames.push_back(
      dup_frame.videos[0].shots[0].frames[0]);
  CHECK_THROWS_AS(dup_frame.validate(), Error);
}

TEST_CASE("corloc is strict at IoU 0.5") {
  const VideoManifest m =
      metric_manifest({{0, 0, 100, 10}, {0, 0, 100, 10}, {0, 0, 100, 10}});

  SUBCASE("0.6 / 0.4 / 0.5 scores one hit of three") {
    const auto rep = corloc({make_pred(0, {0, 0, 60, 10}),
                             make_pred(1, {0, 0, 40, 10}),
                             make_pred(2, {0, 0, 50, 10})},
                            m);
    CHECK(rep.annotated_frames == 3);
    CHECK(rep.overall == doctest::Approx(1.0 / 3.0));
    CHECK(rep.per_class.at(1) == doctest::Approx(1.0 / 3.0));
  }
  SUBCASE("0.6 / 0.4 / 0.51 scores two of three") {
    const auto rep = corloc({make_pred(0, {0, 0, 60, 10}),
                             make_pred(1, {0, 0, 40, 10}),
                             make_pred(2, {0, 0, 51, 10})},
                            m);
    CHECK(rep.overall == doctest::Approx(2.0 / 3.0));
  }
  SUBCASE("missing prediction throws") {
    CHECK_THROWS_AS(corloc({make_pred(0, {0, 0, 60, 10})}, m), Error);
  }
  SUBCASE("wrong split has no annotated frames") {
    CHECK_THROWS_AS(corloc({}, m, "train"), Error);
  }
  SUBCASE("best gt box counts on multi-box frames") {
    VideoManifest multi = metric_manifest({{0, 0, 100, 10}});
    multi.videos[0].shots[0].frames[0].gt_boxes.push_back({0, 20, 60, 30});
    const auto rep = corloc({make_pred(0, {0, 20, 60, 30})}, multi);
    CHECK(rep.overall == doctest::Approx(1.0));
  }
}

TEST_CASE("cl accuracy counts annotated frames with the right class") {
  const VideoManifest m =
      metric_manifest({{0, 0, 10, 10}, {0, 0, 10, 10}});
  CHECK(cl_accuracy({make_pred(0, {0, 0, 1, 1}, 1),
                     make_pred(1, {0, 0, 1, 1}, 0)},
                    m) == doctest::Approx(0.5));
}

TEST_CASE("predictions survive the jsonl round trip") {
  const fs::path dir = fresh_dir("preds_rt");
  std::vector<Prediction> preds = {make_pred(0, {1, 2, 3, 4}),
                                   make_pred(7, {5, 6, 30, 40}, 0)};
  preds[0].score = 0.875;
  const std::string path = (dir / "preds.jsonl").string();
  save_predictions(preds, path);
  const auto back = load_predictions(path);
  REQUIRE(back.size() == 2);
  CHECK(back[0].video_id == "v0");
  CHECK(back[0].score == 0.875);
  CHECK(back[0].box == BoundingBox{1, 2, 3, 4});
  CHECK(back[1].frame_index == 7);
  CHECK(back[1].class_id == 0);
}

TEST_CASE("yto-style tree ingest") {
  const fs::path root = fresh_dir("yto_tree");
  Image img(ImageDomain(16, 16));
  const std::vector<std::string> classes = {"cat", "dog"};
  for (const auto& cls : classes)
    for (int vi = 0; vi < 3; ++vi) {
      const std::string vid = cls + "_v" + std::to_string(vi);
      const fs::path shot = root / cls / vid / "shot0";
      fs::create_directories(shot);
      for (int t = 0; t < 2; ++t) {
        char name[16];
        std::snprintf(name, sizeof(name), "%05d.png", t);
        save_png((shot / name).string(), img);
      }
      std::ofstream gt(shot / "00000.txt");
      gt << "1 2 9 10\n";
    }
  {
    std::ofstream tf(root / "test_videos.txt");
    tf << "cat_v0\n" << "dog_v2\n";
  }

  YtoSplitSpec spec;
  spec.val_videos_per_class = 1;
  spec.seed = 5;
  const VideoManifest m = ingest_yto(root.string(), spec);
  CHECK(m.num_classes == 2);
  CHECK(m.class_names == classes);
  CHECK(m.frame_size == ImageDomain(16, 16));
  CHECK(m.videos.size() == 6);

  std::map<std::string, std::set<std::string>> by_split;
  for (const auto& v : m.videos) by_split[v.split].insert(v.video_id);
  CHECK(by_split["test"] == std::set<std::string>{"cat_v0", "dog_v2"});
  CHECK(by_split["val"].size() == 2);
  CHECK(by_split["train"].size() == 2);

  for (const auto& v : m.videos) {
    REQUIRE(v.shots.size() == 1);
    REQUIRE(v.shots[0].frames.size() == 2);
    CHECK(v.shots[0].frames[0].gt_boxes ==
          std::vector<BoundingBox>{{1, 2, 9, 10}});
    CHECK(v.shots[0].frames[1].gt_boxes.empty());
  }

  CHECK_THROWS_AS(ingest_yto((root / "nope").string(), spec), Error);
}

TEST_CASE("worker count comes from the environment and loads stay ordered") {
  unsetenv("TCAM_NUM_WORKERS");
  CHECK(num_workers() == 1);
  setenv("TCAM_NUM_WORKERS", "0", 1);
  CHECK(num_workers() == 1);
  setenv("TCAM_NUM_WORKERS", "2", 1);
  CHECK(num_workers() >= 1);
  setenv("TCAM_NUM_WORKERS", "junk", 1);
  CHECK_THROWS_AS(num_workers(), Error);

  // Results land at their own index regardless of worker count.
  setenv("TCAM_NUM_WORKERS", "4", 1);
  std::vector<int> got(100, -1);
  parallel_for_index(got.size(), [&](std::size_t i) { got[i] = int(i) * 3; });
  for (std::size_t i = 0; i < got.size(); ++i) CHECK(got[i] == int(i) * 3);
  unsetenv("TCAM_NUM_WORKERS");
}
