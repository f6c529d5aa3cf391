#include <doctest.h>

#include <cmath>
#include <deque>
#include <random>

#include "tcam/localize.hpp"

using namespace tcam;

namespace {

// Independent flood-fill: threshold, label 8-connected components, return the
// tight box of the largest one (first-seen in row-major order breaks ties).
BoundingBox box_oracle(const Cam& cam, double tau) {
  const int h = cam.dom.height, w = cam.dom.width;
  float mx = cam.values[0];
  for (float v : cam.values) mx = std::max(mx, v);
  std::vector<char> on(h * w, 0), seen(h * w, 0);
  for (int p = 0; p < h * w; ++p) on[p] = cam.values[p] >= float(tau) * mx;

  BoundingBox best{};
  std::int64_t best_size = 0;
  for (int p0 = 0; p0 < h * w; ++p0) {
    if (!on[p0] || seen[p0]) continue;
    std::int64_t size = 0;
    int x0 = w, x1 = -1, y0 = h, y1 = -1;
    std::deque<int> q{p0};
    seen[p0] = 1;
    while (!q.empty()) {
      const int p = q.front();
      q.pop_front();
      const int y = p / w, x = p % w;
      ++size;
      x0 = std::min(x0, x);
      x1 = std::max(x1, x);
      y0 = std::min(y0, y);
      y1 = std::max(y1, y);
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
          const int ny = y + dy, nx = x + dx;
          if (ny < 0 || ny >= h || nx < 0 || nx >= w) continue;
          const int np = ny * w + nx;
          if (on[np] && !seen[np]) {
            seen[np] = 1;
            q.push_back(np);
          }
        }
    }
    if (size > best_size) {
      best_size = size;
      best = {x0, y0, x1 + 1, y1 + 1};
    }
  }
  return best;
}

Cam gaussian_bump(ImageDomain dom, double cy, double cx, double sigma) {
  Cam cam(dom, 0, 0);
  for (int y = 0; y < dom.height; ++y)
    for (int x = 0; x < dom.width; ++x)
      cam.at(y, x) = float(std::exp(
          -((y - cy) * (y - cy) + (x - cx) * (x - cx)) / (2 * sigma * sigma)));
  return cam;
}

}  // namespace

TEST_CASE("indicator cam recovers its rectangle exactly") {
  Cam cam(ImageDomain(16, 16), 0, 0);
  for (int y = 3; y < 9; ++y)
    for (int x = 5; x < 12; ++x) cam.at(y, x) = 1.f;
  CHECK(cam_to_box(cam, 0.5) == BoundingBox{5, 3, 12, 9});
}

TEST_CASE("largest component wins over a smaller one") {
  Cam cam(ImageDomain(16, 16), 0, 0);
  for (int y = 1; y < 7; ++y)
    for (int x = 1; x < 7; ++x) cam.at(y, x) = 1.f;  // 36 px
  for (int y = 10; y < 13; ++y)
    for (int x = 10; x < 13; ++x) cam.at(y, x) = 1.f;  // 9 px
  CHECK(cam_to_box(cam, 0.5) == BoundingBox{1, 1, 7, 7});
}

TEST_CASE("diagonal touch counts as connected") {
  Cam cam(ImageDomain(8, 8), 0, 0);
  cam.at(2, 2) = 1.f;
  cam.at(3, 3) = 1.f;
  CHECK(cam_to_box(cam, 0.5) == BoundingBox{2, 2, 4, 4});
}

TEST_CASE("cam_to_box matches the flood-fill oracle on random maps") {
  std::mt19937 rng(1);
  std::uniform_real_distribution<float> ud(0.f, 1.f);
  std::uniform_real_distribution<double> ut(0.2, 0.9);
  for (int trial = 0; trial < 100; ++trial) {
    Cam cam(ImageDomain(12, 12), 0, 0);
    for (auto& v : cam.values) v = ud(rng);
    const double tau = ut(rng);
    CHECK(cam_to_box(cam, tau) == box_oracle(cam, tau));
  }
}

TEST_CASE("box shrinks monotonically with tau on a smooth bump") {
  std::mt19937 rng(2);
  std::uniform_real_distribution<double> uc(6.0, 18.0), us(2.0, 5.0);
  for (int trial = 0; trial < 20; ++trial) {
    const Cam cam =
        gaussian_bump(ImageDomain(24, 24), uc(rng), uc(rng), us(rng));
    BoundingBox prev = cam_to_box(cam, 0.1);
    for (double tau : {0.3, 0.5, 0.7, 0.9}) {
      const BoundingBox cur = cam_to_box(cam, tau);
      CHECK(cur.x_min >= prev.x_min);
      CHECK(cur.y_min >= prev.y_min);
      CHECK(cur.x_max <= prev.x_max);
      CHECK(cur.y_max <= prev.y_max);
      CHECK(cur.area() <= prev.area());
      prev = cur;
    }
  }
}

TEST_CASE("flat cam has no localizable region") {
  Cam cam(ImageDomain(8, 8), 0, 0);
  CHECK_THROWS_WITH_AS(cam_to_box(cam, 0.5),
                       doctest::Contains("no localizable region"), Error);
  std::fill(cam.values.begin(), cam.values.end(), 0.6f);
  CHECK_THROWS_AS(cam_to_box(cam, 0.5), Error);  // any constant map is flat
}

TEST_CASE("tau outside (0,1) is rejected") {
  Cam cam(ImageDomain(8, 8), 0, 0);
  cam.at(4, 4) = 1.f;
  CHECK_THROWS_AS(cam_to_box(cam, 0.0), Error);
  CHECK_THROWS_AS(cam_to_box(cam, 1.0), Error);
  CHECK_THROWS_AS(cam_to_box(cam, -0.5), Error);
}

TEST_CASE("the argmax pixel always lies inside the box") {
  std::mt19937 rng(3);
  std::uniform_real_distribution<float> ud(0.f, 1.f);
  for (int trial = 0; trial < 100; ++trial) {
    Cam cam(ImageDomain(10, 10), 0, 0);
    for (auto& v : cam.values) v = ud(rng);
    const BoundingBox box = cam_to_box(cam, 0.5);
    int best = 0;
    for (int p = 1; p < 100; ++p)
      if (cam.values[p] > cam.values[best]) best = p;
    // The max's component always survives thresholding; the largest component
    // contains it whenever it is unique, as here with continuous values.
    const int by = best / 10, bx = best % 10;
    const BoundingBox max_box = box_oracle(cam, 0.999999);
    CHECK(max_box.x_min <= bx);
    CHECK(max_box.x_max > bx);
    CHECK(box.valid());
    CHECK(box.area() >= 1);
  }
}

TEST_CASE("infer_frame combines classifier argmax with a decoder box") {
  Classifier clf(2, 32, 32, 5);
  DecoderModel model(Classifier(2, 32, 32, 5), 5);
  std::mt19937 rng(6);
  std::uniform_real_distribution<float> ud(0.f, 1.f);
  Frame f;
  f.image = Image(ImageDomain(32, 32));
  for (auto& v : f.image.chw) v = ud(rng);

  const Localization loc = infer_frame(model, clf, f, 0.5);
  const auto probs = clf.classify(f);
  CHECK(loc.class_id ==
        int(std::max_element(probs.begin(), probs.end()) - probs.begin()));
  CHECK(loc.box.valid());
  CHECK(loc.cam.dom == f.image.dom);
  const SoftmaxMaps maps = decoder_forward(model, f);
  CHECK(loc.cam.values == maps.foreground);
  CHECK(loc.box == cam_to_box(loc.cam, 0.5));
}

TEST_CASE("render_overlay keeps the frame size and marks the boxes") {
  Frame f;
  f.image = Image(ImageDomain(32, 32));
  Cam cam(ImageDomain(32, 32), 0, 0);
  cam.at(10, 10) = 1.f;
  const BoundingBox pred{8, 8, 16, 16};
  const Image out = render_overlay(f, cam, pred, {{2, 2, 6, 6}});
  CHECK(out.dom == f.image.dom);
  // Green ground-truth edge and red prediction edge are visible.
  CHECK(out.at(1, 2, 3) > 0.5f);
  CHECK(out.at(0, 8, 9) > 0.5f);
}
