#pragma once

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace tcam {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Discrete image domain: the pixel grid every map in the pipeline lives on.
struct ImageDomain {
  int height = 0;
  int width = 0;

  ImageDomain() = default;
  ImageDomain(int h, int w) : height(h), width(w) {
    if (h < 8 || w < 8) throw Error("ImageDomain: sides must be >= 8");
  }
  int area() const { return height * width; }
  bool operator==(const ImageDomain&) const = default;
};

// RGB image stored channel-major (3 x H x W), values in [0,1].
struct Image {
  ImageDomain dom;
  std::vector<float> chw;

  Image() = default;
  explicit Image(ImageDomain d) : dom(d), chw(3 * d.area(), 0.f) {}
  float& at(int c, int y, int x) { return chw[(c * dom.height + y) * dom.width + x]; }
  float at(int c, int y, int x) const { return chw[(c * dom.height + y) * dom.width + x]; }
};

struct Frame {
  Image image;
  int frame_index = 0;
  std::string shot_id;
  std::string video_id;
};

struct VideoLabel {
  int class_id = 0;
};

// Single-frame activation map, min-max normalized to [0,1].
struct Cam {
  ImageDomain dom;
  std::vector<float> values;
  int frame_index = 0;
  int class_id = 0;

  Cam() = default;
  Cam(ImageDomain d, int t, int cls)
      : dom(d), values(d.area(), 0.f), frame_index(t), class_id(cls) {}
  float& at(int y, int x) { return values[y * dom.width + x]; }
  float at(int y, int x) const { return values[y * dom.width + x]; }
};

// Two-channel per-pixel distribution; background(p) + foreground(p) == 1.
struct SoftmaxMaps {
  ImageDomain dom;
  std::vector<float> background;
  std::vector<float> foreground;

  SoftmaxMaps() = default;
  explicit SoftmaxMaps(ImageDomain d)
      : dom(d), background(d.area(), 0.5f), foreground(d.area(), 0.5f) {}
};

// Half-open pixel box: [x_min, x_max) x [y_min, y_max).
struct BoundingBox {
  int x_min = 0, y_min = 0, x_max = 0, y_max = 0;

  bool valid() const { return x_min < x_max && y_min < y_max && x_min >= 0 && y_min >= 0; }
  std::int64_t area() const {
    return std::int64_t(x_max - x_min) * std::int64_t(y_max - y_min);
  }
  bool operator==(const BoundingBox&) const = default;
};

double iou(const BoundingBox& a, const BoundingBox& b);

// --- Array container (.arrs) ---------------------------------------------
//
// Single-file format: magic "ARRS1\n", 8-byte little-endian index length,
// UTF-8 JSON index [{name, dtype, shape, offset, nbytes}], then the raw
// little-endian buffers back to back. Offsets are relative to the end of
// the index.

enum class DType { F32, U8 };

struct ArrayData {
  DType dtype = DType::F32;
  std::vector<std::int64_t> shape;
  std::vector<std::uint8_t> bytes;

  std::int64_t elem_count() const;
  static ArrayData from_floats(const std::vector<float>& v,
                               std::vector<std::int64_t> shape);
  std::vector<float> to_floats() const;
};

using NamedArrays = std::map<std::string, ArrayData>;

void save_arrays(const std::string& path, const NamedArrays& arrays);
NamedArrays load_arrays(const std::string& path);
ArrayData load_array(const std::string& path, const std::string& name);

}  // namespace tcam
