#include "tcam/core.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>

#include <json.hpp>

namespace tcam {

double iou(const BoundingBox& a, const BoundingBox& b) {
  if (!a.valid() || !b.valid()) throw Error("iou: degenerate bounding box");
  const int ix0 = std::max(a.x_min, b.x_min);
  const int iy0 = std::max(a.y_min, b.y_min);
  const int ix1 = std::min(a.x_max, b.x_max);
  const int iy1 = std::min(a.y_max, b.y_max);
  const std::int64_t iw = std::max(0, ix1 - ix0);
  const std::int64_t ih = std::max(0, iy1 - iy0);
  const std::int64_t inter = iw * ih;
  const std::int64_t uni = a.area() + b.area() - inter;
  return double(inter) / double(uni);
}

std::int64_t ArrayData::elem_count() const {
  std::int64_t n = 1;
  for (auto s : shape) n *= s;
  return n;
}

ArrayData ArrayData::from_floats(const std::vector<float>& v,
                                 std::vector<std::int64_t> shape) {
  ArrayData a;
  a.dtype = DType::F32;
  a.shape = std::move(shape);
  if (a.elem_count() != std::int64_t(v.size()))
    throw Error("ArrayData: shape does not match element count");
  a.bytes.resize(v.size() * 4);
  std::memcpy(a.bytes.data(), v.data(), a.bytes.size());
  return a;
}

std::vector<float> ArrayData::to_floats() const {
  if (dtype != DType::F32) throw Error("ArrayData: not an f32 array");
  std::vector<float> v(bytes.size() / 4);
  std::memcpy(v.data(), bytes.data(), bytes.size());
  return v;
}

namespace {

constexpr char kMagic[] = "ARRS1\n";
constexpr std::size_t kMagicLen = 6;

const char* dtype_name(DType d) { return d == DType::F32 ? "f32" : "u8"; }

DType dtype_from_name(const std::string& s) {
  if (s == "f32") return DType::F32;
  if (s == "u8") return DType::U8;
  throw Error("arrs: unknown dtype '" + s + "'");
}

std::size_t dtype_size(DType d) { return d == DType::F32 ? 4 : 1; }

}  // namespace

void save_arrays(const std::string& path, const NamedArrays& arrays) {
  nlohmann::json index = nlohmann::json::array();
  std::int64_t offset = 0;
  for (const auto& [name, arr] : arrays) {
    const std::int64_t expect =
        arr.elem_count() * std::int64_t(dtype_size(arr.dtype));
    if (expect != std::int64_t(arr.bytes.size()))
      throw Error("arrs: byte size of '" + name + "' does not match shape");
    index.push_back({{"name", name},
                     {"dtype", dtype_name(arr.dtype)},
                     {"shape", arr.shape},
                     {"offset", offset},
                     {"nbytes", arr.bytes.size()}});
    offset += std::int64_t(arr.bytes.size());
  }
  const std::string idx = index.dump();

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw Error("arrs: cannot open '" + path + "' for writing");
  f.write(kMagic, kMagicLen);
  const std::uint64_t idx_len = idx.size();
  std::uint8_t len_le[8];
  for (int i = 0; i < 8; ++i) len_le[i] = std::uint8_t(idx_len >> (8 * i));
  f.write(reinterpret_cast<const char*>(len_le), 8);
  f.write(idx.data(), std::streamsize(idx.size()));
  for (const auto& [name, arr] : arrays)
    f.write(reinterpret_cast<const char*>(arr.bytes.data()),
            std::streamsize(arr.bytes.size()));
  if (!f) throw Error("arrs: write failed for '" + path + "'");
}

namespace {

nlohmann::json read_index(std::ifstream& f, const std::string& path) {
  char magic[kMagicLen];
  f.read(magic, kMagicLen);
  if (!f || std::memcmp(magic, kMagic, kMagicLen) != 0)
    throw Error("arrs: bad magic in '" + path + "'");
  std::uint8_t len_le[8];
  f.read(reinterpret_cast<char*>(len_le), 8);
  if (!f) throw Error("arrs: truncated header in '" + path + "'");
  std::uint64_t idx_len = 0;
  for (int i = 0; i < 8; ++i) idx_len |= std::uint64_t(len_le[i]) << (8 * i);
  std::string idx(idx_len, '\0');
  f.read(idx.data(), std::streamsize(idx_len));
  if (!f) throw Error("arrs: truncated index in '" + path + "'");
  return nlohmann::json::parse(idx);
}

ArrayData read_entry(std::ifstream& f, std::streampos data_start,
                     const nlohmann::json& e, const std::string& path) {
  ArrayData a;
  a.dtype = dtype_from_name(e.at("dtype").get<std::string>());
  a.shape = e.at("shape").get<std::vector<std::int64_t>>();
  const std::uint64_t nbytes = e.at("nbytes").get<std::uint64_t>();
  if (std::int64_t(nbytes) != a.elem_count() * std::int64_t(dtype_size(a.dtype)))
    throw Error("arrs: shape/byte mismatch in '" + path + "'");
  a.bytes.resize(nbytes);
  f.seekg(data_start + std::streamoff(e.at("offset").get<std::int64_t>()));
  f.read(reinterpret_cast<char*>(a.bytes.data()), std::streamsize(nbytes));
  if (!f) throw Error("arrs: truncated data in '" + path + "'");
  return a;
}

}  // namespace

NamedArrays load_arrays(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error("arrs: cannot open '" + path + "'");
  const nlohmann::json index = read_index(f, path);
  const std::streampos data_start = f.tellg();
  NamedArrays out;
  for (const auto& e : index)
    out[e.at("name").get<std::string>()] = read_entry(f, data_start, e, path);
  return out;
}

ArrayData load_array(const std::string& path, const std::string& name) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error("arrs: cannot open '" + path + "'");
  const nlohmann::json index = read_index(f, path);
  const std::streampos data_start = f.tellg();
  for (const auto& e : index)
    if (e.at("name").get<std::string>() == name)
      return read_entry(f, data_start, e, path);
  throw Error("arrs: no array named '" + name + "' in '" + path + "'");
}

}  // namespace tcam
