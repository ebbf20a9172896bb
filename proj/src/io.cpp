#include "hsi/io.hpp"

#include <png.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iterator>
#include <set>

#include "hsi/error.hpp"
#include "json.hpp"

namespace hsi {
namespace {

using ordered_json = nlohmann::ordered_json;
namespace fs = std::filesystem;

constexpr std::size_t kMaxHeaderBytes = 1 << 16;

template <typename T>
T from_le(T v) {
  if constexpr (std::endian::native == std::endian::little || sizeof(T) == 1) {
    return v;
  } else {
    unsigned char b[sizeof(T)];
    std::memcpy(b, &v, sizeof(T));
    std::reverse(b, b + sizeof(T));
    std::memcpy(&v, b, sizeof(T));
    return v;
  }
}

template <typename T>
std::vector<T> decode_payload(const std::vector<char>& bytes, std::size_t count,
                              const fs::path& path) {
  if (bytes.size() != count * sizeof(T)) {
    throw DataError(path.string() + ": payload holds " + std::to_string(bytes.size()) +
                    " bytes, header implies " + std::to_string(count * sizeof(T)));
  }
  std::vector<T> out(count);
  std::memcpy(out.data(), bytes.data(), bytes.size());
  for (auto& v : out) v = from_le(v);
  return out;
}

template <typename T>
std::vector<T> to_le(std::vector<T> values) {
  for (auto& v : values) v = from_le(v);
  return values;
}

nlohmann::json parse_header(const container::Header& h, const fs::path& path) {
  try {
    auto j = nlohmann::json::parse(h.json);
    if (!j.is_object()) throw DataError(path.string() + ": header is not a JSON object");
    return j;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path.string() + ": malformed header: " + e.what());
  }
}

std::size_t positive_dim(const nlohmann::json& j, const char* key, const fs::path& path) {
  if (!j.contains(key) || !j[key].is_number_unsigned() || j[key].get<std::size_t>() == 0) {
    throw DataError(path.string() + ": header field '" + key +
                    "' missing or not a positive integer");
  }
  return j[key].get<std::size_t>();
}

std::string dtype_of(const nlohmann::json& j, const fs::path& path) {
  if (!j.contains("dtype") || !j["dtype"].is_string()) {
    throw DataError(path.string() + ": header field 'dtype' missing");
  }
  return j["dtype"].get<std::string>();
}

void expect_magic(const container::Header& h, std::string_view magic, const fs::path& path) {
  if (h.magic != magic) {
    throw DataError(path.string() + ": bad magic, expected " + std::string(magic));
  }
}

struct RasterHeader {
  std::size_t height, width;
  std::string dtype;
};

RasterHeader raster_header(const container::Header& h, const fs::path& path) {
  expect_magic(h, kRasterMagic, path);
  auto j = parse_header(h, path);
  return {positive_dim(j, "height", path), positive_dim(j, "width", path), dtype_of(j, path)};
}

std::vector<std::uint16_t> read_u16_raster(const fs::path& path, std::size_t& height,
                                           std::size_t& width) {
  auto h = container::read(path);
  auto rh = raster_header(h, path);
  if (rh.dtype != "u16") throw DataError(path.string() + ": expected dtype u16, got " + rh.dtype);
  height = rh.height;
  width = rh.width;
  return decode_payload<std::uint16_t>(h.payload, height * width, path);
}

void write_u16_raster(const std::vector<std::uint16_t>& values, std::size_t height,
                      std::size_t width, const fs::path& path) {
  if (values.size() != height * width) throw DataError("raster size does not match its shape");
  ordered_json j;
  j["dtype"] = "u16";
  j["height"] = height;
  j["width"] = width;
  auto le = to_le(values);
  container::write(path, kRasterMagic, j.dump(), le.data(), le.size() * sizeof(std::uint16_t));
}

void write_rgb_png(const RgbImage& image, const fs::path& path) {
  png_image png;
  std::memset(&png, 0, sizeof(png));
  png.version = PNG_IMAGE_VERSION;
  png.width = static_cast<png_uint_32>(image.width);
  png.height = static_cast<png_uint_32>(image.height);
  png.format = PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&png, path.c_str(), 0, image.pixels.data(), 0, nullptr)) {
    std::string msg = png.message;
    png_image_free(&png);
    throw DataError("cannot write PNG " + path.string() + ": " + msg);
  }
}

}  // namespace

namespace container {

void write(const fs::path& path, std::string_view magic, const std::string& json_header,
           const void* payload, std::size_t bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot open " + path.string() + " for writing");
  out.write(magic.data(), static_cast<std::streamsize>(magic.size()));
  out.write(json_header.data(), static_cast<std::streamsize>(json_header.size()));
  out.put('\n');
  out.write(static_cast<const char*>(payload), static_cast<std::streamsize>(bytes));
  if (!out) throw DataError("failed writing " + path.string());
}

Header read(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  Header h;
  h.magic.resize(4);
  if (!in.read(h.magic.data(), 4)) throw DataError(path.string() + ": file too short for magic");
  char ch;
  while (in.get(ch) && ch != '\n') {
    h.json.push_back(ch);
    if (h.json.size() > kMaxHeaderBytes) throw DataError(path.string() + ": header too long");
  }
  if (ch != '\n') throw DataError(path.string() + ": header not terminated by newline");
  h.payload.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
  return h;
}

}  // namespace container

std::vector<float> HyperCube::spectrum(std::size_t pixel) const {
  std::vector<float> v(bands);
  for (std::size_t b = 0; b < bands; ++b) v[b] = data[b * pixels() + pixel];
  return v;
}

void HyperCube::validate() const {
  if (height == 0 || width == 0 || bands == 0) throw DataError("cube has an empty dimension");
  if (data.size() != height * width * bands) throw DataError("cube payload does not match shape");
  for (float v : data) {
    if (!std::isfinite(v)) throw DataError("cube contains non-finite values");
  }
}

void LabeledPixelSet::validate() const {
  if (rows() == 0 || dims == 0) throw DataError("empty labeled pixel set");
  if (features.size() != rows() * dims) throw DataError("feature matrix does not match labels");
  if (!origin.empty() && origin.size() != rows()) throw DataError("origin does not match labels");
}

LabeledPixelSet labeled_pixels(const HyperCube& cube, const GroundTruth& gt) {
  std::vector<std::size_t> idx;
  for (std::size_t p = 0; p < gt.labels.size(); ++p) {
    if (gt.labels[p] != 0) idx.push_back(p);
  }
  return gather_pixels(cube, gt, idx);
}

LabeledPixelSet gather_pixels(const HyperCube& cube, const GroundTruth& gt,
                              std::span<const std::size_t> pixels) {
  if (cube.height != gt.height || cube.width != gt.width) {
    throw DataError("cube and ground truth shapes differ");
  }
  LabeledPixelSet set;
  set.dims = cube.bands;
  set.features.resize(pixels.size() * cube.bands);
  set.labels.reserve(pixels.size());
  set.origin.assign(pixels.begin(), pixels.end());
  const std::size_t plane = cube.pixels();
  for (std::size_t i = 0; i < pixels.size(); ++i) {
    const std::size_t p = pixels[i];
    if (p >= plane) throw DataError("pixel index out of range");
    for (std::size_t b = 0; b < cube.bands; ++b) {
      set.features[i * cube.bands + b] = cube.data[b * plane + p];
    }
    set.labels.push_back(gt.labels[p]);
  }
  return set;
}

HyperCube read_cube(const fs::path& path) {
  auto h = container::read(path);
  expect_magic(h, kCubeMagic, path);
  auto j = parse_header(h, path);
  if (dtype_of(j, path) != "f32") throw DataError(path.string() + ": cube dtype must be f32");
  HyperCube cube;
  cube.height = positive_dim(j, "height", path);
  cube.width = positive_dim(j, "width", path);
  cube.bands = positive_dim(j, "bands", path);
  cube.data = decode_payload<float>(h.payload, cube.height * cube.width * cube.bands, path);
  for (float v : cube.data) {
    if (!std::isfinite(v)) throw DataError(path.string() + ": cube contains non-finite values");
  }
  return cube;
}

void write_cube(const HyperCube& cube, const fs::path& path) {
  cube.validate();
  ordered_json j;
  j["dtype"] = "f32";
  j["height"] = cube.height;
  j["width"] = cube.width;
  j["bands"] = cube.bands;
  auto le = to_le(cube.data);
  container::write(path, kCubeMagic, j.dump(), le.data(), le.size() * sizeof(float));
}

GroundTruth read_labels(const fs::path& path) {
  GroundTruth gt;
  gt.labels = read_u16_raster(path, gt.height, gt.width);
  for (auto v : gt.labels) gt.num_classes = std::max<std::size_t>(gt.num_classes, v);
  if (gt.num_classes == 0) throw DataError(path.string() + ": ground truth has no labeled pixels");
  return gt;
}

void write_labels(const GroundTruth& gt, const fs::path& path) {
  write_u16_raster(gt.labels, gt.height, gt.width, path);
}

LabelMap read_label_map(const fs::path& path) {
  LabelMap m;
  m.labels = read_u16_raster(path, m.height, m.width);
  return m;
}

void write_label_map(const LabelMap& map, const fs::path& path) {
  write_u16_raster(map.labels, map.height, map.width, path);
}

U32Raster read_u32_raster(const fs::path& path) {
  auto h = container::read(path);
  auto rh = raster_header(h, path);
  if (rh.dtype != "u32") throw DataError(path.string() + ": expected dtype u32, got " + rh.dtype);
  return {rh.height, rh.width, decode_payload<std::uint32_t>(h.payload, rh.height * rh.width, path)};
}

void write_u32_raster(const U32Raster& raster, const fs::path& path) {
  if (raster.values.size() != raster.height * raster.width) {
    throw DataError("raster size does not match its shape");
  }
  ordered_json j;
  j["dtype"] = "u32";
  j["height"] = raster.height;
  j["width"] = raster.width;
  auto le = to_le(raster.values);
  container::write(path, kRasterMagic, j.dump(), le.data(), le.size() * sizeof(std::uint32_t));
}

GroundTruth to_ground_truth(const LabelMap& map) {
  GroundTruth gt{map.height, map.width, map.labels, 0};
  for (auto v : gt.labels) gt.num_classes = std::max<std::size_t>(gt.num_classes, v);
  return gt;
}

Palette::Palette() { colors_[0] = {0, 0, 0}; }

Palette Palette::distinct(std::size_t num_classes) {
  // Hand-picked colors for the common class counts, then golden-angle hues.
  static constexpr Rgb kBase[] = {
      {230, 25, 75},   {60, 180, 75},   {255, 225, 25},  {0, 130, 200},  {245, 130, 48},
      {145, 30, 180},  {70, 240, 240},  {240, 50, 230},  {210, 245, 60}, {250, 190, 212},
      {0, 128, 128},   {220, 190, 255}, {170, 110, 40},  {255, 250, 200}, {128, 0, 0},
      {170, 255, 195}, {128, 128, 0},   {255, 215, 180}, {0, 0, 128},    {128, 128, 128}};
  Palette p;
  std::set<Rgb> used{{0, 0, 0}};
  for (std::size_t id = 1; id <= num_classes; ++id) {
    Rgb c{};
    if (id <= std::size(kBase)) {
      c = kBase[id - 1];
    } else {
      double hue = std::fmod(static_cast<double>(id) * 137.50776, 360.0);
      double x = 1.0 - std::fabs(std::fmod(hue / 60.0, 2.0) - 1.0);
      double rgb[3] = {0, 0, 0};
      int sector = static_cast<int>(hue / 60.0);
      const int order[6][3] = {{0, 1, 2}, {1, 0, 2}, {2, 0, 1}, {2, 1, 0}, {1, 2, 0}, {0, 2, 1}};
      rgb[order[sector][0]] = 1.0;
      rgb[order[sector][1]] = x;
      for (int k = 0; k < 3; ++k) c[k] = static_cast<std::uint8_t>(40 + 215 * rgb[k]);
      while (used.contains(c)) c[2] = static_cast<std::uint8_t>(c[2] + 1);
    }
    used.insert(c);
    p.colors_[static_cast<std::uint32_t>(id)] = c;
  }
  return p;
}

void Palette::set(std::uint32_t id, Rgb color) {
  if (id == 0) {
    if (color != Rgb{0, 0, 0}) throw ConfigError("palette id 0 is reserved for black");
    return;
  }
  for (const auto& [other, c] : colors_) {
    if (other != id && c == color) {
      throw ConfigError("palette color for id " + std::to_string(id) + " duplicates id " +
                        std::to_string(other));
    }
  }
  colors_[id] = color;
}

const Rgb& Palette::at(std::uint32_t id) const {
  auto it = colors_.find(id);
  if (it == colors_.end()) throw DataError("palette has no color for id " + std::to_string(id));
  return it->second;
}

void write_label_map_png(const LabelMap& map, const Palette& palette, const fs::path& path) {
  if (map.labels.size() != map.pixels() || map.pixels() == 0) {
    throw DataError("label map is empty or malformed");
  }
  RgbImage img{map.height, map.width, std::vector<Rgb>(map.pixels())};
  for (std::size_t i = 0; i < map.pixels(); ++i) img.pixels[i] = palette.at(map.labels[i]);
  write_rgb_png(img, path);
}

void write_region_png(const U32Raster& regions, const fs::path& path) {
  RgbImage img{regions.height, regions.width, std::vector<Rgb>(regions.values.size())};
  for (std::size_t i = 0; i < regions.values.size(); ++i) {
    std::uint32_t id = regions.values[i];
    if (id == 0) continue;
    std::uint32_t h = id * 2654435761u;
    img.pixels[i] = {static_cast<std::uint8_t>(64 + (h >> 24) % 192),
                     static_cast<std::uint8_t>(64 + (h >> 16) % 192),
                     static_cast<std::uint8_t>(64 + (h >> 8) % 192)};
  }
  write_rgb_png(img, path);
}

RgbImage read_png_rgb(const fs::path& path) {
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.c_str())) {
    throw DataError("cannot read PNG " + path.string() + ": " + image.message);
  }
  image.format = PNG_FORMAT_RGB;
  RgbImage out{image.height, image.width, std::vector<Rgb>(std::size_t{image.height} * image.width)};
  if (!png_image_finish_read(&image, nullptr, out.pixels.data(), 0, nullptr)) {
    png_image_free(&image);
    throw DataError("cannot decode PNG " + path.string() + ": " + image.message);
  }
  return out;
}

}  // namespace hsi
