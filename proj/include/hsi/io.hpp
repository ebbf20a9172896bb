#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "hsi/types.hpp"

namespace hsi {

// Container layout shared by every binary file the project writes:
//   4-byte magic | one-line UTF-8 JSON header terminated by '\n' | raw
//   little-endian payload.
//
//   HSC1  {"dtype":"f32","height":H,"width":W,"bands":L}   f32, band-sequential
//   HSL1  {"dtype":"u16"|"u32","height":H,"width":W}       row-major raster

inline constexpr std::string_view kCubeMagic = "HSC1";
inline constexpr std::string_view kRasterMagic = "HSL1";

HyperCube read_cube(const std::filesystem::path& path);
void write_cube(const HyperCube& cube, const std::filesystem::path& path);

/// Reads an HSL1 u16 raster. num_classes is the largest id present; an
/// all-zero raster is rejected.
GroundTruth read_labels(const std::filesystem::path& path);
void write_labels(const GroundTruth& gt, const std::filesystem::path& path);

/// LabelMaps share the u16 raster container with GroundTruth but may be all
/// zero.
LabelMap read_label_map(const std::filesystem::path& path);
void write_label_map(const LabelMap& map, const std::filesystem::path& path);

/// Generic u32 raster (segmentation maps).
struct U32Raster {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint32_t> values;
};
U32Raster read_u32_raster(const std::filesystem::path& path);
void write_u32_raster(const U32Raster& raster, const std::filesystem::path& path);

GroundTruth to_ground_truth(const LabelMap& map);

using Rgb = std::array<std::uint8_t, 3>;

/// Class id -> color. Id 0 is always black.
class Palette {
 public:
  Palette();

  /// Fixed, visually distinct colors for ids 1..num_classes.
  static Palette distinct(std::size_t num_classes);

  /// Throws ConfigError if the color is already used by another id or if
  /// id 0 is given anything but black.
  void set(std::uint32_t id, Rgb color);
  bool contains(std::uint32_t id) const { return colors_.contains(id); }
  const Rgb& at(std::uint32_t id) const;

 private:
  std::map<std::uint32_t, Rgb> colors_;
};

/// 8-bit RGB PNG, one pixel per label. No timestamp or text chunks, so equal
/// maps give equal bytes.
void write_label_map_png(const LabelMap& map, const Palette& palette,
                         const std::filesystem::path& path);

/// Colorizes a u32 raster (segmentation) with a hashed palette; 0 stays black.
void write_region_png(const U32Raster& regions, const std::filesystem::path& path);

struct RgbImage {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<Rgb> pixels;  // row-major
};
RgbImage read_png_rgb(const std::filesystem::path& path);

// Low-level container helpers, shared with the model checkpoints.
namespace container {

struct Header {
  std::string magic;
  std::string json;
  std::vector<char> payload;
};

void write(const std::filesystem::path& path, std::string_view magic,
           const std::string& json_header, const void* payload, std::size_t bytes);
Header read(const std::filesystem::path& path);

}  // namespace container

}  // namespace hsi
