#pragma once

#include <cstdint>
#include <vector>

#include "hsi/io.hpp"
#include "hsi/types.hpp"

namespace hsi {

struct BinaryMask {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> bits;  // 1 = foreground, row-major

  std::size_t pixels() const { return height * width; }
  bool operator()(std::size_t r, std::size_t c) const { return bits[r * width + c] != 0; }
};

/// Euclidean distance (pixels) from each foreground pixel to the nearest
/// background pixel; 0 on background.
struct DistanceMap {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> values;

  double operator()(std::size_t r, std::size_t c) const { return values[r * width + c]; }
};

struct SegmentationMap {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint32_t> regions;  // 0 = background
  std::size_t num_regions = 0;

  std::size_t pixels() const { return height * width; }
};

struct Marker {
  std::size_t row = 0;
  std::size_t col = 0;
  std::uint32_t id = 0;

  friend bool operator==(const Marker&, const Marker&) = default;
};

struct OtsuResult {
  double threshold = 0.0;  // upper edge of the last background bin
  std::size_t bin = 0;     // last background bin
};

inline constexpr std::size_t kOtsuBins = 256;

/// 256-bin Otsu over [min, max] of `values`. Pixels whose bin index exceeds
/// `bin` are foreground. Throws DataError on a constant input.
OtsuResult otsu_threshold(std::span<const float> values);
std::size_t otsu_bin_of(float v, float lo, float hi);

/// Otsu on the first band (first principal component).
BinaryMask foreground_mask(const HyperCube& features);

/// Foreground = pixels with a nonzero reference label.
BinaryMask mask_from_labels(const GroundTruth& gt);

/// Exact Euclidean distance transform (separable lower-envelope algorithm).
/// Throws DataError when the mask has no background pixel.
DistanceMap distance_transform(const BinaryMask& mask);

/// A pixel is a marker when its distance is >= min_height and no pixel in its
/// (2*min_distance+1)^2 window is higher, or equally high at a
/// lexicographically smaller (row, col). Any 8-connected foreground component
/// left without a marker gets one at its highest pixel (smallest coordinate on
/// ties) so that flooding covers the whole foreground. Ids are assigned in
/// row-major order starting at 1.
std::vector<Marker> find_markers(const DistanceMap& distance, std::size_t min_distance,
                                 double min_height);

/// Priority flood over `elevation` (row-major, same shape as the mask) from
/// single-pixel markers with 8-connectivity. Pixels leave the queue in
/// nondecreasing elevation, ties in insertion order; a popped pixel claims
/// every unclaimed foreground neighbor for its region.
SegmentationMap watershed_flood(const std::vector<double>& elevation,
                                const std::vector<Marker>& markers, const BinaryMask& mask);

/// Negated distance map.
std::vector<double> distance_elevation(const DistanceMap& distance);

/// Sobel gradient magnitude of the first band.
std::vector<double> gradient_elevation(const HyperCube& features);

enum class ElevationMode { kDistance, kGradient };
enum class MaskMode { kOtsu, kLabels };

struct WatershedOptions {
  std::size_t min_distance = 7;
  double min_height = 1.0;
  ElevationMode elevation = ElevationMode::kDistance;
  MaskMode mask = MaskMode::kOtsu;
};

/// mask -> distance -> markers -> flood. `gt` is only consulted for
/// MaskMode::kLabels.
SegmentationMap segment(const HyperCube& features, const WatershedOptions& options,
                        const GroundTruth* gt = nullptr);

U32Raster to_raster(const SegmentationMap& seg);
SegmentationMap from_raster(const U32Raster& raster);

}  // namespace hsi
