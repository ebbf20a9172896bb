#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace hsi {

using ClassId = std::uint16_t;

/// H x W x L reflectance raster, band-sequential: value(b, r, c) lives at
/// data[(b * height + r) * width + c].
struct HyperCube {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t bands = 0;
  std::vector<float> data;

  HyperCube() = default;
  HyperCube(std::size_t h, std::size_t w, std::size_t l)
      : height(h), width(w), bands(l), data(h * w * l, 0.0f) {}

  std::size_t pixels() const { return height * width; }

  float& at(std::size_t band, std::size_t row, std::size_t col) {
    return data[(band * height + row) * width + col];
  }
  float at(std::size_t band, std::size_t row, std::size_t col) const {
    return data[(band * height + row) * width + col];
  }

  std::span<float> band(std::size_t b) { return {data.data() + b * pixels(), pixels()}; }
  std::span<const float> band(std::size_t b) const {
    return {data.data() + b * pixels(), pixels()};
  }

  /// Spectral vector of the pixel at flat index `pixel` (row-major).
  std::vector<float> spectrum(std::size_t pixel) const;

  /// Throws DataError unless the shape/payload/finiteness invariants hold.
  void validate() const;
};

/// Reference labels; 0 marks unlabeled pixels.
struct GroundTruth {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<ClassId> labels;  // row-major
  std::size_t num_classes = 0;  // max nonzero id present

  std::size_t pixels() const { return height * width; }
};

/// Predicted class per pixel; 0 is unknown/unlabeled.
struct LabelMap {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<ClassId> labels;  // row-major

  LabelMap() = default;
  LabelMap(std::size_t h, std::size_t w) : height(h), width(w), labels(h * w, 0) {}

  std::size_t pixels() const { return height * width; }
  ClassId& operator()(std::size_t r, std::size_t c) { return labels[r * width + c]; }
  ClassId operator()(std::size_t r, std::size_t c) const { return labels[r * width + c]; }

  friend bool operator==(const LabelMap&, const LabelMap&) = default;
};

/// Flat list of (feature vector, class id) samples. `origin` optionally
/// records the source pixel index of every row so that duplicated rows can be
/// traced back to the raster.
struct LabeledPixelSet {
  std::size_t dims = 0;
  std::vector<float> features;  // rows x dims, row-major
  std::vector<ClassId> labels;
  std::vector<std::size_t> origin;

  std::size_t rows() const { return labels.size(); }
  std::span<const float> row(std::size_t i) const {
    return {features.data() + i * dims, dims};
  }
  void validate() const;
};

/// Gathers the spectra of every nonzero-label pixel in row-major order;
/// `origin` holds the pixel indices.
LabeledPixelSet labeled_pixels(const HyperCube& cube, const GroundTruth& gt);

/// Gathers the spectra of the given pixels (duplicates allowed) with their
/// ground-truth labels.
LabeledPixelSet gather_pixels(const HyperCube& cube, const GroundTruth& gt,
                              std::span<const std::size_t> pixels);

}  // namespace hsi
