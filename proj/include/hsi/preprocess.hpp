#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "hsi/types.hpp"

namespace hsi {

/// Duplicates rows of every minority class (uniformly, with replacement)
/// until all classes have the majority count. Original rows come first, in
/// their original order; added rows follow grouped by ascending class id.
LabeledPixelSet oversample(const LabeledPixelSet& set, std::uint64_t seed);

struct ScalerParams {
  std::vector<double> mean;
  std::vector<double> std;  // population std; 1 for degenerate features
};

/// Features with population std below this are passed through unscaled.
inline constexpr double kDegenerateStd = 1e-12;

ScalerParams fit_standardizer(std::span<const float> features, std::size_t dims);
inline ScalerParams fit_standardizer(const LabeledPixelSet& set) {
  return fit_standardizer(set.features, set.dims);
}
std::vector<float> apply_standardizer(const ScalerParams& params, std::span<const float> features);
void standardize_cube(const ScalerParams& params, HyperCube& cube);

struct PcaModel {
  std::size_t dims = 0;        // D
  std::size_t components = 0;  // K
  std::vector<double> mean;    // D
  std::vector<double> basis;   // K x D, row-major, rows orthonormal
  std::vector<double> explained_variance;  // K, non-increasing
  std::vector<double> eigenvalues;         // all D covariance eigenvalues, descending
  double retained_fraction = 1.0;

  std::span<const double> component(std::size_t k) const {
    return {basis.data() + k * dims, dims};
  }
};

/// Eigendecomposes the 1/N covariance and keeps the smallest K whose
/// cumulative eigenvalue share reaches `retained_fraction`. Each component is
/// signed so that its largest-magnitude entry is positive.
PcaModel fit_pca(std::span<const float> features, std::size_t dims, double retained_fraction);

/// Smallest k with sum(eigenvalues[0..k)) >= fraction * sum(eigenvalues).
std::size_t components_for_fraction(std::span<const double> eigenvalues_desc, double fraction);

std::vector<float> apply_pca(const PcaModel& model, std::span<const float> features);
/// Back-projection of K-dimensional scores into the D-dimensional space.
std::vector<float> reconstruct_pca(const PcaModel& model, std::span<const float> scores);
HyperCube project_cube(const PcaModel& model, const HyperCube& cube, unsigned threads = 1);

/// Spatial windows around labeled pixels, zero outside the image.
/// Layout per patch is [y][x][channel].
struct PatchSet {
  std::size_t window = 0;
  std::size_t channels = 0;
  std::vector<float> data;  // N x window x window x channels
  std::vector<ClassId> labels;
  std::vector<std::size_t> origin;

  std::size_t size() const { return labels.size(); }
  std::size_t patch_size() const { return window * window * channels; }
  std::span<const float> patch(std::size_t i) const {
    return {data.data() + i * patch_size(), patch_size()};
  }
};

void check_window(std::size_t window);

/// Writes the window centered on `pixel` into `out` (size window^2 * bands).
void extract_patch(const HyperCube& cube, std::size_t pixel, std::size_t window,
                   std::span<float> out);

/// One patch per nonzero-label pixel, row-major order.
PatchSet extract_patches(const HyperCube& cube, const GroundTruth& gt, std::size_t window);

/// One patch per listed pixel (duplicates allowed), labeled from `gt`.
PatchSet extract_patches(const HyperCube& cube, const GroundTruth& gt,
                         std::span<const std::size_t> pixels, std::size_t window);

void save_preprocess_model(const ScalerParams& scaler, const PcaModel& pca,
                           const std::filesystem::path& path);
void load_preprocess_model(const std::filesystem::path& path, ScalerParams& scaler, PcaModel& pca);

}  // namespace hsi
