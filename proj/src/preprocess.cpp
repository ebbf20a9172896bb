#include "hsi/preprocess.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <bit>
#include <cstring>
#include <cmath>
#include <map>
#include <string>

#include "hsi/error.hpp"
#include "hsi/io.hpp"
#include "hsi/parallel.hpp"
#include "hsi/random.hpp"
#include "json.hpp"

namespace hsi {
namespace {

std::size_t row_count(std::span<const float> features, std::size_t dims) {
  if (dims == 0 || features.size() % dims != 0) {
    throw DataError("feature matrix size is not a multiple of its dimension");
  }
  return features.size() / dims;
}

constexpr std::string_view kPreprocessMagic = "HSP1";

// Checkpoint payloads are written in host order.
static_assert(std::endian::native == std::endian::little);

}  // namespace

LabeledPixelSet oversample(const LabeledPixelSet& set, std::uint64_t seed) {
  if (set.rows() == 0) throw DataError("oversample: empty input");
  set.validate();

  std::map<ClassId, std::vector<std::size_t>> rows_by_class;
  for (std::size_t i = 0; i < set.rows(); ++i) rows_by_class[set.labels[i]].push_back(i);
  std::size_t target = 0;
  for (const auto& [_, rows] : rows_by_class) target = std::max(target, rows.size());

  LabeledPixelSet out = set;
  Rng rng(seed);
  for (const auto& [label, rows] : rows_by_class) {
    for (std::size_t n = rows.size(); n < target; ++n) {
      const std::size_t src = rows[uniform_index(rng, rows.size())];
      auto r = set.row(src);
      out.features.insert(out.features.end(), r.begin(), r.end());
      out.labels.push_back(label);
      if (!set.origin.empty()) out.origin.push_back(set.origin[src]);
    }
  }
  return out;
}

ScalerParams fit_standardizer(std::span<const float> features, std::size_t dims) {
  const std::size_t n = row_count(features, dims);
  if (n < 2) throw DataError("fit_standardizer needs at least 2 samples");
  ScalerParams p{std::vector<double>(dims, 0.0), std::vector<double>(dims, 0.0)};
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t d = 0; d < dims; ++d) p.mean[d] += features[i * dims + d];
  }
  for (auto& m : p.mean) m /= static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t d = 0; d < dims; ++d) {
      const double c = features[i * dims + d] - p.mean[d];
      p.std[d] += c * c;
    }
  }
  for (auto& s : p.std) {
    s = std::sqrt(s / static_cast<double>(n));
    if (s < kDegenerateStd) s = 1.0;
  }
  return p;
}

std::vector<float> apply_standardizer(const ScalerParams& params, std::span<const float> features) {
  const std::size_t dims = params.mean.size();
  const std::size_t n = row_count(features, dims);
  std::vector<float> out(features.size());
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t d = 0; d < dims; ++d) {
      out[i * dims + d] =
          static_cast<float>((features[i * dims + d] - params.mean[d]) / params.std[d]);
    }
  }
  return out;
}

void standardize_cube(const ScalerParams& params, HyperCube& cube) {
  if (params.mean.size() != cube.bands) throw DataError("scaler dimension does not match cube bands");
  for (std::size_t b = 0; b < cube.bands; ++b) {
    for (float& v : cube.band(b)) {
      v = static_cast<float>((v - params.mean[b]) / params.std[b]);
    }
  }
}

std::size_t components_for_fraction(std::span<const double> eigenvalues_desc, double fraction) {
  double total = 0.0;
  for (double v : eigenvalues_desc) total += v;
  double cumulative = 0.0;
  for (std::size_t k = 0; k < eigenvalues_desc.size(); ++k) {
    cumulative += eigenvalues_desc[k];
    if (cumulative >= fraction * total) return k + 1;
  }
  return eigenvalues_desc.size();
}

PcaModel fit_pca(std::span<const float> features, std::size_t dims, double retained_fraction) {
  if (!(retained_fraction > 0.0 && retained_fraction <= 1.0)) {
    throw ConfigError("retained fraction must lie in (0, 1]");
  }
  const std::size_t n = row_count(features, dims);
  if (n < 2) throw DataError("fit_pca needs at least 2 samples");

  Eigen::MatrixXd x(n, dims);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t d = 0; d < dims; ++d) x(i, d) = features[i * dims + d];
  }
  const Eigen::RowVectorXd mean = x.colwise().mean();
  x.rowwise() -= mean;
  const Eigen::MatrixXd cov = (x.transpose() * x) / static_cast<double>(n);

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
  if (solver.info() != Eigen::Success) throw NumericError("covariance eigendecomposition failed");

  PcaModel model;
  model.dims = dims;
  model.retained_fraction = retained_fraction;
  model.mean.assign(mean.data(), mean.data() + dims);
  model.eigenvalues.resize(dims);
  for (std::size_t k = 0; k < dims; ++k) {
    model.eigenvalues[k] = std::max(0.0, solver.eigenvalues()(dims - 1 - k));
  }
  double total = 0.0;
  for (double v : model.eigenvalues) total += v;
  if (!(total > 0.0)) throw NumericError("covariance has rank 0");

  model.components = components_for_fraction(model.eigenvalues, retained_fraction);
  model.basis.resize(model.components * dims);
  for (std::size_t k = 0; k < model.components; ++k) {
    Eigen::VectorXd v = solver.eigenvectors().col(dims - 1 - k);
    Eigen::Index argmax = 0;
    v.cwiseAbs().maxCoeff(&argmax);
    if (v(argmax) < 0) v = -v;
    std::copy(v.data(), v.data() + dims, model.basis.begin() + k * dims);
  }
  model.explained_variance.assign(model.eigenvalues.begin(),
                                  model.eigenvalues.begin() + model.components);
  return model;
}

std::vector<float> apply_pca(const PcaModel& model, std::span<const float> features) {
  const std::size_t n = row_count(features, model.dims);
  std::vector<float> out(n * model.components);
  std::vector<double> centered(model.dims);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t d = 0; d < model.dims; ++d) {
      centered[d] = features[i * model.dims + d] - model.mean[d];
    }
    for (std::size_t k = 0; k < model.components; ++k) {
      auto c = model.component(k);
      double s = 0.0;
      for (std::size_t d = 0; d < model.dims; ++d) s += centered[d] * c[d];
      out[i * model.components + k] = static_cast<float>(s);
    }
  }
  return out;
}

std::vector<float> reconstruct_pca(const PcaModel& model, std::span<const float> scores) {
  const std::size_t n = row_count(scores, model.components);
  std::vector<float> out(n * model.dims);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t d = 0; d < model.dims; ++d) {
      double s = model.mean[d];
      for (std::size_t k = 0; k < model.components; ++k) {
        s += scores[i * model.components + k] * model.basis[k * model.dims + d];
      }
      out[i * model.dims + d] = static_cast<float>(s);
    }
  }
  return out;
}

HyperCube project_cube(const PcaModel& model, const HyperCube& cube, unsigned threads) {
  if (cube.bands != model.dims) throw DataError("PCA dimension does not match cube bands");
  HyperCube out(cube.height, cube.width, model.components);
  const std::size_t plane = cube.pixels();
  parallel_for(plane, threads, [&](std::size_t begin, std::size_t end) {
    std::vector<double> centered(model.dims);
    for (std::size_t p = begin; p < end; ++p) {
      for (std::size_t d = 0; d < model.dims; ++d) {
        centered[d] = cube.data[d * plane + p] - model.mean[d];
      }
      for (std::size_t k = 0; k < model.components; ++k) {
        auto c = model.component(k);
        double s = 0.0;
        for (std::size_t d = 0; d < model.dims; ++d) s += centered[d] * c[d];
        out.data[k * plane + p] = static_cast<float>(s);
      }
    }
  });
  return out;
}

void check_window(std::size_t window) {
  if (window == 0 || window % 2 == 0) {
    throw ConfigError("patch window must be a positive odd integer, got " + std::to_string(window));
  }
}

void extract_patch(const HyperCube& cube, std::size_t pixel, std::size_t window,
                   std::span<float> out) {
  const auto half = static_cast<std::ptrdiff_t>(window / 2);
  const auto h = static_cast<std::ptrdiff_t>(cube.height);
  const auto w = static_cast<std::ptrdiff_t>(cube.width);
  const auto row = static_cast<std::ptrdiff_t>(pixel / cube.width);
  const auto col = static_cast<std::ptrdiff_t>(pixel % cube.width);
  const std::size_t plane = cube.pixels();
  std::fill(out.begin(), out.end(), 0.0f);
  for (std::ptrdiff_t dy = -half; dy <= half; ++dy) {
    const std::ptrdiff_t y = row + dy;
    if (y < 0 || y >= h) continue;
    for (std::ptrdiff_t dx = -half; dx <= half; ++dx) {
      const std::ptrdiff_t x = col + dx;
      if (x < 0 || x >= w) continue;
      const std::size_t slot =
          (static_cast<std::size_t>(dy + half) * window + static_cast<std::size_t>(dx + half)) *
          cube.bands;
      const std::size_t src = static_cast<std::size_t>(y * w + x);
      for (std::size_t b = 0; b < cube.bands; ++b) out[slot + b] = cube.data[b * plane + src];
    }
  }
}

PatchSet extract_patches(const HyperCube& cube, const GroundTruth& gt,
                         std::span<const std::size_t> pixels, std::size_t window) {
  check_window(window);
  if (cube.height != gt.height || cube.width != gt.width) {
    throw DataError("cube and ground truth shapes differ");
  }
  PatchSet set;
  set.window = window;
  set.channels = cube.bands;
  set.data.resize(pixels.size() * set.patch_size());
  set.origin.assign(pixels.begin(), pixels.end());
  for (std::size_t i = 0; i < pixels.size(); ++i) {
    if (pixels[i] >= cube.pixels()) throw DataError("pixel index out of range");
    extract_patch(cube, pixels[i], window,
                  std::span<float>(set.data).subspan(i * set.patch_size(), set.patch_size()));
    set.labels.push_back(gt.labels[pixels[i]]);
  }
  return set;
}

PatchSet extract_patches(const HyperCube& cube, const GroundTruth& gt, std::size_t window) {
  std::vector<std::size_t> pixels;
  for (std::size_t p = 0; p < gt.labels.size(); ++p) {
    if (gt.labels[p] != 0) pixels.push_back(p);
  }
  return extract_patches(cube, gt, pixels, window);
}

void save_preprocess_model(const ScalerParams& scaler, const PcaModel& pca,
                           const std::filesystem::path& path) {
  if (scaler.mean.size() != pca.dims) throw DataError("scaler and PCA dimensions differ");
  nlohmann::ordered_json j;
  j["kind"] = "preprocess";
  j["version"] = 1;
  j["dtype"] = "f64";
  j["dims"] = pca.dims;
  j["components"] = pca.components;
  j["retained_fraction"] = pca.retained_fraction;
  std::vector<double> payload;
  auto append = [&](const std::vector<double>& v) { payload.insert(payload.end(), v.begin(), v.end()); };
  append(scaler.mean);
  append(scaler.std);
  append(pca.mean);
  append(pca.eigenvalues);
  append(pca.basis);
  container::write(path, kPreprocessMagic, j.dump(), payload.data(), payload.size() * sizeof(double));
}

void load_preprocess_model(const std::filesystem::path& path, ScalerParams& scaler, PcaModel& pca) {
  auto h = container::read(path);
  if (h.magic != kPreprocessMagic) throw DataError(path.string() + ": not a preprocess checkpoint");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(h.json);
    if (j.at("version") != 1) throw DataError(path.string() + ": incompatible preprocess checkpoint version");
    pca.dims = j.at("dims").get<std::size_t>();
    pca.components = j.at("components").get<std::size_t>();
    pca.retained_fraction = j.at("retained_fraction").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path.string() + ": malformed header: " + e.what());
  }
  const std::size_t d = pca.dims, k = pca.components;
  const std::size_t count = 4 * d + k * d;
  if (k == 0 || k > d || h.payload.size() != count * sizeof(double)) {
    throw DataError(path.string() + ": payload size does not match header");
  }
  std::vector<double> v(count);
  std::memcpy(v.data(), h.payload.data(), h.payload.size());
  auto take = [&, offset = std::size_t{0}](std::size_t n) mutable {
    std::vector<double> out(v.begin() + offset, v.begin() + offset + n);
    offset += n;
    return out;
  };
  scaler.mean = take(d);
  scaler.std = take(d);
  pca.mean = take(d);
  pca.eigenvalues = take(d);
  pca.basis = take(k * d);
  pca.explained_variance.assign(pca.eigenvalues.begin(), pca.eigenvalues.begin() + k);
}

}  // namespace hsi
