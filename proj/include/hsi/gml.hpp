#pragma once

#include <Eigen/Dense>

#include <filesystem>
#include <limits>
#include <span>
#include <vector>

#include "hsi/types.hpp"

namespace hsi {

/// One class-conditional Gaussian. `covariance` already includes the ridge.
struct GmlClassModel {
  ClassId class_id = 0;
  double prior = 0.0;
  Eigen::VectorXd mean;
  Eigen::MatrixXd covariance;
  Eigen::MatrixXd precision;
  double log_det = 0.0;
};

struct GmlModel {
  std::vector<GmlClassModel> classes;  // ascending class_id
  /// Pixels whose best joint log score ln[P(C) p(x|C)] (without the
  /// -K/2 ln 2pi term) falls below this are labeled 0.
  double threshold = -std::numeric_limits<double>::infinity();

  std::size_t dims() const { return classes.empty() ? 0 : static_cast<std::size_t>(classes.front().mean.size()); }
};

struct GmlFitOptions {
  /// Added to every class covariance diagonal.
  double ridge = 0.0;
  /// Additionally adds relative_ridge * trace(cov_c) / K to class c.
  double relative_ridge = 0.0;
};

/// Builds a class model from explicit parameters, computing the precision and
/// log-determinant. Throws NumericError if `covariance` is not positive
/// definite.
GmlClassModel make_class_model(ClassId id, double prior, Eigen::VectorXd mean,
                               Eigen::MatrixXd covariance);

GmlModel fit_gml(const LabeledPixelSet& train, const GmlFitOptions& options);
inline GmlModel fit_gml(const LabeledPixelSet& train, double ridge) {
  return fit_gml(train, GmlFitOptions{ridge, 0.0});
}

/// Rescales priors to sum to one.
void normalize_priors(GmlModel& model);

/// Per-class ln P(C) - 1/2 ln|S_c| - 1/2 (x-m_c)' S_c^-1 (x-m_c), in
/// model.classes order.
std::vector<double> log_posterior(const GmlModel& model, std::span<const double> pixel);
std::vector<double> log_posterior(const GmlModel& model, std::span<const float> pixel);

/// Argmax class for one pixel (smallest id on ties), or 0 under threshold.
ClassId predict_gml(const GmlModel& model, std::span<const double> pixel);

LabelMap classify_gml(const GmlModel& model, const HyperCube& features, unsigned threads = 1);

void save_gml(const GmlModel& model, const std::filesystem::path& path);
GmlModel load_gml(const std::filesystem::path& path);

}  // namespace hsi
