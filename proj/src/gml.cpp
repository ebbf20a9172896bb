#include "hsi/gml.hpp"

#include <cmath>
#include <fstream>
#include <map>
#include <string>

#include "hsi/error.hpp"
#include "hsi/parallel.hpp"
#include "json.hpp"

namespace hsi {

GmlClassModel make_class_model(ClassId id, double prior, Eigen::VectorXd mean,
                               Eigen::MatrixXd covariance) {
  const auto k = mean.size();
  if (covariance.rows() != k || covariance.cols() != k) {
    throw DataError("covariance shape does not match mean");
  }
  if (!(prior > 0.0 && prior <= 1.0)) throw DataError("class prior must lie in (0, 1]");
  covariance = 0.5 * (covariance + covariance.transpose()).eval();
  Eigen::LLT<Eigen::MatrixXd> llt(covariance);
  if (llt.info() != Eigen::Success) {
    throw NumericError("covariance of class " + std::to_string(id) +
                       " is not positive definite; increase the ridge");
  }
  GmlClassModel c;
  c.class_id = id;
  c.prior = prior;
  c.mean = std::move(mean);
  c.covariance = std::move(covariance);
  c.precision = llt.solve(Eigen::MatrixXd::Identity(k, k));
  c.precision = 0.5 * (c.precision + c.precision.transpose()).eval();
  const Eigen::MatrixXd l = llt.matrixL();
  c.log_det = 2.0 * l.diagonal().array().log().sum();
  if (!std::isfinite(c.log_det)) throw NumericError("non-finite covariance log-determinant");
  return c;
}

GmlModel fit_gml(const LabeledPixelSet& train, const GmlFitOptions& options) {
  train.validate();
  if (options.ridge < 0.0 || options.relative_ridge < 0.0) {
    throw ConfigError("ridge must be non-negative");
  }
  std::map<ClassId, std::vector<std::size_t>> rows_by_class;
  for (std::size_t i = 0; i < train.rows(); ++i) rows_by_class[train.labels[i]].push_back(i);

  const auto k = static_cast<Eigen::Index>(train.dims);
  const double total = static_cast<double>(train.rows());
  GmlModel model;
  for (const auto& [id, rows] : rows_by_class) {
    if (id == 0) throw DataError("training set contains label 0");
    if (rows.size() < 2) {
      throw DataError("class " + std::to_string(id) + " has fewer than 2 training samples");
    }
    const double n = static_cast<double>(rows.size());
    Eigen::VectorXd mean = Eigen::VectorXd::Zero(k);
    for (auto r : rows) {
      mean += Eigen::Map<const Eigen::VectorXf>(train.row(r).data(), k).cast<double>();
    }
    mean /= n;
    Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(k, k);
    for (auto r : rows) {
      const Eigen::VectorXd d =
          Eigen::Map<const Eigen::VectorXf>(train.row(r).data(), k).cast<double>() - mean;
      cov.selfadjointView<Eigen::Lower>().rankUpdate(d);
    }
    cov = cov.selfadjointView<Eigen::Lower>();
    cov /= n;
    const double ridge = options.ridge + options.relative_ridge * cov.trace() / static_cast<double>(k);
    cov.diagonal().array() += ridge;
    model.classes.push_back(make_class_model(id, n / total, std::move(mean), std::move(cov)));
  }
  return model;
}

void normalize_priors(GmlModel& model) {
  double sum = 0.0;
  for (const auto& c : model.classes) sum += c.prior;
  if (!(sum > 0.0)) throw DataError("priors sum to zero");
  for (auto& c : model.classes) c.prior /= sum;
}

std::vector<double> log_posterior(const GmlModel& model, std::span<const double> pixel) {
  if (pixel.size() != model.dims()) {
    throw DataError("pixel dimension " + std::to_string(pixel.size()) +
                    " does not match model dimension " + std::to_string(model.dims()));
  }
  const Eigen::Map<const Eigen::VectorXd> x(pixel.data(), static_cast<Eigen::Index>(pixel.size()));
  std::vector<double> scores;
  scores.reserve(model.classes.size());
  for (const auto& c : model.classes) {
    const Eigen::VectorXd d = x - c.mean;
    scores.push_back(std::log(c.prior) - 0.5 * c.log_det - 0.5 * d.dot(c.precision * d));
  }
  return scores;
}

std::vector<double> log_posterior(const GmlModel& model, std::span<const float> pixel) {
  std::vector<double> x(pixel.begin(), pixel.end());
  return log_posterior(model, std::span<const double>(x));
}

ClassId predict_gml(const GmlModel& model, std::span<const double> pixel) {
  const auto scores = log_posterior(model, pixel);
  std::size_t best = 0;
  for (std::size_t i = 1; i < scores.size(); ++i) {
    if (scores[i] > scores[best]) best = i;
  }
  if (!(scores[best] >= model.threshold)) return 0;
  return model.classes[best].class_id;
}

LabelMap classify_gml(const GmlModel& model, const HyperCube& features, unsigned threads) {
  if (features.bands != model.dims()) {
    throw DataError("cube has " + std::to_string(features.bands) + " bands, GML model expects " +
                    std::to_string(model.dims()));
  }
  LabelMap out(features.height, features.width);
  const std::size_t plane = features.pixels();
  parallel_for(plane, threads, [&](std::size_t begin, std::size_t end) {
    std::vector<double> x(features.bands);
    for (std::size_t p = begin; p < end; ++p) {
      for (std::size_t b = 0; b < features.bands; ++b) x[b] = features.data[b * plane + p];
      out.labels[p] = predict_gml(model, x);
    }
  });
  return out;
}

void save_gml(const GmlModel& model, const std::filesystem::path& path) {
  nlohmann::ordered_json j;
  j["kind"] = "gml";
  j["version"] = 1;
  j["dims"] = model.dims();
  if (std::isfinite(model.threshold)) {
    j["threshold"] = model.threshold;
  } else {
    j["threshold"] = nullptr;
  }
  j["classes"] = nlohmann::ordered_json::array();
  for (const auto& c : model.classes) {
    nlohmann::ordered_json jc;
    jc["id"] = c.class_id;
    jc["prior"] = c.prior;
    jc["mean"] = std::vector<double>(c.mean.data(), c.mean.data() + c.mean.size());
    auto rows = nlohmann::ordered_json::array();
    for (Eigen::Index r = 0; r < c.covariance.rows(); ++r) {
      std::vector<double> row(static_cast<std::size_t>(c.covariance.cols()));
      for (Eigen::Index col = 0; col < c.covariance.cols(); ++col) row[col] = c.covariance(r, col);
      rows.push_back(row);
    }
    jc["covariance"] = rows;
    j["classes"].push_back(jc);
  }
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot open " + path.string() + " for writing");
  out << j.dump(1) << '\n';
}

GmlModel load_gml(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  GmlModel model;
  try {
    const auto j = nlohmann::json::parse(in);
    if (j.at("kind") != "gml") throw DataError(path.string() + ": not a GML model");
    if (j.at("version") != 1) throw DataError(path.string() + ": incompatible GML checkpoint version");
    if (!j.at("threshold").is_null()) model.threshold = j["threshold"].get<double>();
    for (const auto& jc : j.at("classes")) {
      const auto mean_v = jc.at("mean").get<std::vector<double>>();
      const auto k = static_cast<Eigen::Index>(mean_v.size());
      Eigen::VectorXd mean = Eigen::Map<const Eigen::VectorXd>(mean_v.data(), k);
      Eigen::MatrixXd cov(k, k);
      const auto& rows = jc.at("covariance");
      if (static_cast<Eigen::Index>(rows.size()) != k) throw DataError(path.string() + ": bad covariance");
      for (Eigen::Index r = 0; r < k; ++r) {
        const auto row = rows[static_cast<std::size_t>(r)].get<std::vector<double>>();
        if (static_cast<Eigen::Index>(row.size()) != k) throw DataError(path.string() + ": bad covariance");
        for (Eigen::Index c = 0; c < k; ++c) cov(r, c) = row[static_cast<std::size_t>(c)];
      }
      model.classes.push_back(make_class_model(jc.at("id").get<ClassId>(),
                                               jc.at("prior").get<double>(), std::move(mean),
                                               std::move(cov)));
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path.string() + ": malformed GML model: " + e.what());
  }
  if (model.classes.empty()) throw DataError(path.string() + ": GML model has no classes");
  return model;
}

}  // namespace hsi
