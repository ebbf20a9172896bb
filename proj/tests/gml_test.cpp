#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

#include "hsi/error.hpp"
#include "hsi/gml.hpp"
#include "support/gml_helpers.hpp"
#include "support/oracles.hpp"
#include "support/synthetic.hpp"
#include "support/tempdir.hpp"

using namespace hsi;

namespace {

LabeledPixelSet from_points(const std::vector<std::vector<float>>& pts, const std::vector<ClassId>& labels) {
  LabeledPixelSet s;
  s.dims = pts.front().size();
  for (const auto& p : pts) s.features.insert(s.features.end(), p.begin(), p.end());
  s.labels = labels;
  return s;
}

GmlModel identity_model(const std::vector<std::vector<double>>& means, std::vector<double> priors = {}) {
  GmlModel m;
  if (priors.empty()) priors.assign(means.size(), 1.0 / static_cast<double>(means.size()));
  const auto k = static_cast<Eigen::Index>(means.front().size());
  for (std::size_t c = 0; c < means.size(); ++c) {
    Eigen::VectorXd mu = Eigen::Map<const Eigen::VectorXd>(means[c].data(), k);
    m.classes.push_back(make_class_model(static_cast<ClassId>(c + 1), priors[c], mu, Eigen::MatrixXd::Identity(k, k)));
  }
  return m;
}

using gmlutil::random_model;

}  // namespace

TEST(FitGml, PopulationCovarianceOfSquare) {
  auto set = from_points({{0, 0}, {2, 0}, {0, 2}, {2, 2}}, {1, 1, 1, 1});
  auto m = fit_gml(set, 0.0);
  ASSERT_EQ(m.classes.size(), 1u);
  EXPECT_DOUBLE_EQ(m.classes[0].mean(0), 1.0);
  EXPECT_DOUBLE_EQ(m.classes[0].mean(1), 1.0);
  EXPECT_DOUBLE_EQ(m.classes[0].covariance(0, 0), 1.0);
  EXPECT_DOUBLE_EQ(m.classes[0].covariance(1, 1), 1.0);
  EXPECT_DOUBLE_EQ(m.classes[0].covariance(0, 1), 0.0);
  EXPECT_DOUBLE_EQ(m.classes[0].prior, 1.0);
}

TEST(FitGml, EqualSizeClassesHaveEqualPriors) {
  auto set = from_points({{0, 0}, {1, 0}, {0, 1}, {5, 5}, {6, 5}, {5, 6}}, {1, 1, 1, 2, 2, 2});
  auto m = fit_gml(set, 0.0);
  EXPECT_DOUBLE_EQ(m.classes[0].prior, 0.5);
  EXPECT_DOUBLE_EQ(m.classes[1].prior, 0.5);
}

TEST(FitGml, IdenticalSamplesWithRidgeAreInvertible) {
  auto set = from_points({{3, 4}, {3, 4}, {3, 4}}, {1, 1, 1});
  auto m = fit_gml(set, 1e-3);
  EXPECT_DOUBLE_EQ(m.classes[0].covariance(0, 0), 1e-3);
  EXPECT_DOUBLE_EQ(m.classes[0].covariance(1, 1), 1e-3);
  EXPECT_DOUBLE_EQ(m.classes[0].covariance(0, 1), 0.0);
  EXPECT_NEAR(m.classes[0].log_det, 2.0 * std::log(1e-3), 1e-12);
  // without a ridge the same class is singular
  EXPECT_THROW(fit_gml(set, 0.0), NumericError);
}

TEST(FitGml, RelativeRidgeScalesWithTrace) {
  auto set = from_points({{0, 0}, {2, 0}, {0, 2}, {2, 2}}, {1, 1, 1, 1});
  auto m = fit_gml(set, GmlFitOptions{0.0, 0.5});
  // trace 2, K 2 -> adds 0.5
  EXPECT_DOUBLE_EQ(m.classes[0].covariance(0, 0), 1.5);
}

TEST(FitGml, ClassWithOneSampleRejected) {
  auto set = from_points({{0, 0}, {1, 1}, {5, 5}}, {1, 1, 2});
  EXPECT_THROW(fit_gml(set, 1.0), DataError);
}

TEST(FitGml, ModelInvariants) {
  auto scene = synth::make_blob_scene(40, 5, 4, 1.0, 12);
  auto m = fit_gml(labeled_pixels(scene.cube, scene.gt), GmlFitOptions{0.0, 1e-6});
  double prior_sum = 0;
  for (const auto& c : m.classes) {
    prior_sum += c.prior;
    EXPECT_LT((c.covariance - c.covariance.transpose()).cwiseAbs().maxCoeff(), 1e-6);
    const Eigen::MatrixXd id = c.precision * c.covariance;
    EXPECT_LT((id - Eigen::MatrixXd::Identity(5, 5)).cwiseAbs().maxCoeff(), 1e-5);
  }
  EXPECT_NEAR(prior_sum, 1.0, 1e-9);
}

TEST(FitGml, PermutationInvariant) {
  auto scene = synth::make_blob_scene(30, 4, 3, 1.0, 13);
  auto set = labeled_pixels(scene.cube, scene.gt);
  auto shuffled = set;
  std::vector<std::size_t> order(set.rows());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(1);
  shuffle(std::span(order), rng);
  for (std::size_t i = 0; i < order.size(); ++i) {
    shuffled.labels[i] = set.labels[order[i]];
    std::copy(set.row(order[i]).begin(), set.row(order[i]).end(), shuffled.features.begin() + i * 4);
  }
  auto a = fit_gml(set, 0.0), b = fit_gml(shuffled, 0.0);
  ASSERT_EQ(a.classes.size(), b.classes.size());
  for (std::size_t c = 0; c < a.classes.size(); ++c) {
    EXPECT_EQ(a.classes[c].class_id, b.classes[c].class_id);
    EXPECT_DOUBLE_EQ(a.classes[c].prior, b.classes[c].prior);
    EXPECT_LT((a.classes[c].mean - b.classes[c].mean).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_LT((a.classes[c].covariance - b.classes[c].covariance).cwiseAbs().maxCoeff(), 1e-12);
  }
  EXPECT_EQ(classify_gml(a, scene.cube), classify_gml(b, scene.cube));
}

TEST(LogPosterior, PixelAtMeanWins) {
  auto m = identity_model({{0, 0}, {3, 1}, {-2, 5}});
  std::vector<double> x = {3, 1};
  auto s = log_posterior(m, x);
  EXPECT_GT(s[1], s[0]);
  EXPECT_GT(s[1], s[2]);
  EXPECT_DOUBLE_EQ(s[1], std::log(1.0 / 3.0));
}

TEST(LogPosterior, MidpointTiesAndTieGoesToSmallestId) {
  auto m = identity_model({{0, 0}, {4, 0}});
  std::vector<double> x = {2, 0};
  auto s = log_posterior(m, x);
  EXPECT_DOUBLE_EQ(s[0], s[1]);
  EXPECT_EQ(predict_gml(m, x), 1);
}

TEST(LogPosterior, HandComputedDifference) {
  auto m = identity_model({{0, 0}, {4, 0}});
  std::vector<double> x = {1, 0};
  auto s = log_posterior(m, x);
  EXPECT_DOUBLE_EQ(s[0] - s[1], 4.0);
}

TEST(LogPosterior, DimensionMismatch) {
  auto m = identity_model({{0, 0}, {4, 0}});
  std::vector<double> x = {1, 0, 0};
  EXPECT_THROW(log_posterior(m, x), DataError);
  HyperCube cube(2, 2, 3);
  EXPECT_THROW(classify_gml(m, cube), DataError);
}

TEST(LogPosterior, MatchesDirectDensityOracle) {
  Rng rng(31);
  double worst = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t k = 1 + uniform_index(rng, 8), classes = 2 + uniform_index(rng, 4);
    auto r = random_model(rng, k, classes);
    std::vector<double> x(k);
    for (auto& v : x) v = synth::uniform(rng, -3.0, 3.0);
    auto s = log_posterior(r.model, x);
    const auto& c1 = r.model.classes[0];
    const double p1 = c1.prior * oracle::gaussian_density(x, r.means[0], r.covs[0]);
    for (std::size_t c = 1; c < classes; ++c) {
      const double pc = r.model.classes[c].prior * oracle::gaussian_density(x, r.means[c], r.covs[c]);
      const double expected = std::log(p1 / pc);
      const double rel = std::fabs((s[0] - s[c]) - expected) / std::fabs(expected);
      worst = std::max(worst, rel);
    }
  }
  EXPECT_LT(worst, 1e-9);
}

TEST(ClassifyGml, NoUnknownWithoutThreshold) {
  auto scene = synth::make_blob_scene(24, 3, 2, 1.0, 1);
  auto m = fit_gml(labeled_pixels(scene.cube, scene.gt), GmlFitOptions{0, 1e-6});
  auto map = classify_gml(m, scene.cube);
  EXPECT_EQ(std::count(map.labels.begin(), map.labels.end(), 0), 0);
}

TEST(ClassifyGml, ThresholdMarksUnlikelyPixelsUnknown) {
  auto m = identity_model({{0, 0}, {4, 0}});
  m.threshold = std::log(0.5) - 2.0;  // within 2 units of squared distance
  std::vector<double> near = {0.5, 0.5}, far = {2, 10};
  EXPECT_EQ(predict_gml(m, near), 1);
  EXPECT_EQ(predict_gml(m, far), 0);
}

TEST(ClassifyGml, AgreesWithBayesOracleOnTwoGaussianImage) {
  Rng rng(44);
  auto r = random_model(rng, 3, 2);
  HyperCube cube(40, 40, 3);
  for (std::size_t p = 0; p < cube.pixels(); ++p) {
    const std::size_t c = p % 2;
    for (std::size_t b = 0; b < 3; ++b)
      cube.data[b * cube.pixels() + p] = static_cast<float>(r.means[c][b] + 1.2 * synth::normal(rng));
  }
  auto map = classify_gml(r.model, cube, 3);
  std::size_t agree = 0;
  for (std::size_t p = 0; p < cube.pixels(); ++p) {
    std::vector<double> x(3);
    for (std::size_t b = 0; b < 3; ++b) x[b] = cube.data[b * cube.pixels() + p];
    const double d1 = r.model.classes[0].prior * oracle::gaussian_density(x, r.means[0], r.covs[0]);
    const double d2 = r.model.classes[1].prior * oracle::gaussian_density(x, r.means[1], r.covs[1]);
    agree += map.labels[p] == (d1 >= d2 ? 1 : 2);
  }
  EXPECT_EQ(agree, cube.pixels());
}

TEST(ClassifyGml, PriorScalingDoesNotChangeArgmax) {
  Rng rng(55);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t k = 1 + uniform_index(rng, 6);
    auto r = random_model(rng, k, 2 + uniform_index(rng, 4));
    auto scaled = r.model;
    const double factor = std::exp(synth::uniform(rng, -20.0, 20.0));
    for (auto& c : scaled.classes) c.prior *= factor;
    normalize_priors(scaled);
    for (int i = 0; i < 5; ++i) {
      std::vector<double> x(k);
      for (auto& v : x) v = synth::uniform(rng, -3.0, 3.0);
      EXPECT_EQ(predict_gml(r.model, x), predict_gml(scaled, x));
    }
  }
}

TEST(ClassifyGml, SharedCovarianceGivesLinearBoundaries) {
  Rng rng(66);
  const std::size_t k = 4;
  auto base = random_model(rng, k, 3);
  // force a shared covariance and equal priors
  GmlModel model;
  Eigen::MatrixXd cov(k, k);
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t j = 0; j < k; ++j) cov(i, j) = base.covs[0][i][j];
  for (std::size_t c = 0; c < 3; ++c)
    model.classes.push_back(make_class_model(static_cast<ClassId>(c + 1), 1.0 / 3.0, base.model.classes[c].mean, cov));
  auto [_, inv] = oracle::det_inverse(base.covs[0]);

  Eigen::LLT<Eigen::MatrixXd> llt(cov);
  const Eigen::MatrixXd l = llt.matrixL();
  for (int n = 0; n < 3000; ++n) {
    const std::size_t c = static_cast<std::size_t>(n % 3);
    Eigen::VectorXd z(k);
    for (std::size_t i = 0; i < k; ++i) z(i) = synth::normal(rng);
    const Eigen::VectorXd x = base.model.classes[c].mean + l * z;
    std::vector<double> xv(x.data(), x.data() + k);

    std::size_t best = 0;
    double best_score = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < 3; ++j) {
      // w_j' x + b_j with w_j = S^-1 mu_j, b_j = -mu_j' S^-1 mu_j / 2
      double wx = 0, b = 0;
      for (std::size_t a = 0; a < k; ++a)
        for (std::size_t t = 0; t < k; ++t) {
          wx += inv[a][t] * base.means[j][t] * xv[a];
          b -= 0.5 * base.means[j][a] * inv[a][t] * base.means[j][t];
        }
      if (wx + b > best_score) {
        best_score = wx + b;
        best = j;
      }
    }
    ASSERT_EQ(predict_gml(model, xv), best + 1);
  }
}

TEST(ClassifyGml, ThreadCountDoesNotMatter) {
  auto scene = synth::make_blob_scene(33, 4, 3, 1.5, 2);
  auto m = fit_gml(labeled_pixels(scene.cube, scene.gt), GmlFitOptions{0, 1e-6});
  EXPECT_EQ(classify_gml(m, scene.cube, 1), classify_gml(m, scene.cube, 5));
}

TEST(GmlCheckpoint, RoundTripIsExact) {
  testutil::TempDir dir;
  auto scene = synth::make_blob_scene(24, 4, 3, 1.0, 6);
  auto m = fit_gml(labeled_pixels(scene.cube, scene.gt), GmlFitOptions{0, 1e-6});
  save_gml(m, dir / "g.json");
  auto back = load_gml(dir / "g.json");
  EXPECT_TRUE(std::isinf(back.threshold));
  for (std::size_t c = 0; c < m.classes.size(); ++c) {
    EXPECT_EQ(back.classes[c].prior, m.classes[c].prior);
    EXPECT_EQ(back.classes[c].covariance, m.classes[c].covariance);
    EXPECT_EQ(back.classes[c].log_det, m.classes[c].log_det);
  }
  EXPECT_EQ(classify_gml(back, scene.cube), classify_gml(m, scene.cube));

  m.threshold = -12.5;
  save_gml(m, dir / "g.json");
  EXPECT_EQ(load_gml(dir / "g.json").threshold, -12.5);
}

TEST(GmlCheckpoint, VersionMismatchRejected) {
  testutil::TempDir dir;
  std::ofstream(dir / "g.json") << R"({"kind":"gml","version":2,"threshold":null,"classes":[]})";
  EXPECT_THROW(load_gml(dir / "g.json"), DataError);
}
