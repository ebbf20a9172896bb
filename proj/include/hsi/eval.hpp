#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "hsi/types.hpp"

namespace hsi {

struct SplitIndices {
  std::vector<std::size_t> train;  // ascending row indices
  std::vector<std::size_t> test;
  std::uint64_t seed = 0;
  double ratio = 3.0;  // train : test
};

enum class SplitMode { kStratified, kGlobal };

/// Seeded train/test split of the rows of `set`. Stratified mode sends
/// floor(n * ratio / (ratio + 1)) rows of every class to train, clamped so
/// both sides get at least one; classes with fewer than 2 rows are rejected.
SplitIndices split(const LabeledPixelSet& set, double ratio, std::uint64_t seed,
                   SplitMode mode = SplitMode::kStratified);

struct EvalReport {
  std::size_t num_classes = 0;
  /// num_classes rows (truth 1..C) x (num_classes + 1) columns; column 0
  /// counts "unknown" predictions, column j counts prediction j.
  std::vector<std::size_t> confusion;
  std::vector<double> per_class_accuracy;  // recall; NaN when the class has no test pixels
  double average_accuracy = 0.0;
  double overall_accuracy = 0.0;
  std::size_t total = 0;

  std::size_t count(ClassId truth, ClassId predicted) const {
    return confusion[(truth - 1u) * (num_classes + 1) + predicted];
  }
  std::size_t row_total(ClassId truth) const;
};

/// Scores `pred` on the listed pixels (duplicates count once per listing).
/// Pixels with truth 0 are skipped. num_classes defaults to truth.num_classes.
EvalReport evaluate(const LabelMap& pred, const GroundTruth& truth,
                    std::span<const std::size_t> test_pixels, std::size_t num_classes = 0);

/// Confusion matrix CSV: header of class names, one row per true class with
/// its recall ("n/a" when empty), then OA and AA rows.
std::string report_csv(const EvalReport& report, const std::vector<std::string>& class_names = {});

struct ComparisonTable {
  std::vector<std::string> methods;
  std::vector<EvalReport> reports;

  /// "method,OA,AA" in percent, one row per method in the given order.
  std::string csv() const;
  /// Aligned console rendering of the same table.
  std::string text() const;
  /// Category rows x method columns with AA and OA rows, in percent.
  std::string per_class_csv(const std::vector<std::string>& class_names = {}) const;
};

ComparisonTable compare(std::vector<std::pair<std::string, EvalReport>> reports);

}  // namespace hsi
