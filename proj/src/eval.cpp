#include "hsi/eval.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <map>
#include <numeric>
#include <sstream>

#include "hsi/error.hpp"
#include "hsi/random.hpp"

namespace hsi {
namespace {

std::size_t train_share(std::size_t n, double ratio) {
  const auto t = static_cast<std::size_t>(std::floor(static_cast<double>(n) * ratio / (ratio + 1.0) + 1e-9));
  return std::clamp<std::size_t>(t, 1, n - 1);
}

std::string percent(double v) {
  if (std::isnan(v)) return "n/a";
  std::ostringstream s;
  s << std::fixed << std::setprecision(2) << 100.0 * v;
  return s.str();
}

std::string fraction(double v) {
  if (std::isnan(v)) return "n/a";
  std::ostringstream s;
  s << std::fixed << std::setprecision(6) << v;
  return s.str();
}

std::string class_name(const std::vector<std::string>& names, std::size_t id) {
  return id - 1 < names.size() ? names[id - 1] : std::to_string(id);
}

}  // namespace

SplitIndices split(const LabeledPixelSet& set, double ratio, std::uint64_t seed, SplitMode mode) {
  if (!(ratio > 0.0) || !std::isfinite(ratio)) throw ConfigError("split ratio must be positive");
  if (set.rows() < 2) throw DataError("split needs at least 2 samples");
  SplitIndices out;
  out.seed = seed;
  out.ratio = ratio;
  Rng rng(seed);

  auto take = [&](std::vector<std::size_t> rows) {
    shuffle(std::span<std::size_t>(rows), rng);
    const std::size_t t = train_share(rows.size(), ratio);
    out.train.insert(out.train.end(), rows.begin(), rows.begin() + static_cast<std::ptrdiff_t>(t));
    out.test.insert(out.test.end(), rows.begin() + static_cast<std::ptrdiff_t>(t), rows.end());
  };

  if (mode == SplitMode::kGlobal) {
    std::vector<std::size_t> rows(set.rows());
    std::iota(rows.begin(), rows.end(), std::size_t{0});
    take(std::move(rows));
  } else {
    std::map<ClassId, std::vector<std::size_t>> by_class;
    for (std::size_t i = 0; i < set.rows(); ++i) by_class[set.labels[i]].push_back(i);
    for (auto& [id, rows] : by_class) {
      if (rows.size() < 2) {
        throw DataError("class " + std::to_string(id) + " has " + std::to_string(rows.size()) +
                        " sample(s); cannot appear in both train and test");
      }
      take(std::move(rows));
    }
  }
  std::sort(out.train.begin(), out.train.end());
  std::sort(out.test.begin(), out.test.end());
  return out;
}

std::size_t EvalReport::row_total(ClassId truth) const {
  const auto begin = confusion.begin() + static_cast<std::ptrdiff_t>((truth - 1u) * (num_classes + 1));
  return std::accumulate(begin, begin + static_cast<std::ptrdiff_t>(num_classes + 1), std::size_t{0});
}

EvalReport evaluate(const LabelMap& pred, const GroundTruth& truth,
                    std::span<const std::size_t> test_pixels, std::size_t num_classes) {
  if (pred.height != truth.height || pred.width != truth.width ||
      pred.labels.size() != truth.labels.size()) {
    throw DataError("prediction and ground truth shapes differ");
  }
  if (num_classes == 0) num_classes = truth.num_classes;
  if (num_classes == 0) throw DataError("evaluation needs at least one class");

  EvalReport r;
  r.num_classes = num_classes;
  r.confusion.assign(num_classes * (num_classes + 1), 0);
  for (std::size_t p : test_pixels) {
    if (p >= truth.labels.size()) throw DataError("test pixel index out of range");
    const ClassId t = truth.labels[p];
    if (t == 0) continue;
    const ClassId y = pred.labels[p];
    if (t > num_classes || y > num_classes) {
      throw DataError("label exceeds the class count " + std::to_string(num_classes));
    }
    ++r.confusion[(t - 1u) * (num_classes + 1) + y];
    ++r.total;
  }
  if (r.total == 0) throw DataError("no labeled test pixels to evaluate");

  std::size_t correct = 0, non_empty = 0;
  double recall_sum = 0.0;
  r.per_class_accuracy.resize(num_classes);
  for (std::size_t c = 1; c <= num_classes; ++c) {
    const auto id = static_cast<ClassId>(c);
    const std::size_t row = r.row_total(id);
    const std::size_t hit = r.count(id, id);
    correct += hit;
    if (row == 0) {
      r.per_class_accuracy[c - 1] = std::nan("");
      continue;
    }
    r.per_class_accuracy[c - 1] = static_cast<double>(hit) / static_cast<double>(row);
    recall_sum += r.per_class_accuracy[c - 1];
    ++non_empty;
  }
  r.overall_accuracy = static_cast<double>(correct) / static_cast<double>(r.total);
  r.average_accuracy = recall_sum / static_cast<double>(non_empty);
  return r;
}

std::string report_csv(const EvalReport& report, const std::vector<std::string>& class_names) {
  std::ostringstream out;
  out << "truth,unknown";
  for (std::size_t c = 1; c <= report.num_classes; ++c) out << ',' << class_name(class_names, c);
  out << ",total,accuracy\n";
  for (std::size_t c = 1; c <= report.num_classes; ++c) {
    const auto id = static_cast<ClassId>(c);
    out << class_name(class_names, c);
    for (std::size_t j = 0; j <= report.num_classes; ++j) out << ',' << report.count(id, static_cast<ClassId>(j));
    out << ',' << report.row_total(id) << ',' << fraction(report.per_class_accuracy[c - 1]) << '\n';
  }
  out << "OA," << fraction(report.overall_accuracy) << '\n';
  out << "AA," << fraction(report.average_accuracy) << '\n';
  return out.str();
}

ComparisonTable compare(std::vector<std::pair<std::string, EvalReport>> reports) {
  if (reports.empty()) throw ConfigError("comparison needs at least one report");
  ComparisonTable t;
  for (auto& [name, report] : reports) {
    t.methods.push_back(std::move(name));
    t.reports.push_back(std::move(report));
  }
  return t;
}

std::string ComparisonTable::csv() const {
  std::ostringstream out;
  out << "method,OA,AA\n";
  for (std::size_t i = 0; i < methods.size(); ++i) {
    out << methods[i] << ',' << percent(reports[i].overall_accuracy) << ','
        << percent(reports[i].average_accuracy) << '\n';
  }
  return out.str();
}

std::string ComparisonTable::text() const {
  std::size_t width = std::string("Method").size();
  for (const auto& m : methods) width = std::max(width, m.size());
  std::ostringstream out;
  out << std::left << std::setw(static_cast<int>(width)) << "Method" << std::right << std::setw(10)
      << "OA (%)" << std::setw(10) << "AA (%)" << '\n';
  for (std::size_t i = 0; i < methods.size(); ++i) {
    out << std::left << std::setw(static_cast<int>(width)) << methods[i] << std::right
        << std::setw(10) << percent(reports[i].overall_accuracy) << std::setw(10)
        << percent(reports[i].average_accuracy) << '\n';
  }
  return out.str();
}

std::string ComparisonTable::per_class_csv(const std::vector<std::string>& class_names) const {
  std::size_t classes = 0;
  for (const auto& r : reports) classes = std::max(classes, r.num_classes);
  std::ostringstream out;
  out << "category";
  for (const auto& m : methods) out << ',' << m;
  out << '\n';
  for (std::size_t c = 1; c <= classes; ++c) {
    out << class_name(class_names, c);
    for (const auto& r : reports) {
      out << ',' << (c <= r.num_classes ? percent(r.per_class_accuracy[c - 1]) : "n/a");
    }
    out << '\n';
  }
  out << "Average accuracy";
  for (const auto& r : reports) out << ',' << percent(r.average_accuracy);
  out << "\nOverall accuracy";
  for (const auto& r : reports) out << ',' << percent(r.overall_accuracy);
  out << '\n';
  return out.str();
}

}  // namespace hsi
