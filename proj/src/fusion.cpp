#include "hsi/fusion.hpp"

#include <algorithm>
#include <sstream>

#include "hsi/error.hpp"

namespace hsi {

std::pair<LabelMap, FusionReport> majority_vote_fuse(const SegmentationMap& seg,
                                                     const LabelMap& spectral,
                                                     const FusionOptions& options) {
  if (seg.height != spectral.height || seg.width != spectral.width ||
      seg.regions.size() != spectral.labels.size()) {
    throw DataError("segmentation and label map dimensions differ");
  }
  const std::size_t n = spectral.labels.size();

  std::vector<std::uint32_t> ids;
  for (auto r : seg.regions) {
    if (r != 0) ids.push_back(r);
  }
  std::sort(ids.begin(), ids.end());
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());

  ClassId max_label = 0;
  for (auto l : spectral.labels) max_label = std::max(max_label, l);
  const std::size_t num_labels = std::size_t{max_label} + 1;

  std::vector<std::size_t> slot(n, 0);
  std::vector<std::size_t> hist(ids.size() * num_labels, 0);
  for (std::size_t p = 0; p < n; ++p) {
    if (seg.regions[p] == 0) continue;
    slot[p] = static_cast<std::size_t>(std::lower_bound(ids.begin(), ids.end(), seg.regions[p]) - ids.begin());
    ++hist[slot[p] * num_labels + spectral.labels[p]];
  }

  FusionReport report;
  report.regions_processed = ids.size();
  std::vector<ClassId> winner(ids.size(), 0);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const std::size_t* h = hist.data() + i * num_labels;
    const std::size_t first = options.exclude_unlabeled_votes ? 1 : 0;
    std::size_t best = 0, best_count = 0, runner_up = 0, size = 0;
    for (std::size_t l = 0; l < num_labels; ++l) size += h[l];
    for (std::size_t l = first; l < num_labels; ++l) {
      if (h[l] > best_count) {
        runner_up = best_count;
        best_count = h[l];
        best = l;
      } else if (h[l] > runner_up) {
        runner_up = h[l];
      }
    }
    winner[i] = static_cast<ClassId>(best);
    report.regions.push_back({ids[i], winner[i], best_count - runner_up, size});
  }

  LabelMap fused = spectral;
  for (std::size_t p = 0; p < n; ++p) {
    if (seg.regions[p] == 0) continue;
    const ClassId w = winner[slot[p]];
    if (w != fused.labels[p]) ++report.pixels_flipped;
    fused.labels[p] = w;
  }
  return {std::move(fused), std::move(report)};
}

std::string fusion_report_csv(const FusionReport& report) {
  std::ostringstream out;
  out << "region,winner,margin,size\n";
  for (const auto& r : report.regions) {
    out << r.region << ',' << r.winner << ',' << r.margin << ',' << r.size << '\n';
  }
  return out.str();
}

}  // namespace hsi
