#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "hsi/types.hpp"
#include "hsi/watershed.hpp"

namespace hsi {

struct RegionVote {
  std::uint32_t region = 0;
  ClassId winner = 0;
  std::size_t margin = 0;  // winner votes minus runner-up votes
  std::size_t size = 0;
};

struct FusionReport {
  std::size_t regions_processed = 0;
  std::size_t pixels_flipped = 0;
  std::vector<RegionVote> regions;  // ascending region id
};

struct FusionOptions {
  /// When set, label 0 does not vote; a region with only 0 votes stays 0.
  bool exclude_unlabeled_votes = false;
};

/// Relabels every pixel of each nonzero region with the region's most frequent
/// pixel-wise label (smallest id on ties). Region-0 pixels keep their label.
std::pair<LabelMap, FusionReport> majority_vote_fuse(const SegmentationMap& seg,
                                                     const LabelMap& spectral,
                                                     const FusionOptions& options = {});

/// "region,winner,margin,size" rows.
std::string fusion_report_csv(const FusionReport& report);

}  // namespace hsi
