#pragma once

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "hsi/cnn.hpp"
#include "hsi/config.hpp"
#include "hsi/eval.hpp"
#include "hsi/fusion.hpp"
#include "hsi/gml.hpp"
#include "hsi/preprocess.hpp"
#include "hsi/watershed.hpp"

namespace hsi {

/// Train/test pixel lists produced by the preprocessing stage. Entries are
/// flat pixel indices; under the paper protocol both lists may repeat pixels.
struct PixelSplit {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
  Protocol protocol = Protocol::kLeakageFree;
  std::uint64_t seed = 0;
  double ratio = 3.0;
};

void save_split(const PixelSplit& split, const std::filesystem::path& path);
PixelSplit load_split(const std::filesystem::path& path);

struct Preprocessed {
  ScalerParams scaler;
  PcaModel pca;
  HyperCube features;  // standardized, PCA-projected cube
  PixelSplit split;
};

/// Oversampling, split, standardization and PCA in the order selected by
/// config.protocol.
Preprocessed run_preprocess(const HyperCube& cube, const GroundTruth& gt, const PipelineConfig& config);

GmlModel run_train_gml(const HyperCube& features, const GroundTruth& gt, const PixelSplit& split,
                       const PipelineConfig& config);

TrainResult run_train_cnn(const HyperCube& features, const GroundTruth& gt, const PixelSplit& split,
                          const PipelineConfig& config, const EpochCallback& on_epoch = {});

SegmentationMap run_segment(const HyperCube& features, const GroundTruth* gt,
                            const PipelineConfig& config);

/// Rethrows any library error prefixed with the stage name, preserving its
/// category.
void run_stage(const std::string& stage, const std::function<void()>& body);

struct PipelineOutputs {
  std::vector<std::string> files;  // relative to the output directory
  ComparisonTable comparison;
};

/// One-shot run: preprocess -> classifiers -> watershed -> fusion ->
/// evaluation. Writes maps, reports, a comparison table and manifest.json
/// into config.output_dir. On failure the manifest marks the failing stage
/// and the run as partial before the error propagates.
PipelineOutputs run_pipeline(const PipelineConfig& config, std::ostream* log = nullptr);

}  // namespace hsi
