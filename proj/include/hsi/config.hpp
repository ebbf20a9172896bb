#pragma once

#include <cstdint>
#include <filesystem>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include "hsi/cnn.hpp"
#include "hsi/eval.hpp"
#include "hsi/watershed.hpp"
#include "json.hpp"

namespace hsi {

enum class Protocol {
  kLeakageFree,  // split, then oversample the training fold only
  kPaper,        // oversample every labeled pixel, then split
};

enum class Method { kGml, kGmlW, kCnn, kCnnW };

std::string to_string(Method m);
Method parse_method(const std::string& s);

struct PipelineConfig {
  std::filesystem::path cube_path;
  std::filesystem::path labels_path;
  std::filesystem::path output_dir;
  std::vector<Method> methods = {Method::kGml, Method::kGmlW, Method::kCnn, Method::kCnnW};
  Protocol protocol = Protocol::kLeakageFree;

  std::uint64_t oversample_seed = 1;
  double retained_variance = 0.999;
  std::size_t window = 5;

  double gml_ridge = 0.0;
  double gml_relative_ridge = 1e-6;
  double gml_threshold = -std::numeric_limits<double>::infinity();

  TrainConfig cnn;

  WatershedOptions watershed;
  bool exclude_unlabeled_votes = false;

  double split_ratio = 3.0;
  std::uint64_t split_seed = 0;
  SplitMode split_mode = SplitMode::kStratified;

  unsigned threads = 1;
  std::vector<std::string> class_names;

  /// Throws ConfigError on out-of-range values.
  void validate() const;

  /// Every setting, keyed as in the config file.
  nlohmann::ordered_json to_json() const;
};

/// Sets one option by its config-file key. Throws ConfigError on an unknown
/// key or unparsable value.
void set_option(PipelineConfig& config, const std::string& key, const std::string& value);

/// Applies a flat "key = value" file ('#' comments, optional quotes, section
/// headers ignored).
void load_config_file(PipelineConfig& config, const std::filesystem::path& path);

/// Keys accepted by set_option, in manifest order.
const std::vector<std::string>& config_keys();

/// Environment variable naming the default output directory.
inline constexpr const char* kOutputDirEnv = "HSI_OUTPUT_DIR";

}  // namespace hsi

namespace hsi {

/// Restores the settings recorded under "config" in a pipeline manifest.
void load_manifest_config(PipelineConfig& config, const std::filesystem::path& manifest);

}  // namespace hsi
