#include "hsi/config.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "hsi/error.hpp"

namespace hsi {
namespace {

std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  s = s.substr(b, e - b + 1);
  if (s.size() >= 2 && (s.front() == '"' || s.front() == '\'') && s.back() == s.front()) {
    s = s.substr(1, s.size() - 2);
  }
  return s;
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream in(s);
  std::string item;
  while (std::getline(in, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

double to_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ConfigError("option '" + key + "': '" + v + "' is not a number");
  }
}

std::uint64_t to_uint(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) {
    throw ConfigError("option '" + key + "': '" + v + "' is not a non-negative integer");
  }
  return out;
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError("option '" + key + "': '" + v + "' is not a boolean");
}

}  // namespace

std::string to_string(Method m) {
  switch (m) {
    case Method::kGml: return "gml";
    case Method::kGmlW: return "gml-w";
    case Method::kCnn: return "cnn";
    case Method::kCnnW: return "cnn-w";
  }
  return "?";
}

Method parse_method(const std::string& s) {
  if (s == "gml") return Method::kGml;
  if (s == "gml-w") return Method::kGmlW;
  if (s == "cnn") return Method::kCnn;
  if (s == "cnn-w") return Method::kCnnW;
  throw ConfigError("unknown method '" + s + "' (expected gml, gml-w, cnn, cnn-w)");
}

const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> keys = {
      "cube", "labels", "output_dir", "methods", "protocol", "oversample_seed",
      "retained_variance", "window", "gml_ridge", "gml_relative_ridge", "gml_threshold",
      "cnn_epochs", "cnn_batch_size", "cnn_learning_rate", "cnn_momentum", "cnn_seed",
      "min_distance", "min_height", "elevation", "mask", "exclude_unlabeled_votes",
      "split_ratio", "split_seed", "split_mode", "threads", "class_names"};
  return keys;
}

void set_option(PipelineConfig& c, const std::string& key, const std::string& raw) {
  const std::string v = trim(raw);
  if (key == "cube") c.cube_path = v;
  else if (key == "labels") c.labels_path = v;
  else if (key == "output_dir") c.output_dir = v;
  else if (key == "methods") {
    c.methods.clear();
    for (const auto& m : split_list(v)) c.methods.push_back(parse_method(m));
  } else if (key == "protocol") {
    if (v == "paper") c.protocol = Protocol::kPaper;
    else if (v == "leakage-free") c.protocol = Protocol::kLeakageFree;
    else throw ConfigError("protocol must be 'paper' or 'leakage-free'");
  } else if (key == "oversample_seed") c.oversample_seed = to_uint(key, v);
  else if (key == "retained_variance") c.retained_variance = to_double(key, v);
  else if (key == "window") c.window = to_uint(key, v);
  else if (key == "gml_ridge") c.gml_ridge = to_double(key, v);
  else if (key == "gml_relative_ridge") c.gml_relative_ridge = to_double(key, v);
  else if (key == "gml_threshold") {
    c.gml_threshold = (v == "none" || v == "-inf") ? -std::numeric_limits<double>::infinity()
                                                   : to_double(key, v);
  } else if (key == "cnn_epochs") c.cnn.epochs = to_uint(key, v);
  else if (key == "cnn_batch_size") c.cnn.batch_size = to_uint(key, v);
  else if (key == "cnn_learning_rate") c.cnn.learning_rate = to_double(key, v);
  else if (key == "cnn_momentum") c.cnn.momentum = to_double(key, v);
  else if (key == "cnn_seed") c.cnn.seed = to_uint(key, v);
  else if (key == "min_distance") c.watershed.min_distance = to_uint(key, v);
  else if (key == "min_height") c.watershed.min_height = to_double(key, v);
  else if (key == "elevation") {
    if (v == "distance") c.watershed.elevation = ElevationMode::kDistance;
    else if (v == "gradient") c.watershed.elevation = ElevationMode::kGradient;
    else throw ConfigError("elevation must be 'distance' or 'gradient'");
  } else if (key == "mask") {
    if (v == "otsu") c.watershed.mask = MaskMode::kOtsu;
    else if (v == "labels") c.watershed.mask = MaskMode::kLabels;
    else throw ConfigError("mask must be 'otsu' or 'labels'");
  } else if (key == "exclude_unlabeled_votes") c.exclude_unlabeled_votes = to_bool(key, v);
  else if (key == "split_ratio") c.split_ratio = to_double(key, v);
  else if (key == "split_seed") c.split_seed = to_uint(key, v);
  else if (key == "split_mode") {
    if (v == "stratified") c.split_mode = SplitMode::kStratified;
    else if (v == "global") c.split_mode = SplitMode::kGlobal;
    else throw ConfigError("split_mode must be 'stratified' or 'global'");
  } else if (key == "threads") c.threads = static_cast<unsigned>(to_uint(key, v));
  else if (key == "class_names") c.class_names = split_list(v);
  else throw ConfigError("unknown option '" + key + "'");
}

void load_config_file(PipelineConfig& config, const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty() || line.front() == '[') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(path.string() + ":" + std::to_string(number) + ": expected key = value");
    }
    std::string key = trim(line.substr(0, eq));
    std::replace(key.begin(), key.end(), '-', '_');
    std::string value = trim(line.substr(eq + 1));
    if (value.size() >= 2 && value.front() == '[' && value.back() == ']') {
      // TOML array of strings -> comma list.
      std::string flat;
      for (const auto& item : split_list(value.substr(1, value.size() - 2))) {
        flat += (flat.empty() ? "" : ",") + trim(item);
      }
      value = flat;
    }
    set_option(config, key, value);
  }
}

void PipelineConfig::validate() const {
  if (methods.empty()) throw ConfigError("no methods selected");
  if (!(retained_variance > 0.0 && retained_variance <= 1.0)) {
    throw ConfigError("retained_variance must lie in (0, 1]");
  }
  check_window(window);
  if (gml_ridge < 0.0 || gml_relative_ridge < 0.0) throw ConfigError("GML ridge must be non-negative");
  cnn.validate();
  if (watershed.min_distance < 1) throw ConfigError("min_distance must be at least 1");
  if (!std::isfinite(watershed.min_height)) throw ConfigError("min_height must be finite");
  if (!(split_ratio > 0.0) || !std::isfinite(split_ratio)) throw ConfigError("split_ratio must be positive");
  if (threads < 1) throw ConfigError("threads must be at least 1");
}

nlohmann::ordered_json PipelineConfig::to_json() const {
  nlohmann::ordered_json j;
  j["cube"] = cube_path.string();
  j["labels"] = labels_path.string();
  j["output_dir"] = output_dir.string();
  std::vector<std::string> ms;
  for (auto m : methods) ms.push_back(to_string(m));
  j["methods"] = ms;
  j["protocol"] = protocol == Protocol::kPaper ? "paper" : "leakage-free";
  j["oversample_seed"] = oversample_seed;
  j["retained_variance"] = retained_variance;
  j["window"] = window;
  j["gml_ridge"] = gml_ridge;
  j["gml_relative_ridge"] = gml_relative_ridge;
  if (std::isfinite(gml_threshold)) j["gml_threshold"] = gml_threshold;
  else j["gml_threshold"] = "none";
  j["cnn_epochs"] = cnn.epochs;
  j["cnn_batch_size"] = cnn.batch_size;
  j["cnn_learning_rate"] = cnn.learning_rate;
  j["cnn_momentum"] = cnn.momentum;
  j["cnn_seed"] = cnn.seed;
  j["min_distance"] = watershed.min_distance;
  j["min_height"] = watershed.min_height;
  j["elevation"] = watershed.elevation == ElevationMode::kGradient ? "gradient" : "distance";
  j["mask"] = watershed.mask == MaskMode::kLabels ? "labels" : "otsu";
  j["exclude_unlabeled_votes"] = exclude_unlabeled_votes;
  j["split_ratio"] = split_ratio;
  j["split_seed"] = split_seed;
  j["split_mode"] = split_mode == SplitMode::kGlobal ? "global" : "stratified";
  j["threads"] = threads;
  j["class_names"] = class_names;
  return j;
}

}  // namespace hsi

namespace hsi {

void load_manifest_config(PipelineConfig& config, const std::filesystem::path& manifest) {
  std::ifstream in(manifest);
  if (!in) throw ConfigError("cannot open manifest " + manifest.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in).at("config");
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(manifest.string() + ": no readable config section: " + e.what());
  }
  for (const auto& [key, value] : j.items()) {
    std::string text;
    if (value.is_string()) {
      text = value.get<std::string>();
    } else if (value.is_array()) {
      for (const auto& item : value) {
        text += (text.empty() ? "" : ",") + (item.is_string() ? item.get<std::string>() : item.dump());
      }
    } else {
      text = value.dump();
    }
    set_option(config, key, text);
  }
}

}  // namespace hsi
