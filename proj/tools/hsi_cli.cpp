// hsi: command-line front end for the spatial-spectral classification
// pipeline. Exit codes: 0 success, 1 usage, 2 data error, 3 numeric failure.

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>

#include "CLI11.hpp"
#include "hsi/config.hpp"
#include "hsi/error.hpp"
#include "hsi/io.hpp"
#include "hsi/pipeline.hpp"

namespace {

namespace fs = std::filesystem;

enum ExitCode { kOk = 0, kUsage = 1, kData = 2, kNumeric = 3 };

// Config-file keys exposed as --flags on every subcommand. Flags override the
// config file, which overrides a replayed manifest.
struct ConfigFlags {
  std::string config_file;
  std::string manifest;
  bool paper_protocol = false;
  bool global_split = false;
  std::map<std::string, std::string> values;

  void attach(CLI::App& app) {
    app.add_option("--config", config_file, "Flat key = value config file")->check(CLI::ExistingFile);
    app.add_option("--manifest", manifest, "Replay the settings recorded in a manifest.json")
        ->check(CLI::ExistingFile);
    app.add_flag("--paper-protocol", paper_protocol, "Oversample before the train/test split");
    app.add_flag("--global-split", global_split, "Unstratified train/test split");
    for (const auto& key : hsi::config_keys()) {
      std::string flag = key;
      std::replace(flag.begin(), flag.end(), '_', '-');
      app.add_option_function<std::string>(
          "--" + flag, [this, key](const std::string& v) { values[key] = v; }, "config: " + key);
    }
  }

  hsi::PipelineConfig resolve() const {
    hsi::PipelineConfig c;
    if (!manifest.empty()) hsi::load_manifest_config(c, manifest);
    if (!config_file.empty()) hsi::load_config_file(c, config_file);
    for (const auto& [k, v] : values) hsi::set_option(c, k, v);
    if (paper_protocol) c.protocol = hsi::Protocol::kPaper;
    if (global_split) c.split_mode = hsi::SplitMode::kGlobal;
    if (c.output_dir.empty()) {
      const char* env = std::getenv(hsi::kOutputDirEnv);
      c.output_dir = env && *env ? env : "hsi-out";
    }
    c.validate();
    return c;
  }
};

std::vector<std::size_t> parse_band_list(const std::string& spec, std::size_t bands) {
  // 1-based, inclusive: "104-108,150-163,220".
  std::vector<std::size_t> out;
  std::stringstream in(spec);
  std::string item;
  while (std::getline(in, item, ',')) {
    if (item.empty()) continue;
    const auto dash = item.find('-');
    const std::size_t lo = std::stoul(item.substr(0, dash));
    const std::size_t hi = dash == std::string::npos ? lo : std::stoul(item.substr(dash + 1));
    if (lo < 1 || hi < lo || hi > bands) throw hsi::ConfigError("band range '" + item + "' out of 1.." + std::to_string(bands));
    for (std::size_t b = lo; b <= hi; ++b) out.push_back(b - 1);
  }
  return out;
}

std::vector<double> read_raw(const fs::path& path, const std::string& dtype, std::size_t count,
                             bool big_endian) {
  static const std::map<std::string, std::size_t> kSizes = {
      {"u8", 1}, {"u16", 2}, {"i16", 2}, {"i32", 4}, {"u32", 4}, {"f32", 4}, {"f64", 8}};
  const auto it = kSizes.find(dtype);
  if (it == kSizes.end()) throw hsi::ConfigError("unsupported raw dtype '" + dtype + "'");
  const std::size_t size = it->second;
  std::ifstream in(path, std::ios::binary);
  if (!in) throw hsi::DataError("cannot open " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() != count * size) {
    throw hsi::DataError(path.string() + ": holds " + std::to_string(bytes.size()) + " bytes, expected " +
                         std::to_string(count * size));
  }
  std::vector<double> out(count);
  unsigned char b[8];
  for (std::size_t i = 0; i < count; ++i) {
    std::memcpy(b, bytes.data() + i * size, size);
    if (big_endian) std::reverse(b, b + size);
    if (dtype == "u8") out[i] = b[0];
    else if (dtype == "u16") { std::uint16_t v; std::memcpy(&v, b, 2); out[i] = v; }
    else if (dtype == "i16") { std::int16_t v; std::memcpy(&v, b, 2); out[i] = v; }
    else if (dtype == "i32") { std::int32_t v; std::memcpy(&v, b, 4); out[i] = v; }
    else if (dtype == "u32") { std::uint32_t v; std::memcpy(&v, b, 4); out[i] = v; }
    else if (dtype == "f32") { float v; std::memcpy(&v, b, 4); out[i] = v; }
    else { double v; std::memcpy(&v, b, 8); out[i] = v; }
  }
  return out;
}

struct ConvertArgs {
  std::string kind = "cube", in, out, dtype = "f32", interleave = "bip", drop;
  std::size_t height = 0, width = 0, bands = 1;
  bool big_endian = false;
};

void run_convert(const ConvertArgs& a) {
  if (a.height == 0 || a.width == 0) throw hsi::ConfigError("--height and --width are required");
  const std::size_t plane = a.height * a.width;
  if (a.kind == "labels") {
    const auto raw = read_raw(a.in, a.dtype, plane, a.big_endian);
    hsi::GroundTruth gt{a.height, a.width, std::vector<hsi::ClassId>(plane), 0};
    for (std::size_t i = 0; i < plane; ++i) {
      if (raw[i] < 0 || raw[i] > 65535 || raw[i] != std::floor(raw[i])) {
        throw hsi::DataError("label value " + std::to_string(raw[i]) + " does not fit u16");
      }
      gt.labels[i] = static_cast<hsi::ClassId>(raw[i]);
      gt.num_classes = std::max<std::size_t>(gt.num_classes, gt.labels[i]);
    }
    hsi::write_labels(gt, a.out);
    return;
  }
  if (a.kind != "cube") throw hsi::ConfigError("--kind must be 'cube' or 'labels'");
  const auto raw = read_raw(a.in, a.dtype, plane * a.bands, a.big_endian);
  std::vector<bool> dropped(a.bands, false);
  for (auto b : parse_band_list(a.drop, a.bands)) dropped[b] = true;
  std::vector<std::size_t> kept;
  for (std::size_t b = 0; b < a.bands; ++b) {
    if (!dropped[b]) kept.push_back(b);
  }
  if (kept.empty()) throw hsi::ConfigError("every band was dropped");
  hsi::HyperCube cube(a.height, a.width, kept.size());
  for (std::size_t k = 0; k < kept.size(); ++k) {
    const std::size_t b = kept[k];
    for (std::size_t r = 0; r < a.height; ++r) {
      for (std::size_t c = 0; c < a.width; ++c) {
        std::size_t src;
        if (a.interleave == "bip") src = (r * a.width + c) * a.bands + b;
        else if (a.interleave == "bsq") src = b * plane + r * a.width + c;
        else if (a.interleave == "bil") src = (r * a.bands + b) * a.width + c;
        else throw hsi::ConfigError("--interleave must be bip, bsq or bil");
        cube.at(k, r, c) = static_cast<float>(raw[src]);
      }
    }
  }
  cube.validate();
  hsi::write_cube(cube, a.out);
}

bool is_cnn_checkpoint(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  char magic[4] = {};
  in.read(magic, 4);
  return in && std::string_view(magic, 4) == "HSN1";
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw hsi::DataError("cannot open " + path.string() + " for writing");
  out << text;
}

std::size_t palette_size(const hsi::LabelMap& map) {
  std::size_t mx = 0;
  for (auto l : map.labels) mx = std::max<std::size_t>(mx, l);
  return mx;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Spatial-spectral hyperspectral classification: GML/CNN pixel-wise classifiers, "
               "marker-controlled watershed and region majority-vote fusion."};
  app.require_subcommand(1);

  ConfigFlags pipeline_flags;
  auto* pipeline = app.add_subcommand("pipeline", "Run every stage and write maps, reports and a manifest");
  pipeline_flags.attach(*pipeline);

  ConvertArgs conv;
  auto* convert = app.add_subcommand("convert", "Convert a raw binary array into the native container");
  convert->add_option("--kind", conv.kind, "cube or labels")->check(CLI::IsMember({"cube", "labels"}));
  convert->add_option("--in", conv.in, "Raw input file")->required()->check(CLI::ExistingFile);
  convert->add_option("--out", conv.out, "Output .hsc (cube) or .hsl (labels)")->required();
  convert->add_option("--dtype", conv.dtype, "u8, u16, i16, i32, u32, f32 or f64");
  convert->add_option("--interleave", conv.interleave, "bip (H,W,L C-order), bsq or bil");
  convert->add_option("--height", conv.height)->required();
  convert->add_option("--width", conv.width)->required();
  convert->add_option("--bands", conv.bands);
  convert->add_option("--drop-bands", conv.drop, "1-based inclusive list, e.g. 104-108,150-163,220");
  convert->add_flag("--big-endian", conv.big_endian);

  std::string in, out, model, split_path, seg_path, map_path, report_path, png_path;
  std::string out_cube, out_model, out_split;

  ConfigFlags pre_flags;
  auto* preprocess = app.add_subcommand("preprocess", "Oversample, split, standardize and project with PCA");
  pre_flags.attach(*preprocess);
  preprocess->add_option("--out-cube", out_cube, "Projected cube (.hsc)")->required();
  preprocess->add_option("--out-model", out_model, "Scaler + PCA checkpoint (.hsp)")->required();
  preprocess->add_option("--out-split", out_split, "Train/test pixel lists (.json)")->required();

  ConfigFlags gml_flags;
  auto* train_gml = app.add_subcommand("train-gml", "Fit the Gaussian maximum likelihood classifier");
  gml_flags.attach(*train_gml);
  train_gml->add_option("--in", in, "Projected cube")->required();
  train_gml->add_option("--split", split_path)->required();
  train_gml->add_option("--out", out, "GML model (.json)")->required();

  ConfigFlags cnn_flags;
  auto* train_cnn = app.add_subcommand("train-cnn", "Train the patch CNN");
  cnn_flags.attach(*train_cnn);
  train_cnn->add_option("--in", in, "Projected cube")->required();
  train_cnn->add_option("--split", split_path)->required();
  train_cnn->add_option("--out", out, "CNN checkpoint (.hsn)")->required();

  ConfigFlags classify_flags;
  auto* classify = app.add_subcommand("classify", "Pixel-wise classification with a GML or CNN model");
  classify_flags.attach(*classify);
  classify->add_option("--in", in, "Projected cube")->required();
  classify->add_option("--model", model, "gml.json or cnn.hsn")->required();
  classify->add_option("--out", out, "Label map (.hsl)")->required();
  classify->add_option("--png", png_path, "Optional colorized map");

  ConfigFlags seg_flags;
  auto* segment = app.add_subcommand("segment", "Marker-controlled watershed segmentation");
  seg_flags.attach(*segment);
  segment->add_option("--in", in, "Projected cube")->required();
  segment->add_option("--out", out, "Segmentation raster (u32 .hsl)")->required();
  segment->add_option("--png", png_path, "Optional colorized regions");

  ConfigFlags fuse_flags;
  auto* fuse = app.add_subcommand("fuse", "Region majority vote of a label map");
  fuse_flags.attach(*fuse);
  fuse->add_option("--seg", seg_path)->required();
  fuse->add_option("--map", map_path)->required();
  fuse->add_option("--out", out, "Fused label map (.hsl)")->required();
  fuse->add_option("--report", report_path, "Per-region CSV");
  fuse->add_option("--png", png_path, "Optional colorized map");

  ConfigFlags eval_flags;
  auto* evaluate = app.add_subcommand("evaluate", "Confusion matrix and accuracies of a label map");
  eval_flags.attach(*evaluate);
  evaluate->add_option("--map", map_path)->required();
  evaluate->add_option("--split", split_path, "Score only the test pixels of this split");
  evaluate->add_option("--out", out, "Report CSV (stdout when omitted)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (pipeline->parsed()) {
      const auto config = pipeline_flags.resolve();
      const auto outputs = hsi::run_pipeline(config, &std::cerr);
      std::cout << outputs.comparison.csv();
    } else if (convert->parsed()) {
      hsi::run_stage("convert", [&] { run_convert(conv); });
    } else if (preprocess->parsed()) {
      const auto config = pre_flags.resolve();
      hsi::run_stage("preprocess", [&] {
        const auto pre = hsi::run_preprocess(hsi::read_cube(config.cube_path),
                                             hsi::read_labels(config.labels_path), config);
        hsi::write_cube(pre.features, out_cube);
        hsi::save_preprocess_model(pre.scaler, pre.pca, out_model);
        hsi::save_split(pre.split, out_split);
        std::cerr << "kept " << pre.pca.components << " of " << pre.pca.dims << " components\n";
      });
    } else if (train_gml->parsed()) {
      const auto config = gml_flags.resolve();
      hsi::run_stage("train-gml", [&] {
        const auto features = hsi::read_cube(in);
        const auto model = hsi::run_train_gml(features, hsi::read_labels(config.labels_path),
                                              hsi::load_split(split_path), config);
        hsi::save_gml(model, out);
      });
    } else if (train_cnn->parsed()) {
      const auto config = cnn_flags.resolve();
      hsi::run_stage("train-cnn", [&] {
        const auto features = hsi::read_cube(in);
        const auto result = hsi::run_train_cnn(features, hsi::read_labels(config.labels_path),
                                               hsi::load_split(split_path), config,
                                               [](std::size_t e, double loss) {
                                                 std::cerr << "epoch " << e << " loss " << loss << '\n';
                                               });
        hsi::save_cnn(result.model, out);
      });
    } else if (classify->parsed()) {
      const auto config = classify_flags.resolve();
      hsi::run_stage("classify", [&] {
        const auto features = hsi::read_cube(in);
        hsi::LabelMap map;
        std::size_t classes = 0;
        if (is_cnn_checkpoint(model)) {
          const auto cnn = hsi::load_cnn(model);
          map = hsi::classify_cnn(cnn, features, cnn.spec.input_window, config.threads);
          classes = cnn.class_ids.empty() ? 0 : cnn.class_ids.back();
        } else {
          const auto gml = hsi::load_gml(model);
          map = hsi::classify_gml(gml, features, config.threads);
          classes = gml.classes.back().class_id;
        }
        hsi::write_label_map(map, out);
        if (!png_path.empty()) hsi::write_label_map_png(map, hsi::Palette::distinct(classes), png_path);
      });
    } else if (segment->parsed()) {
      const auto config = seg_flags.resolve();
      hsi::run_stage("segment", [&] {
        const auto features = hsi::read_cube(in);
        hsi::GroundTruth gt;
        const bool need_gt = config.watershed.mask == hsi::MaskMode::kLabels;
        if (need_gt) gt = hsi::read_labels(config.labels_path);
        const auto seg = hsi::run_segment(features, need_gt ? &gt : nullptr, config);
        hsi::write_u32_raster(hsi::to_raster(seg), out);
        if (!png_path.empty()) hsi::write_region_png(hsi::to_raster(seg), png_path);
        std::cerr << seg.num_regions << " regions\n";
      });
    } else if (fuse->parsed()) {
      const auto config = fuse_flags.resolve();
      hsi::run_stage("fuse", [&] {
        const auto seg = hsi::from_raster(hsi::read_u32_raster(seg_path));
        const auto map = hsi::read_label_map(map_path);
        const auto [fused, report] = hsi::majority_vote_fuse(seg, map, {config.exclude_unlabeled_votes});
        hsi::write_label_map(fused, out);
        if (!report_path.empty()) write_text(report_path, hsi::fusion_report_csv(report));
        if (!png_path.empty()) {
          hsi::write_label_map_png(fused, hsi::Palette::distinct(palette_size(fused)), png_path);
        }
      });
    } else if (evaluate->parsed()) {
      const auto config = eval_flags.resolve();
      hsi::run_stage("evaluate", [&] {
        const auto map = hsi::read_label_map(map_path);
        const auto gt = hsi::read_labels(config.labels_path);
        std::vector<std::size_t> pixels;
        if (!split_path.empty()) {
          pixels = hsi::load_split(split_path).test;
        } else {
          for (std::size_t p = 0; p < gt.labels.size(); ++p) {
            if (gt.labels[p] != 0) pixels.push_back(p);
          }
        }
        const auto report = hsi::evaluate(map, gt, pixels, gt.num_classes);
        const auto csv = hsi::report_csv(report, config.class_names);
        if (out.empty()) std::cout << csv;
        else write_text(out, csv);
      });
    }
  } catch (const hsi::ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const hsi::NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << '\n';
    return kNumeric;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kData;
  }
  return kOk;
}
