#include "hsi/pipeline.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <ostream>
#include <set>

#include "hsi/error.hpp"
#include "hsi/io.hpp"
#include "json.hpp"

namespace hsi {
namespace {

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot open " + path.string() + " for writing");
  out << text;
  if (!out) throw DataError("failed writing " + path.string());
}

bool uses(const PipelineConfig& c, Method a, Method b) {
  return std::find(c.methods.begin(), c.methods.end(), a) != c.methods.end() ||
         std::find(c.methods.begin(), c.methods.end(), b) != c.methods.end();
}

}  // namespace

void save_split(const PixelSplit& split, const fs::path& path) {
  ordered_json j;
  j["kind"] = "split";
  j["version"] = 1;
  j["protocol"] = split.protocol == Protocol::kPaper ? "paper" : "leakage-free";
  j["seed"] = split.seed;
  j["ratio"] = split.ratio;
  j["train"] = split.train;
  j["test"] = split.test;
  write_text(path, j.dump() + "\n");
}

PixelSplit load_split(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  PixelSplit s;
  try {
    const auto j = nlohmann::json::parse(in);
    if (j.at("kind") != "split") throw DataError(path.string() + ": not a split file");
    if (j.at("version") != 1) throw DataError(path.string() + ": incompatible split file version");
    s.protocol = j.at("protocol") == "paper" ? Protocol::kPaper : Protocol::kLeakageFree;
    s.seed = j.at("seed");
    s.ratio = j.at("ratio");
    s.train = j.at("train").get<std::vector<std::size_t>>();
    s.test = j.at("test").get<std::vector<std::size_t>>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path.string() + ": malformed split file: " + e.what());
  }
  return s;
}

Preprocessed run_preprocess(const HyperCube& cube, const GroundTruth& gt, const PipelineConfig& config) {
  cube.validate();
  if (cube.height != gt.height || cube.width != gt.width) {
    throw DataError("cube is " + std::to_string(cube.height) + "x" + std::to_string(cube.width) +
                    " but ground truth is " + std::to_string(gt.height) + "x" + std::to_string(gt.width));
  }
  Preprocessed out;
  out.split.protocol = config.protocol;
  out.split.seed = config.split_seed;
  out.split.ratio = config.split_ratio;

  const LabeledPixelSet labeled = labeled_pixels(cube, gt);
  LabeledPixelSet fit_rows;
  if (config.protocol == Protocol::kPaper) {
    fit_rows = oversample(labeled, config.oversample_seed);
    const auto s = split(fit_rows, config.split_ratio, config.split_seed, config.split_mode);
    for (auto i : s.train) out.split.train.push_back(fit_rows.origin[i]);
    for (auto i : s.test) out.split.test.push_back(fit_rows.origin[i]);
  } else {
    const auto s = split(labeled, config.split_ratio, config.split_seed, config.split_mode);
    std::vector<std::size_t> train_pixels;
    for (auto i : s.train) train_pixels.push_back(labeled.origin[i]);
    for (auto i : s.test) out.split.test.push_back(labeled.origin[i]);
    fit_rows = oversample(gather_pixels(cube, gt, train_pixels), config.oversample_seed);
    out.split.train = fit_rows.origin;
  }

  out.scaler = fit_standardizer(fit_rows);
  const auto standardized = apply_standardizer(out.scaler, fit_rows.features);
  out.pca = fit_pca(standardized, fit_rows.dims, config.retained_variance);

  HyperCube scaled = cube;
  standardize_cube(out.scaler, scaled);
  out.features = project_cube(out.pca, scaled, config.threads);
  return out;
}

GmlModel run_train_gml(const HyperCube& features, const GroundTruth& gt, const PixelSplit& split,
                       const PipelineConfig& config) {
  const auto train = gather_pixels(features, gt, split.train);
  auto model = fit_gml(train, GmlFitOptions{config.gml_ridge, config.gml_relative_ridge});
  model.threshold = config.gml_threshold;
  return model;
}

TrainResult run_train_cnn(const HyperCube& features, const GroundTruth& gt, const PixelSplit& split,
                          const PipelineConfig& config, const EpochCallback& on_epoch) {
  const auto patches = extract_patches(features, gt, split.train, config.window);
  const std::set<ClassId> ids(patches.labels.begin(), patches.labels.end());
  const auto spec = CnnSpec::standard(config.window, features.bands, ids.size());
  return train_cnn(spec, patches, config.cnn, on_epoch);
}

SegmentationMap run_segment(const HyperCube& features, const GroundTruth* gt,
                            const PipelineConfig& config) {
  return segment(features, config.watershed, gt);
}

void run_stage(const std::string& stage, const std::function<void()>& body) {
  try {
    body();
  } catch (const NumericError& e) {
    throw NumericError("stage '" + stage + "': " + e.what());
  } catch (const ConfigError& e) {
    throw ConfigError("stage '" + stage + "': " + e.what());
  } catch (const DataError& e) {
    throw DataError("stage '" + stage + "': " + e.what());
  } catch (const nlohmann::json::exception& e) {
    throw DataError("stage '" + stage + "': " + e.what());
  } catch (const std::bad_alloc&) {
    throw;
  } catch (const std::exception& e) {
    throw Error("stage '" + stage + "': " + e.what());
  }
}

PipelineOutputs run_pipeline(const PipelineConfig& config, std::ostream* log) {
  config.validate();
  if (config.cube_path.empty() || config.labels_path.empty()) {
    throw ConfigError("pipeline needs both a cube and a labels path");
  }
  const fs::path dir = config.output_dir.empty() ? fs::path("hsi-out") : config.output_dir;
  fs::create_directories(dir);

  ordered_json manifest;
  manifest["tool"] = "hsi";
  manifest["format_version"] = 1;
  manifest["config"] = config.to_json();
  manifest["stages"] = ordered_json::array();
  manifest["partial"] = false;

  PipelineOutputs outputs;
  auto note = [&](const std::string& msg) {
    if (log) *log << msg << std::endl;
  };
  auto emit = [&](const std::string& name) { outputs.files.push_back(name); };
  auto stage = [&](const std::string& name, const std::function<void()>& body) {
    note("[" + name + "]");
    try {
      run_stage(name, body);
    } catch (const std::exception& e) {
      manifest["stages"].push_back({{"stage", name}, {"status", "failed"}, {"error", e.what()}});
      manifest["partial"] = true;
      manifest["outputs"] = outputs.files;
      write_text(dir / "manifest.json", manifest.dump(2) + "\n");
      throw;
    }
    manifest["stages"].push_back({{"stage", name}, {"status", "ok"}});
  };

  HyperCube cube;
  GroundTruth gt;
  stage("load", [&] {
    cube = read_cube(config.cube_path);
    gt = read_labels(config.labels_path);
    manifest["data"] = {{"height", cube.height}, {"width", cube.width}, {"bands", cube.bands},
                        {"num_classes", gt.num_classes}};
  });

  Preprocessed pre;
  stage("preprocess", [&] {
    pre = run_preprocess(cube, gt, config);
    save_split(pre.split, dir / "split.json");
    save_preprocess_model(pre.scaler, pre.pca, dir / "preprocess.hsp");
    emit("split.json");
    emit("preprocess.hsp");
    manifest["pca_components"] = pre.pca.components;
    manifest["train_samples"] = pre.split.train.size();
    manifest["test_samples"] = pre.split.test.size();
  });

  const Palette palette = Palette::distinct(gt.num_classes);
  std::map<Method, LabelMap> maps;

  if (uses(config, Method::kGml, Method::kGmlW)) {
    GmlModel gml;
    stage("train-gml", [&] {
      gml = run_train_gml(pre.features, gt, pre.split, config);
      save_gml(gml, dir / "gml.json");
      emit("gml.json");
    });
    stage("classify-gml", [&] { maps[Method::kGml] = classify_gml(gml, pre.features, config.threads); });
  }
  if (uses(config, Method::kCnn, Method::kCnnW)) {
    CnnModel cnn;
    stage("train-cnn", [&] {
      auto result = run_train_cnn(pre.features, gt, pre.split, config, [&](std::size_t e, double loss) {
        note("  epoch " + std::to_string(e) + " loss " + std::to_string(loss));
      });
      cnn = std::move(result.model);
      manifest["cnn_epoch_loss"] = result.epoch_loss;
      save_cnn(cnn, dir / "cnn.hsn");
      emit("cnn.hsn");
    });
    stage("classify-cnn", [&] {
      maps[Method::kCnn] = classify_cnn(cnn, pre.features, config.window, config.threads);
    });
  }
  if (uses(config, Method::kGmlW, Method::kCnnW)) {
    SegmentationMap seg;
    stage("segment", [&] {
      seg = run_segment(pre.features, &gt, config);
      write_u32_raster(to_raster(seg), dir / "segmentation.hsl");
      write_region_png(to_raster(seg), dir / "segmentation.png");
      emit("segmentation.hsl");
      emit("segmentation.png");
      manifest["regions"] = seg.num_regions;
    });
    const FusionOptions fopts{config.exclude_unlabeled_votes};
    for (auto [fused, base] : {std::pair{Method::kGmlW, Method::kGml}, std::pair{Method::kCnnW, Method::kCnn}}) {
      if (std::find(config.methods.begin(), config.methods.end(), fused) == config.methods.end()) continue;
      stage("fuse-" + to_string(base), [&] {
        auto [map, report] = majority_vote_fuse(seg, maps.at(base), fopts);
        write_text(dir / (to_string(fused) + "_fusion.csv"), fusion_report_csv(report));
        emit(to_string(fused) + "_fusion.csv");
        maps[fused] = std::move(map);
      });
    }
  }

  std::vector<std::pair<std::string, EvalReport>> reports;
  stage("evaluate", [&] {
    for (Method m : config.methods) {
      const std::string name = to_string(m);
      const LabelMap& map = maps.at(m);
      write_label_map(map, dir / (name + "_map.hsl"));
      write_label_map_png(map, palette, dir / (name + "_map.png"));
      auto report = evaluate(map, gt, pre.split.test, gt.num_classes);
      write_text(dir / (name + "_report.csv"), report_csv(report, config.class_names));
      for (const auto* suffix : {"_map.hsl", "_map.png", "_report.csv"}) emit(name + suffix);
      reports.emplace_back(name, std::move(report));
    }
    outputs.comparison = compare(std::move(reports));
    write_text(dir / "comparison.csv", outputs.comparison.csv());
    write_text(dir / "comparison.txt", outputs.comparison.text());
    write_text(dir / "per_class.csv", outputs.comparison.per_class_csv(config.class_names));
    emit("comparison.csv");
    emit("comparison.txt");
    emit("per_class.csv");
    ordered_json acc;
    for (std::size_t i = 0; i < outputs.comparison.methods.size(); ++i) {
      acc[outputs.comparison.methods[i]] = {{"overall_accuracy", outputs.comparison.reports[i].overall_accuracy},
                                            {"average_accuracy", outputs.comparison.reports[i].average_accuracy}};
    }
    manifest["accuracy"] = acc;
  });

  manifest["outputs"] = outputs.files;
  write_text(dir / "manifest.json", manifest.dump(2) + "\n");
  note(outputs.comparison.text());
  return outputs;
}

}  // namespace hsi
