#include <gtest/gtest.h>

#include <algorithm>
#include <map>

#include "hsi/io.hpp"
#include "hsi/pipeline.hpp"
#include "json.hpp"
#include "support/cli.hpp"
#include "support/synthetic.hpp"
#include "support/tempdir.hpp"

using namespace hsi;
using testutil::run_cli;
using testutil::slurp;

namespace {

// Shared synthetic dataset written once per test.
class PipelineCli : public ::testing::Test {
 protected:
  void SetUp() override {
    scene_ = synth::make_blob_scene(32, 6, 3, 0.5, 8);
    write_cube(scene_.cube, tmp_ / "cube.hsc");
    write_labels(scene_.gt, tmp_ / "labels.hsl");
  }

  std::string data_args() const {
    return "--cube '" + (tmp_ / "cube.hsc").string() + "' --labels '" + (tmp_ / "labels.hsl").string() + "'";
  }
  std::string path(const std::string& name) const { return "'" + (tmp_ / name).string() + "'"; }

  testutil::TempDir tmp_;
  synth::BlobScene scene_;
};

const char* kFastCnn = " --cnn-epochs 3 --min-distance 4";

}  // namespace

TEST_F(PipelineCli, OneShotWritesEveryOutput) {
  auto r = run_cli("pipeline " + data_args() + " --output-dir " + path("run") + kFastCnn, tmp_.path());
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(r.out.rfind("method,OA,AA\ngml,", 0), 0u) << r.out;
  for (const char* f : {"manifest.json", "split.json", "preprocess.hsp", "gml.json", "cnn.hsn",
                        "segmentation.hsl", "segmentation.png", "comparison.csv", "comparison.txt",
                        "per_class.csv", "gml_map.hsl", "gml-w_map.png", "cnn_report.csv",
                        "cnn-w_fusion.csv"}) {
    EXPECT_TRUE(std::filesystem::exists(tmp_ / "run" / f)) << f;
  }
  const auto manifest = nlohmann::json::parse(slurp(tmp_ / "run" / "manifest.json"));
  EXPECT_FALSE(manifest.at("partial").get<bool>());
  EXPECT_EQ(manifest.at("config").at("protocol"), "leakage-free");
  EXPECT_EQ(manifest.at("cnn_epoch_loss").size(), 3u);
  for (const auto& s : manifest.at("stages")) EXPECT_EQ(s.at("status"), "ok");
  for (const auto& f : manifest.at("outputs")) {
    EXPECT_TRUE(std::filesystem::exists(tmp_ / "run" / f.get<std::string>())) << f;
  }
}

TEST_F(PipelineCli, RepeatedRunsAreByteIdentical) {
  const std::string base = "pipeline " + data_args() + kFastCnn + " --output-dir ";
  ASSERT_EQ(run_cli(base + path("a"), tmp_.path()).code, 0);
  ASSERT_EQ(run_cli(base + path("b") + " --threads 3", tmp_.path()).code, 0);
  for (const char* f : {"comparison.csv", "gml_report.csv", "cnn-w_report.csv", "gml-w_fusion.csv",
                        "cnn_map.hsl", "segmentation.hsl", "split.json", "cnn.hsn"}) {
    EXPECT_EQ(slurp(tmp_ / "a" / f), slurp(tmp_ / "b" / f)) << f;
  }
}

TEST_F(PipelineCli, StagewiseRunMatchesOneShot) {
  const std::string common = data_args() + " --min-distance 4";
  ASSERT_EQ(run_cli("pipeline " + common + " --methods gml,gml-w --output-dir " + path("one"), tmp_.path()).code, 0);

  auto ok = [&](const std::string& args) {
    auto r = run_cli(args, tmp_.path());
    ASSERT_EQ(r.code, 0) << args << "\n" << r.err;
  };
  ok("preprocess " + common + " --out-cube " + path("f.hsc") + " --out-model " + path("p.hsp") +
     " --out-split " + path("s.json"));
  ok("train-gml " + common + " --in " + path("f.hsc") + " --split " + path("s.json") + " --out " + path("g.json"));
  ok("classify --in " + path("f.hsc") + " --model " + path("g.json") + " --out " + path("g.hsl"));
  ok("segment " + common + " --in " + path("f.hsc") + " --out " + path("seg.hsl"));
  ok("fuse --seg " + path("seg.hsl") + " --map " + path("g.hsl") + " --out " + path("gw.hsl") +
     " --report " + path("gw.csv"));
  ok("evaluate " + common + " --map " + path("gw.hsl") + " --split " + path("s.json") + " --out " + path("gw_report.csv"));

  EXPECT_EQ(slurp(tmp_ / "s.json"), slurp(tmp_ / "one" / "split.json"));
  EXPECT_EQ(slurp(tmp_ / "g.json"), slurp(tmp_ / "one" / "gml.json"));
  EXPECT_EQ(slurp(tmp_ / "g.hsl"), slurp(tmp_ / "one" / "gml_map.hsl"));
  EXPECT_EQ(slurp(tmp_ / "seg.hsl"), slurp(tmp_ / "one" / "segmentation.hsl"));
  EXPECT_EQ(slurp(tmp_ / "gw.hsl"), slurp(tmp_ / "one" / "gml-w_map.hsl"));
  EXPECT_EQ(slurp(tmp_ / "gw.csv"), slurp(tmp_ / "one" / "gml-w_fusion.csv"));
  EXPECT_EQ(slurp(tmp_ / "gw_report.csv"), slurp(tmp_ / "one" / "gml-w_report.csv"));
}

TEST_F(PipelineCli, ManifestReplayReproducesRun) {
  ASSERT_EQ(run_cli("pipeline " + data_args() + " --methods gml-w,gml --split-seed 9 --output-dir " + path("a"),
                    tmp_.path()).code, 0);
  auto r = run_cli("pipeline --manifest " + path("a/manifest.json") + " --output-dir " + path("b"), tmp_.path());
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(slurp(tmp_ / "a" / "comparison.csv"), slurp(tmp_ / "b" / "comparison.csv"));
  EXPECT_EQ(slurp(tmp_ / "a" / "split.json"), slurp(tmp_ / "b" / "split.json"));
}

TEST_F(PipelineCli, OutputDirectoryFromEnvironment) {
  auto r = run_cli("pipeline " + data_args() + " --methods gml", tmp_.path(),
                   "HSI_OUTPUT_DIR=" + path("env-out"));
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(std::filesystem::exists(tmp_ / "env-out" / "gml_report.csv"));
}

TEST_F(PipelineCli, OversampleBeforeSplitProtocol) {
  auto r = run_cli("pipeline " + data_args() + " --methods gml --paper-protocol --output-dir " + path("p"),
                   tmp_.path());
  ASSERT_EQ(r.code, 0) << r.err;
  std::map<ClassId, std::size_t> counts;
  for (auto l : scene_.gt.labels)
    if (l) ++counts[l];
  std::size_t largest = 0;
  for (auto [id, n] : counts) largest = std::max(largest, n);
  const auto split = load_split(tmp_ / "p" / "split.json");
  EXPECT_EQ(split.protocol, Protocol::kPaper);
  EXPECT_EQ(split.train.size() + split.test.size(), largest * counts.size());
  const auto manifest = nlohmann::json::parse(slurp(tmp_ / "p" / "manifest.json"));
  EXPECT_EQ(manifest.at("config").at("protocol"), "paper");
}

TEST_F(PipelineCli, MissingCubeNamesThePath) {
  auto r = run_cli("pipeline --cube " + path("nope.hsc") + " --labels " + path("labels.hsl") +
                       " --output-dir " + path("x"),
                   tmp_.path());
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("nope.hsc"), std::string::npos) << r.err;
}

TEST_F(PipelineCli, FailedStageMarksManifestPartial) {
  GroundTruth wrong{8, 8, std::vector<ClassId>(64, 1), 1};
  wrong.labels[0] = 0;
  write_labels(wrong, tmp_ / "wrong.hsl");
  auto r = run_cli("pipeline --cube " + path("cube.hsc") + " --labels " + path("wrong.hsl") +
                       " --output-dir " + path("x"),
                   tmp_.path());
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("preprocess"), std::string::npos) << r.err;
  const auto manifest = nlohmann::json::parse(slurp(tmp_ / "x" / "manifest.json"));
  EXPECT_TRUE(manifest.at("partial").get<bool>());
  EXPECT_EQ(manifest.at("stages").back().at("stage"), "preprocess");
  EXPECT_EQ(manifest.at("stages").back().at("status"), "failed");
}

TEST_F(PipelineCli, UsageErrors) {
  EXPECT_EQ(run_cli("frobnicate", tmp_.path()).code, 1);
  EXPECT_EQ(run_cli("", tmp_.path()).code, 1);
  EXPECT_EQ(run_cli("pipeline " + data_args() + " --window 4", tmp_.path()).code, 1);
  EXPECT_EQ(run_cli("pipeline " + data_args() + " --bogus-flag 1", tmp_.path()).code, 1);
  EXPECT_EQ(run_cli("pipeline --cube " + path("cube.hsc"), tmp_.path()).code, 1);
  EXPECT_EQ(run_cli("--help", tmp_.path()).code, 0);
}

TEST_F(PipelineCli, EvaluateHandWrittenMap) {
  GroundTruth gt{3, 3, {1, 1, 1, 2, 2, 2, 0, 0, 3}, 3};
  LabelMap map(3, 3);
  map.labels = {1, 1, 2, 2, 2, 0, 3, 3, 3};
  write_labels(gt, tmp_ / "gt.hsl");
  write_label_map(map, tmp_ / "map.hsl");
  auto r = run_cli("evaluate --labels " + path("gt.hsl") + " --map " + path("map.hsl"), tmp_.path());
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(r.out,
            "truth,unknown,1,2,3,total,accuracy\n"
            "1,0,2,1,0,3,0.666667\n"
            "2,1,0,2,0,3,0.666667\n"
            "3,0,0,0,1,1,1.000000\n"
            "OA,0.714286\n"
            "AA,0.777778\n");
}

TEST_F(PipelineCli, ConvertRawBip) {
  // 2x2 pixels, 3 bands, u16 little-endian, band 2 dropped.
  const std::uint16_t raw[12] = {1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12};
  std::ofstream(tmp_ / "raw.bin", std::ios::binary).write(reinterpret_cast<const char*>(raw), sizeof raw);
  auto r = run_cli("convert --in " + path("raw.bin") + " --out " + path("c.hsc") +
                       " --dtype u16 --height 2 --width 2 --bands 3 --drop-bands 2",
                   tmp_.path());
  ASSERT_EQ(r.code, 0) << r.err;
  const auto cube = read_cube(tmp_ / "c.hsc");
  ASSERT_EQ(cube.bands, 2u);
  EXPECT_EQ(cube.at(0, 1, 0), 7.0f);
  EXPECT_EQ(cube.at(1, 1, 1), 12.0f);

  // the same bytes read band-sequentially
  r = run_cli("convert --in " + path("raw.bin") + " --out " + path("s.hsc") +
                  " --dtype u16 --interleave bsq --height 2 --width 2 --bands 3 --drop-bands 2",
              tmp_.path());
  ASSERT_EQ(r.code, 0) << r.err;
  const auto bsq = read_cube(tmp_ / "s.hsc");
  EXPECT_EQ(bsq.at(0, 1, 0), 3.0f);
  EXPECT_EQ(bsq.at(1, 1, 1), 12.0f);
  EXPECT_EQ(bsq.at(1, 0, 0), 9.0f);

  // a size mismatch is a data error
  EXPECT_EQ(run_cli("convert --in " + path("raw.bin") + " --out " + path("x.hsc") +
                        " --dtype u16 --height 3 --width 2 --bands 3",
                    tmp_.path()).code,
            2);
}
