#include <gtest/gtest.h>

#include <fstream>

#include "hsi/config.hpp"
#include "hsi/error.hpp"
#include "support/tempdir.hpp"

using namespace hsi;

namespace {

void write_file(const std::filesystem::path& p, const std::string& text) {
  std::ofstream(p) << text;
}

}  // namespace

TEST(Config, DefaultsValidate) {
  PipelineConfig c;
  EXPECT_NO_THROW(c.validate());
  EXPECT_EQ(c.window, 5u);
  EXPECT_EQ(c.split_ratio, 3.0);
  EXPECT_EQ(c.protocol, Protocol::kLeakageFree);
  EXPECT_EQ(c.methods.size(), 4u);
}

TEST(Config, EveryKeyIsAccepted) {
  PipelineConfig c;
  for (const auto& key : config_keys()) {
    const auto value = c.to_json().at(key);
    std::string text;
    if (value.is_string()) text = value.get<std::string>();
    else if (value.is_array()) text = "gml";
    else text = value.dump();
    if (key == "class_names") text = "a,b";
    EXPECT_NO_THROW(set_option(c, key, text)) << key;
  }
}

TEST(Config, SetOptionParsesValues) {
  PipelineConfig c;
  set_option(c, "methods", "gml, cnn-w");
  ASSERT_EQ(c.methods.size(), 2u);
  EXPECT_EQ(c.methods[1], Method::kCnnW);
  set_option(c, "protocol", "paper");
  EXPECT_EQ(c.protocol, Protocol::kPaper);
  set_option(c, "gml_threshold", "-12.5");
  EXPECT_EQ(c.gml_threshold, -12.5);
  set_option(c, "gml_threshold", "none");
  EXPECT_TRUE(std::isinf(c.gml_threshold));
  set_option(c, "exclude_unlabeled_votes", "yes");
  EXPECT_TRUE(c.exclude_unlabeled_votes);
  set_option(c, "mask", "labels");
  EXPECT_EQ(c.watershed.mask, MaskMode::kLabels);
  set_option(c, "cnn_epochs", "7");
  EXPECT_EQ(c.cnn.epochs, 7u);
}

TEST(Config, SetOptionRejectsBadInput) {
  PipelineConfig c;
  EXPECT_THROW(set_option(c, "no_such_key", "1"), ConfigError);
  EXPECT_THROW(set_option(c, "window", "five"), ConfigError);
  EXPECT_THROW(set_option(c, "window", "-5"), ConfigError);
  EXPECT_THROW(set_option(c, "split_ratio", "3x"), ConfigError);
  EXPECT_THROW(set_option(c, "methods", "svm"), ConfigError);
  EXPECT_THROW(set_option(c, "protocol", "fast"), ConfigError);
  EXPECT_THROW(set_option(c, "exclude_unlabeled_votes", "maybe"), ConfigError);
}

TEST(Config, ValidateRejectsOutOfRange) {
  auto expect_invalid = [](auto mutate) {
    PipelineConfig c;
    mutate(c);
    EXPECT_THROW(c.validate(), ConfigError);
  };
  expect_invalid([](PipelineConfig& c) { c.window = 4; });
  expect_invalid([](PipelineConfig& c) { c.window = 0; });
  expect_invalid([](PipelineConfig& c) { c.retained_variance = 0.0; });
  expect_invalid([](PipelineConfig& c) { c.retained_variance = 1.5; });
  expect_invalid([](PipelineConfig& c) { c.split_ratio = 0.0; });
  expect_invalid([](PipelineConfig& c) { c.methods.clear(); });
  expect_invalid([](PipelineConfig& c) { c.threads = 0; });
  expect_invalid([](PipelineConfig& c) { c.gml_ridge = -1.0; });
  expect_invalid([](PipelineConfig& c) { c.cnn.batch_size = 0; });
  expect_invalid([](PipelineConfig& c) { c.watershed.min_distance = 0; });
}

TEST(Config, FileParsing) {
  testutil::TempDir tmp;
  write_file(tmp / "run.toml",
             "# experiment\n"
             "[pipeline]\n"
             "cube = \"data/ip.hsc\"   # trailing comment\n"
             "split-ratio = 4\n"
             "methods = [\"gml\", \"gml-w\"]\n"
             "\n"
             "class_names = Corn, Oats\n");
  PipelineConfig c;
  load_config_file(c, tmp / "run.toml");
  EXPECT_EQ(c.cube_path, "data/ip.hsc");
  EXPECT_EQ(c.split_ratio, 4.0);
  ASSERT_EQ(c.methods.size(), 2u);
  EXPECT_EQ(c.methods[1], Method::kGmlW);
  EXPECT_EQ(c.class_names, (std::vector<std::string>{"Corn", "Oats"}));
}

TEST(Config, FileErrorsNameTheLine) {
  testutil::TempDir tmp;
  write_file(tmp / "bad.toml", "window = 5\njust words\n");
  PipelineConfig c;
  try {
    load_config_file(c, tmp / "bad.toml");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("bad.toml:2"), std::string::npos) << e.what();
  }
  EXPECT_THROW(load_config_file(c, tmp / "missing.toml"), ConfigError);
}

TEST(Config, ManifestRoundTrip) {
  testutil::TempDir tmp;
  PipelineConfig a;
  a.cube_path = "x.hsc";
  a.methods = {Method::kCnn, Method::kGmlW};
  a.protocol = Protocol::kPaper;
  a.retained_variance = 0.987654321;
  a.gml_threshold = -3.25;
  a.cnn.learning_rate = 0.0125;
  a.watershed.elevation = ElevationMode::kGradient;
  a.split_mode = SplitMode::kGlobal;
  a.class_names = {"Corn", "Soy"};
  nlohmann::ordered_json manifest;
  manifest["config"] = a.to_json();
  write_file(tmp / "manifest.json", manifest.dump(2));

  PipelineConfig b;
  load_manifest_config(b, tmp / "manifest.json");
  EXPECT_EQ(b.to_json(), a.to_json());

  PipelineConfig d;
  d.gml_threshold = 1.0;
  manifest["config"] = PipelineConfig{}.to_json();
  write_file(tmp / "manifest.json", manifest.dump(2));
  load_manifest_config(d, tmp / "manifest.json");
  EXPECT_TRUE(std::isinf(d.gml_threshold));
}

TEST(Config, MethodNames) {
  for (auto m : {Method::kGml, Method::kGmlW, Method::kCnn, Method::kCnnW}) {
    EXPECT_EQ(parse_method(to_string(m)), m);
  }
}
