#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "autoview/config.hpp"
#include "autoview/dataset.hpp"
#include "testutil.hpp"

using namespace autoview;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() / ("autoview_test_" + std::to_string(::getpid()) + "_" +
                                        std::to_string(rand()));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

std::string write_file(const fs::path& p, const std::string& text) {
  std::ofstream out(p);
  out << text;
  return p.string();
}

}  // namespace

TEST_CASE("config loading") {
  TempDir tmp;
  SUBCASE("empty file yields the full-default config") {
    auto cfg = load_config(write_file(tmp.path / "empty.json", "  \n"));
    CHECK(cfg.steps == 2000);
    CHECK(cfg.alpha == 1.0);
    CHECK(cfg.policy_opt_pi.lr == 6e-5);
    CHECK(cfg.policy_opt_p.lr == 1e-5);
    CHECK(cfg.distill.teacher_temp == 0.04);
    // echo materializes every field
    auto j = config_to_json(cfg);
    CHECK(j.contains("policy"));
    CHECK(j["policy"].contains("lambda_bern"));
  }
  SUBCASE("validation names the offending field") {
    auto path = write_file(tmp.path / "bad.json", R"({"alpha": -1})");
    try {
      load_config(path);
      FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
      CHECK(std::string(e.what()).find("alpha") != std::string::npos);
    }
  }
  SUBCASE("unknown keys are rejected with their path") {
    auto path = write_file(tmp.path / "unknown.json", R"({"policy": {"bogus_flag": true}})");
    try {
      load_config(path);
      FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
      CHECK(std::string(e.what()).find("policy.bogus_flag") != std::string::npos);
    }
  }
  SUBCASE("parse errors carry position info") {
    auto path = write_file(tmp.path / "syntax.json", "{ not json");
    CHECK_THROWS_AS(load_config(path), ConfigError);
  }
  SUBCASE("missing file") { CHECK_THROWS_AS(load_config("/nonexistent/c.json"), ConfigError); }
  SUBCASE("round trip: load(echo(load(c))) == load(c)") {
    auto path = write_file(tmp.path / "c.json",
                           R"({"seed": 9, "steps": 50, "alpha": 0.5,
                               "dataset": {"num_classes": 4, "image_size": 16},
                               "policy": {"lambda_bern": 0.25}})");
    auto cfg = load_config(path);
    const std::string echo_path = (tmp.path / "echo.json").string();
    save_config(cfg, echo_path);
    auto cfg2 = load_config(echo_path);
    CHECK(config_to_json(cfg).dump() == config_to_json(cfg2).dump());
  }
  SUBCASE("mlp encoder requires constant image size") {
    auto path = write_file(tmp.path / "mlp.json",
                           R"({"encoder": "mlp",
                               "progressive": {"enabled": true, "min_size": 16, "max_size": 32}})");
    CHECK_THROWS_AS(load_config(path), ConfigError);
    auto ok = write_file(tmp.path / "mlp_ok.json",
                         R"({"encoder": "mlp",
                             "progressive": {"enabled": false, "min_size": 32, "max_size": 32}})");
    CHECK(load_config(ok).encoder == "mlp");
  }
  SUBCASE("wrong types are reported") {
    auto path = write_file(tmp.path / "type.json", R"({"steps": "many"})");
    try {
      load_config(path);
      FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
      CHECK(std::string(e.what()).find("steps") != std::string::npos);
    }
  }
}

TEST_CASE("synthetic dataset") {
  DatasetConfig cfg;
  cfg.num_classes = 8;
  cfg.samples_per_class = 4;
  cfg.image_size = 16;

  SUBCASE("generation is a pure function of (spec, seed)") {
    auto a = load_dataset<double>(cfg);
    auto b = load_dataset<double>(cfg);
    REQUIRE(a.size() == b.size());
    for (int64_t i = 0; i < a.size(); ++i)
      CHECK(testutil::bitwise_equal(a.images[static_cast<size_t>(i)],
                                    b.images[static_cast<size_t>(i)]));
    DatasetConfig other = cfg;
    other.generator_seed = 99;
    auto c = load_dataset<double>(other);
    CHECK_FALSE(testutil::bitwise_equal(a.images[0], c.images[0]));
  }
  SUBCASE("every sample decodes to a valid image with dense labels") {
    auto ds = load_dataset<float>(cfg);
    CHECK(ds.size() == 32);
    CHECK(ds.num_classes() == 8);
    std::vector<int> seen(8, 0);
    for (int64_t i = 0; i < ds.size(); ++i) {
      const auto& img = ds.images[static_cast<size_t>(i)];
      CHECK(img.shape == Shape{3, 16, 16});
      CHECK(img.data.minCoeff() >= 0.0f);
      CHECK(img.data.maxCoeff() <= 1.0f);
      seen[static_cast<size_t>(ds.labels[static_cast<size_t>(i)])]++;
    }
    for (int c = 0; c < 8; ++c) CHECK(seen[static_cast<size_t>(c)] == 4);
  }
  SUBCASE("train/eval split is per class and disjoint") {
    cfg.samples_per_class = 10;
    cfg.eval_fraction = 0.2;
    auto ds = load_dataset<double>(cfg);
    CHECK(ds.train_indices.size() == 64);
    CHECK(ds.eval_indices.size() == 16);
    for (int64_t i : ds.train_indices)
      for (int64_t j : ds.eval_indices) CHECK(i != j);
  }
}

TEST_CASE("ppm io and folder datasets") {
  TempDir tmp;
  auto rng = rng_stream(77, {0});
  auto img = Tensor<double>::rand(Shape{3, 9, 7}, rng);

  SUBCASE("round trip within 8-bit quantization") {
    const std::string p = (tmp.path / "x.ppm").string();
    write_ppm(img, p);
    auto back = read_ppm<double>(p);
    REQUIRE(back.shape == img.shape);
    CHECK(testutil::all_close(back, img, 0.0, 0.5 / 255.0 + 1e-9));
  }
  SUBCASE("folder-of-images layout") {
    for (const char* cls : {"apple", "banana"}) {
      fs::create_directories(tmp.path / "data" / cls);
      for (int i = 0; i < 5; ++i) {
        auto im = Tensor<double>::rand(Shape{3, 8, 8}, rng);
        write_ppm(im, (tmp.path / "data" / cls / ("img" + std::to_string(i) + ".ppm")).string());
      }
    }
    DatasetConfig cfg;
    cfg.kind = "folder-of-images";
    cfg.root = (tmp.path / "data").string();
    auto ds = load_dataset<float>(cfg);
    CHECK(ds.size() == 10);
    CHECK(ds.num_classes() == 2);
    CHECK(ds.class_names[0] == "apple");
    CHECK(ds.train_indices.size() == 8);
    CHECK(ds.eval_indices.size() == 2);
  }
  SUBCASE("missing root is a config error") {
    DatasetConfig cfg;
    cfg.kind = "folder-of-images";
    cfg.root = (tmp.path / "nope").string();
    CHECK_THROWS_AS(load_dataset<float>(cfg), ConfigError);
  }
}

TEST_CASE("epoch order is a seed-determined permutation") {
  std::vector<int64_t> idx = {0, 1, 2, 3, 4, 5, 6, 7};
  auto a = epoch_order(idx, 5, 0);
  auto b = epoch_order(idx, 5, 0);
  CHECK(a == b);
  auto c = epoch_order(idx, 5, 1);
  CHECK(a != c);
  std::sort(c.begin(), c.end());
  CHECK(c == idx);
}
