#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "autoview/op_set.hpp"
#include "autoview/trainer.hpp"

using namespace autoview;
namespace fs = std::filesystem;

#ifndef AUTOVIEW_CLI_PATH
#error "AUTOVIEW_CLI_PATH must be defined"
#endif

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() /
           ("autoview_cli_" + std::to_string(::getpid()) + "_" + std::to_string(rand()));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

struct CmdResult {
  int exit_code = -1;
  std::string out;
};

CmdResult run_cli(const std::string& args, const fs::path& tmp) {
  const std::string out_file = (tmp / "cmd_out.txt").string();
  const std::string cmd = std::string(AUTOVIEW_CLI_PATH) + " " + args + " > " + out_file + " 2>&1";
  const int rc = std::system(cmd.c_str());
  CmdResult r;
  r.exit_code = WEXITSTATUS(rc);
  std::ifstream in(out_file);
  std::stringstream ss;
  ss << in.rdbuf();
  r.out = ss.str();
  return r;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string write_tiny_config(const fs::path& p, const std::string& out_dir, int steps = 2) {
  std::ofstream out(p);
  out << R"({
  "steps": )" << steps << R"(,
  "batch_size": 2,
  "logging_interval": 1,
  "encoder": "mlp",
  "out_dir": ")" << out_dir << R"(",
  "dataset": {"num_classes": 3, "samples_per_class": 4, "image_size": 12},
  "progressive": {"enabled": false, "min_size": 8, "max_size": 8},
  "distill": {"out_dim": 16},
  "baseline": {"grid_n": [0, 1], "grid_m": [1]}
})";
  return p.string();
}

size_t count_occurrences(const std::string& text, const std::string& needle) {
  size_t count = 0, pos = 0;
  while ((pos = text.find(needle, pos)) != std::string::npos) {
    ++count;
    pos += needle.size();
  }
  return count;
}

}  // namespace

TEST_CASE("train twice with the same seed gives identical artifacts") {
  TempDir tmp;
  auto cfg = write_tiny_config(tmp.path / "c.json", (tmp.path / "ignored").string(), 3);
  auto r1 = run_cli("train --config " + cfg + " --seed 1 --out " + (tmp.path / "a").string(), tmp.path);
  REQUIRE_MESSAGE(r1.exit_code == 0, r1.out);
  auto r2 = run_cli("train --config " + cfg + " --seed 1 --out " + (tmp.path / "b").string(), tmp.path);
  REQUIRE(r2.exit_code == 0);
  CHECK(read_file((tmp.path / "a/metrics.jsonl").string()) ==
        read_file((tmp.path / "b/metrics.jsonl").string()));
  CHECK(read_file((tmp.path / "a/policy_trajectory.csv").string()) ==
        read_file((tmp.path / "b/policy_trajectory.csv").string()));
  // different seed changes the trajectory
  auto r3 = run_cli("train --config " + cfg + " --seed 2 --out " + (tmp.path / "c").string(), tmp.path);
  REQUIRE(r3.exit_code == 0);
  CHECK(read_file((tmp.path / "a/metrics.jsonl").string()) !=
        read_file((tmp.path / "c/metrics.jsonl").string()));
}

TEST_CASE("eval on an untrained checkpoint sits at chance level") {
  TempDir tmp;
  RunConfig cfg;
  cfg.seed = 11;
  cfg.steps = 1;
  cfg.dataset.num_classes = 8;
  cfg.dataset.samples_per_class = 64;
  cfg.out_dir = (tmp.path / "run").string();
  Trainer<float> t(cfg);  // untrained: initialized, zero steps taken
  fs::create_directories(cfg.out_dir);
  t.save_checkpoint(cfg.out_dir + "/checkpoint.bin");

  const std::string report = (tmp.path / "report.json").string();
  auto r = run_cli("eval --checkpoint " + cfg.out_dir + "/checkpoint.bin --out " + report, tmp.path);
  REQUIRE_MESSAGE(r.exit_code == 0, r.out);
  auto rep = json::parse(read_file(report));
  const double acc = rep.at("best_accuracy").get<double>();
  CHECK(acc > 1.0 / 8.0 - 0.08);
  CHECK(acc < 1.0 / 8.0 + 0.08);
}

TEST_CASE("plot emits one polyline per operation") {
  TempDir tmp;
  auto ops = build_operation_set(OpSetSpec{});
  const std::string traj = (tmp.path / "traj.csv").string();
  {
    std::ofstream out(traj);
    out << "step";
    for (const auto& d : ops) out << "," << d.name();
    out << "\n";
    for (int row = 0; row < 10; ++row) {
      out << row * 10;
      for (size_t i = 0; i < ops.size(); ++i) out << "," << (1.0 / static_cast<double>(ops.size()));
      out << "\n";
    }
  }
  const std::string metrics = (tmp.path / "metrics.jsonl").string();
  {
    std::ofstream out(metrics);
    for (int s = 0; s < 10; ++s)
      out << R"({"step": )" << s << R"(, "loss": 1.0, "h1": 0.8, "h_reg": 0.2})" << "\n";
  }
  auto r = run_cli("plot --metrics " + metrics + " --trajectory " + traj + " --out " +
                       (tmp.path / "plots").string(),
                   tmp.path);
  REQUIRE_MESSAGE(r.exit_code == 0, r.out);
  const std::string svg = read_file((tmp.path / "plots/sampling_probabilities.svg").string());
  CHECK(count_occurrences(svg, "<polyline") == ops.size());
  const std::string loss_svg = read_file((tmp.path / "plots/loss_curve.svg").string());
  CHECK(count_occurrences(loss_svg, "<polyline") == 3);
}

TEST_CASE("exit codes distinguish failure classes") {
  TempDir tmp;
  SUBCASE("unknown flag") {
    auto r = run_cli("train --bogus-flag 1", tmp.path);
    CHECK(r.exit_code == 2);
  }
  SUBCASE("unknown subcommand") {
    auto r = run_cli("frobnicate", tmp.path);
    CHECK(r.exit_code == 2);
  }
  SUBCASE("unreadable config") {
    auto r = run_cli("train --config /nonexistent/c.json", tmp.path);
    CHECK(r.exit_code == 3);
  }
  SUBCASE("syntactically broken config") {
    std::ofstream((tmp.path / "bad.json")) << "{ nope";
    auto r = run_cli("train --config " + (tmp.path / "bad.json").string(), tmp.path);
    CHECK(r.exit_code == 3);
  }
  SUBCASE("schema violation names the field") {
    std::ofstream((tmp.path / "schema.json")) << R"({"alpha": -2})";
    auto r = run_cli("train --config " + (tmp.path / "schema.json").string(), tmp.path);
    CHECK(r.exit_code == 4);
    CHECK(r.out.find("alpha") != std::string::npos);
  }
}

TEST_CASE("dump-ops lists the expanded set") {
  TempDir tmp;
  auto r = run_cli("dump-ops", tmp.path);
  REQUIRE(r.exit_code == 0);
  CHECK(count_occurrences(r.out, "\n") == 28);
  CHECK(r.out.find("AutoContrast 0 0") != std::string::npos);
  CHECK(r.out.find("GaussianBlur 3 1") != std::string::npos);
}

TEST_CASE("export-policy emits the versioned format") {
  TempDir tmp;
  auto cfg_path = write_tiny_config(tmp.path / "c.json", (tmp.path / "run").string(), 2);
  auto r1 = run_cli("train --config " + cfg_path, tmp.path);
  REQUIRE_MESSAGE(r1.exit_code == 0, r1.out);
  auto r2 = run_cli("export-policy --checkpoint " + (tmp.path / "run/checkpoint.bin").string() +
                        " --out -",
                    tmp.path);
  REQUIRE_MESSAGE(r2.exit_code == 0, r2.out);
  CHECK(r2.out.find("autoview-policy v1") == 0);
  CHECK(r2.out.find("p2 ") != std::string::npos);
  CHECK(r2.out.find("lambda_bern") != std::string::npos);
  auto imported = import_policy_text(r2.out);
  CHECK(imported.ops.size() == 28);
}

TEST_CASE("baseline grid and compare") {
  TempDir tmp;
  auto cfg_path = write_tiny_config(tmp.path / "c.json", (tmp.path / "base").string(), 2);
  auto r = run_cli("baseline --config " + cfg_path + " --out " + (tmp.path / "base").string(),
                   tmp.path);
  REQUIRE_MESSAGE(r.exit_code == 0, r.out);
  auto table = json::parse(read_file((tmp.path / "base/baseline_table.json").string()));
  CHECK(table.size() == 2);  // grid_n {0,1} x grid_m {1}

  // compare needs eval reports; train with --eval to produce two
  auto r1 = run_cli("train --config " + cfg_path + " --seed 5 --out " + (tmp.path / "r1").string() +
                        " --eval",
                    tmp.path);
  REQUIRE(r1.exit_code == 0);
  auto r2 = run_cli("train --config " + cfg_path + " --seed 6 --out " + (tmp.path / "r2").string() +
                        " --eval",
                    tmp.path);
  REQUIRE(r2.exit_code == 0);
  auto rc = run_cli("compare " + (tmp.path / "r1/eval_report.json").string() + " " +
                        (tmp.path / "r2/eval_report.json").string() + " --out " +
                        (tmp.path / "joined.json").string(),
                    tmp.path);
  REQUIRE_MESSAGE(rc.exit_code == 0, rc.out);
  auto joined = json::parse(read_file((tmp.path / "joined.json").string()));
  CHECK(joined.size() == 2);
}

TEST_CASE("ablate runs a named switch") {
  TempDir tmp;
  auto cfg_path = write_tiny_config(tmp.path / "c.json", (tmp.path / "ab").string(), 2);
  auto r = run_cli("ablate --config " + cfg_path + " --out " + (tmp.path / "ab").string() +
                       " --switch no-regularizer",
                   tmp.path);
  REQUIRE_MESSAGE(r.exit_code == 0, r.out);
  auto rep = json::parse(read_file((tmp.path / "ab/ablation_report.json").string()));
  REQUIRE(rep.size() == 1);
  CHECK(rep[0]["setting"] == "no-regularizer");
}
