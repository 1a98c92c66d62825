// Command-line entry points: train / baseline / eval / export-policy /
// plot / ablate / dump-ops / compare.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "autoview/config.hpp"
#include "autoview/eval.hpp"
#include "autoview/plot.hpp"
#include "autoview/policy.hpp"
#include "autoview/trainer.hpp"

namespace fs = std::filesystem;
using namespace autoview;

namespace {

// distinct exit codes: 2 usage, 3 unreadable config, 4 schema violation,
// 5 numeric abort, 6 I/O failure
constexpr int kExitUsage = 2;
constexpr int kExitConfigRead = 3;
constexpr int kExitConfigSchema = 4;
constexpr int kExitNumeric = 5;
constexpr int kExitIo = 6;

struct TrainArgs {
  std::string config_path;
  std::optional<uint64_t> seed;
  std::optional<std::string> out_dir;
  std::optional<int64_t> steps;
  std::optional<int> batch_size;
  std::optional<double> alpha;
  std::optional<std::string> encoder;
  std::optional<std::string> precision;
  bool run_eval = false;
  bool checked = false;
};

RunConfig load_with_overrides(const TrainArgs& a) {
  RunConfig cfg = load_config(a.config_path);
  if (a.seed) cfg.seed = *a.seed;
  if (a.out_dir) cfg.out_dir = *a.out_dir;
  if (a.steps) cfg.steps = *a.steps;
  if (a.batch_size) cfg.batch_size = *a.batch_size;
  if (a.alpha) cfg.alpha = *a.alpha;
  if (a.encoder) cfg.encoder = *a.encoder;
  if (a.precision) cfg.precision = *a.precision;
  validate(cfg);
  return cfg;
}

json knn_report_json(const KnnReport& rep) {
  json per_k;
  for (const auto& [k, acc] : rep.per_k) per_k[std::to_string(k)] = acc;
  return {{"per_k", per_k}, {"best_k", rep.best_k}, {"best_accuracy", rep.best_accuracy}};
}

void write_json(const json& j, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write '" + path + "'");
  out << j.dump(2) << "\n";
}

template <typename S>
void run_train(const RunConfig& cfg, bool run_eval, bool checked) {
  checked_mode() = checked;
  Trainer<S> t(cfg);
  t.run();
  std::printf("trained %lld steps -> %s\n", static_cast<long long>(t.step), cfg.out_dir.c_str());
  if (run_eval) {
    auto rep = t.evaluate();
    write_json(knn_report_json(rep), cfg.out_dir + "/eval_report.json");
    std::printf("k-NN best: %.4f (k=%d)\n", rep.best_accuracy, rep.best_k);
  }
}

template <typename S>
void run_eval_cmd(const std::string& ckpt, const std::string& out_path, bool probe) {
  auto t = Trainer<S>::load_checkpoint(ckpt);
  auto rep = t.evaluate();
  json j = knn_report_json(rep);
  if (probe) {
    auto train_bank =
        extract_embeddings(t.teacher, t.data, t.data.train_indices, t.effective_image_size());
    auto test_bank =
        extract_embeddings(t.teacher, t.data, t.data.eval_indices, t.effective_image_size());
    j["linear_probe"] = linear_probe(train_bank, test_bank);
  }
  write_json(j, out_path);
  std::printf("k-NN best: %.4f (k=%d) -> %s\n", rep.best_accuracy, rep.best_k, out_path.c_str());
}

template <typename S>
void run_export_policy(const std::string& ckpt, const std::string& out_path) {
  auto t = Trainer<S>::load_checkpoint(ckpt);
  const std::string text = export_policy_text(t.policy, t.ops);
  if (out_path.empty() || out_path == "-") {
    std::fputs(text.c_str(), stdout);
  } else {
    std::ofstream out(out_path);
    if (!out) throw IoError("cannot write '" + out_path + "'");
    out << text;
    std::printf("policy -> %s\n", out_path.c_str());
  }
}

template <typename S>
void run_baseline(const RunConfig& cfg, const std::string& out_root) {
  auto table = randaug_grid_baseline<S>(cfg, out_root);
  json rows = json::array();
  std::printf("%4s %4s %10s %10s\n", "N", "M", "k-NN", "loss");
  for (const auto& c : table) {
    rows.push_back({{"n", c.n}, {"m", c.m}, {"knn_accuracy", c.knn_accuracy},
                    {"final_loss", c.final_loss}});
    std::printf("%4d %4d %10.4f %10.4f\n", c.n, c.m, c.knn_accuracy, c.final_loss);
  }
  write_json(rows, out_root + "/baseline_table.json");
}

struct AblateSwitch {
  const char* name;
  void (*apply)(RunConfig&);
};

const AblateSwitch kSwitches[] = {
    {"full", [](RunConfig&) {}},
    {"no-hierarchical", [](RunConfig& c) { c.policy.hierarchical = false; }},
    {"fixed-exec-prob", [](RunConfig& c) { c.policy.search_exec_prob = false; }},
    {"uniform-weights", [](RunConfig& c) { c.policy.search_weights = false; }},
    {"no-regularizer", [](RunConfig& c) { c.alpha = 0.0; }},
    {"k3", [](RunConfig& c) { c.policy.k = 3; }},
    {"unshared-g", [](RunConfig& c) { c.policy.shared_generator = false; }},
};

template <typename S>
void run_ablate(const RunConfig& base, const std::string& out_root,
                const std::vector<std::string>& names) {
  json rows = json::array();
  std::printf("%-18s %10s %10s\n", "setting", "k-NN", "loss");
  for (const auto& name : names) {
    const AblateSwitch* sw = nullptr;
    for (const auto& s : kSwitches)
      if (name == s.name) sw = &s;
    if (!sw) throw ConfigError("ablate: unknown switch '" + name + "'");
    RunConfig cfg = base;
    cfg.out_dir = out_root + "/" + name;
    sw->apply(cfg);
    validate(cfg);
    Trainer<S> t(cfg);
    t.run();
    auto rep = t.evaluate();
    rows.push_back({{"setting", name},
                    {"knn_accuracy", rep.best_accuracy},
                    {"best_k", rep.best_k},
                    {"final_loss", t.last_stats.loss}});
    std::printf("%-18s %10.4f %10.4f\n", name, rep.best_accuracy, t.last_stats.loss);
  }
  write_json(rows, out_root + "/ablation_report.json");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"AutoView: adversarial augmentation-policy search for self-supervised training"};
  app.require_subcommand(1);

  TrainArgs targs;
  auto* train = app.add_subcommand("train", "train with the learned policy");
  train->add_option("--config", targs.config_path, "config file")->required();
  train->add_option("--seed", targs.seed, "override seed");
  train->add_option("--out", targs.out_dir, "override output directory");
  train->add_option("--steps", targs.steps, "override step count");
  train->add_option("--batch-size", targs.batch_size, "override batch size");
  train->add_option("--alpha", targs.alpha, "override the regularizer weight");
  train->add_option("--encoder", targs.encoder, "override encoder (tiny-vit|mlp)");
  train->add_option("--precision", targs.precision, "override precision (f32|f64)");
  train->add_flag("--eval", targs.run_eval, "run k-NN evaluation after training");
  train->add_flag("--checked", targs.checked, "abort on any non-finite intermediate");

  std::string base_out;
  auto* baseline = app.add_subcommand("baseline", "RandAug grid-search baseline");
  baseline->add_option("--config", targs.config_path, "config file")->required();
  baseline->add_option("--out", base_out, "output root (default: config out_dir)");
  baseline->add_option("--seed", targs.seed, "override seed");

  std::string ckpt_path, report_path = "eval_report.json";
  bool probe = false;
  auto* eval = app.add_subcommand("eval", "k-NN evaluation of a checkpoint");
  eval->add_option("--checkpoint", ckpt_path, "checkpoint file")->required();
  eval->add_option("--out", report_path, "report path");
  eval->add_flag("--linear-probe", probe, "also fit a linear probe");

  std::string export_out;
  auto* expol = app.add_subcommand("export-policy", "write the policy export text");
  expol->add_option("--checkpoint", ckpt_path, "checkpoint file")->required();
  expol->add_option("--out", export_out, "output file ('-' for stdout)");

  std::string metrics_path, traj_path, plot_out = ".";
  auto* plot = app.add_subcommand("plot", "render SVG charts from run logs");
  plot->add_option("--metrics", metrics_path, "metrics.jsonl path");
  plot->add_option("--trajectory", traj_path, "policy_trajectory.csv path");
  plot->add_option("--out", plot_out, "output directory");

  std::vector<std::string> switch_names;
  bool all_switches = false;
  auto* ablate = app.add_subcommand("ablate", "run named ablation switches");
  ablate->add_option("--config", targs.config_path, "config file")->required();
  ablate->add_option("--out", base_out, "output root (default: config out_dir)");
  ablate->add_option("--switch", switch_names,
                     "switch name (full, no-hierarchical, fixed-exec-prob, uniform-weights, "
                     "no-regularizer, k3, unshared-g)");
  ablate->add_flag("--all", all_switches, "run every switch");
  ablate->add_option("--seed", targs.seed, "override seed");

  std::string ops_config, ops_out;
  auto* dump = app.add_subcommand("dump-ops", "list the expanded operation set");
  dump->add_option("--config", ops_config, "config file (defaults used when absent)");
  dump->add_option("--out", ops_out, "output file (stdout when absent)");

  std::vector<std::string> report_paths;
  std::string compare_out;
  auto* compare = app.add_subcommand("compare", "join evaluation reports into one table");
  compare->add_option("reports", report_paths, "eval_report.json files")->required();
  compare->add_option("--out", compare_out, "joined table path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitUsage;
  }

  try {
    if (train->parsed()) {
      RunConfig cfg = load_with_overrides(targs);
      if (cfg.precision == "f64")
        run_train<double>(cfg, targs.run_eval, targs.checked);
      else
        run_train<float>(cfg, targs.run_eval, targs.checked);
    } else if (baseline->parsed()) {
      RunConfig cfg = load_with_overrides(targs);
      const std::string root = base_out.empty() ? cfg.out_dir : base_out;
      fs::create_directories(root);
      if (cfg.precision == "f64")
        run_baseline<double>(cfg, root);
      else
        run_baseline<float>(cfg, root);
    } else if (eval->parsed()) {
      if (Trainer<float>::checkpoint_scalar_size(ckpt_path) == 8)
        run_eval_cmd<double>(ckpt_path, report_path, probe);
      else
        run_eval_cmd<float>(ckpt_path, report_path, probe);
    } else if (expol->parsed()) {
      if (Trainer<float>::checkpoint_scalar_size(ckpt_path) == 8)
        run_export_policy<double>(ckpt_path, export_out);
      else
        run_export_policy<float>(ckpt_path, export_out);
    } else if (plot->parsed()) {
      if (metrics_path.empty() && traj_path.empty())
        throw ConfigError("plot: need --metrics and/or --trajectory");
      fs::create_directories(plot_out);
      if (!metrics_path.empty()) {
        plot_loss_curves(metrics_path, plot_out + "/loss_curve.svg");
        std::printf("wrote %s/loss_curve.svg\n", plot_out.c_str());
      }
      if (!traj_path.empty()) {
        plot_policy_trajectory(traj_path, plot_out + "/sampling_probabilities.svg");
        std::printf("wrote %s/sampling_probabilities.svg\n", plot_out.c_str());
      }
    } else if (ablate->parsed()) {
      RunConfig cfg = load_with_overrides(targs);
      const std::string root = base_out.empty() ? cfg.out_dir : base_out;
      fs::create_directories(root);
      std::vector<std::string> names = switch_names;
      if (all_switches) {
        names.clear();
        for (const auto& s : kSwitches) names.push_back(s.name);
      }
      if (names.empty()) throw ConfigError("ablate: pass --switch or --all");
      if (cfg.precision == "f64")
        run_ablate<double>(cfg, root, names);
      else
        run_ablate<float>(cfg, root, names);
    } else if (dump->parsed()) {
      RunConfig cfg = ops_config.empty() ? RunConfig{} : load_config(ops_config);
      auto ops = build_operation_set(cfg.op_set_spec());
      std::string text;
      for (const auto& d : ops) {
        char line[96];
        std::snprintf(line, sizeof(line), "%s %d %g\n", kind_name(d.kind), d.level, d.magnitude);
        text += line;
      }
      if (ops_out.empty()) {
        std::fputs(text.c_str(), stdout);
      } else {
        std::ofstream out(ops_out);
        if (!out) throw IoError("cannot write '" + ops_out + "'");
        out << text;
      }
    } else if (compare->parsed()) {
      json table = json::array();
      std::printf("%-50s %10s %7s\n", "run", "best k-NN", "best k");
      for (const auto& p : report_paths) {
        std::ifstream in(p);
        if (!in) throw IoError("cannot open report '" + p + "'");
        json rep = json::parse(in, nullptr, true);
        json row = {{"run", p},
                    {"best_accuracy", rep.at("best_accuracy")},
                    {"best_k", rep.at("best_k")},
                    {"per_k", rep.at("per_k")}};
        table.push_back(row);
        std::printf("%-50s %10.4f %7d\n", p.c_str(), rep.at("best_accuracy").get<double>(),
                    rep.at("best_k").get<int>());
      }
      if (!compare_out.empty()) write_json(table, compare_out);
    }
  } catch (const ConfigReadError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitConfigRead;
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitConfigSchema;
  } catch (const NumericError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitNumeric;
  } catch (const IoError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitIo;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitIo;
  }
  return 0;
}
