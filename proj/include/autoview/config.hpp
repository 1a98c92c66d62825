#pragma once

#include <json.hpp>

#include <cstdint>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "autoview/errors.hpp"
#include "autoview/op_set.hpp"

namespace autoview {

using nlohmann::json;

struct DatasetConfig {
  std::string kind = "synthetic-shapes";  // synthetic-shapes | folder-of-images
  int num_classes = 8;
  int samples_per_class = 64;
  int image_size = 32;
  uint64_t generator_seed = 7;
  double eval_fraction = 0.2;
  std::string root;  // folder-of-images only
};

struct StudentOptConfig {
  std::string kind = "adamw";
  double lr = 5e-4;
  double beta1 = 0.9, beta2 = 0.999;
  double warmup_frac = 0.1;
  double weight_decay_start = 0.04, weight_decay_end = 0.4;
  double clip_norm = 3.0;
};

struct PolicyOptConfig {
  std::string kind = "adam";
  double lr = 6e-5;
  double beta1 = 0.5, beta2 = 0.999;
  std::vector<double> decay_knots;  // fractions of the run; empty = constant
  double decay_factor = 0.5;
};

struct PolicyConfig {
  int k = 2;
  double lambda_cat = 1.0;
  double lambda_bern = 0.5;
  bool gumbel_noise = false;
  double p2_init = 0.5;
  double grl_scale = 1.0;
  bool hierarchical = true;
  bool search_exec_prob = true;   // off: p2 frozen at its init
  bool search_weights = true;     // off: pi frozen (uniform sampling)
  bool shared_generator = true;   // off: independent policy per view
  bool learn = true;              // off: policy entirely frozen
};

struct ExplicitOpConfig {
  std::string kind;
  double magnitude = 0.0;
};

struct AugmentConfig {
  int magnitude_levels = 3;
  bool include_geometric = false;
  std::vector<ExplicitOpConfig> ops;  // overrides the curated grid when set
  double crop_scale_min = 0.5, crop_scale_max = 1.0;
  double hflip_prob = 0.5;
};

struct DistillConfig {
  double teacher_temp = 0.04, student_temp = 0.1;
  double center_momentum = 0.9;
  double ema_momentum = 0.996;
  int out_dim = 256;
};

struct ProgressiveConfig {
  bool enabled = true;
  int num_stages = 4;
  int min_size = 16, max_size = 32;
};

struct EvalSettings {
  std::vector<int> knn_k = {5, 10, 20};
  double knn_temperature = 0.07;
};

struct BaselineConfig {
  std::vector<int> grid_n = {1, 2};
  std::vector<int> grid_m = {1, 2, 3};
};

/// Full experiment description; the single source of truth for a run.
struct RunConfig {
  uint64_t seed = 1;
  std::string precision = "f32";  // f32 | f64
  int64_t steps = 2000;
  int batch_size = 64;
  std::string out_dir = "runs/default";
  int64_t logging_interval = 50;
  int64_t checkpoint_interval = 0;  // 0: checkpoint only at the end
  double alpha = 1.0;
  bool symmetrize = true;
  std::string encoder = "tiny-vit";  // tiny-vit | mlp
  DatasetConfig dataset;
  StudentOptConfig student_opt;
  PolicyOptConfig policy_opt_pi;
  PolicyOptConfig policy_opt_p;
  PolicyConfig policy;
  AugmentConfig augment;
  DistillConfig distill;
  ProgressiveConfig progressive;
  EvalSettings eval;
  BaselineConfig baseline;

  RunConfig() {
    policy_opt_pi.lr = 6e-5;
    policy_opt_pi.decay_knots = {0.5, 0.8};
    policy_opt_p.lr = 1e-5;  // constant schedule
  }

  OpSetSpec op_set_spec() const {
    OpSetSpec spec;
    spec.magnitude_levels = augment.magnitude_levels;
    spec.include_geometric = augment.include_geometric;
    for (const auto& e : augment.ops) {
      AugKind k;
      if (!kind_from_name(e.kind, k))
        throw ConfigError("config: augment.ops: unknown kind '" + e.kind + "'");
      spec.explicit_ops.push_back({k, e.magnitude});
    }
    return spec;
  }
};

namespace cfgdetail {

inline void check_keys(const json& j, const std::set<std::string>& allowed,
                       const std::string& path) {
  if (!j.is_object())
    throw ConfigError("config: " + (path.empty() ? std::string("<root>") : path) +
                      " must be an object");
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!allowed.count(it.key()))
      throw ConfigError("config: unknown key '" + (path.empty() ? it.key() : path + "." + it.key()) +
                        "'");
}

template <typename T>
void read(const json& j, const char* key, T& out, const std::string& path) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError("config: field '" + (path.empty() ? key : path + "." + key) +
                      "' has the wrong type");
  }
}

}  // namespace cfgdetail

inline void from_json_strict(const json& j, DatasetConfig& c, const std::string& path) {
  cfgdetail::check_keys(j, {"kind", "num_classes", "samples_per_class", "image_size",
                            "generator_seed", "eval_fraction", "root"},
                        path);
  cfgdetail::read(j, "kind", c.kind, path);
  cfgdetail::read(j, "num_classes", c.num_classes, path);
  cfgdetail::read(j, "samples_per_class", c.samples_per_class, path);
  cfgdetail::read(j, "image_size", c.image_size, path);
  cfgdetail::read(j, "generator_seed", c.generator_seed, path);
  cfgdetail::read(j, "eval_fraction", c.eval_fraction, path);
  cfgdetail::read(j, "root", c.root, path);
}

inline void from_json_strict(const json& j, StudentOptConfig& c, const std::string& path) {
  cfgdetail::check_keys(j, {"kind", "lr", "beta1", "beta2", "warmup_frac", "weight_decay_start",
                            "weight_decay_end", "clip_norm"},
                        path);
  cfgdetail::read(j, "kind", c.kind, path);
  cfgdetail::read(j, "lr", c.lr, path);
  cfgdetail::read(j, "beta1", c.beta1, path);
  cfgdetail::read(j, "beta2", c.beta2, path);
  cfgdetail::read(j, "warmup_frac", c.warmup_frac, path);
  cfgdetail::read(j, "weight_decay_start", c.weight_decay_start, path);
  cfgdetail::read(j, "weight_decay_end", c.weight_decay_end, path);
  cfgdetail::read(j, "clip_norm", c.clip_norm, path);
}

inline void from_json_strict(const json& j, PolicyOptConfig& c, const std::string& path) {
  cfgdetail::check_keys(j, {"kind", "lr", "beta1", "beta2", "decay_knots", "decay_factor"}, path);
  cfgdetail::read(j, "kind", c.kind, path);
  cfgdetail::read(j, "lr", c.lr, path);
  cfgdetail::read(j, "beta1", c.beta1, path);
  cfgdetail::read(j, "beta2", c.beta2, path);
  cfgdetail::read(j, "decay_knots", c.decay_knots, path);
  cfgdetail::read(j, "decay_factor", c.decay_factor, path);
}

inline void from_json_strict(const json& j, PolicyConfig& c, const std::string& path) {
  cfgdetail::check_keys(j, {"k", "lambda_cat", "lambda_bern", "gumbel_noise", "p2_init",
                            "grl_scale", "hierarchical", "search_exec_prob", "search_weights",
                            "shared_generator", "learn"},
                        path);
  cfgdetail::read(j, "k", c.k, path);
  cfgdetail::read(j, "lambda_cat", c.lambda_cat, path);
  cfgdetail::read(j, "lambda_bern", c.lambda_bern, path);
  cfgdetail::read(j, "gumbel_noise", c.gumbel_noise, path);
  cfgdetail::read(j, "p2_init", c.p2_init, path);
  cfgdetail::read(j, "grl_scale", c.grl_scale, path);
  cfgdetail::read(j, "hierarchical", c.hierarchical, path);
  cfgdetail::read(j, "search_exec_prob", c.search_exec_prob, path);
  cfgdetail::read(j, "search_weights", c.search_weights, path);
  cfgdetail::read(j, "shared_generator", c.shared_generator, path);
  cfgdetail::read(j, "learn", c.learn, path);
}

inline void from_json_strict(const json& j, AugmentConfig& c, const std::string& path) {
  cfgdetail::check_keys(j, {"magnitude_levels", "include_geometric", "ops", "crop_scale_min",
                            "crop_scale_max", "hflip_prob"},
                        path);
  cfgdetail::read(j, "magnitude_levels", c.magnitude_levels, path);
  cfgdetail::read(j, "include_geometric", c.include_geometric, path);
  cfgdetail::read(j, "crop_scale_min", c.crop_scale_min, path);
  cfgdetail::read(j, "crop_scale_max", c.crop_scale_max, path);
  cfgdetail::read(j, "hflip_prob", c.hflip_prob, path);
  if (j.contains("ops")) {
    if (!j.at("ops").is_array()) throw ConfigError("config: field '" + path + ".ops' must be an array");
    c.ops.clear();
    size_t idx = 0;
    for (const auto& e : j.at("ops")) {
      const std::string epath = path + ".ops[" + std::to_string(idx++) + "]";
      cfgdetail::check_keys(e, {"kind", "magnitude"}, epath);
      ExplicitOpConfig op;
      cfgdetail::read(e, "kind", op.kind, epath);
      cfgdetail::read(e, "magnitude", op.magnitude, epath);
      if (op.kind.empty()) throw ConfigError("config: field '" + epath + ".kind' is required");
      c.ops.push_back(op);
    }
  }
}

inline void from_json_strict(const json& j, DistillConfig& c, const std::string& path) {
  cfgdetail::check_keys(
      j, {"teacher_temp", "student_temp", "center_momentum", "ema_momentum", "out_dim"}, path);
  cfgdetail::read(j, "teacher_temp", c.teacher_temp, path);
  cfgdetail::read(j, "student_temp", c.student_temp, path);
  cfgdetail::read(j, "center_momentum", c.center_momentum, path);
  cfgdetail::read(j, "ema_momentum", c.ema_momentum, path);
  cfgdetail::read(j, "out_dim", c.out_dim, path);
}

inline void from_json_strict(const json& j, ProgressiveConfig& c, const std::string& path) {
  cfgdetail::check_keys(j, {"enabled", "num_stages", "min_size", "max_size"}, path);
  cfgdetail::read(j, "enabled", c.enabled, path);
  cfgdetail::read(j, "num_stages", c.num_stages, path);
  cfgdetail::read(j, "min_size", c.min_size, path);
  cfgdetail::read(j, "max_size", c.max_size, path);
}

inline void from_json_strict(const json& j, EvalSettings& c, const std::string& path) {
  cfgdetail::check_keys(j, {"knn_k", "knn_temperature"}, path);
  cfgdetail::read(j, "knn_k", c.knn_k, path);
  cfgdetail::read(j, "knn_temperature", c.knn_temperature, path);
}

inline void from_json_strict(const json& j, BaselineConfig& c, const std::string& path) {
  cfgdetail::check_keys(j, {"grid_n", "grid_m"}, path);
  cfgdetail::read(j, "grid_n", c.grid_n, path);
  cfgdetail::read(j, "grid_m", c.grid_m, path);
}

inline void validate(const RunConfig& c) {
  auto require = [](bool ok, const std::string& field, const std::string& constraint) {
    if (!ok) throw ConfigError("config: field '" + field + "' " + constraint);
  };
  require(c.precision == "f32" || c.precision == "f64", "precision", "must be 'f32' or 'f64'");
  require(c.steps > 0, "steps", "must be > 0");
  require(c.batch_size > 0, "batch_size", "must be > 0");
  require(c.logging_interval > 0, "logging_interval", "must be > 0");
  require(c.alpha >= 0.0, "alpha", "must be >= 0");
  require(c.encoder == "tiny-vit" || c.encoder == "mlp", "encoder", "must be 'tiny-vit' or 'mlp'");
  require(c.dataset.kind == "synthetic-shapes" || c.dataset.kind == "folder-of-images",
          "dataset.kind", "must be 'synthetic-shapes' or 'folder-of-images'");
  require(c.dataset.num_classes >= 1 && c.dataset.num_classes <= 8, "dataset.num_classes",
          "must lie in [1,8] for the synthetic generator");
  require(c.dataset.samples_per_class >= 2, "dataset.samples_per_class", "must be >= 2");
  require(c.dataset.image_size >= 8, "dataset.image_size", "must be >= 8");
  require(c.dataset.eval_fraction > 0.0 && c.dataset.eval_fraction < 1.0, "dataset.eval_fraction",
          "must lie in (0,1)");
  require(c.student_opt.lr > 0.0, "student_opt.lr", "must be > 0");
  require(c.student_opt.kind == "adamw", "student_opt.kind", "must be 'adamw'");
  // zero freezes that optimizer's parameter family
  require(c.policy_opt_pi.lr >= 0.0, "policy_opt_pi.lr", "must be >= 0");
  require(c.policy_opt_pi.kind == "adam", "policy_opt_pi.kind", "must be 'adam'");
  require(c.policy_opt_p.lr >= 0.0, "policy_opt_p.lr", "must be >= 0");
  require(c.policy.k >= 1 && c.policy.k <= 4, "policy.k", "must lie in [1,4]");
  require(c.policy.lambda_cat > 0.0, "policy.lambda_cat", "must be > 0");
  require(c.policy.lambda_bern > 0.0, "policy.lambda_bern", "must be > 0");
  require(c.policy.p2_init > 0.0 && c.policy.p2_init < 1.0, "policy.p2_init",
          "must lie in (0,1)");
  require(c.augment.magnitude_levels >= 1, "augment.magnitude_levels", "must be >= 1");
  require(c.augment.crop_scale_min > 0.0 && c.augment.crop_scale_min <= c.augment.crop_scale_max,
          "augment.crop_scale_min", "must lie in (0, crop_scale_max]");
  require(c.augment.crop_scale_max <= 1.0, "augment.crop_scale_max", "must be <= 1");
  require(c.distill.teacher_temp > 0.0 && c.distill.teacher_temp < c.distill.student_temp,
          "distill.teacher_temp", "must satisfy 0 < teacher_temp < student_temp");
  require(c.distill.ema_momentum >= 0.0 && c.distill.ema_momentum < 1.0, "distill.ema_momentum",
          "must lie in [0,1)");
  require(c.distill.out_dim >= 4, "distill.out_dim", "must be >= 4");
  require(c.progressive.num_stages >= 1, "progressive.num_stages", "must be >= 1");
  require(c.progressive.min_size >= 8, "progressive.min_size", "must be >= 8");
  require(c.progressive.min_size <= c.progressive.max_size, "progressive.min_size",
          "must be <= progressive.max_size");
  if (c.encoder == "mlp")
    require(!c.progressive.enabled || c.progressive.min_size == c.progressive.max_size,
            "progressive.enabled", "mlp encoder needs a constant image size");
  if (c.encoder == "tiny-vit") {
    require(c.progressive.max_size % 4 == 0, "progressive.max_size",
            "must be a multiple of the patch size 4");
  }
  for (int k : c.eval.knn_k) require(k > 0, "eval.knn_k", "entries must be > 0");
  require(c.eval.knn_temperature > 0.0, "eval.knn_temperature", "must be > 0");
  for (int n : c.baseline.grid_n) require(n >= 0, "baseline.grid_n", "entries must be >= 0");
  for (int m : c.baseline.grid_m)
    require(m >= 1 && m <= c.augment.magnitude_levels, "baseline.grid_m",
            "entries must be valid magnitude bins");
}

inline RunConfig config_from_json(const json& j) {
  RunConfig c;
  cfgdetail::check_keys(
      j, {"seed", "precision", "steps", "batch_size", "out_dir", "logging_interval",
          "checkpoint_interval", "alpha", "symmetrize", "encoder", "dataset", "student_opt",
          "policy_opt_pi", "policy_opt_p", "policy", "augment", "distill", "progressive", "eval",
          "baseline"},
      "");
  cfgdetail::read(j, "seed", c.seed, "");
  cfgdetail::read(j, "precision", c.precision, "");
  cfgdetail::read(j, "steps", c.steps, "");
  cfgdetail::read(j, "batch_size", c.batch_size, "");
  cfgdetail::read(j, "out_dir", c.out_dir, "");
  cfgdetail::read(j, "logging_interval", c.logging_interval, "");
  cfgdetail::read(j, "checkpoint_interval", c.checkpoint_interval, "");
  cfgdetail::read(j, "alpha", c.alpha, "");
  cfgdetail::read(j, "symmetrize", c.symmetrize, "");
  cfgdetail::read(j, "encoder", c.encoder, "");
  if (j.contains("dataset")) from_json_strict(j.at("dataset"), c.dataset, "dataset");
  if (j.contains("student_opt")) from_json_strict(j.at("student_opt"), c.student_opt, "student_opt");
  if (j.contains("policy_opt_pi"))
    from_json_strict(j.at("policy_opt_pi"), c.policy_opt_pi, "policy_opt_pi");
  if (j.contains("policy_opt_p"))
    from_json_strict(j.at("policy_opt_p"), c.policy_opt_p, "policy_opt_p");
  if (j.contains("policy")) from_json_strict(j.at("policy"), c.policy, "policy");
  if (j.contains("augment")) from_json_strict(j.at("augment"), c.augment, "augment");
  if (j.contains("distill")) from_json_strict(j.at("distill"), c.distill, "distill");
  if (j.contains("progressive")) from_json_strict(j.at("progressive"), c.progressive, "progressive");
  if (j.contains("eval")) from_json_strict(j.at("eval"), c.eval, "eval");
  if (j.contains("baseline")) from_json_strict(j.at("baseline"), c.baseline, "baseline");
  validate(c);
  return c;
}

/// Every field materialized, defaults included: the effective-config echo.
inline json config_to_json(const RunConfig& c) {
  json j;
  j["seed"] = c.seed;
  j["precision"] = c.precision;
  j["steps"] = c.steps;
  j["batch_size"] = c.batch_size;
  j["out_dir"] = c.out_dir;
  j["logging_interval"] = c.logging_interval;
  j["checkpoint_interval"] = c.checkpoint_interval;
  j["alpha"] = c.alpha;
  j["symmetrize"] = c.symmetrize;
  j["encoder"] = c.encoder;
  j["dataset"] = {{"kind", c.dataset.kind},
                  {"num_classes", c.dataset.num_classes},
                  {"samples_per_class", c.dataset.samples_per_class},
                  {"image_size", c.dataset.image_size},
                  {"generator_seed", c.dataset.generator_seed},
                  {"eval_fraction", c.dataset.eval_fraction},
                  {"root", c.dataset.root}};
  j["student_opt"] = {{"kind", c.student_opt.kind},
                      {"lr", c.student_opt.lr},
                      {"beta1", c.student_opt.beta1},
                      {"beta2", c.student_opt.beta2},
                      {"warmup_frac", c.student_opt.warmup_frac},
                      {"weight_decay_start", c.student_opt.weight_decay_start},
                      {"weight_decay_end", c.student_opt.weight_decay_end},
                      {"clip_norm", c.student_opt.clip_norm}};
  j["policy_opt_pi"] = {{"kind", c.policy_opt_pi.kind},
                        {"lr", c.policy_opt_pi.lr},
                        {"beta1", c.policy_opt_pi.beta1},
                        {"beta2", c.policy_opt_pi.beta2},
                        {"decay_knots", c.policy_opt_pi.decay_knots},
                        {"decay_factor", c.policy_opt_pi.decay_factor}};
  j["policy_opt_p"] = {{"kind", c.policy_opt_p.kind},
                       {"lr", c.policy_opt_p.lr},
                       {"beta1", c.policy_opt_p.beta1},
                       {"beta2", c.policy_opt_p.beta2},
                       {"decay_knots", c.policy_opt_p.decay_knots},
                       {"decay_factor", c.policy_opt_p.decay_factor}};
  j["policy"] = {{"k", c.policy.k},
                 {"lambda_cat", c.policy.lambda_cat},
                 {"lambda_bern", c.policy.lambda_bern},
                 {"gumbel_noise", c.policy.gumbel_noise},
                 {"p2_init", c.policy.p2_init},
                 {"grl_scale", c.policy.grl_scale},
                 {"hierarchical", c.policy.hierarchical},
                 {"search_exec_prob", c.policy.search_exec_prob},
                 {"search_weights", c.policy.search_weights},
                 {"shared_generator", c.policy.shared_generator},
                 {"learn", c.policy.learn}};
  json ops = json::array();
  for (const auto& op : c.augment.ops) ops.push_back({{"kind", op.kind}, {"magnitude", op.magnitude}});
  j["augment"] = {{"magnitude_levels", c.augment.magnitude_levels},
                  {"include_geometric", c.augment.include_geometric},
                  {"ops", ops},
                  {"crop_scale_min", c.augment.crop_scale_min},
                  {"crop_scale_max", c.augment.crop_scale_max},
                  {"hflip_prob", c.augment.hflip_prob}};
  j["distill"] = {{"teacher_temp", c.distill.teacher_temp},
                  {"student_temp", c.distill.student_temp},
                  {"center_momentum", c.distill.center_momentum},
                  {"ema_momentum", c.distill.ema_momentum},
                  {"out_dim", c.distill.out_dim}};
  j["progressive"] = {{"enabled", c.progressive.enabled},
                      {"num_stages", c.progressive.num_stages},
                      {"min_size", c.progressive.min_size},
                      {"max_size", c.progressive.max_size}};
  j["eval"] = {{"knn_k", c.eval.knn_k}, {"knn_temperature", c.eval.knn_temperature}};
  j["baseline"] = {{"grid_n", c.baseline.grid_n}, {"grid_m", c.baseline.grid_m}};
  return j;
}

/// Strict load: unknown keys rejected, all defaults materialized. A blank
/// file yields the full-default config.
inline RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigReadError("config: cannot open '" + path + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  std::string text = buf.str();
  if (text.find_first_not_of(" \t\r\n") == std::string::npos) {
    RunConfig c;
    validate(c);
    return c;
  }
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigReadError("config: parse error in '" + path + "': " + e.what());
  }
  return config_from_json(j);
}

inline void save_config(const RunConfig& c, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("config: cannot write '" + path + "'");
  out << config_to_json(c).dump(2) << "\n";
}

}  // namespace autoview
