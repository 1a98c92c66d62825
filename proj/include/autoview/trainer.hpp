#pragma once

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "autoview/config.hpp"
#include "autoview/dataset.hpp"
#include "autoview/distill.hpp"
#include "autoview/eval.hpp"
#include "autoview/optim.hpp"
#include "autoview/policy.hpp"
#include "autoview/serialize.hpp"

namespace autoview {

// ---------------------------------------------------------------------------
// progressive stage schedule
// ---------------------------------------------------------------------------

/// Round to the nearest multiple of `m`, ties upward.
inline int64_t round_to_multiple(double v, int64_t m) {
  return static_cast<int64_t>(std::floor(v / static_cast<double>(m) + 0.5)) * m;
}

inline int64_t stage_index(int64_t step, int64_t total_steps, int num_stages) {
  if (num_stages <= 1) return 0;
  int64_t k = step * num_stages / std::max<int64_t>(1, total_steps);
  return std::min<int64_t>(k, num_stages - 1);
}

/// Piecewise-constant image size: stage k of S uses
/// round_to_multiple(min + (max-min) * k/(S-1), patch).
inline int64_t stage_size_at(int64_t step, int64_t total_steps, const ProgressiveConfig& p,
                             int64_t patch) {
  if (!p.enabled || p.num_stages <= 1) return p.max_size;
  const int64_t k = stage_index(step, total_steps, p.num_stages);
  const double raw = static_cast<double>(p.min_size) +
                     (static_cast<double>(p.max_size - p.min_size) * static_cast<double>(k)) /
                         static_cast<double>(p.num_stages - 1);
  return round_to_multiple(raw, patch);
}

// ---------------------------------------------------------------------------
// trainer
// ---------------------------------------------------------------------------

struct StepStats {
  int64_t step = 0;
  double loss = 0.0, h_main = 0.0, h_reg = 0.0;
  double lr_student = 0.0, lr_pi = 0.0, lr_p = 0.0;
  int64_t stage_size = 0;
  double p2 = 0.0;
};

/// How the training views are produced: the learned policy, a RandAug-style
/// uniform control at fixed (N, M), or crop/flip only.
struct ViewMode {
  enum class Kind { Policy, RandAug };
  Kind kind = Kind::Policy;
  int n = 2;
  int m = 1;
};

template <typename S>
class Trainer {
 public:
  RunConfig cfg;
  ViewMode view_mode;
  Dataset<S> data;
  std::vector<AugOpDescriptor> ops;
  Network<S> student, teacher;
  PolicyParams<S> policy;   // view 1 (and view 2 when the generator is shared)
  PolicyParams<S> policy2;  // view 2 when unshared
  DistillationState<S> state;
  Adam<S> opt_student, opt_pi, opt_p;
  int64_t step = 0;
  bool strict_checks = false;  // per-step structural assertions
  StepStats last_stats;

  explicit Trainer(const RunConfig& config, ViewMode mode = {})
      : cfg(config), view_mode(mode) {
    validate(cfg);
    data = load_dataset<S>(cfg.dataset);
    ops = build_operation_set(cfg.op_set_spec());
    auto rng = rng_stream(cfg.seed, {0xA11});
    const EncoderArch arch = cfg.encoder == "tiny-vit" ? EncoderArch::TinyViT : EncoderArch::Mlp;
    student = Network<S>::init(arch, rng, effective_image_size(), cfg.distill.out_dim);
    teacher = Network<S>::init(arch, rng, effective_image_size(), cfg.distill.out_dim);
    copy_params_frozen(teacher, student);
    state = DistillationState<S>::init(cfg.distill.out_dim, cfg.distill.teacher_temp,
                                       cfg.distill.student_temp, cfg.distill.center_momentum,
                                       cfg.distill.ema_momentum);
    init_policy();
    opt_student = Adam<S>(cfg.student_opt.beta1, cfg.student_opt.beta2);
    opt_pi = Adam<S>(cfg.policy_opt_pi.beta1, cfg.policy_opt_pi.beta2);
    opt_p = Adam<S>(cfg.policy_opt_p.beta1, cfg.policy_opt_p.beta2);
  }

  int64_t patch() const { return cfg.encoder == "tiny-vit" ? 4 : 1; }
  int64_t effective_image_size() const { return cfg.progressive.max_size; }
  int64_t current_stage_size() const {
    return stage_size_at(step, cfg.steps, cfg.progressive, patch());
  }
  bool unshared() const { return !cfg.policy.shared_generator; }

  PolicyOptions policy_options() const {
    PolicyOptions o;
    o.num_layers = cfg.policy.k;
    o.hierarchical = cfg.policy.hierarchical;
    o.gumbel_noise = cfg.policy.gumbel_noise;
    o.use_grl = true;
    o.grl_scale = cfg.policy.grl_scale;
    return o;
  }

  ParamRefs<S> policy_pi_params() {
    ParamRefs<S> refs{{"policy.pi", &policy.pi}};
    if (unshared()) refs.push_back({"policy2.pi", &policy2.pi});
    return refs;
  }
  ParamRefs<S> policy_p_params() {
    ParamRefs<S> refs{{"policy.p2_logit", &policy.p2_logit}};
    if (unshared()) refs.push_back({"policy2.p2_logit", &policy2.p2_logit});
    return refs;
  }

  /// One forward-backward step: both parameter families update from the same
  /// traversal, the teacher follows by EMA.
  StepStats step_once() {
    const int64_t size = current_stage_size();
    const auto batch_idx = batch_indices();
    const PolicyOptions popt = policy_options();

    std::vector<Var<S>> x1s, x2s, v1s, v2s;
    x1s.reserve(batch_idx.size());
    for (size_t i = 0; i < batch_idx.size(); ++i) {
      const Tensor<S>& img = data.images[static_cast<size_t>(batch_idx[i])];
      CropParams crop{cfg.augment.crop_scale_min, cfg.augment.crop_scale_max, 3.0 / 4.0,
                      4.0 / 3.0, cfg.augment.hflip_prob};
      auto rng1 = rng_stream(cfg.seed, {0x5a1, static_cast<uint64_t>(step), i, 0});
      auto rng2 = rng_stream(cfg.seed, {0x5a1, static_cast<uint64_t>(step), i, 1});
      Tensor<S> pre1 = random_resized_crop_flip(img, size, crop, rng1);
      Tensor<S> pre2 = random_resized_crop_flip(img, size, crop, rng2);
      x1s.push_back(Var<S>::constant(pre1));
      x2s.push_back(Var<S>::constant(pre2));
      if (view_mode.kind == ViewMode::Kind::RandAug) {
        v1s.push_back(Var<S>::constant(randaug_view(pre1, ops, view_mode.n, view_mode.m, rng1)));
        v2s.push_back(Var<S>::constant(randaug_view(pre2, ops, view_mode.n, view_mode.m, rng2)));
      } else {
        ViewDraws d1 = draw_view(policy, popt, rng1);
        ViewDraws d2 = draw_view(unshared() ? policy2 : policy, popt, rng2);
        auto s1 = build_view(pre1, policy, ops, d1, popt);
        auto s2 = build_view(pre2, unshared() ? policy2 : policy, ops, d2, popt);
        if (strict_checks && popt.hierarchical) {
          if (s1.layers[0].gate.value().item() != S(1) || s2.layers[0].gate.value().item() != S(1))
            throw NumericError("step " + std::to_string(step) + ": layer-1 gate drifted from 1");
        }
        v1s.push_back(s1.view);
        v2s.push_back(s2.view);
      }
    }

    auto x1 = stack0(x1s);
    auto x2 = stack0(x2s);
    auto v1 = stack0(v1s);
    auto v2 = stack0(v2s);
    const double alpha = view_mode.kind == ViewMode::Kind::RandAug ? 0.0 : cfg.alpha;
    auto parts = total_loss(x1, x2, v1, v2, student, teacher, state, alpha, cfg.symmetrize);

    StepStats stats;
    stats.step = step;
    stats.loss = static_cast<double>(parts.total.value().item());
    stats.h_main = static_cast<double>(parts.h_main.value().item());
    stats.h_reg = static_cast<double>(parts.h_reg.value().item());
    stats.stage_size = size;
    stats.p2 = policy.p2();
    if (!std::isfinite(stats.loss))
      throw NumericError("step " + std::to_string(step) + ": non-finite loss");

    backward(parts.total);

    if (strict_checks) {
      for (auto& [name, p] : teacher.params())
        if (p->has_grad())
          throw NumericError("step " + std::to_string(step) + ": teacher gradient at " + name);
    }

    // student update
    auto sparams = student.params();
    stats.lr_student = cosine_warmup_lr(step, cfg.steps, cfg.student_opt.lr,
                                        cfg.student_opt.warmup_frac);
    const double wd = cosine_between(step, cfg.steps, cfg.student_opt.weight_decay_start,
                                     cfg.student_opt.weight_decay_end);
    if (cfg.student_opt.clip_norm > 0.0) clip_global_norm(sparams, cfg.student_opt.clip_norm);
    opt_student.step(sparams, stats.lr_student, wd);
    zero_grads(sparams);

    // policy updates from the same traversal (gradients already GRL-shaped)
    stats.lr_pi = step_decay_lr(step, cfg.steps, cfg.policy_opt_pi.lr,
                                cfg.policy_opt_pi.decay_knots, cfg.policy_opt_pi.decay_factor);
    stats.lr_p = step_decay_lr(step, cfg.steps, cfg.policy_opt_p.lr, cfg.policy_opt_p.decay_knots,
                               cfg.policy_opt_p.decay_factor);
    if (cfg.policy.learn && view_mode.kind == ViewMode::Kind::Policy) {
      if (cfg.policy.search_weights) {
        auto refs = policy_pi_params();
        opt_pi.step(refs, stats.lr_pi);
        zero_grads(refs);
      }
      if (cfg.policy.search_exec_prob) {
        auto refs = policy_p_params();
        opt_p.step(refs, stats.lr_p);
        zero_grads(refs);
      }
    }
    // discard any remaining policy gradients (frozen/search-off variants)
    zero_grads(policy_pi_params());
    zero_grads(policy_p_params());

    ema_update(teacher, student, state.ema_momentum);
    update_center(state, parts.teacher_v1.value(), parts.teacher_v2.value());

    if (strict_checks) {
      const double sum = static_cast<double>(policy.probs().data.sum());
      if (std::abs(sum - 1.0) > 1e-6)
        throw NumericError("step " + std::to_string(step) + ": softmax(pi) sums to " +
                           std::to_string(sum));
    }

    ++step;
    last_stats = stats;
    return stats;
  }

  /// Full run with logging, trajectory dumps, and checkpoints under
  /// cfg.out_dir. Resumable: continues from the current step.
  void run() {
    namespace fs = std::filesystem;
    fs::create_directories(cfg.out_dir);
    save_config(cfg, cfg.out_dir + "/effective_config.json");

    const bool resuming = step > 0;
    std::ofstream metrics(cfg.out_dir + "/metrics.jsonl", resuming ? std::ios::app : std::ios::out);
    std::ofstream traj(cfg.out_dir + "/policy_trajectory.csv",
                       resuming ? std::ios::app : std::ios::out);
    if (!metrics || !traj) throw IoError("trainer: cannot write logs under " + cfg.out_dir);
    if (!resuming) {
      traj << "step";
      for (const auto& d : ops) traj << "," << d.name();
      traj << "\n";
    }

    while (step < cfg.steps) {
      StepStats s = step_once();
      if (s.step % cfg.logging_interval == 0 || step == cfg.steps) {
        log_row(metrics, traj, s);
        metrics.flush();
        traj.flush();
      }
      if (cfg.checkpoint_interval > 0 && step < cfg.steps && step % cfg.checkpoint_interval == 0)
        save_checkpoint(cfg.out_dir + "/checkpoint_step" + std::to_string(step) + ".bin");
    }
    save_checkpoint(cfg.out_dir + "/checkpoint.bin");
  }

  KnnReport evaluate() const {
    auto train_bank =
        extract_embeddings(teacher, data, data.train_indices, effective_image_size());
    auto test_bank = extract_embeddings(teacher, data, data.eval_indices, effective_image_size());
    return knn_sweep(train_bank, test_bank, cfg.eval.knn_k, cfg.eval.knn_temperature);
  }

  // --- checkpointing ---------------------------------------------------------

  void save_checkpoint(const std::string& path) {
    const std::string tmp = path + ".tmp";
    {
      std::ofstream os(tmp, std::ios::binary);
      if (!os) throw IoError("checkpoint: cannot write '" + tmp + "'");
      os << "AVCKPT01";
      ser::put_u8(os, sizeof(S));
      ser::put_u64(os, static_cast<uint64_t>(step));
      ser::put_u64(os, cfg.seed);
      ser::put_string(os, config_to_json(cfg).dump());
      ser::put_tensor(os, state.center);
      ser::put_tensor(os, policy.pi.value());
      ser::put_tensor(os, policy.p2_logit.value());
      ser::put_u8(os, unshared() ? 1 : 0);
      if (unshared()) {
        ser::put_tensor(os, policy2.pi.value());
        ser::put_tensor(os, policy2.p2_logit.value());
      }
      write_params(os, student.params());
      write_params(os, teacher.params());
      write_adam(os, opt_student);
      write_adam(os, opt_pi);
      write_adam(os, opt_p);
      if (!os) throw IoError("checkpoint: write failure on '" + tmp + "'");
    }
    std::filesystem::rename(tmp, path);
  }

  static Trainer load_checkpoint(const std::string& path, ViewMode mode = {}) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("checkpoint: cannot open '" + path + "'");
    char magic[8];
    if (!is.read(magic, 8) || std::string(magic, 8) != "AVCKPT01")
      throw ConfigError("checkpoint: bad magic in '" + path + "'");
    const uint8_t scalar_size = ser::get_u8(is);
    if (scalar_size != sizeof(S))
      throw ConfigError("checkpoint: precision mismatch (file has " +
                        std::to_string(scalar_size * 8) + "-bit scalars)");
    const uint64_t step = ser::get_u64(is);
    const uint64_t seed = ser::get_u64(is);
    RunConfig cfg = config_from_json(json::parse(ser::get_string(is)));
    cfg.seed = seed;
    Trainer t(cfg, mode);
    t.step = static_cast<int64_t>(step);
    t.state.center = ser::get_tensor<S>(is);
    t.policy.pi.value() = ser::get_tensor<S>(is);
    t.policy.p2_logit.value() = ser::get_tensor<S>(is);
    const bool has2 = ser::get_u8(is) != 0;
    if (has2 != t.unshared()) throw ConfigError("checkpoint: generator sharing mismatch");
    if (has2) {
      t.policy2.pi.value() = ser::get_tensor<S>(is);
      t.policy2.p2_logit.value() = ser::get_tensor<S>(is);
    }
    read_params(is, t.student.params());
    read_params(is, t.teacher.params());
    read_adam(is, t.opt_student);
    read_adam(is, t.opt_pi);
    read_adam(is, t.opt_p);
    return t;
  }

  /// Scalar width recorded in a checkpoint header (4 or 8 bytes).
  static int checkpoint_scalar_size(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("checkpoint: cannot open '" + path + "'");
    char magic[8];
    if (!is.read(magic, 8) || std::string(magic, 8) != "AVCKPT01")
      throw ConfigError("checkpoint: bad magic in '" + path + "'");
    return ser::get_u8(is);
  }

 private:
  void init_policy() {
    const int64_t n = static_cast<int64_t>(ops.size());
    policy = PolicyParams<S>::init(n, cfg.policy.p2_init, cfg.policy.lambda_cat,
                                   cfg.policy.lambda_bern);
    const bool pi_grad = cfg.policy.learn && cfg.policy.search_weights;
    const bool p_grad = cfg.policy.learn && cfg.policy.search_exec_prob;
    if (!pi_grad) policy.pi = Var<S>::leaf(policy.pi.value(), false, "policy.pi");
    if (!p_grad) policy.p2_logit = Var<S>::leaf(policy.p2_logit.value(), false, "policy.p2_logit");
    if (unshared()) {
      policy2 = PolicyParams<S>::init(n, cfg.policy.p2_init, cfg.policy.lambda_cat,
                                      cfg.policy.lambda_bern);
      if (!pi_grad) policy2.pi = Var<S>::leaf(policy2.pi.value(), false, "policy2.pi");
      if (!p_grad)
        policy2.p2_logit = Var<S>::leaf(policy2.p2_logit.value(), false, "policy2.p2_logit");
    }
  }

  std::vector<int64_t> batch_indices() const {
    const int64_t n = static_cast<int64_t>(data.train_indices.size());
    std::vector<int64_t> out;
    out.reserve(static_cast<size_t>(cfg.batch_size));
    int64_t cursor = step * cfg.batch_size;
    for (int b = 0; b < cfg.batch_size; ++b, ++cursor) {
      const int64_t epoch = cursor / n;
      if (epoch != cached_epoch_) {
        cached_order_ = epoch_order(data.train_indices, cfg.seed, epoch);
        cached_epoch_ = epoch;
      }
      out.push_back(cached_order_[static_cast<size_t>(cursor % n)]);
    }
    return out;
  }
  mutable int64_t cached_epoch_ = -1;
  mutable std::vector<int64_t> cached_order_;

  void log_row(std::ofstream& metrics, std::ofstream& traj, const StepStats& s) {
    json rec = {{"step", s.step},         {"loss", s.loss},
                {"h1", s.h_main},         {"h_reg", s.h_reg},
                {"lr_student", s.lr_student}, {"lr_pi", s.lr_pi},
                {"lr_p", s.lr_p},         {"stage_size", s.stage_size},
                {"p2", s.p2}};
    metrics << rec.dump() << "\n";
    Tensor<S> p = policy.probs();
    traj << s.step;
    char buf[32];
    for (int64_t i = 0; i < p.numel(); ++i) {
      std::snprintf(buf, sizeof(buf), "%.6g", static_cast<double>(p[i]));
      traj << "," << buf;
    }
    traj << "\n";
  }

  static void write_params(std::ostream& os, const ParamRefs<S>& params) {
    ser::put_u64(os, params.size());
    for (const auto& [name, p] : params) {
      ser::put_string(os, name);
      ser::put_tensor(os, p->value());
    }
  }
  static void read_params(std::istream& is, const ParamRefs<S>& params) {
    const uint64_t n = ser::get_u64(is);
    if (n != params.size()) throw ConfigError("checkpoint: parameter count mismatch");
    for (const auto& [name, p] : params) {
      const std::string got = ser::get_string(is);
      if (got != name)
        throw ConfigError("checkpoint: parameter order mismatch: '" + got + "' vs '" + name + "'");
      Tensor<S> t = ser::get_tensor<S>(is);
      if (t.shape != p->shape()) throw ConfigError("checkpoint: shape mismatch at " + name);
      p->value() = std::move(t);
    }
  }
  static void write_adam(std::ostream& os, const Adam<S>& a) {
    ser::put_u64(os, static_cast<uint64_t>(a.t));
    ser::put_u64(os, a.m.size());
    for (size_t i = 0; i < a.m.size(); ++i) {
      ser::put_tensor(os, a.m[i]);
      ser::put_tensor(os, a.v[i]);
    }
  }
  static void read_adam(std::istream& is, Adam<S>& a) {
    a.t = static_cast<int64_t>(ser::get_u64(is));
    const uint64_t n = ser::get_u64(is);
    a.m.clear();
    a.v.clear();
    for (uint64_t i = 0; i < n; ++i) {
      a.m.push_back(ser::get_tensor<S>(is));
      a.v.push_back(ser::get_tensor<S>(is));
    }
  }
};

// ---------------------------------------------------------------------------
// RandAug grid baseline
// ---------------------------------------------------------------------------

struct BaselineCell {
  int n = 0;
  int m = 1;
  double knn_accuracy = 0.0;
  double final_loss = 0.0;
};

/// One training run per (N, M) grid cell with uniform-random op sampling in
/// the same curated space; the comparison table the learned policy is
/// measured against.
template <typename S>
std::vector<BaselineCell> randaug_grid_baseline(const RunConfig& base_cfg,
                                                const std::string& out_root) {
  std::vector<BaselineCell> table;
  for (int n : base_cfg.baseline.grid_n)
    for (int m : base_cfg.baseline.grid_m) {
      RunConfig cfg = base_cfg;
      cfg.out_dir = out_root + "/randaug_n" + std::to_string(n) + "_m" + std::to_string(m);
      cfg.policy.learn = false;
      ViewMode mode;
      mode.kind = ViewMode::Kind::RandAug;
      mode.n = n;
      mode.m = m;
      Trainer<S> t(cfg, mode);
      t.run();
      BaselineCell cell;
      cell.n = n;
      cell.m = m;
      cell.final_loss = t.last_stats.loss;
      cell.knn_accuracy = t.evaluate().best_accuracy;
      table.push_back(cell);
    }
  return table;
}

}  // namespace autoview
