#pragma once

#include <cmath>
#include <cstdint>
#include <sstream>
#include <string>
#include <vector>

#include "autoview/autodiff.hpp"
#include "autoview/image_ops.hpp"
#include "autoview/op_set.hpp"
#include "autoview/rng.hpp"

namespace autoview {

/// Numerically-shifted softmax on raw values.
template <typename S>
Tensor<S> softmax_values(const Tensor<S>& logits) {
  Tensor<S> p(logits.shape);
  S m = logits[0];
  for (int64_t i = 1; i < logits.numel(); ++i) m = std::max(m, logits[i]);
  S z = S(0);
  for (int64_t i = 0; i < logits.numel(); ++i) {
    p[i] = std::exp(logits[i] - m);
    z += p[i];
  }
  p.data /= z;
  return p;
}

/// Learnable policy state: sampling logits (one per expanded operation,
/// shared across layers and views) and the layer-2 execution probability,
/// stored as an unconstrained logit.
template <typename S>
struct PolicyParams {
  Var<S> pi;
  Var<S> p2_logit;
  double lambda_cat = 1.0;
  double lambda_bern = 0.5;

  static PolicyParams init(int64_t n_ops, double p2_init = 0.5, double lambda_cat = 1.0,
                           double lambda_bern = 0.5) {
    PolicyParams p;
    p.pi = Var<S>::param(Tensor<S>::zeros(Shape{n_ops}), "policy.pi");
    const double logit = std::log(p2_init / (1.0 - p2_init));
    p.p2_logit = Var<S>::param(Tensor<S>::scalar(static_cast<S>(logit)), "policy.p2_logit");
    p.lambda_cat = lambda_cat;
    p.lambda_bern = lambda_bern;
    return p;
  }

  int64_t n_ops() const { return pi.numel(); }

  /// Current sampling distribution softmax(pi), value level.
  Tensor<S> probs() const { return softmax_values(pi.value()); }

  double p2() const {
    const double x = static_cast<double>(p2_logit.value().item());
    return 1.0 / (1.0 + std::exp(-x));
  }
};

struct PolicyOptions {
  int num_layers = 2;        // K
  bool hierarchical = true;  // false: one gate around the whole op sequence
  bool gumbel_noise = false;
  bool use_grl = true;
  double grl_scale = 1.0;
};

// ---------------------------------------------------------------------------
// sampling
// ---------------------------------------------------------------------------

/// Inverse-CDF draw from an explicit probability vector.
template <typename S>
int64_t sample_index(const Tensor<S>& probs, std::mt19937_64& rng) {
  const double u = u01(rng);
  double acc = 0.0;
  for (int64_t i = 0; i < probs.numel(); ++i) {
    acc += static_cast<double>(probs[i]);
    if (u < acc) return i;
  }
  return probs.numel() - 1;
}

/// Categorical draw from softmax(pi) with a straight-through backward:
/// forward value is exactly one-hot, backward follows softmax(pi/lambda).
template <typename S>
std::pair<int64_t, Var<S>> sample_operation(const Var<S>& pi, double lambda_cat,
                                            std::mt19937_64& rng) {
  const int64_t idx = sample_index(softmax_values(pi.value()), rng);
  auto soft = softmax_last(mul(pi, 1.0 / lambda_cat));
  return {idx, straight_through(Tensor<S>::one_hot(pi.numel(), idx), soft)};
}

/// The relaxed-Bernoulli gate value for a given uniform draw, value level.
inline double rebern_value(double p, double lambda, double u) {
  const double z = (std::log(p / (1.0 - p)) + std::log(u / (1.0 - u))) / lambda;
  return 1.0 / (1.0 + std::exp(-z));
}

/// Differentiable relaxed-Bernoulli gate built from the execution-probability
/// logit. The probability is clamped to [1e-4, 1-1e-4] before use.
template <typename S>
Var<S> relaxed_bernoulli(const Var<S>& p_logit, double lambda, double u) {
  auto p = clamp(sigmoid(p_logit), 1e-4, 1.0 - 1e-4);
  auto logit_p = sub(log(p), log(sub(1.0, p)));
  const double logit_u = std::log(u / (1.0 - u));
  return sigmoid(mul(add(logit_p, logit_u), 1.0 / lambda));
}

// ---------------------------------------------------------------------------
// view generation
// ---------------------------------------------------------------------------

/// Everything random that one view consumed; replaying it reconstructs the
/// identical graph so finite differences can perturb parameters alone.
struct ViewDraws {
  struct Layer {
    int64_t op_index = 0;
    double u_gate = 0.5;               // uniform behind the relaxed gate
    std::vector<double> gumbel;        // optional logit noise
  };
  std::vector<Layer> layers;
};

template <typename S>
struct LayerSample {
  int64_t op_index = 0;
  Var<S> c_tilde;  // straight-through selection vector, forward one-hot
  Var<S> gate;     // b_k; constant 1 for the first layer
  double u_gate = 0.0;
};

template <typename S>
struct ViewSample {
  std::vector<LayerSample<S>> layers;
  Var<S> whole_policy_gate;  // only set when hierarchical sampling is off
  Var<S> view;
};

template <typename S>
ViewDraws draw_view(const PolicyParams<S>& params, const PolicyOptions& opt,
                    std::mt19937_64& rng) {
  ViewDraws d;
  d.layers.resize(static_cast<size_t>(opt.num_layers));
  for (auto& layer : d.layers) {
    if (opt.gumbel_noise) {
      layer.gumbel.resize(static_cast<size_t>(params.n_ops()));
      Tensor<S> noisy = params.pi.value();
      for (size_t i = 0; i < layer.gumbel.size(); ++i) {
        layer.gumbel[i] = -std::log(-std::log(u_open(rng)));
        noisy[static_cast<int64_t>(i)] += static_cast<S>(layer.gumbel[i]);
      }
      int64_t best = 0;
      for (int64_t i = 1; i < noisy.numel(); ++i)
        if (noisy[i] > noisy[best]) best = i;
      layer.op_index = best;
    } else {
      layer.op_index = sample_index(params.probs(), rng);
    }
    layer.u_gate = u_open(rng);
  }
  return d;
}

/// Build one augmented view from recorded draws. The policy-differentiable
/// quantities (selection vectors and gates) go through the gradient-reversal
/// layer before entering the blend, so a single backward pass trains the
/// encoder by descent and the policy by ascent.
template <typename S>
ViewSample<S> build_view(const Tensor<S>& x_pre, const PolicyParams<S>& params,
                         const std::vector<AugOpDescriptor>& ops, const ViewDraws& draws,
                         const PolicyOptions& opt) {
  if (ops.empty()) throw ConfigError("build_view: empty operation set");
  ViewSample<S> out;
  auto y = Var<S>::constant(x_pre);

  auto selection = [&](const ViewDraws::Layer& d) {
    Var<S> logits = params.pi;
    if (!d.gumbel.empty()) {
      Tensor<S> g(Shape{params.n_ops()});
      for (int64_t i = 0; i < g.numel(); ++i) g[i] = static_cast<S>(d.gumbel[static_cast<size_t>(i)]);
      logits = add(logits, Var<S>::constant(g));
    }
    auto soft = softmax_last(mul(logits, 1.0 / params.lambda_cat));
    auto ct = straight_through(Tensor<S>::one_hot(params.n_ops(), d.op_index), soft);
    if (opt.use_grl) ct = grad_reverse(ct, opt.grl_scale);
    return ct;
  };
  auto gate_for = [&](double u) {
    auto b = relaxed_bernoulli(params.p2_logit, params.lambda_bern, u);
    if (opt.use_grl) b = grad_reverse(b, opt.grl_scale);
    return b;
  };

  if (opt.hierarchical) {
    for (size_t k = 0; k < draws.layers.size(); ++k) {
      const auto& d = draws.layers[k];
      auto ct = selection(d);
      auto applied = mul(apply_kernel(ops[static_cast<size_t>(d.op_index)], y), select(ct, 0, d.op_index));
      LayerSample<S> ls;
      ls.op_index = d.op_index;
      ls.c_tilde = ct;
      ls.u_gate = d.u_gate;
      if (k == 0) {
        // first layer always executes
        ls.gate = Var<S>::scalar(1.0);
        y = applied;
      } else {
        auto b = gate_for(d.u_gate);
        ls.gate = b;
        y = add(mul(b, applied), mul(sub(1.0, b), y));
      }
      out.layers.push_back(std::move(ls));
    }
  } else {
    // ablation: sample and gate the whole policy at once
    auto x0 = y;
    for (const auto& d : draws.layers) {
      auto ct = selection(d);
      y = mul(apply_kernel(ops[static_cast<size_t>(d.op_index)], y), select(ct, 0, d.op_index));
      LayerSample<S> ls;
      ls.op_index = d.op_index;
      ls.c_tilde = ct;
      ls.gate = Var<S>::scalar(1.0);
      ls.u_gate = d.u_gate;
      out.layers.push_back(std::move(ls));
    }
    auto b = gate_for(draws.layers.front().u_gate);
    out.whole_policy_gate = b;
    y = add(mul(b, y), mul(sub(1.0, b), x0));
  }
  out.view = y;
  return out;
}

/// Production path: independent draws for each view, shared parameters.
template <typename S>
std::pair<ViewSample<S>, ViewSample<S>> generate_views(const Tensor<S>& x_pre1,
                                                       const Tensor<S>& x_pre2,
                                                       const PolicyParams<S>& params,
                                                       const std::vector<AugOpDescriptor>& ops,
                                                       const PolicyOptions& opt,
                                                       std::mt19937_64& rng) {
  ViewDraws d1 = draw_view(params, opt, rng);
  ViewDraws d2 = draw_view(params, opt, rng);
  return {build_view(x_pre1, params, ops, d1, opt), build_view(x_pre2, params, ops, d2, opt)};
}

// ---------------------------------------------------------------------------
// inference-time hardening
// ---------------------------------------------------------------------------

/// Same pipeline with a hard Bernoulli gate and no gradient bookkeeping;
/// used for baseline comparisons and final-policy replay.
template <typename S>
Tensor<S> eval_mode_view(const Tensor<S>& x_pre, const Tensor<S>& probs, double p2,
                         const std::vector<AugOpDescriptor>& ops, int num_layers,
                         std::mt19937_64& rng) {
  if (ops.empty()) throw ConfigError("eval_mode_view: empty operation set");
  Tensor<S> y = x_pre;
  for (int k = 0; k < num_layers; ++k) {
    const int64_t idx = sample_index(probs, rng);
    const bool execute = (k == 0) || (u01(rng) < p2);
    if (execute)
      y = apply_kernel(ops[static_cast<size_t>(idx)], Var<S>::constant(y)).value();
  }
  return y;
}

/// RandAug-style control: N uniformly-sampled ops at a fixed magnitude bin,
/// every op applied, inside the same curated space.
template <typename S>
Tensor<S> randaug_view(const Tensor<S>& x_pre, const std::vector<AugOpDescriptor>& full_set,
                       int n_ops, int magnitude_bin, std::mt19937_64& rng) {
  std::vector<AugOpDescriptor> bin_set;
  for (const auto& d : full_set)
    if (!d.has_magnitude() || d.level == magnitude_bin) bin_set.push_back(d);
  if (bin_set.empty()) throw ConfigError("randaug_view: magnitude bin selects no operations");
  Tensor<S> y = x_pre;
  for (int k = 0; k < n_ops; ++k) {
    const int64_t idx = randint(rng, static_cast<int64_t>(bin_set.size()));
    y = apply_kernel(bin_set[static_cast<size_t>(idx)], Var<S>::constant(y)).value();
  }
  return y;
}

// ---------------------------------------------------------------------------
// export format
// ---------------------------------------------------------------------------

struct ExportedPolicy {
  std::vector<AugOpDescriptor> ops;
  std::vector<double> probs;
  double p2 = 0.5;
  double lambda_cat = 1.0;
  double lambda_bern = 0.5;
};

template <typename S>
std::string export_policy_text(const PolicyParams<S>& params,
                               const std::vector<AugOpDescriptor>& ops) {
  std::ostringstream os;
  os.precision(17);
  os << "autoview-policy v1\n";
  os << "lambda_cat " << params.lambda_cat << "\n";
  os << "lambda_bern " << params.lambda_bern << "\n";
  os << "p2 " << params.p2() << "\n";
  Tensor<S> p = params.probs();
  for (size_t i = 0; i < ops.size(); ++i)
    os << "op " << kind_name(ops[i].kind) << " " << ops[i].level << " " << ops[i].magnitude << " "
       << static_cast<double>(p[static_cast<int64_t>(i)]) << "\n";
  return os.str();
}

inline ExportedPolicy import_policy_text(const std::string& text) {
  std::istringstream is(text);
  std::string line;
  if (!std::getline(is, line) || line != "autoview-policy v1")
    throw ConfigError("policy import: bad header '" + line + "'");
  ExportedPolicy out;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string tag;
    ls >> tag;
    if (tag == "lambda_cat") ls >> out.lambda_cat;
    else if (tag == "lambda_bern") ls >> out.lambda_bern;
    else if (tag == "p2") ls >> out.p2;
    else if (tag == "op") {
      std::string kind;
      AugOpDescriptor d;
      double prob;
      ls >> kind >> d.level >> d.magnitude >> prob;
      if (!kind_from_name(kind, d.kind))
        throw ConfigError("policy import: unknown kind '" + kind + "'");
      out.ops.push_back(d);
      out.probs.push_back(prob);
    } else {
      throw ConfigError("policy import: unknown line '" + line + "'");
    }
    if (!ls && !ls.eof()) throw ConfigError("policy import: malformed line '" + line + "'");
  }
  if (out.ops.empty()) throw ConfigError("policy import: no operations");
  return out;
}

}  // namespace autoview
