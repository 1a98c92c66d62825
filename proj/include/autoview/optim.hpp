#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "autoview/autodiff.hpp"
#include "autoview/encoder.hpp"

namespace autoview {

/// Adam with optional decoupled weight decay (AdamW when wd > 0 is passed to
/// step). Moment buffers are created lazily to match the parameter list.
template <typename S>
struct Adam {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  int64_t t = 0;
  std::vector<Tensor<S>> m, v;

  Adam() = default;
  Adam(double b1, double b2) : beta1(b1), beta2(b2) {}

  void ensure_state(const ParamRefs<S>& params) {
    if (!m.empty()) return;
    for (const auto& [name, p] : params) {
      m.push_back(Tensor<S>::zeros(p->shape()));
      v.push_back(Tensor<S>::zeros(p->shape()));
    }
  }

  /// One update; gradients are consumed as-is and zeroed by the caller.
  void step(const ParamRefs<S>& params, double lr, double weight_decay = 0.0) {
    ensure_state(params);
    ++t;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
    for (size_t i = 0; i < params.size(); ++i) {
      Var<S>& p = *params[i].second;
      if (!p.has_grad()) continue;
      const Tensor<S>& g = p.grad();
      Tensor<S>& mi = m[i];
      Tensor<S>& vi = v[i];
      Tensor<S>& w = p.value();
      const S b1 = static_cast<S>(beta1), b2 = static_cast<S>(beta2);
      for (int64_t j = 0; j < g.numel(); ++j) {
        mi[j] = b1 * mi[j] + (S(1) - b1) * g[j];
        vi[j] = b2 * vi[j] + (S(1) - b2) * g[j] * g[j];
        const double mhat = static_cast<double>(mi[j]) / bc1;
        const double vhat = static_cast<double>(vi[j]) / bc2;
        double upd = lr * mhat / (std::sqrt(vhat) + eps);
        if (weight_decay > 0.0) upd += lr * weight_decay * static_cast<double>(w[j]);
        w[j] -= static_cast<S>(upd);
      }
    }
  }
};

template <typename S>
void zero_grads(const ParamRefs<S>& params) {
  for (const auto& [name, p] : params) p->zero_grad();
}

/// Scale all gradients so the global norm does not exceed max_norm.
/// Returns the pre-clip norm.
template <typename S>
double clip_global_norm(const ParamRefs<S>& params, double max_norm) {
  double sq = 0.0;
  for (const auto& [name, p] : params) {
    if (!p->has_grad()) continue;
    const Tensor<S>& g = p->grad();
    for (int64_t j = 0; j < g.numel(); ++j) sq += static_cast<double>(g[j]) * static_cast<double>(g[j]);
  }
  const double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0.0) {
    const S scale = static_cast<S>(max_norm / norm);
    for (const auto& [name, p] : params) {
      if (!p->has_grad()) continue;
      const_cast<Tensor<S>&>(p->grad()).data *= scale;
    }
  }
  return norm;
}

// --- schedules ---------------------------------------------------------------

/// Linear warmup over the first warmup_frac of training, cosine decay to ~0
/// afterwards.
inline double cosine_warmup_lr(int64_t step, int64_t total_steps, double base,
                               double warmup_frac) {
  const double warmup = warmup_frac * static_cast<double>(total_steps);
  if (warmup > 0.0 && static_cast<double>(step) < warmup)
    return base * (static_cast<double>(step) + 1.0) / warmup;
  const double progress =
      (static_cast<double>(step) - warmup) / std::max(1.0, static_cast<double>(total_steps) - warmup);
  return base * 0.5 * (1.0 + std::cos(M_PI * std::min(1.0, progress)));
}

/// Cosine ramp between two endpoints (weight-decay schedule).
inline double cosine_between(int64_t step, int64_t total_steps, double start, double end) {
  const double progress = static_cast<double>(step) / std::max<int64_t>(1, total_steps - 1);
  return end + 0.5 * (start - end) * (1.0 + std::cos(M_PI * std::min(1.0, progress)));
}

/// Step decay: multiply by `factor` at each knot (fractions of the run).
inline double step_decay_lr(int64_t step, int64_t total_steps, double base,
                            const std::vector<double>& knots, double factor) {
  double lr = base;
  for (double k : knots)
    if (static_cast<double>(step) >= k * static_cast<double>(total_steps)) lr *= factor;
  return lr;
}

}  // namespace autoview
