#pragma once

#include <cmath>
#include <string>

#include "autoview/autodiff.hpp"
#include "autoview/encoder.hpp"

namespace autoview {

template <typename S>
struct DistillationState {
  Tensor<S> center;  // (D)
  double center_momentum = 0.9;
  double teacher_temp = 0.04;
  double student_temp = 0.1;
  double ema_momentum = 0.996;

  static DistillationState init(int64_t out_dim, double teacher_temp = 0.04,
                                double student_temp = 0.1, double center_momentum = 0.9,
                                double ema_momentum = 0.996) {
    if (!(teacher_temp > 0.0) || !(teacher_temp < student_temp))
      throw ConfigError("distillation: need 0 < teacher_temp < student_temp");
    if (ema_momentum < 0.0 || ema_momentum >= 1.0)
      throw ConfigError("distillation: ema_momentum must lie in [0,1)");
    DistillationState st;
    st.center = Tensor<S>::zeros(Shape{out_dim});
    st.teacher_temp = teacher_temp;
    st.student_temp = student_temp;
    st.center_momentum = center_momentum;
    st.ema_momentum = ema_momentum;
    return st;
  }
};

/// Self-distillation cross-entropy: the first argument becomes the sharpened,
/// centered, gradient-stopped target; the gradient flows through the second
/// argument's logits (and, when those come from the teacher on an augmented
/// view, onward through the pixels into the augmentation path).
template <typename S>
Var<S> h_cross_entropy(const Var<S>& teacher_logits, const Var<S>& student_logits,
                       const DistillationState<S>& st) {
  if (teacher_logits.shape() != student_logits.shape())
    throw ShapeError("h_cross_entropy: logit shapes " + shape_str(teacher_logits.shape()) +
                     " vs " + shape_str(student_logits.shape()));
  auto a = stop_grad(softmax_last(
      mul(sub(teacher_logits, Var<S>::constant(st.center)), 1.0 / st.teacher_temp)));
  auto b = softmax_last(mul(student_logits, 1.0 / st.student_temp));
  return mean(neg(sum(mul(a, log(b)), -1)));
}

template <typename S>
struct LossParts {
  Var<S> total;
  Var<S> h_main;
  Var<S> h_reg;
  Var<S> teacher_v1, teacher_v2;  // retained for the center update
};

/// The adversarial objective: view agreement minus alpha times the
/// self-regularizer. One backward pass trains everything: the student
/// descends the agreement term; the policy parameters sit behind the
/// gradient-reversal layer, so the same pass moves them uphill -- more
/// view disagreement, but only where the teacher still recognizes the
/// augmented image as the clean one.
///
/// The regularizer is computed as h(f1(x), f1(v)): the clean-crop logits form
/// the stop-gradded target and the augmented-view logits sit in the
/// gradient-carrying slot, which is what lets it reach the policy at all.
template <typename S>
LossParts<S> total_loss(const Var<S>& x1, const Var<S>& x2, const Var<S>& v1, const Var<S>& v2,
                        const Network<S>& student, const Network<S>& teacher,
                        const DistillationState<S>& st, double alpha, bool symmetrize = true) {
  if (alpha < 0.0) throw ConfigError("total_loss: alpha must be >= 0");

  auto t_v1 = teacher.forward(v1);
  auto t_v2 = teacher.forward(v2);
  auto s_v2 = student.forward(v2);

  Var<S> h_main;
  if (symmetrize) {
    auto s_v1 = student.forward(v1);
    h_main = mul(add(h_cross_entropy(t_v1, s_v2, st), h_cross_entropy(t_v2, s_v1, st)), 0.5);
  } else {
    h_main = h_cross_entropy(t_v1, s_v2, st);
  }

  auto t_x1 = teacher.forward(x1);
  Var<S> h_reg;
  if (symmetrize) {
    auto t_x2 = teacher.forward(x2);
    h_reg = mul(add(h_cross_entropy(t_x1, t_v1, st), h_cross_entropy(t_x2, t_v2, st)), 0.5);
  } else {
    h_reg = h_cross_entropy(t_x1, t_v1, st);
  }

  LossParts<S> parts;
  parts.h_main = h_main;
  parts.h_reg = h_reg;
  parts.total = sub(h_main, mul(h_reg, alpha));
  parts.teacher_v1 = t_v1;
  parts.teacher_v2 = t_v2;
  return parts;
}

/// theta_t <- m * theta_t + (1-m) * theta_s, elementwise. m = 1 and m = 0 are
/// exact no-op / copy so the contract holds bitwise.
template <typename S>
void ema_update(Network<S>& teacher, Network<S>& student, double m) {
  auto tp = teacher.params();
  auto sp = student.params();
  if (tp.size() != sp.size()) throw ShapeError("ema_update: parameter structure mismatch");
  for (size_t i = 0; i < tp.size(); ++i) {
    Tensor<S>& t = tp[i].second->value();
    const Tensor<S>& s = sp[i].second->value();
    if (t.shape != s.shape)
      throw ShapeError("ema_update: shape mismatch at " + tp[i].first + ": " +
                       shape_str(t.shape) + " vs " + shape_str(s.shape));
    if (m == 1.0) continue;
    if (m == 0.0) {
      t.data = s.data;
      continue;
    }
    t.data = static_cast<S>(m) * t.data + static_cast<S>(1.0 - m) * s.data;
  }
}

/// center <- cm * center + (1-cm) * batch mean of the teacher logits over
/// both views.
template <typename S>
void update_center(DistillationState<S>& st, const Tensor<S>& teacher_logits_v1,
                   const Tensor<S>& teacher_logits_v2) {
  const int64_t d = st.center.numel();
  const int64_t rows1 = teacher_logits_v1.numel() / d;
  const int64_t rows2 = teacher_logits_v2.numel() / d;
  Tensor<S> mean_logits = Tensor<S>::zeros(Shape{d});
  for (int64_t r = 0; r < rows1; ++r)
    for (int64_t i = 0; i < d; ++i) mean_logits[i] += teacher_logits_v1[r * d + i];
  for (int64_t r = 0; r < rows2; ++r)
    for (int64_t i = 0; i < d; ++i) mean_logits[i] += teacher_logits_v2[r * d + i];
  mean_logits.data /= static_cast<S>(rows1 + rows2);
  const S cm = static_cast<S>(st.center_momentum);
  st.center.data = cm * st.center.data + (S(1) - cm) * mean_logits.data;
}

}  // namespace autoview
