#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <vector>

#include "autoview/dataset.hpp"
#include "autoview/encoder.hpp"
#include "autoview/image_ops.hpp"
#include "autoview/optim.hpp"

namespace autoview {

/// Frozen backbone features, one l2-normalized row per sample.
template <typename S>
struct EmbeddingBank {
  Tensor<S> features;  // (n, d)
  std::vector<int> labels;

  int64_t rows() const { return features.shape.empty() ? 0 : features.shape[0]; }
  int64_t dim() const { return features.shape.size() < 2 ? 0 : features.shape[1]; }
};

/// Deterministic feature extraction: resize + center-crop, no policy, no
/// gradients recorded.
template <typename S>
EmbeddingBank<S> extract_embeddings(const Network<S>& net, const Dataset<S>& ds,
                                    const std::vector<int64_t>& indices, int64_t image_size,
                                    int64_t batch = 64) {
  if (indices.empty()) throw ConfigError("extract_embeddings: empty index set");
  EmbeddingBank<S> bank;
  bank.features = Tensor<S>(Shape{static_cast<int64_t>(indices.size()), net.embed_dim()});
  bank.labels.reserve(indices.size());
  for (int64_t i = 0; i < static_cast<int64_t>(indices.size()); ++i)
    bank.labels.push_back(ds.labels[static_cast<size_t>(indices[static_cast<size_t>(i)])]);

  const int64_t d = net.embed_dim();
  for (int64_t start = 0; start < static_cast<int64_t>(indices.size()); start += batch) {
    const int64_t n = std::min<int64_t>(batch, static_cast<int64_t>(indices.size()) - start);
    std::vector<Var<S>> views;
    views.reserve(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i)
      views.push_back(Var<S>::constant(resize_center_crop(
          ds.images[static_cast<size_t>(indices[static_cast<size_t>(start + i)])], image_size)));
    auto feats = l2_normalize_rows(net.embed(stack0(views)));
    std::copy_n(feats.value().ptr(), n * d, bank.features.ptr() + start * d);
  }
  return bank;
}

/// Weighted k-NN on cosine similarity: the top-k neighbours vote with weight
/// exp(sim / temperature); ties break toward the smaller class id.
template <typename S>
double knn_classify(const EmbeddingBank<S>& train, const EmbeddingBank<S>& test, int k,
                    double temperature = 0.07) {
  if (k <= 0) throw ConfigError("knn_classify: k must be > 0");
  if (k > train.rows()) throw ConfigError("knn_classify: k exceeds the train bank size");
  if (temperature <= 0.0) throw ConfigError("knn_classify: temperature must be > 0");
  const int64_t n_train = train.rows(), n_test = test.rows(), d = train.dim();
  int num_classes = 0;
  for (int l : train.labels) num_classes = std::max(num_classes, l + 1);

  int64_t correct = 0;
  std::vector<std::pair<double, int64_t>> sims(static_cast<size_t>(n_train));
  std::vector<double> votes(static_cast<size_t>(num_classes));
  for (int64_t t = 0; t < n_test; ++t) {
    const S* q = test.features.ptr() + t * d;
    for (int64_t r = 0; r < n_train; ++r) {
      const S* p = train.features.ptr() + r * d;
      double dot = 0.0;
      for (int64_t j = 0; j < d; ++j) dot += static_cast<double>(q[j]) * static_cast<double>(p[j]);
      sims[static_cast<size_t>(r)] = {dot, r};
    }
    std::partial_sort(sims.begin(), sims.begin() + k, sims.end(),
                      [](const auto& a, const auto& b) {
                        return a.first != b.first ? a.first > b.first : a.second < b.second;
                      });
    std::fill(votes.begin(), votes.end(), 0.0);
    for (int i = 0; i < k; ++i) {
      const auto& [sim, idx] = sims[static_cast<size_t>(i)];
      votes[static_cast<size_t>(train.labels[static_cast<size_t>(idx)])] +=
          std::exp(sim / temperature);
    }
    int best = 0;
    for (int c = 1; c < num_classes; ++c)
      if (votes[static_cast<size_t>(c)] > votes[static_cast<size_t>(best)]) best = c;
    if (best == test.labels[static_cast<size_t>(t)]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(n_test);
}

struct KnnReport {
  std::map<int, double> per_k;
  int best_k = 0;
  double best_accuracy = 0.0;
};

template <typename S>
KnnReport knn_sweep(const EmbeddingBank<S>& train, const EmbeddingBank<S>& test,
                    const std::vector<int>& ks, double temperature = 0.07) {
  KnnReport rep;
  for (int k : ks) {
    const int kk = std::min<int>(k, static_cast<int>(train.rows()));
    const double acc = knn_classify(train, test, kk, temperature);
    rep.per_k[k] = acc;
    if (acc > rep.best_accuracy) {
      rep.best_accuracy = acc;
      rep.best_k = k;
    }
  }
  return rep;
}

/// Optional linear probe: multinomial logistic regression on the frozen
/// features, plain full-batch Adam.
template <typename S>
double linear_probe(const EmbeddingBank<S>& train, const EmbeddingBank<S>& test,
                    int epochs = 200, double lr = 0.05) {
  int num_classes = 0;
  for (int l : train.labels) num_classes = std::max(num_classes, l + 1);
  const int64_t d = train.dim();
  auto rng = rng_stream(12345, {991});
  auto w = Var<S>::param(Tensor<S>::randn(Shape{d, num_classes}, rng, 0.01), "probe.w");
  auto b = Var<S>::param(Tensor<S>::zeros(Shape{num_classes}), "probe.b");
  ParamRefs<S> params{{"w", &w}, {"b", &b}};
  Adam<S> opt(0.9, 0.999);

  Tensor<S> onehot(Shape{train.rows(), num_classes});
  for (int64_t r = 0; r < train.rows(); ++r)
    onehot[r * num_classes + train.labels[static_cast<size_t>(r)]] = S(1);
  auto x = Var<S>::constant(train.features);
  auto y = Var<S>::constant(onehot);
  for (int e = 0; e < epochs; ++e) {
    auto p = softmax_last(add(matmul(x, w), b));
    auto loss = neg(mean(sum(mul(y, log(p)), -1)));
    backward(loss);
    opt.step(params, lr);
    zero_grads(params);
  }

  auto logits = add(matmul(Var<S>::constant(test.features), w), b);
  int64_t correct = 0;
  for (int64_t r = 0; r < test.rows(); ++r) {
    const S* row = logits.value().ptr() + r * num_classes;
    int best = 0;
    for (int c = 1; c < num_classes; ++c)
      if (row[c] > row[best]) best = c;
    if (best == test.labels[static_cast<size_t>(r)]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(test.rows());
}

}  // namespace autoview
