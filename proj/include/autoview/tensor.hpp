#pragma once

#include <Eigen/Core>
#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "autoview/errors.hpp"
#include "autoview/rng.hpp"

namespace autoview {

using Shape = std::vector<int64_t>;

inline int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "(";
  for (size_t i = 0; i < s.size(); ++i) os << s[i] << (i + 1 < s.size() ? "," : "");
  os << ")";
  return os.str();
}

/// Dense n-dimensional value, row-major contiguous, scalar type selectable
/// per run (float or double).
template <typename S>
struct Tensor {
  using Array = Eigen::Array<S, Eigen::Dynamic, 1>;
  using MatrixRM = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

  Shape shape;
  Array data;

  Tensor() = default;
  explicit Tensor(Shape s) : shape(std::move(s)), data(shape_numel(shape)) { data.setZero(); }
  Tensor(Shape s, S fill) : shape(std::move(s)), data(shape_numel(shape)) { data.setConstant(fill); }
  Tensor(Shape s, std::initializer_list<S> vals) : shape(std::move(s)), data(shape_numel(shape)) {
    if (static_cast<int64_t>(vals.size()) != numel())
      throw ShapeError("Tensor init: value count does not match shape " + shape_str(shape));
    int64_t i = 0;
    for (S v : vals) data[i++] = v;
  }

  int64_t numel() const { return data.size(); }
  int64_t rank() const { return static_cast<int64_t>(shape.size()); }
  int64_t dim(int64_t i) const { return shape[static_cast<size_t>(i >= 0 ? i : rank() + i)]; }

  S* ptr() { return data.data(); }
  const S* ptr() const { return data.data(); }

  S& operator[](int64_t i) { return data[i]; }
  S operator[](int64_t i) const { return data[i]; }

  /// Scalar access for rank-0 / single-element tensors.
  S item() const {
    if (numel() != 1) throw ShapeError("item(): tensor has " + std::to_string(numel()) + " elements");
    return data[0];
  }

  Eigen::Map<MatrixRM> as_matrix(int64_t rows, int64_t cols) {
    return Eigen::Map<MatrixRM>(data.data(), rows, cols);
  }
  Eigen::Map<const MatrixRM> as_matrix(int64_t rows, int64_t cols) const {
    return Eigen::Map<const MatrixRM>(data.data(), rows, cols);
  }

  bool all_finite() const {
    for (int64_t i = 0; i < numel(); ++i)
      if (!std::isfinite(static_cast<double>(data[i]))) return false;
    return true;
  }

  template <typename T>
  Tensor<T> cast() const {
    Tensor<T> out(shape);
    for (int64_t i = 0; i < numel(); ++i) out.data[i] = static_cast<T>(data[i]);
    return out;
  }

  static Tensor zeros(Shape s) { return Tensor(std::move(s)); }
  static Tensor ones(Shape s) { return Tensor(std::move(s), S(1)); }
  static Tensor scalar(S v) { return Tensor(Shape{}, v); }

  static Tensor randn(Shape s, std::mt19937_64& rng, double stddev = 1.0) {
    Tensor t(std::move(s));
    for (int64_t i = 0; i < t.numel(); ++i) t.data[i] = static_cast<S>(gaussian(rng) * stddev);
    return t;
  }
  static Tensor rand(Shape s, std::mt19937_64& rng, double lo = 0.0, double hi = 1.0) {
    Tensor t(std::move(s));
    for (int64_t i = 0; i < t.numel(); ++i) t.data[i] = static_cast<S>(uniform(rng, lo, hi));
    return t;
  }
  static Tensor one_hot(int64_t n, int64_t idx) {
    Tensor t(Shape{n});
    t.data[idx] = S(1);
    return t;
  }
};

template <typename S>
bool same_shape(const Tensor<S>& a, const Tensor<S>& b) {
  return a.shape == b.shape;
}

/// True when `small` matches the trailing dimensions of `big`.
inline bool is_trailing_suffix(const Shape& big, const Shape& small) {
  if (small.size() > big.size()) return false;
  size_t off = big.size() - small.size();
  for (size_t i = 0; i < small.size(); ++i)
    if (big[off + i] != small[i]) return false;
  return true;
}

}  // namespace autoview
