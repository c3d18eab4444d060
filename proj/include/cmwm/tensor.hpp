#pragma once

#include <cstdint>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "cmwm/common.hpp"

namespace cmwm {

using Shape = std::vector<int>;

inline int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << "]";
  return os.str();
}

/// Dense row-major tensor of scalars. Training runs with T=float; the
/// gradient-verification mode instantiates the same code with T=double.
template <typename T>
struct TensorT {
  Shape shape;
  std::vector<T> data;

  TensorT() = default;
  explicit TensorT(Shape s) : shape(std::move(s)), data(size_t(shape_numel(shape)), T(0)) {}
  TensorT(Shape s, std::vector<T> d) : shape(std::move(s)), data(std::move(d)) {}

  static TensorT zeros(Shape s) { return TensorT(std::move(s)); }
  static TensorT full(Shape s, T v) {
    TensorT t(std::move(s));
    std::fill(t.data.begin(), t.data.end(), v);
    return t;
  }
  static TensorT scalar(T v) { return TensorT({1}, {v}); }

  int64_t size() const { return int64_t(data.size()); }
  int dim(int i) const { return shape[size_t(i)]; }
  int ndim() const { return int(shape.size()); }
  T* ptr() { return data.data(); }
  const T* ptr() const { return data.data(); }
  T& operator[](int64_t i) { return data[size_t(i)]; }
  const T& operator[](int64_t i) const { return data[size_t(i)]; }

  // 2-D convenience accessors (row-major)
  int rows() const { return shape.at(0); }
  int cols() const { return shape.at(1); }
  T& at2(int r, int c) { return data[size_t(r) * size_t(cols()) + size_t(c)]; }
  const T& at2(int r, int c) const { return data[size_t(r) * size_t(cols()) + size_t(c)]; }

  bool same_shape(const TensorT& o) const { return shape == o.shape; }

  bool all_finite() const {
    for (T v : data)
      if (!std::isfinite(double(v))) return false;
    return true;
  }

  template <typename U>
  TensorT<U> cast() const {
    TensorT<U> out;
    out.shape = shape;
    out.data.resize(data.size());
    for (size_t i = 0; i < data.size(); ++i) out.data[i] = U(data[i]);
    return out;
  }
};

using Tensor = TensorT<float>;

template <typename T>
TensorT<T> random_uniform(Rng& rng, Shape s, double lo, double hi) {
  TensorT<T> t(std::move(s));
  for (auto& v : t.data) v = T(rng.uniform(lo, hi));
  return t;
}

template <typename T>
TensorT<T> random_normal(Rng& rng, Shape s, double stddev = 1.0) {
  TensorT<T> t(std::move(s));
  for (auto& v : t.data) v = T(rng.normal() * stddev);
  return t;
}

/// Row-major one-hot matrix [n, width] for integer labels.
template <typename T>
TensorT<T> one_hot_rows(const std::vector<int>& labels, int width) {
  TensorT<T> t({int(labels.size()), width});
  for (size_t r = 0; r < labels.size(); ++r) {
    if (labels[r] < 0 || labels[r] >= width)
      throw InvalidArgument("one_hot_rows: label out of range");
    t.at2(int(r), labels[r]) = T(1);
  }
  return t;
}

}  // namespace cmwm
