#pragma once
// Dense row-major tensor. Shape is fixed at construction; all arithmetic
// lives in the autodiff layer.

#include <cstddef>
#include <numeric>
#include <string>
#include <vector>

#include "util.hpp"

namespace csr {

template <typename T>
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<int> shape) : shape_(std::move(shape)) {
    data_.assign(count(shape_), T(0));
  }

  Tensor(std::vector<int> shape, std::vector<T> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    if (count(shape_) != data_.size())
      throw ShapeError("tensor: data size does not match shape");
  }

  static Tensor full(std::vector<int> shape, T value) {
    Tensor t(std::move(shape));
    std::fill(t.data_.begin(), t.data_.end(), value);
    return t;
  }

  const std::vector<int>& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int dim(int i) const { return shape_[static_cast<size_t>(i)]; }
  size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }

  T& operator[](size_t i) { return data_[i]; }
  const T& operator[](size_t i) const { return data_[i]; }

  // Rank-2 accessors (row-major).
  T& at(int r, int c) { return data_[static_cast<size_t>(r) * shape_[1] + c]; }
  const T& at(int r, int c) const {
    return data_[static_cast<size_t>(r) * shape_[1] + c];
  }

  int rows() const { return shape_.empty() ? 0 : shape_[0]; }
  int cols() const { return shape_.size() < 2 ? 1 : shape_[1]; }

  void fill(T value) { std::fill(data_.begin(), data_.end(), value); }

  // Same data, different shape; element count must match.
  Tensor reshaped(std::vector<int> shape) const {
    if (count(shape) != data_.size())
      throw ShapeError("tensor: reshape changes element count");
    return Tensor(std::move(shape), data_);
  }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  static std::string shape_str(const std::vector<int>& s) {
    std::string out = "(";
    for (size_t i = 0; i < s.size(); ++i) {
      if (i) out += "x";
      out += std::to_string(s[i]);
    }
    return out + ")";
  }

  std::string shape_str() const { return shape_str(shape_); }

 private:
  static size_t count(const std::vector<int>& shape) {
    size_t n = 1;
    for (int d : shape) {
      if (d < 0) throw ShapeError("tensor: negative dimension");
      n *= static_cast<size_t>(d);
    }
    return shape.empty() ? 0 : n;
  }

  std::vector<int> shape_;
  std::vector<T> data_;
};

}  // namespace csr
