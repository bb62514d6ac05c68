#pragma once

#include <cassert>
#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace oaug {

using Shape = std::vector<int64_t>;

inline int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << "]";
  return os.str();
}

/// Dense row-major tensor of doubles with value semantics.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape) : shape_(std::move(shape)), data_(shape_numel(shape_), 0.0) {}
  Tensor(Shape shape, std::vector<double> values) : shape_(std::move(shape)), data_(std::move(values)) {
    if (static_cast<int64_t>(data_.size()) != shape_numel(shape_))
      throw std::invalid_argument("tensor: data size does not match shape " + shape_str(shape_));
  }

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor full(Shape shape, double v) {
    Tensor t(std::move(shape));
    t.fill(v);
    return t;
  }
  static Tensor scalar(double v) { return Tensor({1}, {v}); }
  static Tensor of(Shape shape, std::initializer_list<double> values) {
    return Tensor(std::move(shape), std::vector<double>(values));
  }

  int ndim() const { return static_cast<int>(shape_.size()); }
  int64_t dim(int i) const { return shape_[static_cast<size_t>(i)]; }
  const Shape& shape() const { return shape_; }
  int64_t numel() const { return static_cast<int64_t>(data_.size()); }
  bool empty() const { return data_.empty(); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  double& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
  double operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

  double& at(int64_t i, int64_t j) { return data_[static_cast<size_t>(i * shape_[1] + j)]; }
  double at(int64_t i, int64_t j) const { return data_[static_cast<size_t>(i * shape_[1] + j)]; }
  double& at(int64_t i, int64_t j, int64_t k) {
    return data_[static_cast<size_t>((i * shape_[1] + j) * shape_[2] + k)];
  }
  double at(int64_t i, int64_t j, int64_t k) const {
    return data_[static_cast<size_t>((i * shape_[1] + j) * shape_[2] + k)];
  }
  double& at(int64_t i, int64_t j, int64_t k, int64_t l) {
    return data_[static_cast<size_t>(((i * shape_[1] + j) * shape_[2] + k) * shape_[3] + l)];
  }
  double at(int64_t i, int64_t j, int64_t k, int64_t l) const {
    return data_[static_cast<size_t>(((i * shape_[1] + j) * shape_[2] + k) * shape_[3] + l)];
  }

  double item() const {
    if (numel() != 1) throw std::logic_error("tensor: item() on non-scalar " + shape_str(shape_));
    return data_[0];
  }

  Tensor reshaped(Shape shape) const {
    if (shape_numel(shape) != numel())
      throw std::invalid_argument("tensor: reshape " + shape_str(shape_) + " -> " + shape_str(shape));
    return Tensor(std::move(shape), data_);
  }

  void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

  /// this += s * other (shapes must match)
  void add_scaled(const Tensor& other, double s) {
    assert(other.numel() == numel());
    const double* o = other.data();
    for (int64_t i = 0; i < numel(); ++i) data_[static_cast<size_t>(i)] += s * o[i];
  }

  void scale_inplace(double s) {
    for (auto& v : data_) v *= s;
  }

  double dot(const Tensor& other) const {
    assert(other.numel() == numel());
    double acc = 0.0;
    for (int64_t i = 0; i < numel(); ++i) acc += data_[static_cast<size_t>(i)] * other[i];
    return acc;
  }

  double norm2() const { return std::sqrt(dot(*this)); }

  double max_abs() const {
    double m = 0.0;
    for (double v : data_) m = std::max(m, std::fabs(v));
    return m;
  }

  bool all_finite() const {
    for (double v : data_)
      if (!std::isfinite(v)) return false;
    return true;
  }

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

 private:
  Shape shape_;
  std::vector<double> data_;
};

/// Dense row-major tensor of 32-bit integers (label masks, class ids).
class IntTensor {
 public:
  IntTensor() = default;
  explicit IntTensor(Shape shape) : shape_(std::move(shape)), data_(shape_numel(shape_), 0) {}
  IntTensor(Shape shape, std::vector<int32_t> values) : shape_(std::move(shape)), data_(std::move(values)) {
    if (static_cast<int64_t>(data_.size()) != shape_numel(shape_))
      throw std::invalid_argument("int tensor: data size does not match shape");
  }

  int ndim() const { return static_cast<int>(shape_.size()); }
  int64_t dim(int i) const { return shape_[static_cast<size_t>(i)]; }
  const Shape& shape() const { return shape_; }
  int64_t numel() const { return static_cast<int64_t>(data_.size()); }
  bool empty() const { return data_.empty(); }

  int32_t* data() { return data_.data(); }
  const int32_t* data() const { return data_.data(); }
  int32_t& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
  int32_t operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

  bool operator==(const IntTensor& other) const { return shape_ == other.shape_ && data_ == other.data_; }

 private:
  Shape shape_;
  std::vector<int32_t> data_;
};

}  // namespace oaug
