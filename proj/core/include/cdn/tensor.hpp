#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace cdn {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape) noexcept;
std::string shape_string(const Shape& shape);

/// Dense row-major tensor of doubles. Rank 0 is a scalar with one element.
/// Feature maps use (N, C, H, W); per-channel statistics use (N, C).
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> values);

  static Tensor scalar(double v) { return Tensor(Shape{}, std::vector<double>{v}); }
  static Tensor zeros_like(const Tensor& t) { return Tensor(t.shape(), 0.0); }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double* data() noexcept { return data_.data(); }
  const double* data() const noexcept { return data_.data(); }
  std::span<double> values() noexcept { return data_; }
  std::span<const double> values() const noexcept { return data_; }
  const std::vector<double>& storage() const noexcept { return data_; }

  double& operator[](std::size_t i) noexcept { return data_[i]; }
  double operator[](std::size_t i) const noexcept { return data_[i]; }

  double& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) noexcept {
    return data_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
  }
  double at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const noexcept {
    return data_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
  }
  double& at(std::size_t r, std::size_t c) noexcept { return data_[r * shape_[1] + c]; }
  double at(std::size_t r, std::size_t c) const noexcept { return data_[r * shape_[1] + c]; }

  /// Scalar value of a one-element tensor.
  double item() const;

  bool all_finite() const noexcept;
  bool same_shape(const Tensor& other) const noexcept { return shape_ == other.shape_; }

  void fill(double v) noexcept;
  Tensor& operator+=(const Tensor& other);
  Tensor& operator*=(double s) noexcept;

  /// Copies sample range [begin, begin + count) along axis 0.
  Tensor slice_batch(std::size_t begin, std::size_t count) const;
  /// Number of elements per sample (product of all dims but the first).
  std::size_t sample_size() const;

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  Shape shape_;
  std::vector<double> data_;
};

/// Stacks tensors of identical per-sample shape along axis 0.
Tensor concat_batch(const std::vector<Tensor>& parts);

/// Largest absolute elementwise difference; shapes must match.
double max_abs_diff(const Tensor& a, const Tensor& b);

/// Throws InvalidInput unless `t` is a finite rank-4 tensor with all dims >= 1.
void require_feature_map(const Tensor& t, const char* what);

}  // namespace cdn
