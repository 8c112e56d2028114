#include "cdn/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <sstream>

#include "cdn/errors.hpp"

namespace cdn {

std::size_t shape_size(const Shape& shape) noexcept {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ')';
  return os.str();
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)), data_(shape_size(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> values) : shape_(std::move(shape)), data_(std::move(values)) {
  if (data_.size() != shape_size(shape_)) {
    throw InvalidInput("tensor of shape " + shape_string(shape_) + " given " +
                       std::to_string(data_.size()) + " values");
  }
}

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= shape_.size()) {
    throw InvalidInput("axis " + std::to_string(axis) + " out of range for shape " + shape_string(shape_));
  }
  return shape_[axis];
}

double Tensor::item() const {
  if (data_.size() != 1) throw InvalidInput("item() on tensor of shape " + shape_string(shape_));
  return data_[0];
}

bool Tensor::all_finite() const noexcept {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

void Tensor::fill(double v) noexcept { std::fill(data_.begin(), data_.end(), v); }

Tensor& Tensor::operator+=(const Tensor& other) {
  if (data_.size() != other.data_.size()) {
    throw InvalidInput("shape mismatch in +=: " + shape_string(shape_) + " vs " + shape_string(other.shape_));
  }
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
  return *this;
}

Tensor& Tensor::operator*=(double s) noexcept {
  for (double& v : data_) v *= s;
  return *this;
}

std::size_t Tensor::sample_size() const {
  if (shape_.empty() || shape_[0] == 0) return 0;
  return data_.size() / shape_[0];
}

Tensor Tensor::slice_batch(std::size_t begin, std::size_t count) const {
  if (shape_.empty() || begin + count > shape_[0]) {
    throw InvalidInput("slice_batch out of range for shape " + shape_string(shape_));
  }
  Shape s = shape_;
  s[0] = count;
  const std::size_t per = sample_size();
  std::vector<double> v(data_.begin() + static_cast<std::ptrdiff_t>(begin * per),
                        data_.begin() + static_cast<std::ptrdiff_t>((begin + count) * per));
  return Tensor(std::move(s), std::move(v));
}

Tensor concat_batch(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw InvalidInput("concat_batch of nothing");
  Shape s = parts.front().shape();
  if (s.empty()) throw InvalidInput("concat_batch of scalars");
  std::size_t n = 0;
  for (const Tensor& p : parts) {
    if (p.rank() != s.size() || !std::equal(s.begin() + 1, s.end(), p.shape().begin() + 1)) {
      throw InvalidInput("concat_batch shape mismatch: " + shape_string(s) + " vs " + shape_string(p.shape()));
    }
    n += p.dim(0);
  }
  s[0] = n;
  std::vector<double> v;
  v.reserve(shape_size(s));
  for (const Tensor& p : parts) v.insert(v.end(), p.storage().begin(), p.storage().end());
  return Tensor(std::move(s), std::move(v));
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) {
    throw InvalidInput("max_abs_diff shape mismatch: " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  }
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

void require_feature_map(const Tensor& t, const char* what) {
  if (t.rank() != 4) {
    throw InvalidInput(std::string(what) + ": expected (N, C, H, W), got " + shape_string(t.shape()));
  }
  for (std::size_t d : t.shape()) {
    if (d == 0) throw InvalidInput(std::string(what) + ": empty dimension in " + shape_string(t.shape()));
  }
  if (!t.all_finite()) throw InvalidInput(std::string(what) + ": non-finite value");
}

}  // namespace cdn
