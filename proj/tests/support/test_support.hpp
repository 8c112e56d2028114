#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "cdn/autograd.hpp"
#include "cdn/models.hpp"
#include "cdn/tensor.hpp"

namespace cdn::testing {

inline Tensor random_tensor(const Shape& shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor t(shape);
  for (double& v : t.values()) v = u(rng);
  return t;
}

/// Feature map whose (n, c) planes have random offsets and scales, so that
/// every channel std is well above sqrt(eps).
inline Tensor styled_tensor(const Shape& shape, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> offset(-3.0, 3.0), scale(0.5, 2.0);
  std::normal_distribution<double> normal(0.0, 1.0);
  Tensor t(shape);
  const std::size_t plane = shape[2] * shape[3];
  for (std::size_t nc = 0; nc < shape[0] * shape[1]; ++nc) {
    const double a = scale(rng), b = offset(rng);
    for (std::size_t k = 0; k < plane; ++k) t[nc * plane + k] = a * normal(rng) + b;
  }
  return t;
}

/// Population mean and std of one (n, c) plane, computed with plain loops.
struct PlaneStats {
  double mean;
  double std;
};
inline PlaneStats plane_stats(const Tensor& z, std::size_t n, std::size_t c, double eps) {
  const std::size_t h = z.dim(2), w = z.dim(3);
  double s = 0.0;
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) s += z.at(n, c, y, x);
  const double mean = s / static_cast<double>(h * w);
  double v = 0.0;
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) v += (z.at(n, c, y, x) - mean) * (z.at(n, c, y, x) - mean);
  return {mean, std::sqrt(v / static_cast<double>(h * w) + eps)};
}

inline double norm(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

/// ||a - b|| / max(||a||, ||b||), or the absolute gap when both are tiny.
inline double relative_error(const std::vector<double>& a, const std::vector<double>& b) {
  std::vector<double> d(a.size());
  for (std::size_t k = 0; k < a.size(); ++k) d[k] = a[k] - b[k];
  const double scale = std::max(norm(a), norm(b));
  return scale < 1e-10 ? norm(d) : norm(d) / scale;
}

/// Analytic gradient of a scalar graph with respect to `leaves`, flattened.
inline std::vector<double> analytic_gradient(const std::function<ad::Var()>& f, const std::vector<ad::Var>& leaves) {
  for (const ad::Var& l : leaves) l.zero_grad();
  ad::backward(f());
  std::vector<double> g;
  for (const ad::Var& l : leaves) {
    if (l.grad().empty()) g.insert(g.end(), l.value().size(), 0.0);
    else g.insert(g.end(), l.grad().values().begin(), l.grad().values().end());
  }
  return g;
}

/// Central differences of the same scalar, perturbing every leaf element.
inline std::vector<double> numeric_gradient(const std::function<ad::Var()>& f, const std::vector<ad::Var>& leaves,
                                            double h = 1e-6) {
  std::vector<double> g;
  for (const ad::Var& l : leaves) {
    Tensor& v = l.value_mut();
    for (std::size_t e = 0; e < v.size(); ++e) {
      const double x = v[e];
      v[e] = x + h;
      const double up = f().value().item();
      v[e] = x - h;
      const double down = f().value().item();
      v[e] = x;
      g.push_back((up - down) / (2.0 * h));
    }
  }
  return g;
}

inline double gradient_check(const std::function<ad::Var()>& f, const std::vector<ad::Var>& leaves) {
  return relative_error(analytic_gradient(f, leaves), numeric_gradient(f, leaves));
}

/// Smooth two-stage network small enough for element-wise finite differences.
inline EncoderConfig tiny_config() {
  EncoderConfig c;
  c.in_channels = 2;
  c.stage_channels = {3, 4};
  c.image_size = 8;
  c.kernel_size = 3;
  c.activation = Activation::kSilu;
  c.classifier_hidden = 4;
  c.classifier_conv = 3;
  return c;
}

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() / ("cdn_" + tag + "_" + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

}  // namespace cdn::testing
