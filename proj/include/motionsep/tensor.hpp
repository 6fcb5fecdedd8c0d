#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace motionsep {

using Shape = std::vector<int64_t>;

int64_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// Dense row-major tensor of doubles. All math runs in double internally;
// files store float32 (see save_tensor / load_tensor below).
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor full(Shape shape, double v) { return Tensor(std::move(shape), v); }
  static Tensor from(Shape shape, std::vector<double> data);
  static Tensor scalar(double v) { return from({1}, {v}); }

  const Shape& shape() const { return shape_; }
  int ndim() const { return static_cast<int>(shape_.size()); }
  int64_t size() const { return static_cast<int64_t>(data_.size()); }
  int64_t dim(int i) const { return shape_[static_cast<size_t>(i)]; }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  double& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
  double operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

  // Multi-index access for tests and small-scale code. Count must match ndim.
  double& at(std::initializer_list<int64_t> idx);
  double at(std::initializer_list<int64_t> idx) const;

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }
  bool all_finite() const;

  // Returns a copy with a new shape; element count must be preserved.
  Tensor reshaped(Shape shape) const;

  double min() const;
  double max() const;
  double sum() const;
  double mean() const { return sum() / static_cast<double>(size()); }

 private:
  int64_t flat_index(std::initializer_list<int64_t> idx) const;

  Shape shape_;
  std::vector<double> data_;
};

double max_abs_diff(const Tensor& a, const Tensor& b);
double rel_diff(const Tensor& a, const Tensor& b);  // max|a-b| / (max|b|,eps)
double dot(const Tensor& a, const Tensor& b);
double cosine_similarity(const Tensor& a, const Tensor& b);

// Portable tensor file. Layout (all integers little-endian):
//   bytes  0..15  magic "MOTIONSEP-TENSOR"
//   bytes 16..19  u32 format version (currently 1)
//   bytes 20..27  u64 ndim
//   next 8*ndim   u64 dims
//   rest          float32 payload, row-major
// Values are converted double -> float on save and back on load.
void save_tensor(const std::filesystem::path& path, const Tensor& t);
Tensor load_tensor(const std::filesystem::path& path);

}  // namespace motionsep
