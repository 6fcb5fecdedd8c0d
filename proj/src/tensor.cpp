#include "motionsep/tensor.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>

#include "motionsep/errors.hpp"

namespace motionsep {

static_assert(std::endian::native == std::endian::little,
              "tensor file IO assumes a little-endian host");

int64_t shape_numel(const Shape& shape) {
  int64_t n = 1;
  for (int64_t d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ')';
  return os.str();
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)) {
  for (int64_t d : shape_) {
    if (d <= 0) throw ShapeError("tensor dims must be positive, got " + shape_str(shape_));
  }
  data_.assign(static_cast<size_t>(shape_numel(shape_)), fill);
}

Tensor Tensor::from(Shape shape, std::vector<double> data) {
  Tensor t;
  if (shape_numel(shape) != static_cast<int64_t>(data.size())) {
    throw ShapeError("data length " + std::to_string(data.size()) +
                     " does not match shape " + shape_str(shape));
  }
  t.shape_ = std::move(shape);
  t.data_ = std::move(data);
  return t;
}

int64_t Tensor::flat_index(std::initializer_list<int64_t> idx) const {
  if (static_cast<int>(idx.size()) != ndim()) {
    throw ShapeError("index rank " + std::to_string(idx.size()) +
                     " does not match tensor rank " + std::to_string(ndim()));
  }
  int64_t flat = 0;
  int axis = 0;
  for (int64_t i : idx) {
    const int64_t d = shape_[static_cast<size_t>(axis)];
    if (i < 0 || i >= d) {
      throw ShapeError("index " + std::to_string(i) + " out of range for axis " +
                       std::to_string(axis) + " of " + shape_str(shape_));
    }
    flat = flat * d + i;
    ++axis;
  }
  return flat;
}

double& Tensor::at(std::initializer_list<int64_t> idx) {
  return data_[static_cast<size_t>(flat_index(idx))];
}

double Tensor::at(std::initializer_list<int64_t> idx) const {
  return data_[static_cast<size_t>(flat_index(idx))];
}

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

Tensor Tensor::reshaped(Shape shape) const {
  if (shape_numel(shape) != size()) {
    throw ShapeError("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
  }
  Tensor t = *this;
  t.shape_ = std::move(shape);
  return t;
}

double Tensor::min() const { return *std::min_element(data_.begin(), data_.end()); }
double Tensor::max() const { return *std::max_element(data_.begin(), data_.end()); }
double Tensor::sum() const { return std::accumulate(data_.begin(), data_.end(), 0.0); }

double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) {
    throw ShapeError("max_abs_diff shape mismatch: " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
  double m = 0.0;
  for (int64_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

double rel_diff(const Tensor& a, const Tensor& b) {
  double scale = 1e-12;
  for (int64_t i = 0; i < b.size(); ++i) scale = std::max(scale, std::abs(b[i]));
  return max_abs_diff(a, b) / scale;
}

double dot(const Tensor& a, const Tensor& b) {
  if (a.size() != b.size()) {
    throw ShapeError("dot length mismatch: " + std::to_string(a.size()) + " vs " +
                     std::to_string(b.size()));
  }
  double s = 0.0;
  for (int64_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double cosine_similarity(const Tensor& a, const Tensor& b) {
  const double num = dot(a, b);
  const double na = std::sqrt(dot(a, a));
  const double nb = std::sqrt(dot(b, b));
  if (na < 1e-300 || nb < 1e-300) return 0.0;
  return num / (na * nb);
}

namespace {

constexpr char kTensorMagic[16] = {'M', 'O', 'T', 'I', 'O', 'N', 'S', 'E',
                                   'P', '-', 'T', 'E', 'N', 'S', 'O', 'R'};
constexpr uint32_t kTensorVersion = 1;

template <typename T>
void write_pod(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is, const std::filesystem::path& path) {
  T v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(T))) {
    throw FileFormatError("truncated tensor file: " + path.string());
  }
  return v;
}

}  // namespace

void save_tensor(const std::filesystem::path& path, const Tensor& t) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DependencyError("cannot open for writing: " + path.string());
  os.write(kTensorMagic, sizeof(kTensorMagic));
  write_pod<uint32_t>(os, kTensorVersion);
  write_pod<uint64_t>(os, static_cast<uint64_t>(t.ndim()));
  for (int64_t d : t.shape()) write_pod<uint64_t>(os, static_cast<uint64_t>(d));
  std::vector<float> payload(static_cast<size_t>(t.size()));
  for (int64_t i = 0; i < t.size(); ++i) payload[static_cast<size_t>(i)] = static_cast<float>(t[i]);
  os.write(reinterpret_cast<const char*>(payload.data()),
           static_cast<std::streamsize>(payload.size() * sizeof(float)));
  if (!os) throw DependencyError("short write to " + path.string());
}

Tensor load_tensor(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DependencyError("missing tensor file: " + path.string());
  char magic[16];
  if (!is.read(magic, sizeof(magic)) || std::memcmp(magic, kTensorMagic, sizeof(magic)) != 0) {
    throw FileFormatError("bad magic in tensor file: " + path.string());
  }
  const auto version = read_pod<uint32_t>(is, path);
  if (version != kTensorVersion) {
    throw FileFormatError("unsupported tensor file version " + std::to_string(version) + ": " +
                          path.string());
  }
  const auto ndim = read_pod<uint64_t>(is, path);
  if (ndim > 16) throw FileFormatError("implausible rank in tensor file: " + path.string());
  Shape shape(ndim);
  for (auto& d : shape) {
    d = static_cast<int64_t>(read_pod<uint64_t>(is, path));
    if (d <= 0) throw FileFormatError("non-positive dim in tensor file: " + path.string());
  }
  const int64_t n = shape_numel(shape);
  std::vector<float> payload(static_cast<size_t>(n));
  if (!is.read(reinterpret_cast<char*>(payload.data()),
               static_cast<std::streamsize>(payload.size() * sizeof(float)))) {
    throw FileFormatError("truncated tensor payload: " + path.string());
  }
  std::vector<double> data(payload.begin(), payload.end());
  return Tensor::from(std::move(shape), std::move(data));
}

}  // namespace motionsep
