#include "rdd/tensor.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace rdd {

std::int64_t numel(const Shape& shape) {
  std::int64_t n = 1;
  for (std::int64_t d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << "x";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

Tensor::Tensor(Shape shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  for (std::int64_t d : shape_) {
    if (d < 0) throw std::invalid_argument("tensor: negative dimension in " + shape_str(shape_));
  }
  if (numel(shape_) != static_cast<std::int64_t>(data_.size())) {
    throw std::invalid_argument("tensor: shape " + shape_str(shape_) + " does not match data length " +
                                std::to_string(data_.size()));
  }
}

Tensor Tensor::zeros(Shape shape) {
  std::vector<double> d(static_cast<std::size_t>(numel(shape)), 0.0);
  return Tensor(std::move(shape), std::move(d));
}

Tensor Tensor::full(Shape shape, double value) {
  std::vector<double> d(static_cast<std::size_t>(numel(shape)), value);
  return Tensor(std::move(shape), std::move(d));
}

Tensor Tensor::scalar(double value) { return Tensor(Shape{}, {value}); }

bool Tensor::all_finite() const {
  for (double v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

std::int64_t Tensor::row_width() const {
  if (shape_.empty()) return 1;
  std::int64_t w = 1;
  for (std::size_t i = 1; i < shape_.size(); ++i) w *= shape_[i];
  return w;
}

Tensor Tensor::rows(std::int64_t begin, std::int64_t end) const {
  if (shape_.empty() || begin < 0 || end > shape_[0] || begin > end) {
    throw std::invalid_argument("tensor: invalid row range [" + std::to_string(begin) + ", " +
                                std::to_string(end) + ") for shape " + shape_str(shape_));
  }
  const std::int64_t w = row_width();
  Shape s = shape_;
  s[0] = end - begin;
  std::vector<double> d(data_.begin() + static_cast<std::ptrdiff_t>(begin * w),
                        data_.begin() + static_cast<std::ptrdiff_t>(end * w));
  return Tensor(std::move(s), std::move(d));
}

Tensor Tensor::reshaped(Shape shape) const {
  if (numel(shape) != size()) {
    throw std::invalid_argument("tensor: cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
  }
  return Tensor(std::move(shape), data_);
}

std::uint64_t hash_bytes(const void* data, std::size_t n, std::uint64_t h) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 1099511628211ull;
  }
  return h;
}

std::uint64_t hash_tensor(const Tensor& t, std::uint64_t h) {
  return hash_bytes(t.data(), sizeof(double) * static_cast<std::size_t>(t.size()), h);
}

}  // namespace rdd
