#include "spotfast/tensor.hpp"

#include <cstring>
#include <sstream>

#include "spotfast/error.hpp"

namespace spotfast {

std::int64_t numel(const Shape& shape) {
  std::int64_t n = 1;
  for (auto d : shape) {
    require(d >= 0, "negative dimension in shape " + shape_str(shape));
    n *= d;
  }
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape, double fill)
    : shape_(std::move(shape)),
      data_(static_cast<std::size_t>(spotfast::numel(shape_)), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  require(static_cast<std::int64_t>(data_.size()) == spotfast::numel(shape_),
          "tensor data size does not match shape " + shape_str(shape_));
}

std::int64_t Tensor::dim(int axis) const {
  const int r = rank();
  if (axis < 0) axis += r;
  require(axis >= 0 && axis < r, "axis out of range for shape " + shape_str(shape_));
  return shape_[static_cast<std::size_t>(axis)];
}

Tensor Tensor::reshaped(Shape shape) const {
  require(spotfast::numel(shape) == numel(),
          "cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
  return Tensor(std::move(shape), data_);
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

Tensor Tensor::randn(Shape shape, std::mt19937_64& rng, double stddev) {
  Tensor t(std::move(shape));
  std::normal_distribution<double> dist(0.0, stddev);
  for (auto& v : t.data_) v = dist(rng);
  return t;
}

Tensor Tensor::uniform(Shape shape, std::mt19937_64& rng, double lo, double hi) {
  Tensor t(std::move(shape));
  std::uniform_real_distribution<double> dist(lo, hi);
  for (auto& v : t.data_) v = dist(rng);
  return t;
}

bool same_shape(const Tensor& a, const Tensor& b) { return a.shape() == b.shape(); }

bool bit_identical(const Tensor& a, const Tensor& b) {
  if (!same_shape(a, b)) return false;
  return a.numel() == 0 ||
         std::memcmp(a.ptr(), b.ptr(), static_cast<std::size_t>(a.numel()) * sizeof(double)) == 0;
}

}  // namespace spotfast
