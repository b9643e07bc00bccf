#include "aflow/tensor.hpp"

#include <cmath>
#include <sstream>

#include "aflow/errors.hpp"

namespace aflow {

std::int64_t shape_size(const std::vector<int>& shape) {
  std::int64_t n = 1;
  for (int d : shape) {
    if (d < 0) {
      throw ConfigError("negative dimension in tensor shape");
    }
    n *= d;
  }
  return n;
}

Tensor::Tensor(std::vector<int> shape)
    : shape_(std::move(shape)), data_(static_cast<std::size_t>(shape_size(shape_)), 0.0) {}

Tensor::Tensor(std::vector<int> shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
  if (static_cast<std::int64_t>(data_.size()) != shape_size(shape_)) {
    throw ConfigError("tensor data length does not match shape " + shape_str());
  }
}

Tensor Tensor::full(std::vector<int> shape, double value) {
  Tensor t(std::move(shape));
  t.fill(value);
  return t;
}

Tensor Tensor::zeros_like(const Tensor& other) { return Tensor(other.shape_); }

void Tensor::fill(double value) {
  for (double& x : data_) {
    x = value;
  }
}

std::string Tensor::shape_str() const {
  std::ostringstream os;
  os << "(";
  for (std::size_t i = 0; i < shape_.size(); ++i) {
    os << (i ? "," : "") << shape_[i];
  }
  os << ")";
  return os.str();
}

bool all_finite(const Tensor& t) {
  for (double x : t.vec()) {
    if (!std::isfinite(x)) {
      return false;
    }
  }
  return true;
}

void require_finite(const Tensor& t, const char* context) {
  if (!all_finite(t)) {
    throw NumericError(std::string("non-finite values in ") + context);
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* context) {
  if (!a.same_shape(b)) {
    throw ConfigError(std::string(context) + ": shape mismatch " + a.shape_str() + " vs " + b.shape_str());
  }
}

}  // namespace aflow
