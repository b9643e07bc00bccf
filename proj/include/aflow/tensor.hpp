#ifndef AFLOW_TENSOR_HPP_
#define AFLOW_TENSOR_HPP_

#include <cstdint>
#include <string>
#include <vector>

namespace aflow {

// Dense N-dimensional array of doubles, row-major. Image-like tensors use
// (batch, channel, height, width) order. Dimension sizes may be zero (an
// empty tensor), never negative.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<int> shape);
  Tensor(std::vector<int> shape, std::vector<double> data);

  static Tensor full(std::vector<int> shape, double value);
  static Tensor zeros_like(const Tensor& other);

  int rank() const { return static_cast<int>(shape_.size()); }
  const std::vector<int>& shape() const { return shape_; }
  int dim(int i) const { return shape_[static_cast<std::size_t>(i)]; }
  std::int64_t size() const { return static_cast<std::int64_t>(data_.size()); }
  bool empty() const { return data_.empty(); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::vector<double>& vec() { return data_; }
  const std::vector<double>& vec() const { return data_; }

  double& operator[](std::int64_t i) { return data_[static_cast<std::size_t>(i)]; }
  double operator[](std::int64_t i) const { return data_[static_cast<std::size_t>(i)]; }

  // 4-d accessor for (N,C,H,W) tensors.
  double& at(int n, int c, int h, int w) {
    return data_[static_cast<std::size_t>(((static_cast<std::int64_t>(n) * shape_[1] + c) * shape_[2] + h) * shape_[3] + w)];
  }
  double at(int n, int c, int h, int w) const {
    return data_[static_cast<std::size_t>(((static_cast<std::int64_t>(n) * shape_[1] + c) * shape_[2] + h) * shape_[3] + w)];
  }
  // 3-d accessor for (C,H,W) tensors.
  double& at3(int c, int h, int w) {
    return data_[static_cast<std::size_t>((static_cast<std::int64_t>(c) * shape_[1] + h) * shape_[2] + w)];
  }
  double at3(int c, int h, int w) const {
    return data_[static_cast<std::size_t>((static_cast<std::int64_t>(c) * shape_[1] + h) * shape_[2] + w)];
  }
  // 2-d accessor for (rows, cols) tensors.
  double& at2(int r, int c) {
    return data_[static_cast<std::size_t>(static_cast<std::int64_t>(r) * shape_[1] + c)];
  }
  double at2(int r, int c) const {
    return data_[static_cast<std::size_t>(static_cast<std::int64_t>(r) * shape_[1] + c)];
  }

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
  void fill(double value);
  std::string shape_str() const;

 private:
  std::vector<int> shape_;
  std::vector<double> data_;
};

std::int64_t shape_size(const std::vector<int>& shape);

bool all_finite(const Tensor& t);

// Throws NumericError naming `context` if `t` holds a NaN or Inf.
void require_finite(const Tensor& t, const char* context);

void require_same_shape(const Tensor& a, const Tensor& b, const char* context);

}  // namespace aflow

#endif  // AFLOW_TENSOR_HPP_
