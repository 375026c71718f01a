#pragma once

#include <cassert>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace bipool {

// Error taxonomy. The CLI maps these onto its exit-code contract:
// shape/config/contract -> 2, format/io -> 3.
struct ShapeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ContractError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct FormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Storage width used when a tensor is serialized. Arithmetic always runs in
/// f64; the tag only controls the on-disk scalar width.
enum class Dtype : uint8_t { F32 = 0, F64 = 1 };

inline size_t dtype_size(Dtype d) { return d == Dtype::F32 ? 4 : 8; }

/// Dense row-major n-dimensional array of real values (last index fastest).
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<size_t> dims, Dtype dtype = Dtype::F64)
      : dims_(std::move(dims)), dtype_(dtype) {
    data_.assign(checked_size(dims_), 0.0);
  }

  Tensor(std::vector<size_t> dims, std::vector<double> data,
         Dtype dtype = Dtype::F64)
      : dims_(std::move(dims)), data_(std::move(data)), dtype_(dtype) {
    if (checked_size(dims_) != data_.size())
      throw ShapeError("tensor: dims/data length mismatch");
  }

  static Tensor zeros(std::vector<size_t> dims) { return Tensor(std::move(dims)); }

  static Tensor full(std::vector<size_t> dims, double v) {
    Tensor t(std::move(dims));
    for (double& x : t.data_) x = v;
    return t;
  }

  static Tensor scalar(double v) { return Tensor({1}, {v}); }

  const std::vector<size_t>& dims() const { return dims_; }
  size_t rank() const { return dims_.size(); }
  size_t size() const { return data_.size(); }
  size_t dim(size_t i) const { return dims_.at(i); }
  bool empty() const { return data_.empty(); }

  Dtype dtype() const { return dtype_; }
  void set_dtype(Dtype d) { dtype_ = d; }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::vector<double>& buffer() { return data_; }
  const std::vector<double>& buffer() const { return data_; }

  double& operator[](size_t i) { return data_[i]; }
  double operator[](size_t i) const { return data_[i]; }

  double& at2(size_t i, size_t j) {
    assert(rank() == 2);
    return data_[i * dims_[1] + j];
  }
  double at2(size_t i, size_t j) const {
    assert(rank() == 2);
    return data_[i * dims_[1] + j];
  }
  double& at3(size_t i, size_t j, size_t k) {
    assert(rank() == 3);
    return data_[(i * dims_[1] + j) * dims_[2] + k];
  }
  double at3(size_t i, size_t j, size_t k) const {
    assert(rank() == 3);
    return data_[(i * dims_[1] + j) * dims_[2] + k];
  }
  double& at4(size_t i, size_t j, size_t k, size_t l) {
    assert(rank() == 4);
    return data_[((i * dims_[1] + j) * dims_[2] + k) * dims_[3] + l];
  }
  double at4(size_t i, size_t j, size_t k, size_t l) const {
    assert(rank() == 4);
    return data_[((i * dims_[1] + j) * dims_[2] + k) * dims_[3] + l];
  }

  bool same_dims(const Tensor& o) const { return dims_ == o.dims_; }

  /// Rank-preserving reinterpret; total size must match.
  Tensor reshaped(std::vector<size_t> new_dims) const {
    if (checked_size(new_dims) != size())
      throw ShapeError("reshape: element count mismatch");
    Tensor t;
    t.dims_ = std::move(new_dims);
    t.data_ = data_;
    t.dtype_ = dtype_;
    return t;
  }

  Tensor flattened() const { return reshaped({size()}); }

  std::string shape_str() const;

  /// True when every element is finite.
  bool all_finite() const;

 private:
  static size_t checked_size(const std::vector<size_t>& dims) {
    if (dims.empty()) throw ShapeError("tensor: rank must be >= 1");
    size_t n = 1;
    for (size_t d : dims) {
      if (d == 0) throw ShapeError("tensor: extents must be >= 1");
      n *= d;
    }
    return n;
  }

  std::vector<size_t> dims_;
  std::vector<double> data_;
  Dtype dtype_ = Dtype::F64;
};

}  // namespace bipool
