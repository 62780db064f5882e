#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "faster/errors.hpp"

namespace faster {

using Index = std::int64_t;
using Shape = std::vector<Index>;

template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using MatrixMap = Eigen::Map<RowMatrix<Scalar>>;
template <typename Scalar>
using ConstMatrixMap = Eigen::Map<const RowMatrix<Scalar>>;
template <typename Scalar>
using VectorMap = Eigen::Map<Eigen::Matrix<Scalar, Eigen::Dynamic, 1>>;
template <typename Scalar>
using ConstVectorMap = Eigen::Map<const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>>;

Index shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

enum class DType { f32, f64 };

template <typename Scalar>
constexpr DType dtype_of();
template <>
constexpr DType dtype_of<float>() { return DType::f32; }
template <>
constexpr DType dtype_of<double>() { return DType::f64; }

const char* dtype_name(DType dtype);
DType parse_dtype(const std::string& name);

/// Finite-value scan after every op. On by default in builds without NDEBUG;
/// tests switch it on explicitly.
bool numeric_checks_enabled();
void set_numeric_checks(bool enabled);

/// Dense row-major array. The last extent is contiguous; video tensors use
/// [batch, time, height, width, channel].
template <typename Scalar>
class Tensor {
 public:
  using value_type = Scalar;
  /// Fixed buffer alignment keeps Eigen's vectorized reduction order a
  /// function of the shape alone, not of where the allocator put the data.
  using Storage = std::vector<Scalar, Eigen::aligned_allocator<Scalar>>;

  Tensor() = default;
  explicit Tensor(Shape shape, Scalar fill = Scalar(0));
  Tensor(Shape shape, std::vector<Scalar> values);

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor constant(Shape shape, Scalar value) { return Tensor(std::move(shape), value); }
  static Tensor uniform(Shape shape, Scalar low, Scalar high, std::mt19937_64& rng);
  static Tensor normal(Shape shape, Scalar mean, Scalar stddev, std::mt19937_64& rng);
  static Tensor identity(Index n);

  const Shape& shape() const { return shape_; }
  Index rank() const { return static_cast<Index>(shape_.size()); }
  Index dim(Index axis) const;
  Index size() const { return static_cast<Index>(data_.size()); }
  bool empty() const { return data_.empty() && shape_.empty(); }

  std::span<Scalar> values() { return data_; }
  std::span<const Scalar> values() const { return data_; }
  Scalar* data() { return data_.data(); }
  const Scalar* data() const { return data_.data(); }

  Scalar& operator[](Index i) { return data_[static_cast<std::size_t>(i)]; }
  Scalar operator[](Index i) const { return data_[static_cast<std::size_t>(i)]; }

  Scalar& at(std::initializer_list<Index> index);
  Scalar at(std::initializer_list<Index> index) const;

  /// Same values, new extents; sizes must agree.
  Tensor reshaped(Shape shape) const&;
  Tensor reshaped(Shape shape) &&;

  /// View as a [rows, cols] row-major matrix where cols is the last extent.
  MatrixMap<Scalar> matrix();
  ConstMatrixMap<Scalar> matrix() const;
  VectorMap<Scalar> vector() { return VectorMap<Scalar>(data_.data(), size()); }
  ConstVectorMap<Scalar> vector() const { return ConstVectorMap<Scalar>(data_.data(), size()); }

  void fill(Scalar value);
  bool all_finite() const;

  template <typename Other>
  Tensor<Other> cast() const {
    return Tensor<Other>(shape_, std::vector<Other>(data_.begin(), data_.end()));
  }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  Shape shape_;
  Storage data_;
};

/// Throws ShapeError with `what` as context when the shapes differ.
void require_same_shape(const Shape& a, const Shape& b, const std::string& what);

template <typename Scalar>
Scalar max_abs_diff(const Tensor<Scalar>& a, const Tensor<Scalar>& b);

extern template class Tensor<float>;
extern template class Tensor<double>;

}  // namespace faster
