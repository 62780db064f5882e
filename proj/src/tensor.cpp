#include "faster/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace faster {

namespace {
#ifdef NDEBUG
bool g_numeric_checks = false;
#else
bool g_numeric_checks = true;
#endif
}  // namespace

bool numeric_checks_enabled() { return g_numeric_checks; }
void set_numeric_checks(bool enabled) { g_numeric_checks = enabled; }

Index shape_size(const Shape& shape) {
  Index n = 1;
  for (Index d : shape) {
    if (d < 0) throw ShapeError("negative extent in shape " + shape_string(shape));
    n *= d;
  }
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

const char* dtype_name(DType dtype) { return dtype == DType::f32 ? "float32" : "float64"; }

DType parse_dtype(const std::string& name) {
  if (name == "float32") return DType::f32;
  if (name == "float64") return DType::f64;
  throw FormatError("unknown dtype '" + name + "'");
}

void require_same_shape(const Shape& a, const Shape& b, const std::string& what) {
  if (a != b) throw ShapeError(what + ": shape mismatch " + shape_string(a) + " vs " + shape_string(b));
}

template <typename Scalar>
Tensor<Scalar>::Tensor(Shape shape, Scalar fill)
    : shape_(std::move(shape)), data_(static_cast<std::size_t>(shape_size(shape_)), fill) {}

template <typename Scalar>
Tensor<Scalar>::Tensor(Shape shape, std::vector<Scalar> values)
    : shape_(std::move(shape)), data_(values.begin(), values.end()) {
  if (shape_size(shape_) != static_cast<Index>(data_.size())) {
    throw ShapeError("tensor of shape " + shape_string(shape_) + " given " +
                     std::to_string(data_.size()) + " values");
  }
}

template <typename Scalar>
Tensor<Scalar> Tensor<Scalar>::uniform(Shape shape, Scalar low, Scalar high, std::mt19937_64& rng) {
  Tensor t(std::move(shape));
  std::uniform_real_distribution<Scalar> dist(low, high);
  for (auto& v : t.data_) v = dist(rng);
  return t;
}

template <typename Scalar>
Tensor<Scalar> Tensor<Scalar>::normal(Shape shape, Scalar mean, Scalar stddev, std::mt19937_64& rng) {
  Tensor t(std::move(shape));
  std::normal_distribution<Scalar> dist(mean, stddev);
  for (auto& v : t.data_) v = dist(rng);
  return t;
}

template <typename Scalar>
Tensor<Scalar> Tensor<Scalar>::identity(Index n) {
  Tensor t({n, n});
  for (Index i = 0; i < n; ++i) t[i * n + i] = Scalar(1);
  return t;
}

template <typename Scalar>
Index Tensor<Scalar>::dim(Index axis) const {
  if (axis < 0) axis += rank();
  if (axis < 0 || axis >= rank()) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for shape " + shape_string(shape_));
  }
  return shape_[static_cast<std::size_t>(axis)];
}

template <typename Scalar>
Scalar& Tensor<Scalar>::at(std::initializer_list<Index> index) {
  if (static_cast<Index>(index.size()) != rank()) throw ShapeError("index rank mismatch for " + shape_string(shape_));
  Index offset = 0;
  std::size_t axis = 0;
  for (Index i : index) {
    if (i < 0 || i >= shape_[axis]) throw ShapeError("index out of range for " + shape_string(shape_));
    offset = offset * shape_[axis] + i;
    ++axis;
  }
  return data_[static_cast<std::size_t>(offset)];
}

template <typename Scalar>
Scalar Tensor<Scalar>::at(std::initializer_list<Index> index) const {
  return const_cast<Tensor*>(this)->at(index);
}

template <typename Scalar>
Tensor<Scalar> Tensor<Scalar>::reshaped(Shape shape) const& {
  Tensor copy = *this;
  return std::move(copy).reshaped(std::move(shape));
}

template <typename Scalar>
Tensor<Scalar> Tensor<Scalar>::reshaped(Shape shape) && {
  if (shape_size(shape) != size()) {
    throw ShapeError("cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
  }
  shape_ = std::move(shape);
  return std::move(*this);
}

template <typename Scalar>
MatrixMap<Scalar> Tensor<Scalar>::matrix() {
  const Index cols = rank() == 0 ? 1 : shape_.back();
  const Index rows = cols == 0 ? 0 : size() / cols;
  return MatrixMap<Scalar>(data_.data(), rows, cols);
}

template <typename Scalar>
ConstMatrixMap<Scalar> Tensor<Scalar>::matrix() const {
  const Index cols = rank() == 0 ? 1 : shape_.back();
  const Index rows = cols == 0 ? 0 : size() / cols;
  return ConstMatrixMap<Scalar>(data_.data(), rows, cols);
}

template <typename Scalar>
void Tensor<Scalar>::fill(Scalar value) {
  std::fill(data_.begin(), data_.end(), value);
}

template <typename Scalar>
bool Tensor<Scalar>::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](Scalar v) { return std::isfinite(v); });
}

template <typename Scalar>
Scalar max_abs_diff(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  require_same_shape(a.shape(), b.shape(), "max_abs_diff");
  Scalar m = 0;
  for (Index i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

template class Tensor<float>;
template class Tensor<double>;
template float max_abs_diff(const Tensor<float>&, const Tensor<float>&);
template double max_abs_diff(const Tensor<double>&, const Tensor<double>&);

}  // namespace faster
