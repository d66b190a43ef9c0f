#include "core/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <sstream>

#include <Eigen/Core>

namespace peft {

std::string shape_to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

void require_same_shape(const Shape& a, const Shape& b, const char* what) {
  if (a != b)
    throw ShapeError(std::string(what) + ": shape mismatch " + shape_to_string(a) + " vs " +
                     shape_to_string(b));
}

void require_matrix(const Shape& a, const char* what) {
  if (a.size() != 2)
    throw ShapeError(std::string(what) + ": expected a 2-D tensor, got " + shape_to_string(a));
}

template <typename T>
BasicTensor<T>::BasicTensor(Shape shape, T fill) : shape_(std::move(shape)) {
  for (auto d : shape_)
    if (d == 0) throw ShapeError("tensor dimensions must be positive: " + shape_to_string(shape_));
  data_.assign(shape_numel(shape_), fill);
}

template <typename T>
BasicTensor<T>::BasicTensor(Shape shape, std::vector<T> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  for (auto d : shape_)
    if (d == 0) throw ShapeError("tensor dimensions must be positive: " + shape_to_string(shape_));
  if (shape_numel(shape_) != data_.size())
    throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                     " does not match shape " + shape_to_string(shape_));
}

template <typename T>
BasicTensor<T> BasicTensor<T>::matrix(std::initializer_list<std::initializer_list<T>> rows) {
  const std::size_t r = rows.size();
  if (r == 0) throw ShapeError("matrix literal has no rows");
  const std::size_t c = rows.begin()->size();
  std::vector<T> data;
  data.reserve(r * c);
  for (const auto& row : rows) {
    if (row.size() != c) throw ShapeError("ragged matrix literal");
    data.insert(data.end(), row.begin(), row.end());
  }
  return BasicTensor({r, c}, std::move(data));
}

template <typename T>
BasicTensor<T> BasicTensor<T>::vector(std::initializer_list<T> values) {
  return BasicTensor({values.size()}, std::vector<T>(values));
}

template <typename T>
std::size_t BasicTensor<T>::dim(std::size_t axis) const {
  if (axis >= shape_.size())
    throw ShapeError("axis " + std::to_string(axis) + " out of range for " + shape_to_string(shape_));
  return shape_[axis];
}

template <typename T>
BasicTensor<T> BasicTensor<T>::reshaped(Shape shape) const {
  if (shape_numel(shape) != data_.size())
    throw ShapeError("cannot reshape " + shape_to_string(shape_) + " to " + shape_to_string(shape));
  return BasicTensor(std::move(shape), data_);
}

template <typename T>
void BasicTensor<T>::fill(T value) {
  std::fill(data_.begin(), data_.end(), value);
}

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using ConstMap = Eigen::Map<const RowMat<T>>;
template <typename T>
using MutMap = Eigen::Map<RowMat<T>>;

template <typename T>
ConstMap<T> as_matrix(const BasicTensor<T>& t) {
  return ConstMap<T>(t.raw(), static_cast<Eigen::Index>(t.dim(0)), static_cast<Eigen::Index>(t.dim(1)));
}

template <typename T>
MutMap<T> as_matrix(BasicTensor<T>& t) {
  return MutMap<T>(t.raw(), static_cast<Eigen::Index>(t.dim(0)), static_cast<Eigen::Index>(t.dim(1)));
}

}  // namespace

// Products go through Eigen's single-threaded blocked GEMM: its reduction
// order depends only on the shapes, so results are reproducible run to run.
template <typename T>
BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require_matrix(a.shape(), "matmul");
  require_matrix(b.shape(), "matmul");
  if (b.dim(0) != a.dim(1))
    throw ShapeError("matmul: inner dimensions differ " + shape_to_string(a.shape()) + " · " +
                     shape_to_string(b.shape()));
  BasicTensor<T> out({a.dim(0), b.dim(1)});
  as_matrix(out).noalias() = as_matrix(a) * as_matrix(b);
  return out;
}

template <typename T>
BasicTensor<T> matmul_nt(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require_matrix(a.shape(), "matmul_nt");
  require_matrix(b.shape(), "matmul_nt");
  if (a.dim(1) != b.dim(1))
    throw ShapeError("matmul_nt: inner dimensions differ " + shape_to_string(a.shape()) + " · " +
                     shape_to_string(b.shape()) + "ᵀ");
  BasicTensor<T> out({a.dim(0), b.dim(0)});
  as_matrix(out).noalias() = as_matrix(a) * as_matrix(b).transpose();
  return out;
}

template <typename T>
BasicTensor<T> matmul_tn(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require_matrix(a.shape(), "matmul_tn");
  require_matrix(b.shape(), "matmul_tn");
  BasicTensor<T> out({a.dim(1), b.dim(1)});
  matmul_tn_accumulate(a, b, out);
  return out;
}

template <typename T>
void matmul_tn_accumulate(const BasicTensor<T>& a, const BasicTensor<T>& b, BasicTensor<T>& out) {
  require_matrix(a.shape(), "matmul_tn");
  require_matrix(b.shape(), "matmul_tn");
  if (b.dim(0) != a.dim(0))
    throw ShapeError("matmul_tn: row counts differ " + shape_to_string(a.shape()) + " vs " +
                     shape_to_string(b.shape()));
  require_same_shape(out.shape(), Shape{a.dim(1), b.dim(1)}, "matmul_tn output");
  as_matrix(out).noalias() += as_matrix(a).transpose() * as_matrix(b);
}

template <typename T>
BasicTensor<T> transpose(const BasicTensor<T>& m) {
  require_matrix(m.shape(), "transpose");
  const std::size_t r = m.dim(0), c = m.dim(1);
  BasicTensor<T> out({c, r});
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out.at(j, i) = m.at(i, j);
  return out;
}

template <typename T>
BasicTensor<T> kron(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require_matrix(a.shape(), "kron");
  require_matrix(b.shape(), "kron");
  const std::size_t r1 = a.dim(0), r2 = a.dim(1), m = b.dim(0), n = b.dim(1);
  BasicTensor<T> out({r1 * m, r2 * n});
  for (std::size_t i = 0; i < r1; ++i)
    for (std::size_t j = 0; j < r2; ++j) {
      const T s = a.at(i, j);
      for (std::size_t bi = 0; bi < m; ++bi)
        for (std::size_t bj = 0; bj < n; ++bj) out.at(i * m + bi, j * n + bj) = s * b.at(bi, bj);
    }
  return out;
}

template <typename T>
BasicTensor<T> vec(const BasicTensor<T>& m) {
  require_matrix(m.shape(), "vec");
  const std::size_t r = m.dim(0), c = m.dim(1);
  BasicTensor<T> out({r * c});
  for (std::size_t j = 0; j < c; ++j)
    for (std::size_t i = 0; i < r; ++i) out[j * r + i] = m.at(i, j);
  return out;
}

template <typename T>
BasicTensor<T> unvec(const BasicTensor<T>& x, std::size_t rows, std::size_t cols) {
  if (x.size() != rows * cols)
    throw ShapeError("unvec: length " + std::to_string(x.size()) + " cannot form " +
                     std::to_string(rows) + "x" + std::to_string(cols));
  BasicTensor<T> out({rows, cols});
  for (std::size_t j = 0; j < cols; ++j)
    for (std::size_t i = 0; i < rows; ++i) out.at(i, j) = x[j * rows + i];
  return out;
}

template <typename T>
BasicTensor<T> kron_matvec(const BasicTensor<T>& a, const BasicTensor<T>& b, const BasicTensor<T>& x) {
  require_matrix(a.shape(), "kron_matvec");
  require_matrix(b.shape(), "kron_matvec");
  const std::size_t r2 = a.dim(1), n = b.dim(1);
  if (x.size() != r2 * n)
    throw ShapeError("kron_matvec: input length " + std::to_string(x.size()) + " != " +
                     std::to_string(r2 * n));
  return vec(matmul(matmul(b, unvec(x, n, r2)), transpose(a)));
}

template <typename T>
BasicTensor<T> matvec(const BasicTensor<T>& m, const BasicTensor<T>& x) {
  require_matrix(m.shape(), "matvec");
  if (x.size() != m.dim(1))
    throw ShapeError("matvec: input length " + std::to_string(x.size()) + " != " +
                     std::to_string(m.dim(1)));
  return matmul(m, x.reshaped({x.size(), 1})).reshaped({m.dim(0)});
}

template <typename T>
void add_inplace(BasicTensor<T>& dst, const BasicTensor<T>& src) {
  require_same_shape(dst.shape(), src.shape(), "add");
  T* d = dst.raw();
  const T* s = src.raw();
  for (std::size_t i = 0, n = dst.size(); i < n; ++i) d[i] += s[i];
}

template <typename T>
void axpy(T alpha, const BasicTensor<T>& x, BasicTensor<T>& y) {
  require_same_shape(x.shape(), y.shape(), "axpy");
  T* d = y.raw();
  const T* s = x.raw();
  for (std::size_t i = 0, n = y.size(); i < n; ++i) d[i] += alpha * s[i];
}

template <typename T>
void scale_inplace(BasicTensor<T>& dst, T alpha) {
  for (auto& v : dst.data()) v *= alpha;
}

template <typename T>
T max_abs(const BasicTensor<T>& t) {
  T m{0};
  for (auto v : t.data()) m = std::max(m, std::abs(v));
  return m;
}

template <typename T>
T max_abs_diff(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require_same_shape(a.shape(), b.shape(), "max_abs_diff");
  T m{0};
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

template <typename T>
bool all_finite(const BasicTensor<T>& t) {
  return std::all_of(t.data().begin(), t.data().end(), [](T v) { return std::isfinite(v); });
}

#define PEFT_INSTANTIATE_TENSOR(T)                                                          \
  template class BasicTensor<T>;                                                            \
  template BasicTensor<T> matmul(const BasicTensor<T>&, const BasicTensor<T>&);             \
  template BasicTensor<T> matmul_nt(const BasicTensor<T>&, const BasicTensor<T>&);          \
  template BasicTensor<T> matmul_tn(const BasicTensor<T>&, const BasicTensor<T>&);          \
  template void matmul_tn_accumulate(const BasicTensor<T>&, const BasicTensor<T>&,          \
                                     BasicTensor<T>&);                                      \
  template BasicTensor<T> transpose(const BasicTensor<T>&);                                 \
  template BasicTensor<T> kron(const BasicTensor<T>&, const BasicTensor<T>&);               \
  template BasicTensor<T> kron_matvec(const BasicTensor<T>&, const BasicTensor<T>&,         \
                                      const BasicTensor<T>&);                               \
  template BasicTensor<T> vec(const BasicTensor<T>&);                                       \
  template BasicTensor<T> unvec(const BasicTensor<T>&, std::size_t, std::size_t);           \
  template BasicTensor<T> matvec(const BasicTensor<T>&, const BasicTensor<T>&);             \
  template void add_inplace(BasicTensor<T>&, const BasicTensor<T>&);                        \
  template void axpy(T, const BasicTensor<T>&, BasicTensor<T>&);                            \
  template void scale_inplace(BasicTensor<T>&, T);                                          \
  template T max_abs(const BasicTensor<T>&);                                                \
  template T max_abs_diff(const BasicTensor<T>&, const BasicTensor<T>&);                    \
  template bool all_finite(const BasicTensor<T>&);

PEFT_INSTANTIATE_TENSOR(float)
PEFT_INSTANTIATE_TENSOR(double)

#undef PEFT_INSTANTIATE_TENSOR

}  // namespace peft
