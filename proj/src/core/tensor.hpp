#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include "core/errors.hpp"

namespace peft {

using Shape = std::vector<std::size_t>;

std::string shape_to_string(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

// Dense row-major array. The element type is float for training state and
// double inside gradient-check oracles.
template <typename T>
class BasicTensor {
 public:
  using value_type = T;

  BasicTensor() = default;
  explicit BasicTensor(Shape shape, T fill = T{0});
  BasicTensor(Shape shape, std::vector<T> data);

  static BasicTensor matrix(std::initializer_list<std::initializer_list<T>> rows);
  static BasicTensor vector(std::initializer_list<T> values);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t ndim() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::span<T> data() noexcept { return data_; }
  std::span<const T> data() const noexcept { return data_; }
  T* raw() noexcept { return data_.data(); }
  const T* raw() const noexcept { return data_.data(); }
  std::vector<T>& storage() noexcept { return data_; }
  const std::vector<T>& storage() const noexcept { return data_; }

  T& operator[](std::size_t i) noexcept { return data_[i]; }
  const T& operator[](std::size_t i) const noexcept { return data_[i]; }

  // 2-D element access.
  T& at(std::size_t r, std::size_t c) noexcept { return data_[r * shape_[1] + c]; }
  const T& at(std::size_t r, std::size_t c) const noexcept { return data_[r * shape_[1] + c]; }
  // 3-D element access (H×W×B cubes and patches).
  T& at(std::size_t i, std::size_t j, std::size_t k) noexcept {
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }
  const T& at(std::size_t i, std::size_t j, std::size_t k) const noexcept {
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }

  BasicTensor reshaped(Shape shape) const;
  void fill(T value);
  void zero() { fill(T{0}); }

  template <typename U>
  BasicTensor<U> cast() const {
    std::vector<U> out(data_.begin(), data_.end());
    return BasicTensor<U>(shape_, std::move(out));
  }

  bool operator==(const BasicTensor& other) const = default;

 private:
  Shape shape_;
  std::vector<T> data_;
};

using Tensor = BasicTensor<float>;
using Tensor64 = BasicTensor<double>;

void require_same_shape(const Shape& a, const Shape& b, const char* what);
void require_matrix(const Shape& a, const char* what);

// Matrix products. The reduction order depends only on the shapes, so
// results are reproducible for identical inputs.
template <typename T>
BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b);
// a · bᵀ
template <typename T>
BasicTensor<T> matmul_nt(const BasicTensor<T>& a, const BasicTensor<T>& b);
// aᵀ · b
template <typename T>
BasicTensor<T> matmul_tn(const BasicTensor<T>& a, const BasicTensor<T>& b);
// out += aᵀ · b, shapes checked.
template <typename T>
void matmul_tn_accumulate(const BasicTensor<T>& a, const BasicTensor<T>& b, BasicTensor<T>& out);

template <typename T>
BasicTensor<T> transpose(const BasicTensor<T>& m);

// Kronecker product: block (i, j) of the result is a[i, j] · b.
template <typename T>
BasicTensor<T> kron(const BasicTensor<T>& a, const BasicTensor<T>& b);

// (a ⊗ b) · x without forming a ⊗ b, via vec(b · unvec(x) · aᵀ).
template <typename T>
BasicTensor<T> kron_matvec(const BasicTensor<T>& a, const BasicTensor<T>& b, const BasicTensor<T>& x);

// Column-stacking vectorization and its inverse.
template <typename T>
BasicTensor<T> vec(const BasicTensor<T>& m);
template <typename T>
BasicTensor<T> unvec(const BasicTensor<T>& x, std::size_t rows, std::size_t cols);

// Matrix-vector product for a 2-D matrix and a 1-D vector.
template <typename T>
BasicTensor<T> matvec(const BasicTensor<T>& m, const BasicTensor<T>& x);

template <typename T>
void add_inplace(BasicTensor<T>& dst, const BasicTensor<T>& src);
template <typename T>
void axpy(T alpha, const BasicTensor<T>& x, BasicTensor<T>& y);
template <typename T>
void scale_inplace(BasicTensor<T>& dst, T alpha);

template <typename T>
T max_abs(const BasicTensor<T>& t);
template <typename T>
T max_abs_diff(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <typename T>
bool all_finite(const BasicTensor<T>& t);

}  // namespace peft
