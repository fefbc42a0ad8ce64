#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace tdir {

using Shape = std::vector<std::size_t>;

/// Raised whenever operand dimensions are incompatible.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

std::size_t shape_size(const Shape& dims);
std::string shape_str(const Shape& dims);

/// Dense row-major array. `grad` is either empty (absent) or the same
/// length as `values`.
template <typename T>
struct Tensor {
  Shape dims;
  std::vector<T> values;
  std::vector<T> grad;

  Tensor() = default;
  explicit Tensor(Shape d);
  Tensor(Shape d, std::vector<T> v);
  static Tensor filled(Shape d, T v);

  std::size_t size() const { return values.size(); }
  std::size_t rank() const { return dims.size(); }
  std::size_t dim(std::size_t i) const { return dims.at(i); }

  T& operator[](std::size_t i) { return values[i]; }
  const T& operator[](std::size_t i) const { return values[i]; }
  T& at(std::size_t r, std::size_t c) { return values[r * dims[1] + c]; }
  const T& at(std::size_t r, std::size_t c) const { return values[r * dims[1] + c]; }

  bool has_grad() const { return !grad.empty(); }
  void zero_grad() { grad.assign(values.size(), T(0)); }

  std::span<const T> row(std::size_t r) const {
    return {values.data() + r * dims[1], dims[1]};
  }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out;
    out.dims = dims;
    out.values.assign(values.begin(), values.end());
    return out;
  }

  bool all_finite() const;
};

extern template struct Tensor<float>;
extern template struct Tensor<double>;

}  // namespace tdir
