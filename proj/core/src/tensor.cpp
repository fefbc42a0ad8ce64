#include "tdir/tensor.hpp"

#include <cmath>
#include <functional>
#include <numeric>

namespace tdir {

std::size_t shape_size(const Shape& dims) {
  return std::accumulate(dims.begin(), dims.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& dims) {
  std::string s = "[";
  for (std::size_t i = 0; i < dims.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(dims[i]);
  }
  return s + "]";
}

template <typename T>
Tensor<T>::Tensor(Shape d) : dims(std::move(d)), values(shape_size(dims), T(0)) {
  for (auto n : dims) {
    if (n == 0) throw ShapeError("tensor dims must be positive, got " + shape_str(dims));
  }
}

template <typename T>
Tensor<T>::Tensor(Shape d, std::vector<T> v) : dims(std::move(d)), values(std::move(v)) {
  if (values.size() != shape_size(dims)) {
    throw ShapeError("value count " + std::to_string(values.size()) + " does not match dims " +
                     shape_str(dims));
  }
}

template <typename T>
Tensor<T> Tensor<T>::filled(Shape d, T v) {
  Tensor t(std::move(d));
  std::fill(t.values.begin(), t.values.end(), v);
  return t;
}

template <typename T>
bool Tensor<T>::all_finite() const {
  for (T v : values) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

template struct Tensor<float>;
template struct Tensor<double>;

}  // namespace tdir
