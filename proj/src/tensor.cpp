#include "npt/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace npt {

std::string Shape::str() const {
  std::ostringstream os;
  os << '[' << n << ',' << c << ',' << v << ']';
  return os.str();
}

void require_same_shape(const Shape& a, const Shape& b, const char* what) {
  if (a != b) throw ShapeError(std::string(what) + ": shape mismatch " + a.str() + " vs " + b.str());
}

template <typename T>
Tensor3<T>::Tensor3(Shape shape, T fill) : shape_(shape) {
  if (shape.n < 0 || shape.c < 0 || shape.v < 0) throw ShapeError("negative extent in " + shape.str());
  data_.assign(static_cast<std::size_t>(shape.size()), fill);
}

template <typename T>
Tensor3<T>::Tensor3(Shape shape, std::vector<T> data) : shape_(shape), data_(std::move(data)) {
  if (static_cast<Index>(data_.size()) != shape.size()) {
    throw ShapeError("data length " + std::to_string(data_.size()) + " does not match shape " + shape.str());
  }
}

template <typename T>
void Tensor3<T>::fill(T value) {
  std::fill(data_.begin(), data_.end(), value);
}

template <typename T>
bool Tensor3<T>::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](T x) { return std::isfinite(x); });
}

template <typename T>
Tensor3<T> permute_columns(const Tensor3<T>& x, std::span<const Index> perm) {
  if (static_cast<Index>(perm.size()) != x.v()) {
    throw ShapeError("permutation length " + std::to_string(perm.size()) + " does not match V of " + x.shape().str());
  }
  Tensor3<T> out(x.shape());
  for (Index n = 0; n < x.n(); ++n) {
    for (Index c = 0; c < x.c(); ++c) {
      auto src = x.row(n, c);
      auto dst = out.row(n, c);
      for (std::size_t i = 0; i < perm.size(); ++i) dst[i] = src[static_cast<std::size_t>(perm[i])];
    }
  }
  return out;
}

template class Tensor3<float>;
template class Tensor3<double>;
template Tensor3<float> permute_columns(const Tensor3<float>&, std::span<const Index>);
template Tensor3<double> permute_columns(const Tensor3<double>&, std::span<const Index>);

}  // namespace npt
