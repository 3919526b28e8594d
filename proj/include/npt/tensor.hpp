#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace npt {

using Index = std::int64_t;

/// Extent of a rank-3 activation: batch x channels x vertices.
struct Shape {
  Index n = 0;
  Index c = 0;
  Index v = 0;

  Index size() const { return n * c * v; }
  bool operator==(const Shape&) const = default;
  std::string str() const;
};

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Dense row-major [N, C, V] array. Element (n, c, v) lives at
/// (n * C + c) * V + v, so every (n, c) slice is a contiguous row of V values.
template <typename T>
class Tensor3 {
 public:
  Tensor3() = default;
  explicit Tensor3(Shape shape, T fill = T(0));
  Tensor3(Shape shape, std::vector<T> data);
  Tensor3(Index n, Index c, Index v, T fill = T(0)) : Tensor3(Shape{n, c, v}, fill) {}

  const Shape& shape() const { return shape_; }
  Index n() const { return shape_.n; }
  Index c() const { return shape_.c; }
  Index v() const { return shape_.v; }
  Index size() const { return static_cast<Index>(data_.size()); }
  bool empty() const { return data_.empty(); }

  T& operator()(Index n, Index c, Index v) { return data_[static_cast<std::size_t>((n * shape_.c + c) * shape_.v + v)]; }
  const T& operator()(Index n, Index c, Index v) const {
    return data_[static_cast<std::size_t>((n * shape_.c + c) * shape_.v + v)];
  }
  T& operator[](Index i) { return data_[static_cast<std::size_t>(i)]; }
  const T& operator[](Index i) const { return data_[static_cast<std::size_t>(i)]; }

  /// Contiguous row of V values for one (n, c) pair.
  std::span<T> row(Index n, Index c) { return {data_.data() + (n * shape_.c + c) * shape_.v, static_cast<std::size_t>(shape_.v)}; }
  std::span<const T> row(Index n, Index c) const {
    return {data_.data() + (n * shape_.c + c) * shape_.v, static_cast<std::size_t>(shape_.v)};
  }
  /// Contiguous C x V block of one batch element.
  T* batch(Index n) { return data_.data() + n * shape_.c * shape_.v; }
  const T* batch(Index n) const { return data_.data() + n * shape_.c * shape_.v; }

  std::span<T> data() { return data_; }
  std::span<const T> data() const { return data_; }
  std::vector<T>& storage() { return data_; }
  const std::vector<T>& storage() const { return data_; }

  void fill(T value);
  bool all_finite() const;

  template <typename U>
  Tensor3<U> cast() const {
    Tensor3<U> out(shape_);
    for (Index i = 0; i < size(); ++i) out[i] = static_cast<U>(data_[static_cast<std::size_t>(i)]);
    return out;
  }

 private:
  Shape shape_{};
  std::vector<T> data_;
};

/// Throws ShapeError naming both shapes unless they are equal.
void require_same_shape(const Shape& a, const Shape& b, const char* what);

/// Applies a vertex permutation along V: out(n, c, i) = x(n, c, perm[i]).
template <typename T>
Tensor3<T> permute_columns(const Tensor3<T>& x, std::span<const Index> perm);

extern template class Tensor3<float>;
extern template class Tensor3<double>;

}  // namespace npt
