#pragma once

#include <deque>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "npt/tensor.hpp"

namespace npt {

template <typename T>
class Tape;

/// Handle to a node recorded on a Tape. Cheap to copy; valid while the tape lives.
template <typename T>
struct Var {
  Tape<T>* tape = nullptr;
  int id = -1;

  const Tensor3<T>& value() const;
  const Tensor3<T>& grad() const;
  const Shape& shape() const { return value().shape(); }
  bool valid() const { return tape != nullptr && id >= 0; }
};

/// Append-only record of one forward pass. Nodes are stored in creation
/// order, so parents always precede children and backward() is a single
/// reverse sweep. A tape is used by one thread at a time.
template <typename T>
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, int self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Records an input. Leaves with requires_grad=false never receive gradient.
  Var<T> leaf(Tensor3<T> value, bool requires_grad = true, std::string tag = "leaf");

  /// Records the result of an operation. `backward` reads grad(self) and
  /// accumulates into its parents via accumulate().
  Var<T> record(Tensor3<T> value, std::string tag, std::vector<int> parents, BackwardFn backward);

  const Tensor3<T>& value(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }
  /// Gradient of the last backward() root w.r.t. this node. Zero-filled for
  /// nodes the root does not depend on.
  const Tensor3<T>& grad(int id);
  const std::string& tag(int id) const { return nodes_[static_cast<std::size_t>(id)].tag; }
  const std::vector<int>& parents(int id) const { return nodes_[static_cast<std::size_t>(id)].parents; }
  bool requires_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].requires_grad; }
  int size() const { return static_cast<int>(nodes_.size()); }

  /// Gradient buffer of a parent, allocated on first use. Only valid inside a
  /// backward callback and only for nodes with requires_grad().
  Tensor3<T>& grad_buffer(int id);

  /// Reverse sweep from a [1,1,1] root. Seeds d(root)/d(root) = 1.
  void backward(Var<T> root);

  /// Drops all nodes so the tape can be reused for another pass.
  void clear() { nodes_.clear(); }

 private:
  struct Node {
    Tensor3<T> value;
    Tensor3<T> grad;
    std::string tag;
    std::vector<int> parents;
    BackwardFn backward;
    bool requires_grad = false;
  };
  // deque keeps references to recorded values stable while the tape grows.
  std::deque<Node> nodes_;
};

template <typename T>
const Tensor3<T>& Var<T>::value() const {
  return tape->value(id);
}

template <typename T>
const Tensor3<T>& Var<T>::grad() const {
  return tape->grad(id);
}

// ---------------------------------------------------------------------------
// Differentiable primitives. All are permutation-equivariant along V except
// global_max_pool (invariant) and gather_vertices (index-driven).

/// 1x1 convolution. weight is [1, Cout, Cin], bias is [1, Cout, 1].
template <typename T>
Var<T> pointwise_linear(Var<T> x, Var<T> weight, Var<T> bias);

/// Per-(n, c) normalization across vertices, population variance, no affine.
template <typename T>
Var<T> instance_norm(Var<T> x, double eps);

template <typename T>
Var<T> relu(Var<T> x);

template <typename T>
Var<T> tanh_act(Var<T> x);

template <typename T>
Var<T> add(Var<T> a, Var<T> b);

template <typename T>
Var<T> sub(Var<T> a, Var<T> b);

template <typename T>
Var<T> mul(Var<T> a, Var<T> b);

template <typename T>
Var<T> scale(Var<T> x, double factor);

template <typename T>
Var<T> concat_channels(Var<T> a, Var<T> b);

/// [N, C, V] -> [N, C, 1]. Ties send the gradient to the lowest vertex index.
template <typename T>
Var<T> global_max_pool(Var<T> x);

/// [N, C, 1] -> [N, C, count] by repetition along V.
template <typename T>
Var<T> broadcast_vertices(Var<T> x, Index count);

/// out(n, c, k) = x(n, c, index[k]).
template <typename T>
Var<T> gather_vertices(Var<T> x, std::span<const Index> index);

/// Per-sample gather: out(n, c, k) = x(n, c, index[n][k]). Every sample's
/// index list must have the same length.
template <typename T>
Var<T> gather_vertices_per_sample(Var<T> x, const std::vector<std::vector<Index>>& index);

/// Sum of squares over channels: [N, C, V] -> [N, 1, V].
template <typename T>
Var<T> square_norm_channels(Var<T> x);

/// Sum of every element into a [1, 1, 1] scalar.
template <typename T>
Var<T> sum_all(Var<T> x);

}  // namespace npt
