#include "npt/autodiff.hpp"

#include <Eigen/Core>
#include <cmath>
#include <limits>
#include <memory>

namespace npt {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMapMat = Eigen::Map<const RowMat<T>>;

template <typename T>
void require_same_tape(Var<T> a, Var<T> b, const char* what) {
  if (a.tape != b.tape) throw std::invalid_argument(std::string(what) + ": operands live on different tapes");
}

}  // namespace

template <typename T>
Var<T> Tape<T>::leaf(Tensor3<T> value, bool requires_grad, std::string tag) {
  Node node;
  node.value = std::move(value);
  node.tag = std::move(tag);
  node.requires_grad = requires_grad;
  nodes_.push_back(std::move(node));
  return {this, size() - 1};
}

template <typename T>
Var<T> Tape<T>::record(Tensor3<T> value, std::string tag, std::vector<int> parents, BackwardFn backward) {
  Node node;
  node.value = std::move(value);
  node.tag = std::move(tag);
  for (int p : parents) node.requires_grad = node.requires_grad || requires_grad(p);
  node.parents = std::move(parents);
  if (node.requires_grad) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return {this, size() - 1};
}

template <typename T>
const Tensor3<T>& Tape<T>::grad(int id) {
  auto& node = nodes_[static_cast<std::size_t>(id)];
  if (node.grad.shape() != node.value.shape()) node.grad = Tensor3<T>(node.value.shape());
  return node.grad;
}

template <typename T>
Tensor3<T>& Tape<T>::grad_buffer(int id) {
  auto& node = nodes_[static_cast<std::size_t>(id)];
  if (node.grad.shape() != node.value.shape()) node.grad = Tensor3<T>(node.value.shape());
  return node.grad;
}

template <typename T>
void Tape<T>::backward(Var<T> root) {
  if (root.tape != this) throw std::invalid_argument("backward: root belongs to another tape");
  const Shape& s = value(root.id).shape();
  if (s != Shape{1, 1, 1}) throw ShapeError("backward: root must be a [1,1,1] scalar, got " + s.str());
  for (auto& node : nodes_) node.grad = Tensor3<T>();
  grad_buffer(root.id).fill(T(1));
  for (int i = root.id; i >= 0; --i) {
    auto& node = nodes_[static_cast<std::size_t>(i)];
    if (!node.backward || node.grad.empty()) continue;
    node.backward(*this, i);
  }
}

// ---------------------------------------------------------------------------

template <typename T>
Var<T> pointwise_linear(Var<T> x, Var<T> weight, Var<T> bias) {
  require_same_tape(x, weight, "pointwise_linear");
  require_same_tape(x, bias, "pointwise_linear");
  const auto& xs = x.shape();
  const auto& ws = weight.shape();
  const auto& bs = bias.shape();
  if (ws.n != 1 || ws.v != xs.c) {
    throw ShapeError("pointwise_linear: weight " + ws.str() + " incompatible with input " + xs.str());
  }
  if (bs != Shape{1, ws.c, 1}) {
    throw ShapeError("pointwise_linear: bias " + bs.str() + " incompatible with weight " + ws.str());
  }
  const Index cin = xs.c, cout = ws.c, nv = xs.v;
  Tensor3<T> out(Shape{xs.n, cout, nv});
  const auto& xv = x.value();
  ConstMapMat<T> w(weight.value().batch(0), cout, cin);
  const auto& b = bias.value();
  for (Index n = 0; n < xs.n; ++n) {
    MapMat<T> o(out.batch(n), cout, nv);
    o.noalias() = w * ConstMapMat<T>(xv.batch(n), cin, nv);
    for (Index c = 0; c < cout; ++c) o.row(c).array() += b[c];
  }
  int xi = x.id, wi = weight.id, bi = bias.id;
  return x.tape->record(std::move(out), "pointwise_linear", {xi, wi, bi}, [=](Tape<T>& t, int self) {
    const auto& g = t.grad(self);
    const auto& xv = t.value(xi);
    ConstMapMat<T> w(t.value(wi).batch(0), cout, cin);
    for (Index n = 0; n < xs.n; ++n) {
      ConstMapMat<T> gn(g.batch(n), cout, nv);
      if (t.requires_grad(xi)) {
        MapMat<T>(t.grad_buffer(xi).batch(n), cin, nv).noalias() += w.transpose() * gn;
      }
      if (t.requires_grad(wi)) {
        MapMat<T>(t.grad_buffer(wi).batch(0), cout, cin).noalias() +=
            gn * ConstMapMat<T>(xv.batch(n), cin, nv).transpose();
      }
      if (t.requires_grad(bi)) {
        auto& gb = t.grad_buffer(bi);
        for (Index c = 0; c < cout; ++c) gb[c] += gn.row(c).sum();
      }
    }
  });
}

template <typename T>
Var<T> instance_norm(Var<T> x, double eps) {
  if (!(eps > 0)) throw std::invalid_argument("instance_norm: eps must be positive");
  const auto& xv = x.value();
  const Shape s = xv.shape();
  if (s.v < 1) throw ShapeError("instance_norm: needs at least one vertex, got " + s.str());
  Tensor3<T> out(s);
  // Per-(n, c) reciprocal standard deviation, kept for the backward pass.
  auto inv_sigma = std::make_shared<std::vector<double>>(static_cast<std::size_t>(s.n * s.c));
  for (Index n = 0; n < s.n; ++n) {
    for (Index c = 0; c < s.c; ++c) {
      auto in = xv.row(n, c);
      double mean = 0;
      for (T e : in) mean += e;
      mean /= static_cast<double>(s.v);
      double var = 0;
      for (T e : in) var += (e - mean) * (e - mean);
      var /= static_cast<double>(s.v);
      const double is = 1.0 / std::sqrt(var + eps);
      (*inv_sigma)[static_cast<std::size_t>(n * s.c + c)] = is;
      auto o = out.row(n, c);
      for (Index v = 0; v < s.v; ++v) o[v] = static_cast<T>((in[v] - mean) * is);
    }
  }
  int xi = x.id;
  return x.tape->record(std::move(out), "instance_norm", {xi}, [=](Tape<T>& t, int self) {
    const auto& g = t.grad(self);
    const auto& y = t.value(self);
    auto& gx = t.grad_buffer(xi);
    for (Index n = 0; n < s.n; ++n) {
      for (Index c = 0; c < s.c; ++c) {
        auto gr = g.row(n, c);
        auto yr = y.row(n, c);
        double mean_g = 0, mean_gy = 0;
        for (Index v = 0; v < s.v; ++v) {
          mean_g += gr[v];
          mean_gy += static_cast<double>(gr[v]) * yr[v];
        }
        mean_g /= static_cast<double>(s.v);
        mean_gy /= static_cast<double>(s.v);
        const double is = (*inv_sigma)[static_cast<std::size_t>(n * s.c + c)];
        auto dst = gx.row(n, c);
        for (Index v = 0; v < s.v; ++v) dst[v] += static_cast<T>(is * (gr[v] - mean_g - yr[v] * mean_gy));
      }
    }
  });
}

template <typename T>
Var<T> relu(Var<T> x) {
  Tensor3<T> out(x.shape());
  const auto& xv = x.value();
  for (Index i = 0; i < out.size(); ++i) out[i] = xv[i] > T(0) ? xv[i] : T(0);
  int xi = x.id;
  return x.tape->record(std::move(out), "relu", {xi}, [=](Tape<T>& t, int self) {
    const auto& g = t.grad(self);
    const auto& xv = t.value(xi);
    auto& gx = t.grad_buffer(xi);
    for (Index i = 0; i < g.size(); ++i) {
      if (xv[i] > T(0)) gx[i] += g[i];
    }
  });
}

template <typename T>
Var<T> tanh_act(Var<T> x) {
  Tensor3<T> out(x.shape());
  const auto& xv = x.value();
  for (Index i = 0; i < out.size(); ++i) out[i] = std::tanh(xv[i]);
  int xi = x.id;
  return x.tape->record(std::move(out), "tanh", {xi}, [=](Tape<T>& t, int self) {
    const auto& g = t.grad(self);
    const auto& y = t.value(self);
    auto& gx = t.grad_buffer(xi);
    for (Index i = 0; i < g.size(); ++i) gx[i] += g[i] * (T(1) - y[i] * y[i]);
  });
}

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  require_same_tape(a, b, "add");
  require_same_shape(a.shape(), b.shape(), "add");
  Tensor3<T> out = a.value();
  const auto& bv = b.value();
  for (Index i = 0; i < out.size(); ++i) out[i] += bv[i];
  int ai = a.id, bi = b.id;
  return a.tape->record(std::move(out), "add", {ai, bi}, [=](Tape<T>& t, int self) {
    const auto& g = t.grad(self);
    for (int p : {ai, bi}) {
      if (!t.requires_grad(p)) continue;
      auto& gp = t.grad_buffer(p);
      for (Index i = 0; i < g.size(); ++i) gp[i] += g[i];
    }
  });
}

template <typename T>
Var<T> sub(Var<T> a, Var<T> b) {
  require_same_tape(a, b, "sub");
  require_same_shape(a.shape(), b.shape(), "sub");
  Tensor3<T> out = a.value();
  const auto& bv = b.value();
  for (Index i = 0; i < out.size(); ++i) out[i] -= bv[i];
  int ai = a.id, bi = b.id;
  return a.tape->record(std::move(out), "sub", {ai, bi}, [=](Tape<T>& t, int self) {
    const auto& g = t.grad(self);
    if (t.requires_grad(ai)) {
      auto& ga = t.grad_buffer(ai);
      for (Index i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (t.requires_grad(bi)) {
      auto& gb = t.grad_buffer(bi);
      for (Index i = 0; i < g.size(); ++i) gb[i] -= g[i];
    }
  });
}

template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
  require_same_tape(a, b, "mul");
  require_same_shape(a.shape(), b.shape(), "mul");
  Tensor3<T> out = a.value();
  const auto& bv = b.value();
  for (Index i = 0; i < out.size(); ++i) out[i] *= bv[i];
  int ai = a.id, bi = b.id;
  return a.tape->record(std::move(out), "mul", {ai, bi}, [=](Tape<T>& t, int self) {
    const auto& g = t.grad(self);
    if (t.requires_grad(ai)) {
      auto& ga = t.grad_buffer(ai);
      const auto& bv = t.value(bi);
      for (Index i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
    }
    if (t.requires_grad(bi)) {
      auto& gb = t.grad_buffer(bi);
      const auto& av = t.value(ai);
      for (Index i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
    }
  });
}

template <typename T>
Var<T> scale(Var<T> x, double factor) {
  Tensor3<T> out = x.value();
  const T f = static_cast<T>(factor);
  for (Index i = 0; i < out.size(); ++i) out[i] *= f;
  int xi = x.id;
  return x.tape->record(std::move(out), "scale", {xi}, [=](Tape<T>& t, int self) {
    const auto& g = t.grad(self);
    auto& gx = t.grad_buffer(xi);
    for (Index i = 0; i < g.size(); ++i) gx[i] += g[i] * f;
  });
}

template <typename T>
Var<T> concat_channels(Var<T> a, Var<T> b) {
  require_same_tape(a, b, "concat_channels");
  const Shape sa = a.shape(), sb = b.shape();
  if (sa.n != sb.n || sa.v != sb.v) {
    throw ShapeError("concat_channels: N/V mismatch " + sa.str() + " vs " + sb.str());
  }
  Tensor3<T> out(Shape{sa.n, sa.c + sb.c, sa.v});
  const auto& av = a.value();
  const auto& bv = b.value();
  for (Index n = 0; n < sa.n; ++n) {
    std::copy(av.batch(n), av.batch(n) + sa.c * sa.v, out.batch(n));
    std::copy(bv.batch(n), bv.batch(n) + sb.c * sb.v, out.batch(n) + sa.c * sa.v);
  }
  int ai = a.id, bi = b.id;
  return a.tape->record(std::move(out), "concat_channels", {ai, bi}, [=](Tape<T>& t, int self) {
    const auto& g = t.grad(self);
    for (Index n = 0; n < sa.n; ++n) {
      const T* src = g.batch(n);
      if (t.requires_grad(ai)) {
        T* dst = t.grad_buffer(ai).batch(n);
        for (Index i = 0; i < sa.c * sa.v; ++i) dst[i] += src[i];
      }
      if (t.requires_grad(bi)) {
        T* dst = t.grad_buffer(bi).batch(n);
        for (Index i = 0; i < sb.c * sb.v; ++i) dst[i] += src[sa.c * sa.v + i];
      }
    }
  });
}

template <typename T>
Var<T> global_max_pool(Var<T> x) {
  const Shape s = x.shape();
  if (s.v < 1) throw ShapeError("global_max_pool: needs at least one vertex, got " + s.str());
  Tensor3<T> out(Shape{s.n, s.c, 1});
  auto argmax = std::make_shared<std::vector<Index>>(static_cast<std::size_t>(s.n * s.c));
  const auto& xv = x.value();
  for (Index n = 0; n < s.n; ++n) {
    for (Index c = 0; c < s.c; ++c) {
      auto r = xv.row(n, c);
      Index best = 0;
      for (Index v = 1; v < s.v; ++v) {
        if (r[v] > r[best]) best = v;
      }
      out(n, c, 0) = r[best];
      (*argmax)[static_cast<std::size_t>(n * s.c + c)] = best;
    }
  }
  int xi = x.id;
  return x.tape->record(std::move(out), "global_max_pool", {xi}, [=](Tape<T>& t, int self) {
    const auto& g = t.grad(self);
    auto& gx = t.grad_buffer(xi);
    for (Index n = 0; n < s.n; ++n) {
      for (Index c = 0; c < s.c; ++c) gx(n, c, (*argmax)[static_cast<std::size_t>(n * s.c + c)]) += g(n, c, 0);
    }
  });
}

template <typename T>
Var<T> broadcast_vertices(Var<T> x, Index count) {
  const Shape s = x.shape();
  if (s.v != 1) throw ShapeError("broadcast_vertices: input must have V=1, got " + s.str());
  if (count < 1) throw ShapeError("broadcast_vertices: count must be positive");
  Tensor3<T> out(Shape{s.n, s.c, count});
  const auto& xv = x.value();
  for (Index n = 0; n < s.n; ++n) {
    for (Index c = 0; c < s.c; ++c) {
      auto r = out.row(n, c);
      std::fill(r.begin(), r.end(), xv(n, c, 0));
    }
  }
  int xi = x.id;
  return x.tape->record(std::move(out), "broadcast_vertices", {xi}, [=](Tape<T>& t, int self) {
    const auto& g = t.grad(self);
    auto& gx = t.grad_buffer(xi);
    for (Index n = 0; n < s.n; ++n) {
      for (Index c = 0; c < s.c; ++c) {
        T acc = 0;
        for (T e : g.row(n, c)) acc += e;
        gx(n, c, 0) += acc;
      }
    }
  });
}

template <typename T>
Var<T> gather_vertices(Var<T> x, std::span<const Index> index) {
  const Shape s = x.shape();
  for (Index k : index) {
    if (k < 0 || k >= s.v) {
      throw std::out_of_range("gather_vertices: index " + std::to_string(k) + " outside [0," + std::to_string(s.v) + ")");
    }
  }
  auto idx = std::make_shared<std::vector<Index>>(index.begin(), index.end());
  const Index count = static_cast<Index>(idx->size());
  Tensor3<T> out(Shape{s.n, s.c, count});
  const auto& xv = x.value();
  for (Index n = 0; n < s.n; ++n) {
    for (Index c = 0; c < s.c; ++c) {
      auto src = xv.row(n, c);
      auto dst = out.row(n, c);
      for (Index k = 0; k < count; ++k) dst[k] = src[(*idx)[static_cast<std::size_t>(k)]];
    }
  }
  int xi = x.id;
  return x.tape->record(std::move(out), "gather_vertices", {xi}, [=](Tape<T>& t, int self) {
    const auto& g = t.grad(self);
    auto& gx = t.grad_buffer(xi);
    for (Index n = 0; n < s.n; ++n) {
      for (Index c = 0; c < s.c; ++c) {
        auto src = g.row(n, c);
        auto dst = gx.row(n, c);
        for (Index k = 0; k < count; ++k) dst[(*idx)[static_cast<std::size_t>(k)]] += src[k];
      }
    }
  });
}

template <typename T>
Var<T> gather_vertices_per_sample(Var<T> x, const std::vector<std::vector<Index>>& index) {
  const Shape s = x.shape();
  if (static_cast<Index>(index.size()) != s.n) {
    throw ShapeError("gather_vertices_per_sample: " + std::to_string(index.size()) + " index lists for input " + s.str());
  }
  const Index count = s.n > 0 ? static_cast<Index>(index[0].size()) : 0;
  for (const auto& list : index) {
    if (static_cast<Index>(list.size()) != count) {
      throw ShapeError("gather_vertices_per_sample: index lists differ in length");
    }
    for (Index k : list) {
      if (k < 0 || k >= s.v) {
        throw std::out_of_range("gather_vertices_per_sample: index " + std::to_string(k) + " outside [0," +
                                std::to_string(s.v) + ")");
      }
    }
  }
  auto idx = std::make_shared<std::vector<std::vector<Index>>>(index);
  Tensor3<T> out(Shape{s.n, s.c, count});
  const auto& xv = x.value();
  for (Index n = 0; n < s.n; ++n) {
    const auto& list = (*idx)[static_cast<std::size_t>(n)];
    for (Index c = 0; c < s.c; ++c) {
      auto src = xv.row(n, c);
      auto dst = out.row(n, c);
      for (Index k = 0; k < count; ++k) dst[k] = src[list[static_cast<std::size_t>(k)]];
    }
  }
  int xi = x.id;
  return x.tape->record(std::move(out), "gather_vertices_per_sample", {xi}, [=](Tape<T>& t, int self) {
    const auto& g = t.grad(self);
    auto& gx = t.grad_buffer(xi);
    for (Index n = 0; n < s.n; ++n) {
      const auto& list = (*idx)[static_cast<std::size_t>(n)];
      for (Index c = 0; c < s.c; ++c) {
        auto src = g.row(n, c);
        auto dst = gx.row(n, c);
        for (Index k = 0; k < count; ++k) dst[list[static_cast<std::size_t>(k)]] += src[k];
      }
    }
  });
}

template <typename T>
Var<T> square_norm_channels(Var<T> x) {
  const Shape s = x.shape();
  Tensor3<T> out(Shape{s.n, 1, s.v});
  const auto& xv = x.value();
  for (Index n = 0; n < s.n; ++n) {
    for (Index c = 0; c < s.c; ++c) {
      auto r = xv.row(n, c);
      for (Index v = 0; v < s.v; ++v) out(n, 0, v) += r[v] * r[v];
    }
  }
  int xi = x.id;
  return x.tape->record(std::move(out), "square_norm_channels", {xi}, [=](Tape<T>& t, int self) {
    const auto& g = t.grad(self);
    const auto& xv = t.value(xi);
    auto& gx = t.grad_buffer(xi);
    for (Index n = 0; n < s.n; ++n) {
      for (Index c = 0; c < s.c; ++c) {
        for (Index v = 0; v < s.v; ++v) gx(n, c, v) += T(2) * xv(n, c, v) * g(n, 0, v);
      }
    }
  });
}

template <typename T>
Var<T> sum_all(Var<T> x) {
  const auto& xv = x.value();
  double acc = 0;
  for (Index i = 0; i < xv.size(); ++i) acc += xv[i];
  Tensor3<T> out(Shape{1, 1, 1}, static_cast<T>(acc));
  int xi = x.id;
  return x.tape->record(std::move(out), "sum_all", {xi}, [=](Tape<T>& t, int self) {
    const T g = t.grad(self)[0];
    auto& gx = t.grad_buffer(xi);
    for (Index i = 0; i < gx.size(); ++i) gx[i] += g;
  });
}

#define NPT_INSTANTIATE(T)                                                   \
  template class Tape<T>;                                                    \
  template Var<T> pointwise_linear(Var<T>, Var<T>, Var<T>);                  \
  template Var<T> instance_norm(Var<T>, double);                             \
  template Var<T> relu(Var<T>);                                              \
  template Var<T> tanh_act(Var<T>);                                          \
  template Var<T> add(Var<T>, Var<T>);                                       \
  template Var<T> sub(Var<T>, Var<T>);                                       \
  template Var<T> mul(Var<T>, Var<T>);                                       \
  template Var<T> scale(Var<T>, double);                                     \
  template Var<T> concat_channels(Var<T>, Var<T>);                           \
  template Var<T> global_max_pool(Var<T>);                                   \
  template Var<T> broadcast_vertices(Var<T>, Index);                         \
  template Var<T> gather_vertices(Var<T>, std::span<const Index>);           \
  template Var<T> gather_vertices_per_sample(Var<T>, const std::vector<std::vector<Index>>&); \
  template Var<T> square_norm_channels(Var<T>);                              \
  template Var<T> sum_all(Var<T>);

NPT_INSTANTIATE(float)
NPT_INSTANTIATE(double)

#undef NPT_INSTANTIATE

}  // namespace npt
