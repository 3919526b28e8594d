#include "npt/objectives.hpp"

#include <stdexcept>

namespace npt {

LossBreakdown combine_losses(double rec, double edge, double lambda_edge) {
  return {rec, edge, rec + lambda_edge * edge, lambda_edge};
}

template <typename T>
Var<T> reconstruction_loss(Var<T> pred, Var<T> gt) {
  if (!(pred.shape() == gt.shape())) {
    throw ShapeError("reconstruction_loss: prediction " + pred.shape().str() + " vs target " + gt.shape().str());
  }
  return sum_all(square_norm_channels(sub(pred, gt)));
}

template <typename T>
Var<T> edge_length_loss(Var<T> pred, std::span<const EdgeList> edges) {
  const Shape s = pred.shape();
  if (edges.size() != 1 && static_cast<Index>(edges.size()) != s.n) {
    throw ShapeError("edge_length_loss: " + std::to_string(edges.size()) + " edge lists for batch " + s.str());
  }
  std::vector<std::vector<Index>> from, to;
  for (Index n = 0; n < s.n; ++n) {
    const auto& e = edges[edges.size() == 1 ? 0 : static_cast<std::size_t>(n)];
    from.push_back(e.from);
    to.push_back(e.to);
  }
  return sum_all(square_norm_channels(sub(gather_vertices_per_sample(pred, from), gather_vertices_per_sample(pred, to))));
}

template <typename T>
LossTerms<T> total_loss(Var<T> pred, Var<T> gt, std::span<const EdgeList> edges, double lambda_edge) {
  const double inv_n = 1.0 / static_cast<double>(pred.shape().n);
  LossTerms<T> out;
  out.rec = scale(reconstruction_loss(pred, gt), inv_n);
  out.edge = scale(edge_length_loss(pred, edges), inv_n);
  out.total = lambda_edge == 0 ? out.rec : add(out.rec, scale(out.edge, lambda_edge));
  out.values = combine_losses(out.rec.value()[0], out.edge.value()[0], lambda_edge);
  return out;
}

template <typename T>
PmdResult pmd(const Tensor3<T>& pred, const Tensor3<T>& gt) {
  require_same_shape(pred.shape(), gt.shape(), "pmd");
  const Shape s = pred.shape();
  PmdResult r;
  for (Index n = 0; n < s.n; ++n) {
    double acc = 0;
    for (Index v = 0; v < s.v; ++v) {
      for (Index c = 0; c < s.c; ++c) {
        const double d = static_cast<double>(pred(n, c, v)) - static_cast<double>(gt(n, c, v));
        acc += d * d;
      }
    }
    r.per_sample.push_back(acc / static_cast<double>(s.v));
    r.mean += r.per_sample.back();
  }
  r.mean /= static_cast<double>(s.n);
  return r;
}

double pmd(const Mesh& a, const Mesh& b) {
  if (a.vertices.size() != b.vertices.size()) {
    throw ShapeError("pmd: vertex counts differ (" + std::to_string(a.vertices.size()) + " vs " +
                     std::to_string(b.vertices.size()) + ")");
  }
  if (a.vertices.empty()) throw ShapeError("pmd: empty mesh");
  double acc = 0;
  for (std::size_t i = 0; i < a.vertices.size(); ++i) acc += (a.vertices[i] - b.vertices[i]).squaredNorm();
  return acc / static_cast<double>(a.vertices.size());
}

#define NPT_INSTANTIATE(T)                                                                            \
  template Var<T> reconstruction_loss(Var<T>, Var<T>);                                                \
  template Var<T> edge_length_loss(Var<T>, std::span<const EdgeList>);                                \
  template LossTerms<T> total_loss(Var<T>, Var<T>, std::span<const EdgeList>, double);                \
  template PmdResult pmd(const Tensor3<T>&, const Tensor3<T>&);

NPT_INSTANTIATE(float)
NPT_INSTANTIATE(double)
#undef NPT_INSTANTIATE

}  // namespace npt
