#pragma once

#include <span>
#include <vector>

#include "npt/autodiff.hpp"
#include "npt/mesh.hpp"

namespace npt {

inline constexpr double kDefaultEdgeLambda = 5e-4;

struct LossBreakdown {
  double rec = 0;
  double edge = 0;
  double total = 0;
  double lambda_edge = kDefaultEdgeLambda;
};

/// total = rec + lambda * edge, in that exact evaluation order.
LossBreakdown combine_losses(double rec, double edge, double lambda_edge);

/// Sum over the batch of per-sample summed squared vertex distances.
template <typename T>
Var<T> reconstruction_loss(Var<T> pred, Var<T> gt);

/// Sum over the batch of sum_p sum_{v in N(p)} |x_p - x_v|^2. `edges` holds one
/// directed edge list per sample, or a single list shared by every sample.
template <typename T>
Var<T> edge_length_loss(Var<T> pred, std::span<const EdgeList> edges);

template <typename T>
struct LossTerms {
  Var<T> rec;    ///< batch mean
  Var<T> edge;   ///< batch mean
  Var<T> total;  ///< differentiable root
  LossBreakdown values;
};

/// Batch-mean training objective.
template <typename T>
LossTerms<T> total_loss(Var<T> pred, Var<T> gt, std::span<const EdgeList> edges, double lambda_edge = kDefaultEdgeLambda);

struct PmdResult {
  std::vector<double> per_sample;
  double mean = 0;
};

/// Mean over vertices of squared point distance, per sample and averaged.
template <typename T>
PmdResult pmd(const Tensor3<T>& pred, const Tensor3<T>& gt);

double pmd(const Mesh& a, const Mesh& b);

}  // namespace npt
