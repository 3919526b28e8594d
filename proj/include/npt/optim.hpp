#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "npt/autodiff.hpp"

namespace npt {

struct AdamConfig {
  double lr = 5e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam with bias correction. Moments are kept in double regardless of the
/// parameter precision so float and double runs share the same recurrences.
class Adam {
 public:
  explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

  /// Applies one update. The first call fixes the tracked shapes; later calls
  /// must pass parameters and gradients of exactly those shapes.
  template <typename T>
  void step(std::span<Tensor3<T>* const> params, std::span<const Tensor3<T>* const> grads);

  std::int64_t steps() const { return step_; }
  const AdamConfig& config() const { return cfg_; }
  const std::vector<std::vector<double>>& first_moments() const { return m_; }
  const std::vector<std::vector<double>>& second_moments() const { return v_; }

 private:
  AdamConfig cfg_;
  std::int64_t step_ = 0;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
};

struct GradCheckResult {
  double max_rel_error = 0;
  Index worst_coordinate = -1;
  Index coordinates_checked = 0;
};

/// Scalar-valued tensor program used by the finite-difference harness.
using ScalarProgram = std::function<Var<double>(Tape<double>&, Var<double>)>;

/// Central-difference check of d f / d x. Error per coordinate is
/// |analytic - numeric| / max(1, |analytic|, |numeric|). When `coords` is
/// empty every coordinate of x is checked.
GradCheckResult finite_diff_check(const ScalarProgram& f, const Tensor3<double>& x, double step,
                                  std::span<const Index> coords = {});

}  // namespace npt
