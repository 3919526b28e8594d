#include "npt/optim.hpp"

#include <algorithm>
#include <cmath>

namespace npt {

template <typename T>
void Adam::step(std::span<Tensor3<T>* const> params, std::span<const Tensor3<T>* const> grads) {
  if (params.size() != grads.size()) {
    throw ShapeError("adam: " + std::to_string(params.size()) + " parameters but " + std::to_string(grads.size()) +
                     " gradients");
  }
  if (m_.empty()) {
    for (const auto* p : params) {
      m_.emplace_back(static_cast<std::size_t>(p->size()), 0.0);
      v_.emplace_back(static_cast<std::size_t>(p->size()), 0.0);
    }
  }
  if (m_.size() != params.size()) throw ShapeError("adam: parameter count changed between steps");
  for (std::size_t k = 0; k < params.size(); ++k) {
    require_same_shape(params[k]->shape(), grads[k]->shape(), "adam");
    if (static_cast<Index>(m_[k].size()) != params[k]->size()) {
      throw ShapeError("adam: parameter " + std::to_string(k) + " changed size to " + params[k]->shape().str());
    }
  }
  ++step_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& p = *params[k];
    const auto& g = *grads[k];
    auto& m = m_[k];
    auto& v = v_[k];
    for (Index i = 0; i < p.size(); ++i) {
      const double gi = g[i];
      auto& mi = m[static_cast<std::size_t>(i)];
      auto& vi = v[static_cast<std::size_t>(i)];
      mi = cfg_.beta1 * mi + (1.0 - cfg_.beta1) * gi;
      vi = cfg_.beta2 * vi + (1.0 - cfg_.beta2) * gi * gi;
      const double mhat = mi / bc1;
      const double vhat = vi / bc2;
      p[i] = static_cast<T>(p[i] - cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps));
    }
  }
}

template void Adam::step<float>(std::span<Tensor3<float>* const>, std::span<const Tensor3<float>* const>);
template void Adam::step<double>(std::span<Tensor3<double>* const>, std::span<const Tensor3<double>* const>);

GradCheckResult finite_diff_check(const ScalarProgram& f, const Tensor3<double>& x, double step,
                                  std::span<const Index> coords) {
  if (!(step > 0)) throw std::invalid_argument("finite_diff_check: step must be positive");
  auto evaluate = [&](const Tensor3<double>& at) {
    Tape<double> tape;
    auto out = f(tape, tape.leaf(at, false, "input"));
    if (out.shape() != Shape{1, 1, 1}) throw ShapeError("finite_diff_check: program is not scalar-valued");
    return out.value()[0];
  };

  Tape<double> tape;
  auto input = tape.leaf(x, true, "input");
  auto root = f(tape, input);
  tape.backward(root);
  const auto analytic = input.grad();

  std::vector<Index> all;
  if (coords.empty()) {
    all.resize(static_cast<std::size_t>(x.size()));
    for (Index i = 0; i < x.size(); ++i) all[static_cast<std::size_t>(i)] = i;
    coords = all;
  }

  GradCheckResult result;
  Tensor3<double> probe = x;
  for (Index i : coords) {
    const double orig = probe[i];
    probe[i] = orig + step;
    const double up = evaluate(probe);
    probe[i] = orig - step;
    const double down = evaluate(probe);
    probe[i] = orig;
    const double numeric = (up - down) / (2 * step);
    const double a = analytic[i];
    const double err = std::abs(a - numeric) / std::max({1.0, std::abs(a), std::abs(numeric)});
    if (err > result.max_rel_error || result.worst_coordinate < 0) {
      result.max_rel_error = std::max(result.max_rel_error, err);
      result.worst_coordinate = i;
    }
    ++result.coordinates_checked;
  }
  return result;
}

}  // namespace npt
