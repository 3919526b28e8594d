#include "npt/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "npt/objectives.hpp"

namespace npt {

namespace {

using Td = Tensor3<double>;
using Vd = Var<double>;

Td random_tensor(Shape s, std::mt19937_64& rng, double lo = -1, double hi = 1) {
  std::uniform_real_distribution<double> u(lo, hi);
  Td t(s);
  for (Index i = 0; i < t.size(); ++i) t[i] = u(rng);
  return t;
}

// Values bounded away from zero so relu kinks stay further than `step`.
Td away_from_zero(Shape s, std::mt19937_64& rng) {
  auto t = random_tensor(s, rng, 0.05, 1.0);
  std::bernoulli_distribution sign(0.5);
  for (Index i = 0; i < t.size(); ++i) {
    if (sign(rng)) t[i] = -t[i];
  }
  return t;
}

// Random weighting so every output coordinate contributes a distinct slope.
Vd weighted_sum(Tape<double>& tape, Vd out, const Td& weights) {
  return sum_all(mul(out, tape.leaf(weights, false)));
}

std::vector<Index> sample_coords(Index size, int count, std::mt19937_64& rng) {
  std::vector<Index> all(static_cast<std::size_t>(size));
  for (Index i = 0; i < size; ++i) all[static_cast<std::size_t>(i)] = i;
  if (count <= 0 || count >= size) return all;
  std::shuffle(all.begin(), all.end(), rng);
  all.resize(static_cast<std::size_t>(count));
  std::sort(all.begin(), all.end());
  return all;
}

EdgeList ring_edges(Index v) {
  EdgeList e;
  for (Index i = 0; i < v; ++i) {
    const Index j = (i + 1) % v;
    if (i == j) continue;
    e.from.push_back(i);
    e.to.push_back(j);
    e.from.push_back(j);
    e.to.push_back(i);
  }
  return e;
}

}  // namespace

std::vector<GradCheckEntry> run_grad_check_suite(const GradCheckOptions& opts) {
  std::mt19937_64 rng(opts.seed);
  std::vector<GradCheckEntry> out;
  const double h = opts.step;
  auto check = [&](const std::string& name, const ScalarProgram& f, const Td& x, std::span<const Index> coords = {}) {
    out.push_back({name, finite_diff_check(f, x, h, coords)});
  };

  const Shape s{2, 4, 7};
  const Td x = random_tensor(s, rng);
  const Td y = random_tensor(s, rng);
  const Td r = random_tensor(s, rng);
  const Td w = random_tensor({1, 5, 4}, rng);
  const Td b = random_tensor({1, 5, 1}, rng);
  const Td r5 = random_tensor({2, 5, 7}, rng);

  check("pointwise_linear.x", [&](Tape<double>& t, Vd v) {
    return weighted_sum(t, pointwise_linear(v, t.leaf(w, false), t.leaf(b, false)), r5);
  }, x);
  check("pointwise_linear.weight", [&](Tape<double>& t, Vd v) {
    return weighted_sum(t, pointwise_linear(t.leaf(x, false), v, t.leaf(b, false)), r5);
  }, w);
  check("pointwise_linear.bias", [&](Tape<double>& t, Vd v) {
    return weighted_sum(t, pointwise_linear(t.leaf(x, false), t.leaf(w, false), v), r5);
  }, b);
  check("instance_norm", [&](Tape<double>& t, Vd v) { return weighted_sum(t, instance_norm(v, 1e-5), r); }, x);
  check("relu", [&](Tape<double>& t, Vd v) { return weighted_sum(t, relu(v), r); }, away_from_zero(s, rng));
  check("tanh", [&](Tape<double>& t, Vd v) { return weighted_sum(t, tanh_act(v), r); }, x);
  check("add", [&](Tape<double>& t, Vd v) { return weighted_sum(t, add(v, t.leaf(y, false)), r); }, x);
  check("sub", [&](Tape<double>& t, Vd v) { return weighted_sum(t, sub(t.leaf(y, false), v), r); }, x);
  check("mul", [&](Tape<double>& t, Vd v) { return weighted_sum(t, mul(v, t.leaf(y, false)), r); }, x);
  check("mul.self", [&](Tape<double>& t, Vd v) { return weighted_sum(t, mul(v, v), r); }, x);
  check("scale", [&](Tape<double>& t, Vd v) { return weighted_sum(t, scale(v, -2.5), r); }, x);
  {
    const Td rc = random_tensor({2, 7, 7}, rng);
    const Td other = random_tensor({2, 3, 7}, rng);
    check("concat_channels.a", [&](Tape<double>& t, Vd v) {
      return weighted_sum(t, concat_channels(v, t.leaf(other, false)), rc);
    }, x);
    check("concat_channels.b", [&](Tape<double>& t, Vd v) {
      return weighted_sum(t, concat_channels(t.leaf(other, false), v), rc);
    }, x);
  }
  {
    // Distinct values keep the argmax stable under the probe step.
    Td distinct(s);
    std::vector<double> vals(static_cast<std::size_t>(s.size()));
    for (std::size_t i = 0; i < vals.size(); ++i) vals[i] = 0.01 * static_cast<double>(i) - 0.3;
    std::shuffle(vals.begin(), vals.end(), rng);
    for (Index i = 0; i < s.size(); ++i) distinct[i] = vals[static_cast<std::size_t>(i)];
    const Td rp = random_tensor({2, 4, 1}, rng);
    check("global_max_pool", [&](Tape<double>& t, Vd v) { return weighted_sum(t, global_max_pool(v), rp); }, distinct);
  }
  {
    const Td small = random_tensor({2, 4, 1}, rng);
    check("broadcast_vertices", [&](Tape<double>& t, Vd v) { return weighted_sum(t, broadcast_vertices(v, 7), r); },
          small);
    const std::vector<Index> idx{3, 0, 0, 6, 2};
    const Td rg = random_tensor({2, 4, 5}, rng);
    check("gather_vertices", [&](Tape<double>& t, Vd v) {
      return weighted_sum(t, gather_vertices(v, std::span<const Index>(idx)), rg);
    }, x);
    const std::vector<std::vector<Index>> per{{1, 1, 4, 5, 6}, {6, 0, 2, 2, 3}};
    check("gather_vertices_per_sample", [&](Tape<double>& t, Vd v) {
      return weighted_sum(t, gather_vertices_per_sample(v, per), rg);
    }, x);
    const Td rn = random_tensor({2, 1, 7}, rng);
    check("square_norm_channels", [&](Tape<double>& t, Vd v) { return weighted_sum(t, square_norm_channels(v), rn); },
          x);
    check("sum_all", [&](Tape<double>&, Vd v) { return sum_all(v); }, x);
  }
  {
    const Shape ms{opts.batch, 3, opts.vertices};
    const Td pred = random_tensor(ms, rng);
    const Td gt = random_tensor(ms, rng);
    const std::vector<EdgeList> edges{ring_edges(opts.vertices)};
    check("reconstruction_loss", [&](Tape<double>& t, Vd v) { return reconstruction_loss(v, t.leaf(gt, false)); }, pred);
    check("edge_length_loss", [&](Tape<double>&, Vd v) {
      return edge_length_loss(v, std::span<const EdgeList>(edges));
    }, pred);
    check("total_loss", [&](Tape<double>& t, Vd v) {
      return total_loss(v, t.leaf(gt, false), std::span<const EdgeList>(edges), 5e-4).total;
    }, pred);
  }

  // Model components and full model, differentiating the training objective.
  const Shape ms{opts.batch, 3, opts.vertices};
  const Td pose = random_tensor(ms, rng);
  const Td id = random_tensor(ms, rng);
  const Td gt = random_tensor(ms, rng, -0.9, 0.9);
  const std::vector<EdgeList> edges{ring_edges(opts.vertices)};
  for (Variant variant : opts.variants) {
    ModelConfig cfg;
    cfg.widths = opts.widths;
    cfg.variant = variant;
    const auto params = init_params<double>(cfg, opts.seed + 11);
    const std::string prefix = std::string("model.") + variant_name(variant) + ".";

    const Index width = cfg.widths.w3;
    if (variant == Variant::full) {
      const Td hin = random_tensor({opts.batch, width, opts.vertices}, rng);
      const Td rw = random_tensor({opts.batch, width, opts.vertices}, rng);
      check("spadain", [&](Tape<double>& t, Vd v) {
        ParamBinder<double> bind(t, false);
        return weighted_sum(t, spadain(v, t.leaf(id, false), params.resblock_3.spadain_1, cfg.eps, bind), rw);
      }, hin);
      check("spadain_resblock", [&](Tape<double>& t, Vd v) {
        ParamBinder<double> bind(t, false);
        return weighted_sum(t, spadain_resblock(v, t.leaf(id, false), params.resblock_3, cfg.eps, bind), rw);
      }, hin);
    }

    auto objective = [&](Tape<double>& t, Vd p, Vd m, ParamBinder<double>& bind) {
      auto pred = forward(p, m, params, cfg, bind);
      return total_loss(pred, t.leaf(gt, false), std::span<const EdgeList>(edges), 5e-4).total;
    };
    check(prefix + "input.pose", [&](Tape<double>& t, Vd v) {
      ParamBinder<double> bind(t, false);
      return objective(t, v, t.leaf(id, false), bind);
    }, pose);
    check(prefix + "input.id", [&](Tape<double>& t, Vd v) {
      ParamBinder<double> bind(t, false);
      return objective(t, t.leaf(pose, false), v, bind);
    }, id);
    params.visit(cfg, std::function<void(const std::string&, const Td&)>([&](const std::string& name, const Td& tensor) {
      const auto coords = sample_coords(tensor.size(), opts.coords_per_tensor, rng);
      check(prefix + name, [&](Tape<double>& t, Vd v) {
        ParamBinder<double> bind(t, false);
        bind.bind_as(tensor, v);
        return objective(t, t.leaf(pose, false), t.leaf(id, false), bind);
      }, tensor, coords);
    }));
  }
  return out;
}

}  // namespace npt
