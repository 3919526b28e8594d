#include "npt/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <random>
#include <sstream>
#include <thread>

namespace npt {

using synth::Split;

const char* precision_name(Precision p) { return p == Precision::f32 ? "f32" : "f64"; }

Precision parse_precision(const std::string& name) {
  if (name == "f32" || name == "float" || name == "32") return Precision::f32;
  if (name == "f64" || name == "double" || name == "64") return Precision::f64;
  throw std::invalid_argument("unknown precision '" + name + "' (expected f32 or f64)");
}

void TrainConfig::validate() const {
  if (!(lr > 0)) throw std::invalid_argument("train: lr must be > 0");
  if (batch_size < 1) throw std::invalid_argument("train: batch_size must be >= 1");
  if (epochs < 0) throw std::invalid_argument("train: epochs must be >= 0");
  if (!(lambda_edge >= 0)) throw std::invalid_argument("train: lambda_edge must be >= 0");
  if (checkpoint_every < 0) throw std::invalid_argument("train: checkpoint_every must be >= 0");
}

// ---------------------------------------------------------------------------

namespace {

std::string fmt(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.9g", x);
  return buf;
}

}  // namespace

std::string MetricsLog::csv(bool include_timing) const {
  std::string out = "epoch,rec,edge,total,seen_pmd,unseen_pmd,seconds\n";
  for (const auto& r : rows) {
    out += std::to_string(r.epoch) + "," + fmt(r.rec) + "," + fmt(r.edge) + "," + fmt(r.total) + "," +
           fmt(r.seen_pmd) + "," + fmt(r.unseen_pmd) + "," + (include_timing ? fmt(r.seconds) : "0") + "\n";
  }
  return out;
}

void MetricsLog::write_csv(const std::filesystem::path& path, bool include_timing) const {
  write_file_atomic(path, csv(include_timing));
}

// ---------------------------------------------------------------------------

PreparedPair prepare_pair(const synth::PairSample& s, Split split) {
  PreparedPair p;
  p.split = split;
  p.id_mesh = s.id_mesh;
  p.id = to_tensor<double>(s.id_mesh);
  p.pose = to_tensor<double>(s.pose_mesh);
  p.gt = to_tensor<double>(s.gt_mesh);
  p.edges = build_edge_list(s.id_mesh);
  return p;
}

std::vector<PreparedPair> prepare_eval_set(const synth::Dataset& ds, const synth::KinematicBody& body) {
  std::vector<PreparedPair> out;
  for (const auto& rec : ds.samples) {
    if (rec.split != Split::train) out.push_back(prepare_pair(ds.sample(body, rec), rec.split));
  }
  return out;
}

int eval_threads() {
  if (const char* env = std::getenv("NPT_THREADS")) {
    const int n = std::atoi(env);
    if (n >= 1) return n;
  }
  return 1;
}

EvalResult evaluate(const ModelParams<float>& params, const ModelConfig& cfg, const std::vector<PreparedPair>& eval_set) {
  EvalResult r;
  r.samples.resize(eval_set.size());
  auto work = [&](std::size_t i) {
    const auto& s = eval_set[i];
    const auto pred = predict(s.pose.cast<float>(), s.id.cast<float>(), params, cfg);
    r.samples[i] = {s.split, pmd(pred.cast<double>(), s.gt).mean, pmd(s.id, s.gt).mean};
  };
  const int threads = std::min<int>(eval_threads(), static_cast<int>(eval_set.size()));
  if (threads <= 1) {
    for (std::size_t i = 0; i < eval_set.size(); ++i) work(i);
  } else {
    // Strided assignment; every result lands in its own slot.
    std::vector<std::jthread> pool;
    for (int t = 0; t < threads; ++t) {
      pool.emplace_back([&, t] {
        for (std::size_t i = static_cast<std::size_t>(t); i < eval_set.size(); i += static_cast<std::size_t>(threads)) {
          work(i);
        }
      });
    }
  }
  // Reductions in sample order on this thread.
  int seen = 0, unseen = 0;
  for (const auto& s : r.samples) {
    if (s.split == Split::unseen_pose) {
      r.unseen_pmd += s.pmd;
      r.baseline_unseen_pmd += s.baseline_pmd;
      ++unseen;
    } else {
      r.seen_pmd += s.pmd;
      r.baseline_seen_pmd += s.baseline_pmd;
      ++seen;
    }
  }
  if (seen) {
    r.seen_pmd /= seen;
    r.baseline_seen_pmd /= seen;
  }
  if (unseen) {
    r.unseen_pmd /= unseen;
    r.baseline_unseen_pmd /= unseen;
  }
  return r;
}

// ---------------------------------------------------------------------------

namespace {

template <typename T>
struct Batch {
  Tensor3<T> id, pose, gt;
  std::vector<EdgeList> edges;
};

template <typename T>
Batch<T> make_batch(std::span<const PreparedPair* const> pairs) {
  const Index n = static_cast<Index>(pairs.size());
  const Index v = pairs[0]->id.v();
  Batch<T> b{Tensor3<T>(n, 3, v), Tensor3<T>(n, 3, v), Tensor3<T>(n, 3, v), {}};
  for (Index i = 0; i < n; ++i) {
    const auto& p = *pairs[static_cast<std::size_t>(i)];
    if (p.id.v() != v) throw ShapeError("batch: samples have different vertex counts");
    for (Index k = 0; k < 3 * v; ++k) {
      b.id.batch(i)[k] = static_cast<T>(p.id[k]);
      b.pose.batch(i)[k] = static_cast<T>(p.pose[k]);
      b.gt.batch(i)[k] = static_cast<T>(p.gt[k]);
    }
    b.edges.push_back(p.edges);
  }
  return b;
}

template <typename T>
std::vector<Tensor3<T>*> param_list(ModelParams<T>& p, const ModelConfig& cfg) {
  std::vector<Tensor3<T>*> out;
  p.visit(cfg, std::function<void(const std::string&, Tensor3<T>&)>(
                   [&](const std::string&, Tensor3<T>& t) { out.push_back(&t); }));
  return out;
}

/// One optimization step; returns the loss values computed before the update.
template <typename T>
LossBreakdown train_step(ModelParams<T>& params, const std::vector<Tensor3<T>*>& plist, const ModelConfig& mcfg,
                         Adam& adam, const Batch<T>& batch, double lambda_edge, long batch_index) {
  Tape<T> tape;
  ParamBinder<T> bind(tape, true);
  auto pred = forward(tape.leaf(batch.pose, false), tape.leaf(batch.id, false), params, mcfg, bind);
  auto loss = total_loss(pred, tape.leaf(batch.gt, false), std::span<const EdgeList>(batch.edges), lambda_edge);
  const auto& v = loss.values;
  if (!std::isfinite(v.total) || !std::isfinite(v.rec) || !std::isfinite(v.edge)) {
    throw TrainingError("non-finite loss at batch " + std::to_string(batch_index) + ": rec=" + fmt(v.rec) +
                        " edge=" + fmt(v.edge) + " total=" + fmt(v.total) + " lambda_edge=" + fmt(v.lambda_edge));
  }
  tape.backward(loss.total);
  std::vector<Tensor3<T>> zero_grads;
  std::vector<const Tensor3<T>*> grads;
  zero_grads.reserve(plist.size());
  for (auto* p : plist) {
    auto leaf = bind.find(*p);
    if (leaf.tape) {
      grads.push_back(&leaf.grad());
    } else {
      zero_grads.emplace_back(p->shape());
      grads.push_back(&zero_grads.back());
    }
  }
  adam.step<T>(std::span<Tensor3<T>* const>(plist), std::span<const Tensor3<T>* const>(grads));
  return v;
}

AdamConfig adam_config(const TrainConfig& cfg) { return {cfg.lr, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps}; }

template <typename T>
TrainResult train_impl(const synth::Dataset& ds, const synth::KinematicBody& body, const TrainConfig& cfg,
                       const EpochCallback& on_epoch) {
  cfg.validate();
  const int n_id = static_cast<int>(ds.train_identities.size());
  const int n_pose = static_cast<int>(ds.train_poses.size());
  if (n_id < 1 || n_pose < 2) throw std::invalid_argument("train: need at least 1 identity and 2 poses");

  TrainResult result;
  auto params = init_params<T>(cfg.model, cfg.model.seed);
  const auto plist = param_list(params, cfg.model);
  Adam adam(adam_config(cfg));
  const auto eval_set = cfg.evaluate_each_epoch || cfg.epochs == 0 ? prepare_eval_set(ds, body) : std::vector<PreparedPair>{};

  auto checkpoint = [&](const std::string& file) {
    if (cfg.checkpoint_dir.empty()) return;
    std::filesystem::create_directories(cfg.checkpoint_dir);
    const auto path = cfg.checkpoint_dir / file;
    save_checkpoint(params.template cast<float>(), cfg.model, path);
    result.checkpoints.push_back(path);
  };

  long batch_index = 0;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    std::mt19937_64 rng(synth::child_seed(cfg.seed, static_cast<std::uint64_t>(epoch)));

    // One pair per identity x pose cell, with a freshly drawn pose source.
    struct Cell {
      int i, j, k, l;
    };
    std::vector<Cell> cells;
    for (int i = 0; i < n_id; ++i) {
      for (int j = 0; j < n_pose; ++j) {
        const int k = static_cast<int>(rng() % static_cast<std::uint64_t>(n_id));
        int l = static_cast<int>(rng() % static_cast<std::uint64_t>(n_pose - 1));
        if (l >= j) ++l;
        cells.push_back({i, j, k, l});
      }
    }
    std::shuffle(cells.begin(), cells.end(), rng);

    double rec = 0, edge = 0, total = 0;
    std::size_t seen = 0;
    for (std::size_t start = 0; start < cells.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end = std::min(cells.size(), start + static_cast<std::size_t>(cfg.batch_size));
      std::vector<PreparedPair> pairs;
      for (std::size_t c = start; c < end; ++c) {
        const auto& cell = cells[c];
        pairs.push_back(prepare_pair(ds.train_pair(body, cell.i, cell.j, cell.k, cell.l, rng), Split::train));
      }
      std::vector<const PreparedPair*> ptrs;
      for (const auto& p : pairs) ptrs.push_back(&p);
      const auto batch = make_batch<T>(ptrs);
      const auto v = train_step(params, plist, cfg.model, adam, batch, cfg.lambda_edge, batch_index++);
      const double w = static_cast<double>(end - start);
      rec += v.rec * w;
      edge += v.edge * w;
      total += v.total * w;
      seen += end - start;
    }

    EpochMetrics m;
    m.epoch = epoch;
    m.rec = rec / static_cast<double>(seen);
    m.edge = edge / static_cast<double>(seen);
    m.total = total / static_cast<double>(seen);
    if (cfg.evaluate_each_epoch) {
      result.final_eval = evaluate(params.template cast<float>(), cfg.model, eval_set);
      m.seen_pmd = result.final_eval.seen_pmd;
      m.unseen_pmd = result.final_eval.unseen_pmd;
    }
    m.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.log.rows.push_back(m);
    if (on_epoch) on_epoch(m);
    if (cfg.checkpoint_every > 0 && epoch % cfg.checkpoint_every == 0 && epoch != cfg.epochs) {
      char name[32];
      std::snprintf(name, sizeof name, "epoch_%04d.npt", epoch);
      checkpoint(name);
    }
  }
  result.params = params.template cast<float>();
  if (!cfg.evaluate_each_epoch) result.final_eval = evaluate(result.params, cfg.model, prepare_eval_set(ds, body));
  else if (cfg.epochs == 0) result.final_eval = evaluate(result.params, cfg.model, eval_set);
  checkpoint("final.npt");
  return result;
}

template <typename T>
std::vector<double> overfit_impl(const PreparedPair& pair, const TrainConfig& cfg, int steps) {
  auto params = init_params<T>(cfg.model, cfg.model.seed);
  const auto plist = param_list(params, cfg.model);
  Adam adam(adam_config(cfg));
  const PreparedPair* ptr = &pair;
  const auto batch = make_batch<T>(std::span<const PreparedPair* const>(&ptr, 1));
  std::vector<double> losses;
  for (int s = 0; s < steps; ++s) {
    losses.push_back(train_step(params, plist, cfg.model, adam, batch, cfg.lambda_edge, s).total);
  }
  Tape<T> tape;
  ParamBinder<T> bind(tape, false);
  auto pred = forward(tape.leaf(batch.pose, false), tape.leaf(batch.id, false), params, cfg.model, bind);
  losses.push_back(
      total_loss(pred, tape.leaf(batch.gt, false), std::span<const EdgeList>(batch.edges), cfg.lambda_edge).values.total);
  return losses;
}

}  // namespace

TrainResult train(const synth::Dataset& ds, const synth::KinematicBody& body, const TrainConfig& cfg,
                  const EpochCallback& on_epoch) {
  return cfg.precision == Precision::f32 ? train_impl<float>(ds, body, cfg, on_epoch)
                                         : train_impl<double>(ds, body, cfg, on_epoch);
}

std::vector<double> overfit_single(const PreparedPair& pair, const TrainConfig& cfg, int steps) {
  return cfg.precision == Precision::f32 ? overfit_impl<float>(pair, cfg, steps) : overfit_impl<double>(pair, cfg, steps);
}

// ---------------------------------------------------------------------------

const AblationRow& AblationTable::at(const std::string& name) const {
  for (const auto& r : rows) {
    if (r.name == name) return r;
  }
  throw std::out_of_range("ablation table has no row '" + name + "'");
}

std::string AblationTable::csv() const {
  std::string out = "variant,seen_pmd,unseen_pmd,final_loss,seconds\n";
  for (const auto& r : rows) {
    out += r.name + "," + fmt(r.seen_pmd) + "," + fmt(r.unseen_pmd) + "," + fmt(r.final_loss) + "," + fmt(r.seconds) + "\n";
  }
  out += "copy_identity," + fmt(baseline_seen_pmd) + "," + fmt(baseline_unseen_pmd) + ",,\n";
  return out;
}

std::string AblationTable::text() const {
  std::ostringstream ss;
  char line[160];
  std::snprintf(line, sizeof line, "%-14s %14s %14s %14s %10s\n", "variant", "seen_pmd", "unseen_pmd", "final_loss",
                "seconds");
  ss << line;
  for (const auto& r : rows) {
    std::snprintf(line, sizeof line, "%-14s %14.6e %14.6e %14.6e %10.1f\n", r.name.c_str(), r.seen_pmd, r.unseen_pmd,
                  r.final_loss, r.seconds);
    ss << line;
  }
  std::snprintf(line, sizeof line, "%-14s %14.6e %14.6e\n", "copy_identity", baseline_seen_pmd, baseline_unseen_pmd);
  ss << line;
  return ss.str();
}

AblationTable run_ablation_suite(const synth::Dataset& ds, const synth::KinematicBody& body, const TrainConfig& base,
                                 const std::vector<std::string>& only, TrainResult* trained_full,
                                 const std::function<void(const std::string&, const EpochMetrics&)>& on_epoch) {
  for (const auto& name : only) {
    if (std::find(ablation_names().begin(), ablation_names().end(), name) == ablation_names().end()) {
      throw std::invalid_argument("unknown ablation '" + name + "'");
    }
  }
  AblationTable table;
  for (const auto& name : ablation_names()) {
    if (!only.empty() && std::find(only.begin(), only.end(), name) == only.end()) continue;
    TrainConfig cfg = base;
    cfg.checkpoint_dir.clear();
    cfg.evaluate_each_epoch = false;
    if (name == "no_edge") {
      cfg.lambda_edge = 0;
      cfg.model.variant = Variant::full;
    } else {
      cfg.model.variant = parse_variant(name);
    }
    auto res = train(ds, body, cfg, on_epoch ? EpochCallback([&](const EpochMetrics& m) { on_epoch(name, m); })
                                             : EpochCallback{});
    AblationRow row{name, res.final_eval.seen_pmd, res.final_eval.unseen_pmd,
                    res.log.rows.empty() ? 0.0 : res.log.rows.back().total, 0.0};
    for (const auto& m : res.log.rows) row.seconds += m.seconds;
    table.baseline_seen_pmd = res.final_eval.baseline_seen_pmd;
    table.baseline_unseen_pmd = res.final_eval.baseline_unseen_pmd;
    table.rows.push_back(row);
    if (name == "full" && trained_full) *trained_full = std::move(res);
  }
  return table;
}

// ---------------------------------------------------------------------------

ProbeResult robustness_probe(const ModelParams<float>& params, const ModelConfig& cfg, const PreparedPair& sample,
                             double noise_sigma, int n_shuffles, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const auto id = sample.id.cast<float>();
  const auto pose = sample.pose.cast<float>();
  const Index v = sample.id.v();
  ProbeResult r;

  const auto clean = predict(pose, id, params, cfg);
  r.clean_pmd = pmd(clean.cast<double>(), sample.gt).mean;

  auto noisy_pose = sample.pose;
  if (noise_sigma > 0) {
    std::normal_distribution<double> noise(0.0, noise_sigma);
    for (Index k = 0; k < noisy_pose.size(); ++k) noisy_pose[k] += noise(rng);
  }
  r.noisy_pmd = pmd(predict(noisy_pose.cast<float>(), id, params, cfg).cast<double>(), sample.gt).mean;
  r.noise_pmd_delta = noise_sigma > 0 ? r.noisy_pmd - r.clean_pmd : 0.0;

  std::vector<Tensor3<double>> outs;
  for (int s = 0; s < n_shuffles; ++s) {
    const auto perm = VertexPermutation::random(v, rng);
    outs.push_back(predict(permute_columns(pose, perm.indices()), id, params, cfg).cast<double>());
  }
  for (std::size_t a = 0; a < outs.size(); ++a) {
    for (std::size_t b = a + 1; b < outs.size(); ++b) r.shuffle_pmd_spread = std::max(r.shuffle_pmd_spread, pmd(outs[a], outs[b]).mean);
  }

  const auto perm = VertexPermutation::random(v, rng);
  const auto expected = permute_columns(clean, perm.indices());
  const auto joint = predict(permute_columns(pose, perm.indices()), permute_columns(id, perm.indices()), params, cfg);
  const auto id_only = predict(pose, permute_columns(id, perm.indices()), params, cfg);
  for (Index k = 0; k < joint.size(); ++k) {
    r.identity_shuffle_error = std::max(r.identity_shuffle_error, std::abs(static_cast<double>(joint[k] - expected[k])));
    r.identity_only_shuffle_deviation =
        std::max(r.identity_only_shuffle_deviation, std::abs(static_cast<double>(id_only[k] - expected[k])));
  }
  return r;
}

}  // namespace npt
