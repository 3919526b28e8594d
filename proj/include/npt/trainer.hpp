#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "npt/network.hpp"
#include "npt/objectives.hpp"
#include "npt/optim.hpp"
#include "npt/synth.hpp"

namespace npt {

enum class Precision { f32, f64 };

const char* precision_name(Precision p);
Precision parse_precision(const std::string& name);

struct TrainConfig {
  double lr = 5e-5;
  int batch_size = 8;
  int epochs = 30;
  double lambda_edge = kDefaultEdgeLambda;
  ModelConfig model;
  std::uint64_t seed = 1;  ///< pair sampling and shuffles; model init uses model.seed
  Precision precision = Precision::f32;
  int checkpoint_every = 0;  ///< epochs between checkpoints; 0 = only the final one
  std::filesystem::path checkpoint_dir;  ///< empty: no checkpoints written
  bool evaluate_each_epoch = true;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;

  void validate() const;
};

/// "desk", "paper" or five comma-separated integers c1,c2,c3,w2,w3.
Widths parse_widths(const std::string& text);
std::string widths_string(const Widths& w);

/// Applies the fields present in a JSON object (lr, batch_size, epochs,
/// lambda_edge, variant, widths, seed, model_seed, precision,
/// checkpoint_every, adam_beta1, adam_beta2, adam_eps) on top of `base`.
/// Unknown keys are rejected.
TrainConfig train_config_from_json(const std::string& json_text, TrainConfig base = {});
std::string train_config_json(const TrainConfig& cfg);

struct EpochMetrics {
  int epoch = 0;
  double rec = 0;
  double edge = 0;
  double total = 0;
  double seen_pmd = 0;
  double unseen_pmd = 0;
  double seconds = 0;
};

struct MetricsLog {
  std::vector<EpochMetrics> rows;

  /// With include_timing=false the seconds column is written as 0 so that
  /// runs with the same seed produce byte-identical files.
  std::string csv(bool include_timing = true) const;
  void write_csv(const std::filesystem::path& path, bool include_timing = true) const;
};

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct EvalSample {
  synth::Split split = synth::Split::seen_pose;
  double pmd = 0;
  double baseline_pmd = 0;  ///< prediction := identity mesh
};

struct EvalResult {
  double seen_pmd = 0;
  double unseen_pmd = 0;
  double baseline_seen_pmd = 0;
  double baseline_unseen_pmd = 0;
  std::vector<EvalSample> samples;
};

/// A pair prepared for the network: tensors plus the identity mesh's edges.
struct PreparedPair {
  synth::Split split = synth::Split::train;
  Mesh id_mesh;
  Tensor3<double> id, pose, gt;
  EdgeList edges;
};

PreparedPair prepare_pair(const synth::PairSample& s, synth::Split split);
std::vector<PreparedPair> prepare_eval_set(const synth::Dataset& ds, const synth::KinematicBody& body);

/// Worker count for evaluation: NPT_THREADS if set, else 1.
int eval_threads();

EvalResult evaluate(const ModelParams<float>& params, const ModelConfig& cfg, const std::vector<PreparedPair>& eval_set);

struct TrainResult {
  ModelParams<float> params;
  MetricsLog log;
  std::vector<std::filesystem::path> checkpoints;
  EvalResult final_eval;
};

using EpochCallback = std::function<void(const EpochMetrics&)>;

TrainResult train(const synth::Dataset& ds, const synth::KinematicBody& body, const TrainConfig& cfg,
                  const EpochCallback& on_epoch = {});

/// Repeated steps on one fixed batch; returns the total loss before each step
/// followed by the final loss.
std::vector<double> overfit_single(const PreparedPair& pair, const TrainConfig& cfg, int steps);

struct AblationRow {
  std::string name;
  double seen_pmd = 0;
  double unseen_pmd = 0;
  double final_loss = 0;
  double seconds = 0;
};

struct AblationTable {
  std::vector<AblationRow> rows;
  double baseline_seen_pmd = 0;
  double baseline_unseen_pmd = 0;

  const AblationRow& at(const std::string& name) const;
  std::string csv() const;
  std::string text() const;
};

inline const std::vector<std::string>& ablation_names() {
  static const std::vector<std::string> names{"full", "no_edge", "no_spadain", "concat1", "maxpool"};
  return names;
}

/// Trains every ablation under the same budget and seed. `only` restricts the
/// run to a subset of ablation_names(). When `trained` is non-null the full
/// model's result is stored there.
AblationTable run_ablation_suite(const synth::Dataset& ds, const synth::KinematicBody& body, const TrainConfig& base,
                                 const std::vector<std::string>& only = {}, TrainResult* trained_full = nullptr,
                                 const std::function<void(const std::string&, const EpochMetrics&)>& on_epoch = {});

struct ProbeResult {
  double clean_pmd = 0;
  double noisy_pmd = 0;
  double noise_pmd_delta = 0;      ///< noisy - clean
  double shuffle_pmd_spread = 0;   ///< max pairwise PMD between shuffled-pose outputs
  /// max |forward(pi pose, pi id) - pi forward(pose, id)|: exact up to rounding.
  double identity_shuffle_error = 0;
  /// max |forward(pose, pi id) - pi forward(pose, id)|: the identity order alone
  /// also re-pairs pose features with identity vertices, so this is learned,
  /// not structural.
  double identity_only_shuffle_deviation = 0;
};

ProbeResult robustness_probe(const ModelParams<float>& params, const ModelConfig& cfg, const PreparedPair& sample,
                             double noise_sigma, int n_shuffles, std::uint64_t seed);

}  // namespace npt
