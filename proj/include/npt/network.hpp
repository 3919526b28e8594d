#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <unordered_map>
#include <vector>

#include "npt/autodiff.hpp"

namespace npt {

/// Channel widths of the encoder (c1, c2, c3) and decoder (w2, w3). The
/// decoder's first block runs at c3 + 3 because the identity coordinates are
/// concatenated to the pose features.
struct Widths {
  Index c1 = 16;
  Index c2 = 32;
  Index c3 = 128;
  Index w2 = 64;
  Index w3 = 32;

  static Widths desk() { return {}; }
  static Widths paper() { return {64, 128, 1024, 513, 256}; }
  bool operator==(const Widths&) const = default;
};

enum class Variant { full, concat1, no_spadain, maxpool };

const char* variant_name(Variant v);
Variant parse_variant(const std::string& name);

struct ModelConfig {
  Widths widths;
  Variant variant = Variant::full;
  double eps = 1e-5;
  std::uint64_t seed = 1;
  double gamma_bias_init = 0;  ///< initial bias of every SPAdaIN gamma convolution
};

template <typename T>
struct LinearParams {
  Tensor3<T> weight;  ///< [1, Cout, Cin]
  Tensor3<T> bias;    ///< [1, Cout, 1]
};

/// Spatially adaptive modulation: gamma and beta are 1x1 convolutions of the
/// identity mesh coordinates (3 -> C).
template <typename T>
struct SpadainParams {
  LinearParams<T> gamma;
  LinearParams<T> beta;
};

template <typename T>
struct ResBlockParams {
  SpadainParams<T> spadain_1, spadain_2, spadain_skip;
  LinearParams<T> conv_1, conv_2, conv_skip;
};

template <typename T>
struct ModelParams {
  LinearParams<T> enc_conv1, enc_conv2, enc_conv3;
  LinearParams<T> dec_conv0;
  ResBlockParams<T> resblock_1;
  LinearParams<T> dec_conv1;
  ResBlockParams<T> resblock_2;
  LinearParams<T> dec_conv2;
  ResBlockParams<T> resblock_3;
  LinearParams<T> dec_conv_out;

  /// Visits every tensor the variant uses, in a fixed order, with its stable
  /// checkpoint name (e.g. "resblock_2.spadain_skip.gamma.weight").
  void visit(const ModelConfig& cfg, const std::function<void(const std::string&, Tensor3<T>&)>& f);
  void visit(const ModelConfig& cfg, const std::function<void(const std::string&, const Tensor3<T>&)>& f) const;

  Index parameter_count(const ModelConfig& cfg) const;

  template <typename U>
  ModelParams<U> cast() const;
};

/// Binds parameter tensors to tape leaves for one forward pass.
template <typename T>
class ParamBinder {
 public:
  ParamBinder(Tape<T>& tape, bool requires_grad) : tape_(tape), requires_grad_(requires_grad) {}

  Var<T> operator()(const Tensor3<T>& param);
  /// Routes every later use of `param` to `v` (used to differentiate w.r.t. a
  /// substitute leaf).
  void bind_as(const Tensor3<T>& param, Var<T> v) { bound_[&param] = v; }
  /// Leaf recorded for `param`, or an invalid Var if the pass never used it.
  Var<T> find(const Tensor3<T>& param) const;

 private:
  Tape<T>& tape_;
  bool requires_grad_;
  std::unordered_map<const Tensor3<T>*, Var<T>> bound_;
};

/// Optional view into every SPAdaIN unit of a pass: the unit input and its
/// normalized (pre-modulation) activation.
template <typename T>
struct SpadainTrace {
  std::vector<std::string> names;
  std::vector<Var<T>> inputs;
  std::vector<Var<T>> normalized;
};

/// Pose features: three (1x1 conv, instance norm, relu) stages, 3 -> c1 -> c2 -> c3.
template <typename T>
Var<T> encode_pose(Var<T> pose_mesh, const ModelParams<T>& p, const ModelConfig& cfg, ParamBinder<T>& bind);

/// gamma(M) * instance_norm(h) + beta(M). With normalize=false the instance
/// norm is skipped and h is modulated directly.
template <typename T>
Var<T> spadain(Var<T> h, Var<T> id_mesh, const SpadainParams<T>& u, double eps, ParamBinder<T>& bind,
               bool normalize = true, SpadainTrace<T>* trace = nullptr, const std::string& name = "spadain");

struct ResBlockOptions {
  bool modulate = true;          ///< false: plain instance norm in place of SPAdaIN
  bool normalize_input = true;   ///< false: units reading the block input skip instance norm
};

/// main = relu(conv_2(spadain_2(relu(conv_1(spadain_1(h)))))), skip =
/// relu(conv_skip(spadain_skip(h))); returns main + skip.
template <typename T>
Var<T> spadain_resblock(Var<T> h, Var<T> id_mesh, const ResBlockParams<T>& r, double eps, ParamBinder<T>& bind,
                        ResBlockOptions opts = {}, SpadainTrace<T>* trace = nullptr,
                        const std::string& name = "resblock");

/// Full pose transfer. Inputs are [N, 3, V] unit-sphere meshes with equal N
/// and V; the output follows the identity mesh's vertex order.
template <typename T>
Var<T> forward(Var<T> pose_mesh, Var<T> id_mesh, const ModelParams<T>& p, const ModelConfig& cfg,
               ParamBinder<T>& bind, SpadainTrace<T>* trace = nullptr);

/// Convenience inference without gradients.
template <typename T>
Tensor3<T> predict(const Tensor3<T>& pose_mesh, const Tensor3<T>& id_mesh, const ModelParams<T>& p,
                   const ModelConfig& cfg);

/// Correctly shaped, zero-filled parameters for cfg.
template <typename T>
ModelParams<T> zero_model_params(const ModelConfig& cfg);

/// Uniform(-s, s) weights with s = sqrt(1 / fan_in), zero biases.
template <typename T>
ModelParams<T> init_params(const ModelConfig& cfg, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Checkpoints: "NPT1", u64 LE header length, JSON header, f32 LE payload.

class CheckpointError : public std::runtime_error {
 public:
  enum class Kind { io, bad_magic, version, truncated, shape_mismatch, header };
  CheckpointError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

struct Checkpoint {
  ModelConfig config;
  ModelParams<float> params;
};

std::string encode_checkpoint(const ModelParams<float>& p, const ModelConfig& cfg);
Checkpoint decode_checkpoint(std::string_view bytes);
/// Decodes and additionally requires the stored widths and variant to match `expected`.
Checkpoint decode_checkpoint(std::string_view bytes, const ModelConfig& expected);

void save_checkpoint(const ModelParams<float>& p, const ModelConfig& cfg, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path, const ModelConfig& expected);

}  // namespace npt
