#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "npt/mesh.hpp"

namespace npt::synth {

/// Closed interval of joint angles in degrees. lo == hi pins the axis.
struct AngleRange {
  double lo = 0;
  double hi = 0;
};

/// Per-joint (x, y, z) rotation ranges.
using JointRanges = std::array<AngleRange, 3>;

struct BodyConfig {
  int ring_vertices = 10;  ///< vertices around each capsule ring
  int cap_rings = 2;       ///< latitude rings per hemispherical cap, equator included
  int mid_rings = 2;       ///< rings strictly inside the cylindrical part
  double skin_temperature = 0.1;
  /// Second-bone weights below this are dropped so mid-bone vertices move rigidly.
  double min_secondary_weight = 1e-3;
};

/// Capsule-segment humanoid with linear blend skinning. Lengths are in head
/// units. Joints are topologically ordered: parent[k] < k, joint 0 is the root.
class KinematicBody {
 public:
  static constexpr int kJoints = 12;

  explicit KinematicBody(BodyConfig cfg = {});

  int joint_count() const { return kJoints; }
  const std::vector<int>& parents() const { return parents_; }
  const std::vector<std::string>& joint_names() const { return names_; }
  const std::vector<Vec3>& rest_offsets() const { return offsets_; }
  const std::vector<Vec3>& rest_joints() const { return joints_; }
  const Mesh& template_mesh() const { return template_; }
  /// V x K row-stochastic skinning weights, at most two nonzeros per row.
  const Eigen::MatrixXd& skin_weights() const { return weights_; }
  /// Capsule each template vertex was generated on.
  const std::vector<int>& vertex_segment() const { return segment_of_; }
  /// Capsule axis endpoints (relative to the owning joint) and radius.
  const std::vector<Vec3>& segment_start() const { return seg_a_; }
  const std::vector<Vec3>& segment_end() const { return seg_b_; }
  const std::vector<double>& segment_radius() const { return seg_r_; }
  const BodyConfig& config() const { return cfg_; }

  /// Anatomically constrained default ranges, one entry per joint.
  static std::vector<JointRanges> default_ranges();

 private:
  BodyConfig cfg_;
  std::vector<int> parents_;
  std::vector<std::string> names_;
  std::vector<Vec3> offsets_;
  std::vector<Vec3> joints_;
  std::vector<Vec3> seg_a_;
  std::vector<Vec3> seg_b_;
  std::vector<double> seg_r_;
  Mesh template_;
  Eigen::MatrixXd weights_;
  std::vector<int> segment_of_;
};

/// Body shape: per-bone length and radius scales plus a global height scale.
struct IdentityParams {
  std::array<double, KinematicBody::kJoints> length_scale{};
  std::array<double, KinematicBody::kJoints> radius_scale{};
  double height_scale = 1;

  static IdentityParams neutral();
};

/// Per-joint Euler angles in degrees, applied x then y then z.
struct PoseParams {
  std::array<std::array<double, 3>, KinematicBody::kJoints> angles{};

  static PoseParams rest() { return {}; }
};

IdentityParams sample_identity(std::mt19937_64& rng);
PoseParams sample_pose(std::mt19937_64& rng, const std::vector<JointRanges>& ranges);

/// Rotation R = Rz * Ry * Rx for angles in degrees.
Eigen::Matrix3d euler_xyz(const std::array<double, 3>& degrees);

/// Forward kinematics plus linear blend skinning of the identity-scaled template.
Mesh skin_mesh(const KinematicBody& body, const IdentityParams& alpha, const PoseParams& beta);

/// Identity mesh, pose mesh and ground truth for one transfer problem.
/// gt = skin(alpha_id, beta_pose) and shares id_mesh's vertex order and faces.
struct PairSample {
  Mesh id_mesh;
  Mesh pose_mesh;
  Mesh gt_mesh;
  VertexPermutation id_perm;    ///< applied to id_mesh and gt_mesh
  VertexPermutation pose_perm;  ///< applied to pose_mesh only
  IdentityParams alpha_id, alpha_pose;
  PoseParams beta_id, beta_pose;
};

/// Builds a pair from explicit parameters. Each mesh is normalized to the unit
/// sphere independently after permutation.
PairSample build_pair(const KinematicBody& body, const IdentityParams& alpha_id, const PoseParams& beta_id,
                      const IdentityParams& alpha_pose, const PoseParams& beta_pose, std::mt19937_64& shuffle_rng,
                      bool shuffle = true);

/// Draws both identities and poses from rng, then builds the pair.
PairSample make_pair_sample(const KinematicBody& body, std::mt19937_64& rng,
                     const std::vector<JointRanges>& ranges = KinematicBody::default_ranges());

/// Exact skeleton transfer: re-skins the identity with the pose mesh's joint
/// angles and applies the identity's vertex order. Never reads pose_perm.
Mesh skeleton_oracle_transfer(const PairSample& sample, const KinematicBody& body);

/// Counter-based child seed derivation (splitmix64 of master + counter).
std::uint64_t child_seed(std::uint64_t master, std::uint64_t counter);

enum class Split { train, seen_pose, unseen_pose };
const char* split_name(Split s);

struct DatasetSpec {
  int train_identities = 8;
  int train_poses = 50;
  int eval_identities = 4;
  int seen_pairs_per_identity = 6;
  int unseen_pairs_per_identity = 6;
  std::uint64_t seed = 7;
  std::vector<JointRanges> ranges = KinematicBody::default_ranges();
  BodyConfig body;
};

/// Pair recipe: pool indices plus the child seed driving its shuffles (and,
/// for unseen poses, its freshly drawn joint angles). Train records index the
/// training pools; evaluation records index the held-out identities.
struct SampleRecord {
  Split split = Split::train;
  int id_identity = 0;
  int pose_identity = 0;
  int id_pose = 0;      ///< train_poses index; unused for unseen poses
  int target_pose = 0;  ///< train_poses index; unused for unseen poses
  std::uint64_t seed = 0;
};

/// Training pools and pair recipes. The train records are one fixed pairing
/// per identity x pose grid cell; the trainer redraws pairings every epoch.
struct Dataset {
  DatasetSpec spec;
  std::vector<IdentityParams> train_identities;
  std::vector<IdentityParams> eval_identities;
  std::vector<PoseParams> train_poses;
  std::vector<std::uint64_t> identity_seeds;  ///< train identities, then eval identities
  std::vector<std::uint64_t> pose_seeds;
  std::vector<SampleRecord> samples;

  PairSample sample(const KinematicBody& body, const SampleRecord& rec) const;
  std::vector<PairSample> eval_samples(const KinematicBody& body) const;
  std::vector<SampleRecord> records(Split split) const;
  /// Identity mesh (id_identity, id_pose), pose mesh (pose_identity, target_pose).
  PairSample train_pair(const KinematicBody& body, int id_identity, int id_pose, int pose_identity, int target_pose,
                        std::mt19937_64& shuffle_rng) const;
};

Dataset make_dataset(const DatasetSpec& spec);

/// Writes manifest.json and one OBJ triple ({idx}_id/pose/gt.obj) per record.
void write_dataset(const Dataset& ds, const KinematicBody& body, const std::filesystem::path& dir);

/// Reads manifest.json and regenerates the dataset from its seeds.
Dataset load_dataset(const std::filesystem::path& dir);

std::string manifest_json(const Dataset& ds);
Dataset dataset_from_manifest(const std::string& json_text);

std::string ranges_json(const std::vector<JointRanges>& ranges);
std::vector<JointRanges> ranges_from_json(const std::string& json_text);

}  // namespace npt::synth
