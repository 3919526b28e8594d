#include <fstream>
#include <iomanip>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "npt/synth.hpp"

namespace npt::synth {

using nlohmann::json;

namespace {

constexpr std::uint64_t kPoseStream = 1'000'000;
constexpr std::uint64_t kSampleStream = 2'000'000;

Mesh skin_permute_normalize(const KinematicBody& body, const IdentityParams& a, const PoseParams& b,
                            const VertexPermutation& perm, const char* name) {
  Mesh m = normalize_unit_sphere(permute_vertices(skin_mesh(body, a, b), perm)).mesh;
  m.name = name;
  return m;
}

int draw_index(std::mt19937_64& rng, int count) {
  return static_cast<int>(rng() % static_cast<std::uint64_t>(count));
}

/// Uniform draw from [0, count) avoiding `avoid` when count > 1.
int draw_other(std::mt19937_64& rng, int count, int avoid) {
  if (count <= 1) return 0;
  const int k = draw_index(rng, count - 1);
  return k >= avoid ? k + 1 : k;
}

}  // namespace

std::uint64_t child_seed(std::uint64_t master, std::uint64_t counter) {
  std::uint64_t z = master + 0x9E3779B97F4A7C15ull * (counter + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

const char* split_name(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::seen_pose: return "seen";
    case Split::unseen_pose: return "unseen";
  }
  return "?";
}

PairSample build_pair(const KinematicBody& body, const IdentityParams& alpha_id, const PoseParams& beta_id,
                      const IdentityParams& alpha_pose, const PoseParams& beta_pose, std::mt19937_64& shuffle_rng,
                      bool shuffle) {
  const Index nv = body.template_mesh().vertex_count();
  PairSample s;
  s.alpha_id = alpha_id;
  s.alpha_pose = alpha_pose;
  s.beta_id = beta_id;
  s.beta_pose = beta_pose;
  s.id_perm = shuffle ? VertexPermutation::random(nv, shuffle_rng) : VertexPermutation::identity(nv);
  s.pose_perm = shuffle ? VertexPermutation::random(nv, shuffle_rng) : VertexPermutation::identity(nv);
  s.id_mesh = skin_permute_normalize(body, alpha_id, beta_id, s.id_perm, "id");
  s.pose_mesh = skin_permute_normalize(body, alpha_pose, beta_pose, s.pose_perm, "pose");
  s.gt_mesh = skin_permute_normalize(body, alpha_id, beta_pose, s.id_perm, "gt");
  return s;
}

PairSample make_pair_sample(const KinematicBody& body, std::mt19937_64& rng, const std::vector<JointRanges>& ranges) {
  const auto a1 = sample_identity(rng);
  const auto b1 = sample_pose(rng, ranges);
  const auto a2 = sample_identity(rng);
  const auto b2 = sample_pose(rng, ranges);
  return build_pair(body, a1, b1, a2, b2, rng);
}

Mesh skeleton_oracle_transfer(const PairSample& sample, const KinematicBody& body) {
  return skin_permute_normalize(body, sample.alpha_id, sample.beta_pose, sample.id_perm, "oracle");
}

// ---------------------------------------------------------------------------

Dataset make_dataset(const DatasetSpec& spec) {
  if (spec.train_identities < 1 || spec.train_poses < 1 || spec.eval_identities < 1 ||
      spec.seen_pairs_per_identity < 0 || spec.unseen_pairs_per_identity < 0) {
    throw std::invalid_argument("dataset counts must be at least 1");
  }
  Dataset ds;
  ds.spec = spec;
  const int n_ids = spec.train_identities + spec.eval_identities;
  for (int k = 0; k < n_ids; ++k) {
    const auto seed = child_seed(spec.seed, static_cast<std::uint64_t>(k));
    std::mt19937_64 rng(seed);
    ds.identity_seeds.push_back(seed);
    (k < spec.train_identities ? ds.train_identities : ds.eval_identities).push_back(sample_identity(rng));
  }
  for (int j = 0; j < spec.train_poses; ++j) {
    const auto seed = child_seed(spec.seed, kPoseStream + static_cast<std::uint64_t>(j));
    std::mt19937_64 rng(seed);
    ds.pose_seeds.push_back(seed);
    ds.train_poses.push_back(sample_pose(rng, spec.ranges));
  }

  std::uint64_t counter = 0;
  auto next_seed = [&] { return child_seed(spec.seed, kSampleStream + counter++); };
  for (int i = 0; i < spec.train_identities; ++i) {
    for (int j = 0; j < spec.train_poses; ++j) {
      SampleRecord r;
      r.split = Split::train;
      r.seed = next_seed();
      std::mt19937_64 rng(r.seed);
      r.id_identity = i;
      r.id_pose = j;
      r.pose_identity = draw_index(rng, spec.train_identities);
      r.target_pose = draw_other(rng, spec.train_poses, j);
      ds.samples.push_back(r);
    }
  }
  for (Split split : {Split::seen_pose, Split::unseen_pose}) {
    const int per_id = split == Split::seen_pose ? spec.seen_pairs_per_identity : spec.unseen_pairs_per_identity;
    for (int e = 0; e < spec.eval_identities; ++e) {
      for (int p = 0; p < per_id; ++p) {
        SampleRecord r;
        r.split = split;
        r.seed = next_seed();
        std::mt19937_64 rng(r.seed);
        r.id_identity = e;
        r.pose_identity = draw_other(rng, spec.eval_identities, e);
        if (split == Split::seen_pose) {
          r.id_pose = draw_index(rng, spec.train_poses);
          r.target_pose = draw_other(rng, spec.train_poses, r.id_pose);
        }
        ds.samples.push_back(r);
      }
    }
  }
  return ds;
}

PairSample Dataset::sample(const KinematicBody& body, const SampleRecord& rec) const {
  // Index draws consumed the record seed's own stream; shuffles use a child.
  std::mt19937_64 rng(child_seed(rec.seed, 1));
  switch (rec.split) {
    case Split::train:
      return build_pair(body, train_identities.at(static_cast<std::size_t>(rec.id_identity)),
                        train_poses.at(static_cast<std::size_t>(rec.id_pose)),
                        train_identities.at(static_cast<std::size_t>(rec.pose_identity)),
                        train_poses.at(static_cast<std::size_t>(rec.target_pose)), rng);
    case Split::seen_pose:
      return build_pair(body, eval_identities.at(static_cast<std::size_t>(rec.id_identity)),
                        train_poses.at(static_cast<std::size_t>(rec.id_pose)),
                        eval_identities.at(static_cast<std::size_t>(rec.pose_identity)),
                        train_poses.at(static_cast<std::size_t>(rec.target_pose)), rng);
    case Split::unseen_pose: {
      const auto b1 = sample_pose(rng, spec.ranges);
      const auto b2 = sample_pose(rng, spec.ranges);
      return build_pair(body, eval_identities.at(static_cast<std::size_t>(rec.id_identity)), b1,
                        eval_identities.at(static_cast<std::size_t>(rec.pose_identity)), b2, rng);
    }
  }
  throw std::logic_error("unknown split");
}

std::vector<SampleRecord> Dataset::records(Split split) const {
  std::vector<SampleRecord> out;
  for (const auto& r : samples) {
    if (r.split == split) out.push_back(r);
  }
  return out;
}

std::vector<PairSample> Dataset::eval_samples(const KinematicBody& body) const {
  std::vector<PairSample> out;
  for (const auto& r : samples) {
    if (r.split != Split::train) out.push_back(sample(body, r));
  }
  return out;
}

PairSample Dataset::train_pair(const KinematicBody& body, int id_identity, int id_pose, int pose_identity,
                               int target_pose, std::mt19937_64& shuffle_rng) const {
  return build_pair(body, train_identities.at(static_cast<std::size_t>(id_identity)),
                    train_poses.at(static_cast<std::size_t>(id_pose)),
                    train_identities.at(static_cast<std::size_t>(pose_identity)),
                    train_poses.at(static_cast<std::size_t>(target_pose)), shuffle_rng);
}

// ---------------------------------------------------------------------------

namespace {

json ranges_to_json_value(const std::vector<JointRanges>& ranges) {
  json out = json::array();
  for (const auto& joint : ranges) {
    json axes = json::array();
    for (const auto& r : joint) axes.push_back({r.lo, r.hi});
    out.push_back(axes);
  }
  return out;
}

std::vector<JointRanges> ranges_from_json_value(const json& j) {
  std::vector<JointRanges> out;
  for (const auto& joint : j) {
    if (joint.size() != 3) throw std::invalid_argument("pose ranges: each joint needs 3 axes");
    JointRanges jr;
    for (std::size_t a = 0; a < 3; ++a) {
      const auto& axis = joint[a];
      if (axis.is_number()) {
        jr[a] = {axis.get<double>(), axis.get<double>()};
      } else {
        jr[a] = {axis.at(0).get<double>(), axis.at(1).get<double>()};
      }
      if (jr[a].lo > jr[a].hi) throw std::invalid_argument("pose ranges: inverted range");
    }
    out.push_back(jr);
  }
  if (static_cast<int>(out.size()) != KinematicBody::kJoints) {
    throw std::invalid_argument("pose ranges: expected " + std::to_string(KinematicBody::kJoints) + " joints");
  }
  return out;
}

Split split_from_name(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "seen") return Split::seen_pose;
  if (s == "unseen") return Split::unseen_pose;
  throw std::invalid_argument("manifest: unknown split '" + s + "'");
}

}  // namespace

std::string ranges_json(const std::vector<JointRanges>& ranges) { return ranges_to_json_value(ranges).dump(); }

std::vector<JointRanges> ranges_from_json(const std::string& json_text) {
  auto j = json::parse(json_text);
  if (j.is_object()) j = j.at("ranges");
  return ranges_from_json_value(j);
}

std::string manifest_json(const Dataset& ds) {
  const auto& s = ds.spec;
  json j;
  j["version"] = 1;
  j["seed"] = s.seed;
  j["counts"] = {{"train_identities", s.train_identities},
                 {"train_poses", s.train_poses},
                 {"eval_identities", s.eval_identities},
                 {"seen_pairs_per_identity", s.seen_pairs_per_identity},
                 {"unseen_pairs_per_identity", s.unseen_pairs_per_identity}};
  j["body"] = {{"ring_vertices", s.body.ring_vertices},
               {"cap_rings", s.body.cap_rings},
               {"mid_rings", s.body.mid_rings},
               {"skin_temperature", s.body.skin_temperature},
               {"min_secondary_weight", s.body.min_secondary_weight}};
  j["ranges"] = ranges_to_json_value(s.ranges);
  j["identity_seeds"] = ds.identity_seeds;
  j["pose_seeds"] = ds.pose_seeds;
  json samples = json::array();
  for (std::size_t i = 0; i < ds.samples.size(); ++i) {
    const auto& r = ds.samples[i];
    samples.push_back({{"index", i},
                       {"split", split_name(r.split)},
                       {"seed", r.seed},
                       {"id_identity", r.id_identity},
                       {"pose_identity", r.pose_identity},
                       {"id_pose", r.id_pose},
                       {"target_pose", r.target_pose}});
  }
  j["samples"] = samples;
  return j.dump(1);
}

Dataset dataset_from_manifest(const std::string& json_text) {
  const auto j = json::parse(json_text);
  if (j.at("version").get<int>() != 1) throw std::invalid_argument("manifest: unsupported version");
  Dataset ds;
  auto& s = ds.spec;
  s.seed = j.at("seed").get<std::uint64_t>();
  const auto& c = j.at("counts");
  s.train_identities = c.at("train_identities").get<int>();
  s.train_poses = c.at("train_poses").get<int>();
  s.eval_identities = c.at("eval_identities").get<int>();
  s.seen_pairs_per_identity = c.at("seen_pairs_per_identity").get<int>();
  s.unseen_pairs_per_identity = c.at("unseen_pairs_per_identity").get<int>();
  const auto& b = j.at("body");
  s.body.ring_vertices = b.at("ring_vertices").get<int>();
  s.body.cap_rings = b.at("cap_rings").get<int>();
  s.body.mid_rings = b.at("mid_rings").get<int>();
  s.body.skin_temperature = b.at("skin_temperature").get<double>();
  s.body.min_secondary_weight = b.at("min_secondary_weight").get<double>();
  s.ranges = ranges_from_json_value(j.at("ranges"));
  ds.identity_seeds = j.at("identity_seeds").get<std::vector<std::uint64_t>>();
  ds.pose_seeds = j.at("pose_seeds").get<std::vector<std::uint64_t>>();
  if (static_cast<int>(ds.identity_seeds.size()) != s.train_identities + s.eval_identities ||
      static_cast<int>(ds.pose_seeds.size()) != s.train_poses) {
    throw std::invalid_argument("manifest: seed lists do not match counts");
  }
  for (std::size_t k = 0; k < ds.identity_seeds.size(); ++k) {
    std::mt19937_64 rng(ds.identity_seeds[k]);
    (static_cast<int>(k) < s.train_identities ? ds.train_identities : ds.eval_identities).push_back(sample_identity(rng));
  }
  for (auto seed : ds.pose_seeds) {
    std::mt19937_64 rng(seed);
    ds.train_poses.push_back(sample_pose(rng, s.ranges));
  }
  for (const auto& r : j.at("samples")) {
    SampleRecord rec;
    rec.split = split_from_name(r.at("split").get<std::string>());
    rec.seed = r.at("seed").get<std::uint64_t>();
    rec.id_identity = r.at("id_identity").get<int>();
    rec.pose_identity = r.at("pose_identity").get<int>();
    rec.id_pose = r.at("id_pose").get<int>();
    rec.target_pose = r.at("target_pose").get<int>();
    ds.samples.push_back(rec);
  }
  return ds;
}

void write_dataset(const Dataset& ds, const KinematicBody& body, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  for (std::size_t i = 0; i < ds.samples.size(); ++i) {
    const auto pair = ds.sample(body, ds.samples[i]);
    std::ostringstream idx;
    idx << std::setw(5) << std::setfill('0') << i;
    write_obj(pair.id_mesh, dir / (idx.str() + "_id.obj"));
    write_obj(pair.pose_mesh, dir / (idx.str() + "_pose.obj"));
    write_obj(pair.gt_mesh, dir / (idx.str() + "_gt.obj"));
  }
  // Manifest last: its presence marks a complete dataset.
  write_file_atomic(dir / "manifest.json", manifest_json(ds));
}

Dataset load_dataset(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw std::runtime_error("cannot open " + (dir / "manifest.json").string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return dataset_from_manifest(ss.str());
}

}  // namespace npt::synth
