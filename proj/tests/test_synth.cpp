#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>

#include "npt/objectives.hpp"
#include "npt/synth.hpp"

using namespace npt;
using namespace npt::synth;

namespace {

const KinematicBody& body() {
  static const KinematicBody b;
  return b;
}

double max_vertex_gap(const Mesh& a, const Mesh& b) {
  double m = 0;
  for (std::size_t i = 0; i < a.vertices.size(); ++i) m = std::max(m, (a.vertices[i] - b.vertices[i]).norm());
  return m;
}

std::vector<JointRanges> pinned_ranges() {
  return std::vector<JointRanges>(KinematicBody::kJoints, JointRanges{});
}

DatasetSpec small_spec() {
  DatasetSpec spec;
  spec.train_identities = 3;
  spec.train_poses = 5;
  spec.eval_identities = 2;
  spec.seen_pairs_per_identity = 2;
  spec.unseen_pairs_per_identity = 2;
  spec.seed = 99;
  return spec;
}

}  // namespace

TEST_CASE("kinematic body structure") {
  const auto& b = body();
  const auto& parents = b.parents();
  CHECK(parents[0] < 0);
  CHECK(std::count_if(parents.begin(), parents.end(), [](int p) { return p < 0; }) == 1);
  for (int k = 1; k < b.joint_count(); ++k) CHECK(parents[static_cast<std::size_t>(k)] < k);

  const auto& t = b.template_mesh();
  CHECK_NOTHROW(t.validate());
  CHECK(t.vertex_count() >= 600);
  CHECK(t.vertex_count() <= 1500);
  const auto& w = b.skin_weights();
  CHECK(w.rows() == t.vertex_count());
  CHECK(w.cols() == b.joint_count());
  for (Index v = 0; v < w.rows(); ++v) {
    CHECK(std::abs(w.row(v).sum() - 1.0) < 1e-6);
    int nonzero = 0;
    for (Index k = 0; k < w.cols(); ++k) {
      CHECK(w(v, k) >= 0.0);
      nonzero += w(v, k) != 0.0;
    }
    CHECK(nonzero <= 4);
  }
}

TEST_CASE("parameter sampling") {
  SUBCASE("identity scales stay in range") {
    std::mt19937_64 rng(1);
    for (int i = 0; i < 200; ++i) {
      const auto a = sample_identity(rng);
      for (double s : a.length_scale) CHECK((s >= 0.7 && s <= 1.3));
      for (double s : a.radius_scale) CHECK((s >= 0.7 && s <= 1.3));
      CHECK((a.height_scale >= 0.9 && a.height_scale <= 1.1));
    }
  }
  SUBCASE("collapsed ranges give the rest pose") {
    std::mt19937_64 rng(2);
    const auto p = sample_pose(rng, pinned_ranges());
    for (const auto& joint : p.angles)
      for (double a : joint) CHECK(a == 0.0);
  }
  SUBCASE("knee flexion stays within 0..100 degrees") {
    std::mt19937_64 rng(3);
    const auto ranges = KinematicBody::default_ranges();
    const auto& names = body().joint_names();
    const auto l = std::find(names.begin(), names.end(), "l_knee") - names.begin();
    const auto r = std::find(names.begin(), names.end(), "r_knee") - names.begin();
    REQUIRE(l < static_cast<long>(names.size()));
    REQUIRE(r < static_cast<long>(names.size()));
    double lo = 1e9, hi = -1e9;
    for (int i = 0; i < 10000; ++i) {
      const auto p = sample_pose(rng, ranges);
      for (auto k : {l, r}) {
        lo = std::min(lo, p.angles[static_cast<std::size_t>(k)][0]);
        hi = std::max(hi, p.angles[static_cast<std::size_t>(k)][0]);
      }
    }
    CHECK(lo >= 0.0);
    CHECK(hi <= 100.0);
    CHECK(hi - lo > 90.0);
  }
  SUBCASE("same seed, same sequence") {
    std::mt19937_64 a(4), b(4);
    for (int i = 0; i < 5; ++i) {
      CHECK(sample_pose(a, KinematicBody::default_ranges()).angles == sample_pose(b, KinematicBody::default_ranges()).angles);
      CHECK(sample_identity(a).length_scale == sample_identity(b).length_scale);
    }
  }
  SUBCASE("inverted range is rejected") {
    auto ranges = pinned_ranges();
    ranges[3][1] = {10, -10};
    std::mt19937_64 rng(5);
    CHECK_THROWS_AS(sample_pose(rng, ranges), std::invalid_argument);
  }
}

TEST_CASE("skinning") {
  const auto& b = body();
  SUBCASE("neutral identity at rest reproduces the template bit-exactly") {
    const auto m = skin_mesh(b, IdentityParams::neutral(), PoseParams::rest());
    CHECK(m.vertices == b.template_mesh().vertices);
    CHECK(m.faces == b.template_mesh().faces);
  }
  SUBCASE("rotating the root rotates every vertex about the root joint") {
    std::mt19937_64 rng(6);
    const auto alpha = sample_identity(rng);
    const auto rest = skin_mesh(b, alpha, PoseParams::rest());
    auto pose = PoseParams::rest();
    pose.angles[0] = {25.0, -40.0, 70.0};
    const auto rotated = skin_mesh(b, alpha, pose);
    const Eigen::Matrix3d r = euler_xyz(pose.angles[0]);
    // The root joint position is identity-independent only up to scaling, so
    // recover it as the fixed point: the pelvis rest position.
    const Vec3 root = b.rest_joints()[0] * alpha.height_scale;
    double worst = 0;
    for (std::size_t v = 0; v < rest.vertices.size(); ++v) {
      const Vec3 expect = r * (rest.vertices[v] - root) + root;
      worst = std::max(worst, (expect - rotated.vertices[v]).norm());
    }
    CHECK(worst < 1e-9);
  }
  SUBCASE("Euler order is x, then y, then z") {
    const Eigen::Matrix3d r = euler_xyz({90.0, 0.0, 90.0});
    // x first maps y to z; z rotation then leaves z fixed.
    CHECK((r * Vec3(0, 1, 0) - Vec3(0, 0, 1)).norm() < 1e-12);
    // x leaves x fixed; z then maps x to y.
    CHECK((r * Vec3(1, 0, 0) - Vec3(0, 1, 0)).norm() < 1e-12);
  }
  SUBCASE("rigid parts keep their edge lengths under any pose") {
    std::mt19937_64 rng(7);
    const auto alpha = sample_identity(rng);
    const auto rest = skin_mesh(b, alpha, PoseParams::rest());
    const auto posed = skin_mesh(b, alpha, sample_pose(rng, KinematicBody::default_ranges()));
    const auto& w = b.skin_weights();
    const auto edges = build_edge_list(rest);
    int rigid_edges = 0;
    for (std::size_t k = 0; k < edges.size(); ++k) {
      const Index p = edges.from[k], q = edges.to[k];
      bool same_bone = false;
      for (Index j = 0; j < w.cols(); ++j) same_bone |= w(p, j) == 1.0 && w(q, j) == 1.0;
      if (!same_bone) continue;
      ++rigid_edges;
      const double before = (rest.vertices[static_cast<std::size_t>(p)] - rest.vertices[static_cast<std::size_t>(q)]).norm();
      const double after = (posed.vertices[static_cast<std::size_t>(p)] - posed.vertices[static_cast<std::size_t>(q)]).norm();
      CHECK(std::abs(before - after) < 1e-6);
    }
    CHECK(rigid_edges > 0);
  }
}

TEST_CASE("pair samples") {
  const auto& b = body();
  std::mt19937_64 rng(8);
  SUBCASE("structure and ground truth") {
    for (int i = 0; i < 5; ++i) {
      const auto s = make_pair_sample(b, rng);
      CHECK(s.gt_mesh.faces == s.id_mesh.faces);
      CHECK(s.id_mesh.vertex_count() == s.pose_mesh.vertex_count());
      CHECK_NOTHROW(s.id_mesh.validate());
      CHECK_NOTHROW(s.pose_mesh.validate());
      // gt = skin(alpha_id, beta_pose), permuted by the identity's order, normalized.
      const auto expect = normalize_unit_sphere(permute_vertices(skin_mesh(b, s.alpha_id, s.beta_pose), s.id_perm)).mesh;
      CHECK(max_vertex_gap(expect, s.gt_mesh) == 0.0);
      CHECK(pmd(s.id_mesh, s.gt_mesh) > 0.0);
      CHECK_FALSE(s.id_perm.is_identity());
      CHECK_FALSE(s.pose_perm.is_identity());
    }
  }
  SUBCASE("equal parameters give a zero-distance target") {
    const auto a = sample_identity(rng);
    const auto p = sample_pose(rng, KinematicBody::default_ranges());
    const auto s = build_pair(b, a, p, a, p, rng);
    CHECK(pmd(s.gt_mesh, s.id_mesh) == 0.0);
  }
  SUBCASE("unshuffled id and gt differ only by pose") {
    const auto a1 = sample_identity(rng), a2 = sample_identity(rng);
    const auto ranges = KinematicBody::default_ranges();
    const auto s = build_pair(b, a1, sample_pose(rng, ranges), a2, sample_pose(rng, ranges), rng, false);
    // Normalization rescales both meshes, so compare rigid edge lengths after undoing it.
    const auto id_raw = skin_mesh(b, s.alpha_id, s.beta_id);
    const auto gt_raw = skin_mesh(b, s.alpha_id, s.beta_pose);
    const auto& w = b.skin_weights();
    std::map<int, std::vector<double>> id_len, gt_len;
    const auto edges = build_edge_list(s.id_mesh);
    for (std::size_t k = 0; k < edges.size(); ++k) {
      const Index p = edges.from[k], q = edges.to[k];
      for (Index j = 0; j < w.cols(); ++j) {
        if (w(p, j) == 1.0 && w(q, j) == 1.0) {
          id_len[static_cast<int>(j)].push_back((id_raw.vertices[static_cast<std::size_t>(p)] - id_raw.vertices[static_cast<std::size_t>(q)]).norm());
          gt_len[static_cast<int>(j)].push_back((gt_raw.vertices[static_cast<std::size_t>(p)] - gt_raw.vertices[static_cast<std::size_t>(q)]).norm());
        }
      }
    }
    CHECK(!id_len.empty());
    for (auto& [bone, lens] : id_len) {
      auto other = gt_len[bone];
      std::sort(lens.begin(), lens.end());
      std::sort(other.begin(), other.end());
      REQUIRE(lens.size() == other.size());
      for (std::size_t i = 0; i < lens.size(); ++i) CHECK(std::abs(lens[i] - other[i]) < 1e-6);
    }
  }
  SUBCASE("every mesh lies on the unit sphere") {
    const auto s = make_pair_sample(b, rng);
    for (const Mesh* m : {&s.id_mesh, &s.pose_mesh, &s.gt_mesh}) {
      Vec3 c = Vec3::Zero();
      double r = 0;
      for (const auto& v : m->vertices) c += v;
      c /= static_cast<double>(m->vertices.size());
      for (const auto& v : m->vertices) r = std::max(r, v.norm());
      CHECK(c.norm() < 1e-12);
      CHECK(r == doctest::Approx(1.0).epsilon(1e-12));
    }
  }
}

TEST_CASE("skeleton oracle") {
  const auto& b = body();
  std::mt19937_64 rng(9);
  for (int i = 0; i < 20; ++i) {
    auto s = make_pair_sample(b, rng);
    const auto oracle = skeleton_oracle_transfer(s, b);
    const double exact = pmd(oracle, s.gt_mesh);
    CHECK(exact < 1e-12);
    CHECK(pmd(s.id_mesh, s.gt_mesh) > 10 * exact);
    // The oracle never looks at the pose mesh's vertex order.
    s.pose_perm = VertexPermutation::random(s.pose_mesh.vertex_count(), rng);
    s.pose_mesh = permute_vertices(s.pose_mesh, s.pose_perm);
    CHECK(max_vertex_gap(skeleton_oracle_transfer(s, b), oracle) == 0.0);
  }
}

TEST_CASE("datasets") {
  const auto& b = body();
  const auto spec = small_spec();
  const auto ds = make_dataset(spec);
  SUBCASE("counts and splits") {
    CHECK(ds.train_identities.size() == 3);
    CHECK(ds.eval_identities.size() == 2);
    CHECK(ds.train_poses.size() == 5);
    CHECK(ds.records(Split::train).size() == 15);
    CHECK(ds.records(Split::seen_pose).size() == 4);
    CHECK(ds.records(Split::unseen_pose).size() == 4);
  }
  SUBCASE("train and eval identities are disjoint") {
    for (const auto& e : ds.eval_identities)
      for (const auto& t : ds.train_identities) CHECK(e.length_scale != t.length_scale);
    std::vector<std::uint64_t> seeds = ds.identity_seeds;
    std::sort(seeds.begin(), seeds.end());
    CHECK(std::adjacent_find(seeds.begin(), seeds.end()) == seeds.end());
  }
  SUBCASE("seen poses come from the training pool, unseen ones do not") {
    for (const auto& rec : ds.records(Split::seen_pose)) {
      const auto s = ds.sample(b, rec);
      CHECK(s.beta_pose.angles == ds.train_poses[static_cast<std::size_t>(rec.target_pose)].angles);
    }
    for (const auto& rec : ds.records(Split::unseen_pose)) {
      const auto s = ds.sample(b, rec);
      for (const auto& p : ds.train_poses) CHECK(s.beta_pose.angles != p.angles);
    }
  }
  SUBCASE("generation is deterministic") {
    const auto again = make_dataset(spec);
    CHECK(manifest_json(again) == manifest_json(ds));
    const auto& rec = ds.samples[4];
    CHECK(max_vertex_gap(ds.sample(b, rec).pose_mesh, again.sample(b, rec).pose_mesh) == 0.0);
  }
  SUBCASE("manifest regenerates every sample bit-exactly") {
    const auto dir = std::filesystem::temp_directory_path() / "npt_test_dataset";
    std::filesystem::remove_all(dir);
    write_dataset(ds, b, dir);
    CHECK(std::filesystem::exists(dir / "manifest.json"));
    CHECK(std::filesystem::exists(dir / "00000_id.obj"));
    CHECK(std::filesystem::exists(dir / "00022_gt.obj"));
    const auto loaded = load_dataset(dir);
    CHECK(manifest_json(loaded) == manifest_json(ds));
    for (const auto& rec : loaded.samples) {
      const auto a = ds.sample(b, rec);
      const auto c = loaded.sample(b, rec);
      CHECK(max_vertex_gap(a.id_mesh, c.id_mesh) == 0.0);
      CHECK(max_vertex_gap(a.pose_mesh, c.pose_mesh) == 0.0);
      CHECK(max_vertex_gap(a.gt_mesh, c.gt_mesh) == 0.0);
    }
    // The OBJ files hold the same geometry.
    const auto first = ds.sample(b, ds.samples[0]);
    const auto on_disk = read_obj(dir / "00000_gt.obj");
    CHECK(on_disk.faces == first.gt_mesh.faces);
    CHECK(max_vertex_gap(on_disk, first.gt_mesh) < 1e-8);
    std::filesystem::remove_all(dir);
  }
  SUBCASE("ranges round-trip through JSON") {
    const auto ranges = KinematicBody::default_ranges();
    const auto back = ranges_from_json(ranges_json(ranges));
    REQUIRE(back.size() == ranges.size());
    for (std::size_t j = 0; j < ranges.size(); ++j)
      for (int a = 0; a < 3; ++a) {
        CHECK(back[j][static_cast<std::size_t>(a)].lo == ranges[j][static_cast<std::size_t>(a)].lo);
        CHECK(back[j][static_cast<std::size_t>(a)].hi == ranges[j][static_cast<std::size_t>(a)].hi);
      }
  }
}
