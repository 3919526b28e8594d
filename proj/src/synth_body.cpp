#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include <Eigen/Geometry>

#include "npt/synth.hpp"

namespace npt::synth {

namespace {

struct JointDef {
  const char* name;
  int parent;
  Vec3 offset;   // rest offset from the parent joint
  Vec3 seg_a;    // capsule axis start, relative to this joint
  Vec3 seg_b;    // capsule axis end, relative to this joint
  double radius;
};

// T-pose, y up, z forward, +x towards the body's left. Head units.
const JointDef kJointDefs[KinematicBody::kJoints] = {
    {"pelvis", -1, {0.0, 4.0, 0.0}, {-0.5, -0.1, 0.0}, {0.5, -0.1, 0.0}, 0.45},
    {"spine", 0, {0.0, 0.6, 0.0}, {0.0, 0.0, 0.0}, {0.0, 1.2, 0.0}, 0.5},
    {"chest", 1, {0.0, 1.2, 0.0}, {0.0, 0.1, 0.0}, {0.0, 0.8, 0.0}, 0.6},
    {"head", 2, {0.0, 1.2, 0.0}, {0.0, 0.3, 0.0}, {0.0, 0.8, 0.0}, 0.42},
    {"l_shoulder", 2, {0.9, 0.9, 0.0}, {0.0, 0.0, 0.0}, {1.5, 0.0, 0.0}, 0.22},
    {"l_elbow", 4, {1.5, 0.0, 0.0}, {0.0, 0.0, 0.0}, {1.3, 0.0, 0.0}, 0.18},
    {"r_shoulder", 2, {-0.9, 0.9, 0.0}, {0.0, 0.0, 0.0}, {-1.5, 0.0, 0.0}, 0.22},
    {"r_elbow", 6, {-1.5, 0.0, 0.0}, {0.0, 0.0, 0.0}, {-1.3, 0.0, 0.0}, 0.18},
    {"l_hip", 0, {0.45, -0.2, 0.0}, {0.0, 0.0, 0.0}, {0.0, -1.9, 0.0}, 0.3},
    {"l_knee", 8, {0.0, -1.9, 0.0}, {0.0, 0.0, 0.0}, {0.0, -1.8, 0.0}, 0.22},
    {"r_hip", 0, {-0.45, -0.2, 0.0}, {0.0, 0.0, 0.0}, {0.0, -1.9, 0.0}, 0.3},
    {"r_knee", 10, {0.0, -1.9, 0.0}, {0.0, 0.0, 0.0}, {0.0, -1.8, 0.0}, 0.22},
};

double point_segment_distance(const Vec3& p, const Vec3& a, const Vec3& b) {
  const Vec3 ab = b - a;
  const double t = std::clamp((p - a).dot(ab) / ab.squaredNorm(), 0.0, 1.0);
  return (p - (a + t * ab)).norm();
}

Vec3 any_orthogonal(const Vec3& u) {
  const Vec3 probe = std::abs(u.z()) < 0.9 ? Vec3::UnitZ() : Vec3::UnitX();
  return u.cross(probe).normalized();
}

}  // namespace

KinematicBody::KinematicBody(BodyConfig cfg) : cfg_(cfg) {
  if (cfg.ring_vertices < 3 || cfg.cap_rings < 1 || cfg.mid_rings < 0) {
    throw std::invalid_argument("body config: need ring_vertices >= 3, cap_rings >= 1, mid_rings >= 0");
  }
  if (!(cfg.skin_temperature > 0)) throw std::invalid_argument("body config: skin_temperature must be positive");

  for (const auto& d : kJointDefs) {
    parents_.push_back(d.parent);
    names_.emplace_back(d.name);
    offsets_.push_back(d.offset);
    joints_.push_back(d.parent < 0 ? d.offset : joints_[static_cast<std::size_t>(d.parent)] + d.offset);
    seg_a_.push_back(d.seg_a);
    seg_b_.push_back(d.seg_b);
    seg_r_.push_back(d.radius);
  }

  const int around = cfg.ring_vertices;
  for (int k = 0; k < kJoints; ++k) {
    const Vec3 base = joints_[static_cast<std::size_t>(k)];
    const Vec3 a = base + seg_a_[static_cast<std::size_t>(k)];
    const Vec3 b = base + seg_b_[static_cast<std::size_t>(k)];
    const double r = seg_r_[static_cast<std::size_t>(k)];
    const Vec3 u = (b - a).normalized();
    const Vec3 e1 = any_orthogonal(u);
    const Vec3 e2 = u.cross(e1);

    // Ring profile from the south pole to the north pole: (center, radius).
    std::vector<std::pair<Vec3, double>> rings;
    for (int i = 1; i <= cfg.cap_rings; ++i) {
      const double phi = 0.5 * std::numbers::pi * i / cfg.cap_rings;
      rings.emplace_back(a - r * std::cos(phi) * u, r * std::sin(phi));
    }
    for (int i = 1; i <= cfg.mid_rings; ++i) {
      rings.emplace_back(a + (static_cast<double>(i) / (cfg.mid_rings + 1)) * (b - a), r);
    }
    for (int i = cfg.cap_rings; i >= 1; --i) {
      const double phi = 0.5 * std::numbers::pi * i / cfg.cap_rings;
      rings.emplace_back(b + r * std::cos(phi) * u, r * std::sin(phi));
    }

    const Index first = template_.vertex_count();
    auto add_vertex = [&](const Vec3& p) {
      template_.vertices.push_back(p);
      segment_of_.push_back(k);
    };
    add_vertex(a - r * u);
    for (const auto& [center, radius] : rings) {
      for (int j = 0; j < around; ++j) {
        const double psi = 2.0 * std::numbers::pi * j / around;
        add_vertex(center + radius * (std::cos(psi) * e1 + std::sin(psi) * e2));
      }
    }
    add_vertex(b + r * u);

    const Index south = first;
    const Index north = template_.vertex_count() - 1;
    auto ring_vertex = [&](std::size_t ring, int j) {
      return first + 1 + static_cast<Index>(ring) * around + ((j % around + around) % around);
    };
    for (int j = 0; j < around; ++j) template_.faces.push_back({south, ring_vertex(0, j + 1), ring_vertex(0, j)});
    for (std::size_t ring = 0; ring + 1 < rings.size(); ++ring) {
      for (int j = 0; j < around; ++j) {
        template_.faces.push_back({ring_vertex(ring, j), ring_vertex(ring, j + 1), ring_vertex(ring + 1, j + 1)});
        template_.faces.push_back({ring_vertex(ring, j), ring_vertex(ring + 1, j + 1), ring_vertex(ring + 1, j)});
      }
    }
    const std::size_t last = rings.size() - 1;
    for (int j = 0; j < around; ++j) template_.faces.push_back({north, ring_vertex(last, j), ring_vertex(last, j + 1)});
  }
  template_.name = "template";
  template_.validate();

  // Two nearest capsules by surface distance, softmax over negated distance.
  const Index nv = template_.vertex_count();
  weights_ = Eigen::MatrixXd::Zero(nv, kJoints);
  for (Index v = 0; v < nv; ++v) {
    const Vec3& p = template_.vertices[static_cast<std::size_t>(v)];
    std::array<double, kJoints> dist{};
    for (int k = 0; k < kJoints; ++k) {
      const Vec3 base = joints_[static_cast<std::size_t>(k)];
      dist[static_cast<std::size_t>(k)] =
          point_segment_distance(p, base + seg_a_[static_cast<std::size_t>(k)], base + seg_b_[static_cast<std::size_t>(k)]) -
          seg_r_[static_cast<std::size_t>(k)];
    }
    std::array<int, kJoints> order{};
    for (int k = 0; k < kJoints; ++k) order[static_cast<std::size_t>(k)] = k;
    std::stable_sort(order.begin(), order.end(),
                     [&](int x, int y) { return dist[static_cast<std::size_t>(x)] < dist[static_cast<std::size_t>(y)]; });
    const int k1 = order[0], k2 = order[1];
    const double gap = dist[static_cast<std::size_t>(k2)] - dist[static_cast<std::size_t>(k1)];
    double w2 = 1.0 / (1.0 + std::exp(gap / cfg.skin_temperature));
    if (w2 < cfg.min_secondary_weight) w2 = 0;
    weights_(v, k1) = 1.0 - w2;
    weights_(v, k2) += w2;
  }
}

std::vector<JointRanges> KinematicBody::default_ranges() {
  const AngleRange z0{0, 0};
  return {
      {AngleRange{-2, 2}, AngleRange{-2, 2}, AngleRange{-2, 2}},        // pelvis
      {AngleRange{-5, 5}, AngleRange{-5, 5}, AngleRange{-5, 5}},        // spine
      {AngleRange{-5, 5}, AngleRange{-5, 5}, AngleRange{-5, 5}},        // chest
      {AngleRange{-10, 10}, AngleRange{-10, 10}, AngleRange{-10, 10}},  // head
      {z0, AngleRange{-30, 30}, AngleRange{-60, 30}},                   // l_shoulder
      {z0, AngleRange{-60, 0}, z0},                                     // l_elbow
      {z0, AngleRange{-30, 30}, AngleRange{-30, 60}},                   // r_shoulder
      {z0, AngleRange{0, 60}, z0},                                      // r_elbow
      {AngleRange{-90, 0}, z0, AngleRange{0, 40}},                      // l_hip
      {AngleRange{0, 100}, z0, z0},                                     // l_knee
      {AngleRange{-90, 0}, z0, AngleRange{-40, 0}},                     // r_hip
      {AngleRange{0, 100}, z0, z0},                                     // r_knee
  };
}

IdentityParams IdentityParams::neutral() {
  IdentityParams a;
  a.length_scale.fill(1.0);
  a.radius_scale.fill(1.0);
  a.height_scale = 1.0;
  return a;
}

IdentityParams sample_identity(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> bone(0.7, 1.3), height(0.9, 1.1);
  IdentityParams a;
  for (auto& s : a.length_scale) s = bone(rng);
  for (auto& s : a.radius_scale) s = bone(rng);
  a.height_scale = height(rng);
  return a;
}

PoseParams sample_pose(std::mt19937_64& rng, const std::vector<JointRanges>& ranges) {
  if (static_cast<int>(ranges.size()) != KinematicBody::kJoints) {
    throw std::invalid_argument("pose ranges: expected " + std::to_string(KinematicBody::kJoints) + " joints, got " +
                                std::to_string(ranges.size()));
  }
  PoseParams beta;
  for (int k = 0; k < KinematicBody::kJoints; ++k) {
    for (int axis = 0; axis < 3; ++axis) {
      const auto& r = ranges[static_cast<std::size_t>(k)][static_cast<std::size_t>(axis)];
      if (r.lo > r.hi) {
        throw std::invalid_argument("pose ranges: inverted range for joint " + std::to_string(k) + " axis " +
                                    std::to_string(axis));
      }
      // One draw per axis even for pinned axes keeps the stream layout fixed.
      const double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
      beta.angles[static_cast<std::size_t>(k)][static_cast<std::size_t>(axis)] = r.lo == r.hi ? r.lo : r.lo + u * (r.hi - r.lo);
    }
  }
  return beta;
}

Eigen::Matrix3d euler_xyz(const std::array<double, 3>& degrees) {
  constexpr double to_rad = std::numbers::pi / 180.0;
  return (Eigen::AngleAxisd(degrees[2] * to_rad, Vec3::UnitZ()) * Eigen::AngleAxisd(degrees[1] * to_rad, Vec3::UnitY()) *
          Eigen::AngleAxisd(degrees[0] * to_rad, Vec3::UnitX()))
      .toRotationMatrix();
}

Mesh skin_mesh(const KinematicBody& body, const IdentityParams& alpha, const PoseParams& beta) {
  constexpr int K = KinematicBody::kJoints;
  const auto& parents = body.parents();
  const auto& rest = body.rest_joints();
  const auto& offsets = body.rest_offsets();
  const double h = alpha.height_scale;

  // Identity-scaled rest joints.
  std::array<Vec3, K> joints;
  for (int k = 0; k < K; ++k) {
    const int p = parents[static_cast<std::size_t>(k)];
    joints[static_cast<std::size_t>(k)] =
        p < 0 ? Vec3(h * offsets[0])
              : Vec3(joints[static_cast<std::size_t>(p)] + (h * alpha.length_scale[static_cast<std::size_t>(p)]) * offsets[static_cast<std::size_t>(k)]);
  }

  // Posed joint frames, tracked as offsets from the scaled rest frames so the
  // rest pose maps to an exactly zero displacement.
  std::array<Eigen::Matrix3d, K> rot;
  std::array<Eigen::Matrix3d, K> rot_delta;
  std::array<Vec3, K> pos_delta;
  for (int k = 0; k < K; ++k) {
    const auto ki = static_cast<std::size_t>(k);
    const int p = parents[ki];
    const Eigen::Matrix3d local = euler_xyz(beta.angles[ki]);
    if (p < 0) {
      rot[ki] = local;
      pos_delta[ki] = Vec3::Zero();
    } else {
      const auto pi = static_cast<std::size_t>(p);
      rot[ki] = rot[pi] * local;
      pos_delta[ki] = pos_delta[pi] + rot_delta[pi] * (joints[ki] - joints[pi]);
    }
    rot_delta[ki] = rot[ki] - Eigen::Matrix3d::Identity();
  }

  const Mesh& tmpl = body.template_mesh();
  const auto& W = body.skin_weights();
  Mesh out;
  out.faces = tmpl.faces;
  out.vertices.resize(tmpl.vertices.size());
  for (Index v = 0; v < tmpl.vertex_count(); ++v) {
    const auto vi = static_cast<std::size_t>(v);
    const auto s = static_cast<std::size_t>(body.vertex_segment()[vi]);
    // Scale along and across the generating capsule's axis. Written as a
    // displacement so neutral identities reproduce the template bit-exactly.
    const Vec3& p = tmpl.vertices[vi];
    const Vec3 u = (body.segment_end()[s] - body.segment_start()[s]).normalized();
    const Vec3 q = p - rest[s] - body.segment_start()[s];
    const Vec3 radial = q - q.dot(u) * u;
    const Vec3 axial = p - rest[s] - radial;
    const Vec3 scaled = p + (joints[s] - rest[s]) + (h * alpha.length_scale[s] - 1.0) * axial +
                        (h * alpha.radius_scale[s] - 1.0) * radial;

    Vec3 disp = Vec3::Zero();
    for (int k = 0; k < K; ++k) {
      const double w = W(v, k);
      if (w == 0.0) continue;
      const auto ki = static_cast<std::size_t>(k);
      disp += w * (rot_delta[ki] * (scaled - joints[ki]) + pos_delta[ki]);
    }
    out.vertices[vi] = scaled + disp;
  }
  return out;
}

}  // namespace npt::synth
