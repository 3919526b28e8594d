#pragma once

#include <array>
#include <filesystem>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Geometry>

#include "npt/tensor.hpp"

namespace npt {

using Vec3 = Eigen::Vector3d;
using Face = std::array<Index, 3>;

/// Triangle mesh. Faces are zero-based and never repeat a vertex.
struct Mesh {
  std::vector<Vec3> vertices;
  std::vector<Face> faces;
  std::string name;

  Index vertex_count() const { return static_cast<Index>(vertices.size()); }
  Index face_count() const { return static_cast<Index>(faces.size()); }

  /// Throws MeshError if any face index is out of range or repeated.
  void validate() const;
};

class MeshError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bijection on {0..V-1}. Applying it to a mesh moves input vertex perm[i] to slot i.
class VertexPermutation {
 public:
  VertexPermutation() = default;
  explicit VertexPermutation(std::vector<Index> perm);

  static VertexPermutation identity(Index size);
  static VertexPermutation random(Index size, std::mt19937_64& rng);

  Index size() const { return static_cast<Index>(perm_.size()); }
  Index operator[](Index i) const { return perm_[static_cast<std::size_t>(i)]; }
  std::span<const Index> indices() const { return perm_; }
  VertexPermutation inverse() const;
  /// (a.then(b))[i] = a[b[i]]: apply a first, then b.
  VertexPermutation then(const VertexPermutation& b) const;
  bool is_identity() const;

 private:
  std::vector<Index> perm_;
};

/// Directed neighbor pairs (from[k], to[k]); both orientations of each
/// undirected edge are present, sorted, without duplicates or self-pairs.
struct EdgeList {
  std::vector<Index> from;
  std::vector<Index> to;

  std::size_t size() const { return from.size(); }
};

struct ObjStats {
  std::size_t skipped_records = 0;
  std::size_t polygons_split = 0;
};

/// Parses ASCII OBJ (`v`, `f` with optional /t/n suffixes, `#` comments).
/// Polygons are fan-triangulated; negative indices are relative to the end.
Mesh parse_obj(std::string_view text, ObjStats* stats = nullptr);
Mesh read_obj(const std::filesystem::path& path, ObjStats* stats = nullptr);

std::string format_obj(const Mesh& mesh);
void write_obj(const Mesh& mesh, const std::filesystem::path& path);

using Rgb = std::array<std::uint8_t, 3>;

/// HSV hue ramp h = i / V at full saturation and value. Vertex 0 is red.
std::vector<Rgb> index_colors(Index vertex_count);

/// Binary little-endian PLY with float xyz, uchar rgb and triangle faces.
std::string format_ply_colored(const Mesh& mesh, std::span<const Rgb> colors);
void write_ply_colored(const Mesh& mesh, std::span<const Rgb> colors, const std::filesystem::path& path);

struct Normalized {
  Mesh mesh;
  Vec3 centroid;
  double scale = 1;

  /// Maps a point from the normalized frame back to the original one.
  Vec3 restore(const Vec3& p) const { return p * scale + centroid; }
};

/// Centers on the vertex centroid and divides by the largest centroid distance.
Normalized normalize_unit_sphere(const Mesh& mesh);

Mesh permute_vertices(const Mesh& mesh, const VertexPermutation& perm);

EdgeList build_edge_list(const Mesh& mesh);

double surface_area(const Mesh& mesh);

/// Packs vertex positions into a [1, 3, V] tensor (channel = coordinate axis).
template <typename T>
Tensor3<T> to_tensor(const Mesh& mesh);

/// Packs several equally sized meshes into [N, 3, V].
template <typename T>
Tensor3<T> to_batch(std::span<const Mesh* const> meshes);

/// Replaces the positions of `topology` with sample n of a [N, 3, V] tensor.
template <typename T>
Mesh from_tensor(const Tensor3<T>& t, Index n, const Mesh& topology);

/// Writes through a sibling temporary file and renames it into place.
void write_file_atomic(const std::filesystem::path& path, std::string_view bytes);

}  // namespace npt
