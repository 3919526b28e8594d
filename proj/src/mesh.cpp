#include "npt/mesh.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>

namespace npt {

void Mesh::validate() const {
  const Index nv = vertex_count();
  if (!faces.empty() && nv < 3) throw MeshError("mesh with faces needs at least 3 vertices, got " + std::to_string(nv));
  for (std::size_t f = 0; f < faces.size(); ++f) {
    const auto& face = faces[f];
    for (Index i : face) {
      if (i < 0 || i >= nv) {
        throw MeshError("face " + std::to_string(f) + " index " + std::to_string(i) + " out of range for " +
                        std::to_string(nv) + " vertices");
      }
    }
    if (face[0] == face[1] || face[1] == face[2] || face[0] == face[2]) {
      throw MeshError("face " + std::to_string(f) + " repeats a vertex");
    }
  }
}

// ---------------------------------------------------------------------------

VertexPermutation::VertexPermutation(std::vector<Index> perm) : perm_(std::move(perm)) {
  std::vector<char> seen(perm_.size(), 0);
  for (Index p : perm_) {
    if (p < 0 || p >= size() || seen[static_cast<std::size_t>(p)]) {
      throw std::invalid_argument("invalid vertex permutation: entry " + std::to_string(p) + " for size " +
                                  std::to_string(size()));
    }
    seen[static_cast<std::size_t>(p)] = 1;
  }
}

VertexPermutation VertexPermutation::identity(Index size) {
  std::vector<Index> p(static_cast<std::size_t>(size));
  std::iota(p.begin(), p.end(), Index{0});
  return VertexPermutation(std::move(p));
}

VertexPermutation VertexPermutation::random(Index size, std::mt19937_64& rng) {
  std::vector<Index> p(static_cast<std::size_t>(size));
  std::iota(p.begin(), p.end(), Index{0});
  // Fisher-Yates with an explicit draw so the sequence does not depend on the
  // standard library's shuffle implementation.
  for (Index i = size - 1; i > 0; --i) {
    const auto j = static_cast<Index>(rng() % static_cast<std::uint64_t>(i + 1));
    std::swap(p[static_cast<std::size_t>(i)], p[static_cast<std::size_t>(j)]);
  }
  return VertexPermutation(std::move(p));
}

VertexPermutation VertexPermutation::inverse() const {
  std::vector<Index> inv(perm_.size());
  for (std::size_t i = 0; i < perm_.size(); ++i) inv[static_cast<std::size_t>(perm_[i])] = static_cast<Index>(i);
  return VertexPermutation(std::move(inv));
}

VertexPermutation VertexPermutation::then(const VertexPermutation& b) const {
  if (b.size() != size()) throw std::invalid_argument("cannot compose permutations of different sizes");
  std::vector<Index> out(perm_.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = perm_[static_cast<std::size_t>(b.perm_[i])];
  return VertexPermutation(std::move(out));
}

bool VertexPermutation::is_identity() const {
  for (std::size_t i = 0; i < perm_.size(); ++i) {
    if (perm_[i] != static_cast<Index>(i)) return false;
  }
  return true;
}

// ---------------------------------------------------------------------------

namespace {

std::string_view trim(std::string_view s) {
  const auto ws = " \t\r\f\v";
  const auto b = s.find_first_not_of(ws);
  if (b == std::string_view::npos) return {};
  return s.substr(b, s.find_last_not_of(ws) - b + 1);
}

std::vector<std::string_view> split_ws(std::string_view s) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && std::isspace(static_cast<unsigned char>(s[i]))) ++i;
    std::size_t j = i;
    while (j < s.size() && !std::isspace(static_cast<unsigned char>(s[j]))) ++j;
    if (j > i) out.push_back(s.substr(i, j - i));
    i = j;
  }
  return out;
}

[[noreturn]] void fail(std::size_t line, const std::string& msg) {
  throw MeshError("OBJ line " + std::to_string(line) + ": " + msg);
}

double parse_real(std::string_view tok, std::size_t line) {
  double value = 0;
  const char* end = tok.data() + tok.size();
  auto [ptr, ec] = std::from_chars(tok.data(), end, value);
  if (ec != std::errc() || ptr != end || !std::isfinite(value)) fail(line, "malformed number '" + std::string(tok) + "'");
  return value;
}

Index parse_face_index(std::string_view tok, std::size_t line, Index defined) {
  const auto slash = tok.find('/');
  const auto head = tok.substr(0, slash);
  long long raw = 0;
  const char* end = head.data() + head.size();
  auto [ptr, ec] = std::from_chars(head.data(), end, raw);
  if (ec != std::errc() || ptr != end || raw == 0) fail(line, "malformed face index '" + std::string(tok) + "'");
  const Index idx = raw > 0 ? static_cast<Index>(raw - 1) : defined + static_cast<Index>(raw);
  if (idx < 0 || idx >= defined) {
    fail(line, "face index " + std::to_string(raw) + " out of range (" + std::to_string(defined) + " vertices defined)");
  }
  return idx;
}

std::string read_all(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MeshError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

Mesh parse_obj(std::string_view text, ObjStats* stats) {
  Mesh mesh;
  ObjStats local;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    auto nl = text.find('\n', pos);
    if (nl == std::string_view::npos) nl = text.size();
    auto line = trim(text.substr(pos, nl - pos));
    pos = nl + 1;
    ++line_no;
    if (line.empty() || line.front() == '#') continue;
    auto tok = split_ws(line);
    if (tok[0] == "v") {
      if (tok.size() < 4) fail(line_no, "vertex needs 3 coordinates");
      mesh.vertices.emplace_back(parse_real(tok[1], line_no), parse_real(tok[2], line_no), parse_real(tok[3], line_no));
    } else if (tok[0] == "f") {
      if (tok.size() < 4) fail(line_no, "face needs at least 3 indices");
      std::vector<Index> idx;
      for (std::size_t k = 1; k < tok.size(); ++k) idx.push_back(parse_face_index(tok[k], line_no, mesh.vertex_count()));
      for (std::size_t k = 1; k + 1 < idx.size(); ++k) mesh.faces.push_back({idx[0], idx[k], idx[k + 1]});
      if (idx.size() > 3) ++local.polygons_split;
    } else {
      ++local.skipped_records;
    }
  }
  if (mesh.vertices.empty()) throw MeshError("OBJ contains no vertices");
  try {
    mesh.validate();
  } catch (const MeshError& e) {
    throw MeshError(std::string("OBJ: ") + e.what());
  }
  if (stats) *stats = local;
  return mesh;
}

Mesh read_obj(const std::filesystem::path& path, ObjStats* stats) {
  Mesh m = parse_obj(read_all(path), stats);
  m.name = path.stem().string();
  return m;
}

std::string format_obj(const Mesh& mesh) {
  std::string out;
  out.reserve(static_cast<std::size_t>(mesh.vertex_count()) * 40 + static_cast<std::size_t>(mesh.face_count()) * 24);
  if (!mesh.name.empty()) out += "# " + mesh.name + "\n";
  char buf[128];
  for (const auto& v : mesh.vertices) {
    std::snprintf(buf, sizeof buf, "v %.9g %.9g %.9g\n", v.x(), v.y(), v.z());
    out += buf;
  }
  for (const auto& f : mesh.faces) {
    std::snprintf(buf, sizeof buf, "f %lld %lld %lld\n", static_cast<long long>(f[0] + 1),
                  static_cast<long long>(f[1] + 1), static_cast<long long>(f[2] + 1));
    out += buf;
  }
  return out;
}

void write_obj(const Mesh& mesh, const std::filesystem::path& path) { write_file_atomic(path, format_obj(mesh)); }

std::vector<Rgb> index_colors(Index vertex_count) {
  std::vector<Rgb> colors(static_cast<std::size_t>(vertex_count));
  for (Index i = 0; i < vertex_count; ++i) {
    const double h = 6.0 * static_cast<double>(i) / static_cast<double>(vertex_count);
    const int sector = std::min(static_cast<int>(h), 5);
    const double f = h - sector;
    const double q = 1.0 - f;
    double r = 0, g = 0, b = 0;
    switch (sector) {
      case 0: r = 1, g = f, b = 0; break;
      case 1: r = q, g = 1, b = 0; break;
      case 2: r = 0, g = 1, b = f; break;
      case 3: r = 0, g = q, b = 1; break;
      case 4: r = f, g = 0, b = 1; break;
      default: r = 1, g = 0, b = q; break;
    }
    auto byte = [](double x) { return static_cast<std::uint8_t>(std::lround(std::clamp(x, 0.0, 1.0) * 255.0)); };
    colors[static_cast<std::size_t>(i)] = {byte(r), byte(g), byte(b)};
  }
  return colors;
}

std::string format_ply_colored(const Mesh& mesh, std::span<const Rgb> colors) {
  if (static_cast<Index>(colors.size()) != mesh.vertex_count()) {
    throw MeshError("PLY export: " + std::to_string(colors.size()) + " colors for " +
                    std::to_string(mesh.vertex_count()) + " vertices");
  }
  std::ostringstream header;
  header << "ply\nformat binary_little_endian 1.0\n"
         << "element vertex " << mesh.vertex_count() << "\n"
         << "property float x\nproperty float y\nproperty float z\n"
         << "property uchar red\nproperty uchar green\nproperty uchar blue\n"
         << "element face " << mesh.face_count() << "\n"
         << "property list uchar int vertex_indices\nend_header\n";
  std::string out = header.str();
  auto put = [&out](const void* p, std::size_t n) {
    // PLY payload is little-endian; the supported targets are little-endian hosts.
    out.append(static_cast<const char*>(p), n);
  };
  for (std::size_t i = 0; i < mesh.vertices.size(); ++i) {
    const auto& v = mesh.vertices[i];
    const float xyz[3] = {static_cast<float>(v.x()), static_cast<float>(v.y()), static_cast<float>(v.z())};
    put(xyz, sizeof xyz);
    put(colors[i].data(), 3);
  }
  for (const auto& f : mesh.faces) {
    const std::uint8_t count = 3;
    const std::int32_t idx[3] = {static_cast<std::int32_t>(f[0]), static_cast<std::int32_t>(f[1]),
                                 static_cast<std::int32_t>(f[2])};
    put(&count, 1);
    put(idx, sizeof idx);
  }
  return out;
}

void write_ply_colored(const Mesh& mesh, std::span<const Rgb> colors, const std::filesystem::path& path) {
  write_file_atomic(path, format_ply_colored(mesh, colors));
}

// ---------------------------------------------------------------------------

Normalized normalize_unit_sphere(const Mesh& mesh) {
  if (mesh.vertices.empty()) throw MeshError("cannot normalize an empty mesh");
  Vec3 centroid = Vec3::Zero();
  for (const auto& v : mesh.vertices) centroid += v;
  centroid /= static_cast<double>(mesh.vertices.size());
  double radius = 0;
  for (const auto& v : mesh.vertices) radius = std::max(radius, (v - centroid).norm());
  if (!(radius > 0)) throw MeshError("cannot normalize: all vertices coincide");
  Normalized out{mesh, centroid, radius};
  for (auto& v : out.mesh.vertices) v = (v - centroid) / radius;
  return out;
}

Mesh permute_vertices(const Mesh& mesh, const VertexPermutation& perm) {
  if (perm.size() != mesh.vertex_count()) {
    throw std::invalid_argument("permutation of size " + std::to_string(perm.size()) + " for mesh with " +
                                std::to_string(mesh.vertex_count()) + " vertices");
  }
  Mesh out;
  out.name = mesh.name;
  out.vertices.resize(mesh.vertices.size());
  for (Index i = 0; i < perm.size(); ++i) out.vertices[static_cast<std::size_t>(i)] = mesh.vertices[static_cast<std::size_t>(perm[i])];
  const auto inv = perm.inverse();
  out.faces.reserve(mesh.faces.size());
  for (const auto& f : mesh.faces) out.faces.push_back({inv[f[0]], inv[f[1]], inv[f[2]]});
  return out;
}

EdgeList build_edge_list(const Mesh& mesh) {
  std::vector<std::pair<Index, Index>> pairs;
  pairs.reserve(mesh.faces.size() * 6);
  for (const auto& f : mesh.faces) {
    for (int k = 0; k < 3; ++k) {
      const Index a = f[static_cast<std::size_t>(k)], b = f[static_cast<std::size_t>((k + 1) % 3)];
      if (a == b) continue;
      pairs.emplace_back(a, b);
      pairs.emplace_back(b, a);
    }
  }
  std::sort(pairs.begin(), pairs.end());
  pairs.erase(std::unique(pairs.begin(), pairs.end()), pairs.end());
  EdgeList edges;
  edges.from.reserve(pairs.size());
  edges.to.reserve(pairs.size());
  for (auto [a, b] : pairs) {
    edges.from.push_back(a);
    edges.to.push_back(b);
  }
  return edges;
}

double surface_area(const Mesh& mesh) {
  double area = 0;
  for (const auto& f : mesh.faces) {
    const auto& a = mesh.vertices[static_cast<std::size_t>(f[0])];
    const auto& b = mesh.vertices[static_cast<std::size_t>(f[1])];
    const auto& c = mesh.vertices[static_cast<std::size_t>(f[2])];
    area += 0.5 * (b - a).cross(c - a).norm();
  }
  return area;
}

template <typename T>
Tensor3<T> to_tensor(const Mesh& mesh) {
  Tensor3<T> t(1, 3, mesh.vertex_count());
  for (Index v = 0; v < mesh.vertex_count(); ++v) {
    for (Index c = 0; c < 3; ++c) t(0, c, v) = static_cast<T>(mesh.vertices[static_cast<std::size_t>(v)][c]);
  }
  return t;
}

template <typename T>
Tensor3<T> to_batch(std::span<const Mesh* const> meshes) {
  if (meshes.empty()) throw ShapeError("to_batch: no meshes");
  const Index nv = meshes.front()->vertex_count();
  Tensor3<T> t(static_cast<Index>(meshes.size()), 3, nv);
  for (std::size_t n = 0; n < meshes.size(); ++n) {
    if (meshes[n]->vertex_count() != nv) {
      throw ShapeError("to_batch: vertex counts differ (" + std::to_string(nv) + " vs " +
                       std::to_string(meshes[n]->vertex_count()) + ")");
    }
    for (Index v = 0; v < nv; ++v) {
      for (Index c = 0; c < 3; ++c) t(static_cast<Index>(n), c, v) = static_cast<T>(meshes[n]->vertices[static_cast<std::size_t>(v)][c]);
    }
  }
  return t;
}

template <typename T>
Mesh from_tensor(const Tensor3<T>& t, Index n, const Mesh& topology) {
  if (t.c() != 3 || t.v() != topology.vertex_count()) {
    throw ShapeError("from_tensor: " + t.shape().str() + " does not match a mesh with " +
                     std::to_string(topology.vertex_count()) + " vertices");
  }
  Mesh out;
  out.name = topology.name;
  out.faces = topology.faces;
  out.vertices.resize(static_cast<std::size_t>(t.v()));
  for (Index v = 0; v < t.v(); ++v) out.vertices[static_cast<std::size_t>(v)] = Vec3(t(n, 0, v), t(n, 1, v), t(n, 2, v));
  return out;
}

template Tensor3<float> to_tensor(const Mesh&);
template Tensor3<double> to_tensor(const Mesh&);
template Tensor3<float> to_batch(std::span<const Mesh* const>);
template Tensor3<double> to_batch(std::span<const Mesh* const>);
template Mesh from_tensor(const Tensor3<float>&, Index, const Mesh&);
template Mesh from_tensor(const Tensor3<double>&, Index, const Mesh&);

void write_file_atomic(const std::filesystem::path& path, std::string_view bytes) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("short write to " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp);
    throw std::runtime_error("cannot write " + path.string() + ": " + ec.message());
  }
}

}  // namespace npt
