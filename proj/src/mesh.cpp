// Copyright Contributors to the cofield project
// SPDX-License-Identifier: Apache-2.0

#include "cofield/mesh.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numbers>
#include <sstream>
#include <string>
#include <unordered_map>

#include "cofield/error.hpp"
#include "cofield/rng.hpp"

namespace cofield {

double TriangleMesh::TriangleArea(std::size_t t) const {
  const auto& tri = triangles[t];
  return 0.5 * (vertices[tri[1]] - vertices[tri[0]]).cross(vertices[tri[2]] - vertices[tri[0]]).norm();
}

Vec3 TriangleMesh::TriangleNormal(std::size_t t) const {
  const auto& tri = triangles[t];
  return (vertices[tri[1]] - vertices[tri[0]]).cross(vertices[tri[2]] - vertices[tri[0]]).normalized();
}

double TriangleMesh::SurfaceArea() const {
  double sum = 0.0;
  for (std::size_t t = 0; t < triangles.size(); ++t) sum += TriangleArea(t);
  return sum;
}

Aabb TriangleMesh::Bounds() const {
  Aabb box{Vec3::Constant(std::numeric_limits<double>::infinity()),
           Vec3::Constant(-std::numeric_limits<double>::infinity())};
  for (const auto& v : vertices) {
    box.lower = box.lower.cwiseMin(v);
    box.upper = box.upper.cwiseMax(v);
  }
  return box;
}

TriangleMesh CleanMesh(const TriangleMesh& mesh) {
  constexpr double kMergeTol = 1e-9;
  TriangleMesh out;
  std::vector<uint32_t> remap(mesh.vertices.size());
  // Hash on a 1e-9 lattice; probe the 27 neighboring buckets so that points
  // straddling a bucket face still merge.
  struct KeyHash {
    std::size_t operator()(const std::array<int64_t, 3>& k) const {
      return std::hash<int64_t>()(k[0] * 73856093 ^ k[1] * 19349663 ^ k[2] * 83492791);
    }
  };
  std::unordered_map<std::array<int64_t, 3>, std::vector<uint32_t>, KeyHash> buckets;
  for (std::size_t i = 0; i < mesh.vertices.size(); ++i) {
    const Vec3& v = mesh.vertices[i];
    const std::array<int64_t, 3> key{std::llround(v.x() / kMergeTol), std::llround(v.y() / kMergeTol),
                                     std::llround(v.z() / kMergeTol)};
    int64_t found = -1;
    for (int dx = -1; dx <= 1 && found < 0; ++dx) {
      for (int dy = -1; dy <= 1 && found < 0; ++dy) {
        for (int dz = -1; dz <= 1 && found < 0; ++dz) {
          auto it = buckets.find({key[0] + dx, key[1] + dy, key[2] + dz});
          if (it == buckets.end()) continue;
          for (uint32_t j : it->second) {
            if ((out.vertices[j] - v).norm() <= kMergeTol) {
              found = j;
              break;
            }
          }
        }
      }
    }
    if (found < 0) {
      found = static_cast<int64_t>(out.vertices.size());
      out.vertices.push_back(v);
      buckets[key].push_back(static_cast<uint32_t>(found));
    }
    remap[i] = static_cast<uint32_t>(found);
  }
  for (const auto& tri : mesh.triangles) {
    const std::array<uint32_t, 3> t{remap[tri[0]], remap[tri[1]], remap[tri[2]]};
    if (t[0] == t[1] || t[1] == t[2] || t[0] == t[2]) continue;
    const Vec3 n = (out.vertices[t[1]] - out.vertices[t[0]]).cross(out.vertices[t[2]] - out.vertices[t[0]]);
    if (n.norm() == 0.0) continue;
    out.triangles.push_back(t);
  }
  return out;
}

LoadedMesh LoadMesh(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIoError, "cannot open mesh file " + path.string());
  TriangleMesh raw;
  LoadedMesh out;
  std::vector<std::array<int64_t, 3>> faces;
  std::vector<std::size_t> face_lines;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::istringstream ss(line);
    std::string tag;
    if (!(ss >> tag) || tag[0] == '#') continue;
    if (tag == "v") {
      double x, y, z;
      if (!(ss >> x >> y >> z) || !std::isfinite(x) || !std::isfinite(y) || !std::isfinite(z)) {
        throw Error(ErrorCode::kParseError, path.string() + ":" + std::to_string(line_no) + ": bad vertex");
      }
      raw.vertices.emplace_back(x, y, z);
    } else if (tag == "f") {
      std::array<int64_t, 3> f{};
      std::string extra;
      if (!(ss >> f[0] >> f[1] >> f[2]) || (ss >> extra)) {
        throw Error(ErrorCode::kParseError,
                    path.string() + ":" + std::to_string(line_no) + ": expected a triangle `f i j k`");
      }
      faces.push_back(f);
      face_lines.push_back(line_no);
    } else {
      ++out.skipped_lines;
    }
  }
  if (in.bad()) throw Error(ErrorCode::kIoError, "read failure on " + path.string());
  for (std::size_t i = 0; i < faces.size(); ++i) {
    std::array<uint32_t, 3> t{};
    for (int k = 0; k < 3; ++k) {
      const int64_t idx = faces[i][k];
      if (idx < 1 || idx > static_cast<int64_t>(raw.vertices.size())) {
        throw Error(ErrorCode::kParseError, path.string() + ":" + std::to_string(face_lines[i]) +
                                                ": face index " + std::to_string(idx) + " out of range");
      }
      t[k] = static_cast<uint32_t>(idx - 1);
    }
    raw.triangles.push_back(t);
  }
  out.mesh = CleanMesh(raw);
  return out;
}

void SaveMesh(const TriangleMesh& mesh, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::kIoError, "cannot write mesh file " + path.string());
  char buf[128];
  for (const auto& v : mesh.vertices) {
    std::snprintf(buf, sizeof(buf), "v %.17g %.17g %.17g\n", v.x(), v.y(), v.z());
    out << buf;
  }
  for (const auto& t : mesh.triangles) {
    out << "f " << t[0] + 1 << ' ' << t[1] + 1 << ' ' << t[2] + 1 << '\n';
  }
  if (!out) throw Error(ErrorCode::kIoError, "write failure on " + path.string());
}

NormalizedMesh NormalizeMesh(const TriangleMesh& mesh) {
  if (mesh.empty()) throw Error(ErrorCode::kEmptyMesh, "cannot normalize an empty mesh");
  const Aabb box = mesh.Bounds();
  const double extent = box.Extent().maxCoeff();
  if (!(extent > 0.0)) throw Error(ErrorCode::kEmptyMesh, "mesh has zero extent");
  NormalizedMesh out;
  out.scale = 1.9 / extent;
  out.offset = -out.scale * box.Center();
  out.mesh.triangles = mesh.triangles;
  out.mesh.vertices.reserve(mesh.vertices.size());
  for (const auto& v : mesh.vertices) out.mesh.vertices.push_back(out.scale * v + out.offset);
  return out;
}

std::vector<Vec3> SampleMeshSurface(const TriangleMesh& mesh, std::size_t n, uint64_t seed) {
  if (mesh.empty()) throw Error(ErrorCode::kEmptyMesh, "cannot sample an empty mesh");
  if (n == 0) throw Error(ErrorCode::kInvalidArgument, "sample count must be positive");
  std::vector<double> cdf(mesh.triangles.size());
  double total = 0.0;
  for (std::size_t t = 0; t < mesh.triangles.size(); ++t) {
    total += mesh.TriangleArea(t);
    cdf[t] = total;
  }
  Rng rng(seed);
  std::vector<Vec3> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double pick = rng.Uniform() * total;
    const std::size_t t = std::min<std::size_t>(
        std::upper_bound(cdf.begin(), cdf.end(), pick) - cdf.begin(), cdf.size() - 1);
    const double s = std::sqrt(rng.Uniform()), r = rng.Uniform();
    const auto& tri = mesh.triangles[t];
    out.push_back((1.0 - s) * mesh.vertices[tri[0]] + s * (1.0 - r) * mesh.vertices[tri[1]] +
                  s * r * mesh.vertices[tri[2]]);
  }
  return out;
}

bool IsWatertight(const TriangleMesh& mesh) {
  if (mesh.empty()) return false;
  std::map<std::pair<uint32_t, uint32_t>, int> edges;
  for (const auto& t : mesh.triangles) {
    for (int k = 0; k < 3; ++k) {
      const uint32_t a = t[k], b = t[(k + 1) % 3];
      ++edges[{std::min(a, b), std::max(a, b)}];
    }
  }
  return std::all_of(edges.begin(), edges.end(), [](const auto& e) { return e.second == 2; });
}

TriangleMesh TransformMesh(const TriangleMesh& mesh, const RigidTransform& pose, const Vec3& scale) {
  TriangleMesh out;
  out.triangles = mesh.triangles;
  out.vertices.reserve(mesh.vertices.size());
  for (const auto& v : mesh.vertices) out.vertices.push_back(pose.Apply(scale.cwiseProduct(v)));
  if (scale.prod() < 0.0) {
    for (auto& t : out.triangles) std::swap(t[1], t[2]);
  }
  return out;
}

TriangleMesh MakeIcosphere(int subdivisions, double radius) {
  const double phi = (1.0 + std::sqrt(5.0)) / 2.0;
  TriangleMesh m;
  m.vertices = {{-1, phi, 0}, {1, phi, 0}, {-1, -phi, 0}, {1, -phi, 0}, {0, -1, phi}, {0, 1, phi},
                {0, -1, -phi}, {0, 1, -phi}, {phi, 0, -1}, {phi, 0, 1}, {-phi, 0, -1}, {-phi, 0, 1}};
  for (auto& v : m.vertices) v.normalize();
  m.triangles = {{0, 11, 5}, {0, 5, 1},  {0, 1, 7},   {0, 7, 10}, {0, 10, 11}, {1, 5, 9}, {5, 11, 4},
                 {11, 10, 2}, {10, 7, 6}, {7, 1, 8},  {3, 9, 4},  {3, 4, 2},   {3, 2, 6}, {3, 6, 8},
                 {3, 8, 9},  {4, 9, 5},  {2, 4, 11}, {6, 2, 10}, {8, 6, 7},   {9, 8, 1}};
  for (int s = 0; s < subdivisions; ++s) {
    std::map<std::pair<uint32_t, uint32_t>, uint32_t> midpoints;
    auto midpoint = [&](uint32_t a, uint32_t b) {
      const std::pair key{std::min(a, b), std::max(a, b)};
      auto it = midpoints.find(key);
      if (it != midpoints.end()) return it->second;
      const uint32_t idx = static_cast<uint32_t>(m.vertices.size());
      m.vertices.push_back((m.vertices[a] + m.vertices[b]).normalized());
      midpoints.emplace(key, idx);
      return idx;
    };
    std::vector<std::array<uint32_t, 3>> next;
    next.reserve(m.triangles.size() * 4);
    for (const auto& t : m.triangles) {
      const uint32_t ab = midpoint(t[0], t[1]), bc = midpoint(t[1], t[2]), ca = midpoint(t[2], t[0]);
      next.push_back({t[0], ab, ca});
      next.push_back({t[1], bc, ab});
      next.push_back({t[2], ca, bc});
      next.push_back({ab, bc, ca});
    }
    m.triangles = std::move(next);
  }
  for (auto& v : m.vertices) v *= radius;
  return m;
}

TriangleMesh MakeBox(const Vec3& h) {
  TriangleMesh m;
  for (int i = 0; i < 8; ++i) {
    m.vertices.emplace_back((i & 1) ? h.x() : -h.x(), (i & 2) ? h.y() : -h.y(), (i & 4) ? h.z() : -h.z());
  }
  m.triangles = {{0, 2, 1}, {1, 2, 3}, {4, 5, 6}, {5, 7, 6}, {0, 1, 4}, {1, 5, 4},
                 {2, 6, 3}, {3, 6, 7}, {0, 4, 2}, {2, 4, 6}, {1, 3, 5}, {3, 7, 5}};
  return m;
}

TriangleMesh MakeWedge(double half_width, double height, double half_length) {
  TriangleMesh m;
  // cross-section in xz: (-w, 0), (w, 0), (0, height); centered vertically
  const double z0 = -height / 3.0, z1 = 2.0 * height / 3.0;
  for (double y : {-half_length, half_length}) {
    m.vertices.emplace_back(-half_width, y, z0);
    m.vertices.emplace_back(half_width, y, z0);
    m.vertices.emplace_back(0.0, y, z1);
  }
  m.triangles = {{0, 1, 2}, {3, 5, 4}, {0, 3, 1}, {1, 3, 4}, {1, 4, 2}, {2, 4, 5}, {2, 5, 0}, {0, 5, 3}};
  return m;
}

TriangleMesh MakeCylinder(double radius, double half_height, int segments) {
  TriangleMesh m;
  const auto n = static_cast<uint32_t>(segments);
  for (uint32_t i = 0; i < n; ++i) {
    const double a = 2.0 * std::numbers::pi * i / n;
    m.vertices.emplace_back(radius * std::cos(a), radius * std::sin(a), -half_height);
    m.vertices.emplace_back(radius * std::cos(a), radius * std::sin(a), half_height);
  }
  const uint32_t bottom = 2 * n, top = 2 * n + 1;
  m.vertices.emplace_back(0.0, 0.0, -half_height);
  m.vertices.emplace_back(0.0, 0.0, half_height);
  for (uint32_t i = 0; i < n; ++i) {
    const uint32_t j = (i + 1) % n;
    m.triangles.push_back({2 * i, 2 * j, 2 * i + 1});
    m.triangles.push_back({2 * j, 2 * j + 1, 2 * i + 1});
    m.triangles.push_back({bottom, 2 * j, 2 * i});
    m.triangles.push_back({top, 2 * i + 1, 2 * j + 1});
  }
  return m;
}

TriangleMesh MakeTorus(double major_radius, double minor_radius, int major_segments, int minor_segments) {
  TriangleMesh m;
  const auto nu = static_cast<uint32_t>(major_segments), nv = static_cast<uint32_t>(minor_segments);
  for (uint32_t i = 0; i < nu; ++i) {
    const double a = 2.0 * std::numbers::pi * i / nu;
    for (uint32_t j = 0; j < nv; ++j) {
      const double b = 2.0 * std::numbers::pi * j / nv;
      const double rr = major_radius + minor_radius * std::cos(b);
      m.vertices.emplace_back(rr * std::cos(a), rr * std::sin(a), minor_radius * std::sin(b));
    }
  }
  auto idx = [nv](uint32_t i, uint32_t j) { return i * nv + j; };
  for (uint32_t i = 0; i < nu; ++i) {
    for (uint32_t j = 0; j < nv; ++j) {
      const uint32_t i1 = (i + 1) % nu, j1 = (j + 1) % nv;
      m.triangles.push_back({idx(i, j), idx(i1, j), idx(i1, j1)});
      m.triangles.push_back({idx(i, j), idx(i1, j1), idx(i, j1)});
    }
  }
  return m;
}

TriangleMesh MakePlane(double half, int n, double height) {
  TriangleMesh m;
  const auto k = static_cast<uint32_t>(n);
  for (uint32_t j = 0; j <= k; ++j) {
    for (uint32_t i = 0; i <= k; ++i) {
      m.vertices.emplace_back(-half + 2.0 * half * i / k, -half + 2.0 * half * j / k, height);
    }
  }
  for (uint32_t j = 0; j < k; ++j) {
    for (uint32_t i = 0; i < k; ++i) {
      const uint32_t a = j * (k + 1) + i, b = a + 1, c = a + k + 1, d = c + 1;
      m.triangles.push_back({a, b, d});
      m.triangles.push_back({a, d, c});
    }
  }
  return m;
}

}  // namespace cofield
