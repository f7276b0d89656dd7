// Copyright Contributors to the cofield project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "cofield/geometry.hpp"

namespace cofield {

struct Aabb {
  Vec3 lower = Vec3::Constant(-1.0);
  Vec3 upper = Vec3::Constant(1.0);

  Vec3 Extent() const { return upper - lower; }
  Vec3 Center() const { return 0.5 * (lower + upper); }
};

struct TriangleMesh {
  std::vector<Vec3> vertices;
  std::vector<std::array<uint32_t, 3>> triangles;

  bool empty() const { return triangles.empty(); }
  double TriangleArea(std::size_t t) const;
  Vec3 TriangleNormal(std::size_t t) const;  // unit, right-handed winding
  double SurfaceArea() const;
  Aabb Bounds() const;
};

struct LoadedMesh {
  TriangleMesh mesh;
  std::size_t skipped_lines = 0;  // records other than `v` / `f`
};

/// Reads `v x y z` / `f i j k` (1-based). Drops zero-area triangles and merges
/// vertices closer than 1e-9 after parsing.
LoadedMesh LoadMesh(const std::filesystem::path& path);
void SaveMesh(const TriangleMesh& mesh, const std::filesystem::path& path);

/// Vertex merge (1e-9) and zero-area triangle removal, as applied on load.
TriangleMesh CleanMesh(const TriangleMesh& mesh);

/// normalized = scale * original + offset
struct NormalizedMesh {
  TriangleMesh mesh;
  double scale = 1.0;
  Vec3 offset = Vec3::Zero();
};

/// Centers the bounding box at the origin with max extent 1.9.
NormalizedMesh NormalizeMesh(const TriangleMesh& mesh);

/// Area-weighted, barycentric-uniform surface samples; deterministic per seed.
std::vector<Vec3> SampleMeshSurface(const TriangleMesh& mesh, std::size_t n, uint64_t seed);

/// True when every undirected edge is shared by exactly two triangles.
bool IsWatertight(const TriangleMesh& mesh);

TriangleMesh TransformMesh(const TriangleMesh& mesh, const RigidTransform& pose, const Vec3& scale = Vec3::Ones());

// Procedural solids, outward-facing winding.
TriangleMesh MakeIcosphere(int subdivisions, double radius = 1.0);
TriangleMesh MakeBox(const Vec3& half_extent);
/// Triangular prism: isosceles cross-section in xz (apex up), extruded along y.
TriangleMesh MakeWedge(double half_width, double height, double half_length);
TriangleMesh MakeCylinder(double radius, double half_height, int segments);
TriangleMesh MakeTorus(double major_radius, double minor_radius, int major_segments, int minor_segments);
/// Open square z = height over [-half, half]^2, split into n x n quads.
TriangleMesh MakePlane(double half, int n, double height = 0.0);

}  // namespace cofield
