// Copyright Contributors to the cofield project
// SPDX-License-Identifier: Apache-2.0

#include "cofield/grid.hpp"

#include <algorithm>
#include <cmath>

#include "cofield/error.hpp"

namespace cofield {

Aabb VoxelGrid::CellBox(const CellCoord& c) const {
  const Vec3 size = CellSize();
  Aabb box;
  for (int k = 0; k < 3; ++k) {
    box.lower[k] = bounds.lower[k] + c[k] * size[k];
    box.upper[k] = c[k] + 1 == resolution ? bounds.upper[k] : bounds.lower[k] + (c[k] + 1) * size[k];
  }
  return box;
}

void VoxelGrid::Validate() const {
  if (resolution < 2) throw Error(ErrorCode::kInvalidArgument, "grid resolution must be >= 2");
  if (!((bounds.upper - bounds.lower).array() > 0.0).all()) {
    throw Error(ErrorCode::kInvalidArgument, "grid bounds are degenerate");
  }
  for (uint32_t v : valid) {
    if (v >= CellCount()) throw Error(ErrorCode::kInvalidArgument, "valid cell index out of range");
  }
}

std::optional<CellCoord> VoxelOf(const VoxelGrid& grid, const Vec3& p) {
  CellCoord c{};
  const Vec3 size = grid.CellSize();
  for (int k = 0; k < 3; ++k) {
    if (!(p[k] >= grid.bounds.lower[k] && p[k] <= grid.bounds.upper[k])) return std::nullopt;
    const int i = static_cast<int>(std::floor((p[k] - grid.bounds.lower[k]) / size[k]));
    c[k] = std::clamp(i, 0, grid.resolution - 1);
  }
  return c;
}

namespace {

bool AxisSeparates(const Vec3& axis, const Vec3& v0, const Vec3& v1, const Vec3& v2, const Vec3& half) {
  const double p0 = axis.dot(v0), p1 = axis.dot(v1), p2 = axis.dot(v2);
  const double r = half.x() * std::abs(axis.x()) + half.y() * std::abs(axis.y()) + half.z() * std::abs(axis.z());
  return std::min({p0, p1, p2}) > r || std::max({p0, p1, p2}) < -r;
}

}  // namespace

bool TriangleIntersectsBox(const Vec3& a, const Vec3& b, const Vec3& c, const Aabb& box) {
  // Akenine-Moller: 9 edge cross axes, 3 box face normals, triangle normal.
  const Vec3 center = box.Center(), half = 0.5 * box.Extent();
  const Vec3 v0 = a - center, v1 = b - center, v2 = c - center;
  const std::array<Vec3, 3> edges{v1 - v0, v2 - v1, v0 - v2};
  for (int k = 0; k < 3; ++k) {
    if (std::min({v0[k], v1[k], v2[k]}) > half[k] || std::max({v0[k], v1[k], v2[k]}) < -half[k]) return false;
  }
  for (const Vec3& e : edges) {
    for (int k = 0; k < 3; ++k) {
      const Vec3 axis = Vec3::Unit(k).cross(e);
      if (axis.squaredNorm() == 0.0) continue;
      if (AxisSeparates(axis, v0, v1, v2, half)) return false;
    }
  }
  const Vec3 n = edges[0].cross(edges[1]);
  if (n.squaredNorm() > 0.0 && AxisSeparates(n, v0, v1, v2, half)) return false;
  return true;
}

VoxelGrid BuildGrid(const TriangleMesh& mesh, int resolution, const Aabb& bounds) {
  if (mesh.empty()) throw Error(ErrorCode::kEmptyMesh, "cannot voxelize an empty mesh");
  VoxelGrid grid;
  grid.resolution = resolution;
  grid.bounds = bounds;
  grid.Validate();
  const Vec3 size = grid.CellSize();
  std::vector<char> hit(grid.CellCount(), 0);
  for (const auto& tri : mesh.triangles) {
    const Vec3 &a = mesh.vertices[tri[0]], &b = mesh.vertices[tri[1]], &c = mesh.vertices[tri[2]];
    const Vec3 lo = a.cwiseMin(b).cwiseMin(c), hi = a.cwiseMax(b).cwiseMax(c);
    CellCoord c0{}, c1{};
    bool outside = false;
    for (int k = 0; k < 3; ++k) {
      // Closed cells: a triangle touching a cell face also touches the neighbor.
      const double f0 = (lo[k] - bounds.lower[k]) / size[k], f1 = (hi[k] - bounds.lower[k]) / size[k];
      c0[k] = std::max(0, static_cast<int>(std::ceil(f0)) - 1);
      c1[k] = std::min(resolution - 1, static_cast<int>(std::floor(f1)));
      if (c0[k] > c1[k]) outside = true;
    }
    if (outside) continue;
    for (int k = c0[2]; k <= c1[2]; ++k) {
      for (int j = c0[1]; j <= c1[1]; ++j) {
        for (int i = c0[0]; i <= c1[0]; ++i) {
          const CellCoord cell{i, j, k};
          const uint32_t idx = grid.Linear(cell);
          if (hit[idx]) continue;
          if (TriangleIntersectsBox(a, b, c, grid.CellBox(cell))) hit[idx] = 1;
        }
      }
    }
  }
  for (uint32_t i = 0; i < hit.size(); ++i) {
    if (hit[i]) grid.valid.push_back(i);
  }
  return grid;
}

}  // namespace cofield
