// Copyright Contributors to the cofield project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <vector>

#include "cofield/mesh.hpp"

namespace cofield {

using CellCoord = std::array<int, 3>;

/// V x V x V cells over `bounds`; `valid` holds the sorted linear indices of
/// cells whose box intersects the surface. Linear index = i + V (j + V k).
struct VoxelGrid {
  int resolution = 32;
  Aabb bounds;
  std::vector<uint32_t> valid;

  Vec3 CellSize() const { return bounds.Extent() / resolution; }
  double CellHalfDiagonal() const { return 0.5 * CellSize().norm(); }
  uint32_t CellCount() const { return static_cast<uint32_t>(resolution) * resolution * resolution; }
  uint32_t Linear(const CellCoord& c) const {
    return static_cast<uint32_t>(c[0] + resolution * (c[1] + resolution * c[2]));
  }
  CellCoord Coord(uint32_t linear) const {
    return {static_cast<int>(linear % resolution), static_cast<int>((linear / resolution) % resolution),
            static_cast<int>(linear / (resolution * resolution))};
  }
  Aabb CellBox(const CellCoord& c) const;
  Vec3 CellCenter(uint32_t linear) const { return CellBox(Coord(linear)).Center(); }
  /// Throws InvalidArgument on V < 2, degenerate bounds or out-of-range indices.
  void Validate() const;
};

/// Containing cell; faces shared by two cells belong to the higher index, and
/// points on the upper bound clamp to the last cell. Outside bounds -> nullopt.
std::optional<CellCoord> VoxelOf(const VoxelGrid& grid, const Vec3& p);

/// Closed separating-axis test (touching counts as intersecting).
bool TriangleIntersectsBox(const Vec3& a, const Vec3& b, const Vec3& c, const Aabb& box);

/// Grid over `bounds` whose valid cells intersect at least one triangle.
VoxelGrid BuildGrid(const TriangleMesh& mesh, int resolution, const Aabb& bounds = Aabb{});

}  // namespace cofield
