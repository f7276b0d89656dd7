// Copyright Contributors to the cofield project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <functional>
#include <vector>

#include "cofield/mesh.hpp"

namespace cofield {

/// Closest-point query result. `feature` is 0 for the face interior,
/// 1..3 for edges (v0v1, v1v2, v2v0) and 4..6 for vertices v0..v2.
struct ClosestPoint {
  double distance = 0.0;
  Vec3 point = Vec3::Zero();
  uint32_t triangle = 0;
  int feature = 0;
};

ClosestPoint ClosestPointOnTriangle(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c);

/// Signed distance to a triangle mesh (negative inside). Unsigned distance
/// comes from a BVH over the triangles. Watertight meshes are signed with the
/// angle-weighted pseudonormal of the closest feature; other meshes by a
/// majority vote of axis-ray parities.
class MeshSdf {
 public:
  explicit MeshSdf(TriangleMesh mesh);

  double operator()(const Vec3& p) const { return SignedDistance(p); }
  double SignedDistance(const Vec3& p) const;
  double UnsignedDistance(const Vec3& p) const { return Closest(p).distance; }
  ClosestPoint Closest(const Vec3& p) const;
  /// Second-smallest distance over triangles not sharing a vertex with the closest one.
  double SecondDistance(const Vec3& p) const;

  /// +1 outside / -1 inside by pseudonormal at the closest feature.
  int PseudonormalSign(const Vec3& p) const;
  /// +1 outside / -1 inside by majority over the +x, +y, +z ray parities.
  /// Rays whose supporting line misses the mesh abstain; if every ray
  /// abstains the pseudonormal sign is used.
  int RayParitySign(const Vec3& p) const;

  /// Triangles whose bounding box overlaps `box`.
  std::vector<uint32_t> TrianglesInBox(const Aabb& box) const;

  const TriangleMesh& mesh() const { return mesh_; }
  bool watertight() const { return watertight_; }

 private:
  struct Node {
    Aabb box;
    uint32_t first = 0;  // leaf: range into order_, inner: left child index
    uint32_t count = 0;  // 0 for inner nodes
    uint32_t right = 0;
  };

  uint32_t Build(uint32_t begin, uint32_t end);
  int RayHits(const Vec3& p, int axis, int direction) const;

  TriangleMesh mesh_;
  bool watertight_ = false;
  std::vector<Node> nodes_;
  std::vector<uint32_t> order_;
  std::vector<Aabb> tri_boxes_;
  std::vector<Vec3> face_normals_;
  std::vector<std::array<Vec3, 3>> edge_normals_;
  std::vector<Vec3> vertex_normals_;
};

/// Exhaustive O(n) scan for the unsigned distance with ray-parity sign
/// (over +-x, +-y, +-z). Test oracle for MeshSdf.
double BruteForceSignedDistance(const TriangleMesh& mesh, const Vec3& p);

using ScalarField = std::function<double(const Vec3&)>;

/// Central-difference gradient, two oracle calls per axis.
Vec3 SdfGradient(const ScalarField& oracle, const Vec3& p, double h);

}  // namespace cofield
