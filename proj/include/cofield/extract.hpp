// Copyright Contributors to the cofield project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cofield/field.hpp"
#include "cofield/mesh.hpp"
#include "cofield/mlp.hpp"

namespace cofield {

/// Decoded SDF of a fitted field. Inside a valid cell the value is that
/// cell's local decode; in an invalid cell the nearest valid cell of the
/// surrounding 1-ring decodes instead; elsewhere the value is +cell size.
class BlendedSdf {
 public:
  /// Throws ConfigMismatch when the latent lengths differ.
  BlendedSdf(const Checkpoint& checkpoint, const CoordinateField& field);

  double operator()(const Vec3& x) const;
  void Evaluate(std::span<const Vec3> points, std::span<double> out) const;

  /// Slot whose decoder is used at x, or nullopt for the sentinel.
  std::optional<std::size_t> SlotFor(const Vec3& x) const;
  double sentinel() const { return sentinel_; }

 private:
  const Checkpoint* checkpoint_;
  const CoordinateField* field_;
  std::vector<Mat3> rotations_;
  double sentinel_;
};

using BatchField = std::function<void(std::span<const Vec3>, std::span<double>)>;

/// Zero level set of `sdf` sampled on (resolution + 1)^3 lattice points over
/// `bounds`. Vertices on shared edges are merged; every triangle faces along
/// the field gradient. NaN lattice values mark undefined points and cubes
/// touching one emit nothing. Throws InvalidArgument for resolution < 8.
TriangleMesh MarchingCubes(const BatchField& sdf, int resolution, const Aabb& bounds = Aabb{});
TriangleMesh MarchingCubes(const ScalarField& sdf, int resolution, const Aabb& bounds = Aabb{});

/// Zero level set of the decoded field over the field bounds. Lattice points
/// are undefined outside decoder coverage: in the sentinel region, and where
/// the decoding cell's center is farther than support_factor times the cell
/// half-diagonal (the extent of its training samples).
TriangleMesh ExtractMesh(const Checkpoint& checkpoint, const CoordinateField& field, int mc_resolution = 128,
                         double support_factor = 1.5);

/// Static 3-d tree for nearest-neighbor queries.
class KdTree {
 public:
  explicit KdTree(std::vector<Vec3> points);
  /// Squared distance to the nearest stored point.
  double NearestSquared(const Vec3& q) const;
  std::size_t size() const { return points_.size(); }

 private:
  struct Node {
    int axis;  // -1 for leaves
    double split;
    uint32_t begin, end;
    int32_t left, right;
  };
  int32_t Build(uint32_t begin, uint32_t end);

  std::vector<Vec3> points_;
  std::vector<Node> nodes_;
};

/// mean_a min_b |a - b|^2 + mean_b min_a |a - b|^2. Throws EmptySet.
double ChamferL2(const std::vector<Vec3>& a, const std::vector<Vec3>& b);
/// Exhaustive reference of ChamferL2.
double ChamferL2BruteForce(const std::vector<Vec3>& a, const std::vector<Vec3>& b);

struct EvalReport {
  double chamfer = 0.0;  // raw
  double chamfer_e4() const { return chamfer * 1e4; }
  std::size_t points = 0;
  int mc_resolution = 0;
  std::size_t vertices = 0;
  std::size_t triangles = 0;
  double seconds = 0.0;

  /// `key = value` lines.
  std::string ToText() const;
  std::string ToJson() const;
};

/// Chamfer between surface samples of two meshes. Both meshes are sampled
/// with the same seed. Throws EmptySet when either mesh is empty.
EvalReport EvaluateMeshes(const TriangleMesh& reconstructed, const TriangleMesh& reference, std::size_t n_points,
                          uint64_t seed);

/// Extracts the field at `mc_resolution` and compares it against `reference`.
EvalReport Evaluate(const CoordinateField& field, const Checkpoint& checkpoint, const TriangleMesh& reference,
                    int mc_resolution = 128, std::size_t n_points = 30000, uint64_t seed = 0,
                    TriangleMesh* extracted = nullptr);

}  // namespace cofield
