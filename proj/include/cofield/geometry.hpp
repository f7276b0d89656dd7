// Copyright Contributors to the cofield project
// SPDX-License-Identifier: Apache-2.0

// Analytic local surfaces: quadratic height-field patches and sharp-edge
// patches made of two quadratic halves. Each carries a cheap second-order
// SDF approximation and an exact closest-point oracle.

#pragma once

#include <cstdint>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace cofield {

using Vec3 = Eigen::Vector3d;

/// Rigid pose mapping local coordinates to world: world = R * local + t.
struct RigidTransform {
  Eigen::Quaterniond rotation = Eigen::Quaterniond::Identity();
  Vec3 translation = Vec3::Zero();

  Vec3 Apply(const Vec3& local) const { return rotation * local + translation; }
  Vec3 ApplyInverse(const Vec3& world) const {
    return rotation.conjugate() * (world - translation);
  }
  /// Throws InvalidArgument unless |q| = 1 within 1e-9.
  void Validate() const;
};

/// z = 1/2 (a u^2 + c v^2 + 2 b u v) over the disc u^2 + v^2 <= radius^2.
struct QuadraticPatch {
  double a = 0.0;
  double b = 0.0;
  double c = 0.0;
  double radius = 1.0;
  RigidTransform pose;

  double Height(double u, double v) const { return 0.5 * (a * u * u + c * v * v + 2.0 * b * u * v); }
  /// Surface point in world coordinates.
  Vec3 Point(double u, double v) const { return pose.Apply(Vec3(u, v, Height(u, v))); }
  /// Unit normal (+z side) in patch-local coordinates.
  Vec3 LocalNormal(double u, double v) const;
};

/// Two quadratic halves sharing the v^2 coefficient, stitched along u = 0:
/// the u <= 0 half uses (a1, b1, e1) and the u > 0 half uses (a2, b2, e2).
struct SharpEdgePatch {
  double a1 = 0.0, b1 = 0.0, e1 = 0.0;
  double a2 = 0.0, b2 = 0.0, e2 = 0.0;
  double c1 = 0.0;
  double radius = 1.0;

  double Height(double u, double v) const;
  Vec3 Point(double u, double v) const { return {u, v, Height(u, v)}; }
};

/// Result of the exact closest-point solve. `converged` is false when no
/// Newton restart converged and no boundary minimum beat the seed grid; the
/// value is then the best grid estimate.
struct ExactSdf {
  double sdf = 0.0;
  double u = 0.0;
  double v = 0.0;
  bool converged = true;
};

double PatchSdfApprox(const QuadraticPatch& patch, const Vec3& p);
ExactSdf PatchSdfExact(const QuadraticPatch& patch, const Vec3& p, double tol = 1e-12);

double SharpEdgeSdfApprox(const SharpEdgePatch& patch, const Vec3& p);
/// Minimum over both halves, each restricted to its half disc. The sign is
/// that of z - f(x, y), i.e. which side of the height field p lies on.
ExactSdf SharpEdgeSdfExact(const SharpEdgePatch& patch, const Vec3& p, double tol = 1e-12);

/// n points f(u, v) with (u, v) uniform on the disc; deterministic per seed.
std::vector<Vec3> SampleSurface(const QuadraticPatch& patch, std::size_t n, uint64_t seed);
std::vector<Vec3> SampleSurface(const SharpEdgePatch& patch, std::size_t n, uint64_t seed);

}  // namespace cofield
