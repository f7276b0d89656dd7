// Copyright Contributors to the cofield project
// SPDX-License-Identifier: Apache-2.0

// The coordinate field: one rigid frame and one latent code per valid cell.
// A frame maps world points into the cell's local system,
//   x_local = R^T (x - o),  R = [n, t, n x t] = rotation(q / |q|),
// so the first local axis is the estimated surface normal.

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "cofield/grid.hpp"
#include "cofield/mesh_sdf.hpp"
#include "cofield/sampling.hpp"

namespace cofield {

using Quaternion = Eigen::Vector4d;  // (w, x, y, z)
using Mat3 = Eigen::Matrix3d;

/// Rotation of q / |q|. Throws ZeroQuaternion when |q| < 1e-12.
Mat3 QuaternionToRotation(const Quaternion& q);
Quaternion RotationToQuaternion(const Mat3& rotation);

struct CoordinateFrame {
  Quaternion rotation = Quaternion(1.0, 0.0, 0.0, 0.0);
  Vec3 origin = Vec3::Zero();
};

Vec3 WorldToLocal(const CoordinateFrame& frame, const Vec3& p);
Vec3 LocalToWorld(const CoordinateFrame& frame, const Vec3& x);

struct FrameGradient {
  Quaternion rotation = Quaternion::Zero();
  Vec3 origin = Vec3::Zero();
};

/// Chain rule through x_local = R(q/|q|)^T (p - o) for a set of points.
/// `outer` = sum_s (p_s - o) g_s^T and `sum` = sum_s g_s, with g_s the loss
/// gradient with respect to x_local of point s.
FrameGradient BackpropFrame(const CoordinateFrame& frame, const Mat3& outer, const Vec3& sum);

class CoordinateField {
 public:
  static constexpr int kFrameStride = 7;  // qw qx qy qz ox oy oz

  CoordinateField() = default;
  /// Identity rotations, origins at cell centers, zero latents.
  CoordinateField(VoxelGrid grid, int latent_dim);

  const VoxelGrid& grid() const { return grid_; }
  int latent_dim() const { return latent_dim_; }
  std::size_t size() const { return grid_.valid.size(); }
  uint32_t Cell(std::size_t slot) const { return grid_.valid[slot]; }
  std::optional<std::size_t> Slot(uint32_t cell) const;

  CoordinateFrame Frame(std::size_t slot) const;
  void SetFrame(std::size_t slot, const CoordinateFrame& frame);
  /// Rescales every quaternion to unit length.
  void NormalizeFrames();

  std::span<double> frame_params() { return frames_; }
  std::span<const double> frame_params() const { return frames_; }
  std::span<float> latents() { return latents_; }
  std::span<const float> latents() const { return latents_; }
  std::span<float> Latent(std::size_t slot) {
    return {latents_.data() + slot * latent_dim_, static_cast<std::size_t>(latent_dim_)};
  }
  std::span<const float> Latent(std::size_t slot) const {
    return {latents_.data() + slot * latent_dim_, static_cast<std::size_t>(latent_dim_)};
  }

  /// Fills every latent with N(0, sigma^2) draws from `seed`.
  void RandomizeLatents(uint64_t seed, double sigma = 0.01);

 private:
  VoxelGrid grid_;
  int latent_dim_ = 0;
  std::vector<int32_t> slot_of_cell_;
  std::vector<double> frames_;
  std::vector<float> latents_;
};

/// Geometry-aware frame initialization from the samples of each valid cell:
/// origin at the cell center, normal = dominant eigenvector of the oracle
/// gradient covariance (oriented along the mean gradient), tangent = dominant
/// in-plane direction of the sample positions. Latents get N(0, 0.01^2).
/// Returns the cells whose gradient covariance vanished; those keep the world
/// axes.
std::vector<uint32_t> InitFrames(CoordinateField& field, const SampleSet& samples, const ScalarField& oracle,
                                 uint64_t seed);

/// World-axis frames at the cell centers and N(0, 0.01^2) latents.
void InitIdentityFrames(CoordinateField& field, uint64_t seed);

void SaveField(const CoordinateField& field, const std::filesystem::path& path);
CoordinateField LoadField(const std::filesystem::path& path);

}  // namespace cofield
