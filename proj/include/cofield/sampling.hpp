// Copyright Contributors to the cofield project
// SPDX-License-Identifier: Apache-2.0

// Per-voxel SDF supervision. Samples live in a ball of radius_factor times the
// cell half-diagonal around each valid cell, so neighboring cells see
// overlapping data.

#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "cofield/grid.hpp"
#include "cofield/mesh_sdf.hpp"

namespace cofield {

/// Positions and distances are stored in single precision, exactly as they
/// are written to disk; the distance is evaluated at the rounded position.
struct SdfSample {
  Eigen::Vector3f position = Eigen::Vector3f::Zero();
  float sdf = 0.0f;
  uint32_t voxel = 0;
};

struct SamplingOptions {
  std::size_t per_voxel = 24;
  double radius_factor = 1.5;
  double near_fraction = 0.8;
  double sigma_cells = 0.25;  // noise scale in units of the cell size
};

/// Samples grouped by voxel in ascending voxel order.
class SampleSet {
 public:
  struct Group {
    uint32_t voxel;
    std::size_t begin, end;
  };

  SampleSet() = default;
  SampleSet(int resolution, const Aabb& bounds, std::vector<SdfSample> samples);

  int resolution() const { return resolution_; }
  const Aabb& bounds() const { return bounds_; }
  const std::vector<SdfSample>& samples() const { return samples_; }
  const std::vector<Group>& groups() const { return groups_; }
  std::span<const SdfSample> GroupSamples(std::size_t g) const {
    return {samples_.data() + groups_[g].begin, groups_[g].end - groups_[g].begin};
  }
  /// Grid descriptor whose valid set is the set of sampled voxels.
  VoxelGrid Grid() const;

 private:
  int resolution_ = 0;
  Aabb bounds_;
  std::vector<SdfSample> samples_;
  std::vector<Group> groups_;
};

/// Mixture sampling around one valid voxel: near_fraction of the points are
/// surface points inside the expanded ball perturbed by isotropic Gaussian
/// noise, the rest uniform in the expanded axis-aligned box. Deterministic per
/// (voxel, seed). Throws NoSurfaceInVoxel when the voxel misses the mesh.
std::vector<SdfSample> SampleVoxelPoints(const MeshSdf& oracle, const VoxelGrid& grid, uint32_t voxel,
                                         const SamplingOptions& options, uint64_t seed);

SampleSet BuildSampleSet(const MeshSdf& oracle, const VoxelGrid& grid, const SamplingOptions& options,
                         uint64_t seed);

void SaveSampleSet(const SampleSet& set, const std::filesystem::path& path);
SampleSet LoadSampleSet(const std::filesystem::path& path);

/// Moving-least-squares affine fit of the samples near a query point. Stands
/// in for the mesh oracle when only a SampleSet is available.
class SampleSdf {
 public:
  explicit SampleSdf(const SampleSet& set);
  double operator()(const Vec3& p) const;

 private:
  const SampleSet* set_;
  VoxelGrid grid_;
  std::vector<int64_t> group_of_cell_;
  double bandwidth_;
};

}  // namespace cofield
