// Copyright Contributors to the cofield project
// SPDX-License-Identifier: Apache-2.0

#include "cofield/sampling.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/Dense>

#include "cofield/binary_io.hpp"
#include "cofield/error.hpp"
#include "cofield/rng.hpp"

namespace cofield {

SampleSet::SampleSet(int resolution, const Aabb& bounds, std::vector<SdfSample> samples)
    : resolution_(resolution), bounds_(bounds), samples_(std::move(samples)) {
  std::stable_sort(samples_.begin(), samples_.end(),
                   [](const SdfSample& a, const SdfSample& b) { return a.voxel < b.voxel; });
  for (std::size_t i = 0; i < samples_.size();) {
    std::size_t j = i;
    while (j < samples_.size() && samples_[j].voxel == samples_[i].voxel) ++j;
    groups_.push_back({samples_[i].voxel, i, j});
    i = j;
  }
}

VoxelGrid SampleSet::Grid() const {
  VoxelGrid grid;
  grid.resolution = resolution_;
  grid.bounds = bounds_;
  for (const auto& g : groups_) grid.valid.push_back(g.voxel);
  return grid;
}

namespace {

using Polygon = std::vector<Vec3>;

// Sutherland-Hodgman clip of a convex polygon against an axis-aligned box.
Polygon ClipToBox(Polygon poly, const Aabb& box) {
  for (int axis = 0; axis < 3; ++axis) {
    for (int side = 0; side < 2; ++side) {
      if (poly.empty()) return poly;
      const double bound = side == 0 ? box.lower[axis] : box.upper[axis];
      auto inside = [&](const Vec3& v) { return side == 0 ? v[axis] >= bound : v[axis] <= bound; };
      Polygon out;
      for (std::size_t i = 0; i < poly.size(); ++i) {
        const Vec3& cur = poly[i];
        const Vec3& nxt = poly[(i + 1) % poly.size()];
        const bool ci = inside(cur), ni = inside(nxt);
        if (ci) out.push_back(cur);
        if (ci != ni) {
          const double t = (bound - cur[axis]) / (nxt[axis] - cur[axis]);
          Vec3 x = cur + t * (nxt - cur);
          x[axis] = bound;
          out.push_back(x);
        }
      }
      poly = std::move(out);
    }
  }
  return poly;
}

struct Piece {
  Vec3 a, b, c;
};

}  // namespace

std::vector<SdfSample> SampleVoxelPoints(const MeshSdf& oracle, const VoxelGrid& grid, uint32_t voxel,
                                         const SamplingOptions& options, uint64_t seed) {
  if (options.per_voxel == 0) throw Error(ErrorCode::kInvalidArgument, "per-voxel sample count must be positive");
  if (voxel >= grid.CellCount()) throw Error(ErrorCode::kInvalidArgument, "voxel index out of range");
  const TriangleMesh& mesh = oracle.mesh();
  const Aabb cell = grid.CellBox(grid.Coord(voxel));
  const Vec3 center = cell.Center();
  const double radius = options.radius_factor * grid.CellHalfDiagonal();
  const Vec3 half_box = 0.5 * options.radius_factor * grid.CellSize();
  const double sigma = options.sigma_cells * grid.CellSize().maxCoeff();

  bool touches = false;
  for (uint32_t t : oracle.TrianglesInBox(cell)) {
    const auto& tri = mesh.triangles[t];
    if (TriangleIntersectsBox(mesh.vertices[tri[0]], mesh.vertices[tri[1]], mesh.vertices[tri[2]], cell)) {
      touches = true;
      break;
    }
  }
  if (!touches) {
    throw Error(ErrorCode::kNoSurfaceInVoxel, "voxel " + std::to_string(voxel) + " does not intersect the mesh");
  }

  const Aabb ball_box{center - Vec3::Constant(radius), center + Vec3::Constant(radius)};
  std::vector<Piece> pieces;
  std::vector<double> cdf;
  double total = 0.0;
  for (uint32_t t : oracle.TrianglesInBox(ball_box)) {
    const auto& tri = mesh.triangles[t];
    const Polygon poly = ClipToBox({mesh.vertices[tri[0]], mesh.vertices[tri[1]], mesh.vertices[tri[2]]}, ball_box);
    for (std::size_t k = 1; k + 1 < poly.size(); ++k) {
      const double area = 0.5 * (poly[k] - poly[0]).cross(poly[k + 1] - poly[0]).norm();
      if (area <= 0.0) continue;
      total += area;
      pieces.push_back({poly[0], poly[k], poly[k + 1]});
      cdf.push_back(total);
    }
  }

  Rng rng(seed, voxel);
  const auto n_near = static_cast<std::size_t>(std::llround(options.per_voxel * options.near_fraction));
  std::vector<SdfSample> out;
  out.reserve(options.per_voxel);
  auto emit = [&](const Vec3& x) {
    SdfSample s;
    s.position = x.cast<float>();
    s.sdf = static_cast<float>(oracle.SignedDistance(s.position.cast<double>()));
    s.voxel = voxel;
    out.push_back(s);
  };
  auto in_ball = [&](const Vec3& x) { return (x - center).norm() <= radius; };

  for (std::size_t i = 0; i < n_near && !pieces.empty(); ++i) {
    Vec3 surface = center;
    for (int attempt = 0; attempt < 1000; ++attempt) {
      const double pick = rng.Uniform() * total;
      const std::size_t k = std::min<std::size_t>(std::upper_bound(cdf.begin(), cdf.end(), pick) - cdf.begin(),
                                                  pieces.size() - 1);
      const double s = std::sqrt(rng.Uniform()), r = rng.Uniform();
      const Vec3 x = (1.0 - s) * pieces[k].a + s * (1.0 - r) * pieces[k].b + s * r * pieces[k].c;
      if (in_ball(x)) {
        surface = x;
        break;
      }
    }
    Vec3 x = surface;
    for (int attempt = 0; attempt < 100; ++attempt) {
      const Vec3 y = surface + Vec3(rng.Normal(sigma), rng.Normal(sigma), rng.Normal(sigma));
      if (in_ball(y)) {
        x = y;
        break;
      }
    }
    emit(x);
  }
  while (out.size() < options.per_voxel) {
    emit(center + Vec3(rng.Uniform(-half_box.x(), half_box.x()), rng.Uniform(-half_box.y(), half_box.y()),
                       rng.Uniform(-half_box.z(), half_box.z())));
  }
  return out;
}

SampleSet BuildSampleSet(const MeshSdf& oracle, const VoxelGrid& grid, const SamplingOptions& options,
                         uint64_t seed) {
  std::vector<SdfSample> all;
  all.reserve(grid.valid.size() * options.per_voxel);
  for (uint32_t voxel : grid.valid) {
    auto samples = SampleVoxelPoints(oracle, grid, voxel, options, seed);
    all.insert(all.end(), samples.begin(), samples.end());
  }
  return SampleSet(grid.resolution, grid.bounds, std::move(all));
}

void SaveSampleSet(const SampleSet& set, const std::filesystem::path& path) {
  io::Writer w;
  w.PutMagic("CFSM");
  w.Put<uint32_t>(1);
  w.Put<uint32_t>(static_cast<uint32_t>(set.resolution()));
  for (int k = 0; k < 3; ++k) w.Put<float>(static_cast<float>(set.bounds().lower[k]));
  for (int k = 0; k < 3; ++k) w.Put<float>(static_cast<float>(set.bounds().upper[k]));
  w.Put<uint64_t>(set.samples().size());
  for (const auto& s : set.samples()) {
    w.Put<uint32_t>(s.voxel);
    for (int k = 0; k < 3; ++k) w.Put<float>(s.position[k]);
    w.Put<float>(s.sdf);
  }
  w.Commit(path);
}

SampleSet LoadSampleSet(const std::filesystem::path& path) {
  io::Reader r(path);
  r.ExpectMagic("CFSM");
  r.ExpectVersion(1);
  const auto resolution = r.Get<uint32_t>();
  Aabb bounds;
  for (int k = 0; k < 3; ++k) bounds.lower[k] = r.Get<float>();
  for (int k = 0; k < 3; ++k) bounds.upper[k] = r.Get<float>();
  const auto count = r.Get<uint64_t>();
  if (count > r.remaining() / 20) throw Error(ErrorCode::kIoError, path.string() + ": truncated sample records");
  const uint64_t cells = static_cast<uint64_t>(resolution) * resolution * resolution;
  std::vector<SdfSample> samples(count);
  for (auto& s : samples) {
    s.voxel = r.Get<uint32_t>();
    if (s.voxel >= cells) throw Error(ErrorCode::kParseError, path.string() + ": voxel index out of range");
    for (int k = 0; k < 3; ++k) s.position[k] = r.Get<float>();
    s.sdf = r.Get<float>();
  }
  return SampleSet(static_cast<int>(resolution), bounds, std::move(samples));
}

SampleSdf::SampleSdf(const SampleSet& set) : set_(&set), grid_(set.Grid()) {
  group_of_cell_.assign(grid_.CellCount(), -1);
  for (std::size_t g = 0; g < set.groups().size(); ++g) group_of_cell_[set.groups()[g].voxel] = static_cast<int64_t>(g);
  bandwidth_ = 0.5 * grid_.CellSize().maxCoeff();
}

double SampleSdf::operator()(const Vec3& p) const {
  const auto cell = VoxelOf(grid_, p);
  if (!cell) return grid_.CellSize().maxCoeff();
  Eigen::Matrix4d normal = Eigen::Matrix4d::Zero();
  Eigen::Vector4d rhs = Eigen::Vector4d::Zero();
  double weight_sum = 0.0;
  for (int dz = -1; dz <= 1; ++dz) {
    for (int dy = -1; dy <= 1; ++dy) {
      for (int dx = -1; dx <= 1; ++dx) {
        const CellCoord c{(*cell)[0] + dx, (*cell)[1] + dy, (*cell)[2] + dz};
        if (std::any_of(c.begin(), c.end(), [&](int v) { return v < 0 || v >= grid_.resolution; })) continue;
        const int64_t g = group_of_cell_[grid_.Linear(c)];
        if (g < 0) continue;
        for (const SdfSample& s : set_->GroupSamples(static_cast<std::size_t>(g))) {
          const Vec3 d = s.position.cast<double>() - p;
          const double w = std::exp(-d.squaredNorm() / (2.0 * bandwidth_ * bandwidth_));
          const Eigen::Vector4d phi(1.0, d.x(), d.y(), d.z());
          normal += w * phi * phi.transpose();
          rhs += w * s.sdf * phi;
          weight_sum += w;
        }
      }
    }
  }
  if (weight_sum < 1e-12) return grid_.CellSize().maxCoeff();
  normal.diagonal().array() += 1e-9 * weight_sum;
  return normal.ldlt().solve(rhs)[0];
}

}  // namespace cofield
