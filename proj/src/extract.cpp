// Copyright Contributors to the cofield project
// SPDX-License-Identifier: Apache-2.0

#include "cofield/extract.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>
#include <unordered_map>

#include <json.hpp>

#include "cofield/error.hpp"
#include "cofield/grid.hpp"
#include "mc_tables.hpp"

namespace cofield {
namespace {

constexpr std::size_t kBatch = 4096;

double BoxDistanceSquared(const Aabb& box, const Vec3& p) {
  const Vec3 d = (box.lower - p).cwiseMax(p - box.upper).cwiseMax(0.0);
  return d.squaredNorm();
}

}  // namespace

BlendedSdf::BlendedSdf(const Checkpoint& checkpoint, const CoordinateField& field)
    : checkpoint_(&checkpoint), field_(&field), sentinel_(field.grid().CellSize().maxCoeff()) {
  if (checkpoint.params.config.latent_dim() != field.latent_dim()) {
    throw Error(ErrorCode::kConfigMismatch, "decoder expects latent length " +
                                                std::to_string(checkpoint.params.config.latent_dim()) +
                                                ", field has " + std::to_string(field.latent_dim()));
  }
  rotations_.reserve(field.size());
  for (std::size_t s = 0; s < field.size(); ++s) rotations_.push_back(QuaternionToRotation(field.Frame(s).rotation));
}

std::optional<std::size_t> BlendedSdf::SlotFor(const Vec3& x) const {
  const VoxelGrid& grid = field_->grid();
  const auto cell = VoxelOf(grid, x);
  if (!cell) return std::nullopt;
  if (auto slot = field_->Slot(grid.Linear(*cell))) return slot;
  std::optional<std::size_t> best;
  double best_d = std::numeric_limits<double>::infinity();
  for (int dk = -1; dk <= 1; ++dk) {
    for (int dj = -1; dj <= 1; ++dj) {
      for (int di = -1; di <= 1; ++di) {
        const CellCoord c{(*cell)[0] + di, (*cell)[1] + dj, (*cell)[2] + dk};
        if (c[0] < 0 || c[1] < 0 || c[2] < 0 || c[0] >= grid.resolution || c[1] >= grid.resolution ||
            c[2] >= grid.resolution) {
          continue;
        }
        const auto slot = field_->Slot(grid.Linear(c));
        if (!slot) continue;
        const double d = BoxDistanceSquared(grid.CellBox(c), x);
        // Ring order is ascending in linear index, so strict < keeps the lowest index on ties.
        if (d < best_d) {
          best_d = d;
          best = slot;
        }
      }
    }
  }
  return best;
}

double BlendedSdf::operator()(const Vec3& x) const {
  double out;
  Evaluate(std::span<const Vec3>(&x, 1), std::span<double>(&out, 1));
  return out;
}

void BlendedSdf::Evaluate(std::span<const Vec3> points, std::span<double> out) const {
  if (points.size() != out.size()) throw Error(ErrorCode::kShapeMismatch, "point and output counts differ");
  using Matrix = MlpEvaluator<float>::Matrix;
  const MlpParams& params = checkpoint_->params;
  const int latent_dim = field_->latent_dim();
  MlpEvaluator<float> eval;
  Matrix x;
  std::vector<std::size_t> index;
  for (std::size_t begin = 0; begin < points.size(); begin += kBatch) {
    const std::size_t end = std::min(points.size(), begin + kBatch);
    index.clear();
    x.resize(params.config.input_dim(), static_cast<Eigen::Index>(end - begin));
    for (std::size_t i = begin; i < end; ++i) {
      const auto slot = SlotFor(points[i]);
      if (!slot) {
        out[i] = sentinel_;
        continue;
      }
      const auto c = static_cast<Eigen::Index>(index.size());
      x.col(c).head<3>() = (rotations_[*slot].transpose() * (points[i] - field_->Frame(*slot).origin)).cast<float>();
      const auto z = field_->Latent(*slot);
      for (int k = 0; k < latent_dim; ++k) x(3 + k, c) = z[k];
      index.push_back(i);
    }
    if (index.empty()) continue;
    const Matrix& y = eval.Forward(params, x.leftCols(static_cast<Eigen::Index>(index.size())));
    for (std::size_t c = 0; c < index.size(); ++c) out[index[c]] = y(0, static_cast<Eigen::Index>(c));
  }
}

TriangleMesh MarchingCubes(const ScalarField& sdf, int resolution, const Aabb& bounds) {
  return MarchingCubes(
      [&sdf](std::span<const Vec3> p, std::span<double> out) {
        for (std::size_t i = 0; i < p.size(); ++i) out[i] = sdf(p[i]);
      },
      resolution, bounds);
}

TriangleMesh MarchingCubes(const BatchField& sdf, int resolution, const Aabb& bounds) {
  if (resolution < 8) throw Error(ErrorCode::kInvalidArgument, "marching cubes resolution must be >= 8");
  const int n = resolution + 1;
  const Vec3 step = bounds.Extent() / resolution;
  auto lattice = [&](int i, int j, int k) -> Vec3 { return bounds.lower + Vec3(i * step.x(), j * step.y(), k * step.z()); };
  auto at = [n](int i, int j, int k) { return static_cast<std::size_t>(i) + n * (j + static_cast<std::size_t>(n) * k); };

  std::vector<double> values(static_cast<std::size_t>(n) * n * n);
  std::vector<Vec3> layer(static_cast<std::size_t>(n) * n);
  for (int k = 0; k < n; ++k) {
    for (int j = 0; j < n; ++j) {
      for (int i = 0; i < n; ++i) layer[i + static_cast<std::size_t>(n) * j] = lattice(i, j, k);
    }
    sdf(layer, std::span<double>(values.data() + at(0, 0, k), layer.size()));
  }

  TriangleMesh mesh;
  std::unordered_map<uint64_t, uint32_t> vertex_of_edge;
  auto edge_vertex = [&](int i, int j, int k, int edge) -> uint32_t {
    const int* a = mc::kCornerOffset[mc::kEdgeCorners[edge][0]];
    const int* b = mc::kCornerOffset[mc::kEdgeCorners[edge][1]];
    int lo[3], axis = 0;
    for (int d = 0; d < 3; ++d) {
      lo[d] = std::min(a[d], b[d]);
      if (a[d] != b[d]) axis = d;
    }
    const int pi = i + lo[0], pj = j + lo[1], pk = k + lo[2];
    const uint64_t key = 3 * static_cast<uint64_t>(at(pi, pj, pk)) + axis;
    const auto it = vertex_of_edge.find(key);
    if (it != vertex_of_edge.end()) return it->second;
    const int qi = pi + (axis == 0), qj = pj + (axis == 1), qk = pk + (axis == 2);
    const double v0 = values[at(pi, pj, pk)], v1 = values[at(qi, qj, qk)];
    const double t = std::clamp(v0 / (v0 - v1), 0.0, 1.0);
    const Vec3 p0 = lattice(pi, pj, pk), p1 = lattice(qi, qj, qk);
    const auto id = static_cast<uint32_t>(mesh.vertices.size());
    mesh.vertices.push_back(p0 + t * (p1 - p0));
    vertex_of_edge.emplace(key, id);
    return id;
  };

  for (int k = 0; k < resolution; ++k) {
    for (int j = 0; j < resolution; ++j) {
      for (int i = 0; i < resolution; ++i) {
        double corner[8];
        int index = 0;
        bool defined = true;
        for (int c = 0; c < 8; ++c) {
          const int* o = mc::kCornerOffset[c];
          corner[c] = values[at(i + o[0], j + o[1], k + o[2])];
          defined = defined && !std::isnan(corner[c]);
          if (corner[c] < 0.0) index |= 1 << c;
        }
        if (!defined || index == 0 || index == 255) continue;
        const int8_t* tris = mc::kTriangles[index];
        for (int t = 0; tris[t] >= 0; t += 3) {
          std::array<uint32_t, 3> tri = {edge_vertex(i, j, k, tris[t]), edge_vertex(i, j, k, tris[t + 1]),
                                         edge_vertex(i, j, k, tris[t + 2])};
          const Vec3& a = mesh.vertices[tri[0]];
          const Vec3& b = mesh.vertices[tri[1]];
          const Vec3& c = mesh.vertices[tri[2]];
          // Gradient of the trilinear interpolant at the centroid.
          const Vec3 u = ((a + b + c) / 3.0 - lattice(i, j, k)).cwiseQuotient(step).cwiseMax(0.0).cwiseMin(1.0);
          Vec3 grad = Vec3::Zero();
          for (int q = 0; q < 8; ++q) {
            const int* o = mc::kCornerOffset[q];
            const double wx = o[0] ? u.x() : 1.0 - u.x(), wy = o[1] ? u.y() : 1.0 - u.y(),
                         wz = o[2] ? u.z() : 1.0 - u.z();
            grad.x() += corner[q] * (o[0] ? 1.0 : -1.0) * wy * wz / step.x();
            grad.y() += corner[q] * wx * (o[1] ? 1.0 : -1.0) * wz / step.y();
            grad.z() += corner[q] * wx * wy * (o[2] ? 1.0 : -1.0) / step.z();
          }
          if ((b - a).cross(c - a).dot(grad) < 0.0) std::swap(tri[1], tri[2]);
          mesh.triangles.push_back(tri);
        }
      }
    }
  }
  return mesh;
}

KdTree::KdTree(std::vector<Vec3> points) : points_(std::move(points)) {
  if (!points_.empty()) Build(0, static_cast<uint32_t>(points_.size()));
}

int32_t KdTree::Build(uint32_t begin, uint32_t end) {
  const auto id = static_cast<int32_t>(nodes_.size());
  nodes_.push_back({-1, 0.0, begin, end, -1, -1});
  if (end - begin <= 8) return id;
  Vec3 lo = points_[begin], hi = points_[begin];
  for (uint32_t i = begin; i < end; ++i) {
    lo = lo.cwiseMin(points_[i]);
    hi = hi.cwiseMax(points_[i]);
  }
  Eigen::Index axis;
  (hi - lo).maxCoeff(&axis);
  const uint32_t mid = begin + (end - begin) / 2;
  std::nth_element(points_.begin() + begin, points_.begin() + mid, points_.begin() + end,
                   [axis](const Vec3& a, const Vec3& b) { return a[axis] < b[axis]; });
  const double split = points_[mid][axis];
  const int32_t left = Build(begin, mid);
  const int32_t right = Build(mid, end);
  nodes_[id].axis = static_cast<int>(axis);
  nodes_[id].split = split;
  nodes_[id].left = left;
  nodes_[id].right = right;
  return id;
}

double KdTree::NearestSquared(const Vec3& q) const {
  if (points_.empty()) throw Error(ErrorCode::kEmptySet, "nearest-neighbor query on an empty set");
  double best = std::numeric_limits<double>::infinity();
  struct Item {
    int32_t node;
    double bound;
  };
  std::vector<Item> stack{{0, 0.0}};
  while (!stack.empty()) {
    const Item item = stack.back();
    stack.pop_back();
    if (item.bound >= best) continue;
    const Node& node = nodes_[item.node];
    if (node.axis < 0) {
      for (uint32_t i = node.begin; i < node.end; ++i) best = std::min(best, (points_[i] - q).squaredNorm());
      continue;
    }
    const double diff = q[node.axis] - node.split;
    const int32_t near = diff < 0.0 ? node.left : node.right;
    const int32_t far = diff < 0.0 ? node.right : node.left;
    stack.push_back({far, std::max(item.bound, diff * diff)});
    stack.push_back({near, item.bound});
  }
  return best;
}

namespace {

double MeanNearest(const std::vector<Vec3>& from, const KdTree& to) {
  double sum = 0.0;
  for (const Vec3& p : from) sum += to.NearestSquared(p);
  return sum / static_cast<double>(from.size());
}

}  // namespace

double ChamferL2(const std::vector<Vec3>& a, const std::vector<Vec3>& b) {
  if (a.empty() || b.empty()) throw Error(ErrorCode::kEmptySet, "chamfer distance needs two non-empty sets");
  const KdTree tree_a(a), tree_b(b);
  return MeanNearest(a, tree_b) + MeanNearest(b, tree_a);
}

double ChamferL2BruteForce(const std::vector<Vec3>& a, const std::vector<Vec3>& b) {
  if (a.empty() || b.empty()) throw Error(ErrorCode::kEmptySet, "chamfer distance needs two non-empty sets");
  auto one_way = [](const std::vector<Vec3>& from, const std::vector<Vec3>& to) {
    double sum = 0.0;
    for (const Vec3& p : from) {
      double best = std::numeric_limits<double>::infinity();
      for (const Vec3& q : to) best = std::min(best, (p - q).squaredNorm());
      sum += best;
    }
    return sum / static_cast<double>(from.size());
  };
  return one_way(a, b) + one_way(b, a);
}

std::string EvalReport::ToText() const {
  char buf[512];
  std::snprintf(buf, sizeof(buf),
                "chamfer = %.9g\nchamfer_e4 = %.9g\npoints = %zu\nmc_resolution = %d\nvertices = %zu\n"
                "triangles = %zu\nseconds = %.3f\n",
                chamfer, chamfer_e4(), points, mc_resolution, vertices, triangles, seconds);
  return buf;
}

std::string EvalReport::ToJson() const {
  nlohmann::json j{{"chamfer", chamfer},   {"chamfer_e4", chamfer_e4()}, {"points", points},
                   {"mc_resolution", mc_resolution}, {"vertices", vertices}, {"triangles", triangles},
                   {"seconds", seconds}};
  return j.dump();
}

EvalReport EvaluateMeshes(const TriangleMesh& reconstructed, const TriangleMesh& reference, std::size_t n_points,
                          uint64_t seed) {
  const auto start = std::chrono::steady_clock::now();
  if (reconstructed.empty()) throw Error(ErrorCode::kEmptySet, "reconstructed mesh is empty");
  if (reference.empty()) throw Error(ErrorCode::kEmptySet, "reference mesh is empty");
  EvalReport report;
  report.points = n_points;
  report.vertices = reconstructed.vertices.size();
  report.triangles = reconstructed.triangles.size();
  report.chamfer = ChamferL2(SampleMeshSurface(reconstructed, n_points, seed),
                             SampleMeshSurface(reference, n_points, seed));
  report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

TriangleMesh ExtractMesh(const Checkpoint& checkpoint, const CoordinateField& field, int mc_resolution,
                         double support_factor) {
  const BlendedSdf sdf(checkpoint, field);
  const VoxelGrid& grid = field.grid();
  const double support = support_factor * grid.CellHalfDiagonal();
  auto batch = [&](std::span<const Vec3> p, std::span<double> out) {
    sdf.Evaluate(p, out);
    for (std::size_t i = 0; i < p.size(); ++i) {
      const auto slot = sdf.SlotFor(p[i]);
      if (!slot || (p[i] - grid.CellCenter(field.Cell(*slot))).norm() > support) {
        out[i] = std::numeric_limits<double>::quiet_NaN();
      }
    }
  };
  return MarchingCubes(batch, mc_resolution, grid.bounds);
}

EvalReport Evaluate(const CoordinateField& field, const Checkpoint& checkpoint, const TriangleMesh& reference,
                    int mc_resolution, std::size_t n_points, uint64_t seed, TriangleMesh* extracted) {
  const auto start = std::chrono::steady_clock::now();
  TriangleMesh mesh = ExtractMesh(checkpoint, field, mc_resolution);
  EvalReport report = EvaluateMeshes(mesh, reference, n_points, seed);
  report.mc_resolution = mc_resolution;
  report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  if (extracted) *extracted = std::move(mesh);
  return report;
}

}  // namespace cofield
