// Copyright Contributors to the cofield project
// SPDX-License-Identifier: Apache-2.0

#include "cofield/mesh_sdf.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>

#include "cofield/error.hpp"

namespace cofield {

ClosestPoint ClosestPointOnTriangle(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c) {
  // Voronoi-region walk (Ericson, Real-Time Collision Detection 5.1.5).
  ClosestPoint out;
  const Vec3 ab = b - a, ac = c - a, ap = p - a;
  const double d1 = ab.dot(ap), d2 = ac.dot(ap);
  auto finish = [&](const Vec3& q, int feature) {
    out.point = q;
    out.feature = feature;
    out.distance = (p - q).norm();
    return out;
  };
  if (d1 <= 0.0 && d2 <= 0.0) return finish(a, 4);
  const Vec3 bp = p - b;
  const double d3 = ab.dot(bp), d4 = ac.dot(bp);
  if (d3 >= 0.0 && d4 <= d3) return finish(b, 5);
  const double vc = d1 * d4 - d3 * d2;
  if (vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0) return finish(a + (d1 / (d1 - d3)) * ab, 1);
  const Vec3 cp = p - c;
  const double d5 = ab.dot(cp), d6 = ac.dot(cp);
  if (d6 >= 0.0 && d5 <= d6) return finish(c, 6);
  const double vb = d5 * d2 - d1 * d6;
  if (vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0) return finish(a + (d2 / (d2 - d6)) * ac, 3);
  const double va = d3 * d6 - d5 * d4;
  if (va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0) {
    return finish(b + ((d4 - d3) / ((d4 - d3) + (d5 - d6))) * (c - b), 2);
  }
  const double denom = 1.0 / (va + vb + vc);
  return finish(a + ab * (vb * denom) + ac * (vc * denom), 0);
}

namespace {

double BoxDistance2(const Aabb& box, const Vec3& p) {
  const Vec3 d = (box.lower - p).cwiseMax(p - box.upper).cwiseMax(0.0);
  return d.squaredNorm();
}

bool BoxesOverlap(const Aabb& a, const Aabb& b) {
  return (a.lower.array() <= b.upper.array()).all() && (b.lower.array() <= a.upper.array()).all();
}

// Crossing test of an axis-parallel ray from p against one triangle, using a
// top-left tie rule in the projected plane so that a ray through a shared
// edge or vertex is counted once. Returns +1 / -1 for a hit in the positive /
// negative direction along `axis`, 0 for a miss.
int AxisRayCrossing(const Vec3& p, int axis, const Vec3& a, const Vec3& b, const Vec3& c) {
  const int i = (axis + 1) % 3, j = (axis + 2) % 3;
  std::array<Eigen::Vector2d, 3> q{Eigen::Vector2d(a[i], a[j]), Eigen::Vector2d(b[i], b[j]),
                                   Eigen::Vector2d(c[i], c[j])};
  const double area = (q[1] - q[0]).x() * (q[2] - q[0]).y() - (q[1] - q[0]).y() * (q[2] - q[0]).x();
  if (area == 0.0) return 0;
  std::array<double, 3> depth{a[axis], b[axis], c[axis]};
  if (area < 0.0) {
    std::swap(q[1], q[2]);
    std::swap(depth[1], depth[2]);
  }
  const Eigen::Vector2d pt(p[i], p[j]);
  std::array<double, 3> w{};
  for (int k = 0; k < 3; ++k) {
    const Eigen::Vector2d& s = q[k];
    const Eigen::Vector2d d = q[(k + 1) % 3] - s;
    const double e = d.x() * (pt.y() - s.y()) - d.y() * (pt.x() - s.x());
    const bool top_left = d.y() < 0.0 || (d.y() == 0.0 && d.x() < 0.0);
    if (e < 0.0 || (e == 0.0 && !top_left)) return 0;
    w[(k + 2) % 3] = e;
  }
  const double sum = w[0] + w[1] + w[2];
  const double hit = (w[0] * depth[0] + w[1] * depth[1] + w[2] * depth[2]) / sum;
  if (hit > p[axis]) return +1;
  if (hit < p[axis]) return -1;
  return 0;
}

}  // namespace

MeshSdf::MeshSdf(TriangleMesh mesh) : mesh_(std::move(mesh)) {
  if (mesh_.empty()) throw Error(ErrorCode::kEmptyMesh, "signed distance requires a non-empty mesh");
  watertight_ = IsWatertight(mesh_);
  const std::size_t nt = mesh_.triangles.size();
  tri_boxes_.resize(nt);
  face_normals_.resize(nt);
  edge_normals_.resize(nt);
  vertex_normals_.assign(mesh_.vertices.size(), Vec3::Zero());
  std::map<std::pair<uint32_t, uint32_t>, Vec3> edge_sum;
  for (std::size_t t = 0; t < nt; ++t) {
    const auto& tri = mesh_.triangles[t];
    const Vec3 &a = mesh_.vertices[tri[0]], &b = mesh_.vertices[tri[1]], &c = mesh_.vertices[tri[2]];
    tri_boxes_[t] = {a.cwiseMin(b).cwiseMin(c), a.cwiseMax(b).cwiseMax(c)};
    const Vec3 n = mesh_.TriangleNormal(t);
    face_normals_[t] = n;
    for (int k = 0; k < 3; ++k) {
      const Vec3& v = mesh_.vertices[tri[k]];
      const Vec3 e1 = (mesh_.vertices[tri[(k + 1) % 3]] - v).normalized();
      const Vec3 e2 = (mesh_.vertices[tri[(k + 2) % 3]] - v).normalized();
      const double angle = std::acos(std::clamp(e1.dot(e2), -1.0, 1.0));
      vertex_normals_[tri[k]] += angle * n;
      const uint32_t u0 = tri[k], u1 = tri[(k + 1) % 3];
      edge_sum.try_emplace({std::min(u0, u1), std::max(u0, u1)}, Vec3::Zero()).first->second += n;
    }
  }
  for (std::size_t t = 0; t < nt; ++t) {
    const auto& tri = mesh_.triangles[t];
    for (int k = 0; k < 3; ++k) {
      const uint32_t u0 = tri[k], u1 = tri[(k + 1) % 3];
      edge_normals_[t][k] = edge_sum.at({std::min(u0, u1), std::max(u0, u1)});
    }
  }
  order_.resize(nt);
  std::iota(order_.begin(), order_.end(), 0u);
  nodes_.reserve(2 * nt / 4 + 8);
  Build(0, static_cast<uint32_t>(nt));
}

uint32_t MeshSdf::Build(uint32_t begin, uint32_t end) {
  const uint32_t index = static_cast<uint32_t>(nodes_.size());
  nodes_.emplace_back();
  Aabb box{Vec3::Constant(std::numeric_limits<double>::infinity()),
           Vec3::Constant(-std::numeric_limits<double>::infinity())};
  Aabb centroids = box;
  for (uint32_t i = begin; i < end; ++i) {
    const Aabb& tb = tri_boxes_[order_[i]];
    box.lower = box.lower.cwiseMin(tb.lower);
    box.upper = box.upper.cwiseMax(tb.upper);
    const Vec3 c = tb.Center();
    centroids.lower = centroids.lower.cwiseMin(c);
    centroids.upper = centroids.upper.cwiseMax(c);
  }
  nodes_[index].box = box;
  if (end - begin <= 4) {
    nodes_[index].first = begin;
    nodes_[index].count = end - begin;
    return index;
  }
  int axis = 0;
  centroids.Extent().maxCoeff(&axis);
  const uint32_t mid = begin + (end - begin) / 2;
  std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end,
                   [&](uint32_t x, uint32_t y) {
                     const double cx = tri_boxes_[x].Center()[axis], cy = tri_boxes_[y].Center()[axis];
                     return cx < cy || (cx == cy && x < y);
                   });
  const uint32_t left = Build(begin, mid);
  const uint32_t right = Build(mid, end);
  nodes_[index].first = left;
  nodes_[index].right = right;
  nodes_[index].count = 0;
  return index;
}

ClosestPoint MeshSdf::Closest(const Vec3& p) const {
  ClosestPoint best;
  best.distance = std::numeric_limits<double>::infinity();
  double best2 = std::numeric_limits<double>::infinity();
  uint32_t stack[128];
  int top = 0;
  stack[top++] = 0;
  while (top > 0) {
    const Node& node = nodes_[stack[--top]];
    if (BoxDistance2(node.box, p) >= best2) continue;
    if (node.count > 0) {
      for (uint32_t i = node.first; i < node.first + node.count; ++i) {
        const uint32_t t = order_[i];
        const auto& tri = mesh_.triangles[t];
        ClosestPoint cp =
            ClosestPointOnTriangle(p, mesh_.vertices[tri[0]], mesh_.vertices[tri[1]], mesh_.vertices[tri[2]]);
        const double d2 = cp.distance * cp.distance;
        if (d2 < best2 || (d2 == best2 && t < best.triangle)) {
          best2 = d2;
          best = cp;
          best.triangle = t;
        }
      }
      continue;
    }
    const double dl = BoxDistance2(nodes_[node.first].box, p);
    const double dr = BoxDistance2(nodes_[node.right].box, p);
    // Push the farther child first so the nearer one is popped next.
    if (dl <= dr) {
      stack[top++] = node.right;
      stack[top++] = node.first;
    } else {
      stack[top++] = node.first;
      stack[top++] = node.right;
    }
  }
  return best;
}

double MeshSdf::SecondDistance(const Vec3& p) const {
  const ClosestPoint first = Closest(p);
  const auto& ft = mesh_.triangles[first.triangle];
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t t = 0; t < mesh_.triangles.size(); ++t) {
    const auto& tri = mesh_.triangles[t];
    bool adjacent = false;
    for (uint32_t a : tri) {
      for (uint32_t b : ft) adjacent |= (a == b);
    }
    if (adjacent) continue;
    const ClosestPoint cp =
        ClosestPointOnTriangle(p, mesh_.vertices[tri[0]], mesh_.vertices[tri[1]], mesh_.vertices[tri[2]]);
    best = std::min(best, cp.distance);
  }
  return best;
}

int MeshSdf::PseudonormalSign(const Vec3& p) const {
  const ClosestPoint cp = Closest(p);
  const auto& tri = mesh_.triangles[cp.triangle];
  Vec3 normal;
  if (cp.feature == 0) {
    normal = face_normals_[cp.triangle];
  } else if (cp.feature <= 3) {
    normal = edge_normals_[cp.triangle][cp.feature - 1];
  } else {
    normal = vertex_normals_[tri[cp.feature - 4]];
  }
  return (p - cp.point).dot(normal) < 0.0 ? -1 : 1;
}

int MeshSdf::RayHits(const Vec3& p, int axis, int direction) const {
  int hits = 0;
  uint32_t stack[128];
  int top = 0;
  stack[top++] = 0;
  const int i = (axis + 1) % 3, j = (axis + 2) % 3;
  while (top > 0) {
    const Node& node = nodes_[stack[--top]];
    const Aabb& b = node.box;
    if (p[i] < b.lower[i] || p[i] > b.upper[i] || p[j] < b.lower[j] || p[j] > b.upper[j]) continue;
    if (direction > 0 ? b.upper[axis] < p[axis] : b.lower[axis] > p[axis]) continue;
    if (node.count == 0) {
      stack[top++] = node.first;
      stack[top++] = node.right;
      continue;
    }
    for (uint32_t k = node.first; k < node.first + node.count; ++k) {
      const auto& tri = mesh_.triangles[order_[k]];
      if (AxisRayCrossing(p, axis, mesh_.vertices[tri[0]], mesh_.vertices[tri[1]], mesh_.vertices[tri[2]]) ==
          direction) {
        ++hits;
      }
    }
  }
  return hits;
}

int MeshSdf::RayParitySign(const Vec3& p) const {
  int inside = 0, voting = 0;
  for (int axis = 0; axis < 3; ++axis) {
    const int forward = RayHits(p, axis, +1);
    const int backward = RayHits(p, axis, -1);
    if (forward == 0 && backward == 0) continue;
    ++voting;
    inside += forward % 2;
  }
  if (voting == 0) return PseudonormalSign(p);
  return 2 * inside > voting ? -1 : 1;
}

double MeshSdf::SignedDistance(const Vec3& p) const {
  const ClosestPoint cp = Closest(p);
  if (cp.distance == 0.0) return 0.0;
  const int sign = watertight_ ? PseudonormalSign(p) : RayParitySign(p);
  return sign * cp.distance;
}

std::vector<uint32_t> MeshSdf::TrianglesInBox(const Aabb& box) const {
  std::vector<uint32_t> out;
  uint32_t stack[128];
  int top = 0;
  stack[top++] = 0;
  while (top > 0) {
    const Node& node = nodes_[stack[--top]];
    if (!BoxesOverlap(node.box, box)) continue;
    if (node.count == 0) {
      stack[top++] = node.first;
      stack[top++] = node.right;
      continue;
    }
    for (uint32_t k = node.first; k < node.first + node.count; ++k) {
      if (BoxesOverlap(tri_boxes_[order_[k]], box)) out.push_back(order_[k]);
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

double BruteForceSignedDistance(const TriangleMesh& mesh, const Vec3& p) {
  if (mesh.empty()) throw Error(ErrorCode::kEmptyMesh, "signed distance requires a non-empty mesh");
  double best = std::numeric_limits<double>::infinity();
  std::array<int, 6> hits{};
  for (const auto& tri : mesh.triangles) {
    const Vec3 &a = mesh.vertices[tri[0]], &b = mesh.vertices[tri[1]], &c = mesh.vertices[tri[2]];
    best = std::min(best, ClosestPointOnTriangle(p, a, b, c).distance);
    for (int axis = 0; axis < 3; ++axis) {
      const int r = AxisRayCrossing(p, axis, a, b, c);
      if (r > 0) ++hits[2 * axis];
      if (r < 0) ++hits[2 * axis + 1];
    }
  }
  int inside = 0, voting = 0;
  for (int k = 0; k < 6; ++k) {
    if (hits[k] == 0 && hits[k ^ 1] == 0) continue;
    ++voting;
    inside += hits[k] % 2;
  }
  return 2 * inside > voting ? -best : best;
}

Vec3 SdfGradient(const ScalarField& oracle, const Vec3& p, double h) {
  if (!(h > 0.0)) throw Error(ErrorCode::kInvalidArgument, "finite-difference step must be positive");
  Vec3 g;
  for (int k = 0; k < 3; ++k) {
    Vec3 hi = p, lo = p;
    hi[k] += h;
    lo[k] -= h;
    g[k] = (oracle(hi) - oracle(lo)) / (2.0 * h);
  }
  return g;
}

}  // namespace cofield
