// Copyright Contributors to the cofield project
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <limits>

#include <gtest/gtest.h>

#include "cofield/error.hpp"
#include "cofield/extract.hpp"
#include "cofield/mesh.hpp"
#include "cofield/rng.hpp"

namespace cofield {
namespace {

const ScalarField kSphere = [](const Vec3& p) { return p.norm() - 0.5; };

double MaxRadialError(const TriangleMesh& mesh) {
  double err = 0;
  for (const Vec3& v : mesh.vertices) err = std::max(err, std::abs(v.norm() - 0.5));
  return err;
}

TEST(MarchingCubes, PositiveFieldIsEmpty) {
  EXPECT_TRUE(MarchingCubes([](const Vec3&) { return 1.0; }, 16).empty());
  EXPECT_THROW(MarchingCubes(kSphere, 7), Error);
}

TEST(MarchingCubes, AnalyticSphere) {
  const TriangleMesh mesh = MarchingCubes(kSphere, 64);
  ASSERT_FALSE(mesh.empty());
  EXPECT_TRUE(IsWatertight(mesh));
  const double cell = 2.0 / 64;
  EXPECT_LT(MaxRadialError(mesh), 2 * cell);
  for (std::size_t t = 0; t < mesh.triangles.size(); ++t) {
    const auto& tri = mesh.triangles[t];
    const Vec3 centroid = (mesh.vertices[tri[0]] + mesh.vertices[tri[1]] + mesh.vertices[tri[2]]) / 3.0;
    if (mesh.TriangleArea(t) > 1e-12) EXPECT_GT(mesh.TriangleNormal(t).dot(centroid), 0.0);
  }
  // Enclosed volume by the divergence theorem.
  double volume = 0;
  for (const auto& tri : mesh.triangles) {
    volume += mesh.vertices[tri[0]].dot(mesh.vertices[tri[1]].cross(mesh.vertices[tri[2]])) / 6.0;
  }
  EXPECT_NEAR(volume, 4.0 / 3.0 * M_PI * 0.125, 0.01);
}

TEST(MarchingCubes, RefinementShrinksError) {
  const double e64 = MaxRadialError(MarchingCubes(kSphere, 64));
  const double e128 = MaxRadialError(MarchingCubes(kSphere, 128));
  EXPECT_LE(e128, 0.55 * e64);
}

TEST(MarchingCubes, PlaneArea) {
  const TriangleMesh mesh = MarchingCubes([](const Vec3& p) { return p.z(); }, 32);
  EXPECT_NEAR(mesh.SurfaceArea(), 4.0, 0.02 * 4.0);
  const TriangleMesh shifted = MarchingCubes([](const Vec3& p) { return p.z() - 0.013; }, 32);
  EXPECT_NEAR(shifted.SurfaceArea(), 4.0, 0.02 * 4.0);
  for (const Vec3& v : shifted.vertices) EXPECT_NEAR(v.z(), 0.013, 1e-12);
}

TEST(MarchingCubes, UndefinedPointsSuppressCubes) {
  // Sphere whose right half is undefined: no vertex may appear where x > 0
  // beyond the last defined lattice column.
  const double nan = std::numeric_limits<double>::quiet_NaN();
  const TriangleMesh mesh = MarchingCubes([nan](const Vec3& p) { return p.x() > 0.01 ? nan : p.norm() - 0.5; }, 32);
  ASSERT_FALSE(mesh.empty());
  for (const Vec3& v : mesh.vertices) EXPECT_LE(v.x(), 0.01);
}

TEST(Chamfer, ConventionAndProperties) {
  EXPECT_EQ(ChamferL2({Vec3(0, 0, 0)}, {Vec3(1, 0, 0)}), 2.0);
  Rng rng(1);
  std::vector<Vec3> a, b;
  for (int i = 0; i < 500; ++i) {
    a.emplace_back(rng.Uniform(-1, 1), rng.Uniform(-1, 1), rng.Uniform(-1, 1));
    b.emplace_back(rng.Uniform(-1, 1), rng.Uniform(-1, 1), rng.Uniform(-1, 1));
  }
  EXPECT_EQ(ChamferL2(a, a), 0.0);
  const double c = ChamferL2(a, b);
  EXPECT_NEAR(c, ChamferL2BruteForce(a, b), 1e-12);
  EXPECT_EQ(c, ChamferL2(b, a));
  std::vector<Vec3> as = a, bs = b;
  for (Vec3& p : as) p *= 3.0;
  for (Vec3& p : bs) p *= 3.0;
  EXPECT_NEAR(ChamferL2(as, bs), 9.0 * c, 1e-12);
  try {
    ChamferL2({}, b);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kEmptySet);
  }
}

TEST(Chamfer, KdTreeMatchesScan) {
  Rng rng(2);
  std::vector<Vec3> pts;
  for (int i = 0; i < 2000; ++i) pts.emplace_back(rng.Normal(), rng.Normal(), 0.1 * rng.Normal());
  const KdTree tree(pts);
  for (int q = 0; q < 200; ++q) {
    const Vec3 x(rng.Normal(), rng.Normal(), rng.Normal());
    double best = std::numeric_limits<double>::infinity();
    for (const Vec3& p : pts) best = std::min(best, (p - x).squaredNorm());
    EXPECT_EQ(tree.NearestSquared(x), best);
  }
}

TEST(Evaluate, SelfComparisonAndEmpty) {
  const TriangleMesh sphere = NormalizeMesh(MakeIcosphere(3)).mesh;
  const EvalReport r = EvaluateMeshes(sphere, sphere, 30000, 0);
  EXPECT_LT(r.chamfer, 1e-4);
  EXPECT_EQ(r.points, 30000u);
  try {
    EvaluateMeshes(TriangleMesh{}, sphere, 100, 0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kEmptySet);
  }
}

// Blended field ------------------------------------------------------------------

struct SmallField {
  Checkpoint checkpoint;
  CoordinateField field;
};

// 8^3 grid with two valid cells far apart.
SmallField MakeSmallField() {
  VoxelGrid grid;
  grid.resolution = 8;
  grid.valid = {grid.Linear({1, 1, 1}), grid.Linear({5, 5, 5})};
  SmallField s{{RandomMlp<double>(MlpConfig::Make(3, 8, 3, 1), 4).Cast<float>(), {}}, CoordinateField(grid, 3)};
  s.field.RandomizeLatents(2, 0.5);
  Rng rng(3);
  for (std::size_t slot = 0; slot < s.field.size(); ++slot) {
    CoordinateFrame f{Quaternion(rng.Normal(), rng.Normal(), rng.Normal(), rng.Normal()).normalized(),
                      grid.CellCenter(s.field.Cell(slot))};
    s.field.SetFrame(slot, f);
  }
  return s;
}

float Decode(const SmallField& s, std::size_t slot, const Vec3& x) {
  return MlpForward<float>(s.checkpoint.params, WorldToLocal(s.field.Frame(slot), x), s.field.Latent(slot));
}

TEST(BlendedSdf, ValidCellNeighborAndSentinel) {
  const SmallField s = MakeSmallField();
  const BlendedSdf sdf(s.checkpoint, s.field);
  const double cell = 0.25;
  EXPECT_EQ(sdf.sentinel(), cell);

  const Vec3 inside = s.field.grid().CellCenter(s.field.Cell(0)) + Vec3(0.05, -0.03, 0.02);
  EXPECT_EQ(sdf.SlotFor(inside), std::optional<std::size_t>(0));
  EXPECT_NEAR(sdf(inside), Decode(s, 0, inside), 1e-6);

  // Cell (2, 1, 1) borders only the valid cell (1, 1, 1).
  const Vec3 ring = s.field.grid().CellCenter(s.field.grid().Linear({2, 1, 1}));
  EXPECT_EQ(sdf.SlotFor(ring), std::optional<std::size_t>(0));
  EXPECT_NEAR(sdf(ring), Decode(s, 0, ring), 1e-6);

  const Vec3 far = s.field.grid().CellCenter(s.field.grid().Linear({3, 7, 0}));
  EXPECT_FALSE(sdf.SlotFor(far).has_value());
  EXPECT_EQ(sdf(far), cell);
  EXPECT_EQ(sdf(Vec3(5, 0, 0)), cell);
}

TEST(BlendedSdf, NearestValidCellWins) {
  VoxelGrid grid;
  grid.resolution = 8;
  grid.valid = {grid.Linear({1, 1, 1}), grid.Linear({3, 1, 1})};
  CoordinateField field(grid, 3);
  const Checkpoint ck{RandomMlp<double>(MlpConfig::Make(3, 8, 3, 1), 4).Cast<float>(), {}};
  const BlendedSdf sdf(ck, field);
  const Aabb box = grid.CellBox({2, 1, 1});
  EXPECT_EQ(sdf.SlotFor(box.Center() - Vec3(0.05, 0, 0)), std::optional<std::size_t>(0));
  EXPECT_EQ(sdf.SlotFor(box.Center() + Vec3(0.05, 0, 0)), std::optional<std::size_t>(1));
}

TEST(BlendedSdf, LatentMismatchRaises) {
  const SmallField s = MakeSmallField();
  const Checkpoint other{RandomMlp<double>(MlpConfig::Make(5, 8, 3, 1), 4).Cast<float>(), {}};
  try {
    BlendedSdf sdf(other, s.field);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kConfigMismatch);
  }
}

TEST(BlendedSdf, BatchMatchesPointwise) {
  const SmallField s = MakeSmallField();
  const BlendedSdf sdf(s.checkpoint, s.field);
  Rng rng(5);
  std::vector<Vec3> pts;
  for (int i = 0; i < 5000; ++i) pts.emplace_back(rng.Uniform(-1, 1), rng.Uniform(-1, 1), rng.Uniform(-1, 1));
  std::vector<double> out(pts.size());
  sdf.Evaluate(pts, out);
  // The batch path sums in a different order (f32 matrix products).
  for (std::size_t i = 0; i < pts.size(); i += 97) EXPECT_NEAR(out[i], sdf(pts[i]), 1e-5);
}

}  // namespace
}  // namespace cofield
