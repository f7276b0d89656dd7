// Copyright Contributors to the cofield project
// SPDX-License-Identifier: Apache-2.0

#include "cofield/corpus.hpp"

#include "cofield/rng.hpp"

namespace cofield {
namespace {

constexpr const char* kKinds[] = {"box", "wedge", "cylinder", "torus", "ellipsoid"};

ToyShape MakeShape(int kind, Rng& rng, int index) {
  TriangleMesh mesh;
  Vec3 scale = Vec3::Ones();
  switch (kind) {
    case 0:
      mesh = MakeBox(Vec3(rng.Uniform(0.4, 1.0), rng.Uniform(0.4, 1.0), rng.Uniform(0.4, 1.0)));
      break;
    case 1:
      mesh = MakeWedge(rng.Uniform(0.5, 1.0), rng.Uniform(0.6, 1.2), rng.Uniform(0.5, 1.0));
      break;
    case 2:
      mesh = MakeCylinder(rng.Uniform(0.4, 0.8), rng.Uniform(0.4, 1.0), 48);
      break;
    case 3:
      mesh = MakeTorus(1.0, rng.Uniform(0.3, 0.5), 48, 24);
      break;
    default:
      mesh = MakeIcosphere(3, 1.0);
      scale = Vec3(1.0, rng.Uniform(0.45, 0.75), rng.Uniform(0.3, 0.6));
      break;
  }
  Eigen::Vector4d q(rng.Normal(), rng.Normal(), rng.Normal(), rng.Normal());
  q.normalize();
  RigidTransform pose;
  pose.rotation = Eigen::Quaterniond(q[0], q[1], q[2], q[3]);
  return {std::string(kKinds[kind]) + "_" + std::to_string(index), NormalizeMesh(TransformMesh(mesh, pose, scale)).mesh};
}

}  // namespace

std::vector<ToyShape> TrainingCorpus(uint64_t seed) {
  Rng rng(seed, 0xc0);
  std::vector<ToyShape> shapes;
  for (int i = 0; i < 10; ++i) shapes.push_back(MakeShape(i % 5, rng, i));
  return shapes;
}

std::vector<ToyShape> HeldOutCorpus(uint64_t seed) {
  Rng rng(seed, 0xc1);
  std::vector<ToyShape> shapes;
  for (int i = 0; i < 5; ++i) shapes.push_back(MakeShape(i, rng, 10 + i));
  return shapes;
}

ToyShape SphereShape() { return {"sphere", NormalizeMesh(MakeIcosphere(4, 1.0)).mesh}; }

}  // namespace cofield
