// Copyright Contributors to the cofield project
// SPDX-License-Identifier: Apache-2.0

// Procedural toy shapes: boxes, wedges, cylinders, tori and ellipsoids in
// random poses, normalized to the unit domain. No spheres, so a sphere can
// serve as an unseen test shape.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cofield/mesh.hpp"

namespace cofield {

struct ToyShape {
  std::string name;
  TriangleMesh mesh;  // normalized
};

/// Two shapes of each kind.
std::vector<ToyShape> TrainingCorpus(uint64_t seed = 0);
/// One shape of each kind, drawn from a separate stream.
std::vector<ToyShape> HeldOutCorpus(uint64_t seed = 0);
/// Normalized icosphere (4 subdivisions, 5120 faces).
ToyShape SphereShape();

}  // namespace cofield
