// Copyright 2026 The KVAF Toolkit Authors.
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Random end-effector poses in front of a camera, with the four canonical
// points (origin and three axis tips) projected by the independent oracle.

#pragma once

#include <random>
#include <vector>

#include "kvaf/camera.hpp"
#include "kvaf/geometry.hpp"
#include "oracles.hpp"

namespace pnp_cases {

struct Case {
  kvaf::RigidTransform pose;  // local -> camera
  std::vector<kvaf::Correspondence> corr;
};

inline Case random_case(std::mt19937_64& rng, const kvaf::Mat3& K, double axis_length, double pixel_sigma) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::normal_distribution<double> noise(0.0, pixel_sigma > 0 ? pixel_sigma : 1.0);
  Case c;
  // Uniform rotation from a random unit quaternion.
  std::normal_distribution<double> g(0.0, 1.0);
  kvaf::Quat q(g(rng), g(rng), g(rng), g(rng));
  q.normalize();
  c.pose.rotation = q.toRotationMatrix();
  const double depth = 1.1 + 0.5 * u(rng);
  c.pose.translation = kvaf::Vec3(0.25 * depth * u(rng), 0.2 * depth * u(rng), depth);

  double Kr[9], Er[16];
  for (int r = 0; r < 3; ++r) {
    for (int k = 0; k < 3; ++k) Kr[r * 3 + k] = K(r, k);
  }
  const kvaf::Mat4 E = c.pose.matrix();
  for (int r = 0; r < 4; ++r) {
    for (int k = 0; k < 4; ++k) Er[r * 4 + k] = E(r, k);
  }
  const kvaf::Vec3 locals[4] = {kvaf::Vec3::Zero(), axis_length * kvaf::Vec3::UnitX(),
                                axis_length * kvaf::Vec3::UnitY(), axis_length * kvaf::Vec3::UnitZ()};
  for (const auto& p : locals) {
    const double pr[3] = {p.x(), p.y(), p.z()};
    double px = 0, py = 0, z = 0;
    oracle::project(Kr, Er, pr, px, py, z);
    if (pixel_sigma > 0) {
      px += noise(rng);
      py += noise(rng);
    }
    c.corr.push_back({p, kvaf::Vec2(px, py)});
  }
  return c;
}

}  // namespace pnp_cases
