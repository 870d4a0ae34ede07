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

#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "kvaf/camera.hpp"
#include "kvaf/kinematics.hpp"

namespace kvaf {

/// End-effector pose: position (m) and unit quaternion (w, x, y, z).
struct EePose {
  Vec3 position = Vec3::Zero();
  Quat orientation = Quat::Identity();

  RigidTransform transform() const { return {orientation.toRotationMatrix(), position}; }
};

/// Everything needed to render one frame.
struct RobotState {
  int t = 0;
  std::array<Eigen::VectorXd, 2> q;  // indexed by Arm
  std::array<double, 2> g = {0.0, 0.0};
  std::array<EePose, 2> xi;
  Mat3 K = Mat3::Identity();
  Mat4 E = Mat4::Identity();

  const Eigen::VectorXd& joints(Arm a) const { return q[static_cast<size_t>(a)]; }
  double gripper(Arm a) const { return g[static_cast<size_t>(a)]; }
  const EePose& ee(Arm a) const { return xi[static_cast<size_t>(a)]; }

  /// Throws ValidationError when quaternions or camera matrices break their invariants.
  void validate(double quat_tol = 1e-6) const;
};

struct EpisodeMeta {
  std::string chain;  // URDF path or chain id
  double fps = 30.0;
  std::string source;
};

struct Episode {
  std::vector<RobotState> states;
  EpisodeMeta meta;
  int width = 640;
  int height = 480;

  size_t size() const { return states.size(); }
  CameraModel camera(size_t i) const { return {states[i].K, states[i].E, width, height}; }
  /// Throws ValidationError unless frame indices strictly increase and every state is valid.
  void validate() const;
};

struct SynthOptions {
  int frames = 64;
  uint64_t seed = 0;
  CameraModel camera;
  /// Upper bound on |q_t+1 - q_t| for every joint (rad or m).
  double max_joint_step = 0.04;
  /// Gripper open/close cycles per episode are drawn from this range.
  double gripper_cycles_min = 1.0;
  double gripper_cycles_max = 2.0;
  double fps = 30.0;
};

/// Deterministic smooth episode. Each movable joint follows
///   q(t) = c + a sin(2 pi f t / (T - 1) + phi)
/// with c and a drawn inside the joint limits (a = 0 for zero-width limits)
/// and f capped so a * 2 pi f / (T - 1) <= max_joint_step. Grippers follow
/// clip(0.5 + 0.75 sin(...), 0, 1), so each episode reaches both 0 and 1.
/// End-effector poses come from forward kinematics of the same joint values.
/// Throws ArgumentError when frames < 2.
Episode synth_trajectory(const KinematicChain& chain, const SynthOptions& options);

/// Uniform double in [0, 1) from a 64-bit engine output; portable across
/// standard libraries, unlike std::uniform_real_distribution.
double unit_uniform(uint64_t bits);

}  // namespace kvaf
