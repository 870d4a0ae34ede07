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

#include "kvaf/episode.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "kvaf/error.hpp"

namespace kvaf {

double unit_uniform(uint64_t bits) { return static_cast<double>(bits >> 11) * 0x1.0p-53; }

void RobotState::validate(double quat_tol) const {
  for (Arm a : kArms) {
    const auto& pose = ee(a);
    if (!pose.position.allFinite()) throw ValidationError("non-finite end-effector position");
    if (std::abs(pose.orientation.norm() - 1.0) > quat_tol) {
      throw ValidationError(std::string(arm_name(a)) + " quaternion is not unit norm");
    }
    if (!joints(a).allFinite() || !std::isfinite(gripper(a))) throw ValidationError("non-finite joint state");
  }
  CameraModel{K, E, 1, 1}.validate();
}

void Episode::validate() const {
  if (width <= 0 || height <= 0) throw ValidationError("episode image size must be positive");
  for (size_t i = 0; i < states.size(); ++i) {
    states[i].validate();
    if (i > 0 && states[i].t <= states[i - 1].t) throw ValidationError("frame indices must strictly increase");
  }
}

Episode synth_trajectory(const KinematicChain& chain, const SynthOptions& options) {
  if (options.frames < 2) throw ArgumentError("synth_trajectory needs at least 2 frames");
  std::mt19937_64 rng(options.seed);
  auto uniform = [&] { return unit_uniform(rng()); };
  const double two_pi = 2.0 * std::numbers::pi;
  const double span = static_cast<double>(options.frames - 1);

  struct Wave {
    double center, amplitude, cycles, phase;
    double at(double t, double span) const {
      return center + amplitude * std::sin(2.0 * std::numbers::pi * cycles * t / span + phase);
    }
  };

  std::array<std::vector<Wave>, 2> joint_waves;
  std::array<Wave, 2> gripper_waves{};
  for (Arm a : kArms) {
    for (const auto& joint : chain.arm(a).joints) {
      if (!joint.movable()) continue;
      const double lo = joint.limits ? joint.limits->lower : -std::numbers::pi;
      const double hi = joint.limits ? joint.limits->upper : std::numbers::pi;
      const double width = hi - lo;
      Wave w;
      w.center = lo + width * (0.25 + 0.5 * uniform());
      w.amplitude = std::min(w.center - lo, hi - w.center) * (0.5 + 0.5 * uniform());
      w.cycles = 0.5 + uniform();
      w.phase = two_pi * uniform();
      if (w.amplitude > 0.0) {
        const double max_cycles = options.max_joint_step * span / (two_pi * w.amplitude);
        w.cycles = std::min(w.cycles, 0.999 * max_cycles);
      } else {
        w.center = lo;
      }
      joint_waves[static_cast<size_t>(a)].push_back(w);
    }
    Wave g;
    g.center = 0.5;
    g.amplitude = 0.75;
    g.cycles = options.gripper_cycles_min +
               (options.gripper_cycles_max - options.gripper_cycles_min) * uniform();
    g.phase = two_pi * uniform();
    gripper_waves[static_cast<size_t>(a)] = g;
  }

  Episode ep;
  ep.width = options.camera.width;
  ep.height = options.camera.height;
  ep.meta.chain = chain.name;
  ep.meta.fps = options.fps;
  ep.meta.source = "synth:" + std::to_string(options.seed);
  ep.states.reserve(static_cast<size_t>(options.frames));
  for (int t = 0; t < options.frames; ++t) {
    RobotState s;
    s.t = t;
    s.K = options.camera.K;
    s.E = options.camera.E;
    for (Arm a : kArms) {
      const size_t ai = static_cast<size_t>(a);
      const auto& waves = joint_waves[ai];
      Eigen::VectorXd q(static_cast<Eigen::Index>(waves.size()));
      for (size_t j = 0; j < waves.size(); ++j) q[static_cast<Eigen::Index>(j)] = waves[j].at(t, span);
      s.q[ai] = q;
      s.g[ai] = std::clamp(gripper_waves[ai].at(t, span), 0.0, 1.0);
      if (!chain.arm(a).empty()) {
        const RigidTransform tip = forward_kinematics(chain.arm(a), q).poses.back();
        s.xi[ai].position = tip.translation;
        s.xi[ai].orientation = Quat(tip.rotation).normalized();
      }
    }
    ep.states.push_back(std::move(s));
  }
  return ep;
}

}  // namespace kvaf
