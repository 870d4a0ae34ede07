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
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include "kvaf/geometry.hpp"

namespace kvaf {

enum class Arm { left = 0, right = 1 };

constexpr std::array<Arm, 2> kArms = {Arm::left, Arm::right};

inline const char* arm_name(Arm a) { return a == Arm::left ? "left" : "right"; }

enum class JointKind { revolute, prismatic, fixed };

const char* joint_kind_name(JointKind kind);

struct JointLimits {
  double lower = 0.0;
  double upper = 0.0;
  friend bool operator==(const JointLimits&, const JointLimits&) = default;
};

struct JointSpec {
  std::string name;
  JointKind kind = JointKind::fixed;
  RigidTransform origin;      // parent link frame -> joint frame at q = 0
  Vec3 axis = Vec3::UnitX();  // unit, joint frame; unused for fixed joints
  std::optional<JointLimits> limits;
  std::string parent_link;
  std::string child_link;

  bool movable() const { return kind != JointKind::fixed; }
  /// Joint frame for joint value q: origin * T_motion(q).
  RigidTransform transform(double q) const;

  friend bool operator==(const JointSpec&, const JointSpec&) = default;
};

/// A finger branch hanging off the terminal link of an arm.
struct GripperJoint {
  JointSpec joint;
  double d_max = 0.0;          // meters of travel at g = 1
  double finger_length = 0.0;  // meters, along the approach axis of the terminal link
  friend bool operator==(const GripperJoint&, const GripperJoint&) = default;
};

struct ArmChain {
  std::vector<JointSpec> joints;  // base to tip
  RigidTransform base;
  std::vector<GripperJoint> gripper;
  /// Which link origins become skeleton keypoints (size joints + 1, base first).
  /// Empty means every link origin.
  std::vector<bool> skeleton_mask;
  Vec3 approach_axis = Vec3::UnitZ();

  bool empty() const { return joints.empty(); }
  /// Number of joint values the arm consumes (movable, non-gripper joints).
  size_t dof() const;

  friend bool operator==(const ArmChain&, const ArmChain&) = default;
};

struct KinematicChain {
  std::string name;
  std::array<ArmChain, 2> arms;

  const ArmChain& arm(Arm a) const { return arms[static_cast<size_t>(a)]; }
  ArmChain& arm(Arm a) { return arms[static_cast<size_t>(a)]; }

  friend bool operator==(const KinematicChain&, const KinematicChain&) = default;
};

struct UrdfOptions {
  /// Case-insensitive regex; movable joints whose name matches are gripper fingers.
  std::string gripper_pattern = "gripper|finger";
  /// Case-insensitive regex deciding which branch is the left arm.
  std::string left_pattern = "left";
  std::string right_pattern = "right";
  /// Finger travel used when a gripper joint has no positive upper limit.
  double default_d_max = 0.04;
  double finger_length = 0.04;
  Vec3 approach_axis = Vec3::UnitZ();
};

/// Parses the URDF subset used by KVAF rendering: revolute (and continuous),
/// prismatic, and fixed joints. Links' visual, collision, and inertial tags
/// are ignored.
///
/// Topology rules: exactly one root link. Following non-gripper joints from
/// the root, the first link with two children splits the robot into left and
/// right arms; every joint before that split must be fixed and folds into
/// each arm's base transform. Without a split the whole chain is the left arm.
/// Arms may not branch again except for gripper joints on their tip link.
KinematicChain parse_urdf(std::string_view xml_text, const UrdfOptions& options = {});

/// Canonical JSON form. Keys are emitted in sorted order so the text is stable.
nlohmann::json chain_to_json(const KinematicChain& chain);
KinematicChain chain_from_json(const nlohmann::json& j);

/// World-frame link poses. poses[0] is the arm base; poses[k] is the child
/// link of joints[k - 1].
struct LinkPoseSet {
  std::vector<RigidTransform> poses;
  /// Joint-limit violations. These are reported, never fatal.
  std::vector<std::string> warnings;
};

/// T_k = T_{k-1} * T_orig_k * T_mot_k(q_k), starting from the base transform.
LinkPoseSet forward_kinematics(const KinematicChain& chain, const Eigen::VectorXd& q, Arm arm);
LinkPoseSet forward_kinematics(const ArmChain& arm, const Eigen::VectorXd& q);

/// clip(g, 0, 1) * d_max.
double gripper_displacement(double g, double d_max);

struct LabeledPoint {
  std::string label;
  Vec3 position;
};

struct FingerPoints {
  std::string joint;
  Vec3 root;  // finger joint origin on the terminal link
  Vec3 base;  // root displaced by the gripper travel along the joint axis
  Vec3 tip;   // base + finger_length along the approach axis
};

struct KeypointSet {
  std::vector<Vec3> arm_points;  // skeleton order
  std::vector<LabeledPoint> joint_points;
  std::vector<FingerPoints> fingers;
  std::optional<RigidTransform> ee;  // terminal link pose

  bool empty() const { return arm_points.empty() && !ee.has_value(); }
  /// Every 3D point carried by the set (skeleton, joints, fingers, ee).
  std::vector<Vec3> all_points() const;
};

KeypointSet extract_keypoints(const LinkPoseSet& poses, const ArmChain& arm, double g);

}  // namespace kvaf
