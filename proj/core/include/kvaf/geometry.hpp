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

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace kvaf {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Mat4 = Eigen::Matrix4d;

/// Unit quaternion, Hamilton convention. Serialized as (w, x, y, z).
using Quat = Eigen::Quaterniond;

/// Element of SE(3): x -> rotation * x + translation.
struct RigidTransform {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();

  static RigidTransform identity() { return {}; }
  static RigidTransform from_matrix(const Mat4& m);
  static RigidTransform from_translation(const Vec3& t) { return {Mat3::Identity(), t}; }

  Mat4 matrix() const;
  RigidTransform inverse() const;
  Vec3 apply(const Vec3& p) const { return rotation * p + translation; }

  friend RigidTransform operator*(const RigidTransform& a, const RigidTransform& b) {
    return {a.rotation * b.rotation, a.rotation * b.translation + a.translation};
  }
  friend bool operator==(const RigidTransform& a, const RigidTransform& b) {
    return a.rotation == b.rotation && a.translation == b.translation;
  }
};

/// Rotation of `angle` radians about unit `axis` (Rodrigues).
Mat3 axis_angle(const Vec3& axis, double angle);

/// URDF fixed-axis roll/pitch/yaw: Rz(yaw) * Ry(pitch) * Rx(roll).
Mat3 urdf_rpy(const Vec3& rpy);

/// Intrinsic x-y-z Euler angles used for relative actions:
///   R = Rx(roll) * Ry(pitch) * Rz(yaw).
Mat3 rotation_from_rpy(const Vec3& rpy);

/// Inverse of rotation_from_rpy. With R = Rx(a) Ry(b) Rz(c):
///   b = asin(R02), a = atan2(-R12, R22), c = atan2(-R01, R00).
/// When cos(b) vanishes (|b| = pi/2) roll is pinned to 0 and
///   c = atan2(R10, R11).
Vec3 rpy_from_rotation(const Mat3& r);

/// ||R^T R - I||_inf (max absolute entry).
double orthonormality_error(const Mat3& r);

/// True when R is orthonormal with det +1 within `tol`.
bool is_rotation(const Mat3& r, double tol = 1e-9);

/// Nearest rotation in the Frobenius sense (SVD polar factor, det +1).
Mat3 project_to_rotation(const Mat3& m);

/// so(3) exponential map.
Mat3 exp_so3(const Vec3& omega);

Mat3 skew(const Vec3& v);

}  // namespace kvaf
