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

#include <optional>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "kvaf/geometry.hpp"
#include "kvaf/kinematics.hpp"

namespace kvaf {

/// Pinhole camera. K maps camera-frame points to homogeneous pixels; E maps
/// world points to the camera frame (x right, y down, z forward).
struct CameraModel {
  Mat3 K = Mat3::Identity();
  Mat4 E = Mat4::Identity();
  int width = 640;
  int height = 480;

  /// Throws ValidationError unless K is upper triangular with K22 = 1 and
  /// positive focal lengths, and E is a rigid transform.
  void validate() const;

  static CameraModel from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;

  /// Camera at `eye` looking at `target`; image y runs along -`up`.
  static CameraModel look_at(const Vec3& eye, const Vec3& target, const Vec3& up, double focal,
                             int width, int height);

  friend bool operator==(const CameraModel&, const CameraModel&) = default;
};

struct Projection {
  enum class Status { visible, culled };
  Status status = Status::culled;
  Vec2 pixel = Vec2::Zero();
  double depth = 0.0;

  bool visible() const { return status == Status::visible; }
};

/// p_c = E [p; 1], u_hat = K p_c, (u, v) = (u_hat_x / u_hat_z, u_hat_y / u_hat_z).
/// Points with camera depth <= 0 are culled. No near plane, no image clamping.
Projection project_point(const Vec3& p_world, const CameraModel& cam);
Projection project_point(const Vec3& p_world, const Mat3& K, const Mat4& E);

struct DepthRange {
  double z_min = 0.0;
  double z_max = 1.0;
};

/// clip((z - z_min) / (z_max - z_min), 0, 1).
double normalize_depth(double z, const DepthRange& range);

/// Min/max camera depth over visible keypoints, widened on each side by
/// `margin` times the span. A zero span widens to max(2 * margin * z, 1e-3).
/// Throws EstimationError when nothing is visible.
DepthRange estimate_depth_range(std::span<const KeypointSet> keypoints, const CameraModel& cam,
                                double margin = 0.05);

/// pose_cam maps local points to the camera frame; returns E^-1 * pose_cam.
RigidTransform camera_to_world(const RigidTransform& pose_cam, const Mat4& E);

struct Correspondence {
  Vec3 local;
  Vec2 pixel;
};

struct PnpOptions {
  int max_iterations = 100;
  /// Depth used to back-project the first correspondence for the fallback
  /// start; when absent it is inferred from the affine fit.
  std::optional<double> initial_depth;
};

struct PnpSolution {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();
  double reprojection_rmse = 0.0;  // pixels
  bool converged = false;
  int iterations = 0;

  RigidTransform pose() const { return {rotation, translation}; }
};

/// Perspective-n-point by damped Gauss-Newton (Levenberg-Marquardt) on SE(3).
///
/// Starts are tried in a fixed order and the lowest-cost result wins:
///   1. scaled-orthographic fit (least-squares 2x4 affine camera, rotation
///      rows orthonormalized by SVD, depth from the mean row scale);
///   2. identity rotation with the first point back-projected at the initial
///      depth, then the three 180-degree flips about the camera axes.
/// `converged` is set when the cost gradient norm is below 1e-10 or the sum
/// of squared residuals is below 1e-8 px^2.
///
/// Throws DegeneracyError for fewer than 4 points or collinear local points.
PnpSolution solve_pnp(std::span<const Correspondence> correspondences, const Mat3& K,
                      const PnpOptions& options = {});

}  // namespace kvaf
