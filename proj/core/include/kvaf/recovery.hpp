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
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include "kvaf/camera.hpp"
#include "kvaf/episode.hpp"
#include "kvaf/render.hpp"

namespace kvaf {

/// Detection thresholds. Defaults match the default RenderConfig.
struct DetectConfig {
  double heat_threshold = 0.2;  // clean heat pixels at or above this value
  double sigma = 6.0;           // heatmap std used by the center fit, px
  double merge_radius = 14.0;   // heat fragments closer than this merge, px
  double min_confidence = 0.2;
  int max_detections = 2;
  double search_radius = 140.0;  // axis / finger search window half-size, px
  double near_radius = 24.0;     // an axis component must reach this close to the center, px
  double color_tolerance = 0.02;
  double white_threshold = 0.98;
  int min_white_pixels = 4;
  double finger_radius = 80.0;  // finger components must lie this close to the center, px
  double axis_length = 0.1;            // m
  double max_reprojection_rmse = 2.0;  // px; worse PnP fits count as misses
  Vec3 gripper_axis = Vec3::UnitY();    // local axis the fingers open along
  Vec3 finger_center = Vec3(0.0, 0.0, 0.04);  // local point between the fingers, m
  int horizontal_axis = 0;              // world axis used to tell left from right
  int median_window = 5;

  void validate() const;
  nlohmann::json to_json() const;
  /// Missing keys keep defaults; unknown keys are rejected.
  static DetectConfig from_json(const nlohmann::json& j);
  /// Copies sigma and axis length from a render config.
  static DetectConfig matching(const RenderConfig& render);
};

struct Detection {
  Vec2 center = Vec2::Zero();
  std::array<std::optional<Vec2>, 3> axis_tips;  // x, y, z
  std::optional<double> gripper_separation;        // px
  double confidence = 0.0;

  bool complete() const { return axis_tips[0] && axis_tips[1] && axis_tips[2]; }
};

/// Heat components reduced to sub-pixel centers, then axis tips and finger
/// separation searched around each center. At most cfg.max_detections are
/// kept, highest confidence first (ties by position). Never throws on content.
std::vector<Detection> detect_endpoints(const KvafFrame& frame, const DetectConfig& cfg);

struct RecoveredPose {
  RigidTransform world;
  double reprojection_rmse = 0.0;
};

/// PnP over the center and the three axis tips against the canonical points
/// 0 and axis_length * e_m, then camera-to-world. Returns nullopt (a skipped
/// frame) when a tip is missing, PnP degenerates, or the fit is worse than
/// cfg.max_reprojection_rmse.
std::optional<RecoveredPose> recover_pose(const Detection& det, const Mat3& K, const Mat4& E,
                                          const DetectConfig& cfg);

/// Separation divided by the projected length of one meter of the local
/// gripper axis at the recovered pose: an opening in meters, up to scale.
std::optional<double> gripper_opening(const Detection& det, const RigidTransform& world, const Mat3& K,
                                      const Mat4& E, const DetectConfig& cfg);

struct PoseSample {
  Vec3 position = Vec3::Zero();
  Mat3 rotation = Mat3::Identity();
  std::optional<double> gripper_raw;
};

struct RecoveredTrack {
  Arm arm = Arm::left;
  std::vector<std::optional<PoseSample>> samples;  // before fill
  // Dense after fill_and_smooth.
  std::vector<Vec3> positions;
  std::vector<Mat3> rotations;
  std::vector<double> gripper;  // normalized to [0, 1]

  size_t size() const { return samples.size(); }
  size_t present() const;
  bool dense() const { return !positions.empty() && positions.size() == rotations.size(); }
};

/// Two samples: the smaller world coordinate along cfg.horizontal_axis is
/// left. One sample: nearest last-known track position (left on ties or when
/// neither track has a position yet). None: both missing.
std::array<RecoveredTrack, 2> associate_tracks(const std::vector<std::vector<PoseSample>>& per_frame,
                                               int horizontal_axis = 0);

/// Nearest-neighbor fill (earlier frame wins ties), centered median filter
/// shrinking at the ends, sign-aligned componentwise quaternion median, then
/// per-episode min-max gripper normalization (a constant curve, or a track
/// with no gripper readings, becomes 0.5). Throws EstimationError when the
/// track has no samples at all.
RecoveredTrack fill_and_smooth(const RecoveredTrack& track, int median_window = 5);

/// Centered running median with the window shrunk symmetrically at the ends.
std::vector<double> median_filter(const std::vector<double>& values, int window);

/// Rows are [dp_L, drpy_L, dg_L, dp_R, drpy_R, dg_R], one per step.
struct ActionSequence {
  Eigen::Matrix<double, Eigen::Dynamic, 14> actions;

  Eigen::Index steps() const { return actions.rows(); }
};

/// dp = R_t^T (p_t+1 - p_t), drpy = rpy(R_t^T R_t+1), dg = g_t+1 - g_t.
/// Throws DimensionError when the tracks differ in length or have fewer
/// than 2 frames, ArgumentError when a track is not dense.
ActionSequence to_relative_actions(const RecoveredTrack& left, const RecoveredTrack& right);

/// Dense tracks built directly from the episode's true poses and grippers.
std::array<RecoveredTrack, 2> ground_truth_tracks(const Episode& episode);
ActionSequence ground_truth_actions(const Episode& episode);

struct RecoveryReport {
  double translation_error = 0.0;
  double rotation_error = 0.0;
  double gripper_error = 0.0;
  double detection_rate = 0.0;
  size_t steps = 0;

  nlohmann::json to_json() const;
};

/// Means over steps and both arms of the per-arm translation and rotation
/// error norms and absolute gripper errors. Throws DimensionError when the
/// sequences differ in length.
RecoveryReport evaluate_recovery(const ActionSequence& recovered, const ActionSequence& truth,
                                 double detection_rate);

/// Per-frame recovery state; frames may arrive in any order.
class EpisodeRecovery {
 public:
  EpisodeRecovery(size_t frames, const DetectConfig& cfg);

  /// Detects and solves poses for one frame.
  void add_frame(size_t index, const KvafFrame& frame, const Mat3& K, const Mat4& E);

  size_t frames() const { return per_frame_.size(); }
  const std::vector<std::vector<Detection>>& detections() const { return detections_; }
  /// Fraction of (frame, arm) slots with a recovered pose before fill.
  double detection_rate() const;

  /// Association, fill and smoothing.
  std::array<RecoveredTrack, 2> tracks() const;
  ActionSequence actions() const;

 private:
  DetectConfig cfg_;
  std::vector<std::vector<PoseSample>> per_frame_;
  std::vector<std::vector<Detection>> detections_;
};

std::vector<std::string> action_columns();
/// CSV with header "t" plus action_columns(); values at 17 significant digits.
void save_actions_csv(const ActionSequence& actions, const std::filesystem::path& path);
/// Throws LoadError naming the row or column on malformed input.
ActionSequence load_actions_csv(const std::filesystem::path& path);

}  // namespace kvaf
