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
#include <functional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "kvaf/camera.hpp"
#include "kvaf/episode.hpp"
#include "kvaf/kinematics.hpp"

namespace kvaf {

using Color = Eigen::Vector3d;

enum class Colormap { viridis, grayscale };

/// Palette lookup C(alpha): entry round(clip(alpha, 0, 1) * 255) of a fixed
/// 256-entry table.
Color colormap_lookup(Colormap map, double alpha);

struct RenderConfig {
  int width = 640;
  int height = 480;
  double sigma = 6.0;         // heatmap std, px
  double radius = 18.0;       // heatmap truncation, px
  double axis_length = 0.1;   // pose-axis length, m
  int line_thickness = 3;     // px
  int landmark_radius = 4;    // px
  Colormap colormap = Colormap::viridis;
  /// Added to skeleton line colors only (clamped to [0, 1]).
  std::array<Color, 2> arm_tint = {Color(0.0, 0.0, 0.0), Color(0.12, 0.12, 0.12)};
  Color finger_color = Color(1.0, 1.0, 1.0);
  Color crossbar_color = Color(0.55, 0.55, 0.55);
  /// Channels the heatmap max-composites into.
  Color heat_channels = Color(1.0, 0.0, 1.0);

  void validate() const;
  nlohmann::json to_json() const;
  /// Missing keys keep their defaults; unknown keys are rejected.
  static RenderConfig from_json(const nlohmann::json& j);
};

/// H x W x 3 image with channel values in [0, 1], row-major, channel-last.
class KvafFrame {
 public:
  KvafFrame() = default;
  KvafFrame(int width, int height) : width_(width), height_(height), data_(static_cast<size_t>(width) * height * 3, 0.0) {}

  int width() const { return width_; }
  int height() const { return height_; }
  bool contains(int x, int y) const { return x >= 0 && y >= 0 && x < width_ && y < height_; }

  double& at(int x, int y, int c) { return data_[index(x, y) + static_cast<size_t>(c)]; }
  double at(int x, int y, int c) const { return data_[index(x, y) + static_cast<size_t>(c)]; }
  Color pixel(int x, int y) const {
    const size_t i = index(x, y);
    return {data_[i], data_[i + 1], data_[i + 2]};
  }
  void set(int x, int y, const Color& c) {
    const size_t i = index(x, y);
    data_[i] = c[0];
    data_[i + 1] = c[1];
    data_[i + 2] = c[2];
  }

  const std::vector<double>& data() const { return data_; }
  std::vector<double>& data() { return data_; }

  friend bool operator==(const KvafFrame&, const KvafFrame&) = default;

 private:
  size_t index(int x, int y) const { return (static_cast<size_t>(y) * width_ + x) * 3; }

  int width_ = 0;
  int height_ = 0;
  std::vector<double> data_;
};

using KvafSequence = std::vector<KvafFrame>;

/// Rounds every channel to the nearest multiple of 1/255, as 8-bit storage does.
KvafFrame quantize(const KvafFrame& frame);

/// Pixel centers sit at integer coordinates: pixel (x, y) covers [x-0.5, x+0.5).
struct DepthPoint {
  Vec2 pixel;
  double depth = 0.0;
};

/// Max-composites exp(-d^2 / 2 sigma^2) * 1[d <= r] into cfg.heat_channels.
void gaussian_heatmap(KvafFrame& canvas, const Vec2& center, const RenderConfig& cfg);

/// Thick Bresenham segment. The centerline runs between the rounded endpoints;
/// each centerline pixel is widened by a span of `thickness` pixels across the
/// major axis. Colors are interpolated linearly along the centerline. Pixels
/// are overwritten; off-canvas pixels are dropped.
void draw_line(KvafFrame& canvas, const Vec2& p0, const Vec2& p1, const Color& c0, const Color& c1,
               int thickness);

/// draw_line colored C(alpha(z0)) -> C(alpha(z1)), plus an additive tint.
void draw_depth_line(KvafFrame& canvas, const DepthPoint& p0, const DepthPoint& p1,
                     const DepthRange& range, const RenderConfig& cfg,
                     const Color& tint = Color::Zero());

/// Filled disc of integer radius around the rounded center.
void draw_disc(KvafFrame& canvas, const Vec2& center, int radius, const Color& color);

/// Projected keypoint record kept for manifests.
struct ProjectedPoint {
  std::string label;
  Vec2 pixel = Vec2::Zero();
  double depth = 0.0;
  bool visible = false;
};

struct FrameLog {
  std::array<std::vector<ProjectedPoint>, 2> arms;
};

/// Composites one frame on a black canvas in a fixed order, for both arms per
/// layer: skeleton lines, joint landmarks, gripper (crossbars then white
/// fingers), end-effector heatmap, then red/green/blue pose axes. Segments
/// with a culled endpoint are skipped. Arms with empty keypoints draw nothing.
KvafFrame render_frame(const RobotState& state, const std::array<KeypointSet, 2>& keypoints,
                       const DepthRange& range, const RenderConfig& cfg, FrameLog* log = nullptr);

/// Keypoints of both arms at one state (forward kinematics + gripper branches).
std::array<KeypointSet, 2> episode_keypoints(const KinematicChain& chain, const RobotState& state);

struct RenderedEpisode {
  KvafSequence frames;
  DepthRange depth_range;
  std::vector<FrameLog> logs;
};

struct EpisodeRenderOptions {
  double depth_margin = 0.05;
  /// Worker cap; 0 means KVAF_THREADS or hardware concurrency.
  unsigned threads = 0;
};

/// Estimates the depth range once, then renders every frame. Output order and
/// content do not depend on the worker count.
RenderedEpisode render_episode(const Episode& episode, const KinematicChain& chain,
                               const RenderConfig& cfg, const EpisodeRenderOptions& options = {});

/// Streaming variant: frames are delivered to `sink` in frame order without
/// keeping the whole sequence in memory. Returns the depth range used.
DepthRange render_episode_each(const Episode& episode, const KinematicChain& chain,
                               const RenderConfig& cfg, const EpisodeRenderOptions& options,
                               const std::function<void(size_t, KvafFrame&&, FrameLog&&)>& sink);

}  // namespace kvaf
