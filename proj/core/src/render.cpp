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

#include "kvaf/render.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>

#include "kvaf/error.hpp"
#include "kvaf/parallel.hpp"

namespace kvaf {

namespace {

constexpr double kViridis[256][3] = {
#include "viridis_table.inc"
};

int round_px(double v) { return static_cast<int>(std::floor(v + 0.5)); }

Color clamp01(const Color& c) { return c.cwiseMax(0.0).cwiseMin(1.0); }

}  // namespace

Color colormap_lookup(Colormap map, double alpha) {
  const int i = round_px(std::clamp(alpha, 0.0, 1.0) * 255.0);
  if (map == Colormap::grayscale) {
    const double v = i / 255.0;
    return {v, v, v};
  }
  return {kViridis[i][0], kViridis[i][1], kViridis[i][2]};
}

void RenderConfig::validate() const {
  if (width <= 0 || height <= 0) throw ValidationError("render size must be positive");
  if (!(sigma > 0.0)) throw ValidationError("heatmap sigma must be positive");
  if (!(radius > 0.0)) throw ValidationError("heatmap radius must be positive");
  if (!(axis_length > 0.0)) throw ValidationError("axis length must be positive");
  if (line_thickness < 1) throw ValidationError("line thickness must be at least 1");
  if (landmark_radius < 0) throw ValidationError("landmark radius must be non-negative");
}

namespace {

nlohmann::json color_json(const Color& c) { return {c[0], c[1], c[2]}; }

Color color_from(const nlohmann::json& j) {
  if (!j.is_array() || j.size() != 3) throw LoadError("color needs 3 numbers");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

}  // namespace

nlohmann::json RenderConfig::to_json() const {
  return {{"width", width},
          {"height", height},
          {"sigma", sigma},
          {"radius", radius},
          {"axis_length", axis_length},
          {"line_thickness", line_thickness},
          {"landmark_radius", landmark_radius},
          {"colormap", colormap == Colormap::viridis ? "viridis" : "grayscale"},
          {"arm_tint", {color_json(arm_tint[0]), color_json(arm_tint[1])}},
          {"finger_color", color_json(finger_color)},
          {"crossbar_color", color_json(crossbar_color)},
          {"heat_channels", color_json(heat_channels)}};
}

RenderConfig RenderConfig::from_json(const nlohmann::json& j) {
  RenderConfig cfg;
  try {
    for (const auto& [key, v] : j.items()) {
      if (key == "width") cfg.width = v.get<int>();
      else if (key == "height") cfg.height = v.get<int>();
      else if (key == "sigma") cfg.sigma = v.get<double>();
      else if (key == "radius") cfg.radius = v.get<double>();
      else if (key == "axis_length") cfg.axis_length = v.get<double>();
      else if (key == "line_thickness") cfg.line_thickness = v.get<int>();
      else if (key == "landmark_radius") cfg.landmark_radius = v.get<int>();
      else if (key == "colormap") {
        const auto name = v.get<std::string>();
        if (name == "viridis") cfg.colormap = Colormap::viridis;
        else if (name == "grayscale") cfg.colormap = Colormap::grayscale;
        else throw LoadError("unknown colormap '" + name + "'");
      } else if (key == "arm_tint") {
        if (!v.is_array() || v.size() != 2) throw LoadError("arm_tint needs two colors");
        cfg.arm_tint = {color_from(v[0]), color_from(v[1])};
      } else if (key == "finger_color") cfg.finger_color = color_from(v);
      else if (key == "crossbar_color") cfg.crossbar_color = color_from(v);
      else if (key == "heat_channels") cfg.heat_channels = color_from(v);
      else throw LoadError("unknown render key '" + key + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw LoadError(std::string("render config: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

KvafFrame quantize(const KvafFrame& frame) {
  KvafFrame out = frame;
  for (double& v : out.data()) v = std::round(std::clamp(v, 0.0, 1.0) * 255.0) / 255.0;
  return out;
}

void gaussian_heatmap(KvafFrame& canvas, const Vec2& center, const RenderConfig& cfg) {
  if (!center.allFinite()) return;
  const double r2 = cfg.radius * cfg.radius;
  const double inv = 1.0 / (2.0 * cfg.sigma * cfg.sigma);
  const double x_lo = std::max(0.0, std::ceil(center.x() - cfg.radius));
  const double x_hi = std::min(canvas.width() - 1.0, std::floor(center.x() + cfg.radius));
  const double y_lo = std::max(0.0, std::ceil(center.y() - cfg.radius));
  const double y_hi = std::min(canvas.height() - 1.0, std::floor(center.y() + cfg.radius));
  for (double yd = y_lo; yd <= y_hi; ++yd) {
    for (double xd = x_lo; xd <= x_hi; ++xd) {
      const double d2 = (xd - center.x()) * (xd - center.x()) + (yd - center.y()) * (yd - center.y());
      if (d2 > r2) continue;
      const double h = std::exp(-d2 * inv);
      const int x = static_cast<int>(xd);
      const int y = static_cast<int>(yd);
      for (int c = 0; c < 3; ++c) {
        if (cfg.heat_channels[c] > 0.0) {
          double& v = canvas.at(x, y, c);
          v = std::max(v, std::min(1.0, h * cfg.heat_channels[c]));
        }
      }
    }
  }
}

namespace {

// Liang-Barsky clip of p0 + s (p1 - p0), s in [0, 1], against a rectangle.
bool clip_segment(const Vec2& p0, const Vec2& p1, double lo_x, double lo_y, double hi_x,
                  double hi_y, double& s0, double& s1) {
  s0 = 0.0;
  s1 = 1.0;
  const Vec2 d = p1 - p0;
  const double p[4] = {-d.x(), d.x(), -d.y(), d.y()};
  const double q[4] = {p0.x() - lo_x, hi_x - p0.x(), p0.y() - lo_y, hi_y - p0.y()};
  for (int i = 0; i < 4; ++i) {
    if (p[i] == 0.0) {
      if (q[i] < 0.0) return false;
      continue;
    }
    const double r = q[i] / p[i];
    if (p[i] < 0.0) s0 = std::max(s0, r);
    else s1 = std::min(s1, r);
    if (s0 > s1) return false;
  }
  return true;
}

}  // namespace

void draw_line(KvafFrame& canvas, const Vec2& p0, const Vec2& p1, const Color& c0, const Color& c1,
               int thickness) {
  if (!p0.allFinite() || !p1.allFinite()) return;
  const double margin = thickness + 1.0;
  const double lo_x = -margin, lo_y = -margin;
  const double hi_x = canvas.width() - 1.0 + margin, hi_y = canvas.height() - 1.0 + margin;
  auto inside = [&](const Vec2& p) { return p.x() >= lo_x && p.x() <= hi_x && p.y() >= lo_y && p.y() <= hi_y; };

  Vec2 a = p0, b = p1;
  Color ca = c0, cb = c1;
  if (!inside(p0) || !inside(p1)) {
    double s0 = 0.0, s1 = 1.0;
    if (!clip_segment(p0, p1, lo_x, lo_y, hi_x, hi_y, s0, s1)) return;
    a = p0 + s0 * (p1 - p0);
    b = p0 + s1 * (p1 - p0);
    ca = c0 + s0 * (c1 - c0);
    cb = c0 + s1 * (c1 - c0);
  }

  int x0 = round_px(a.x()), y0 = round_px(a.y());
  const int x1 = round_px(b.x()), y1 = round_px(b.y());
  const int dx = std::abs(x1 - x0), dy = -std::abs(y1 - y0);
  const int sx = x0 < x1 ? 1 : -1, sy = y0 < y1 ? 1 : -1;
  const bool x_major = dx >= -dy;
  const int steps = std::max(dx, -dy);
  const int lo = (thickness - 1) / 2;
  const int hi = thickness - 1 - lo;

  int err = dx + dy;
  for (int i = 0;; ++i) {
    const double s = steps > 0 ? static_cast<double>(i) / steps : 0.0;
    const Color c = clamp01(ca + s * (cb - ca));
    for (int k = -lo; k <= hi; ++k) {
      const int x = x_major ? x0 : x0 + k;
      const int y = x_major ? y0 + k : y0;
      if (canvas.contains(x, y)) canvas.set(x, y, c);
    }
    if (x0 == x1 && y0 == y1) break;
    const int e2 = 2 * err;
    if (e2 >= dy) {
      err += dy;
      x0 += sx;
    }
    if (e2 <= dx) {
      err += dx;
      y0 += sy;
    }
  }
}

void draw_depth_line(KvafFrame& canvas, const DepthPoint& p0, const DepthPoint& p1,
                     const DepthRange& range, const RenderConfig& cfg, const Color& tint) {
  const Color c0 = clamp01(colormap_lookup(cfg.colormap, normalize_depth(p0.depth, range)) + tint);
  const Color c1 = clamp01(colormap_lookup(cfg.colormap, normalize_depth(p1.depth, range)) + tint);
  draw_line(canvas, p0.pixel, p1.pixel, c0, c1, cfg.line_thickness);
}

void draw_disc(KvafFrame& canvas, const Vec2& center, int radius, const Color& color) {
  if (!center.allFinite()) return;
  if (std::abs(center.x()) > 1e7 || std::abs(center.y()) > 1e7) return;
  const int cx = round_px(center.x()), cy = round_px(center.y());
  for (int dy = -radius; dy <= radius; ++dy) {
    for (int dx = -radius; dx <= radius; ++dx) {
      if (dx * dx + dy * dy > radius * radius) continue;
      if (canvas.contains(cx + dx, cy + dy)) canvas.set(cx + dx, cy + dy, color);
    }
  }
}

std::array<KeypointSet, 2> episode_keypoints(const KinematicChain& chain, const RobotState& state) {
  std::array<KeypointSet, 2> out;
  for (Arm a : kArms) {
    const ArmChain& arm = chain.arm(a);
    if (arm.empty()) continue;
    out[static_cast<size_t>(a)] = extract_keypoints(forward_kinematics(arm, state.joints(a)), arm, state.gripper(a));
  }
  return out;
}

KvafFrame render_frame(const RobotState& state, const std::array<KeypointSet, 2>& keypoints,
                       const DepthRange& range, const RenderConfig& cfg, FrameLog* log) {
  KvafFrame canvas(cfg.width, cfg.height);
  auto project = [&](const Vec3& p) { return project_point(p, state.K, state.E); };

  std::array<std::vector<Projection>, 2> skeleton;
  for (Arm a : kArms) {
    const size_t ai = static_cast<size_t>(a);
    for (const Vec3& p : keypoints[ai].arm_points) skeleton[ai].push_back(project(p));
  }

  // 1. depth-aware skeleton
  for (Arm a : kArms) {
    const size_t ai = static_cast<size_t>(a);
    const auto& proj = skeleton[ai];
    for (size_t i = 1; i < proj.size(); ++i) {
      if (!proj[i - 1].visible() || !proj[i].visible()) continue;
      draw_depth_line(canvas, {proj[i - 1].pixel, proj[i - 1].depth}, {proj[i].pixel, proj[i].depth}, range, cfg,
                      cfg.arm_tint[ai]);
    }
  }

  // 2. joint landmarks
  for (Arm a : kArms) {
    for (const auto& jp : keypoints[static_cast<size_t>(a)].joint_points) {
      const Projection p = project(jp.position);
      if (!p.visible()) continue;
      draw_disc(canvas, p.pixel, cfg.landmark_radius, colormap_lookup(cfg.colormap, normalize_depth(p.depth, range)));
    }
  }

  // 3. gripper: crossbar between finger bases, then the fingers on top
  for (Arm a : kArms) {
    const auto& fingers = keypoints[static_cast<size_t>(a)].fingers;
    for (size_t i = 1; i < fingers.size(); ++i) {
      const Projection p0 = project(fingers[i - 1].base);
      const Projection p1 = project(fingers[i].base);
      if (p0.visible() && p1.visible()) {
        draw_line(canvas, p0.pixel, p1.pixel, cfg.crossbar_color, cfg.crossbar_color, cfg.line_thickness);
      }
    }
    for (const auto& f : fingers) {
      const Projection p0 = project(f.base);
      const Projection p1 = project(f.tip);
      if (p0.visible() && p1.visible()) {
        draw_line(canvas, p0.pixel, p1.pixel, cfg.finger_color, cfg.finger_color, cfg.line_thickness);
      }
    }
  }

  // 4. end-effector heatmap
  for (Arm a : kArms) {
    const size_t ai = static_cast<size_t>(a);
    if (keypoints[ai].empty()) continue;
    const Projection c = project(state.ee(a).position);
    if (c.visible()) gaussian_heatmap(canvas, c.pixel, cfg);
  }

  // 5. pose axes, pure red / green / blue
  for (Arm a : kArms) {
    const size_t ai = static_cast<size_t>(a);
    if (keypoints[ai].empty()) continue;
    const EePose& ee = state.ee(a);
    const Projection c = project(ee.position);
    if (!c.visible()) continue;
    const Mat3 r = ee.orientation.normalized().toRotationMatrix();
    for (int m = 0; m < 3; ++m) {
      const Projection tip = project(ee.position + cfg.axis_length * r.col(m));
      if (!tip.visible()) continue;
      Color color = Color::Zero();
      color[m] = 1.0;
      draw_line(canvas, c.pixel, tip.pixel, color, color, cfg.line_thickness);
    }
  }

  if (log) {
    for (Arm a : kArms) {
      const size_t ai = static_cast<size_t>(a);
      auto& out = log->arms[ai];
      out.clear();
      auto record = [&](const std::string& label, const Vec3& p) {
        const Projection pr = project(p);
        out.push_back({label, pr.pixel, pr.depth, pr.visible()});
      };
      const auto& kp = keypoints[ai];
      for (size_t i = 0; i < kp.arm_points.size(); ++i) record("link" + std::to_string(i), kp.arm_points[i]);
      for (const auto& f : kp.fingers) {
        record(f.joint + ".base", f.base);
        record(f.joint + ".tip", f.tip);
      }
      if (!kp.empty()) {
        const EePose& ee = state.ee(a);
        record("ee", ee.position);
        const Mat3 r = ee.orientation.normalized().toRotationMatrix();
        const char* names[3] = {"axis.x", "axis.y", "axis.z"};
        for (int m = 0; m < 3; ++m) record(names[m], ee.position + cfg.axis_length * r.col(m));
      }
    }
  }
  return canvas;
}

DepthRange render_episode_each(const Episode& episode, const KinematicChain& chain,
                               const RenderConfig& cfg, const EpisodeRenderOptions& options,
                               const std::function<void(size_t, KvafFrame&&, FrameLog&&)>& sink) {
  cfg.validate();
  if (episode.states.empty()) throw ArgumentError("episode has no frames");
  if (episode.width != cfg.width || episode.height != cfg.height) {
    throw ArgumentError("render size " + std::to_string(cfg.width) + "x" + std::to_string(cfg.height) +
                        " does not match the episode camera " + std::to_string(episode.width) + "x" +
                        std::to_string(episode.height));
  }
  const size_t n = episode.size();
  std::vector<std::array<KeypointSet, 2>> keypoints(n);
  for (size_t i = 0; i < n; ++i) keypoints[i] = episode_keypoints(chain, episode.states[i]);

  // Per-frame cameras may differ, so each frame's points are tested against its own camera.
  double lo = std::numeric_limits<double>::infinity();
  double hi = -std::numeric_limits<double>::infinity();
  for (size_t i = 0; i < n; ++i) {
    try {
      const DepthRange r = estimate_depth_range(keypoints[i], episode.camera(i), 0.0);
      lo = std::min(lo, r.z_min);
      hi = std::max(hi, r.z_max);
    } catch (const EstimationError&) {
    }
  }
  if (!(lo <= hi)) throw EstimationError("no visible keypoints in the episode");
  DepthRange range;
  if (hi - lo <= 1e-3 + 1e-12) {
    // Single-depth episodes: recompute with the degenerate rule on the raw depth.
    const double z = 0.5 * (lo + hi);
    const double half = 0.5 * std::max(2.0 * options.depth_margin * z, 1e-3);
    range = {z - half, z + half};
  } else {
    const double pad = options.depth_margin * (hi - lo);
    range = {lo - pad, hi + pad};
  }

  const unsigned workers = worker_count(options.threads);
  const size_t batch = std::max<size_t>(1, workers) * 2;
  for (size_t start = 0; start < n; start += batch) {
    const size_t count = std::min(batch, n - start);
    std::vector<KvafFrame> frames(count);
    std::vector<FrameLog> logs(count);
    parallel_for(count, workers, [&](size_t k) {
      frames[k] = render_frame(episode.states[start + k], keypoints[start + k], range, cfg, &logs[k]);
    });
    for (size_t k = 0; k < count; ++k) sink(start + k, std::move(frames[k]), std::move(logs[k]));
  }
  return range;
}

RenderedEpisode render_episode(const Episode& episode, const KinematicChain& chain,
                               const RenderConfig& cfg, const EpisodeRenderOptions& options) {
  RenderedEpisode out;
  out.frames.resize(episode.size());
  out.logs.resize(episode.size());
  out.depth_range = render_episode_each(episode, chain, cfg, options, [&](size_t i, KvafFrame&& f, FrameLog&& l) {
    out.frames[i] = std::move(f);
    out.logs[i] = std::move(l);
  });
  return out;
}

}  // namespace kvaf
