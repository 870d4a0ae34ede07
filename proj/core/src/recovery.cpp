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

#include "kvaf/recovery.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <sstream>

#include <Eigen/Dense>

#include "kvaf/error.hpp"
#include "kvaf/io.hpp"

namespace kvaf {

// ---- config ----

void DetectConfig::validate() const {
  if (!(heat_threshold > 0.0 && heat_threshold <= 1.0)) throw ValidationError("heat_threshold must be in (0, 1]");
  if (!(sigma > 0.0)) throw ValidationError("sigma must be positive");
  if (!(merge_radius >= 0.0) || !(search_radius > 0.0) || !(near_radius >= 0.0) || !(finger_radius >= 0.0)) {
    throw ValidationError("detection radii must be non-negative");
  }
  if (!(min_confidence >= 0.0 && min_confidence <= 1.0)) throw ValidationError("min_confidence must be in [0, 1]");
  if (max_detections < 1) throw ValidationError("max_detections must be at least 1");
  if (!(color_tolerance >= 0.0 && color_tolerance < 0.5)) throw ValidationError("color_tolerance must be in [0, 0.5)");
  if (!(white_threshold > 0.5 && white_threshold <= 1.0)) throw ValidationError("white_threshold must be in (0.5, 1]");
  if (min_white_pixels < 1) throw ValidationError("min_white_pixels must be at least 1");
  if (!(axis_length > 0.0)) throw ValidationError("axis_length must be positive");
  if (!(max_reprojection_rmse > 0.0)) throw ValidationError("max_reprojection_rmse must be positive");
  if (!(gripper_axis.norm() > 0.0)) throw ValidationError("gripper_axis must be nonzero");
  if (horizontal_axis < 0 || horizontal_axis > 2) throw ValidationError("horizontal_axis must be 0, 1 or 2");
  if (median_window < 1 || median_window % 2 == 0) throw ValidationError("median_window must be odd and positive");
}

nlohmann::json DetectConfig::to_json() const {
  return {{"heat_threshold", heat_threshold},
          {"sigma", sigma},
          {"merge_radius", merge_radius},
          {"min_confidence", min_confidence},
          {"max_detections", max_detections},
          {"search_radius", search_radius},
          {"near_radius", near_radius},
          {"color_tolerance", color_tolerance},
          {"white_threshold", white_threshold},
          {"min_white_pixels", min_white_pixels},
          {"finger_radius", finger_radius},
          {"axis_length", axis_length},
          {"max_reprojection_rmse", max_reprojection_rmse},
          {"gripper_axis", {gripper_axis.x(), gripper_axis.y(), gripper_axis.z()}},
          {"finger_center", {finger_center.x(), finger_center.y(), finger_center.z()}},
          {"horizontal_axis", horizontal_axis},
          {"median_window", median_window}};
}

namespace {

Vec3 vec3_from(const nlohmann::json& v, const std::string& key) {
  if (!v.is_array() || v.size() != 3) throw LoadError(key + " needs 3 numbers");
  return {v[0].get<double>(), v[1].get<double>(), v[2].get<double>()};
}

}  // namespace

DetectConfig DetectConfig::from_json(const nlohmann::json& j) {
  DetectConfig c;
  try {
    for (const auto& [key, v] : j.items()) {
      if (key == "heat_threshold") c.heat_threshold = v.get<double>();
      else if (key == "sigma") c.sigma = v.get<double>();
      else if (key == "merge_radius") c.merge_radius = v.get<double>();
      else if (key == "min_confidence") c.min_confidence = v.get<double>();
      else if (key == "max_detections") c.max_detections = v.get<int>();
      else if (key == "search_radius") c.search_radius = v.get<double>();
      else if (key == "near_radius") c.near_radius = v.get<double>();
      else if (key == "color_tolerance") c.color_tolerance = v.get<double>();
      else if (key == "white_threshold") c.white_threshold = v.get<double>();
      else if (key == "min_white_pixels") c.min_white_pixels = v.get<int>();
      else if (key == "finger_radius") c.finger_radius = v.get<double>();
      else if (key == "axis_length") c.axis_length = v.get<double>();
      else if (key == "max_reprojection_rmse") c.max_reprojection_rmse = v.get<double>();
      else if (key == "gripper_axis") c.gripper_axis = vec3_from(v, key);
      else if (key == "finger_center") c.finger_center = vec3_from(v, key);
      else if (key == "horizontal_axis") c.horizontal_axis = v.get<int>();
      else if (key == "median_window") c.median_window = v.get<int>();
      else throw LoadError("unknown detect key '" + key + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw LoadError(std::string("detect config: ") + e.what());
  }
  c.validate();
  return c;
}

DetectConfig DetectConfig::matching(const RenderConfig& render) {
  DetectConfig c;
  c.sigma = render.sigma;
  c.axis_length = render.axis_length;
  return c;
}

// ---- detection ----

namespace {

struct Component {
  std::vector<int> pixels;  // y * width + x
};

// 8-connected components of mask inside [x0, x1] x [y0, y1].
std::vector<Component> components(const std::vector<uint8_t>& mask, int width, int x0, int y0, int x1, int y1) {
  std::vector<Component> out;
  std::vector<uint8_t> seen(mask.size(), 0);
  std::vector<int> stack;
  for (int y = y0; y <= y1; ++y) {
    for (int x = x0; x <= x1; ++x) {
      const int start = y * width + x;
      if (!mask[static_cast<size_t>(start)] || seen[static_cast<size_t>(start)]) continue;
      Component c;
      stack.push_back(start);
      seen[static_cast<size_t>(start)] = 1;
      while (!stack.empty()) {
        const int p = stack.back();
        stack.pop_back();
        c.pixels.push_back(p);
        const int px = p % width, py = p / width;
        for (int dy = -1; dy <= 1; ++dy) {
          for (int dx = -1; dx <= 1; ++dx) {
            const int nx = px + dx, ny = py + dy;
            if (nx < x0 || nx > x1 || ny < y0 || ny > y1) continue;
            const int q = ny * width + nx;
            if (mask[static_cast<size_t>(q)] && !seen[static_cast<size_t>(q)]) {
              seen[static_cast<size_t>(q)] = 1;
              stack.push_back(q);
            }
          }
        }
      }
      std::sort(c.pixels.begin(), c.pixels.end());
      out.push_back(std::move(c));
    }
  }
  return out;
}

struct HeatGroup {
  std::vector<int> pixels;
  double mass = 0.0;
  Vec2 centroid = Vec2::Zero();
};

void finalize(HeatGroup& g, const std::vector<double>& heat, int width) {
  g.mass = 0.0;
  Vec2 acc = Vec2::Zero();
  for (int p : g.pixels) {
    const double h = heat[static_cast<size_t>(p)];
    g.mass += h;
    acc += h * Vec2(p % width, p / width);
  }
  g.centroid = g.mass > 0.0 ? Vec2(acc / g.mass) : Vec2::Zero();
}

// Weighted least squares on -2 s^2 ln h = |x|^2 - 2 x.c + k with weights h^2.
std::optional<Vec2> fit_gaussian_center(const HeatGroup& g, const std::vector<double>& heat, int width, double sigma) {
  if (g.pixels.size() < 3) return std::nullopt;
  Eigen::Matrix3d ata = Eigen::Matrix3d::Zero();
  Eigen::Vector3d atb = Eigen::Vector3d::Zero();
  for (int p : g.pixels) {
    const double h = heat[static_cast<size_t>(p)];
    const double x = p % width, y = p / width;
    const double w = h * h;
    const Eigen::Vector3d row(-2.0 * x, -2.0 * y, 1.0);
    const double rhs = -2.0 * sigma * sigma * std::log(h) - x * x - y * y;
    ata += w * row * row.transpose();
    atb += w * rhs * row;
  }
  const Eigen::LDLT<Eigen::Matrix3d> ldlt(ata);
  if (ldlt.info() != Eigen::Success || std::abs(ata.determinant()) < 1e-9) return std::nullopt;
  const Eigen::Vector3d sol = ldlt.solve(atb);
  if (!sol.allFinite()) return std::nullopt;
  return Vec2(sol[0], sol[1]);
}

struct Window {
  int x0, y0, x1, y1;
};

Window window_around(const Vec2& c, double radius, int width, int height) {
  return {std::max(0, static_cast<int>(std::floor(c.x() - radius))),
          std::max(0, static_cast<int>(std::floor(c.y() - radius))),
          std::min(width - 1, static_cast<int>(std::ceil(c.x() + radius))),
          std::min(height - 1, static_cast<int>(std::ceil(c.y() + radius)))};
}

std::optional<Vec2> find_axis_tip(const KvafFrame& frame, const Vec2& center, int axis, const DetectConfig& cfg) {
  const int w = frame.width(), h = frame.height();
  const Window win = window_around(center, cfg.search_radius, w, h);
  if (win.x0 > win.x1 || win.y0 > win.y1) return std::nullopt;
  const double hi = 1.0 - cfg.color_tolerance, lo = cfg.color_tolerance;
  std::vector<uint8_t> mask(static_cast<size_t>(w) * h, 0);
  for (int y = win.y0; y <= win.y1; ++y) {
    for (int x = win.x0; x <= win.x1; ++x) {
      bool pure = true;
      for (int c = 0; c < 3 && pure; ++c) {
        const double v = frame.at(x, y, c);
        pure = (c == axis) ? v >= hi : v <= lo;
      }
      mask[static_cast<size_t>(y) * w + x] = pure;
    }
  }
  const auto comps = components(mask, w, win.x0, win.y0, win.x1, win.y1);
  double best = -1.0;
  int best_pixel = -1;
  const Component* best_comp = nullptr;
  for (const auto& comp : comps) {
    double dmin = std::numeric_limits<double>::infinity(), dmax = -1.0;
    int far = -1;
    for (int p : comp.pixels) {
      const double d = (Vec2(p % w, p / w) - center).norm();
      dmin = std::min(dmin, d);
      if (d > dmax) {
        dmax = d;
        far = p;
      }
    }
    if (dmin <= cfg.near_radius && dmax > best) {
      best = dmax;
      best_pixel = far;
      best_comp = &comp;
    }
  }
  if (!best_comp) return std::nullopt;
  // Snap to the middle of the perpendicular span at the segment end.
  const int tx = best_pixel % w, ty = best_pixel / w;
  const bool x_major = std::abs(tx - center.x()) >= std::abs(ty - center.y());
  double sum = 0.0;
  int count = 0;
  for (int p : best_comp->pixels) {
    const int px = p % w, py = p / w;
    if (x_major && px == tx && std::abs(py - ty) <= 8) {
      sum += py;
      ++count;
    } else if (!x_major && py == ty && std::abs(px - tx) <= 8) {
      sum += px;
      ++count;
    }
  }
  if (count == 0) return Vec2(tx, ty);
  return x_major ? Vec2(tx, sum / count) : Vec2(sum / count, ty);
}

std::optional<double> find_finger_separation(const KvafFrame& frame, const Vec2& center, const DetectConfig& cfg) {
  const int w = frame.width(), h = frame.height();
  const Window win = window_around(center, cfg.finger_radius, w, h);
  if (win.x0 > win.x1 || win.y0 > win.y1) return std::nullopt;
  std::vector<uint8_t> mask(static_cast<size_t>(w) * h, 0);
  for (int y = win.y0; y <= win.y1; ++y) {
    for (int x = win.x0; x <= win.x1; ++x) {
      mask[static_cast<size_t>(y) * w + x] = frame.at(x, y, 0) >= cfg.white_threshold &&
                                             frame.at(x, y, 1) >= cfg.white_threshold &&
                                             frame.at(x, y, 2) >= cfg.white_threshold;
    }
  }
  auto comps = components(mask, w, win.x0, win.y0, win.x1, win.y1);
  std::vector<std::pair<size_t, Vec2>> kept;  // size, centroid
  for (const auto& c : comps) {
    if (static_cast<int>(c.pixels.size()) < cfg.min_white_pixels) continue;
    Vec2 acc = Vec2::Zero();
    for (int p : c.pixels) acc += Vec2(p % w, p / w);
    const Vec2 centroid = acc / static_cast<double>(c.pixels.size());
    if ((centroid - center).norm() > cfg.finger_radius) continue;
    kept.emplace_back(c.pixels.size(), centroid);
  }
  if (kept.size() < 2) return std::nullopt;
  std::stable_sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
  return (kept[0].second - kept[1].second).norm();
}

}  // namespace

std::vector<Detection> detect_endpoints(const KvafFrame& frame, const DetectConfig& cfg) {
  const int w = frame.width(), h = frame.height();
  if (w == 0 || h == 0) return {};
  std::vector<double> heat(static_cast<size_t>(w) * h, 0.0);
  std::vector<uint8_t> mask(heat.size(), 0);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double r = frame.at(x, y, 0), g = frame.at(x, y, 1), b = frame.at(x, y, 2);
      if (g == 0.0 && r == b && r >= cfg.heat_threshold) {
        const size_t i = static_cast<size_t>(y) * w + x;
        heat[i] = r;
        mask[i] = 1;
      }
    }
  }
  const auto comps = components(mask, w, 0, 0, w - 1, h - 1);
  std::vector<HeatGroup> groups;
  for (const auto& c : comps) {
    HeatGroup g;
    g.pixels = c.pixels;
    finalize(g, heat, w);
    groups.push_back(std::move(g));
  }
  // Merge fragments split by lines drawn over the heatmap.
  for (bool merged = true; merged;) {
    merged = false;
    for (size_t i = 0; i < groups.size() && !merged; ++i) {
      for (size_t j = i + 1; j < groups.size() && !merged; ++j) {
        if ((groups[i].centroid - groups[j].centroid).norm() <= cfg.merge_radius) {
          groups[i].pixels.insert(groups[i].pixels.end(), groups[j].pixels.begin(), groups[j].pixels.end());
          std::sort(groups[i].pixels.begin(), groups[i].pixels.end());
          finalize(groups[i], heat, w);
          groups.erase(groups.begin() + static_cast<std::ptrdiff_t>(j));
          merged = true;
        }
      }
    }
  }

  std::vector<Detection> out;
  const double norm = 2.0 * std::numbers::pi * cfg.sigma * cfg.sigma;
  for (const auto& g : groups) {
    Detection d;
    d.confidence = std::clamp(g.mass / norm, 0.0, 1.0);
    if (d.confidence < cfg.min_confidence) continue;
    const auto fit = fit_gaussian_center(g, heat, w, cfg.sigma);
    d.center = (fit && (*fit - g.centroid).norm() <= cfg.merge_radius + 3.0 * cfg.sigma) ? *fit : g.centroid;
    out.push_back(d);
  }
  std::sort(out.begin(), out.end(), [](const Detection& a, const Detection& b) {
    if (a.confidence != b.confidence) return a.confidence > b.confidence;
    if (a.center.x() != b.center.x()) return a.center.x() < b.center.x();
    return a.center.y() < b.center.y();
  });
  if (static_cast<int>(out.size()) > cfg.max_detections) out.resize(static_cast<size_t>(cfg.max_detections));
  for (auto& d : out) {
    for (int m = 0; m < 3; ++m) d.axis_tips[static_cast<size_t>(m)] = find_axis_tip(frame, d.center, m, cfg);
    d.gripper_separation = find_finger_separation(frame, d.center, cfg);
  }
  return out;
}

std::optional<RecoveredPose> recover_pose(const Detection& det, const Mat3& K, const Mat4& E,
                                          const DetectConfig& cfg) {
  if (!det.complete()) return std::nullopt;
  std::vector<Correspondence> corr;
  corr.push_back({Vec3::Zero(), det.center});
  double longest = 0.0;
  for (int m = 0; m < 3; ++m) {
    const Vec2& tip = *det.axis_tips[static_cast<size_t>(m)];
    corr.push_back({cfg.axis_length * Vec3::Unit(m), tip});
    longest = std::max(longest, (tip - det.center).norm());
  }
  PnpOptions opts;
  if (longest > 1.0) opts.initial_depth = K(0, 0) * cfg.axis_length / longest;
  try {
    const PnpSolution sol = solve_pnp(corr, K, opts);
    if (!(sol.reprojection_rmse <= cfg.max_reprojection_rmse)) return std::nullopt;
    return RecoveredPose{camera_to_world(sol.pose(), E), sol.reprojection_rmse};
  } catch (const DegeneracyError&) {
    return std::nullopt;
  } catch (const NumericError&) {
    return std::nullopt;
  }
}

std::optional<double> gripper_opening(const Detection& det, const RigidTransform& world, const Mat3& K,
                                      const Mat4& E, const DetectConfig& cfg) {
  if (!det.gripper_separation) return std::nullopt;
  const Vec3 mid = world.apply(cfg.finger_center);
  const double step = 0.01;
  const Projection a = project_point(mid, K, E);
  const Projection b = project_point(mid + step * (world.rotation * cfg.gripper_axis.normalized()), K, E);
  if (!a.visible() || !b.visible()) return std::nullopt;
  const double px_per_m = (b.pixel - a.pixel).norm() / step;
  if (!(px_per_m > 1e-9)) return std::nullopt;
  return *det.gripper_separation / px_per_m;
}

// ---- tracks ----

size_t RecoveredTrack::present() const {
  return static_cast<size_t>(std::count_if(samples.begin(), samples.end(), [](const auto& s) { return s.has_value(); }));
}

std::array<RecoveredTrack, 2> associate_tracks(const std::vector<std::vector<PoseSample>>& per_frame,
                                               int horizontal_axis) {
  if (horizontal_axis < 0 || horizontal_axis > 2) throw ArgumentError("horizontal axis must be 0, 1 or 2");
  std::array<RecoveredTrack, 2> tracks;
  tracks[0].arm = Arm::left;
  tracks[1].arm = Arm::right;
  for (auto& t : tracks) t.samples.assign(per_frame.size(), std::nullopt);
  std::array<std::optional<Vec3>, 2> last;
  for (size_t f = 0; f < per_frame.size(); ++f) {
    const auto& s = per_frame[f];
    if (s.size() >= 2) {
      // Order-independent: sort by the horizontal coordinate, then the rest.
      std::array<size_t, 2> idx = {0, 1};
      auto less = [&](size_t a, size_t b) {
        const Vec3& pa = s[a].position;
        const Vec3& pb = s[b].position;
        if (pa[horizontal_axis] != pb[horizontal_axis]) return pa[horizontal_axis] < pb[horizontal_axis];
        return std::lexicographical_compare(pa.data(), pa.data() + 3, pb.data(), pb.data() + 3);
      };
      if (less(idx[1], idx[0])) std::swap(idx[0], idx[1]);
      for (size_t a = 0; a < 2; ++a) {
        tracks[a].samples[f] = s[idx[a]];
        last[a] = s[idx[a]].position;
      }
    } else if (s.size() == 1) {
      size_t arm = 0;
      if (last[0] && last[1]) {
        const double d0 = (s[0].position - *last[0]).norm();
        const double d1 = (s[0].position - *last[1]).norm();
        arm = d1 < d0 ? 1 : 0;
      } else if (last[1] && !last[0]) {
        arm = 1;
      }
      tracks[arm].samples[f] = s[0];
      last[arm] = s[0].position;
    }
  }
  return tracks;
}

std::vector<double> median_filter(const std::vector<double>& values, int window) {
  if (window < 1 || window % 2 == 0) throw ArgumentError("median window must be odd and positive");
  const int n = static_cast<int>(values.size());
  std::vector<double> out(values.size());
  std::vector<double> buf;
  for (int i = 0; i < n; ++i) {
    const int half = std::min({window / 2, i, n - 1 - i});
    buf.assign(values.begin() + (i - half), values.begin() + (i + half + 1));
    std::nth_element(buf.begin(), buf.begin() + half, buf.end());
    out[static_cast<size_t>(i)] = buf[static_cast<size_t>(half)];
  }
  return out;
}

namespace {

// Index of the nearest present entry; the earlier one wins ties.
template <class Present>
std::vector<size_t> nearest_present(size_t n, Present present) {
  std::vector<size_t> out(n);
  std::vector<long> prev(n, -1), next(n, -1);
  long p = -1;
  for (size_t i = 0; i < n; ++i) {
    if (present(i)) p = static_cast<long>(i);
    prev[i] = p;
  }
  p = -1;
  for (size_t i = n; i-- > 0;) {
    if (present(i)) p = static_cast<long>(i);
    next[i] = p;
  }
  for (size_t i = 0; i < n; ++i) {
    if (prev[i] < 0) out[i] = static_cast<size_t>(next[i]);
    else if (next[i] < 0) out[i] = static_cast<size_t>(prev[i]);
    else out[i] = (static_cast<long>(i) - prev[i] <= next[i] - static_cast<long>(i)) ? static_cast<size_t>(prev[i])
                                                                                       : static_cast<size_t>(next[i]);
  }
  return out;
}

}  // namespace

RecoveredTrack fill_and_smooth(const RecoveredTrack& track, int median_window) {
  if (median_window < 1 || median_window % 2 == 0) throw ArgumentError("median window must be odd and positive");
  const size_t n = track.size();
  if (track.present() == 0) throw EstimationError(std::string(arm_name(track.arm)) + " track has no detections to fill from");
  RecoveredTrack out = track;
  const auto src = nearest_present(n, [&](size_t i) { return track.samples[i].has_value(); });

  std::array<std::vector<double>, 3> pos;
  std::array<std::vector<double>, 4> quat;
  Quat prev = Quat::Identity();
  for (size_t i = 0; i < n; ++i) {
    const PoseSample& s = *track.samples[src[i]];
    for (int k = 0; k < 3; ++k) pos[static_cast<size_t>(k)].push_back(s.position[k]);
    Quat q(s.rotation);
    q.normalize();
    if (i > 0 && q.coeffs().dot(prev.coeffs()) < 0.0) q.coeffs() = -q.coeffs();
    prev = q;
    quat[0].push_back(q.w());
    quat[1].push_back(q.x());
    quat[2].push_back(q.y());
    quat[3].push_back(q.z());
  }
  for (auto& c : pos) c = median_filter(c, median_window);
  for (auto& c : quat) c = median_filter(c, median_window);
  out.positions.resize(n);
  out.rotations.resize(n);
  for (size_t i = 0; i < n; ++i) {
    out.positions[i] = Vec3(pos[0][i], pos[1][i], pos[2][i]);
    Quat q(quat[0][i], quat[1][i], quat[2][i], quat[3][i]);
    q.normalize();
    out.rotations[i] = q.toRotationMatrix();
  }

  const bool any_grip = std::any_of(track.samples.begin(), track.samples.end(),
                                    [](const auto& s) { return s && s->gripper_raw.has_value(); });
  out.gripper.assign(n, 0.5);
  if (any_grip) {
    const auto gsrc = nearest_present(n, [&](size_t i) { return track.samples[i] && track.samples[i]->gripper_raw; });
    std::vector<double> g(n);
    for (size_t i = 0; i < n; ++i) g[i] = *track.samples[gsrc[i]]->gripper_raw;
    g = median_filter(g, median_window);
    const auto [lo, hi] = std::minmax_element(g.begin(), g.end());
    const double range = *hi - *lo;
    if (range > 0.0) {
      const double base = *lo;
      for (size_t i = 0; i < n; ++i) out.gripper[i] = (g[i] - base) / range;
    }
  }
  return out;
}

// ---- actions ----

ActionSequence to_relative_actions(const RecoveredTrack& left, const RecoveredTrack& right) {
  if (!left.dense() || !right.dense()) throw ArgumentError("tracks must be filled before computing actions");
  const size_t n = left.positions.size();
  if (right.positions.size() != n || left.gripper.size() != n || right.gripper.size() != n) {
    throw DimensionError("left and right tracks differ in length");
  }
  if (n < 2) throw DimensionError("actions need at least 2 frames");
  ActionSequence seq;
  seq.actions.resize(static_cast<Eigen::Index>(n - 1), 14);
  for (size_t t = 0; t + 1 < n; ++t) {
    const auto row = static_cast<Eigen::Index>(t);
    int col = 0;
    for (const RecoveredTrack* tr : {&left, &right}) {
      const Mat3& r0 = tr->rotations[t];
      const Vec3 dp = r0.transpose() * (tr->positions[t + 1] - tr->positions[t]);
      const Vec3 drpy = rpy_from_rotation(r0.transpose() * tr->rotations[t + 1]);
      seq.actions.block<1, 3>(row, col) = dp.transpose();
      seq.actions.block<1, 3>(row, col + 3) = drpy.transpose();
      seq.actions(row, col + 6) = tr->gripper[t + 1] - tr->gripper[t];
      col += 7;
    }
  }
  return seq;
}

std::array<RecoveredTrack, 2> ground_truth_tracks(const Episode& episode) {
  std::array<RecoveredTrack, 2> out;
  for (Arm a : kArms) {
    auto& tr = out[static_cast<size_t>(a)];
    tr.arm = a;
    for (const auto& s : episode.states) {
      const EePose& ee = s.ee(a);
      const Mat3 r = ee.orientation.normalized().toRotationMatrix();
      tr.samples.push_back(PoseSample{ee.position, r, s.gripper(a)});
      tr.positions.push_back(ee.position);
      tr.rotations.push_back(r);
      tr.gripper.push_back(s.gripper(a));
    }
  }
  return out;
}

ActionSequence ground_truth_actions(const Episode& episode) {
  const auto tracks = ground_truth_tracks(episode);
  return to_relative_actions(tracks[0], tracks[1]);
}

nlohmann::json RecoveryReport::to_json() const {
  return {{"translation_error", translation_error},
          {"rotation_error", rotation_error},
          {"gripper_error", gripper_error},
          {"detection_rate", detection_rate},
          {"steps", steps}};
}

RecoveryReport evaluate_recovery(const ActionSequence& recovered, const ActionSequence& truth,
                                 double detection_rate) {
  if (recovered.steps() != truth.steps()) {
    throw DimensionError("recovered has " + std::to_string(recovered.steps()) + " steps, ground truth has " +
                         std::to_string(truth.steps()));
  }
  RecoveryReport r;
  r.detection_rate = detection_rate;
  r.steps = static_cast<size_t>(recovered.steps());
  if (recovered.steps() == 0) return r;
  for (Eigen::Index t = 0; t < recovered.steps(); ++t) {
    for (int base : {0, 7}) {
      r.translation_error += (recovered.actions.block<1, 3>(t, base) - truth.actions.block<1, 3>(t, base)).norm();
      r.rotation_error += (recovered.actions.block<1, 3>(t, base + 3) - truth.actions.block<1, 3>(t, base + 3)).norm();
      r.gripper_error += std::abs(recovered.actions(t, base + 6) - truth.actions(t, base + 6));
    }
  }
  const double count = 2.0 * static_cast<double>(recovered.steps());
  r.translation_error /= count;
  r.rotation_error /= count;
  r.gripper_error /= count;
  return r;
}

// ---- episode pipeline ----

EpisodeRecovery::EpisodeRecovery(size_t frames, const DetectConfig& cfg)
    : cfg_(cfg), per_frame_(frames), detections_(frames) {
  cfg_.validate();
}

void EpisodeRecovery::add_frame(size_t index, const KvafFrame& frame, const Mat3& K, const Mat4& E) {
  if (index >= per_frame_.size()) throw ArgumentError("frame index " + std::to_string(index) + " out of range");
  auto dets = detect_endpoints(frame, cfg_);
  std::vector<PoseSample> samples;
  for (const auto& d : dets) {
    const auto pose = recover_pose(d, K, E, cfg_);
    if (!pose) continue;
    PoseSample s;
    s.position = pose->world.translation;
    s.rotation = pose->world.rotation;
    s.gripper_raw = gripper_opening(d, pose->world, K, E, cfg_);
    samples.push_back(s);
  }
  per_frame_[index] = std::move(samples);
  detections_[index] = std::move(dets);
}

double EpisodeRecovery::detection_rate() const {
  if (per_frame_.empty()) return 0.0;
  size_t hits = 0;
  for (const auto& s : per_frame_) hits += std::min<size_t>(s.size(), 2);
  return static_cast<double>(hits) / (2.0 * static_cast<double>(per_frame_.size()));
}

std::array<RecoveredTrack, 2> EpisodeRecovery::tracks() const {
  auto raw = associate_tracks(per_frame_, cfg_.horizontal_axis);
  return {fill_and_smooth(raw[0], cfg_.median_window), fill_and_smooth(raw[1], cfg_.median_window)};
}

ActionSequence EpisodeRecovery::actions() const {
  const auto t = tracks();
  return to_relative_actions(t[0], t[1]);
}

// ---- CSV ----

std::vector<std::string> action_columns() {
  std::vector<std::string> cols;
  for (const char* arm : {"left", "right"}) {
    for (const char* f : {"dx", "dy", "dz", "droll", "dpitch", "dyaw", "dgrip"}) cols.push_back(std::string(arm) + "_" + f);
  }
  return cols;
}

void save_actions_csv(const ActionSequence& actions, const std::filesystem::path& path) {
  std::ostringstream os;
  os << "t";
  for (const auto& c : action_columns()) os << "," << c;
  os << "\n";
  for (Eigen::Index t = 0; t < actions.steps(); ++t) {
    os << t;
    for (int k = 0; k < 14; ++k) os << "," << format_double(actions.actions(t, k));
    os << "\n";
  }
  write_text(path, os.str());
}

ActionSequence load_actions_csv(const std::filesystem::path& path) {
  std::istringstream is(read_text(path));
  std::string line;
  if (!std::getline(is, line)) throw LoadError(path.string() + ": empty action file");
  const auto header = split_csv_line(line);
  const auto cols = action_columns();
  if (header.size() != cols.size() + 1 || header[0] != "t") throw LoadError(path.string() + ": bad action header");
  for (size_t i = 0; i < cols.size(); ++i) {
    if (header[i + 1] != cols[i]) throw LoadError(path.string() + ": column " + std::to_string(i + 2) + " should be '" + cols[i] + "'");
  }
  std::vector<std::array<double, 14>> rows;
  int row = 1;
  while (std::getline(is, line)) {
    ++row;
    if (line.empty()) continue;
    const auto f = split_csv_line(line);
    if (f.size() != 15) throw LoadError(path.string() + ": row " + std::to_string(row) + " has " + std::to_string(f.size()) + " fields");
    std::array<double, 14> r{};
    for (int k = 0; k < 14; ++k) {
      r[static_cast<size_t>(k)] = parse_double(f[static_cast<size_t>(k) + 1], path.string() + " row " + std::to_string(row) + " column " + cols[static_cast<size_t>(k)]);
    }
    rows.push_back(r);
  }
  ActionSequence seq;
  seq.actions.resize(static_cast<Eigen::Index>(rows.size()), 14);
  for (size_t t = 0; t < rows.size(); ++t) {
    for (int k = 0; k < 14; ++k) seq.actions(static_cast<Eigen::Index>(t), k) = rows[t][static_cast<size_t>(k)];
  }
  return seq;
}

}  // namespace kvaf
