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

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "kvaf/episode.hpp"
#include "kvaf/fusion.hpp"
#include "kvaf/recovery.hpp"
#include "kvaf/render.hpp"

namespace kvaf {

/// "%.17g": enough digits for an exact double round trip.
std::string format_double(double v);
/// Strict decimal parse of a whole field; throws LoadError naming `where`.
double parse_double(std::string_view text, const std::string& where);
std::vector<std::string> split_csv_line(std::string_view line);

std::string read_text(const std::filesystem::path& path);
void write_text(const std::filesystem::path& path, std::string_view text);
nlohmann::json read_json(const std::filesystem::path& path);
/// Pretty-printed with sorted keys and a trailing newline.
void write_json(const std::filesystem::path& path, const nlohmann::json& j);

/// Binary P6, maxval 255; channels are rounded from [0, 1].
void write_ppm(const KvafFrame& frame, const std::filesystem::path& path);
std::string encode_ppm(const KvafFrame& frame);
KvafFrame read_ppm(const std::filesystem::path& path);
/// 8-bit RGB PNG, no timestamps or text chunks.
void write_png(const KvafFrame& frame, const std::filesystem::path& path);

/// Episode directory: states.csv, camera.json, meta.json.
///
/// states.csv columns: t, q_left_<i>..., q_right_<i>..., g_left, g_right,
/// then for each arm <arm>_px, <arm>_py, <arm>_pz, <arm>_qw, <arm>_qx,
/// <arm>_qy, <arm>_qz. Quaternions off unit norm by more than 1e-3 are
/// rejected; smaller deviations are renormalized.
Episode load_episode(const std::filesystem::path& dir);
/// Every state must share one camera. Throws ArgumentError otherwise.
void save_episode(const Episode& episode, const std::filesystem::path& dir);

struct SynthSettings {
  int frames = 64;
  int episodes = 20;  // roundtrip seeds are seed .. seed + episodes - 1
  double max_joint_step = 0.04;

  nlohmann::json to_json() const;
  static SynthSettings from_json(const nlohmann::json& j);
};

/// Acceptance bounds for the round trip; a violated bound is exit status 3.
struct RoundtripBounds {
  double translation = 0.0155;
  double rotation = 0.110;
  double gripper = 0.039;
  double detection_rate = 0.45;

  nlohmann::json to_json() const;
  static RoundtripBounds from_json(const nlohmann::json& j);
};

struct RunPaths {
  std::string urdf;     // robot description
  std::string camera;   // camera JSON
  std::string episode;  // episode directory
  std::string frames;   // directory of frame_%05d.ppm
  std::string out;  // not part of the config echo or hash
};

struct RunConfig {
  RenderConfig render;
  DetectConfig detect;
  ModelConfig model;
  TrainConfig train;
  ToyDataConfig toy;
  SynthSettings synth;
  RoundtripBounds bounds;
  RunPaths paths;
  Factors event_block = kDefaultBlock;  // encoder block for event targets
  uint64_t seed = 0;
  std::string stage = "full";  // "frozen" or "full"
  bool write_png = false;

  void validate() const;
  nlohmann::json to_json() const;
  /// Unknown keys anywhere in the tree are rejected with LoadError.
  /// Relative paths resolve against `base_dir`.
  static RunConfig from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
  /// FNV-1a 64 of the canonical JSON dump, as 16 hex digits.
  std::string hash() const;
};

}  // namespace kvaf
