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

#include "kvaf/io.hpp"

#include <png.h>

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <memory>
#include <sstream>

#include "kvaf/error.hpp"
#include "kvaf/hash.hpp"

namespace kvaf {

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

double parse_double(std::string_view text, const std::string& where) {
  while (!text.empty() && (text.front() == ' ' || text.front() == '\t')) text.remove_prefix(1);
  while (!text.empty() && (text.back() == ' ' || text.back() == '\t' || text.back() == '\r')) text.remove_suffix(1);
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size() || text.empty()) {
    throw LoadError(where + ": '" + std::string(text) + "' is not a number");
  }
  return v;
}

std::vector<std::string> split_csv_line(std::string_view line) {
  if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
  std::vector<std::string> out;
  size_t start = 0;
  while (true) {
    const size_t comma = line.find(',', start);
    out.emplace_back(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw LoadError("cannot open " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

void write_text(const std::filesystem::path& path, std::string_view text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw LoadError("cannot write " + path.string());
  os.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!os) throw LoadError("failed writing " + path.string());
}

nlohmann::json read_json(const std::filesystem::path& path) {
  try {
    return nlohmann::json::parse(read_text(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw LoadError(path.string() + ": " + e.what());
  }
}

void write_json(const std::filesystem::path& path, const nlohmann::json& j) { write_text(path, j.dump(2) + "\n"); }

// ---- images ----

namespace {

unsigned char to_byte(double v) { return static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)); }

}  // namespace

std::string encode_ppm(const KvafFrame& frame) {
  std::string out = "P6\n" + std::to_string(frame.width()) + " " + std::to_string(frame.height()) + "\n255\n";
  out.reserve(out.size() + frame.data().size());
  for (double v : frame.data()) out.push_back(static_cast<char>(to_byte(v)));
  return out;
}

void write_ppm(const KvafFrame& frame, const std::filesystem::path& path) { write_text(path, encode_ppm(frame)); }

KvafFrame read_ppm(const std::filesystem::path& path) {
  const std::string data = read_text(path);
  size_t pos = 0;
  auto token = [&]() {
    while (pos < data.size()) {
      if (data[pos] == '#') {
        while (pos < data.size() && data[pos] != '\n') ++pos;
      } else if (std::isspace(static_cast<unsigned char>(data[pos]))) {
        ++pos;
      } else {
        break;
      }
    }
    const size_t start = pos;
    while (pos < data.size() && !std::isspace(static_cast<unsigned char>(data[pos]))) ++pos;
    return data.substr(start, pos - start);
  };
  if (token() != "P6") throw LoadError(path.string() + ": not a binary PPM");
  int w = 0, h = 0, maxval = 0;
  try {
    w = std::stoi(token());
    h = std::stoi(token());
    maxval = std::stoi(token());
  } catch (const std::exception&) {
    throw LoadError(path.string() + ": bad PPM header");
  }
  if (w <= 0 || h <= 0 || maxval != 255) throw LoadError(path.string() + ": unsupported PPM size or depth");
  ++pos;  // single whitespace before the raster
  const size_t need = static_cast<size_t>(w) * h * 3;
  if (data.size() < pos + need) throw LoadError(path.string() + ": truncated PPM raster");
  KvafFrame f(w, h);
  for (size_t i = 0; i < need; ++i) f.data()[i] = static_cast<unsigned char>(data[pos + i]) / 255.0;
  return f;
}

void write_png(const KvafFrame& frame, const std::filesystem::path& path) {
  std::unique_ptr<FILE, int (*)(FILE*)> fp(std::fopen(path.string().c_str(), "wb"), &std::fclose);
  if (!fp) throw LoadError("cannot write " + path.string());
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw LoadError("libpng initialization failed");
  png_infop info = png_create_info_struct(png);
  if (!info || setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw LoadError("failed writing " + path.string());
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(frame.width()), static_cast<png_uint_32>(frame.height()), 8,
               PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  std::vector<unsigned char> row(static_cast<size_t>(frame.width()) * 3);
  for (int y = 0; y < frame.height(); ++y) {
    for (int x = 0; x < frame.width(); ++x) {
      for (int c = 0; c < 3; ++c) row[static_cast<size_t>(x) * 3 + c] = to_byte(frame.at(x, y, c));
    }
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

// ---- episodes ----

namespace {

std::vector<std::string> pose_columns(const char* arm) {
  std::vector<std::string> out;
  for (const char* f : {"px", "py", "pz", "qw", "qx", "qy", "qz"}) out.push_back(std::string(arm) + "_" + f);
  return out;
}

}  // namespace

Episode load_episode(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw LoadError(dir.string() + " is not an episode directory");
  const CameraModel cam = CameraModel::from_json(read_json(dir / "camera.json"));
  Episode ep;
  ep.width = cam.width;
  ep.height = cam.height;
  if (std::filesystem::exists(dir / "meta.json")) {
    const auto meta = read_json(dir / "meta.json");
    try {
      for (const auto& [key, v] : meta.items()) {
        if (key == "chain") ep.meta.chain = v.get<std::string>();
        else if (key == "fps") ep.meta.fps = v.get<double>();
        else if (key == "source") ep.meta.source = v.get<std::string>();
        else if (key == "format") {
          if (v.get<std::string>() != "kvaf-episode/1") throw LoadError("unsupported episode format");
        } else {
          throw LoadError("meta.json: unknown key '" + key + "'");
        }
      }
    } catch (const nlohmann::json::exception& e) {
      throw LoadError(std::string("meta.json: ") + e.what());
    }
  }

  const std::string csv_path = (dir / "states.csv").string();
  std::istringstream is(read_text(dir / "states.csv"));
  std::string line;
  if (!std::getline(is, line)) throw LoadError(csv_path + ": empty file");
  const auto header = split_csv_line(line);
  if (header.empty() || header[0] != "t") throw LoadError(csv_path + ": first column must be 't'");
  size_t col = 1;
  std::array<size_t, 2> dof = {0, 0};
  for (Arm a : kArms) {
    const std::string prefix = std::string("q_") + arm_name(a) + "_";
    while (col < header.size() && header[col] == prefix + std::to_string(dof[static_cast<size_t>(a)])) {
      ++dof[static_cast<size_t>(a)];
      ++col;
    }
  }
  std::vector<std::string> expected = {"g_left", "g_right"};
  for (const char* arm : {"left", "right"}) {
    for (auto& c : pose_columns(arm)) expected.push_back(c);
  }
  if (header.size() != col + expected.size()) {
    throw LoadError(csv_path + ": expected " + std::to_string(col + expected.size()) + " columns, found " +
                    std::to_string(header.size()));
  }
  for (size_t i = 0; i < expected.size(); ++i) {
    if (header[col + i] != expected[i]) {
      throw LoadError(csv_path + ": column " + std::to_string(col + i + 1) + " is '" + header[col + i] +
                      "', expected '" + expected[i] + "'");
    }
  }

  int row = 1;
  while (std::getline(is, line)) {
    ++row;
    if (line.empty() || line == "\r") continue;
    const auto f = split_csv_line(line);
    const std::string where = csv_path + " row " + std::to_string(row);
    if (f.size() != header.size()) {
      throw LoadError(where + ": " + std::to_string(f.size()) + " fields, header has " + std::to_string(header.size()));
    }
    std::vector<double> v(f.size());
    for (size_t i = 0; i < f.size(); ++i) {
      v[i] = parse_double(f[i], where + " column " + header[i]);
      if (!std::isfinite(v[i])) throw LoadError(where + " column " + header[i] + ": non-finite value");
    }
    RobotState s;
    if (v[0] != std::floor(v[0])) throw LoadError(where + ": frame index must be an integer");
    s.t = static_cast<int>(v[0]);
    size_t k = 1;
    for (Arm a : kArms) {
      Eigen::VectorXd q(static_cast<Eigen::Index>(dof[static_cast<size_t>(a)]));
      for (Eigen::Index j = 0; j < q.size(); ++j) q[j] = v[k++];
      s.q[static_cast<size_t>(a)] = q;
    }
    s.g = {v[k], v[k + 1]};
    k += 2;
    for (Arm a : kArms) {
      EePose& ee = s.xi[static_cast<size_t>(a)];
      ee.position = Vec3(v[k], v[k + 1], v[k + 2]);
      Quat q(v[k + 3], v[k + 4], v[k + 5], v[k + 6]);
      k += 7;
      const double norm = q.norm();
      if (std::abs(norm - 1.0) > 1e-3) {
        throw ValidationError(where + ": " + arm_name(a) + " quaternion norm " + format_double(norm) +
                              " is not unit");
      }
      if (std::abs(norm - 1.0) > 1e-12) q.normalize();
      ee.orientation = q;
    }
    s.K = cam.K;
    s.E = cam.E;
    ep.states.push_back(std::move(s));
  }
  ep.validate();
  return ep;
}

void save_episode(const Episode& episode, const std::filesystem::path& dir) {
  if (episode.states.empty()) throw ArgumentError("episode has no frames");
  for (const auto& s : episode.states) {
    if (s.K != episode.states[0].K || s.E != episode.states[0].E) {
      throw ArgumentError("episodes with per-frame cameras cannot be saved in this format");
    }
  }
  std::filesystem::create_directories(dir);
  write_json(dir / "camera.json", episode.camera(0).to_json());
  write_json(dir / "meta.json", {{"format", "kvaf-episode/1"},
                                 {"chain", episode.meta.chain},
                                 {"fps", episode.meta.fps},
                                 {"source", episode.meta.source}});
  std::ostringstream os;
  os << "t";
  for (Arm a : kArms) {
    for (Eigen::Index j = 0; j < episode.states[0].joints(a).size(); ++j) os << ",q_" << arm_name(a) << "_" << j;
  }
  os << ",g_left,g_right";
  for (const char* arm : {"left", "right"}) {
    for (const auto& c : pose_columns(arm)) os << "," << c;
  }
  os << "\n";
  for (const auto& s : episode.states) {
    os << s.t;
    for (Arm a : kArms) {
      if (s.joints(a).size() != episode.states[0].joints(a).size()) {
        throw ArgumentError("joint count changes within the episode");
      }
      for (Eigen::Index j = 0; j < s.joints(a).size(); ++j) os << "," << format_double(s.joints(a)[j]);
    }
    os << "," << format_double(s.g[0]) << "," << format_double(s.g[1]);
    for (Arm a : kArms) {
      const EePose& ee = s.ee(a);
      for (int k = 0; k < 3; ++k) os << "," << format_double(ee.position[k]);
      os << "," << format_double(ee.orientation.w()) << "," << format_double(ee.orientation.x()) << ","
         << format_double(ee.orientation.y()) << "," << format_double(ee.orientation.z());
    }
    os << "\n";
  }
  write_text(dir / "states.csv", os.str());
}

// ---- run configuration ----

nlohmann::json SynthSettings::to_json() const {
  return {{"frames", frames}, {"episodes", episodes}, {"max_joint_step", max_joint_step}};
}

SynthSettings SynthSettings::from_json(const nlohmann::json& j) {
  SynthSettings s;
  try {
    for (const auto& [key, v] : j.items()) {
      if (key == "frames") s.frames = v.get<int>();
      else if (key == "episodes") s.episodes = v.get<int>();
      else if (key == "max_joint_step") s.max_joint_step = v.get<double>();
      else throw LoadError("unknown synth key '" + key + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw LoadError(std::string("synth config: ") + e.what());
  }
  if (s.frames < 2 || s.episodes < 1 || !(s.max_joint_step > 0)) throw ValidationError("synth config out of range");
  return s;
}

nlohmann::json RoundtripBounds::to_json() const {
  return {{"translation", translation}, {"rotation", rotation}, {"gripper", gripper}, {"detection_rate", detection_rate}};
}

RoundtripBounds RoundtripBounds::from_json(const nlohmann::json& j) {
  RoundtripBounds b;
  try {
    for (const auto& [key, v] : j.items()) {
      if (key == "translation") b.translation = v.get<double>();
      else if (key == "rotation") b.rotation = v.get<double>();
      else if (key == "gripper") b.gripper = v.get<double>();
      else if (key == "detection_rate") b.detection_rate = v.get<double>();
      else throw LoadError("unknown bounds key '" + key + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw LoadError(std::string("bounds config: ") + e.what());
  }
  return b;
}

void RunConfig::validate() const {
  render.validate();
  detect.validate();
  model.validate();
  if (stage != "frozen" && stage != "full") throw ValidationError("stage must be 'frozen' or 'full'");
  if (event_block.t < 1 || event_block.h < 1 || event_block.w < 1) throw ValidationError("event_block must be positive");
}

nlohmann::json RunConfig::to_json() const {
  return {{"render", render.to_json()},
          {"detect", detect.to_json()},
          {"model", model.to_json()},
          {"train", train.to_json()},
          {"toy", toy.to_json()},
          {"synth", synth.to_json()},
          {"bounds", bounds.to_json()},
          {"paths",
           {{"urdf", paths.urdf}, {"camera", paths.camera}, {"episode", paths.episode}, {"frames", paths.frames}}},
          {"event_block", {event_block.t, event_block.h, event_block.w}},
          {"seed", seed},
          {"stage", stage},
          {"write_png", write_png}};
}

RunConfig RunConfig::from_json(const nlohmann::json& j, const std::filesystem::path& base_dir) {
  RunConfig c;
  if (!j.is_object()) throw LoadError("run config must be a JSON object");
  auto resolve = [&](const std::string& p) {
    if (p.empty() || base_dir.empty() || std::filesystem::path(p).is_absolute()) return p;
    return (base_dir / p).lexically_normal().string();
  };
  try {
    for (const auto& [key, v] : j.items()) {
      if (key == "render") c.render = RenderConfig::from_json(v);
      else if (key == "detect") c.detect = DetectConfig::from_json(v);
      else if (key == "model") c.model = ModelConfig::from_json(v);
      else if (key == "train") c.train = TrainConfig::from_json(v);
      else if (key == "toy") c.toy = ToyDataConfig::from_json(v);
      else if (key == "synth") c.synth = SynthSettings::from_json(v);
      else if (key == "bounds") c.bounds = RoundtripBounds::from_json(v);
      else if (key == "paths") {
        for (const auto& [pk, pv] : v.items()) {
          const std::string s = resolve(pv.get<std::string>());
          if (pk == "urdf") c.paths.urdf = s;
          else if (pk == "camera") c.paths.camera = s;
          else if (pk == "episode") c.paths.episode = s;
          else if (pk == "frames") c.paths.frames = s;
          else if (pk == "out") c.paths.out = s;
          else throw LoadError("unknown paths key '" + pk + "'");
        }
      } else if (key == "event_block") {
        const auto f = v.get<std::vector<int>>();
        if (f.size() != 3) throw LoadError("event_block needs 3 integers");
        c.event_block = {f[0], f[1], f[2]};
      } else if (key == "seed") c.seed = v.get<uint64_t>();
      else if (key == "stage") c.stage = v.get<std::string>();
      else if (key == "write_png") c.write_png = v.get<bool>();
      else throw LoadError("unknown config key '" + key + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw LoadError(std::string("run config: ") + e.what());
  }
  c.validate();
  return c;
}

std::string RunConfig::hash() const { return hex64(fnv1a64(to_json().dump())); }

}  // namespace kvaf
