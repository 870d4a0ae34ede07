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

#include "commands.hpp"

#include <cstdio>
#include <functional>
#include <map>
#include <ostream>
#include <sstream>

#include "kvaf/error.hpp"
#include "kvaf/event.hpp"
#include "kvaf/fusion.hpp"
#include "kvaf/kinematics.hpp"
#include "kvaf/recovery.hpp"
#include "kvaf/render.hpp"

namespace kvaf::cli {

namespace fs = std::filesystem;

namespace {

std::string frame_name(const char* prefix, size_t i, const char* ext) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%s_%05zu.%s", prefix, i, ext);
  return buf;
}

void require_file(const std::string& path, const char* what) {
  if (path.empty()) throw UsageError(std::string("missing input: paths.") + what + " is not set");
  if (!fs::is_regular_file(path)) throw UsageError(std::string("missing input: ") + what + " file " + path);
}

void require_dir(const std::string& path, const char* what) {
  if (path.empty()) throw UsageError(std::string("missing input: paths.") + what + " is not set");
  if (!fs::is_directory(path)) throw UsageError(std::string("missing input: ") + what + " directory " + path);
}

fs::path output_dir(const RunConfig& cfg) {
  if (cfg.paths.out.empty()) throw UsageError("no output directory: pass --out or set paths.out");
  fs::create_directories(cfg.paths.out);
  return cfg.paths.out;
}

KinematicChain load_chain(const RunConfig& cfg) {
  require_file(cfg.paths.urdf, "urdf");
  return parse_urdf(read_text(cfg.paths.urdf));
}

/// Frames frame_00000.ppm, frame_00001.ppm, ... up to the first gap.
KvafSequence load_frames(const std::string& dir) {
  require_dir(dir, "frames");
  KvafSequence frames;
  for (size_t i = 0;; ++i) {
    const fs::path p = fs::path(dir) / frame_name("frame", i, "ppm");
    if (!fs::exists(p)) break;
    frames.push_back(read_ppm(p));
  }
  if (frames.empty()) throw UsageError("missing input: no frame_00000.ppm in " + dir);
  return frames;
}

nlohmann::json header(const RunConfig& cfg, const char* command) {
  return {{"command", command}, {"config", cfg.to_json()}, {"config_hash", cfg.hash()}};
}

nlohmann::json frame_log_json(const FrameLog& log) {
  nlohmann::json arms = nlohmann::json::object();
  for (Arm a : kArms) {
    nlohmann::json pts = nlohmann::json::array();
    for (const auto& p : log.arms[static_cast<size_t>(a)]) {
      pts.push_back({{"label", p.label},
                     {"pixel", {p.pixel.x(), p.pixel.y()}},
                     {"depth", p.depth},
                     {"visible", p.visible}});
    }
    arms[arm_name(a)] = pts;
  }
  return arms;
}

nlohmann::json detection_json(const std::vector<Detection>& dets) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& d : dets) {
    nlohmann::json tips = nlohmann::json::array();
    for (const auto& t : d.axis_tips) tips.push_back(t ? nlohmann::json{t->x(), t->y()} : nlohmann::json(nullptr));
    out.push_back({{"center", {d.center.x(), d.center.y()}},
                   {"confidence", d.confidence},
                   {"axis_tips", tips},
                   {"gripper_separation",
                    d.gripper_separation ? nlohmann::json(*d.gripper_separation) : nlohmann::json(nullptr)}});
  }
  return out;
}

SynthOptions synth_options(const RunConfig& cfg, uint64_t seed) {
  require_file(cfg.paths.camera, "camera");
  SynthOptions o;
  o.frames = cfg.synth.frames;
  o.seed = seed;
  o.camera = CameraModel::from_json(read_json(cfg.paths.camera));
  o.max_joint_step = cfg.synth.max_joint_step;
  return o;
}

void check_canvas(const RunConfig& cfg, int width, int height) {
  if (width != cfg.render.width || height != cfg.render.height) {
    throw UsageError("camera is " + std::to_string(width) + "x" + std::to_string(height) +
                     " but render config is " + std::to_string(cfg.render.width) + "x" +
                     std::to_string(cfg.render.height));
  }
}

}  // namespace

RunConfig resolve_config(const Overrides& flags) {
  RunConfig cfg;
  try {
    if (flags.config) {
      if (!fs::is_regular_file(*flags.config)) throw UsageError("missing input: config " + flags.config->string());
      cfg = RunConfig::from_json(read_json(*flags.config), flags.config->parent_path());
    }
    if (flags.seed) cfg.seed = *flags.seed;
    if (flags.out) cfg.paths.out = flags.out->string();
    if (flags.stage) cfg.stage = *flags.stage;
    cfg.validate();
  } catch (const Error& e) {
    throw UsageError(std::string("invalid config: ") + e.what());
  }
  return cfg;
}

const std::vector<std::string>& command_names() {
  static const std::vector<std::string> names = {"synth",     "render",     "recover",
                                                 "roundtrip", "fuse-train", "event-target"};
  return names;
}

int run(const std::string& command, const Overrides& flags, std::ostream& log) {
  static const std::map<std::string, std::function<int(const RunConfig&, std::ostream&)>> table = {
      {"synth", cmd_synth},         {"render", cmd_render},         {"recover", cmd_recover},
      {"roundtrip", cmd_roundtrip}, {"fuse-train", cmd_fuse_train}, {"event-target", cmd_event_target}};
  const auto it = table.find(command);
  if (it == table.end()) {
    log << "error: unknown command '" << command << "'\n";
    return kUsage;
  }
  try {
    return it->second(resolve_config(flags), log);
  } catch (const UsageError& e) {
    log << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const std::exception& e) {
    log << "internal error: " << e.what() << "\n";
    return kInternal;
  }
}

int cmd_synth(const RunConfig& cfg, std::ostream& log) {
  const KinematicChain chain = load_chain(cfg);
  const fs::path out = output_dir(cfg);
  Episode ep = synth_trajectory(chain, synth_options(cfg, cfg.seed));
  ep.meta.chain = fs::path(cfg.paths.urdf).filename().string();
  ep.meta.source = "synth:" + std::to_string(cfg.seed);
  save_episode(ep, out);
  nlohmann::json manifest = header(cfg, "synth");
  manifest["frames"] = ep.size();
  write_json(out / "manifest.json", manifest);
  log << "synth: " << ep.size() << " states -> " << out.string() << "\n";
  return kOk;
}

int cmd_render(const RunConfig& cfg, std::ostream& log) {
  const KinematicChain chain = load_chain(cfg);
  require_dir(cfg.paths.episode, "episode");
  const Episode ep = load_episode(cfg.paths.episode);
  check_canvas(cfg, ep.width, ep.height);
  const fs::path out = output_dir(cfg);

  nlohmann::json frames = nlohmann::json::array();
  const DepthRange range =
      render_episode_each(ep, chain, cfg.render, {}, [&](size_t i, KvafFrame&& frame, FrameLog&& flog) {
        const std::string name = frame_name("frame", i, "ppm");
        write_ppm(frame, out / name);
        if (cfg.write_png) write_png(frame, out / frame_name("frame", i, "png"));
        frames.push_back({{"index", i}, {"t", ep.states[i].t}, {"file", name}, {"keypoints", frame_log_json(flog)}});
      });

  nlohmann::json manifest = header(cfg, "render");
  manifest["episode"] = {{"states", ep.size()}, {"chain", ep.meta.chain}, {"source", ep.meta.source}};
  manifest["depth_range"] = {{"z_min", range.z_min}, {"z_max", range.z_max}};
  manifest["frames"] = frames;
  write_json(out / "manifest.json", manifest);
  log << "render: " << ep.size() << " frames -> " << out.string() << "\n";
  return kOk;
}

int cmd_recover(const RunConfig& cfg, std::ostream& log) {
  const KvafSequence frames = load_frames(cfg.paths.frames);
  std::optional<Episode> truth;
  std::optional<CameraModel> cam;
  if (!cfg.paths.episode.empty()) {
    require_dir(cfg.paths.episode, "episode");
    truth = load_episode(cfg.paths.episode);
    if (truth->size() != frames.size()) {
      throw UsageError("episode has " + std::to_string(truth->size()) + " states but " +
                       std::to_string(frames.size()) + " frames were found");
    }
  } else {
    require_file(cfg.paths.camera, "camera");
    cam = CameraModel::from_json(read_json(cfg.paths.camera));
  }
  const fs::path out = output_dir(cfg);

  EpisodeRecovery rec(frames.size(), cfg.detect);
  for (size_t i = 0; i < frames.size(); ++i) {
    const CameraModel c = truth ? truth->camera(i) : *cam;
    check_canvas(cfg, frames[i].width(), frames[i].height());
    rec.add_frame(i, frames[i], c.K, c.E);
  }
  const ActionSequence actions = rec.actions();
  save_actions_csv(actions, out / "actions.csv");

  nlohmann::json report = header(cfg, "recover");
  report["frames"] = frames.size();
  report["detection_rate"] = rec.detection_rate();
  nlohmann::json per_frame = nlohmann::json::array();
  for (const auto& d : rec.detections()) per_frame.push_back(detection_json(d));
  report["detections"] = per_frame;
  if (truth) report["evaluation"] = evaluate_recovery(actions, ground_truth_actions(*truth), rec.detection_rate()).to_json();
  write_json(out / "report.json", report);
  log << "recover: " << frames.size() << " frames, detection rate " << rec.detection_rate() << "\n";
  return kOk;
}

int cmd_roundtrip(const RunConfig& cfg, std::ostream& log) {
  const KinematicChain chain = load_chain(cfg);
  const fs::path out = output_dir(cfg);

  nlohmann::json episodes = nlohmann::json::array();
  RecoveryReport mean;
  const int n = cfg.synth.episodes;
  for (int k = 0; k < n; ++k) {
    const uint64_t seed = cfg.seed + static_cast<uint64_t>(k);
    const Episode ep = synth_trajectory(chain, synth_options(cfg, seed));
    check_canvas(cfg, ep.width, ep.height);
    EpisodeRecovery rec(ep.size(), cfg.detect);
    render_episode_each(ep, chain, cfg.render, {}, [&](size_t i, KvafFrame&& frame, FrameLog&&) {
      // Recover from the 8-bit image a file round trip would produce.
      rec.add_frame(i, quantize(frame), ep.states[i].K, ep.states[i].E);
    });
    const RecoveryReport r = evaluate_recovery(rec.actions(), ground_truth_actions(ep), rec.detection_rate());
    nlohmann::json entry = r.to_json();
    entry["seed"] = seed;
    episodes.push_back(entry);
    mean.translation_error += r.translation_error / n;
    mean.rotation_error += r.rotation_error / n;
    mean.gripper_error += r.gripper_error / n;
    mean.detection_rate += r.detection_rate / n;
    mean.steps += r.steps;
    log << "roundtrip: seed " << seed << " translation " << r.translation_error << " rotation "
        << r.rotation_error << " gripper " << r.gripper_error << " detection " << r.detection_rate << "\n";
  }

  const RoundtripBounds& b = cfg.bounds;
  const nlohmann::json checks = {{"translation_error", mean.translation_error <= b.translation},
                                 {"rotation_error", mean.rotation_error <= b.rotation},
                                 {"gripper_error", mean.gripper_error <= b.gripper},
                                 {"detection_rate", mean.detection_rate >= b.detection_rate}};
  bool passed = true;
  for (const auto& [key, ok] : checks.items()) passed = passed && ok.get<bool>();

  nlohmann::json report = header(cfg, "roundtrip");
  report["episodes"] = episodes;
  report["mean"] = mean.to_json();
  report["bounds"] = b.to_json();
  report["checks"] = checks;
  report["passed"] = passed;
  write_json(out / "report.json", report);
  log << "roundtrip: mean translation " << mean.translation_error << " rotation " << mean.rotation_error
      << " gripper " << mean.gripper_error << " detection " << mean.detection_rate << " -> "
      << (passed ? "pass" : "FAIL") << "\n";
  return passed ? kOk : kAcceptance;
}

int cmd_fuse_train(const RunConfig& cfg, std::ostream& log) {
  const fs::path out = output_dir(cfg);
  ModelConfig model = cfg.model;
  ToyDataConfig toy = cfg.toy;
  model.seed = cfg.seed;
  toy.seed = cfg.seed;

  const std::vector<ToyEpisode> data = toy_dataset(toy);
  const Example probe = make_example(data[0].video, data[0].kvaf, 0.5, 0, cfg.train.block, cfg.train.patch);
  FusionParams params = init_params(model, static_cast<int>(probe.video.tokens.cols()),
                                    static_cast<int>(probe.kvaf.tokens.cols()));
  const TrainStage stage = cfg.stage == "frozen" ? TrainStage::fusion_frozen : TrainStage::full;
  const TrainingReport tr = train_toy(data, model, cfg.train, stage, params);

  std::ostringstream csv;
  csv << "step,total,video,kvaf,event\n";
  for (size_t i = 0; i < tr.losses.size(); ++i) {
    const auto& l = tr.losses[i];
    csv << i << ',' << format_double(l.total) << ',' << format_double(l.video) << ',' << format_double(l.kvaf)
        << ',' << format_double(l.event) << '\n';
  }
  write_text(out / "losses.csv", csv.str());

  nlohmann::json report = header(cfg, "fuse-train");
  report["parameters"] = params.parameter_count();
  report["training"] = tr.to_json();
  write_json(out / "report.json", report);
  if (tr.diverged) {
    log << "fuse-train: diverged: " << tr.diagnostic << "\n";
    return kInternal;
  }
  save_checkpoint(params, model, out / "checkpoint");
  log << "fuse-train: " << tr.losses.size() << " steps, final loss " << tr.losses.back().total << ", event IoU "
      << tr.event_iou << "\n";
  return kOk;
}

int cmd_event_target(const RunConfig& cfg, std::ostream& log) {
  const KvafSequence frames = load_frames(cfg.paths.frames);
  const Factors& blk = cfg.event_block;
  if (frames.size() % static_cast<size_t>(blk.t) != 0 || frames[0].height() % blk.h != 0 ||
      frames[0].width() % blk.w != 0) {
    throw UsageError("event_block does not divide the " + std::to_string(frames.size()) + "x" +
                     std::to_string(frames[0].height()) + "x" + std::to_string(frames[0].width()) + " video");
  }
  const fs::path out = output_dir(cfg);
  const KvafSequence diff = frame_difference(frames);
  for (size_t i = 0; i < diff.size(); ++i) write_ppm(diff[i], out / frame_name("event", i, "ppm"));
  // Unit blocks store the differences themselves at full precision.
  save_latent(encode_latent(diff, {1, 1, 1}), out / "difference.bin");
  const LatentGrid latent = encode_latent(diff, blk);
  save_latent(latent, out / "event_latent.bin");

  double peak = 0.0;
  for (const auto& f : diff) {
    for (double v : f.data()) peak = std::max(peak, v);
  }
  nlohmann::json manifest = header(cfg, "event-target");
  manifest["frames"] = diff.size();
  manifest["latent_shape"] = {latent.frames, latent.height, latent.width, latent.channels};
  manifest["max_difference"] = peak;
  write_json(out / "manifest.json", manifest);
  log << "event-target: " << diff.size() << " difference frames, peak " << peak << "\n";
  return kOk;
}

}  // namespace kvaf::cli
