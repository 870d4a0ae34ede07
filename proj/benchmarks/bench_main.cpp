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

#include <benchmark/benchmark.h>

#include <random>
#include <string>

#include "kvaf/camera.hpp"
#include "kvaf/episode.hpp"
#include "kvaf/fusion.hpp"
#include "kvaf/io.hpp"
#include "kvaf/kinematics.hpp"
#include "kvaf/recovery.hpp"
#include "kvaf/render.hpp"

using namespace kvaf;

namespace {

const KinematicChain& bimanual() {
  static const KinematicChain chain = parse_urdf(read_text(std::string(KVAF_DATA_DIR) + "/bimanual.urdf"));
  return chain;
}

const Episode& episode() {
  static const Episode ep = [] {
    SynthOptions o;
    o.frames = 16;
    o.camera = CameraModel::from_json(read_json(std::string(KVAF_DATA_DIR) + "/camera.json"));
    return synth_trajectory(bimanual(), o);
  }();
  return ep;
}

const DepthRange kRange{0.5, 2.0};

void BM_ForwardKinematics(benchmark::State& state) {
  const auto& chain = bimanual();
  const Eigen::VectorXd q = Eigen::VectorXd::Constant(static_cast<Eigen::Index>(chain.arm(Arm::left).dof()), 0.1);
  for (auto _ : state) benchmark::DoNotOptimize(forward_kinematics(chain, q, Arm::left));
}
BENCHMARK(BM_ForwardKinematics);

void BM_RenderFrame(benchmark::State& state) {
  const RobotState& s = episode().states[5];
  const auto kp = episode_keypoints(bimanual(), s);
  const RenderConfig cfg;
  for (auto _ : state) benchmark::DoNotOptimize(render_frame(s, kp, kRange, cfg));
}
BENCHMARK(BM_RenderFrame)->Unit(benchmark::kMillisecond);

void BM_DetectEndpoints(benchmark::State& state) {
  const RobotState& s = episode().states[5];
  const KvafFrame frame = quantize(render_frame(s, episode_keypoints(bimanual(), s), kRange, RenderConfig{}));
  const DetectConfig cfg;
  for (auto _ : state) benchmark::DoNotOptimize(detect_endpoints(frame, cfg));
}
BENCHMARK(BM_DetectEndpoints)->Unit(benchmark::kMillisecond);

void BM_SolvePnp(benchmark::State& state) {
  Mat3 K;
  K << 500, 0, 320, 0, 500, 240, 0, 0, 1;
  const Mat3 R = Eigen::AngleAxisd(0.4, Vec3(0.3, 1.0, -0.2).normalized()).toRotationMatrix();
  const Vec3 t(0.05, -0.02, 1.1);
  std::vector<Correspondence> corr;
  for (const Vec3& p : {Vec3(0, 0, 0), Vec3(0.1, 0, 0), Vec3(0, 0.1, 0), Vec3(0, 0, 0.1)}) {
    const Vec3 c = K * (R * p + t);
    corr.push_back({p, Vec2(c.x() / c.z(), c.y() / c.z())});
  }
  for (auto _ : state) benchmark::DoNotOptimize(solve_pnp(corr, K));
}
BENCHMARK(BM_SolvePnp)->Unit(benchmark::kMicrosecond);

// Default toy shapes: 8 frames of 32x32, block (2,4,4), patch (1,2,2).
struct FusionCase {
  ModelConfig cfg;
  Example ex;
  FusionParams params;
};

const FusionCase& fusion_case() {
  static const FusionCase c = [] {
    FusionCase f;
    f.cfg.lambda_evt = 1.0;
    const auto data = toy_dataset(ToyDataConfig{});
    const TrainConfig t;
    f.ex = make_example(data[0].video, data[0].kvaf, 0.5, 1, t.block, t.patch);
    f.params = init_params(f.cfg, static_cast<int>(f.ex.video.tokens.cols()), static_cast<int>(f.ex.kvaf.tokens.cols()));
    return f;
  }();
  return c;
}

void BM_FusionForward(benchmark::State& state) {
  const auto& c = fusion_case();
  for (auto _ : state) benchmark::DoNotOptimize(dual_stream_forward(c.ex.video, c.ex.kvaf, c.ex.t, c.params, c.cfg));
}
BENCHMARK(BM_FusionForward)->Unit(benchmark::kMicrosecond);

void BM_FusionForwardBackward(benchmark::State& state) {
  const auto& c = fusion_case();
  for (auto _ : state) benchmark::DoNotOptimize(loss_and_gradient(c.ex, c.params, c.cfg));
}
BENCHMARK(BM_FusionForwardBackward)->Unit(benchmark::kMicrosecond);

}  // namespace

BENCHMARK_MAIN();
