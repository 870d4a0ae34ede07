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

#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include "kvaf/event.hpp"

namespace kvaf {

using Matrix = Eigen::MatrixXd;

struct ModelConfig {
  int depth = 4;                        // layer count L
  std::vector<int> fusion_layers{2, 4};  // 1-based, strictly increasing
  int dim = 64;
  int heads = 4;
  int event_dim = 64;
  int mlp_hidden = 128;
  int time_features = 16;  // sinusoidal timestep features (even)
  double lambda_evt = 1.0;
  std::string omega = "constant";  // only the constant-1 weight is implemented
  uint64_t seed = 0;

  void validate() const;
  bool is_fusion_layer(int layer) const;
  double omega_weight(double t) const;
  nlohmann::json to_json() const;
  /// Missing keys keep defaults; unknown keys are rejected.
  static ModelConfig from_json(const nlohmann::json& j);
};

/// y = x W + b, rows are tokens. b is 1 x out.
struct Linear {
  Matrix w;
  Matrix b;
};

/// Multi-head scaled dot-product attention without biases.
struct Attention {
  Matrix wq, wk, wv, wo;
};

/// One transformer block: timestep embedding added to every token, then
/// x + MHA(x), then x + MLP(x) with a tanh-GELU hidden layer.
struct Block {
  Linear time;
  Attention attn;
  Linear mlp_in;
  Linear mlp_out;
};

/// Event-aware fusion weights of one layer.
struct FusionLayer {
  Linear event_in;   // [H_v, H_k] -> hidden
  Linear event_out;  // hidden -> event representation M
  Linear gate;       // M -> 1
  Linear event_head;  // M -> token dim of the video latent
  Attention video_from_kvaf;
  Attention kvaf_from_video;
};

struct FusionParams {
  Linear video_in, kvaf_in;
  std::vector<Block> video_blocks, kvaf_blocks;
  std::vector<FusionLayer> fusion;  // one per entry of fusion_layers, same order
  Linear video_head, kvaf_head;

  /// Calls fn(name, matrix) for every tensor in a fixed order.
  void visit(const std::function<void(const std::string&, Matrix&)>& fn);
  void visit(const std::function<void(const std::string&, const Matrix&)>& fn) const;
  /// Same visit order, restricted to the fusion tensors.
  void visit_fusion(const std::function<void(const std::string&, Matrix&)>& fn);

  std::vector<Matrix*> tensors();
  std::vector<const Matrix*> tensors() const;
  size_t parameter_count() const;

  /// All-zero parameters of the same shapes.
  FusionParams zeros_like() const;
  void add_scaled(const FusionParams& other, double scale);
  bool all_finite() const;

  friend bool operator==(const FusionParams&, const FusionParams&);
};

/// Deterministic initialization from cfg.seed. Weights are Gaussian with
/// std 1/sqrt(fan_in); residual output projections are scaled by 0.5; biases
/// and the three output heads start at zero.
FusionParams init_params(const ModelConfig& cfg, int video_token_dim, int kvaf_token_dim);

/// Pure-function helpers, exposed for tests.
double gelu(double x);
double gelu_grad(double x);
double sigmoid(double x);
/// Fixed 3D sinusoidal encoding over the (t, h, w) token grid: dimension d
/// encodes axis d % 3.
Matrix positional_encoding(const std::array<int, 3>& grid, int dim);
/// [sin(1000 t f_i), cos(1000 t f_i)], f_i = 10000^(-i / (n/2)).
Eigen::RowVectorXd timestep_features(double t, int count);

struct AttentionTrace {
  Matrix q, k, v;
  std::vector<Matrix> weights;  // per head, rows sum to 1
  Matrix mixed;                  // concatenated head outputs before wo
};

/// Queries come from `xq`, keys and values from `xkv`.
Matrix attention(const Matrix& xq, const Matrix& xkv, const Attention& p, int heads,
                 AttentionTrace* trace = nullptr);

struct FusionLayerOutput {
  Matrix video;        // H_v + G * CA(H_v, H_k)
  Matrix kvaf;         // H_k + G * CA(H_k, H_v)
  Matrix event;        // event prediction, token space
  Eigen::VectorXd gate;  // per token, in (0, 1)
};

/// M = Phi([H_v, H_k]); G = sigmoid(Gamma(M)); E_hat = Psi(M);
/// gated residual cross-attention in both directions.
/// Throws ShapeError when token counts differ.
FusionLayerOutput event_fusion_layer(const Matrix& video, const Matrix& kvaf, const FusionLayer& p, int heads);

struct NoisedPair {
  LatentGrid z_t;
  LatentGrid target;
  LatentGrid noise;
  double t = 0.0;
};

/// z_t = (1 - t) z0 + t noise, target = noise - z0.
/// Throws ShapeError on shape mismatch, ArgumentError when t is outside [0, 1].
NoisedPair noise_sample(const LatentGrid& z0, double t, const LatentGrid& noise);

struct ForwardOutput {
  Matrix video;  // predicted flow, video tokens
  Matrix kvaf;   // predicted flow, KVAF tokens
  std::vector<Matrix> event_preds;   // one per fusion layer
  std::vector<Eigen::VectorXd> gates;
};

/// For l = 1..L: the KVAF block updates H_k; at fusion layers the event
/// fusion runs on (H_v before the video block, H_k after the KVAF block);
/// then the video block updates H_v. Linear heads map the final tokens to
/// flow predictions. Both streams must share the token grid.
ForwardOutput dual_stream_forward(const TokenGrid& video, const TokenGrid& kvaf, double t,
                                  const FusionParams& params, const ModelConfig& cfg);

struct LossTerms {
  double total = 0.0;
  double video = 0.0;  // mean over tokens outside the first latent frame
  double kvaf = 0.0;
  double event = 0.0;  // mean over fusion layers of per-layer means; 0 if none
  double omega = 1.0;
};

/// Token-space targets for one training example.
struct LossTargets {
  Matrix video;
  Matrix kvaf;
  Matrix event;  // patchified event target
  /// Tokens whose latent frame contains the first video frame are left out
  /// of the video term.
  std::vector<bool> video_mask;
};

/// omega(t) (video + kvaf) + lambda_evt * event, with mean reductions.
LossTerms total_loss(const ForwardOutput& out, const LossTargets& targets, double t, const ModelConfig& cfg);

/// Mask that is false for tokens in the first grid time slice.
std::vector<bool> first_frame_mask(const TokenGrid& layout);

struct Example {
  TokenGrid video;  // noised video tokens
  TokenGrid kvaf;   // noised KVAF tokens
  LossTargets targets;
  double t = 0.0;
};

/// Loss and gradient of every parameter tensor for one example.
struct Gradient {
  LossTerms loss;
  FusionParams grad;
};
Gradient loss_and_gradient(const Example& example, const FusionParams& params, const ModelConfig& cfg);

/// Loss only (for finite-difference checks).
LossTerms evaluate_loss(const Example& example, const FusionParams& params, const ModelConfig& cfg);

/// Builds an example from clean video and KVAF frame sequences: encodes
/// both, adds noise at time t, and fills the event target from the video's
/// frame differences.
Example make_example(const KvafSequence& video, const KvafSequence& kvaf, double t, uint64_t noise_seed,
                     Factors block, Factors patch);

/// Standard normal draw from a 64-bit engine (Box-Muller on unit_uniform).
class GaussianSource {
 public:
  explicit GaussianSource(uint64_t seed);
  double next();

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

// ---- toy training ----

enum class TrainStage { fusion_frozen, full };

struct ToyDataConfig {
  int episodes = 8;
  int frames = 8;
  int size = 32;
  int square = 8;
  double blob_sigma = 3.0;
  uint64_t seed = 0;

  nlohmann::json to_json() const;
  static ToyDataConfig from_json(const nlohmann::json& j);
};

struct ToyEpisode {
  KvafSequence video;
  KvafSequence kvaf;
};

/// Moving colored squares on black; the KVAF stream is a Gaussian blob in
/// the heatmap channels at the square center.
std::vector<ToyEpisode> toy_dataset(const ToyDataConfig& data);

struct TrainConfig {
  int steps = 200;
  int batch = 4;
  double learning_rate = 2.0;
  Factors block{2, 4, 4};
  Factors patch{1, 2, 2};
  unsigned threads = 0;
  /// Evaluation timestep and noise seed for the event map.
  double eval_t = 0.25;
  uint64_t eval_seed = 12345;
  double divergence_limit = 1e6;

  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
};

struct TrainingReport {
  std::vector<LossTerms> losses;  // per step, batch mean
  bool diverged = false;
  std::string diagnostic;
  double gate_mean = 0.0;
  double gate_min = 0.0;
  double gate_max = 0.0;
  /// Mean |unpatchify(E_hat)| over channels, last fusion layer, averaged over
  /// the dataset at eval_t: latent frames x (height * width).
  Matrix event_map;
  /// Fraction of cells with nonzero event target, same layout.
  Matrix motion_mask;
  double event_iou = 0.0;
  double trivial_iou = 0.0;  // IoU of predicting motion everywhere

  nlohmann::json to_json() const;
};

/// Plain gradient descent. Batch items are evaluated concurrently and their
/// gradients summed in item order, so results do not depend on the worker
/// count. In the fusion-frozen stage fusion tensors receive no updates.
TrainingReport train_toy(const std::vector<ToyEpisode>& dataset, const ModelConfig& cfg, const TrainConfig& train,
                         TrainStage stage, FusionParams& params);

/// Cells above the midpoint of the map's range vs cells with motion. The
/// midpoint ignores any uniform offset shared by every cell.
double event_iou(const Matrix& event_map, const Matrix& motion_mask);

/// Smoothed loss curve: trailing mean over `window` steps.
std::vector<double> smoothed(const std::vector<double>& values, int window);

/// Checkpoint: <stem>.bin holds every tensor as float64 little-endian in visit
/// order; <stem>.json lists names, shapes, seed and the config hash.
void save_checkpoint(const FusionParams& params, const ModelConfig& cfg, const std::filesystem::path& stem);
FusionParams load_checkpoint(const std::filesystem::path& stem, const ModelConfig& cfg);

}  // namespace kvaf
