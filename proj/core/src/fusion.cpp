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

#include "kvaf/fusion.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <numbers>

#include "kvaf/error.hpp"
#include "kvaf/episode.hpp"
#include "kvaf/hash.hpp"
#include "kvaf/parallel.hpp"

namespace kvaf {

// ---- config ----

void ModelConfig::validate() const {
  if (depth < 1) throw ValidationError("depth must be at least 1");
  for (size_t i = 0; i < fusion_layers.size(); ++i) {
    const int l = fusion_layers[i];
    if (l < 1 || l > depth) {
      throw ValidationError("fusion layer " + std::to_string(l) + " is outside 1.." + std::to_string(depth));
    }
    if (i > 0 && l <= fusion_layers[i - 1]) throw ValidationError("fusion layers must be strictly increasing");
  }
  if (dim < 1 || heads < 1 || dim % heads != 0) {
    throw ValidationError("dim " + std::to_string(dim) + " must be a positive multiple of heads " +
                          std::to_string(heads));
  }
  if (event_dim < 1 || mlp_hidden < 1) throw ValidationError("hidden sizes must be positive");
  if (time_features < 2 || time_features % 2) throw ValidationError("time_features must be even and positive");
  if (!(lambda_evt >= 0.0) || !std::isfinite(lambda_evt)) throw ValidationError("lambda_evt must be finite and >= 0");
  if (omega != "constant") throw ValidationError("unknown omega '" + omega + "'");
}

bool ModelConfig::is_fusion_layer(int layer) const {
  return std::find(fusion_layers.begin(), fusion_layers.end(), layer) != fusion_layers.end();
}

double ModelConfig::omega_weight(double) const { return 1.0; }

nlohmann::json ModelConfig::to_json() const {
  return {{"depth", depth},           {"fusion_layers", fusion_layers}, {"dim", dim},
          {"heads", heads},           {"event_dim", event_dim},         {"mlp_hidden", mlp_hidden},
          {"time_features", time_features}, {"lambda_evt", lambda_evt}, {"omega", omega},
          {"seed", seed}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  ModelConfig cfg;
  try {
    for (const auto& [key, v] : j.items()) {
      if (key == "depth") cfg.depth = v.get<int>();
      else if (key == "fusion_layers") cfg.fusion_layers = v.get<std::vector<int>>();
      else if (key == "dim") cfg.dim = v.get<int>();
      else if (key == "heads") cfg.heads = v.get<int>();
      else if (key == "event_dim") cfg.event_dim = v.get<int>();
      else if (key == "mlp_hidden") cfg.mlp_hidden = v.get<int>();
      else if (key == "time_features") cfg.time_features = v.get<int>();
      else if (key == "lambda_evt") cfg.lambda_evt = v.get<double>();
      else if (key == "omega") cfg.omega = v.get<std::string>();
      else if (key == "seed") cfg.seed = v.get<uint64_t>();
      else throw LoadError("unknown model key '" + key + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw LoadError(std::string("model config: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

// ---- parameters ----

namespace {

template <class P, class F>
void visit_linear(P& p, const std::string& name, F& fn) {
  fn(name + ".w", p.w);
  fn(name + ".b", p.b);
}

template <class P, class F>
void visit_attention(P& p, const std::string& name, F& fn) {
  fn(name + ".wq", p.wq);
  fn(name + ".wk", p.wk);
  fn(name + ".wv", p.wv);
  fn(name + ".wo", p.wo);
}

template <class P, class F>
void visit_block(P& p, const std::string& name, F& fn) {
  visit_linear(p.time, name + ".time", fn);
  visit_attention(p.attn, name + ".attn", fn);
  visit_linear(p.mlp_in, name + ".mlp_in", fn);
  visit_linear(p.mlp_out, name + ".mlp_out", fn);
}

template <class P, class F>
void visit_fusion_layer(P& p, const std::string& name, F& fn) {
  visit_linear(p.event_in, name + ".event_in", fn);
  visit_linear(p.event_out, name + ".event_out", fn);
  visit_linear(p.gate, name + ".gate", fn);
  visit_linear(p.event_head, name + ".event_head", fn);
  visit_attention(p.video_from_kvaf, name + ".video_from_kvaf", fn);
  visit_attention(p.kvaf_from_video, name + ".kvaf_from_video", fn);
}

template <class P, class F>
void visit_all(P& p, F& fn, bool fusion_only) {
  if (!fusion_only) {
    visit_linear(p.video_in, "video_in", fn);
    visit_linear(p.kvaf_in, "kvaf_in", fn);
    for (size_t i = 0; i < p.video_blocks.size(); ++i) visit_block(p.video_blocks[i], "video_blocks." + std::to_string(i), fn);
    for (size_t i = 0; i < p.kvaf_blocks.size(); ++i) visit_block(p.kvaf_blocks[i], "kvaf_blocks." + std::to_string(i), fn);
  }
  for (size_t i = 0; i < p.fusion.size(); ++i) visit_fusion_layer(p.fusion[i], "fusion." + std::to_string(i), fn);
  if (!fusion_only) {
    visit_linear(p.video_head, "video_head", fn);
    visit_linear(p.kvaf_head, "kvaf_head", fn);
  }
}

}  // namespace

void FusionParams::visit(const std::function<void(const std::string&, Matrix&)>& fn) { visit_all(*this, fn, false); }

void FusionParams::visit(const std::function<void(const std::string&, const Matrix&)>& fn) const {
  visit_all(*this, fn, false);
}

void FusionParams::visit_fusion(const std::function<void(const std::string&, Matrix&)>& fn) {
  visit_all(*this, fn, true);
}

std::vector<Matrix*> FusionParams::tensors() {
  std::vector<Matrix*> out;
  visit([&](const std::string&, Matrix& m) { out.push_back(&m); });
  return out;
}

std::vector<const Matrix*> FusionParams::tensors() const {
  std::vector<const Matrix*> out;
  visit([&](const std::string&, const Matrix& m) { out.push_back(&m); });
  return out;
}

size_t FusionParams::parameter_count() const {
  size_t n = 0;
  for (const Matrix* m : tensors()) n += static_cast<size_t>(m->size());
  return n;
}

FusionParams FusionParams::zeros_like() const {
  FusionParams out = *this;
  for (Matrix* m : out.tensors()) m->setZero();
  return out;
}

void FusionParams::add_scaled(const FusionParams& other, double scale) {
  auto mine = tensors();
  auto theirs = other.tensors();
  if (mine.size() != theirs.size()) throw ShapeError("parameter sets differ in layout");
  for (size_t i = 0; i < mine.size(); ++i) *mine[i] += scale * *theirs[i];
}

bool FusionParams::all_finite() const {
  for (const Matrix* m : tensors()) {
    if (!m->allFinite()) return false;
  }
  return true;
}

bool operator==(const FusionParams& a, const FusionParams& b) {
  auto x = a.tensors();
  auto y = b.tensors();
  if (x.size() != y.size()) return false;
  for (size_t i = 0; i < x.size(); ++i) {
    if (x[i]->rows() != y[i]->rows() || x[i]->cols() != y[i]->cols() || *x[i] != *y[i]) return false;
  }
  return true;
}

GaussianSource::GaussianSource(uint64_t seed) : engine_(seed) {}

double GaussianSource::next() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  const double u1 = 1.0 - unit_uniform(engine_());  // (0, 1]
  const double u2 = unit_uniform(engine_());
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double a = 2.0 * std::numbers::pi * u2;
  spare_ = r * std::sin(a);
  has_spare_ = true;
  return r * std::cos(a);
}

namespace {

Matrix gaussian(GaussianSource& g, int rows, int cols, double std) {
  Matrix m(rows, cols);
  for (int i = 0; i < rows; ++i) {
    for (int j = 0; j < cols; ++j) m(i, j) = std * g.next();
  }
  return m;
}

Linear make_linear(GaussianSource& g, int in, int out, double gain = 1.0) {
  return {gaussian(g, in, out, gain / std::sqrt(static_cast<double>(in))), Matrix::Zero(1, out)};
}

Attention make_attention(GaussianSource& g, int dim) {
  const double s = 1.0 / std::sqrt(static_cast<double>(dim));
  return {gaussian(g, dim, dim, s), gaussian(g, dim, dim, s), gaussian(g, dim, dim, s), gaussian(g, dim, dim, 0.5 * s)};
}

Block make_block(GaussianSource& g, const ModelConfig& cfg) {
  Block b;
  b.time = make_linear(g, cfg.time_features, cfg.dim, 0.5);
  b.attn = make_attention(g, cfg.dim);
  b.mlp_in = make_linear(g, cfg.dim, cfg.mlp_hidden);
  b.mlp_out = make_linear(g, cfg.mlp_hidden, cfg.dim, 0.5);
  return b;
}

}  // namespace

FusionParams init_params(const ModelConfig& cfg, int video_token_dim, int kvaf_token_dim) {
  cfg.validate();
  if (video_token_dim < 1 || kvaf_token_dim < 1) throw ArgumentError("token dims must be positive");
  GaussianSource g(cfg.seed);
  FusionParams p;
  p.video_in = make_linear(g, video_token_dim, cfg.dim);
  p.kvaf_in = make_linear(g, kvaf_token_dim, cfg.dim);
  for (int l = 0; l < cfg.depth; ++l) p.video_blocks.push_back(make_block(g, cfg));
  for (int l = 0; l < cfg.depth; ++l) p.kvaf_blocks.push_back(make_block(g, cfg));
  for (size_t i = 0; i < cfg.fusion_layers.size(); ++i) {
    FusionLayer f;
    f.event_in = make_linear(g, 2 * cfg.dim, cfg.event_dim);
    f.event_out = make_linear(g, cfg.event_dim, cfg.event_dim);
    f.gate = make_linear(g, cfg.event_dim, 1);
    f.event_head = make_linear(g, cfg.event_dim, video_token_dim);
    f.video_from_kvaf = make_attention(g, cfg.dim);
    f.kvaf_from_video = make_attention(g, cfg.dim);
    p.fusion.push_back(std::move(f));
  }
  p.video_head = make_linear(g, cfg.dim, video_token_dim);
  p.kvaf_head = make_linear(g, cfg.dim, kvaf_token_dim);
  // Output heads start at zero; random heads swamp the small event target
  // with noise that plain gradient descent cannot remove in a short run.
  p.video_head.w.setZero();
  p.kvaf_head.w.setZero();
  for (auto& f : p.fusion) f.event_head.w.setZero();
  return p;
}

// ---- elementwise helpers ----

double gelu(double x) {
  constexpr double c = 0.7978845608028654;  // sqrt(2 / pi)
  return 0.5 * x * (1.0 + std::tanh(c * (x + 0.044715 * x * x * x)));
}

double gelu_grad(double x) {
  constexpr double c = 0.7978845608028654;
  const double th = std::tanh(c * (x + 0.044715 * x * x * x));
  return 0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * c * (1.0 + 3.0 * 0.044715 * x * x);
}

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

Matrix positional_encoding(const std::array<int, 3>& grid, int dim) {
  const int n = grid[0] * grid[1] * grid[2];
  const int per_axis = (dim + 2) / 3;
  Matrix pe(n, dim);
  int row = 0;
  for (int t = 0; t < grid[0]; ++t) {
    for (int h = 0; h < grid[1]; ++h) {
      for (int w = 0; w < grid[2]; ++w, ++row) {
        const int pos[3] = {t, h, w};
        for (int d = 0; d < dim; ++d) {
          const int axis = d % 3;
          const int k = d / 3;
          const double freq = std::pow(10000.0, -2.0 * (k / 2) / per_axis);
          const double arg = pos[axis] * freq;
          pe(row, d) = (k % 2 == 0) ? std::sin(arg) : std::cos(arg);
        }
      }
    }
  }
  return pe;
}

Eigen::RowVectorXd timestep_features(double t, int count) {
  const int half = count / 2;
  Eigen::RowVectorXd f(count);
  for (int i = 0; i < half; ++i) {
    const double freq = std::pow(10000.0, -static_cast<double>(i) / half);
    f[i] = std::sin(1000.0 * t * freq);
    f[half + i] = std::cos(1000.0 * t * freq);
  }
  return f;
}

namespace {

Matrix linear(const Linear& p, const Matrix& x) {
  Matrix y = x * p.w;
  y.rowwise() += p.b.row(0);
  return y;
}

// Accumulates parameter gradients; returns dx when wanted.
void linear_backward(const Linear& p, const Matrix& x, const Matrix& dy, Linear& g, Matrix* dx) {
  g.w.noalias() += x.transpose() * dy;
  g.b += dy.colwise().sum();
  if (dx) *dx = dy * p.w.transpose();
}

Matrix gelu_of(const Matrix& x) { return x.unaryExpr([](double v) { return gelu(v); }); }
Matrix gelu_grad_of(const Matrix& x) { return x.unaryExpr([](double v) { return gelu_grad(v); }); }

void attention_backward(const Attention& p, const Matrix& xq, const Matrix& xkv, const AttentionTrace& tr,
                        const Matrix& dout, int heads, Attention& g, Matrix& dxq, Matrix& dxkv) {
  const int dim = static_cast<int>(p.wq.cols());
  const int hd = dim / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
  g.wo.noalias() += tr.mixed.transpose() * dout;
  const Matrix dmixed = dout * p.wo.transpose();
  Matrix dq(tr.q.rows(), dim), dk(tr.k.rows(), dim), dv(tr.v.rows(), dim);
  for (int h = 0; h < heads; ++h) {
    const auto cols = Eigen::seqN(h * hd, hd);
    const Matrix& a = tr.weights[static_cast<size_t>(h)];
    const Matrix dmh = dmixed(Eigen::all, cols);
    dv(Eigen::all, cols) = a.transpose() * dmh;
    const Matrix da = dmh * tr.v(Eigen::all, cols).transpose();
    const Eigen::VectorXd row_dot = (da.array() * a.array()).rowwise().sum();
    const Matrix ds = (a.array() * (da.colwise() - row_dot).array()).matrix() * scale;
    dq(Eigen::all, cols) = ds * tr.k(Eigen::all, cols);
    dk(Eigen::all, cols) = ds.transpose() * tr.q(Eigen::all, cols);
  }
  g.wq.noalias() += xq.transpose() * dq;
  g.wk.noalias() += xkv.transpose() * dk;
  g.wv.noalias() += xkv.transpose() * dv;
  dxq = dq * p.wq.transpose();
  dxkv = dk * p.wk.transpose() + dv * p.wv.transpose();
}

struct BlockTape {
  Matrix x1, x2, h_pre, h_act;
  AttentionTrace attn;
};

Matrix block_forward(const Block& p, const Matrix& x, const Eigen::RowVectorXd& feat, int heads, BlockTape* tape) {
  const Eigen::RowVectorXd e = feat * p.time.w + p.time.b.row(0);
  Matrix x1 = x;
  x1.rowwise() += e;
  AttentionTrace tr;
  Matrix x2 = x1 + attention(x1, x1, p.attn, heads, tape ? &tr : nullptr);
  Matrix h_pre = linear(p.mlp_in, x2);
  Matrix h_act = gelu_of(h_pre);
  Matrix y = x2 + linear(p.mlp_out, h_act);
  if (tape) {
    tape->x1 = std::move(x1);
    tape->x2 = std::move(x2);
    tape->h_pre = std::move(h_pre);
    tape->h_act = std::move(h_act);
    tape->attn = std::move(tr);
  }
  return y;
}

Matrix block_backward(const Block& p, const Eigen::RowVectorXd& feat, const BlockTape& tape, const Matrix& dy,
                      int heads, Block& g) {
  Matrix dh_act;
  linear_backward(p.mlp_out, tape.h_act, dy, g.mlp_out, &dh_act);
  const Matrix dh_pre = (dh_act.array() * gelu_grad_of(tape.h_pre).array()).matrix();
  Matrix dx2;
  linear_backward(p.mlp_in, tape.x2, dh_pre, g.mlp_in, &dx2);
  dx2 += dy;
  Matrix dq, dkv;
  attention_backward(p.attn, tape.x1, tape.x1, tape.attn, dx2, heads, g.attn, dq, dkv);
  Matrix dx1 = dx2 + dq + dkv;
  const Eigen::RowVectorXd de = dx1.colwise().sum();
  g.time.w.noalias() += feat.transpose() * de;
  g.time.b += de;
  return dx1;
}

struct FusionTape {
  Matrix video, kvaf, concat, phi_pre, phi_act, m, rv, rk;
  Eigen::VectorXd gate;
  AttentionTrace vk, kv;
};

FusionLayerOutput fusion_forward(const Matrix& hv, const Matrix& hk, const FusionLayer& p, int heads,
                                 FusionTape* tape) {
  if (hv.rows() != hk.rows()) {
    throw ShapeError("video stream has " + std::to_string(hv.rows()) + " tokens, KVAF stream has " +
                     std::to_string(hk.rows()));
  }
  if (hv.cols() != hk.cols()) throw ShapeError("stream widths differ");
  Matrix concat(hv.rows(), hv.cols() + hk.cols());
  concat << hv, hk;
  Matrix phi_pre = linear(p.event_in, concat);
  Matrix phi_act = gelu_of(phi_pre);
  Matrix m = linear(p.event_out, phi_act);
  const Matrix gate_pre = linear(p.gate, m);
  FusionLayerOutput out;
  out.gate = gate_pre.col(0).unaryExpr([](double v) { return sigmoid(v); });
  out.event = linear(p.event_head, m);
  AttentionTrace vk, kv;
  const Matrix rv = attention(hv, hk, p.video_from_kvaf, heads, tape ? &vk : nullptr);
  const Matrix rk = attention(hk, hv, p.kvaf_from_video, heads, tape ? &kv : nullptr);
  out.video = hv + out.gate.asDiagonal() * rv;
  out.kvaf = hk + out.gate.asDiagonal() * rk;
  if (tape) {
    tape->video = hv;
    tape->kvaf = hk;
    tape->concat = std::move(concat);
    tape->phi_pre = std::move(phi_pre);
    tape->phi_act = std::move(phi_act);
    tape->m = std::move(m);
    tape->rv = rv;
    tape->rk = rk;
    tape->gate = out.gate;
    tape->vk = std::move(vk);
    tape->kv = std::move(kv);
  }
  return out;
}

void fusion_backward(const FusionLayer& p, const FusionTape& tape, const Matrix& d_video, const Matrix& d_kvaf,
                     const Matrix& d_event, int heads, FusionLayer& g, Matrix& dhv, Matrix& dhk) {
  const Eigen::VectorXd& gate = tape.gate;
  dhv = d_video;
  dhk = d_kvaf;
  const Eigen::VectorXd dgate = (d_video.array() * tape.rv.array()).rowwise().sum().matrix() +
                                (d_kvaf.array() * tape.rk.array()).rowwise().sum().matrix();
  const Matrix drv = gate.asDiagonal() * d_video;
  const Matrix drk = gate.asDiagonal() * d_kvaf;
  Matrix dq, dkv;
  attention_backward(p.video_from_kvaf, tape.video, tape.kvaf, tape.vk, drv, heads, g.video_from_kvaf, dq, dkv);
  dhv += dq;
  dhk += dkv;
  attention_backward(p.kvaf_from_video, tape.kvaf, tape.video, tape.kv, drk, heads, g.kvaf_from_video, dq, dkv);
  dhk += dq;
  dhv += dkv;

  const Matrix dgate_pre = (dgate.array() * gate.array() * (1.0 - gate.array())).matrix();
  Matrix dm;
  linear_backward(p.gate, tape.m, dgate_pre, g.gate, &dm);
  Matrix dm_event;
  linear_backward(p.event_head, tape.m, d_event, g.event_head, &dm_event);
  dm += dm_event;
  Matrix dphi_act;
  linear_backward(p.event_out, tape.phi_act, dm, g.event_out, &dphi_act);
  const Matrix dphi_pre = (dphi_act.array() * gelu_grad_of(tape.phi_pre).array()).matrix();
  Matrix dconcat;
  linear_backward(p.event_in, tape.concat, dphi_pre, g.event_in, &dconcat);
  const auto dim = tape.video.cols();
  dhv += dconcat.leftCols(dim);
  dhk += dconcat.rightCols(tape.kvaf.cols());
}

struct ForwardTape {
  Matrix video_in, kvaf_in;  // input tokens
  Eigen::RowVectorXd feat;
  std::vector<BlockTape> video_blocks, kvaf_blocks;
  std::vector<FusionTape> fusion;
  Matrix video_final, kvaf_final;
};

void check_streams(const TokenGrid& video, const TokenGrid& kvaf, const FusionParams& params, const ModelConfig& cfg) {
  if (video.grid_shape != kvaf.grid_shape) throw ShapeError("video and KVAF token grids differ");
  if (video.tokens.rows() != video.count() || kvaf.tokens.rows() != kvaf.count()) {
    throw ShapeError("token count does not match the grid shape");
  }
  if (video.tokens.cols() != params.video_in.w.rows() || kvaf.tokens.cols() != params.kvaf_in.w.rows()) {
    throw ShapeError("token width does not match the parameters");
  }
  if (static_cast<int>(params.video_blocks.size()) != cfg.depth ||
      static_cast<int>(params.kvaf_blocks.size()) != cfg.depth ||
      params.fusion.size() != cfg.fusion_layers.size() || params.video_in.w.cols() != cfg.dim) {
    throw ShapeError("parameters do not match the model config");
  }
}

ForwardOutput forward_impl(const TokenGrid& video, const TokenGrid& kvaf, double t, const FusionParams& params,
                           const ModelConfig& cfg, ForwardTape* tape) {
  check_streams(video, kvaf, params, cfg);
  const Matrix pe = positional_encoding(video.grid_shape, cfg.dim);
  Matrix hv = linear(params.video_in, video.tokens) + pe;
  Matrix hk = linear(params.kvaf_in, kvaf.tokens) + pe;
  const Eigen::RowVectorXd feat = timestep_features(t, cfg.time_features);
  if (tape) {
    tape->video_in = video.tokens;
    tape->kvaf_in = kvaf.tokens;
    tape->feat = feat;
    tape->video_blocks.resize(static_cast<size_t>(cfg.depth));
    tape->kvaf_blocks.resize(static_cast<size_t>(cfg.depth));
    tape->fusion.resize(cfg.fusion_layers.size());
  }
  ForwardOutput out;
  size_t f = 0;
  for (int l = 1; l <= cfg.depth; ++l) {
    const size_t li = static_cast<size_t>(l - 1);
    hk = block_forward(params.kvaf_blocks[li], hk, feat, cfg.heads, tape ? &tape->kvaf_blocks[li] : nullptr);
    if (f < cfg.fusion_layers.size() && cfg.fusion_layers[f] == l) {
      FusionLayerOutput fo = fusion_forward(hv, hk, params.fusion[f], cfg.heads, tape ? &tape->fusion[f] : nullptr);
      hv = std::move(fo.video);
      hk = std::move(fo.kvaf);
      out.event_preds.push_back(std::move(fo.event));
      out.gates.push_back(std::move(fo.gate));
      ++f;
    }
    hv = block_forward(params.video_blocks[li], hv, feat, cfg.heads, tape ? &tape->video_blocks[li] : nullptr);
  }
  out.video = linear(params.video_head, hv);
  out.kvaf = linear(params.kvaf_head, hk);
  if (tape) {
    tape->video_final = std::move(hv);
    tape->kvaf_final = std::move(hk);
  }
  return out;
}

struct LossGrad {
  LossTerms terms;
  Matrix d_video, d_kvaf;
  std::vector<Matrix> d_events;
};

LossGrad loss_impl(const ForwardOutput& out, const LossTargets& targets, double t, const ModelConfig& cfg,
                   bool want_grad) {
  if (out.video.rows() != targets.video.rows() || out.video.cols() != targets.video.cols() ||
      out.kvaf.rows() != targets.kvaf.rows() || out.kvaf.cols() != targets.kvaf.cols()) {
    throw ShapeError("prediction and target shapes differ");
  }
  if (static_cast<Eigen::Index>(targets.video_mask.size()) != out.video.rows()) {
    throw ShapeError("video mask length does not match the token count");
  }
  LossGrad r;
  LossTerms& lt = r.terms;
  lt.omega = cfg.omega_weight(t);

  const Matrix rv = out.video - targets.video;
  Eigen::Index kept = 0;
  double sv = 0.0;
  for (Eigen::Index i = 0; i < rv.rows(); ++i) {
    if (!targets.video_mask[static_cast<size_t>(i)]) continue;
    ++kept;
    sv += rv.row(i).squaredNorm();
  }
  const double nv = static_cast<double>(kept * rv.cols());
  lt.video = nv > 0 ? sv / nv : 0.0;

  const Matrix rk = out.kvaf - targets.kvaf;
  const double nk = static_cast<double>(rk.size());
  lt.kvaf = nk > 0 ? rk.squaredNorm() / nk : 0.0;

  const size_t layers = out.event_preds.size();
  std::vector<Matrix> re(layers);
  for (size_t i = 0; i < layers; ++i) {
    const Matrix& e = out.event_preds[i];
    if (e.rows() != targets.event.rows() || e.cols() != targets.event.cols()) {
      throw ShapeError("event prediction and target shapes differ");
    }
    re[i] = e - targets.event;
    lt.event += re[i].squaredNorm() / static_cast<double>(re[i].size());
  }
  if (layers > 0) lt.event /= static_cast<double>(layers);
  lt.total = lt.omega * (lt.video + lt.kvaf) + cfg.lambda_evt * lt.event;

  if (want_grad) {
    r.d_video = Matrix::Zero(rv.rows(), rv.cols());
    if (nv > 0) {
      for (Eigen::Index i = 0; i < rv.rows(); ++i) {
        if (targets.video_mask[static_cast<size_t>(i)]) r.d_video.row(i) = (2.0 * lt.omega / nv) * rv.row(i);
      }
    }
    r.d_kvaf = nk > 0 ? Matrix((2.0 * lt.omega / nk) * rk) : Matrix::Zero(rk.rows(), rk.cols());
    for (size_t i = 0; i < layers; ++i) {
      r.d_events.push_back((2.0 * cfg.lambda_evt / (static_cast<double>(layers) * re[i].size())) * re[i]);
    }
  }
  return r;
}

}  // namespace

Matrix attention(const Matrix& xq, const Matrix& xkv, const Attention& p, int heads, AttentionTrace* trace) {
  const int dim = static_cast<int>(p.wq.cols());
  if (heads < 1 || dim % heads != 0) throw ShapeError("attention width is not divisible by the head count");
  if (xq.cols() != p.wq.rows() || xkv.cols() != p.wk.rows()) throw ShapeError("attention input width mismatch");
  const int hd = dim / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
  Matrix q = xq * p.wq;
  Matrix k = xkv * p.wk;
  Matrix v = xkv * p.wv;
  Matrix mixed(xq.rows(), dim);
  std::vector<Matrix> weights;
  for (int h = 0; h < heads; ++h) {
    const auto cols = Eigen::seqN(h * hd, hd);
    Matrix s = (q(Eigen::all, cols) * k(Eigen::all, cols).transpose()) * scale;
    for (Eigen::Index i = 0; i < s.rows(); ++i) {
      const double mx = s.row(i).maxCoeff();
      s.row(i) = (s.row(i).array() - mx).exp();
      s.row(i) /= s.row(i).sum();
    }
    mixed(Eigen::all, cols) = s * v(Eigen::all, cols);
    if (trace) weights.push_back(std::move(s));
  }
  Matrix out = mixed * p.wo;
  if (trace) {
    trace->q = std::move(q);
    trace->k = std::move(k);
    trace->v = std::move(v);
    trace->weights = std::move(weights);
    trace->mixed = std::move(mixed);
  }
  return out;
}

FusionLayerOutput event_fusion_layer(const Matrix& video, const Matrix& kvaf, const FusionLayer& p, int heads) {
  return fusion_forward(video, kvaf, p, heads, nullptr);
}

NoisedPair noise_sample(const LatentGrid& z0, double t, const LatentGrid& noise) {
  if (!z0.same_shape(noise)) throw ShapeError("latent and noise shapes differ");
  if (!(t >= 0.0 && t <= 1.0)) throw ArgumentError("timestep must lie in [0, 1]");
  NoisedPair out;
  out.t = t;
  out.noise = noise;
  out.z_t = z0;
  out.target = z0;
  for (size_t i = 0; i < z0.values.size(); ++i) {
    out.z_t.values[i] = (1.0 - t) * z0.values[i] + t * noise.values[i];
    out.target.values[i] = noise.values[i] - z0.values[i];
  }
  return out;
}

ForwardOutput dual_stream_forward(const TokenGrid& video, const TokenGrid& kvaf, double t,
                                  const FusionParams& params, const ModelConfig& cfg) {
  return forward_impl(video, kvaf, t, params, cfg, nullptr);
}

LossTerms total_loss(const ForwardOutput& out, const LossTargets& targets, double t, const ModelConfig& cfg) {
  return loss_impl(out, targets, t, cfg, false).terms;
}

std::vector<bool> first_frame_mask(const TokenGrid& layout) {
  std::vector<bool> mask(static_cast<size_t>(layout.count()), true);
  const int per_slice = layout.grid_shape[1] * layout.grid_shape[2];
  for (int i = 0; i < per_slice && i < layout.count(); ++i) mask[static_cast<size_t>(i)] = false;
  return mask;
}

LossTerms evaluate_loss(const Example& example, const FusionParams& params, const ModelConfig& cfg) {
  const ForwardOutput out = forward_impl(example.video, example.kvaf, example.t, params, cfg, nullptr);
  return loss_impl(out, example.targets, example.t, cfg, false).terms;
}

Gradient loss_and_gradient(const Example& example, const FusionParams& params, const ModelConfig& cfg) {
  ForwardTape tape;
  const ForwardOutput out = forward_impl(example.video, example.kvaf, example.t, params, cfg, &tape);
  const LossGrad lg = loss_impl(out, example.targets, example.t, cfg, true);
  Gradient result{lg.terms, params.zeros_like()};
  FusionParams& g = result.grad;

  Matrix dhv, dhk;
  linear_backward(params.video_head, tape.video_final, lg.d_video, g.video_head, &dhv);
  linear_backward(params.kvaf_head, tape.kvaf_final, lg.d_kvaf, g.kvaf_head, &dhk);
  size_t f = cfg.fusion_layers.size();
  for (int l = cfg.depth; l >= 1; --l) {
    const size_t li = static_cast<size_t>(l - 1);
    dhv = block_backward(params.video_blocks[li], tape.feat, tape.video_blocks[li], dhv, cfg.heads, g.video_blocks[li]);
    if (f > 0 && cfg.fusion_layers[f - 1] == l) {
      --f;
      Matrix nv, nk;
      fusion_backward(params.fusion[f], tape.fusion[f], dhv, dhk, lg.d_events[f], cfg.heads, g.fusion[f], nv, nk);
      dhv = std::move(nv);
      dhk = std::move(nk);
    }
    dhk = block_backward(params.kvaf_blocks[li], tape.feat, tape.kvaf_blocks[li], dhk, cfg.heads, g.kvaf_blocks[li]);
  }
  linear_backward(params.video_in, tape.video_in, dhv, g.video_in, nullptr);
  linear_backward(params.kvaf_in, tape.kvaf_in, dhk, g.kvaf_in, nullptr);
  return result;
}

Example make_example(const KvafSequence& video, const KvafSequence& kvaf, double t, uint64_t noise_seed,
                     Factors block, Factors patch) {
  const LatentGrid zv = encode_latent(video, block);
  const LatentGrid zk = encode_latent(kvaf, block);
  if (!zv.same_shape(zk)) throw ShapeError("video and KVAF latents differ in shape");
  const LatentGrid events = encode_latent(frame_difference(video), block);
  GaussianSource g(noise_seed);
  LatentGrid nv = zv, nk = zk;
  for (double& v : nv.values) v = g.next();
  for (double& v : nk.values) v = g.next();
  const NoisedPair pv = noise_sample(zv, t, nv);
  const NoisedPair pk = noise_sample(zk, t, nk);
  Example ex;
  ex.t = t;
  ex.video = patchify(pv.z_t, patch);
  ex.kvaf = patchify(pk.z_t, patch);
  ex.targets.video = patchify(pv.target, patch).tokens;
  ex.targets.kvaf = patchify(pk.target, patch).tokens;
  ex.targets.event = patchify(events, patch).tokens;
  ex.targets.video_mask = first_frame_mask(ex.video);
  return ex;
}

// ---- toy data and training ----

nlohmann::json ToyDataConfig::to_json() const {
  return {{"episodes", episodes}, {"frames", frames},         {"size", size},
          {"square", square},     {"blob_sigma", blob_sigma}, {"seed", seed}};
}

namespace {

Factors factors_from(const nlohmann::json& v) {
  const auto f = v.get<std::vector<int>>();
  if (f.size() != 3) throw LoadError("factors need 3 integers");
  return {f[0], f[1], f[2]};
}

}  // namespace

ToyDataConfig ToyDataConfig::from_json(const nlohmann::json& j) {
  ToyDataConfig c;
  try {
    for (const auto& [key, v] : j.items()) {
      if (key == "episodes") c.episodes = v.get<int>();
      else if (key == "frames") c.frames = v.get<int>();
      else if (key == "size") c.size = v.get<int>();
      else if (key == "square") c.square = v.get<int>();
      else if (key == "blob_sigma") c.blob_sigma = v.get<double>();
      else if (key == "seed") c.seed = v.get<uint64_t>();
      else throw LoadError("unknown toy data key '" + key + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw LoadError(std::string("toy data config: ") + e.what());
  }
  if (c.episodes < 1 || c.frames < 2 || c.size < 4 || c.square < 1 || c.square >= c.size || !(c.blob_sigma > 0)) {
    throw ValidationError("toy data config out of range");
  }
  return c;
}

std::vector<ToyEpisode> toy_dataset(const ToyDataConfig& data) {
  if (data.episodes < 1) throw ArgumentError("toy dataset needs at least one episode");
  static const Color kColors[] = {{1, 0, 0}, {0, 1, 0}, {0, 0, 1}, {1, 1, 0}, {0, 1, 1}, {1, 0.5, 0}};
  std::mt19937_64 rng(data.seed);
  auto pick = [&](int lo, int hi) {  // inclusive
    return lo + static_cast<int>(unit_uniform(rng()) * (hi - lo + 1));
  };
  RenderConfig blob;
  blob.width = data.size;
  blob.height = data.size;
  blob.sigma = data.blob_sigma;
  blob.radius = 3.0 * data.blob_sigma;

  std::vector<ToyEpisode> out;
  const int travel = data.frames - 1;
  for (int e = 0; e < data.episodes; ++e) {
    int vx = 0, vy = 0;
    while (vx == 0 && vy == 0) {
      vx = pick(-2, 2);
      vy = pick(-2, 2);
    }
    const int room = data.size - data.square;
    auto start = [&](int v) {
      const int lo = std::max(0, -v * travel);
      const int hi = std::min(room, room - v * travel);
      if (hi < lo) throw ArgumentError("toy square leaves the canvas; enlarge size or shorten frames");
      return pick(lo, hi);
    };
    const int x0 = start(vx), y0 = start(vy);
    const Color color = kColors[pick(0, 5)];
    ToyEpisode ep;
    for (int t = 0; t < data.frames; ++t) {
      KvafFrame f(data.size, data.size);
      KvafFrame k(data.size, data.size);
      const int x = x0 + vx * t, y = y0 + vy * t;
      for (int dy = 0; dy < data.square; ++dy) {
        for (int dx = 0; dx < data.square; ++dx) f.set(x + dx, y + dy, color);
      }
      const Vec2 center(x + 0.5 * (data.square - 1), y + 0.5 * (data.square - 1));
      gaussian_heatmap(k, center, blob);
      ep.video.push_back(std::move(f));
      ep.kvaf.push_back(std::move(k));
    }
    out.push_back(std::move(ep));
  }
  return out;
}

nlohmann::json TrainConfig::to_json() const {
  return {{"steps", steps},
          {"batch", batch},
          {"learning_rate", learning_rate},
          {"block", {block.t, block.h, block.w}},
          {"patch", {patch.t, patch.h, patch.w}},
          {"eval_t", eval_t},
          {"eval_seed", eval_seed},
          {"divergence_limit", divergence_limit}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  TrainConfig c;
  try {
    for (const auto& [key, v] : j.items()) {
      if (key == "steps") c.steps = v.get<int>();
      else if (key == "batch") c.batch = v.get<int>();
      else if (key == "learning_rate") c.learning_rate = v.get<double>();
      else if (key == "block") c.block = factors_from(v);
      else if (key == "patch") c.patch = factors_from(v);
      else if (key == "eval_t") c.eval_t = v.get<double>();
      else if (key == "eval_seed") c.eval_seed = v.get<uint64_t>();
      else if (key == "divergence_limit") c.divergence_limit = v.get<double>();
      else throw LoadError("unknown train key '" + key + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw LoadError(std::string("train config: ") + e.what());
  }
  if (c.steps < 0 || c.batch < 1 || !(c.learning_rate > 0) || !(c.eval_t >= 0 && c.eval_t <= 1)) {
    throw ValidationError("train config out of range");
  }
  return c;
}

nlohmann::json TrainingReport::to_json() const {
  nlohmann::json steps = nlohmann::json::array();
  for (const auto& l : losses) {
    steps.push_back({{"total", l.total}, {"video", l.video}, {"kvaf", l.kvaf}, {"event", l.event}});
  }
  auto matrix_json = [](const Matrix& m) {
    nlohmann::json rows = nlohmann::json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
      std::vector<double> r(m.cols());
      for (Eigen::Index k = 0; k < m.cols(); ++k) r[static_cast<size_t>(k)] = m(i, k);
      rows.push_back(r);
    }
    return rows;
  };
  return {{"losses", steps},
          {"diverged", diverged},
          {"diagnostic", diagnostic},
          {"gate", {{"mean", gate_mean}, {"min", gate_min}, {"max", gate_max}}},
          {"event_map", matrix_json(event_map)},
          {"motion_mask", matrix_json(motion_mask)},
          {"event_iou", event_iou},
          {"trivial_iou", trivial_iou}};
}

double event_iou(const Matrix& event_map, const Matrix& motion_mask) {
  if (event_map.rows() != motion_mask.rows() || event_map.cols() != motion_mask.cols()) {
    throw ShapeError("event map and motion mask differ in shape");
  }
  const double threshold = 0.5 * (event_map.minCoeff() + event_map.maxCoeff());
  int inter = 0, uni = 0;
  for (Eigen::Index i = 0; i < event_map.size(); ++i) {
    const bool p = event_map(i) > threshold;
    const bool m = motion_mask(i) > 0.5;
    inter += p && m;
    uni += p || m;
  }
  return uni > 0 ? static_cast<double>(inter) / uni : 1.0;
}

std::vector<double> smoothed(const std::vector<double>& values, int window) {
  std::vector<double> out(values.size());
  double sum = 0.0;
  for (size_t i = 0; i < values.size(); ++i) {
    sum += values[i];
    if (i >= static_cast<size_t>(window)) sum -= values[i - static_cast<size_t>(window)];
    out[i] = sum / static_cast<double>(std::min<size_t>(i + 1, static_cast<size_t>(window)));
  }
  return out;
}

namespace {

uint64_t mix_seed(uint64_t a, uint64_t b) {
  // splitmix64 finalizer over a combined word
  uint64_t z = a * 0x9e3779b97f4a7c15ull + b + 0x632be59bd9b4e019ull;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

}  // namespace

TrainingReport train_toy(const std::vector<ToyEpisode>& dataset, const ModelConfig& cfg, const TrainConfig& train,
                         TrainStage stage, FusionParams& params) {
  if (dataset.empty()) throw ArgumentError("training dataset is empty");
  cfg.validate();
  TrainingReport report;
  const unsigned workers = worker_count(train.threads);
  const size_t batch = static_cast<size_t>(train.batch);
  const Factors block = train.block;
  const Factors patch = train.patch;
  std::mt19937_64 rng(mix_seed(cfg.seed, 0x7261696eull));

  for (int step = 0; step < train.steps; ++step) {
    std::vector<double> ts(batch);
    for (size_t b = 0; b < batch; ++b) ts[b] = (static_cast<double>(b) + unit_uniform(rng())) / batch;
    std::vector<Gradient> grads(batch);
    parallel_for(batch, workers, [&](size_t b) {
      const ToyEpisode& ep = dataset[(static_cast<size_t>(step) * batch + b) % dataset.size()];
      const Example ex = make_example(ep.video, ep.kvaf, ts[b], mix_seed(static_cast<uint64_t>(step), b), block, patch);
      grads[b] = loss_and_gradient(ex, params, cfg);
    });
    FusionParams total = std::move(grads[0].grad);
    LossTerms mean = grads[0].loss;
    for (size_t b = 1; b < batch; ++b) {
      total.add_scaled(grads[b].grad, 1.0);
      mean.total += grads[b].loss.total;
      mean.video += grads[b].loss.video;
      mean.kvaf += grads[b].loss.kvaf;
      mean.event += grads[b].loss.event;
    }
    const double inv = 1.0 / static_cast<double>(batch);
    mean.total *= inv;
    mean.video *= inv;
    mean.kvaf *= inv;
    mean.event *= inv;
    report.losses.push_back(mean);
    if (!std::isfinite(mean.total) || mean.total > train.divergence_limit || !total.all_finite()) {
      report.diverged = true;
      report.diagnostic = "loss " + std::to_string(mean.total) + " at step " + std::to_string(step) +
                          " exceeds the divergence limit";
      break;
    }
    if (stage == TrainStage::fusion_frozen) total.visit_fusion([](const std::string&, Matrix& m) { m.setZero(); });
    params.add_scaled(total, -train.learning_rate * inv);
  }

  // Gate statistics and event maps at a fixed evaluation timestep.
  double gate_sum = 0.0;
  size_t gate_count = 0;
  report.gate_min = 1.0;
  report.gate_max = 0.0;
  double iou_sum = 0.0, trivial_sum = 0.0;
  for (size_t e = 0; e < dataset.size(); ++e) {
    const Example ex = make_example(dataset[e].video, dataset[e].kvaf, train.eval_t, mix_seed(train.eval_seed, e),
                                    block, patch);
    const ForwardOutput out = dual_stream_forward(ex.video, ex.kvaf, ex.t, params, cfg);
    for (const auto& g : out.gates) {
      gate_sum += g.sum();
      gate_count += static_cast<size_t>(g.size());
      report.gate_min = std::min(report.gate_min, g.minCoeff());
      report.gate_max = std::max(report.gate_max, g.maxCoeff());
    }
    if (out.event_preds.empty()) continue;
    const LatentGrid pred = unpatchify(out.event_preds.back(), ex.video);
    const LatentGrid target = unpatchify(ex.targets.event, ex.video);
    Matrix map(pred.frames, pred.height * pred.width);
    Matrix mask(pred.frames, pred.height * pred.width);
    for (int t = 0; t < pred.frames; ++t) {
      for (int y = 0; y < pred.height; ++y) {
        for (int x = 0; x < pred.width; ++x) {
          double s = 0.0, m = 0.0;
          for (int c = 0; c < pred.channels; ++c) {
            s += std::abs(pred.at(t, y, x, c));
            m = std::max(m, std::abs(target.at(t, y, x, c)));
          }
          map(t, y * pred.width + x) = s / pred.channels;
          mask(t, y * pred.width + x) = m > 1e-12 ? 1.0 : 0.0;
        }
      }
    }
    iou_sum += event_iou(map, mask);
    trivial_sum += mask.mean();
    if (e == 0) {
      report.event_map = map;
      report.motion_mask = mask;
    }
  }
  if (gate_count > 0) report.gate_mean = gate_sum / static_cast<double>(gate_count);
  else report.gate_min = report.gate_max = 0.0;
  report.event_iou = iou_sum / static_cast<double>(dataset.size());
  report.trivial_iou = trivial_sum / static_cast<double>(dataset.size());
  return report;
}

// ---- checkpoints ----

void save_checkpoint(const FusionParams& params, const ModelConfig& cfg, const std::filesystem::path& stem) {
  std::filesystem::path bin = stem, manifest = stem;
  bin += ".bin";
  manifest += ".json";
  std::ofstream os(bin, std::ios::binary);
  if (!os) throw LoadError("cannot write " + bin.string());
  nlohmann::json tensors = nlohmann::json::array();
  params.visit([&](const std::string& name, const Matrix& m) {
    tensors.push_back({{"name", name}, {"shape", {m.rows(), m.cols()}}});
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
      for (Eigen::Index k = 0; k < m.cols(); ++k) {
        const uint64_t bits = std::bit_cast<uint64_t>(m(i, k));
        char bytes[8];
        for (int b = 0; b < 8; ++b) bytes[b] = static_cast<char>((bits >> (8 * b)) & 0xff);
        os.write(bytes, 8);
      }
    }
  });
  if (!os) throw LoadError("failed writing " + bin.string());
  const nlohmann::json j = {{"format", "kvaf-checkpoint/1"},
                            {"dtype", "float64"},
                            {"byte_order", "little"},
                            {"layout", "row-major"},
                            {"seed", cfg.seed},
                            {"config", cfg.to_json()},
                            {"config_hash", hex64(fnv1a64(cfg.to_json().dump()))},
                            {"tensors", tensors}};
  std::ofstream ms(manifest);
  if (!ms) throw LoadError("cannot write " + manifest.string());
  ms << j.dump(2) << "\n";
}

FusionParams load_checkpoint(const std::filesystem::path& stem, const ModelConfig& cfg) {
  std::filesystem::path bin = stem, manifest = stem;
  bin += ".bin";
  manifest += ".json";
  std::ifstream ms(manifest);
  if (!ms) throw LoadError("cannot open " + manifest.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(ms);
  } catch (const nlohmann::json::exception& e) {
    throw LoadError(manifest.string() + ": " + e.what());
  }
  if (j.value("config_hash", "") != hex64(fnv1a64(cfg.to_json().dump()))) {
    throw LoadError("checkpoint was written for a different model config");
  }
  const auto& list = j.at("tensors");
  std::vector<std::pair<Eigen::Index, Eigen::Index>> shapes;
  for (const auto& t : list) shapes.emplace_back(t.at("shape")[0].get<Eigen::Index>(), t.at("shape")[1].get<Eigen::Index>());
  // Token dims are recovered from the first tensors (video_in, kvaf_in).
  if (shapes.size() < 4) throw LoadError("checkpoint has too few tensors");
  FusionParams p = init_params(cfg, static_cast<int>(shapes[0].first), static_cast<int>(shapes[2].first));
  std::ifstream is(bin, std::ios::binary);
  if (!is) throw LoadError("cannot open " + bin.string());
  size_t idx = 0;
  p.visit([&](const std::string& name, Matrix& m) {
    if (idx >= list.size() || list[idx].at("name") != name || shapes[idx].first != m.rows() ||
        shapes[idx].second != m.cols()) {
      throw LoadError("checkpoint tensor " + std::to_string(idx) + " does not match '" + name + "'");
    }
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
      for (Eigen::Index k = 0; k < m.cols(); ++k) {
        unsigned char bytes[8];
        if (!is.read(reinterpret_cast<char*>(bytes), 8)) throw LoadError("truncated checkpoint data");
        uint64_t bits = 0;
        for (int b = 0; b < 8; ++b) bits |= static_cast<uint64_t>(bytes[b]) << (8 * b);
        m(i, k) = std::bit_cast<double>(bits);
      }
    }
    ++idx;
  });
  return p;
}

}  // namespace kvaf
