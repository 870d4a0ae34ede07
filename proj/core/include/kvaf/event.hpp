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
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include "kvaf/render.hpp"

namespace kvaf {

/// Temporal x height x width factors, used both for encoder blocks and for
/// token patches.
struct Factors {
  int t = 1;
  int h = 1;
  int w = 1;

  int volume() const { return t * h * w; }
  friend bool operator==(const Factors&, const Factors&) = default;
};

inline constexpr Factors kDefaultBlock{2, 8, 8};
inline constexpr Factors kDefaultPatch{1, 2, 2};

/// Dense T x H x W x C array, channel-last, row-major.
struct LatentGrid {
  int frames = 0;
  int height = 0;
  int width = 0;
  int channels = 0;
  Factors block;  // encoder block the grid was produced with
  std::vector<double> values;

  LatentGrid() = default;
  LatentGrid(int t, int h, int w, int c, Factors blk = {})
      : frames(t), height(h), width(w), channels(c), block(blk),
        values(static_cast<size_t>(t) * h * w * c, 0.0) {}

  size_t index(int t, int y, int x, int c) const {
    return ((static_cast<size_t>(t) * height + y) * width + x) * channels + c;
  }
  double& at(int t, int y, int x, int c) { return values[index(t, y, x, c)]; }
  double at(int t, int y, int x, int c) const { return values[index(t, y, x, c)]; }
  bool same_shape(const LatentGrid& o) const {
    return frames == o.frames && height == o.height && width == o.width && channels == o.channels;
  }

  friend bool operator==(const LatentGrid&, const LatentGrid&) = default;
};

/// N x D token matrix (one token per row) plus the layout needed to undo
/// patchify. Tokens run row-major over the (t, h, w) patch grid; inside a
/// token the order is (dt, dh, dw, c).
struct TokenGrid {
  Eigen::MatrixXd tokens;
  std::array<int, 3> grid_shape = {0, 0, 0};
  Factors patch;
  int channels = 0;  // latent channels per cell
  Factors block;     // carried through from the latent

  int count() const { return grid_shape[0] * grid_shape[1] * grid_shape[2]; }
};

/// Delta_1 = 0, Delta_tau = |I_tau - I_{tau-1}|. Throws ArgumentError on empty
/// input and ShapeError when frame sizes differ.
KvafSequence frame_difference(const KvafSequence& frames);

/// Fixed linear surrogate for the video autoencoder. Each block of
/// n = bt*bh*bw pixels and each color c maps to n channels
///   y = Q x / sqrt(n),
/// where Q is the n x n Helmert matrix (first row constant, so channel 0 is
/// the block mean). Channel index is j*3 + c. Q is orthogonal, so the map is
/// exactly invertible and scales norms by 1/sqrt(n).
/// Throws ShapeError when the block does not divide the video dims.
LatentGrid encode_latent(const KvafSequence& frames, Factors block = kDefaultBlock);

/// Exact inverse of encode_latent.
KvafSequence decode_latent(const LatentGrid& latent);

/// Mean of the color channels 0..2 of each cell (the block-mean channels).
Eigen::MatrixXd latent_mean_channels(const LatentGrid& latent);

/// Throws ShapeError when the patch does not divide the latent dims.
TokenGrid patchify(const LatentGrid& latent, Factors patch = kDefaultPatch);
/// Throws ShapeError when the token matrix does not match its recorded layout.
LatentGrid unpatchify(const TokenGrid& tokens);

/// Same layout as patchify, for a bare N x D matrix.
LatentGrid unpatchify(const Eigen::MatrixXd& tokens, const TokenGrid& layout);

/// File layout: uint64 little-endian header length, the UTF-8 JSON header
/// {"dtype": "float64", "byte_order": "little", "shape": [T, H, W, C],
///  "block": [bt, bh, bw]}, then T*H*W*C float64 little-endian values.
void save_latent(const LatentGrid& latent, const std::filesystem::path& path);
LatentGrid load_latent(const std::filesystem::path& path);

}  // namespace kvaf
