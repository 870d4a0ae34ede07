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

#include "kvaf/event.hpp"

#include <bit>
#include <cmath>
#include <cstdint>
#include <fstream>

#include "kvaf/error.hpp"

namespace kvaf {

namespace {

std::string dims(int a, int b, int c) {
  return std::to_string(a) + "x" + std::to_string(b) + "x" + std::to_string(c);
}

void check_factors(const Factors& f, const char* what) {
  if (f.t < 1 || f.h < 1 || f.w < 1) {
    throw ShapeError(std::string(what) + " factors must be positive, got " + dims(f.t, f.h, f.w));
  }
}

void check_frames(const KvafSequence& frames) {
  if (frames.empty()) throw ArgumentError("video has no frames");
  for (const auto& f : frames) {
    if (f.width() != frames[0].width() || f.height() != frames[0].height()) {
      throw ShapeError("frames differ in size");
    }
  }
}

}  // namespace

KvafSequence frame_difference(const KvafSequence& frames) {
  check_frames(frames);
  KvafSequence out;
  out.reserve(frames.size());
  out.emplace_back(frames[0].width(), frames[0].height());
  for (size_t i = 1; i < frames.size(); ++i) {
    KvafFrame d(frames[i].width(), frames[i].height());
    const auto& a = frames[i].data();
    const auto& b = frames[i - 1].data();
    auto& o = d.data();
    for (size_t k = 0; k < o.size(); ++k) o[k] = std::abs(a[k] - b[k]);
    out.push_back(std::move(d));
  }
  return out;
}

LatentGrid encode_latent(const KvafSequence& frames, Factors block) {
  check_frames(frames);
  check_factors(block, "block");
  const int t_in = static_cast<int>(frames.size());
  const int h_in = frames[0].height();
  const int w_in = frames[0].width();
  if (t_in % block.t || h_in % block.h || w_in % block.w) {
    throw ShapeError("block " + dims(block.t, block.h, block.w) + " does not divide video " +
                     dims(t_in, h_in, w_in));
  }
  const int n = block.volume();
  LatentGrid out(t_in / block.t, h_in / block.h, w_in / block.w, 3 * n, block);
  const double inv_n = 1.0 / n;
  const double inv_sqrt_n = 1.0 / std::sqrt(static_cast<double>(n));
  std::vector<double> x(static_cast<size_t>(n));
  for (int lt = 0; lt < out.frames; ++lt) {
    for (int ly = 0; ly < out.height; ++ly) {
      for (int lx = 0; lx < out.width; ++lx) {
        for (int c = 0; c < 3; ++c) {
          int j = 0;
          for (int dt = 0; dt < block.t; ++dt) {
            const KvafFrame& f = frames[static_cast<size_t>(lt * block.t + dt)];
            for (int dy = 0; dy < block.h; ++dy) {
              for (int dx = 0; dx < block.w; ++dx) {
                x[static_cast<size_t>(j++)] = f.at(lx * block.w + dx, ly * block.h + dy, c);
              }
            }
          }
          double prefix = 0.0;
          for (int k = 0; k < n; ++k) prefix += x[static_cast<size_t>(k)];
          out.at(lt, ly, lx, c) = prefix * inv_n;
          prefix = x[0];
          for (int k = 1; k < n; ++k) {
            const double kk = static_cast<double>(k);
            const double row = (prefix - kk * x[static_cast<size_t>(k)]) / std::sqrt(kk * (kk + 1.0));
            out.at(lt, ly, lx, k * 3 + c) = row * inv_sqrt_n;
            prefix += x[static_cast<size_t>(k)];
          }
        }
      }
    }
  }
  return out;
}

KvafSequence decode_latent(const LatentGrid& latent) {
  const Factors block = latent.block;
  check_factors(block, "block");
  const int n = block.volume();
  if (latent.channels != 3 * n) {
    throw ShapeError("latent has " + std::to_string(latent.channels) + " channels, block expects " +
                     std::to_string(3 * n));
  }
  const double sqrt_n = std::sqrt(static_cast<double>(n));
  KvafSequence out(static_cast<size_t>(latent.frames * block.t),
                   KvafFrame(latent.width * block.w, latent.height * block.h));
  std::vector<double> y(static_cast<size_t>(n));
  for (int lt = 0; lt < latent.frames; ++lt) {
    for (int ly = 0; ly < latent.height; ++ly) {
      for (int lx = 0; lx < latent.width; ++lx) {
        for (int c = 0; c < 3; ++c) {
          for (int k = 0; k < n; ++k) y[static_cast<size_t>(k)] = latent.at(lt, ly, lx, k * 3 + c);
          // x_j = y_0 + sqrt(n) (Q_jj y_j + sum_{k>j} y_k / sqrt(k(k+1)))
          double suffix = 0.0;
          std::vector<double> x(static_cast<size_t>(n));
          for (int j = n - 1; j >= 0; --j) {
            const double jj = static_cast<double>(j);
            double v = suffix;
            if (j > 0) v -= jj * y[static_cast<size_t>(j)] / std::sqrt(jj * (jj + 1.0));
            x[static_cast<size_t>(j)] = y[0] + sqrt_n * v;
            if (j > 0) suffix += y[static_cast<size_t>(j)] / std::sqrt(jj * (jj + 1.0));
          }
          int j = 0;
          for (int dt = 0; dt < block.t; ++dt) {
            KvafFrame& f = out[static_cast<size_t>(lt * block.t + dt)];
            for (int dy = 0; dy < block.h; ++dy) {
              for (int dx = 0; dx < block.w; ++dx) {
                f.at(lx * block.w + dx, ly * block.h + dy, c) = x[static_cast<size_t>(j++)];
              }
            }
          }
        }
      }
    }
  }
  return out;
}

Eigen::MatrixXd latent_mean_channels(const LatentGrid& latent) {
  Eigen::MatrixXd out(latent.frames, latent.height * latent.width);
  for (int t = 0; t < latent.frames; ++t) {
    for (int y = 0; y < latent.height; ++y) {
      for (int x = 0; x < latent.width; ++x) {
        double s = 0.0;
        for (int c = 0; c < 3 && c < latent.channels; ++c) s += latent.at(t, y, x, c);
        out(t, y * latent.width + x) = s / std::min(3, latent.channels);
      }
    }
  }
  return out;
}

TokenGrid patchify(const LatentGrid& latent, Factors patch) {
  check_factors(patch, "patch");
  if (latent.frames % patch.t || latent.height % patch.h || latent.width % patch.w) {
    throw ShapeError("patch " + dims(patch.t, patch.h, patch.w) + " does not divide latent " +
                     dims(latent.frames, latent.height, latent.width));
  }
  TokenGrid out;
  out.grid_shape = {latent.frames / patch.t, latent.height / patch.h, latent.width / patch.w};
  out.patch = patch;
  out.channels = latent.channels;
  out.block = latent.block;
  const int dim = patch.volume() * latent.channels;
  out.tokens.resize(out.count(), dim);
  int row = 0;
  for (int gt = 0; gt < out.grid_shape[0]; ++gt) {
    for (int gy = 0; gy < out.grid_shape[1]; ++gy) {
      for (int gx = 0; gx < out.grid_shape[2]; ++gx, ++row) {
        int col = 0;
        for (int dt = 0; dt < patch.t; ++dt) {
          for (int dy = 0; dy < patch.h; ++dy) {
            for (int dx = 0; dx < patch.w; ++dx) {
              for (int c = 0; c < latent.channels; ++c) {
                out.tokens(row, col++) = latent.at(gt * patch.t + dt, gy * patch.h + dy, gx * patch.w + dx, c);
              }
            }
          }
        }
      }
    }
  }
  return out;
}

LatentGrid unpatchify(const Eigen::MatrixXd& tokens, const TokenGrid& layout) {
  const Factors patch = layout.patch;
  check_factors(patch, "patch");
  const int dim = patch.volume() * layout.channels;
  if (tokens.rows() != layout.count() || tokens.cols() != dim) {
    throw ShapeError("token matrix is " + std::to_string(tokens.rows()) + "x" + std::to_string(tokens.cols()) +
                     ", layout expects " + std::to_string(layout.count()) + "x" + std::to_string(dim));
  }
  LatentGrid out(layout.grid_shape[0] * patch.t, layout.grid_shape[1] * patch.h, layout.grid_shape[2] * patch.w,
                 layout.channels, layout.block);
  int row = 0;
  for (int gt = 0; gt < layout.grid_shape[0]; ++gt) {
    for (int gy = 0; gy < layout.grid_shape[1]; ++gy) {
      for (int gx = 0; gx < layout.grid_shape[2]; ++gx, ++row) {
        int col = 0;
        for (int dt = 0; dt < patch.t; ++dt) {
          for (int dy = 0; dy < patch.h; ++dy) {
            for (int dx = 0; dx < patch.w; ++dx) {
              for (int c = 0; c < layout.channels; ++c) {
                out.at(gt * patch.t + dt, gy * patch.h + dy, gx * patch.w + dx, c) = tokens(row, col++);
              }
            }
          }
        }
      }
    }
  }
  return out;
}

LatentGrid unpatchify(const TokenGrid& tokens) { return unpatchify(tokens.tokens, tokens); }

namespace {

void put_u64(std::ostream& os, uint64_t v) {
  char bytes[8];
  for (int i = 0; i < 8; ++i) bytes[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  os.write(bytes, 8);
}

uint64_t get_u64(std::istream& is) {
  unsigned char bytes[8];
  if (!is.read(reinterpret_cast<char*>(bytes), 8)) throw LoadError("truncated latent file");
  uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(bytes[i]) << (8 * i);
  return v;
}

}  // namespace

void save_latent(const LatentGrid& latent, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw LoadError("cannot write " + path.string());
  const nlohmann::json header = {{"dtype", "float64"},
                                 {"byte_order", "little"},
                                 {"shape", {latent.frames, latent.height, latent.width, latent.channels}},
                                 {"block", {latent.block.t, latent.block.h, latent.block.w}}};
  const std::string text = header.dump();
  put_u64(os, text.size());
  os.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (double v : latent.values) put_u64(os, std::bit_cast<uint64_t>(v));
  if (!os) throw LoadError("failed writing " + path.string());
}

LatentGrid load_latent(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw LoadError("cannot open " + path.string());
  const uint64_t len = get_u64(is);
  if (len > (1u << 20)) throw LoadError("latent header too large");
  std::string text(len, '\0');
  if (!is.read(text.data(), static_cast<std::streamsize>(len))) throw LoadError("truncated latent header");
  LatentGrid out;
  try {
    const auto header = nlohmann::json::parse(text);
    if (header.at("dtype") != "float64" || header.at("byte_order") != "little") {
      throw LoadError("unsupported latent dtype or byte order");
    }
    const auto shape = header.at("shape").get<std::vector<int>>();
    const auto block = header.at("block").get<std::vector<int>>();
    if (shape.size() != 4 || block.size() != 3) throw LoadError("bad latent header shape");
    for (int s : shape) {
      if (s < 0) throw LoadError("negative latent dimension");
    }
    out = LatentGrid(shape[0], shape[1], shape[2], shape[3], {block[0], block[1], block[2]});
  } catch (const nlohmann::json::exception& e) {
    throw LoadError(std::string("latent header: ") + e.what());
  }
  for (double& v : out.values) v = std::bit_cast<double>(get_u64(is));
  return out;
}

}  // namespace kvaf
