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

#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <random>

#include "fixtures.hpp"
#include "kvaf/error.hpp"
#include "kvaf/event.hpp"
#include "kvaf/fusion.hpp"

using namespace kvaf;

namespace {

KvafSequence random_video(std::mt19937_64& rng, int frames, int w, int h) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  KvafSequence v;
  for (int t = 0; t < frames; ++t) {
    KvafFrame f(w, h);
    for (double& x : f.data()) x = u(rng);
    v.push_back(f);
  }
  return v;
}

KvafSequence constant_video(int frames, int w, int h, const Color& c) {
  KvafFrame f(w, h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) f.set(x, y, c);
  }
  return KvafSequence(static_cast<size_t>(frames), f);
}

double sq_norm(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return s;
}

}  // namespace

TEST(FrameDifference, FirstFrameIsZeroAndAbsoluteDifference) {
  std::mt19937_64 rng(1);
  const KvafSequence v = random_video(rng, 4, 6, 5);
  const KvafSequence d = frame_difference(v);
  ASSERT_EQ(d.size(), 4u);
  for (double x : d[0].data()) EXPECT_EQ(x, 0.0);
  for (size_t t = 1; t < 4; ++t) {
    for (size_t i = 0; i < d[t].data().size(); ++i) {
      EXPECT_EQ(d[t].data()[i], std::abs(v[t].data()[i] - v[t - 1].data()[i]));
    }
  }

  KvafSequence two = constant_video(2, 1, 1, Color(0.5, 0.5, 0.5));
  two[1].set(0, 0, Color(0.2, 0.5, 0.9));
  const KvafSequence d2 = frame_difference(two);
  EXPECT_NEAR(d2[1].at(0, 0, 0), 0.3, 1e-15);
  EXPECT_EQ(d2[1].at(0, 0, 1), 0.0);
  EXPECT_NEAR(d2[1].at(0, 0, 2), 0.4, 1e-15);
}

TEST(FrameDifference, ConstantVideoAndErrors) {
  for (const auto& f : frame_difference(constant_video(5, 4, 3, Color(0.1, 0.7, 0.3)))) {
    for (double x : f.data()) EXPECT_EQ(x, 0.0);
  }
  EXPECT_THROW(frame_difference({}), ArgumentError);
  KvafSequence mixed{KvafFrame(4, 4), KvafFrame(4, 5)};
  EXPECT_THROW(frame_difference(mixed), ShapeError);
}

TEST(FrameDifference, AdditiveConstantInvariance) {
  std::mt19937_64 rng(2);
  // Dyadic offsets keep the arithmetic exact on values in [0, 1].
  const KvafSequence v = random_video(rng, 5, 7, 4);
  for (double offset : {0.25, -0.5, 0.125}) {
    KvafSequence s = v;
    for (auto& f : s) {
      for (double& x : f.data()) x += offset;
    }
    const auto a = frame_difference(v), b = frame_difference(s);
    for (size_t t = 0; t < a.size(); ++t) {
      for (size_t i = 0; i < a[t].data().size(); ++i) EXPECT_NEAR(a[t].data()[i], b[t].data()[i], 1e-15);
    }
  }
}

TEST(FrameDifference, ReversalSymmetry) {
  std::mt19937_64 rng(3);
  const KvafSequence v = random_video(rng, 6, 5, 5);
  KvafSequence r(v.rbegin(), v.rend());
  const auto d = frame_difference(v), dr = frame_difference(r);
  const size_t T = v.size();
  for (double x : dr[0].data()) EXPECT_EQ(x, 0.0);
  // dr[k] = |v[T-1-k] - v[T-k]| = d[T-k] for k = 1..T-1.
  for (size_t k = 1; k < T; ++k) EXPECT_EQ(dr[k], d[T - k]);
}

TEST(EncodeLatent, UnitBlockIsIdentity) {
  std::mt19937_64 rng(4);
  const KvafSequence v = random_video(rng, 3, 5, 4);
  const LatentGrid z = encode_latent(v, Factors{1, 1, 1});
  ASSERT_EQ(z.frames, 3);
  ASSERT_EQ(z.height, 4);
  ASSERT_EQ(z.width, 5);
  ASSERT_EQ(z.channels, 3);
  for (int t = 0; t < 3; ++t) {
    for (int y = 0; y < 4; ++y) {
      for (int x = 0; x < 5; ++x) {
        for (int c = 0; c < 3; ++c) EXPECT_EQ(z.at(t, y, x, c), v[t].at(x, y, c));
      }
    }
  }
}

TEST(EncodeLatent, ConstantFrameFillsMeanChannel) {
  const Color c(0.25, 0.6, 0.9);
  const LatentGrid z = encode_latent(constant_video(4, 8, 8, c), Factors{2, 4, 4});
  ASSERT_EQ(z.channels, 3 * 32);
  for (int t = 0; t < z.frames; ++t) {
    for (int y = 0; y < z.height; ++y) {
      for (int x = 0; x < z.width; ++x) {
        for (int k = 0; k < 3; ++k) EXPECT_NEAR(z.at(t, y, x, k), c[k], 1e-15);
        for (int k = 3; k < z.channels; ++k) EXPECT_NEAR(z.at(t, y, x, k), 0.0, 1e-15);
      }
    }
  }
  const Eigen::MatrixXd mean = latent_mean_channels(z);
  EXPECT_NEAR(mean(0, 0), (c[0] + c[1] + c[2]) / 3.0, 1e-15);
}

TEST(EncodeLatent, LinearOrthogonalAndInvertible) {
  std::mt19937_64 rng(5);
  const Factors block{2, 2, 4};
  const KvafSequence x = random_video(rng, 4, 8, 6), y = random_video(rng, 4, 8, 6);
  const double a = 0.7, b = -1.3;
  KvafSequence mix = x;
  for (size_t t = 0; t < mix.size(); ++t) {
    for (size_t i = 0; i < mix[t].data().size(); ++i) mix[t].data()[i] = a * x[t].data()[i] + b * y[t].data()[i];
  }
  const LatentGrid zx = encode_latent(x, block), zy = encode_latent(y, block), zm = encode_latent(mix, block);
  for (size_t i = 0; i < zm.values.size(); ++i) {
    ASSERT_NEAR(zm.values[i], a * zx.values[i] + b * zy.values[i], 1e-12);
  }
  double in = 0.0;
  for (const auto& f : x) in += sq_norm(f.data());
  EXPECT_NEAR(sq_norm(zx.values), in / block.volume(), 1e-10);

  const KvafSequence back = decode_latent(zx);
  ASSERT_EQ(back.size(), x.size());
  for (size_t t = 0; t < x.size(); ++t) {
    for (size_t i = 0; i < x[t].data().size(); ++i) ASSERT_NEAR(back[t].data()[i], x[t].data()[i], 1e-12);
  }
}

TEST(EncodeLatent, NonDividingBlockIsShapeError) {
  EXPECT_THROW(encode_latent(constant_video(3, 8, 8, Color::Zero()), Factors{2, 4, 4}), ShapeError);
  EXPECT_THROW(encode_latent(constant_video(4, 10, 8, Color::Zero()), Factors{2, 4, 4}), ShapeError);
}

TEST(Patchify, CountsOrderAndRoundTrip) {
  LatentGrid z(1, 4, 4, 2);
  for (size_t i = 0; i < z.values.size(); ++i) z.values[i] = static_cast<double>(i);
  const TokenGrid tok = patchify(z, Factors{1, 2, 2});
  ASSERT_EQ(tok.count(), 4);
  ASSERT_EQ(tok.tokens.rows(), 4);
  ASSERT_EQ(tok.tokens.cols(), 8);
  // Token 0 is the top-left 2x2 patch of frame 0, ordered (dh, dw, c).
  int k = 0;
  for (int dy = 0; dy < 2; ++dy) {
    for (int dx = 0; dx < 2; ++dx) {
      for (int c = 0; c < 2; ++c) EXPECT_EQ(tok.tokens(0, k++), z.at(0, dy, dx, c));
    }
  }
  // Token 1 is the patch to its right.
  EXPECT_EQ(tok.tokens(1, 0), z.at(0, 0, 2, 0));
  EXPECT_EQ(tok.tokens(2, 0), z.at(0, 2, 0, 0));
  EXPECT_EQ(unpatchify(tok), z);

  std::mt19937_64 rng(6);
  std::normal_distribution<double> g;
  LatentGrid r(4, 6, 8, 5, Factors{2, 4, 4});
  for (double& v : r.values) v = g(rng);
  const TokenGrid rt = patchify(r, Factors{2, 3, 2});
  EXPECT_EQ(static_cast<size_t>(rt.tokens.size()), r.values.size());
  EXPECT_EQ(unpatchify(rt), r);
  EXPECT_EQ(unpatchify(rt.tokens, rt), r);
}

TEST(Patchify, ShapeErrors) {
  LatentGrid z(1, 4, 5, 2);
  EXPECT_THROW(patchify(z, Factors{1, 2, 2}), ShapeError);
  TokenGrid tok = patchify(LatentGrid(1, 4, 4, 2), Factors{1, 2, 2});
  tok.tokens.conservativeResize(3, Eigen::NoChange);
  EXPECT_THROW(unpatchify(tok), ShapeError);
}

TEST(EventTarget, MatchesEncodedFrameDifferenceExactly) {
  std::mt19937_64 rng(7);
  const KvafSequence video = random_video(rng, 4, 8, 8), kvaf = random_video(rng, 4, 8, 8);
  const Factors block{2, 4, 4}, patch{1, 1, 1};
  const Example ex = make_example(video, kvaf, 0.3, 11, block, patch);
  const TokenGrid expect = patchify(encode_latent(frame_difference(video), block), patch);
  ASSERT_EQ(ex.targets.event.rows(), expect.tokens.rows());
  ASSERT_EQ(ex.targets.event.cols(), expect.tokens.cols());
  EXPECT_EQ(0, std::memcmp(ex.targets.event.data(), expect.tokens.data(),
                           sizeof(double) * static_cast<size_t>(expect.tokens.size())));
}

TEST(LatentFile, RoundTripIsExact) {
  std::mt19937_64 rng(8);
  std::normal_distribution<double> g;
  LatentGrid z(2, 3, 4, 6, Factors{2, 8, 8});
  for (double& v : z.values) v = g(rng);
  z.values[0] = -0.0;
  z.values[1] = 1e-308;
  const auto path = scratch_dir("latent") / "z.bin";
  save_latent(z, path);
  const LatentGrid back = load_latent(path);
  EXPECT_EQ(back, z);
  EXPECT_TRUE(std::signbit(back.values[0]));
}
