// Copyright 2026 The STRM Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "oracles.hpp"
#include "strm/errors.hpp"
#include "strm/random.hpp"
#include "strm/tasks.hpp"

using namespace strm;
namespace fs = std::filesystem;

namespace {

SyntheticConfig clean_config() {
  SyntheticConfig c;
  c.noise = 0.0;
  return c;
}

BinaryMask rect(std::size_t h, std::size_t w, std::size_t y0, std::size_t x0, std::size_t y1, std::size_t x1) {
  BinaryMask m(h, w);
  for (std::size_t y = y0; y < y1; ++y)
    for (std::size_t x = x0; x < x1; ++x) m.pixels[y * w + x] = 1;
  return m;
}

Image random_image(Rng& rng, std::size_t h, std::size_t w, double lo = 0.0, double hi = 1.0) {
  Image im({3, h, w});
  for (auto& v : im.data()) v = rng.uniform(lo, hi);
  return im;
}

std::array<double, 3> pixel(const Image& im, std::size_t y, std::size_t x) {
  return {im.at(0, y, x), im.at(1, y, x), im.at(2, y, x)};
}

class TempDir {
 public:
  TempDir() {
    path_ = fs::temp_directory_path() / ("strm_tasks_" + std::to_string(Rng(std::random_device{}()).bits()));
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
};

std::string frame_file(std::size_t i) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%05zu.png", i);
  return buf;
}

}  // namespace

// ---------------------------------------------------------------------------
// Generator

TEST(Generator, DeterministicPerSeed) {
  const SyntheticConfig cfg;
  const auto a = gen_moving_shapes(cfg, 17), b = gen_moving_shapes(cfg, 17), c = gen_moving_shapes(cfg, 18);
  ASSERT_EQ(a.length(), cfg.length);
  for (std::size_t t = 0; t < a.length(); ++t) {
    EXPECT_EQ(a.frames[t], b.frames[t]);
    EXPECT_EQ(*a.masks[t], *b.masks[t]);
  }
  EXPECT_FALSE(a.frames[0] == c.frames[0]);
}

TEST(Generator, DefaultsAndRanges) {
  const auto s = gen_moving_shapes(SyntheticConfig{}, 3);
  EXPECT_EQ(s.length(), 40u);
  EXPECT_EQ(s.height(), 64u);
  EXPECT_EQ(s.width(), 64u);
  EXPECT_EQ(s.object_count, 2);
  for (std::size_t t = 0; t < s.length(); ++t) {
    for (double v : s.frames[t].data()) {
      ASSERT_GE(v, 0.0);
      ASSERT_LE(v, 1.0);
    }
    for (int l : s.masks[t]->labels) {
      ASSERT_GE(l, 0);
      ASSERT_LE(l, 2);
    }
  }
}

TEST(Generator, MaskEqualsShapeSupport) {
  // Without noise, object pixels carry exactly the object's colour and no
  // other pixel does.
  const auto cfg = clean_config();
  for (std::uint64_t seed : {1, 2, 3}) {
    const auto s = gen_moving_shapes(cfg, seed);
    const auto colors = object_colors(cfg, seed);
    for (std::size_t t = 0; t < s.length(); ++t) {
      const LabelMap& m = *s.masks[t];
      for (std::size_t y = 0; y < s.height(); ++y)
        for (std::size_t x = 0; x < s.width(); ++x) {
          const auto px = pixel(s.frames[t], y, x);
          const int l = m.at(y, x);
          for (int o = 1; o <= s.object_count; ++o)
            ASSERT_EQ(px == colors[std::size_t(o - 1)][t], l == o) << "seed " << seed << " t " << t;
        }
    }
  }
}

TEST(Generator, SwitchesOccurExactlyOnSchedule) {
  SyntheticConfig cfg = clean_config();
  cfg.appearance_switches = {7, 23, 31};
  for (std::uint64_t seed : {4, 5}) {
    const auto s = gen_moving_shapes(cfg, seed);
    for (int o = 1; o <= s.object_count; ++o) {
      // Mean colour over the object's mask, from the rendered frames.
      std::vector<std::array<double, 3>> mean;
      for (std::size_t t = 0; t < s.length(); ++t) {
        std::array<double, 3> acc{};
        double n = 0;
        for (std::size_t y = 0; y < s.height(); ++y)
          for (std::size_t x = 0; x < s.width(); ++x)
            if (s.masks[t]->at(y, x) == o) {
              const auto px = pixel(s.frames[t], y, x);
              for (int c = 0; c < 3; ++c) acc[c] += px[c];
              ++n;
            }
        for (auto& v : acc) v /= n;
        mean.push_back(acc);
      }
      std::set<std::size_t> changes;
      for (std::size_t t = 1; t < s.length(); ++t)
        if (std::abs(mean[t][0] - mean[t - 1][0]) + std::abs(mean[t][1] - mean[t - 1][1]) +
                std::abs(mean[t][2] - mean[t - 1][2]) > 1e-9)
          changes.insert(t);
      EXPECT_EQ(changes, (std::set<std::size_t>{7, 23, 31})) << "object " << o;
    }
  }
}

TEST(Generator, OcclusionShrinksTargetMask) {
  SyntheticConfig occluded = clean_config(), open = clean_config();
  open.occlusions.clear();
  for (std::uint64_t seed : {1, 2, 3, 4}) {
    const auto a = gen_moving_shapes(occluded, seed), b = gen_moving_shapes(open, seed);
    for (std::size_t t = 0; t < a.length(); ++t) {
      const std::size_t with = a.masks[t]->count(occluded.occluded_object);
      const std::size_t without = b.masks[t]->count(occluded.occluded_object);
      if (t >= 10 && t < 15)
        EXPECT_LT(with, without) << "t " << t;
      else
        EXPECT_EQ(with, without) << "t " << t;
    }
  }
}

TEST(Generator, RejectsOutOfRangeSchedules) {
  SyntheticConfig c;
  c.appearance_switches = {40};
  EXPECT_THROW(gen_moving_shapes(c, 0), ConfigError);
  c = SyntheticConfig{};
  c.occlusions = {{35, 41}};
  EXPECT_THROW(gen_moving_shapes(c, 0), ConfigError);
  c = SyntheticConfig{};
  c.occluded_object = 3;
  EXPECT_THROW(gen_moving_shapes(c, 0), ConfigError);
}

// ---------------------------------------------------------------------------
// J and F

TEST(MetricJ, WorkedCases) {
  const auto a = rect(8, 8, 0, 0, 2, 4);  // 8 px
  EXPECT_DOUBLE_EQ(metric_j(a, a), 1.0);
  EXPECT_DOUBLE_EQ(metric_j(a, rect(8, 8, 5, 5, 7, 7)), 0.0);
  EXPECT_DOUBLE_EQ(metric_j(rect(8, 8, 0, 0, 1, 4), a), 0.5);
  EXPECT_DOUBLE_EQ(metric_j(BinaryMask(8, 8), BinaryMask(8, 8)), 1.0);
  EXPECT_THROW(metric_j(a, BinaryMask(8, 7)), DimensionError);
}

TEST(MetricJ, SymmetricAndMatchesOracle) {
  Rng rng(1);
  for (int trial = 0; trial < 100; ++trial) {
    BinaryMask a(12, 9), b(12, 9);
    for (auto& p : a.pixels) p = rng.uniform() < 0.4;
    for (auto& p : b.pixels) p = rng.uniform() < 0.4;
    EXPECT_DOUBLE_EQ(metric_j(a, b), metric_j(b, a));
    EXPECT_DOUBLE_EQ(metric_j(a, b), oracle::iou(a, b));
  }
}

TEST(MetricF, WorkedCases) {
  const auto sq = rect(20, 20, 5, 5, 11, 11);
  EXPECT_DOUBLE_EQ(metric_f(sq, sq, 1), 1.0);
  EXPECT_DOUBLE_EQ(metric_f(sq, rect(20, 20, 5, 6, 11, 12), 1), 1.0);   // shifted by one pixel
  EXPECT_DOUBLE_EQ(metric_f(sq, rect(20, 20, 0, 14, 3, 19), 2), 0.0);  // far apart
  EXPECT_DOUBLE_EQ(metric_f(BinaryMask(20, 20), BinaryMask(20, 20), 1), 1.0);
  EXPECT_DOUBLE_EQ(metric_f(sq, BinaryMask(20, 20), 1), 0.0);
  EXPECT_LT(metric_f(sq, rect(20, 20, 5, 8, 11, 14), 1), 1.0);
}

TEST(MetricF, BoundaryIsErosionDifference) {
  const auto b = boundary(rect(6, 6, 1, 1, 5, 5));
  EXPECT_EQ(b.area(), 12u);
  EXPECT_FALSE(b.get(2, 2));
  EXPECT_TRUE(b.get(1, 3));
}

TEST(MetricF, SymmetricOnRandomMasks) {
  Rng rng(2);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t y = rng.below(10), x = rng.below(10), y2 = rng.below(10), x2 = rng.below(10);
    const auto a = rect(24, 24, y, x, y + 8, x + 8), b = rect(24, 24, y2, x2, y2 + 10, x2 + 6);
    EXPECT_DOUBLE_EQ(metric_f(a, b, 2), metric_f(b, a, 2));
  }
}

TEST(MetricF, DefaultTolerance) {
  EXPECT_DOUBLE_EQ(default_boundary_tolerance(64, 64), 1.0);
  EXPECT_DOUBLE_EQ(default_boundary_tolerance(480, 854), 8.0);
}

// ---------------------------------------------------------------------------
// Prediction metrics

TEST(PredictionMetrics, IdenticalFrames) {
  Rng rng(3);
  const auto x = random_image(rng, 16, 20);
  const auto m = metric_prediction({x, x}, {x, x});
  EXPECT_EQ(m.mse, 0.0);
  EXPECT_EQ(m.mae, 0.0);
  EXPECT_NEAR(m.ssim, 1.0, 1e-12);
  EXPECT_EQ(m.psnr, kPsnrCap);
}

TEST(PredictionMetrics, ConstantOffsetClosedForm) {
  Rng rng(4);
  const auto gt = random_image(rng, 16, 16, 0.0, 0.9);
  Image pred = gt;
  for (auto& v : pred.data()) v += 0.1;
  const auto m = metric_prediction({pred}, {gt});
  EXPECT_NEAR(m.mae, 0.1, 1e-12);
  EXPECT_NEAR(m.mse, 0.01, 1e-12);
  EXPECT_NEAR(m.psnr, 20.0, 1e-9);
}

TEST(PredictionMetrics, SsimMatchesDirectSummation) {
  Rng rng(5);
  for (int trial = 0; trial < 5; ++trial) {
    const auto a = random_image(rng, 13 + rng.below(8), 11 + rng.below(10));
    Image b = a;
    for (auto& v : b.data()) v = std::clamp(v + rng.uniform(-0.3, 0.3), 0.0, 1.0);
    EXPECT_NEAR(frame_ssim(a, b), oracle::ssim(a, b), 1e-8);
    const auto c = random_image(rng, a.dim(1), a.dim(2));
    EXPECT_NEAR(frame_ssim(a, c), oracle::ssim(a, c), 1e-8);
  }
}

TEST(PredictionMetrics, SsimDecreasesWithNoise) {
  Rng rng(6);
  const auto gt = gen_moving_shapes(clean_config(), 6).frames[0];
  double prev = frame_ssim(gt, gt);
  EXPECT_NEAR(prev, 1.0, 1e-12);
  Image noise({3, 64, 64});
  for (auto& v : noise.data()) v = rng.normal();
  for (double amp : {0.02, 0.05, 0.1, 0.2, 0.4}) {
    Image x = gt;
    for (std::size_t i = 0; i < x.size(); ++i) x[i] += amp * noise[i];
    const double s = frame_ssim(x, gt);
    EXPECT_LT(s, prev) << "amplitude " << amp;
    EXPECT_GE(s, 0.0);
    prev = s;
  }
}

TEST(PredictionMetrics, ErrorPaths) {
  Rng rng(7);
  const auto a = random_image(rng, 16, 16);
  EXPECT_THROW(metric_prediction({}, {}), ContractError);
  EXPECT_THROW(metric_prediction({a}, {a, a}), ContractError);
  EXPECT_THROW(frame_ssim(a, random_image(rng, 16, 17)), DimensionError);
  EXPECT_THROW(frame_ssim(random_image(rng, 8, 8), random_image(rng, 8, 8)), DimensionError);
}

// ---------------------------------------------------------------------------
// DAVIS-style ingestion

namespace {

// Two videos: "bear" with three frames and labels {0, 3, 7}, "car" with two
// frames and one annotated object (label 1).
void write_fixture(const fs::path& root) {
  Rng rng(8);
  for (const auto& [video, frames] : {std::pair<std::string, std::size_t>{"bear", 3}, {"car", 2}}) {
    fs::create_directories(root / "Frames" / video);
    fs::create_directories(root / "Masks" / video);
    for (std::size_t t = 0; t < frames; ++t) {
      write_rgb_png(root / "Frames" / video / frame_file(t), random_image(rng, 12, 10));
      LabelMap m(12, 10);
      if (video == "bear") {
        for (std::size_t x = 0; x < 10; ++x) m.at(2, x) = 3, m.at(8, x) = 7;
      } else {
        m.at(5, 5) = 1;
      }
      if (t == 0 || video == "bear") write_label_png(root / "Masks" / video / frame_file(t), m);
    }
  }
}

}  // namespace

TEST(Davis, LoadsFixtureTree) {
  TempDir dir;
  write_fixture(dir.path());
  const auto samples = load_davis_style(dir.path());
  ASSERT_EQ(samples.size(), 2u);
  EXPECT_EQ(samples[0].name, "bear");
  EXPECT_EQ(samples[0].length(), 3u);
  EXPECT_EQ(samples[1].name, "car");
  EXPECT_EQ(samples[1].length(), 2u);
  EXPECT_TRUE(samples[1].masks[0].has_value());
  EXPECT_FALSE(samples[1].masks[1].has_value());
  EXPECT_EQ(samples[0].height(), 12u);
  EXPECT_EQ(samples[0].width(), 10u);
}

TEST(Davis, DensifiesLabels) {
  TempDir dir;
  write_fixture(dir.path());
  const auto bear = load_davis_style(dir.path())[0];
  EXPECT_EQ(bear.object_count, 2);
  EXPECT_EQ(bear.label_values, (std::vector<int>{0, 3, 7}));
  EXPECT_EQ(bear.masks[0]->at(2, 0), 1);
  EXPECT_EQ(bear.masks[0]->at(8, 0), 2);
  EXPECT_EQ(bear.masks[0]->at(0, 0), 0);
}

TEST(Davis, PixelRoundTrip) {
  TempDir dir;
  Rng rng(9);
  Image im = random_image(rng, 5, 7);
  for (auto& v : im.data()) v = std::round(v * 255) / 255;
  write_rgb_png(dir.path() / "x.png", im);
  const auto back = read_rgb_png(dir.path() / "x.png");
  ASSERT_EQ(back.shape(), im.shape());
  for (std::size_t i = 0; i < im.size(); ++i) EXPECT_NEAR(back[i], im[i], 1e-12);
}

TEST(Davis, ExportRoundTrip) {
  TempDir dir;
  SyntheticConfig cfg;
  cfg.length = 4;
  cfg.occlusions.clear();
  cfg.appearance_switches = {2};
  const auto s = gen_moving_shapes(cfg, 10);
  export_davis_style(dir.path(), {s});
  const auto back = load_davis_style(dir.path());
  ASSERT_EQ(back.size(), 1u);
  ASSERT_EQ(back[0].length(), 4u);
  for (std::size_t t = 0; t < 4; ++t) {
    EXPECT_EQ(*back[0].masks[t], *s.masks[t]);
    for (std::size_t i = 0; i < s.frames[t].size(); ++i) ASSERT_NEAR(back[0].frames[t][i], s.frames[t][i], 0.5 / 255 + 1e-12);
  }
}

TEST(Davis, CorruptImageNamesThePath) {
  TempDir dir;
  write_fixture(dir.path());
  const fs::path bad = dir.path() / "Frames" / "car" / frame_file(1);
  std::ofstream(bad, std::ios::binary | std::ios::trunc) << "\x89PNG\r\n\x1a\nthis is not a png";
  try {
    load_davis_style(dir.path());
    FAIL() << "expected an ingestion error";
  } catch (const IngestionError& e) {
    EXPECT_NE(std::string(e.what()).find(bad.string()), std::string::npos) << e.what();
  }
}

TEST(Davis, MissingFirstMaskIsRejected) {
  TempDir dir;
  write_fixture(dir.path());
  fs::remove(dir.path() / "Masks" / "car" / frame_file(0));
  EXPECT_THROW(load_davis_style(dir.path()), IngestionError);
}

TEST(Davis, NonContiguousNumberingIsRejected) {
  TempDir dir;
  write_fixture(dir.path());
  fs::rename(dir.path() / "Frames" / "bear" / frame_file(2), dir.path() / "Frames" / "bear" / frame_file(4));
  EXPECT_THROW(load_davis_style(dir.path()), IngestionError);
}

TEST(Davis, MaskSizeMismatchIsRejected) {
  TempDir dir;
  write_fixture(dir.path());
  write_label_png(dir.path() / "Masks" / "car" / frame_file(0), LabelMap(12, 11));
  EXPECT_THROW(load_davis_style(dir.path()), IngestionError);
}
