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

#ifndef STRM_TASKS_HPP_
#define STRM_TASKS_HPP_

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "strm/tensor.hpp"

namespace strm {

using Image = Tensor<double>;  // 3 x H x W, values in [0, 1]

struct LabelMap {
  std::size_t height = 0, width = 0;
  std::vector<int> labels;  // row-major, 0 = background

  LabelMap() = default;
  LabelMap(std::size_t h, std::size_t w) : height(h), width(w), labels(h * w, 0) {}
  int& at(std::size_t y, std::size_t x) { return labels[y * width + x]; }
  int at(std::size_t y, std::size_t x) const { return labels[y * width + x]; }
  std::size_t count(int label) const;
  friend bool operator==(const LabelMap&, const LabelMap&) = default;
};

struct BinaryMask {
  std::size_t height = 0, width = 0;
  std::vector<std::uint8_t> pixels;

  BinaryMask() = default;
  BinaryMask(std::size_t h, std::size_t w) : height(h), width(w), pixels(h * w, 0) {}
  static BinaryMask from_labels(const LabelMap& m, int label);
  std::size_t area() const;
  bool get(long y, long x) const {
    return y >= 0 && x >= 0 && y < static_cast<long>(height) && x < static_cast<long>(width) &&
           pixels[static_cast<std::size_t>(y) * width + static_cast<std::size_t>(x)] != 0;
  }
};

struct SequenceSample {
  std::string name;
  std::vector<Image> frames;
  // Per-frame ground truth; only frame 0 is mandatory for real data.
  std::vector<std::optional<LabelMap>> masks;
  int object_count = 0;
  // original label value of each dense label (index 0 = background)
  std::vector<int> label_values;
  std::uint64_t seed = 0;
  std::string generator;

  std::size_t length() const { return frames.size(); }
  std::size_t height() const { return frames.empty() ? 0 : frames.front().shape()[1]; }
  std::size_t width() const { return frames.empty() ? 0 : frames.front().shape()[2]; }
};

struct Interval {
  std::size_t start = 0, end = 0;  // [start, end)
};

struct SyntheticConfig {
  std::size_t height = 64, width = 64;
  std::size_t length = 40;
  int objects = 2;
  std::vector<std::size_t> appearance_switches{20};
  std::vector<Interval> occlusions{{10, 15}};
  int occluded_object = 1;
  double noise = 0.02;
  double min_radius = 6.0, max_radius = 10.0;
  double min_speed = 0.8, max_speed = 2.2;

  void validate() const;
};

// Moving circles/squares with bounce, colour switches on schedule and a
// distractor that partially covers `occluded_object` during each occlusion
// interval. Deterministic per (config, seed).
SequenceSample gen_moving_shapes(const SyntheticConfig& cfg, std::uint64_t seed);

// Mean noise-free colour of every object at every frame (objects x frames x 3),
// which changes exactly at the scheduled switch frames.
std::vector<std::vector<std::array<double, 3>>> object_colors(const SyntheticConfig& cfg,
                                                             std::uint64_t seed);

double metric_j(const BinaryMask& pred, const BinaryMask& gt);
double metric_f(const BinaryMask& pred, const BinaryMask& gt, double tol_px);
// ceil(0.008 * image diagonal).
double default_boundary_tolerance(std::size_t height, std::size_t width);
BinaryMask boundary(const BinaryMask& mask);

struct PredictionMetrics {
  double mse = 0, mae = 0, ssim = 0, psnr = 0;
};

inline constexpr double kPsnrCap = 99.0;

double frame_mse(const Image& a, const Image& b);
double frame_mae(const Image& a, const Image& b);
// Mean SSIM over the valid region, 11x11 Gaussian (sigma 1.5), C1 = 0.01^2,
// C2 = 0.03^2 on unit range, averaged across channels.
double frame_ssim(const Image& a, const Image& b);
double psnr_from_mse(double mse);
PredictionMetrics metric_prediction(const std::vector<Image>& pred, const std::vector<Image>& gt);

// Frames/<video>/NNNNN.png and Masks/<video>/NNNNN.png.
std::vector<SequenceSample> load_davis_style(const std::filesystem::path& root);
void export_davis_style(const std::filesystem::path& root, const std::vector<SequenceSample>& samples);

// PNG helpers.
Image read_rgb_png(const std::filesystem::path& path);
LabelMap read_label_png(const std::filesystem::path& path);
void write_rgb_png(const std::filesystem::path& path, const Image& image);
void write_label_png(const std::filesystem::path& path, const LabelMap& labels);

}  // namespace strm

#endif  // STRM_TASKS_HPP_
