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

#include "strm/tasks.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "strm/errors.hpp"
#include "strm/random.hpp"

namespace strm {

std::size_t LabelMap::count(int label) const {
  return static_cast<std::size_t>(std::count(labels.begin(), labels.end(), label));
}

BinaryMask BinaryMask::from_labels(const LabelMap& m, int label) {
  BinaryMask out(m.height, m.width);
  for (std::size_t i = 0; i < m.labels.size(); ++i) out.pixels[i] = m.labels[i] == label;
  return out;
}

std::size_t BinaryMask::area() const {
  return static_cast<std::size_t>(std::count_if(pixels.begin(), pixels.end(), [](auto v) { return v != 0; }));
}

// ---------------------------------------------------------------------------
// Synthetic generator

void SyntheticConfig::validate() const {
  if (height < 8 || width < 8) throw ConfigError("synthetic canvas must be at least 8x8");
  if (length < 2) throw ConfigError("synthetic sequence length must be >= 2");
  if (objects < 1) throw ConfigError("synthetic object count must be >= 1");
  if (noise < 0) throw ConfigError("synthetic noise level must be >= 0");
  if (min_radius <= 0 || max_radius < min_radius) throw ConfigError("bad synthetic radius range");
  if (min_speed < 0 || max_speed < min_speed) throw ConfigError("bad synthetic speed range");
  for (std::size_t f : appearance_switches) {
    if (f == 0 || f >= length)
      throw ConfigError("appearance switch at frame " + std::to_string(f) + " outside [1, " +
                        std::to_string(length) + ")");
  }
  for (const auto& iv : occlusions) {
    if (iv.start >= iv.end || iv.end > length)
      throw ConfigError("occlusion interval [" + std::to_string(iv.start) + ", " + std::to_string(iv.end) +
                        ") outside [0, " + std::to_string(length) + ")");
  }
  if (!occlusions.empty() && (occluded_object < 1 || occluded_object > objects))
    throw ConfigError("occluded object label out of range");
}

namespace {

using Color = std::array<double, 3>;

struct ObjectPlan {
  bool square = false;
  double radius = 0;
  double x0 = 0, y0 = 0, vx = 0, vy = 0;
  std::vector<Color> colors;  // one per appearance phase
};

struct Plan {
  std::vector<ObjectPlan> objects;
  Color bg_a{}, bg_b{};
  double bg_freq = 0, bg_phase = 0;
  Color occluder{};
  std::uint64_t noise_seed = 0;
};

double color_distance(const Color& a, const Color& b) {
  double d = 0;
  for (int c = 0; c < 3; ++c) d = std::max(d, std::abs(a[c] - b[c]));
  return d;
}

Color draw_color(Rng& rng, const Color* avoid) {
  // A fixed number of draws keeps the stream independent of the outcome.
  Color best{};
  double best_d = -1;
  for (int attempt = 0; attempt < 8; ++attempt) {
    Color c{rng.uniform(0.35, 1.0), rng.uniform(0.35, 1.0), rng.uniform(0.35, 1.0)};
    double d = avoid ? color_distance(c, *avoid) : 1.0;
    if (d > best_d) best = c, best_d = d;
  }
  return best;
}

// Every random draw happens here, up front, in a fixed order, so editing the
// schedules never perturbs motion or colours.
Plan make_plan(const SyntheticConfig& cfg, std::uint64_t seed) {
  Rng rng(seed);
  Plan plan;
  plan.bg_a = {rng.uniform(0.0, 0.2), rng.uniform(0.0, 0.2), rng.uniform(0.0, 0.2)};
  plan.bg_b = {rng.uniform(0.0, 0.2), rng.uniform(0.0, 0.2), rng.uniform(0.0, 0.2)};
  plan.bg_freq = rng.uniform(0.05, 0.2);
  plan.bg_phase = rng.uniform(0.0, 6.283185307179586);
  plan.occluder = {rng.uniform(0.25, 0.45), rng.uniform(0.25, 0.45), rng.uniform(0.25, 0.45)};
  const double h = static_cast<double>(cfg.height), w = static_cast<double>(cfg.width);
  const std::size_t phases = cfg.appearance_switches.size() + 1;
  for (int o = 0; o < cfg.objects; ++o) {
    ObjectPlan op;
    op.square = rng.uniform() < 0.5;
    op.radius = std::min(rng.uniform(cfg.min_radius, cfg.max_radius), 0.45 * std::min(h, w));
    op.x0 = rng.uniform(op.radius, w - 1 - op.radius);
    op.y0 = rng.uniform(op.radius, h - 1 - op.radius);
    const double speed = rng.uniform(cfg.min_speed, cfg.max_speed);
    const double angle = rng.uniform(0.0, 6.283185307179586);
    op.vx = speed * std::cos(angle);
    op.vy = speed * std::sin(angle);
    for (std::size_t p = 0; p < phases; ++p)
      op.colors.push_back(draw_color(rng, p ? &op.colors.back() : nullptr));
    plan.objects.push_back(std::move(op));
  }
  plan.noise_seed = rng.bits();
  return plan;
}

// Position after t steps of linear motion reflected inside [lo, hi].
double bounce(double start, double velocity, double t, double lo, double hi) {
  const double span = hi - lo;
  if (span <= 0) return lo;
  double p = std::fmod(start - lo + velocity * t, 2 * span);
  if (p < 0) p += 2 * span;
  return lo + (p <= span ? p : 2 * span - p);
}

std::size_t phase_at(const SyntheticConfig& cfg, std::size_t t) {
  return static_cast<std::size_t>(std::count_if(cfg.appearance_switches.begin(), cfg.appearance_switches.end(),
                                                [t](std::size_t s) { return s <= t; }));
}

bool inside(const ObjectPlan& o, double cx, double cy, double x, double y) {
  if (o.square) return std::abs(x - cx) <= 0.85 * o.radius && std::abs(y - cy) <= 0.85 * o.radius;
  return (x - cx) * (x - cx) + (y - cy) * (y - cy) <= o.radius * o.radius;
}

}  // namespace

std::vector<std::vector<Color>> object_colors(const SyntheticConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  const Plan plan = make_plan(cfg, seed);
  std::vector<std::vector<Color>> out(plan.objects.size());
  for (std::size_t o = 0; o < plan.objects.size(); ++o)
    for (std::size_t t = 0; t < cfg.length; ++t) out[o].push_back(plan.objects[o].colors[phase_at(cfg, t)]);
  return out;
}

SequenceSample gen_moving_shapes(const SyntheticConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  const Plan plan = make_plan(cfg, seed);
  Rng noise_rng(plan.noise_seed);
  const std::size_t H = cfg.height, W = cfg.width;

  SequenceSample s;
  s.name = "shapes_" + std::to_string(seed);
  s.object_count = cfg.objects;
  s.seed = seed;
  s.generator = "moving_shapes";
  s.label_values.resize(static_cast<std::size_t>(cfg.objects) + 1);
  std::iota(s.label_values.begin(), s.label_values.end(), 0);

  for (std::size_t t = 0; t < cfg.length; ++t) {
    Image img({3, H, W}, 0.0);
    LabelMap labels(H, W);
    for (std::size_t y = 0; y < H; ++y)
      for (std::size_t x = 0; x < W; ++x) {
        const double m = 0.5 + 0.5 * std::sin(plan.bg_freq * (double(x) + 0.7 * double(y)) + plan.bg_phase);
        for (std::size_t c = 0; c < 3; ++c) img.at(c, y, x) = (1 - m) * plan.bg_a[c] + m * plan.bg_b[c];
      }

    std::vector<std::pair<double, double>> centers;
    for (std::size_t o = 0; o < plan.objects.size(); ++o) {
      const ObjectPlan& op = plan.objects[o];
      const double cx = bounce(op.x0, op.vx, double(t), op.radius, double(W) - 1 - op.radius);
      const double cy = bounce(op.y0, op.vy, double(t), op.radius, double(H) - 1 - op.radius);
      centers.emplace_back(cx, cy);
      const Color& col = op.colors[phase_at(cfg, t)];
      for (std::size_t y = 0; y < H; ++y)
        for (std::size_t x = 0; x < W; ++x)
          if (inside(op, cx, cy, double(x), double(y))) {
            labels.at(y, x) = static_cast<int>(o) + 1;
            for (std::size_t c = 0; c < 3; ++c) img.at(c, y, x) = col[c];
          }
    }

    const bool occluded = std::any_of(cfg.occlusions.begin(), cfg.occlusions.end(),
                                      [t](const Interval& iv) { return t >= iv.start && t < iv.end; });
    if (occluded) {
      // Distractor square over the target's lower-right quadrant, centred
      // inside the target so it always covers part of it.
      const ObjectPlan& target = plan.objects[static_cast<std::size_t>(cfg.occluded_object - 1)];
      const auto [tx, ty] = centers[static_cast<std::size_t>(cfg.occluded_object - 1)];
      const double half = 0.7 * target.radius;
      const double ox = tx + 0.5 * target.radius, oy = ty + 0.5 * target.radius;
      for (std::size_t y = 0; y < H; ++y)
        for (std::size_t x = 0; x < W; ++x)
          if (std::abs(double(x) - ox) <= half && std::abs(double(y) - oy) <= half) {
            labels.at(y, x) = 0;
            for (std::size_t c = 0; c < 3; ++c) img.at(c, y, x) = plan.occluder[c];
          }
    }

    if (cfg.noise > 0) {
      for (auto& v : img.data()) v = std::clamp(v + cfg.noise * noise_rng.normal(), 0.0, 1.0);
    }
    s.frames.push_back(std::move(img));
    s.masks.emplace_back(std::move(labels));
  }
  return s;
}

// ---------------------------------------------------------------------------
// Segmentation metrics

namespace {
void require_same_dims(const BinaryMask& a, const BinaryMask& b, const char* what) {
  if (a.height != b.height || a.width != b.width || a.pixels.size() != b.pixels.size())
    throw DimensionError(std::string(what) + ": mask sizes differ (" + std::to_string(a.height) + "x" +
                         std::to_string(a.width) + " vs " + std::to_string(b.height) + "x" +
                         std::to_string(b.width) + ")");
}

BinaryMask dilate(const BinaryMask& m, double radius) {
  BinaryMask out(m.height, m.width);
  const long r = static_cast<long>(std::floor(radius));
  std::vector<std::pair<long, long>> offsets;
  for (long dy = -r; dy <= r; ++dy)
    for (long dx = -r; dx <= r; ++dx)
      if (double(dx * dx + dy * dy) <= radius * radius) offsets.emplace_back(dy, dx);
  for (long y = 0; y < long(m.height); ++y)
    for (long x = 0; x < long(m.width); ++x) {
      if (!m.get(y, x)) continue;
      for (auto [dy, dx] : offsets) {
        const long yy = y + dy, xx = x + dx;
        if (yy >= 0 && xx >= 0 && yy < long(m.height) && xx < long(m.width))
          out.pixels[std::size_t(yy) * m.width + std::size_t(xx)] = 1;
      }
    }
  return out;
}

double matched_fraction(const BinaryMask& boundary_a, const BinaryMask& dilated_b) {
  std::size_t total = 0, hit = 0;
  for (std::size_t i = 0; i < boundary_a.pixels.size(); ++i) {
    if (!boundary_a.pixels[i]) continue;
    ++total;
    hit += dilated_b.pixels[i] != 0;
  }
  return total ? double(hit) / double(total) : 0.0;
}
}  // namespace

double metric_j(const BinaryMask& pred, const BinaryMask& gt) {
  require_same_dims(pred, gt, "metric_j");
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < pred.pixels.size(); ++i) {
    const bool p = pred.pixels[i] != 0, g = gt.pixels[i] != 0;
    inter += p && g;
    uni += p || g;
  }
  return uni == 0 ? 1.0 : double(inter) / double(uni);
}

BinaryMask boundary(const BinaryMask& mask) {
  // Pixels outside the image count as background, so objects touching the
  // border have a boundary there.
  BinaryMask out(mask.height, mask.width);
  for (long y = 0; y < long(mask.height); ++y)
    for (long x = 0; x < long(mask.width); ++x) {
      if (!mask.get(y, x)) continue;
      const bool interior = mask.get(y - 1, x) && mask.get(y + 1, x) && mask.get(y, x - 1) && mask.get(y, x + 1);
      out.pixels[std::size_t(y) * mask.width + std::size_t(x)] = !interior;
    }
  return out;
}

double metric_f(const BinaryMask& pred, const BinaryMask& gt, double tol_px) {
  require_same_dims(pred, gt, "metric_f");
  if (tol_px < 0) throw ConfigError("boundary tolerance must be >= 0");
  const BinaryMask bp = boundary(pred), bg = boundary(gt);
  const std::size_t np = bp.area(), ng = bg.area();
  if (np == 0 && ng == 0) return 1.0;
  if (np == 0 || ng == 0) return 0.0;
  const double precision = matched_fraction(bp, dilate(bg, tol_px));
  const double recall = matched_fraction(bg, dilate(bp, tol_px));
  if (precision + recall == 0) return 0.0;
  return 2 * precision * recall / (precision + recall);
}

double default_boundary_tolerance(std::size_t height, std::size_t width) {
  return std::ceil(0.008 * std::hypot(double(height), double(width)));
}

// ---------------------------------------------------------------------------
// Prediction metrics

namespace {
void require_same_image(const Image& a, const Image& b) {
  if (a.shape() != b.shape())
    throw DimensionError("frame shapes differ: " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  if (a.rank() != 3) throw DimensionError("frames must be C x H x W, got " + shape_string(a.shape()));
}

std::vector<double> gaussian_window() {
  constexpr int n = 11;
  constexpr double sigma = 1.5;
  std::vector<double> g(n);
  double total = 0;
  for (int i = 0; i < n; ++i) {
    const double d = i - n / 2;
    g[std::size_t(i)] = std::exp(-d * d / (2 * sigma * sigma));
    total += g[std::size_t(i)];
  }
  for (auto& v : g) v /= total;
  return g;
}
}  // namespace

double frame_mse(const Image& a, const Image& b) {
  require_same_image(a, b);
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s / double(a.size());
}

double frame_mae(const Image& a, const Image& b) {
  require_same_image(a, b);
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += std::abs(a[i] - b[i]);
  return s / double(a.size());
}

double psnr_from_mse(double mse) {
  if (mse <= 0) return kPsnrCap;
  return std::min(kPsnrCap, -10.0 * std::log10(mse));
}

double frame_ssim(const Image& a, const Image& b) {
  require_same_image(a, b);
  constexpr std::size_t n = 11;
  constexpr double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
  const std::size_t C = a.dim(0), H = a.dim(1), W = a.dim(2);
  if (H < n || W < n) throw DimensionError("SSIM needs frames of at least 11x11, got " + shape_string(a.shape()));
  static const std::vector<double> g = gaussian_window();
  const std::size_t oh = H - n + 1, ow = W - n + 1;

  // Separable filtering of x, y, x^2, y^2 and xy: rows first, then columns.
  auto filter = [&](const std::vector<double>& src) {
    std::vector<double> rows(H * ow, 0.0), out(oh * ow, 0.0);
    for (std::size_t y = 0; y < H; ++y)
      for (std::size_t x = 0; x < ow; ++x) {
        double s = 0;
        for (std::size_t k = 0; k < n; ++k) s += g[k] * src[y * W + x + k];
        rows[y * ow + x] = s;
      }
    for (std::size_t y = 0; y < oh; ++y)
      for (std::size_t x = 0; x < ow; ++x) {
        double s = 0;
        for (std::size_t k = 0; k < n; ++k) s += g[k] * rows[(y + k) * ow + x];
        out[y * ow + x] = s;
      }
    return out;
  };

  double total = 0;
  std::vector<double> x(H * W), y(H * W), xx(H * W), yy(H * W), xy(H * W);
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t i = 0; i < H * W; ++i) {
      x[i] = a[c * H * W + i];
      y[i] = b[c * H * W + i];
      xx[i] = x[i] * x[i];
      yy[i] = y[i] * y[i];
      xy[i] = x[i] * y[i];
    }
    const auto mx = filter(x), my = filter(y), sxx = filter(xx), syy = filter(yy), sxy = filter(xy);
    double sum = 0;
    for (std::size_t i = 0; i < oh * ow; ++i) {
      const double vx = sxx[i] - mx[i] * mx[i], vy = syy[i] - my[i] * my[i], cxy = sxy[i] - mx[i] * my[i];
      sum += ((2 * mx[i] * my[i] + c1) * (2 * cxy + c2)) /
             ((mx[i] * mx[i] + my[i] * my[i] + c1) * (vx + vy + c2));
    }
    total += sum / double(oh * ow);
  }
  return total / double(C);
}

PredictionMetrics metric_prediction(const std::vector<Image>& pred, const std::vector<Image>& gt) {
  if (pred.empty()) throw ContractError("metric_prediction: empty prediction horizon");
  if (pred.size() != gt.size())
    throw ContractError("metric_prediction: " + std::to_string(pred.size()) + " predicted frames vs " +
                        std::to_string(gt.size()) + " ground-truth frames");
  PredictionMetrics m;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double mse = frame_mse(pred[i], gt[i]);
    m.mse += mse;
    m.mae += frame_mae(pred[i], gt[i]);
    m.ssim += frame_ssim(pred[i], gt[i]);
    m.psnr += psnr_from_mse(mse);
  }
  const double n = double(pred.size());
  m.mse /= n;
  m.mae /= n;
  m.ssim /= n;
  m.psnr /= n;
  return m;
}

}  // namespace strm
