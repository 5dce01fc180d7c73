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

#include <png.h>

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <cstring>
#include <map>
#include <memory>
#include <set>

#include "strm/errors.hpp"
#include "strm/tasks.hpp"

namespace fs = std::filesystem;

namespace strm {
namespace {

struct FileCloser {
  void operator()(std::FILE* f) const { std::fclose(f); }
};
using File = std::unique_ptr<std::FILE, FileCloser>;

File open_file(const fs::path& path, const char* mode) {
  File f(std::fopen(path.c_str(), mode));
  if (!f) throw IoError("cannot open " + path.string());
  return f;
}

void on_png_error(png_structp png, png_const_charp) { longjmp(png_jmpbuf(png), 1); }
void on_png_warning(png_structp, png_const_charp) {}

// Raw decode: 8- or 16-bit samples, palette kept as indices.
struct RawPng {
  std::uint32_t width = 0, height = 0;
  int channels = 0;
  int bit_depth = 0;
  bool palette = false;
  std::vector<png_color> palette_entries;
  std::vector<std::uint16_t> samples;
};

// Never lets a longjmp cross a live C++ destructor: all heap state lives in
// `out`, which outlives the jump target.
bool decode_png(std::FILE* fp, RawPng& out) {
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, on_png_error, on_png_warning);
  if (!png) return false;
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    return false;
  }
  std::vector<png_bytep>* rows = new std::vector<png_bytep>();
  std::vector<png_byte>* buffer = new std::vector<png_byte>();
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    delete rows;
    delete buffer;
    return false;
  }
  png_init_io(png, fp);
  png_read_info(png, info);
  const int color_type = png_get_color_type(png, info);
  int depth = png_get_bit_depth(png, info);
  if (color_type == PNG_COLOR_TYPE_PALETTE) {
    out.palette = true;
    png_colorp pal = nullptr;
    int n = 0;
    if (png_get_PLTE(png, info, &pal, &n)) out.palette_entries.assign(pal, pal + n);
    if (depth < 8) png_set_packing(png);
  } else if (depth < 8) {
    png_set_expand_gray_1_2_4_to_8(png);
  }
  if (png_get_valid(png, info, PNG_INFO_tRNS) && color_type != PNG_COLOR_TYPE_PALETTE) png_set_tRNS_to_alpha(png);
  if (depth == 16) png_set_swap(png);  // host order on little-endian hosts
  png_read_update_info(png, info);
  out.width = png_get_image_width(png, info);
  out.height = png_get_image_height(png, info);
  out.channels = png_get_channels(png, info);
  depth = png_get_bit_depth(png, info);
  out.bit_depth = depth;
  const std::size_t rowbytes = png_get_rowbytes(png, info);
  buffer->resize(rowbytes * out.height);
  rows->resize(out.height);
  for (std::uint32_t y = 0; y < out.height; ++y) (*rows)[y] = buffer->data() + y * rowbytes;
  png_read_image(png, rows->data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);

  const std::size_t count = std::size_t(out.width) * out.height * std::size_t(out.channels);
  out.samples.resize(count);
  for (std::size_t i = 0; i < count; ++i) {
    if (depth == 16) {
      std::uint16_t v;
      std::memcpy(&v, buffer->data() + 2 * i, 2);
      out.samples[i] = v;
    } else {
      out.samples[i] = (*buffer)[i];
    }
  }
  delete rows;
  delete buffer;
  return true;
}

RawPng read_raw(const fs::path& path) {
  File f = open_file(path, "rb");
  png_byte sig[8] = {};
  if (std::fread(sig, 1, 8, f.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0)
    throw IngestionError("not a PNG file: " + path.string());
  RawPng raw;
  std::rewind(f.get());
  if (!decode_png(f.get(), raw)) throw IngestionError("corrupt PNG file: " + path.string());
  return raw;
}

void write_png(const fs::path& path, std::uint32_t w, std::uint32_t h, int color_type,
               const std::vector<png_byte>& pixels, int channels) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  File f = open_file(path, "wb");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, on_png_error, on_png_warning);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw IoError("libpng initialisation failed for " + path.string());
  }
  std::vector<png_bytep> rows(h);
  for (std::uint32_t y = 0; y < h; ++y)
    rows[y] = const_cast<png_bytep>(pixels.data()) + std::size_t(y) * w * std::size_t(channels);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("failed writing " + path.string());
  }
  png_init_io(png, f.get());
  png_set_IHDR(png, info, w, h, 8, color_type, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  // Fixed settings and no timestamps so equal inputs give equal bytes.
  png_set_compression_level(png, 6);
  png_write_info(png, info);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

bool is_frame_name(const fs::path& p) {
  const std::string stem = p.stem().string();
  return p.extension() == ".png" && stem.size() == 5 &&
         std::all_of(stem.begin(), stem.end(), [](char c) { return c >= '0' && c <= '9'; });
}

// Numbered PNGs of one directory, sorted, contiguous from 0.
std::vector<fs::path> numbered_frames(const fs::path& dir, bool require_contiguous) {
  std::map<int, fs::path> found;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_regular_file() || entry.path().extension() != ".png") continue;
    if (!is_frame_name(entry.path()))
      throw IngestionError("frame file name is not 5-digit zero-padded: " + entry.path().string());
    found.emplace(std::stoi(entry.path().stem().string()), entry.path());
  }
  std::vector<fs::path> out;
  int expected = 0;
  for (const auto& [index, path] : found) {
    if (require_contiguous && index != expected)
      throw IngestionError("non-contiguous frame numbering in " + dir.string() + ": expected " +
                           std::to_string(expected) + ", found " + std::to_string(index));
    out.push_back(path);
    expected = index + 1;
  }
  return out;
}

std::string frame_file(std::size_t i) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%05zu.png", i);
  return buf;
}

}  // namespace

Image read_rgb_png(const fs::path& path) {
  RawPng raw = read_raw(path);
  Image img({3, raw.height, raw.width}, 0.0);
  const double scale = raw.bit_depth == 16 ? 65535.0 : 255.0;
  for (std::uint32_t y = 0; y < raw.height; ++y)
    for (std::uint32_t x = 0; x < raw.width; ++x) {
      const std::size_t base = (std::size_t(y) * raw.width + x) * std::size_t(raw.channels);
      for (std::size_t c = 0; c < 3; ++c) {
        double v;
        if (raw.palette) {
          const std::uint16_t idx = raw.samples[base];
          if (idx >= raw.palette_entries.size()) throw IngestionError("palette index out of range in " + path.string());
          const png_color& e = raw.palette_entries[idx];
          v = (c == 0 ? e.red : c == 1 ? e.green : e.blue) / 255.0;
        } else if (raw.channels >= 3) {
          v = raw.samples[base + c] / scale;
        } else {
          v = raw.samples[base] / scale;  // grey replicated
        }
        img.at(c, y, x) = v;
      }
    }
  return img;
}

LabelMap read_label_png(const fs::path& path) {
  RawPng raw = read_raw(path);
  if (!raw.palette && raw.channels != 1 && raw.channels != 2)
    throw IngestionError("label image must be palette or greyscale: " + path.string());
  LabelMap m(raw.height, raw.width);
  for (std::size_t i = 0; i < m.labels.size(); ++i)
    m.labels[i] = raw.samples[i * std::size_t(raw.channels)];
  return m;
}

void write_rgb_png(const fs::path& path, const Image& image) {
  if (image.rank() != 3 || image.dim(0) != 3) throw DimensionError("RGB image must be 3 x H x W");
  const std::size_t H = image.dim(1), W = image.dim(2);
  std::vector<png_byte> px(H * W * 3);
  for (std::size_t y = 0; y < H; ++y)
    for (std::size_t x = 0; x < W; ++x)
      for (std::size_t c = 0; c < 3; ++c)
        px[(y * W + x) * 3 + c] =
            static_cast<png_byte>(std::lround(std::clamp(image.at(c, y, x), 0.0, 1.0) * 255.0));
  write_png(path, std::uint32_t(W), std::uint32_t(H), PNG_COLOR_TYPE_RGB, px, 3);
}

void write_label_png(const fs::path& path, const LabelMap& labels) {
  std::vector<png_byte> px(labels.labels.size());
  for (std::size_t i = 0; i < px.size(); ++i) {
    const int v = labels.labels[i];
    if (v < 0 || v > 255) throw ContractError("label " + std::to_string(v) + " does not fit an 8-bit PNG");
    px[i] = static_cast<png_byte>(v);
  }
  write_png(path, std::uint32_t(labels.width), std::uint32_t(labels.height), PNG_COLOR_TYPE_GRAY, px, 1);
}

std::vector<SequenceSample> load_davis_style(const fs::path& root) {
  const fs::path frames_root = root / "Frames", masks_root = root / "Masks";
  if (!fs::is_directory(frames_root)) throw IngestionError("missing directory " + frames_root.string());
  if (!fs::is_directory(masks_root)) throw IngestionError("missing directory " + masks_root.string());

  std::vector<fs::path> videos;
  for (const auto& entry : fs::directory_iterator(frames_root))
    if (entry.is_directory()) videos.push_back(entry.path());
  std::sort(videos.begin(), videos.end());

  std::vector<SequenceSample> out;
  for (const fs::path& video : videos) {
    SequenceSample s;
    s.name = video.filename().string();
    s.generator = "davis_style";
    const auto frame_paths = numbered_frames(video, true);
    if (frame_paths.empty()) throw IngestionError("no frames in " + video.string());
    for (const auto& p : frame_paths) {
      s.frames.push_back(read_rgb_png(p));
      if (s.frames.back().shape() != s.frames.front().shape())
        throw IngestionError("frame size differs from frame 0: " + p.string());
    }

    const fs::path mask_dir = masks_root / s.name;
    s.masks.assign(s.frames.size(), std::nullopt);
    if (fs::is_directory(mask_dir)) {
      for (const auto& p : numbered_frames(mask_dir, false)) {
        const std::size_t idx = std::size_t(std::stoi(p.stem().string()));
        if (idx >= s.frames.size()) throw IngestionError("mask without a frame: " + p.string());
        LabelMap m = read_label_png(p);
        if (m.height != s.height() || m.width != s.width())
          throw IngestionError("mask size " + std::to_string(m.height) + "x" + std::to_string(m.width) +
                               " does not match frame size " + std::to_string(s.height()) + "x" +
                               std::to_string(s.width()) + ": " + p.string());
        s.masks[idx] = std::move(m);
      }
    }
    if (!s.masks.front())
      throw IngestionError("missing first-frame mask " + (mask_dir / frame_file(0)).string());

    std::set<int> values{0};
    for (const auto& m : s.masks)
      if (m) values.insert(m->labels.begin(), m->labels.end());
    s.label_values.assign(values.begin(), values.end());
    std::map<int, int> dense;
    for (std::size_t i = 0; i < s.label_values.size(); ++i) dense[s.label_values[i]] = int(i);
    for (auto& m : s.masks)
      if (m)
        for (int& v : m->labels) v = dense[v];
    s.object_count = int(s.label_values.size()) - 1;
    out.push_back(std::move(s));
  }
  return out;
}

void export_davis_style(const fs::path& root, const std::vector<SequenceSample>& samples) {
  for (const auto& s : samples) {
    const fs::path fdir = root / "Frames" / s.name, mdir = root / "Masks" / s.name;
    fs::create_directories(fdir);
    fs::create_directories(mdir);
    for (std::size_t i = 0; i < s.frames.size(); ++i) write_rgb_png(fdir / frame_file(i), s.frames[i]);
    for (std::size_t i = 0; i < s.masks.size(); ++i) {
      if (!s.masks[i]) continue;
      LabelMap m = *s.masks[i];
      if (!s.label_values.empty())
        for (int& v : m.labels) v = s.label_values.at(std::size_t(v));
      write_label_png(mdir / frame_file(i), m);
    }
  }
}

}  // namespace strm
