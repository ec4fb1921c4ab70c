#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "radious/data/palette.hpp"
#include "radious/data/sample.hpp"
#include "radious/io/png.hpp"

namespace radious::app {

// Synthetic benchmark dataset: bright geometric "tooth-like" shapes over a
// textured darker background. Each class has a distinctive shape family and
// intensity band so a desk-scale model can reach high IoU in minutes, while
// the texture keeps the task from collapsing to a constant threshold.
struct SyntheticSpec {
  int count = 200;
  int width = 128;
  int height = 128;
  int num_classes = 4;  // foreground classes, ids 1..num_classes
  std::uint64_t seed = 2024;
};

inline data::ClassPalette synthetic_palette(int num_classes) {
  std::vector<data::PaletteEntry> entries;
  entries.push_back({0, "background", {0, 0, 0}});
  for (int c = 1; c <= num_classes; ++c)
    entries.push_back({c, "shape_" + std::to_string(c), data::detail::wheel_color(c)});
  return data::ClassPalette(std::move(entries));
}

namespace detail {

struct Shape {
  int cls = 1;       // palette id
  double cy = 0, cx = 0;
  double radius = 0;
};

// Class shape families: 1 = disk, 2 = square, 3 = triangle, 4 = ring; higher
// ids cycle through the same families rotated by intensity.
inline bool shape_contains(const Shape& s, int y, int x) {
  const double dy = y - s.cy, dx = x - s.cx;
  switch ((s.cls - 1) % 4) {
    case 0:
      return dy * dy + dx * dx <= s.radius * s.radius;
    case 1:
      return std::abs(dy) <= s.radius * 0.9 && std::abs(dx) <= s.radius * 0.9;
    case 2:  // upward triangle: |dx| grows with dy
      return dy >= -s.radius && dy <= s.radius && std::abs(dx) <= (dy + s.radius) * 0.6;
    default: {
      const double d2 = dy * dy + dx * dx;
      const double inner = s.radius * 0.45;
      return d2 <= s.radius * s.radius && d2 >= inner * inner;
    }
  }
}

inline double shape_intensity(int cls) {
  // Bands: 140, 175, 210, 245 for classes 1..4, cycling afterwards.
  return 140.0 + 35.0 * ((cls - 1) % 4);
}

}  // namespace detail

// Deterministic: identical spec -> identical pixel data.
inline std::vector<data::ImageSample> generate_synthetic_samples(const SyntheticSpec& spec) {
  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<data::ImageSample> out;
  out.reserve(static_cast<std::size_t>(spec.count));
  int class_cursor = 0;  // running counter keeps class frequencies uniform

  for (int i = 0; i < spec.count; ++i) {
    data::ImageSample s;
    char id[32];
    std::snprintf(id, sizeof(id), "synth_%04d", i);
    s.id = id;
    s.source_kind = data::SourceKind::kOpg;
    s.image.width = s.mask.width = spec.width;
    s.image.height = s.mask.height = spec.height;
    s.image.pixels.assign(static_cast<std::size_t>(spec.width) * spec.height, 0);
    s.mask.pixels.assign(s.image.pixels.size(), 0);

    // Textured background: two low-frequency waves plus per-pixel noise.
    const double phase_a = unit(rng) * 6.28318530717958648;
    const double phase_b = unit(rng) * 6.28318530717958648;
    for (int y = 0; y < spec.height; ++y)
      for (int x = 0; x < spec.width; ++x) {
        const double wave = 12.0 * std::sin(0.055 * x + phase_a) + 10.0 * std::cos(0.07 * y + phase_b);
        const double noise = (unit(rng) - 0.5) * 22.0;
        const double v = 52.0 + wave + noise;
        s.image.pixels[static_cast<std::size_t>(y) * spec.width + x] =
            static_cast<std::uint8_t>(std::clamp(v, 0.0, 255.0));
      }

    // One or two non-overlapping shapes; classes round-robin so frequencies
    // stay roughly uniform across the corpus.
    const int shape_count = 1 + (i % 2);
    std::vector<detail::Shape> placed;
    for (int k = 0; k < shape_count && static_cast<int>(placed.size()) < shape_count; ++k) {
      detail::Shape sh;
      sh.cls = class_cursor++ % spec.num_classes + 1;
      for (int attempt = 0; attempt < 24; ++attempt) {
        sh.radius = 22.0 + unit(rng) * 18.0;
        const double margin = sh.radius + 3.0;
        sh.cy = margin + unit(rng) * (spec.height - 2 * margin);
        sh.cx = margin + unit(rng) * (spec.width - 2 * margin);
        bool clear = true;
        for (const auto& other : placed) {
          const double dy = sh.cy - other.cy, dx = sh.cx - other.cx;
          if (std::sqrt(dy * dy + dx * dx) < sh.radius + other.radius + 6.0) clear = false;
        }
        if (clear) {
          placed.push_back(sh);
          break;
        }
      }
    }

    for (const auto& sh : placed) {
      const double base = detail::shape_intensity(sh.cls);
      const int y0 = std::max(0, static_cast<int>(sh.cy - sh.radius - 1));
      const int y1 = std::min(spec.height - 1, static_cast<int>(sh.cy + sh.radius + 1));
      const int x0 = std::max(0, static_cast<int>(sh.cx - sh.radius - 1));
      const int x1 = std::min(spec.width - 1, static_cast<int>(sh.cx + sh.radius + 1));
      for (int y = y0; y <= y1; ++y)
        for (int x = x0; x <= x1; ++x)
          if (detail::shape_contains(sh, y, x)) {
            const std::size_t px = static_cast<std::size_t>(y) * spec.width + x;
            const double v = base + (unit(rng) - 0.5) * 14.0;
            s.image.pixels[px] = static_cast<std::uint8_t>(std::clamp(v, 0.0, 255.0));
            s.mask.pixels[px] = static_cast<std::uint8_t>(sh.cls);
          }
    }
    out.push_back(std::move(s));
  }
  return out;
}

// Writes samples in the dataset layout datakit ingests: images/<id>.png and
// masks/<id>.png under `root`.
inline void write_dataset(const std::string& root, const std::vector<data::ImageSample>& samples) {
  namespace fs = std::filesystem;
  fs::create_directories(fs::path(root) / "images");
  fs::create_directories(fs::path(root) / "masks");
  for (const auto& s : samples) {
    io::write_png_gray8((fs::path(root) / "images" / (s.id + ".png")).string(), s.image);
    io::write_png_gray8((fs::path(root) / "masks" / (s.id + ".png")).string(), s.mask);
  }
}

inline void generate_synthetic_dataset(const std::string& root, const SyntheticSpec& spec) {
  write_dataset(root, generate_synthetic_samples(spec));
}

}  // namespace radious::app
