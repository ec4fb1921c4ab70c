#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "radious/data/palette.hpp"
#include "radious/data/sample.hpp"
#include "radious/error.hpp"

namespace radious::data {

enum class Split { kTrain, kTest };

struct DatasetManifest {
  std::vector<ImageSample> samples;
  std::map<std::string, Split> split;  // sample id -> assignment

  const ImageSample* find(const std::string& id) const {
    for (const auto& s : samples)
      if (s.id == id) return &s;
    return nullptr;
  }
};

namespace detail {

inline void check_mask_labels(const ImageSample& s, const ClassPalette& palette,
                              const std::string& file) {
  for (std::uint8_t v : s.mask.pixels)
    if (!palette.contains(v))
      fail("label", "mask '" + file + "' contains value " + std::to_string(int(v)) +
                        " outside the " + std::to_string(palette.size()) + "-entry palette");
}

// Nearest-neighbor source index under the align-corners-false convention:
// the destination pixel center maps to src = (dst + 0.5) * in / out.
inline int nearest_src_index(int dst, int in, int out) {
  const int src = static_cast<int>(std::floor((dst + 0.5) * static_cast<double>(in) / out));
  return std::min(in - 1, std::max(0, src));
}

}  // namespace detail

// Loads `root/images/*.png` with matching `root/masks/*.png`. Sample order is
// the sorted basename order, so manifests are reproducible across runs.
inline DatasetManifest load_dataset(const std::string& root_path, const ClassPalette& palette) {
  namespace fs = std::filesystem;
  const fs::path root(root_path);
  const fs::path images = root / "images";
  const fs::path masks = root / "masks";
  if (!fs::is_directory(images)) fail("io", "missing images directory '" + images.string() + "'");
  if (!fs::is_directory(masks)) fail("io", "missing masks directory '" + masks.string() + "'");

  std::map<std::string, SourceKind> kinds;
  const fs::path manifest_file = root / "manifest.json";
  if (fs::exists(manifest_file)) {
    std::ifstream in(manifest_file);
    nlohmann::json j;
    try {
      in >> j;
    } catch (const std::exception& e) {
      fail("parse", "invalid manifest json in '" + manifest_file.string() + "': " + e.what());
    }
    for (auto it = j.begin(); it != j.end(); ++it)
      kinds[it.key()] = source_kind_from_string(it.value().at("source_kind").get<std::string>());
  }

  std::vector<std::string> names;
  for (const auto& entry : fs::directory_iterator(images))
    if (entry.is_regular_file() && entry.path().extension() == ".png")
      names.push_back(entry.path().stem().string());
  std::sort(names.begin(), names.end());

  DatasetManifest out;
  for (const std::string& name : names) {
    const fs::path mask_path = masks / (name + ".png");
    if (!fs::exists(mask_path))
      fail("pairing", "image '" + name + ".png' has no mask at '" + mask_path.string() + "'");
    ImageSample s;
    s.id = name;
    s.image = io::read_png_gray8((images / (name + ".png")).string());
    s.mask = io::read_png_gray8(mask_path.string());
    if (s.image.width != s.mask.width || s.image.height != s.mask.height)
      fail("geometry", "sample '" + name + "': image is " + std::to_string(s.image.width) + "x" +
                           std::to_string(s.image.height) + " but mask is " +
                           std::to_string(s.mask.width) + "x" + std::to_string(s.mask.height));
    detail::check_mask_labels(s, palette, mask_path.string());
    if (auto it = kinds.find(name); it != kinds.end()) s.source_kind = it->second;
    out.samples.push_back(std::move(s));
  }
  return out;
}

// Bilinear for the intensity image (align-corners-false), nearest-neighbor
// for the mask: label ids are categorical and must not be interpolated.
inline GrayImage resize_image_bilinear(const GrayImage& in, int w, int h) {
  if (w < 1 || h < 1) fail("parameter", "resize extents must be >= 1");
  if (w == in.width && h == in.height) return in;
  GrayImage out;
  out.width = w;
  out.height = h;
  out.pixels.resize(static_cast<std::size_t>(w) * h);
  const double sx = static_cast<double>(in.width) / w;
  const double sy = static_cast<double>(in.height) / h;
  for (int y = 0; y < h; ++y) {
    double fy = (y + 0.5) * sy - 0.5;
    fy = std::min(std::max(fy, 0.0), static_cast<double>(in.height - 1));
    const int y0 = static_cast<int>(std::floor(fy));
    const int y1 = std::min(y0 + 1, in.height - 1);
    const double wy = fy - y0;
    for (int x = 0; x < w; ++x) {
      double fx = (x + 0.5) * sx - 0.5;
      fx = std::min(std::max(fx, 0.0), static_cast<double>(in.width - 1));
      const int x0 = static_cast<int>(std::floor(fx));
      const int x1 = std::min(x0 + 1, in.width - 1);
      const double wx = fx - x0;
      const double top = in.at(y0, x0) + wx * (in.at(y0, x1) - in.at(y0, x0));
      const double bot = in.at(y1, x0) + wx * (in.at(y1, x1) - in.at(y1, x0));
      out.at(y, x) = static_cast<std::uint8_t>(std::lround(top + wy * (bot - top)));
    }
  }
  return out;
}

inline GrayImage resize_mask_nearest(const GrayImage& in, int w, int h) {
  if (w < 1 || h < 1) fail("parameter", "resize extents must be >= 1");
  if (w == in.width && h == in.height) return in;
  GrayImage out;
  out.width = w;
  out.height = h;
  out.pixels.resize(static_cast<std::size_t>(w) * h);
  for (int y = 0; y < h; ++y) {
    const int sy = detail::nearest_src_index(y, in.height, h);
    for (int x = 0; x < w; ++x)
      out.at(y, x) = in.at(sy, detail::nearest_src_index(x, in.width, w));
  }
  return out;
}

inline ImageSample resize_sample(const ImageSample& s, int w, int h) {
  ImageSample out;
  out.id = s.id;
  out.source_kind = s.source_kind;
  out.image = resize_image_bilinear(s.image, w, h);
  out.mask = resize_mask_nearest(s.mask, w, h);
  return out;
}

// count_c = number of samples whose mask contains at least one pixel of c.
inline std::vector<long long> class_frequencies(const DatasetManifest& m,
                                                const ClassPalette& palette) {
  std::vector<long long> counts(static_cast<std::size_t>(palette.size()), 0);
  for (const auto& s : m.samples) {
    std::vector<bool> present(counts.size(), false);
    for (std::uint8_t v : s.mask.pixels) present[v] = true;
    for (std::size_t c = 0; c < counts.size(); ++c)
      if (present[c]) ++counts[c];
  }
  return counts;
}

// Deterministic shuffled split of the OPG samples; periapical and bitewing
// samples always land in the test group.
inline DatasetManifest split_dataset(const DatasetManifest& m, double train_fraction,
                                     std::uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0))
    fail("parameter", "train_fraction must lie strictly between 0 and 1");
  DatasetManifest out = m;
  out.split.clear();
  std::vector<std::string> opg_ids;
  for (const auto& s : m.samples) {
    if (s.source_kind == SourceKind::kOpg)
      opg_ids.push_back(s.id);
    else
      out.split[s.id] = Split::kTest;
  }
  std::mt19937_64 rng(seed);
  std::shuffle(opg_ids.begin(), opg_ids.end(), rng);
  const auto train_count =
      static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(opg_ids.size())));
  for (std::size_t i = 0; i < opg_ids.size(); ++i)
    out.split[opg_ids[i]] = i < train_count ? Split::kTrain : Split::kTest;
  return out;
}

}  // namespace radious::data
