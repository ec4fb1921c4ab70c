#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "radious/data/sample.hpp"
#include "radious/error.hpp"

namespace radious::data {

// Uniform Distributed Augmentation plan: per-class source counts are pushed
// through f' = log(b + a*f) and rescaled to a total budget, so frequent
// classes are compressed toward the rare ones.
struct AugmentationPlan {
  std::vector<long long> source_count;
  std::vector<double> transformed_score;  // f'_c = log(b + a*f_c)
  std::vector<long long> target_count;
  double a = 1.0;
  double b = 1.0;
  long long total_target = 0;
};

inline AugmentationPlan plan_augmentation(const std::vector<long long>& counts, double a, double b,
                                          long long total_target) {
  if (!(a > 0.0) || b < 1.0) fail("parameter", "augmentation requires a > 0 and b >= 1");
  if (total_target <= 0) fail("parameter", "total_target must be positive");
  AugmentationPlan plan;
  plan.source_count = counts;
  plan.a = a;
  plan.b = b;
  plan.total_target = total_target;
  plan.transformed_score.resize(counts.size());
  double sum = 0.0;
  for (std::size_t c = 0; c < counts.size(); ++c) {
    if (counts[c] < 0) fail("parameter", "class counts must be nonnegative");
    plan.transformed_score[c] = std::log(b + a * static_cast<double>(counts[c]));
    sum += plan.transformed_score[c];
  }
  const bool any = std::any_of(counts.begin(), counts.end(), [](long long f) { return f > 0; });
  if (!any) fail("empty_dataset", "cannot plan augmentation: every class count is zero");
  plan.target_count.resize(counts.size());
  for (std::size_t c = 0; c < counts.size(); ++c)
    plan.target_count[c] =
        std::llround(static_cast<double>(total_target) * plan.transformed_score[c] / sum);
  return plan;
}

namespace detail {

// Samples taken outside the source rectangle clamp to the border, so every
// output value is copied from the input and mask values stay a subset of the
// original's.
inline double sample_bilinear_clamped(const GrayImage& img, double fy, double fx) {
  fy = std::min(std::max(fy, 0.0), static_cast<double>(img.height - 1));
  fx = std::min(std::max(fx, 0.0), static_cast<double>(img.width - 1));
  const int y0 = static_cast<int>(std::floor(fy));
  const int x0 = static_cast<int>(std::floor(fx));
  const int y1 = std::min(y0 + 1, img.height - 1);
  const int x1 = std::min(x0 + 1, img.width - 1);
  const double wy = fy - y0, wx = fx - x0;
  const double top = img.at(y0, x0) + wx * (img.at(y0, x1) - img.at(y0, x0));
  const double bot = img.at(y1, x0) + wx * (img.at(y1, x1) - img.at(y1, x0));
  return top + wy * (bot - top);
}

inline std::uint8_t sample_nearest_clamped(const GrayImage& img, double fy, double fx) {
  int y = static_cast<int>(std::lround(fy));
  int x = static_cast<int>(std::lround(fx));
  y = std::min(std::max(y, 0), img.height - 1);
  x = std::min(std::max(x, 0), img.width - 1);
  return img.at(y, x);
}

}  // namespace detail

struct AugmentParams {
  bool flip = false;           // horizontal flip, applied before rotation
  double angle_deg = 0.0;      // rotation about the image center
  double brightness = 0.0;     // additive, in [-1, 1] of full scale
  double contrast = 1.0;       // multiplicative around mid-gray
};

inline GrayImage flip_horizontal(const GrayImage& in) {
  GrayImage out = in;
  for (int y = 0; y < in.height; ++y)
    for (int x = 0; x < in.width; ++x) out.at(y, x) = in.at(y, in.width - 1 - x);
  return out;
}

// Shared inverse geometric map: destination pixel -> source coordinates under
// flip-then-rotate, so image and mask stay aligned by construction.
inline void transform_geometry(const GrayImage& src_image, const GrayImage& src_mask,
                               const AugmentParams& p, GrayImage& out_image, GrayImage& out_mask) {
  const int w = src_image.width, h = src_image.height;
  out_image.width = out_mask.width = w;
  out_image.height = out_mask.height = h;
  out_image.pixels.resize(static_cast<std::size_t>(w) * h);
  out_mask.pixels.resize(static_cast<std::size_t>(w) * h);
  const double rad = p.angle_deg * std::numbers::pi / 180.0;
  const double c = std::cos(rad), s = std::sin(rad);
  const double cy = (h - 1) / 2.0, cx = (w - 1) / 2.0;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      // Inverse rotation of the destination point about the center.
      const double dy = y - cy, dx = x - cx;
      double fy = cy + (s * dx + c * dy);
      double fx = cx + (c * dx - s * dy);
      if (p.flip) fx = (w - 1) - fx;
      out_image.at(y, x) =
          static_cast<std::uint8_t>(std::lround(detail::sample_bilinear_clamped(src_image, fy, fx)));
      out_mask.at(y, x) = detail::sample_nearest_clamped(src_mask, fy, fx);
    }
  }
}

inline GrayImage adjust_photometric(const GrayImage& in, double brightness, double contrast) {
  GrayImage out = in;
  for (auto& v : out.pixels) {
    const double scaled = (static_cast<double>(v) - 128.0) * contrast + 128.0 + brightness * 255.0;
    v = static_cast<std::uint8_t>(std::lround(std::min(std::max(scaled, 0.0), 255.0)));
  }
  return out;
}

struct AugmentBounds {
  double max_rotation_deg = 10.0;
  double max_brightness = 0.1;
  double max_contrast_delta = 0.1;
};

// Produces `count` variants of one sample: horizontal flip, rotation within
// the bound, brightness/contrast jitter on the image only. Deterministic in
// (sample, count, seed).
inline std::vector<ImageSample> apply_augmentations(const ImageSample& s, int count,
                                                    std::uint64_t seed,
                                                    const AugmentBounds& bounds = {}) {
  if (count < 0) fail("parameter", "augmentation count must be nonnegative");
  std::vector<ImageSample> out;
  out.reserve(static_cast<std::size_t>(count));
  std::mt19937_64 rng(seed);
  std::bernoulli_distribution flip(0.5);
  std::uniform_real_distribution<double> angle(-bounds.max_rotation_deg, bounds.max_rotation_deg);
  std::uniform_real_distribution<double> bright(-bounds.max_brightness, bounds.max_brightness);
  std::uniform_real_distribution<double> contr(1.0 - bounds.max_contrast_delta,
                                               1.0 + bounds.max_contrast_delta);
  for (int i = 0; i < count; ++i) {
    AugmentParams p;
    p.flip = flip(rng);
    p.angle_deg = angle(rng);
    p.brightness = bright(rng);
    p.contrast = contr(rng);
    ImageSample v;
    v.id = s.id + "_aug" + std::to_string(i);
    v.source_kind = s.source_kind;
    transform_geometry(s.image, s.mask, p, v.image, v.mask);
    v.image = adjust_photometric(v.image, p.brightness, p.contrast);
    out.push_back(std::move(v));
  }
  return out;
}

}  // namespace radious::data
