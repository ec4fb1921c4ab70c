#pragma once

#include <cmath>
#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "radious/error.hpp"
#include "radious/io/png.hpp"
#include "radious/model/decoder.hpp"
#include "radious/model/matcher.hpp"
#include "radious/num/ops.hpp"

namespace radious::model {

// One ground-truth segment at mask resolution: a foreground class index in
// [0, C) and a binary pixel set.
struct GtSegment {
  int class_index = 0;
  std::vector<num::real> mask;  // H4*W4 entries in {0,1}
};

struct LossWeights {
  double cls = 2.0;
  double bce = 5.0;
  double dice = 5.0;
  double no_object = 0.1;  // class-CE down-weight for unmatched queries
};

// Splits a quarter-resolution id mask into per-class binary segments,
// ordered by class id. Background (id 0) produces no segment.
inline std::vector<GtSegment> gt_segments_from_mask(const io::GrayImage& quarter_mask,
                                                    int num_classes) {
  std::set<std::uint8_t> present(quarter_mask.pixels.begin(), quarter_mask.pixels.end());
  std::vector<GtSegment> segments;
  for (std::uint8_t id : present) {
    if (id == 0) continue;
    if (id > num_classes)
      fail("label", "mask id " + std::to_string(int(id)) + " exceeds configured class count");
    GtSegment seg;
    seg.class_index = id - 1;
    seg.mask.resize(quarter_mask.pixels.size());
    for (std::size_t i = 0; i < seg.mask.size(); ++i)
      seg.mask[i] = quarter_mask.pixels[i] == id ? num::real(1) : num::real(0);
    segments.push_back(std::move(seg));
  }
  return segments;
}

namespace detail {

// Value-only matching costs, double precision, no graph recorded.
inline std::vector<std::vector<double>> match_costs(const SegmentationOutput& out,
                                                    const std::vector<GtSegment>& gt,
                                                    const LossWeights& lw) {
  num::NoGradGuard guard;
  const int nq = out.class_logits.dim(0);
  const int h = out.mask_logits.dim(1), w = out.mask_logits.dim(2);
  const std::size_t hw = static_cast<std::size_t>(h) * w;
  Tensor probs = num::softmax(out.class_logits.detached(), 1);
  auto pv = probs.data();
  auto mv = out.mask_logits.data();
  const int c_total = out.class_logits.dim(1);

  std::vector<std::vector<double>> cost(gt.size(), std::vector<double>(static_cast<std::size_t>(nq), 0));
  for (std::size_t g = 0; g < gt.size(); ++g) {
    const auto& y = gt[g].mask;
    double y_sum = 0;
    for (double v : y) y_sum += v;
    for (int q = 0; q < nq; ++q) {
      const std::size_t base = static_cast<std::size_t>(q) * hw;
      double bce = 0, p_sum = 0, py_sum = 0;
      for (std::size_t i = 0; i < hw; ++i) {
        const double z = mv[base + i];
        // max(z,0) - z*y + log1p(exp(-|z|)): stable BCE-with-logits
        bce += std::max(z, 0.0) - z * static_cast<double>(y[i]) + std::log1p(std::exp(-std::abs(z)));
        const double p = 1.0 / (1.0 + std::exp(-z));
        p_sum += p;
        py_sum += p * static_cast<double>(y[i]);
      }
      bce /= static_cast<double>(hw);
      const double dice = 1.0 - (2.0 * py_sum + 1.0) / (p_sum + y_sum + 1.0);
      const double p_class = pv[static_cast<std::size_t>(q) * c_total + gt[g].class_index];
      cost[g][static_cast<std::size_t>(q)] = lw.cls * (-p_class) + lw.bce * bce + lw.dice * dice;
    }
  }
  return cost;
}

}  // namespace detail

// Minimum-cost assignment of ground-truth segments to queries; exact optimum.
// Returns the assigned query per gt segment.
inline std::vector<int> hungarian_match(const SegmentationOutput& out,
                                        const std::vector<GtSegment>& gt, const LossWeights& lw) {
  const int nq = out.class_logits.dim(0);
  if (static_cast<int>(gt.size()) > nq)
    fail("capacity", std::to_string(gt.size()) + " ground-truth segments exceed " +
                         std::to_string(nq) + " queries");
  if (gt.empty()) return {};
  return hungarian_assign(detail::match_costs(out, gt, lw));
}

// Deep-supervised training loss: every layer output is matched and scored.
// Matched queries pay class CE + mask BCE + Dice; unmatched queries pay
// down-weighted CE toward "no object" (class index C).
inline Tensor training_loss(const std::vector<SegmentationOutput>& outputs,
                            const std::vector<GtSegment>& gt, const LossWeights& lw) {
  if (outputs.empty()) fail("parameter", "training_loss needs at least one output");
  Tensor total;
  for (const SegmentationOutput& out : outputs) {
    const int nq = out.class_logits.dim(0);
    const int c_total = out.class_logits.dim(1);
    const int h = out.mask_logits.dim(1), w = out.mask_logits.dim(2);
    const std::vector<int> assigned = hungarian_match(out, gt, lw);

    std::vector<int> targets(static_cast<std::size_t>(nq), c_total - 1);
    std::vector<double> weights(static_cast<std::size_t>(nq), lw.no_object);
    for (std::size_t g = 0; g < gt.size(); ++g) {
      targets[static_cast<std::size_t>(assigned[g])] = gt[g].class_index;
      weights[static_cast<std::size_t>(assigned[g])] = 1.0;
    }
    Tensor ce = num::nll_weighted(num::log_softmax(out.class_logits, 1), targets, weights);
    Tensor layer_loss = num::mul_scalar(ce, static_cast<num::real>(lw.cls));

    if (!gt.empty()) {
      Tensor logits2d = out.mask_logits.reshape({nq, h * w});
      Tensor mask_sum;
      for (std::size_t g = 0; g < gt.size(); ++g) {
        Tensor row = num::slice_rows(logits2d, assigned[g], assigned[g] + 1);
        Tensor y = Tensor::from({1, h * w}, gt[g].mask);
        Tensor term = num::add(num::mul_scalar(num::bce_with_logits_mean(row, y),
                                               static_cast<num::real>(lw.bce)),
                               num::mul_scalar(num::dice_loss(row, y),
                                               static_cast<num::real>(lw.dice)));
        mask_sum = mask_sum.defined() ? num::add(mask_sum, term) : term;
      }
      layer_loss = num::add(layer_loss,
                            num::mul_scalar(mask_sum, num::real(1) / static_cast<num::real>(gt.size())));
    }
    total = total.defined() ? num::add(total, layer_loss) : layer_loss;
  }
  return total;
}

}  // namespace radious::model
