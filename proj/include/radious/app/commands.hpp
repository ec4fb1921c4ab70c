#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <memory>
#include <numeric>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include "radious/app/checkpoint.hpp"
#include "radious/app/config.hpp"
#include "radious/app/synthetic.hpp"
#include "radious/data/augment.hpp"
#include "radious/data/dataset.hpp"
#include "radious/data/palette.hpp"
#include "radious/metrics/metrics.hpp"
#include "radious/model/backbone.hpp"
#include "radious/model/codebook.hpp"
#include "radious/model/decoder.hpp"
#include "radious/model/losses.hpp"
#include "radious/model/mim.hpp"

namespace radious::app {

using num::GradientTape;
using num::Tensor;

// ---------------------------------------------------------------------------
// Shared plumbing

inline Tensor image_to_tensor(const io::GrayImage& img) {
  std::vector<num::real> values(img.pixels.size());
  for (std::size_t i = 0; i < values.size(); ++i)
    values[i] = static_cast<num::real>(img.pixels[i]) / num::real(255);
  return Tensor::from({1, img.height, img.width}, std::move(values));
}

inline data::ClassPalette palette_for(const RunConfig& cfg) {
  if (!cfg.palette_path.empty()) return data::load_palette(cfg.palette_path);
  return data::default_palette();
}

inline data::DatasetManifest load_configured_dataset(const RunConfig& cfg,
                                                     const data::ClassPalette& palette) {
  if (cfg.dataset_root.empty()) fail("parameter", "config has no dataset_root");
  return data::load_dataset(cfg.dataset_root, palette);
}

// Masks must stay within the decoder's class budget even when the palette is
// wider (e.g., a 4-class synthetic set checked against the 34-entry default).
inline void check_label_budget(const data::ImageSample& s, int num_classes) {
  for (std::uint8_t v : s.mask.pixels)
    if (v > num_classes)
      fail("label", "sample '" + s.id + "' uses mask id " + std::to_string(int(v)) +
                        " but the decoder is configured for " + std::to_string(num_classes) +
                        " classes");
}

inline std::vector<const data::ImageSample*> samples_in_split(const data::DatasetManifest& m,
                                                              data::Split split) {
  std::vector<const data::ImageSample*> out;
  for (const auto& s : m.samples) {
    auto it = m.split.find(s.id);
    if (it != m.split.end() && it->second == split) out.push_back(&s);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Model assembly

// MIM pretraining model: patch embedding + plain encoder + mask embedding and
// a linear head onto the visual vocabulary. The adapter and decoder are not
// part of pretraining.
inline void init_mim_model(GradientTape& tape, const model::BackboneConfig& cfg, int vocab,
                           std::mt19937_64& rng) {
  model::init_patch_embed(tape, cfg, rng);
  model::init_encoder(tape, cfg, rng);
  tape.parameter("mim.mask", num::mul_scalar(Tensor::randn({cfg.embed_dim}, rng), 0.02));
  tape.parameter("mim.head.w",
                 num::mul_scalar(Tensor::randn({cfg.embed_dim, vocab}, rng), 0.02));
  tape.parameter("mim.head.b", Tensor::zeros({vocab}));
}

inline void init_full_model(GradientTape& tape, const RunConfig& cfg, std::mt19937_64& rng) {
  model::init_backbone(tape, cfg.backbone, rng);
  model::init_decoder(tape, cfg.decoder, cfg.backbone.embed_dim,
                      static_cast<int>(cfg.backbone.scales.size()), rng);
}

inline std::vector<model::SegmentationOutput> full_forward(const Tensor& image,
                                                           const RunConfig& cfg,
                                                           const GradientTape& tape) {
  model::MultiScaleFeatures features = model::backbone_forward(image, cfg.backbone, tape);
  model::PixelDecoded pix = model::pixel_decode(features, tape);
  return model::decoder_forward(pix, cfg.decoder, tape);
}

// ---------------------------------------------------------------------------
// pretrain

inline void cmd_pretrain(const RunConfig& cfg, std::uint64_t seed, const std::string& out_path,
                         std::ostream& log) {
  cfg.validate();
  const data::ClassPalette palette = palette_for(cfg);
  data::DatasetManifest manifest = load_configured_dataset(cfg, palette);
  if (manifest.samples.empty()) fail("empty_dataset", "no samples to pretrain on");

  // Resize and cut every image into patches once, up front.
  std::vector<Tensor> patch_sets;
  std::size_t total_patches = 0;
  for (const auto& s : manifest.samples) {
    const io::GrayImage resized =
        data::resize_image_bilinear(s.image, cfg.pretrain.resize_w, cfg.pretrain.resize_h);
    patch_sets.push_back(
        model::extract_patches(image_to_tensor(resized), cfg.backbone.patch_size));
    total_patches += static_cast<std::size_t>(patch_sets.back().dim(0));
  }
  const int patch_len = patch_sets.front().dim(1);

  // Fit the visual codebook on the pooled patches.
  std::vector<num::real> pooled;
  pooled.reserve(total_patches * static_cast<std::size_t>(patch_len));
  for (const Tensor& p : patch_sets) {
    auto v = p.data();
    pooled.insert(pooled.end(), v.begin(), v.end());
  }
  const model::VisualCodebook codebook = model::fit_codebook(
      Tensor::from({static_cast<int>(total_patches), patch_len}, std::move(pooled)),
      cfg.pretrain.codebook_size, seed);
  std::vector<std::vector<int>> token_labels;
  token_labels.reserve(patch_sets.size());
  for (const Tensor& p : patch_sets) token_labels.push_back(model::tokenize_all(p, codebook));

  GradientTape tape;
  std::mt19937_64 rng(seed);
  init_mim_model(tape, cfg.backbone, cfg.pretrain.codebook_size, rng);

  const int gh = cfg.pretrain.resize_h / cfg.backbone.patch_size;
  const int gw = cfg.pretrain.resize_w / cfg.backbone.patch_size;
  std::vector<std::size_t> order(patch_sets.size());
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 0; epoch < cfg.pretrain.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0;
    for (std::size_t idx : order) {
      Tensor tokens = num::add_bias(num::matmul(patch_sets[idx], tape.get("patch.proj")),
                                    tape.get("patch.bias"));
      model::CorruptedTokens corrupted =
          model::mim_corrupt(tokens, cfg.pretrain.mask_ratio, tape.get("mim.mask"), rng());
      Tensor x = num::add(corrupted.tokens,
                          model::positional_embedding(tape, cfg.backbone, gh, gw));
      std::vector<Tensor> states = model::transformer_encode(x, cfg.backbone, tape);
      const Tensor& encoded = states.empty() ? x : states.back();
      Tensor predictions = num::add_bias(num::matmul(encoded, tape.get("mim.head.w")),
                                         tape.get("mim.head.b"));
      Tensor loss = model::mim_loss(predictions, token_labels[idx], corrupted.masked);
      num::sgd_step(tape, tape.gradients(loss), static_cast<num::real>(cfg.pretrain.learning_rate));
      epoch_loss += loss.data()[0];
    }
    log << "epoch " << (epoch + 1) << "/" << cfg.pretrain.epochs << " mim_loss "
        << epoch_loss / static_cast<double>(order.size()) << "\n";
  }

  save_checkpoint(out_path, checkpoint_from_tape(tape, seed, run_config_to_json(cfg).dump()));
}

// ---------------------------------------------------------------------------
// train

inline void cmd_train(const RunConfig& cfg, std::uint64_t seed, const std::string& init_path,
                      const std::string& out_path, std::ostream& log) {
  cfg.validate();
  const data::ClassPalette palette = palette_for(cfg);
  data::DatasetManifest manifest = load_configured_dataset(cfg, palette);
  manifest = data::split_dataset(manifest, cfg.train.train_fraction, cfg.train.seed);
  const auto train_samples = samples_in_split(manifest, data::Split::kTrain);
  if (train_samples.empty()) fail("empty_dataset", "training split is empty");

  GradientTape tape;
  std::mt19937_64 rng(seed);
  init_full_model(tape, cfg, rng);
  if (!init_path.empty()) load_into_tape(load_checkpoint(init_path), tape, /*allow_partial=*/true);

  // Pre-resize once; the quarter-resolution mask is the training target.
  const int w = cfg.train.resize_w, h = cfg.train.resize_h;
  const int w4 = w / 4, h4 = h / 4;
  struct Prepared {
    Tensor image;
    std::vector<model::GtSegment> segments;
  };
  std::vector<Prepared> prepared;
  prepared.reserve(train_samples.size());
  for (const data::ImageSample* s : train_samples) {
    check_label_budget(*s, cfg.decoder.num_classes);
    const data::ImageSample r = data::resize_sample(*s, w, h);
    Prepared p;
    p.image = image_to_tensor(r.image);
    p.segments = model::gt_segments_from_mask(data::resize_mask_nearest(r.mask, w4, h4),
                                              cfg.decoder.num_classes);
    if (static_cast<int>(p.segments.size()) > cfg.decoder.num_queries)
      fail("capacity", "sample '" + s->id + "' has " + std::to_string(p.segments.size()) +
                           " ground-truth segments but the decoder has only " +
                           std::to_string(cfg.decoder.num_queries) + " queries");
    prepared.push_back(std::move(p));
  }

  const model::LossWeights lw;
  std::vector<std::size_t> order(prepared.size());
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 0; epoch < cfg.train.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0;
    std::size_t cursor = 0;
    while (cursor < order.size()) {
      const std::size_t batch_end =
          std::min(order.size(), cursor + static_cast<std::size_t>(cfg.train.batch_size));
      std::vector<std::vector<num::real>> batch_grads;
      for (std::size_t b = cursor; b < batch_end; ++b) {
        const Prepared& p = prepared[order[b]];
        Tensor loss = model::training_loss(full_forward(p.image, cfg, tape), p.segments, lw);
        epoch_loss += loss.data()[0];
        const std::vector<Tensor> grads = tape.gradients(loss);
        if (batch_grads.empty()) batch_grads.resize(grads.size());
        for (std::size_t g = 0; g < grads.size(); ++g) {
          auto gv = grads[g].data();
          if (batch_grads[g].empty())
            batch_grads[g].assign(gv.begin(), gv.end());
          else
            for (std::size_t k = 0; k < batch_grads[g].size(); ++k) batch_grads[g][k] += gv[k];
        }
      }
      const auto batch_n = static_cast<num::real>(batch_end - cursor);
      double grad_sq = 0;
      for (auto& per_param : batch_grads)
        for (auto& v : per_param) {
          v /= batch_n;
          grad_sq += static_cast<double>(v) * v;
        }
      // Global-norm clip: one assignment-flip spike must not launch the
      // weights into overflow.
      if (cfg.train.clip_norm > 0 && grad_sq > cfg.train.clip_norm * cfg.train.clip_norm) {
        const num::real scale =
            static_cast<num::real>(cfg.train.clip_norm / std::sqrt(grad_sq));
        for (auto& per_param : batch_grads)
          for (auto& v : per_param) v *= scale;
      }
      std::vector<Tensor> averaged;
      averaged.reserve(batch_grads.size());
      const std::vector<Tensor> params = tape.parameters();
      for (std::size_t g = 0; g < batch_grads.size(); ++g)
        averaged.push_back(Tensor::from(params[g].shape(), std::move(batch_grads[g])));
      num::sgd_step(tape, averaged, static_cast<num::real>(cfg.train.learning_rate));
      cursor = batch_end;
    }
    log << "epoch " << (epoch + 1) << "/" << cfg.train.epochs << " train_loss "
        << epoch_loss / static_cast<double>(order.size()) << "\n";
  }

  save_checkpoint(out_path, checkpoint_from_tape(tape, seed, run_config_to_json(cfg).dump()));
}

// ---------------------------------------------------------------------------
// eval

// Prediction callback: sample (already resized to the train target) ->
// semantic map at the same extents. Factored out so tests can evaluate
// oracle predictors (e.g., the identity stub) through the same path.
using Predictor = std::function<io::GrayImage(const data::ImageSample&)>;

inline metrics::MetricReport evaluate_samples(const std::vector<const data::ImageSample*>& samples,
                                              const RunConfig& cfg, const Predictor& predict,
                                              const data::ClassPalette& palette,
                                              const std::string& model_name) {
  if (samples.empty()) fail("degenerate_evaluation", "evaluation split is empty");
  metrics::ConfusionMatrix cm(cfg.decoder.num_classes + 1);
  for (const data::ImageSample* s : samples) {
    check_label_budget(*s, cfg.decoder.num_classes);
    const data::ImageSample r = data::resize_sample(*s, cfg.train.resize_w, cfg.train.resize_h);
    const io::GrayImage pred = predict(r);
    metrics::accumulate(cm, pred, r.mask);
  }
  std::vector<std::string> names;
  for (int c = 0; c <= cfg.decoder.num_classes && c < palette.size(); ++c)
    names.push_back(palette.entry(c).name);
  return metrics::report_from_confusion(cm, model_name, names);
}

inline Predictor model_predictor(const RunConfig& cfg, const std::string& checkpoint_path) {
  // "identity" is a documented debugging stub: the prediction is the ground
  // truth itself, so metrics must be exactly 1.
  if (checkpoint_path == "identity")
    return [](const data::ImageSample& s) { return s.mask; };
  auto tape = std::make_shared<GradientTape>();
  std::mt19937_64 rng(0);
  init_full_model(*tape, cfg, rng);
  load_into_tape(load_checkpoint(checkpoint_path), *tape, /*allow_partial=*/false);
  return [cfg, tape](const data::ImageSample& s) {
    num::NoGradGuard guard;
    const auto outputs = full_forward(image_to_tensor(s.image), cfg, *tape);
    return model::semantic_inference(outputs.back(), s.image.height, s.image.width, cfg.decoder);
  };
}

inline metrics::MetricReport cmd_eval(const RunConfig& cfg, const std::string& checkpoint_path,
                                      data::Split split, const std::string& out_path,
                                      std::ostream& log) {
  cfg.validate();
  const data::ClassPalette palette = palette_for(cfg);
  data::DatasetManifest manifest = load_configured_dataset(cfg, palette);
  manifest = data::split_dataset(manifest, cfg.train.train_fraction, cfg.train.seed);
  const auto samples = samples_in_split(manifest, split);

  const Predictor predict = model_predictor(cfg, checkpoint_path);
  const metrics::MetricReport report = evaluate_samples(samples, cfg, predict, palette, "radious");
  if (!out_path.empty()) metrics::save_report(out_path, report);
  log << "evaluated " << samples.size() << " samples: miou " << report.miou << " macc "
      << report.macc << "\n";
  return report;
}

// ---------------------------------------------------------------------------
// infer

// Writes <stem>_mask.png (palette ids) and <stem>_overlay.png (palette colors
// alpha-blended at 0.5 over the input) into out_dir.
inline void cmd_infer(const RunConfig& cfg, const std::string& checkpoint_path,
                      const std::string& image_path, const std::string& out_dir,
                      std::ostream& log) {
  cfg.validate();
  const data::ClassPalette palette = palette_for(cfg);
  const io::GrayImage original = io::read_png_gray8(image_path);

  GradientTape tape;
  std::mt19937_64 rng(0);
  init_full_model(tape, cfg, rng);
  load_into_tape(load_checkpoint(checkpoint_path), tape, /*allow_partial=*/false);

  const io::GrayImage resized =
      data::resize_image_bilinear(original, cfg.train.resize_w, cfg.train.resize_h);
  io::GrayImage mask;
  {
    num::NoGradGuard guard;
    const auto outputs = full_forward(image_to_tensor(resized), cfg, tape);
    mask = model::semantic_inference(outputs.back(), original.height, original.width, cfg.decoder);
  }

  std::vector<std::uint8_t> overlay(static_cast<std::size_t>(original.width) * original.height * 3);
  for (std::size_t i = 0; i < mask.pixels.size(); ++i) {
    const std::uint8_t g = original.pixels[i];
    const int id = mask.pixels[i];
    std::uint8_t r = g, gr = g, b = g;
    if (id > 0 && palette.contains(id)) {
      const auto& c = palette.entry(id).color;
      r = static_cast<std::uint8_t>((g + c[0]) / 2);
      gr = static_cast<std::uint8_t>((g + c[1]) / 2);
      b = static_cast<std::uint8_t>((g + c[2]) / 2);
    }
    overlay[i * 3 + 0] = r;
    overlay[i * 3 + 1] = gr;
    overlay[i * 3 + 2] = b;
  }

  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  const std::string stem = fs::path(image_path).stem().string();
  const std::string mask_path = (fs::path(out_dir) / (stem + "_mask.png")).string();
  const std::string overlay_path = (fs::path(out_dir) / (stem + "_overlay.png")).string();
  io::write_png_gray8(mask_path, mask);
  io::write_png_rgb8(overlay_path, original.width, original.height, overlay);
  log << "wrote " << mask_path << " and " << overlay_path << "\n";
}

// ---------------------------------------------------------------------------
// augment

inline data::AugmentationPlan cmd_augment_plan(const RunConfig& cfg, std::ostream& out) {
  cfg.validate();
  const data::ClassPalette palette = palette_for(cfg);
  const data::DatasetManifest manifest = load_configured_dataset(cfg, palette);
  const std::vector<long long> counts = data::class_frequencies(manifest, palette);
  const data::AugmentationPlan plan =
      data::plan_augmentation(counts, cfg.augment.a, cfg.augment.b, cfg.augment.total_target);
  out << "class\tname\tf\tf'\ttarget\n";
  for (std::size_t c = 0; c < counts.size(); ++c)
    out << c << "\t" << palette.entry(static_cast<int>(c)).name << "\t" << plan.source_count[c]
        << "\t" << plan.transformed_score[c] << "\t" << plan.target_count[c] << "\n";
  return plan;
}

// Distributes each foreground class's target over the samples containing
// that class (round-robin), then materializes every sample's augmented
// variants with one deterministic stream per sample. Background (id 0) is
// never materialized: every radiograph contains it, so boosting it would
// only distort the foreground counts the plan balances.
inline std::vector<data::ImageSample> materialize_plan(const data::DatasetManifest& manifest,
                                                       const data::AugmentationPlan& plan,
                                                       std::uint64_t seed) {
  std::vector<long long> per_sample(manifest.samples.size(), 0);
  for (std::size_t c = 1; c < plan.target_count.size(); ++c) {
    if (plan.target_count[c] <= 0) continue;
    std::vector<std::size_t> sources;
    for (std::size_t i = 0; i < manifest.samples.size(); ++i) {
      const auto& px = manifest.samples[i].mask.pixels;
      if (std::find(px.begin(), px.end(), static_cast<std::uint8_t>(c)) != px.end())
        sources.push_back(i);
    }
    if (sources.empty()) continue;  // target for a class with no source sample
    for (long long k = 0; k < plan.target_count[c]; ++k)
      ++per_sample[sources[static_cast<std::size_t>(k) % sources.size()]];
  }
  std::vector<data::ImageSample> out;
  for (std::size_t i = 0; i < manifest.samples.size(); ++i) {
    if (per_sample[i] == 0) continue;
    auto variants = data::apply_augmentations(manifest.samples[i], static_cast<int>(per_sample[i]),
                                              seed + static_cast<std::uint64_t>(i) * 1000003u);
    for (auto& v : variants) out.push_back(std::move(v));
  }
  return out;
}

inline void cmd_augment_apply(const RunConfig& cfg, std::uint64_t seed, const std::string& out_dir,
                              std::ostream& log) {
  const data::AugmentationPlan plan = cmd_augment_plan(cfg, log);
  const data::ClassPalette palette = palette_for(cfg);
  const data::DatasetManifest manifest = load_configured_dataset(cfg, palette);
  const std::vector<data::ImageSample> augmented = materialize_plan(manifest, plan, seed);
  write_dataset(out_dir, augmented);
  log << "wrote " << augmented.size() << " augmented samples to " << out_dir << "\n";
}

// ---------------------------------------------------------------------------
// compare

inline std::vector<metrics::ComparisonRow> cmd_compare(const std::vector<std::string>& report_paths,
                                                       const std::string& out_path,
                                                       std::ostream& table) {
  std::vector<metrics::MetricReport> reports;
  reports.reserve(report_paths.size());
  for (const std::string& p : report_paths) reports.push_back(metrics::load_report(p));
  const std::vector<metrics::ComparisonRow> rows = metrics::compare_reports(reports);

  table << std::left << std::setw(20) << "model" << std::right << std::setw(8) << "mIoU"
        << std::setw(8) << "mAcc" << std::setw(10) << "dmIoU" << "\n";
  table << std::fixed << std::setprecision(2);
  for (const auto& r : rows)
    table << std::left << std::setw(20) << r.model_name << std::right << std::setw(8) << r.miou
          << std::setw(8) << r.macc << std::setw(10) << r.miou_delta << "\n";
  table.unsetf(std::ios::fixed);

  if (!out_path.empty()) {
    nlohmann::json j = nlohmann::json::array();
    for (const auto& r : rows)
      j.push_back({{"model_name", r.model_name},
                   {"miou", r.miou},
                   {"macc", r.macc},
                   {"miou_delta", r.miou_delta}});
    std::ofstream out(out_path);
    if (!out) fail("io", "cannot write comparison '" + out_path + "'");
    out << j.dump(2) << "\n";
  }
  return rows;
}

}  // namespace radious::app
