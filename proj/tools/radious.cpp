// radious: dental radiograph semantic segmentation pipeline.
//
// Subcommands: pretrain | train | eval | infer | augment | compare.
// Common flags: --config <path>, --seed <int>, --out <path>.
// Every command is deterministic given (config, seed); failures exit nonzero
// after printing one machine-parsable "[code] message" line to stderr.

#include <cstdint>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "radious/app/commands.hpp"

namespace {

radious::app::RunConfig require_config(const std::string& path) {
  if (path.empty()) radious::fail("parameter", "--config is required for this command");
  return radious::app::load_run_config(path);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"radious: dental radiograph semantic segmentation pipeline"};
  app.require_subcommand(1);
  app.fallthrough();  // --config/--seed/--out may follow the subcommand

  std::string config_path;
  std::optional<std::uint64_t> seed_flag;
  std::string out_path;
  app.add_option("--config", config_path, "run configuration JSON")->configurable(false);
  app.add_option("--seed", seed_flag, "override the config seed");
  app.add_option("--out", out_path, "output path");

  auto* pretrain = app.add_subcommand("pretrain", "fit the visual codebook and run MIM pretraining");
  auto* train = app.add_subcommand("train", "fine-tune the full segmentation model");
  std::string init_path;
  train->add_option("--init", init_path, "checkpoint to initialize from (e.g. a pretrain artifact)");

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint and write a metric report");
  std::string eval_checkpoint, split_name = "test";
  eval->add_option("--checkpoint", eval_checkpoint, "checkpoint path, or 'identity' for the gt stub")
      ->required();
  eval->add_option("--split", split_name, "train|test (default test)");

  auto* infer = app.add_subcommand("infer", "segment one image into a mask and an overlay");
  std::string infer_checkpoint, image_path;
  infer->add_option("--checkpoint", infer_checkpoint, "checkpoint path")->required();
  infer->add_option("--image", image_path, "input PNG")->required();

  auto* augment = app.add_subcommand("augment", "plan or apply uniform distributed augmentation");
  std::string mode = "plan";
  augment->add_option("--mode", mode, "plan|apply (default plan)");

  auto* compare = app.add_subcommand("compare", "rank metric reports against each other");
  std::vector<std::string> report_paths;
  compare->add_option("reports", report_paths, "metric report JSON files")->expected(-1);

  CLI11_PARSE(app, argc, argv);

  try {
    if (pretrain->parsed()) {
      const auto cfg = require_config(config_path);
      if (out_path.empty()) radious::fail("parameter", "--out checkpoint path is required");
      radious::app::cmd_pretrain(cfg, seed_flag.value_or(cfg.train.seed), out_path, std::cout);
    } else if (train->parsed()) {
      const auto cfg = require_config(config_path);
      if (out_path.empty()) radious::fail("parameter", "--out checkpoint path is required");
      radious::app::cmd_train(cfg, seed_flag.value_or(cfg.train.seed), init_path, out_path,
                              std::cout);
    } else if (eval->parsed()) {
      const auto cfg = require_config(config_path);
      radious::data::Split split;
      if (split_name == "train")
        split = radious::data::Split::kTrain;
      else if (split_name == "test")
        split = radious::data::Split::kTest;
      else
        radious::fail("parameter", "--split must be 'train' or 'test'");
      if (out_path.empty()) radious::fail("parameter", "--out report path is required");
      radious::app::cmd_eval(cfg, eval_checkpoint, split, out_path, std::cout);
    } else if (infer->parsed()) {
      const auto cfg = require_config(config_path);
      if (out_path.empty()) radious::fail("parameter", "--out directory is required");
      radious::app::cmd_infer(cfg, infer_checkpoint, image_path, out_path, std::cout);
    } else if (augment->parsed()) {
      const auto cfg = require_config(config_path);
      if (mode == "plan") {
        radious::app::cmd_augment_plan(cfg, std::cout);
      } else if (mode == "apply") {
        if (out_path.empty()) radious::fail("parameter", "--out dataset directory is required");
        radious::app::cmd_augment_apply(cfg, seed_flag.value_or(cfg.train.seed), out_path,
                                        std::cout);
      } else {
        radious::fail("parameter", "--mode must be 'plan' or 'apply'");
      }
    } else if (compare->parsed()) {
      if (report_paths.size() < 2)
        radious::fail("parameter", "compare needs at least two report files");
      radious::app::cmd_compare(report_paths, out_path, std::cout);
    }
  } catch (const radious::Error& e) {
    std::cerr << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "[internal] " << e.what() << "\n";
    return 1;
  }
  return 0;
}
