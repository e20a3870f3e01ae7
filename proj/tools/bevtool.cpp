// Command-line front end for dataset generation, stitching, occlusion
// labelling, training, evaluation and prediction.

#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "bev/commands.hpp"
#include "bev/config.hpp"
#include "bev/dataset.hpp"
#include "bev/error.hpp"
#include "bev/training.hpp"

int main(int argc, char** argv) {
  CLI::App app{"bevtool: semantic bird's-eye-view pipeline on synthetic street scenes"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::size_t count = 100;
  std::optional<std::string> split;
  std::optional<std::string> checkpoint;
  std::string variant;
  std::optional<std::string> out;
  std::optional<std::string> data;
  std::optional<std::string> sample;

  app.add_option("--config", config_path, "pipeline configuration (JSON); defaults are built in")
      ->check(CLI::ExistingFile);

  auto* gen = app.add_subcommand("gen-dataset", "render a synthetic dataset");
  gen->add_option("--seed", seed, "dataset seed (default: config cli.seed)");
  gen->add_option("--count", count, "number of samples")->check(CLI::PositiveNumber);
  gen->add_option("--split", split, "train/val fractions, e.g. 0.9/0.1");
  gen->add_option("--out", out, "dataset directory (default: config cli.dataset_dir)");

  auto* stitch = app.add_subcommand("ipm-stitch", "write homography images for a dataset");
  stitch->add_option("--data", data, "dataset directory");
  stitch->add_option("--sample", sample, "only this sample id");

  auto* occl = app.add_subcommand("occlusion", "recompute occlusion-augmented labels");
  occl->add_option("--data", data, "dataset directory");

  auto* train = app.add_subcommand("train", "train a network");
  train->add_option("--data", data, "dataset directory");
  train->add_option("--variant", variant, "xst, plain or single")->required();
  train->add_option("--seed", seed, "training seed (default: config unetxst.training.seed)");
  train->add_option("--out", out, "run directory (default: <cli.run_dir>/<variant>)");

  auto* eval = app.add_subcommand("eval", "score a checkpoint or the homography baseline");
  eval->add_option("--data", data, "dataset directory");
  eval->add_option("--checkpoint", checkpoint, "model checkpoint");
  eval->add_option("--variant", variant, "expected model variant, or 'baseline'");
  eval->add_option("--split", split, "split tag: train, val or all (default val)");
  eval->add_option("--out", out, "report CSV path (default: stdout)");

  auto* pred = app.add_subcommand("predict", "predict the BEV labels of one sample");
  pred->add_option("--data", data, "dataset directory");
  pred->add_option("--checkpoint", checkpoint, "model checkpoint")->required();
  pred->add_option("--sample", sample, "sample id")->required();
  pred->add_option("--out", out, "output PNG")->required();

  auto* show = app.add_subcommand("show-config", "print the effective configuration");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    // --help and friends exit 0; every usage error maps to status 2.
    return app.exit(e) == 0 ? 0 : 2;
  }

  try {
    bev::PipelineConfig cfg = config_path.empty() ? bev::default_config() : bev::load_config(config_path);
    const bev::CommandIo io{std::cout, std::cerr, bev::thread_count_from_env()};
    const std::filesystem::path dataset = data ? std::filesystem::path(*data) : cfg.dataset_dir;

    if (*gen) {
      const double fraction = split ? bev::parse_split_fractions(*split) : cfg.train_fraction;
      return bev::cmd_gen_dataset(cfg, out ? std::filesystem::path(*out) : cfg.dataset_dir, count,
                                  seed.value_or(cfg.seed), fraction, io);
    }
    if (*stitch) return bev::cmd_ipm_stitch(cfg, dataset, sample, io);
    if (*occl) return bev::cmd_occlusion(cfg, dataset, io);
    if (*train) {
      if (seed) cfg.training.seed = *seed;
      const std::filesystem::path run = out ? std::filesystem::path(*out) : cfg.run_dir / variant;
      return bev::cmd_train(cfg, dataset, variant, run, io);
    }
    if (*eval) {
      std::optional<std::filesystem::path> ckpt;
      if (checkpoint) ckpt = *checkpoint;
      std::optional<std::filesystem::path> report;
      if (out) report = *out;
      return bev::cmd_eval(cfg, dataset, ckpt, split.value_or("val"), variant, report, io);
    }
    if (*pred) return bev::cmd_predict(cfg, dataset, *checkpoint, *sample, *out, io);
    if (*show) {
      std::cout << cfg.to_json().dump(2) << '\n';
      return 0;
    }
  } catch (const bev::Error& e) {
    std::cerr << "bevtool: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "bevtool: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
