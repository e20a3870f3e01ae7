#pragma once

// Training and evaluation over prepared datasets.
//
// A run directory receives config.json (the full pipeline configuration),
// metrics.csv (one row per epoch), best.ckpt (highest validation MIoU) and
// last.ckpt.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "bev/checkpoint.hpp"
#include "bev/config.hpp"
#include "bev/dataset.hpp"
#include "bev/metrics.hpp"
#include "bev/unetxst.hpp"

namespace bev {

/// Thread count from BEV_THREADS, defaulting to the hardware concurrency.
int thread_count_from_env();

/// Runs fn(0) .. fn(count - 1) on up to `threads` workers. The first
/// exception thrown by any call is rethrown after all workers finish.
void parallel_for(std::size_t count, int threads, const std::function<void(std::size_t)>& fn);

/// Network configuration for `variant` on a prepared dataset. multi_input_xst
/// receives one homography per camera mapping network-BEV coordinates to
/// network-camera coordinates.
NetworkConfig network_config(const PipelineConfig& cfg, Variant variant, const PreparedSet& set);

/// Inverse log-frequency weights over the training targets.
Eigen::VectorXd training_class_weights(const PreparedSet& train, const TrainConfig& tc);

/// Network inputs for the samples at `indices`, one tensor per configured
/// camera name.
template <class Scalar>
std::vector<Tensor<Scalar>> batch_inputs(const Model<Scalar>& model, const PreparedSet& set,
                                         const std::vector<std::size_t>& indices);

struct EpochRecord {
  int epoch = 0;
  double loss = 0.0;
  std::int64_t steps = 0;
  /// Validation scores; empty when there is no validation set.
  std::optional<double> miou;
  std::vector<std::optional<double>> class_iou;
};

struct TrainResult {
  std::vector<EpochRecord> history;
  int best_epoch = 0;
  std::optional<double> best_miou;
  std::vector<NamedArray> best;
};

struct TrainOptions {
  /// Left empty, nothing is written to disk.
  std::filesystem::path run_dir;
  nlohmann::json config_snapshot;
  std::ostream* log = nullptr;
  int threads = 1;
};

/// Trains `model` in place. Batches are drawn from a per-epoch shuffle seeded
/// by tc.seed. After each epoch the validation MIoU decides the best
/// checkpoint; `patience` epochs without improvement stop the run. Without a
/// validation set the training loss plays that role.
template <class Scalar>
TrainResult train(Model<Scalar>& model, const PreparedSet& train_set, const PreparedSet& val_set,
                  const TrainConfig& tc, const TrainOptions& opts = {});

/// Pooled confusion matrix of model predictions against targets.
template <class Scalar>
ConfusionMatrix evaluate(const Model<Scalar>& model, const PreparedSet& set, int threads = 1);

/// Pooled confusion matrix of the stitched homography images against targets.
ConfusionMatrix evaluate_baseline(const PreparedSet& set);

}  // namespace bev
