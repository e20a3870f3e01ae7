#include "bev/training.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <fstream>
#include <mutex>
#include <numeric>
#include <random>
#include <thread>

#include "bev/ops.hpp"
#include "bev/optim.hpp"
#include "bev/semantics_io.hpp"

namespace bev {

int thread_count_from_env() {
  if (const char* env = std::getenv("BEV_THREADS")) {
    char* end = nullptr;
    const long n = std::strtol(env, &end, 10);
    if (end == env || *end != '\0' || n < 1 || n > 1024) {
      throw Error(ErrorKind::Configuration, std::string("BEV_THREADS must be a positive integer, got '") + env + "'");
    }
    return static_cast<int>(n);
  }
  return static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
}

void parallel_for(std::size_t count, int threads, const std::function<void(std::size_t)>& fn) {
  const auto workers = static_cast<std::size_t>(std::clamp<long long>(threads, 1, static_cast<long long>(count)));
  if (workers <= 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto work = [&] {
    for (std::size_t i = next++; i < count; i = next++) {
      try {
        fn(i);
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < workers; ++t) pool.emplace_back(work);
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
}

NetworkConfig network_config(const PipelineConfig& cfg, Variant variant, const PreparedSet& set) {
  NetworkConfig nc;
  nc.variant = variant;
  nc.levels = cfg.network.levels;
  nc.base_channels = cfg.network.base_channels;
  nc.input_width = cfg.network.input_width;
  nc.input_height = cfg.network.input_height;
  nc.input_channels = static_cast<int>(set.palette->size());
  nc.class_count = static_cast<int>(set.palette->size());
  if (variant == Variant::SingleInput) {
    nc.input_cameras = {kHomographyKey};
  } else {
    for (const auto& cam : set.rig) {
      nc.input_cameras.push_back(cam.name);
      if (variant == Variant::MultiInputXst) {
        nc.homographies.push_back(network_homography(cam, cfg.grid, set.camera_crops.at(cam.name), set.bev_crop));
      }
    }
  }
  nc.validate();
  return nc;
}

Eigen::VectorXd training_class_weights(const PreparedSet& train, const TrainConfig& tc) {
  std::vector<std::uint64_t> counts(train.palette->size(), 0);
  for (const auto& s : train.samples) count_classes(s.target, counts);
  Eigen::VectorXd w = class_weights(counts, tc.weight_k);
  if (!tc.weight_occluded) w(train.palette->occluded()) = 1.0;
  return w;
}

template <class Scalar>
std::vector<Tensor<Scalar>> batch_inputs(const Model<Scalar>& model, const PreparedSet& set,
                                         const std::vector<std::size_t>& indices) {
  std::vector<Tensor<Scalar>> inputs;
  for (const auto& name : model.config().input_cameras) {
    std::vector<const SemanticImage*> images;
    for (std::size_t i : indices) {
      const auto& s = set.samples.at(i);
      const auto it = s.inputs.find(name);
      if (it == s.inputs.end()) throw Error(ErrorKind::Input, "sample " + s.id + " has no input '" + name + "'");
      images.push_back(&it->second);
    }
    inputs.push_back(onehot_batch<Scalar>(images, model.config().input_channels));
  }
  return inputs;
}

template <class Scalar>
ConfusionMatrix evaluate(const Model<Scalar>& model, const PreparedSet& set, int threads) {
  constexpr std::size_t kBatch = 8;
  const std::size_t batches = (set.samples.size() + kBatch - 1) / kBatch;
  std::vector<ConfusionMatrix> parts(batches, ConfusionMatrix(set.palette->size()));
  parallel_for(batches, threads, [&](std::size_t b) {
    NoGradGuard no_grad;
    std::vector<std::size_t> idx;
    for (std::size_t i = b * kBatch; i < std::min(set.samples.size(), (b + 1) * kBatch); ++i) idx.push_back(i);
    const Tensor<Scalar> logits = model.forward(batch_inputs(model, set, idx));
    for (std::size_t k = 0; k < idx.size(); ++k) {
      accumulate(parts[b], decode_logits(logits, static_cast<int>(k), set.palette), set.samples[idx[k]].target);
    }
  });
  // Summing in batch order keeps the result independent of scheduling.
  ConfusionMatrix cm(set.palette->size());
  for (const auto& p : parts) cm += p;
  return cm;
}

ConfusionMatrix evaluate_baseline(const PreparedSet& set) {
  ConfusionMatrix cm(set.palette->size());
  for (const auto& s : set.samples) accumulate(cm, s.baseline, s.target);
  return cm;
}

namespace {

void write_metrics_header(std::ostream& os, const Palette& palette) {
  os << "epoch,loss,steps,miou";
  for (const auto& c : palette.classes()) os << ",iou_" << c.name;
  os << '\n';
}

void write_metrics_row(std::ostream& os, const EpochRecord& r, std::size_t classes) {
  auto opt = [&](const std::optional<double>& v) {
    if (v) {
      os << *v;
    } else {
      os << "absent";
    }
  };
  os << r.epoch << ',' << r.loss << ',' << r.steps << ',';
  opt(r.miou);
  for (std::size_t c = 0; c < classes; ++c) {
    os << ',';
    if (c < r.class_iou.size()) opt(r.class_iou[c]);
  }
  os << '\n';
}

}  // namespace

template <class Scalar>
TrainResult train(Model<Scalar>& model, const PreparedSet& train_set, const PreparedSet& val_set,
                  const TrainConfig& tc, const TrainOptions& opts) {
  tc.validate();
  if (train_set.samples.empty()) throw Error(ErrorKind::Manifest, "the training split is empty");
  const Palette& palette = *train_set.palette;
  const Eigen::VectorXd weights = training_class_weights(train_set, tc);

  std::ofstream metrics;
  if (!opts.run_dir.empty()) {
    std::filesystem::create_directories(opts.run_dir);
    std::ofstream cfg_out(opts.run_dir / "config.json");
    cfg_out << opts.config_snapshot.dump(2) << '\n';
    if (!cfg_out) throw Error(ErrorKind::Io, "cannot write config snapshot in " + opts.run_dir.string());
    metrics.open(opts.run_dir / "metrics.csv", std::ios::trunc);
    if (!metrics) throw Error(ErrorKind::Io, "cannot write metrics.csv in " + opts.run_dir.string());
    metrics.precision(8);
    write_metrics_header(metrics, palette);
  }

  std::vector<Tensor<Scalar>> params = model.parameters();
  AdamState<Scalar> adam;
  TrainResult result;
  double best_score = -std::numeric_limits<double>::infinity();
  int stale = 0;
  std::int64_t steps = 0;
  std::vector<std::size_t> order(train_set.samples.size());

  for (int epoch = 1; epoch <= tc.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937_64 rng(tc.seed * 0x9E3779B97F4A7C15ull + static_cast<std::uint64_t>(epoch));
    std::shuffle(order.begin(), order.end(), rng);

    double loss_sum = 0.0;
    std::size_t seen = 0;
    bool budget_hit = false;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(tc.batch_size)) {
      if (tc.max_steps > 0 && steps >= tc.max_steps) {
        budget_hit = true;
        break;
      }
      const std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(start),
                                         order.begin() + static_cast<std::ptrdiff_t>(std::min(
                                                             order.size(), start + tc.batch_size)));
      std::vector<const SemanticImage*> targets;
      for (std::size_t i : idx) targets.push_back(&train_set.samples[i].target);
      const Tensor<Scalar> target = onehot_batch<Scalar>(targets, static_cast<int>(palette.size()));
      const Tensor<Scalar> loss = softmax_cross_entropy(model.forward(batch_inputs(model, train_set, idx)), target,
                                                        weights);
      loss.backward();
      adam_step(params, adam, tc.adam);
      for (auto& p : params) p.zero_grad();
      ++steps;
      loss_sum += static_cast<double>(loss.item()) * static_cast<double>(idx.size());
      seen += idx.size();
    }
    if (seen == 0) break;
    if (tc.max_steps > 0 && steps >= tc.max_steps) budget_hit = true;

    EpochRecord rec;
    rec.epoch = epoch;
    rec.loss = loss_sum / static_cast<double>(seen);
    rec.steps = steps;
    double score = -rec.loss;
    if (!val_set.samples.empty()) {
      const ConfusionMatrix cm = evaluate(model, val_set, opts.threads);
      for (std::size_t c = 0; c < palette.size(); ++c) rec.class_iou.push_back(class_iou(cm, c));
      rec.miou = miou(cm);
      score = *rec.miou;
    }
    result.history.push_back(rec);
    if (metrics.is_open()) {
      write_metrics_row(metrics, rec, palette.size());
      metrics.flush();
    }
    if (opts.log) {
      *opts.log << "epoch " << epoch << " loss " << rec.loss;
      if (rec.miou) *opts.log << " val_miou " << *rec.miou;
      *opts.log << " steps " << steps << std::endl;
    }

    if (score > best_score) {
      best_score = score;
      result.best_epoch = epoch;
      result.best_miou = rec.miou;
      result.best = model.to_arrays();
      if (!opts.run_dir.empty()) save_checkpoint(opts.run_dir / "best.ckpt", result.best);
      stale = 0;
    } else if (++stale >= tc.patience) {
      break;
    }
    if (budget_hit) break;
  }
  if (!opts.run_dir.empty()) save_checkpoint(opts.run_dir / "last.ckpt", model.to_arrays());
  return result;
}

#define BEV_INSTANTIATE_TRAINING(Scalar)                                                                       \
  template std::vector<Tensor<Scalar>> batch_inputs(const Model<Scalar>&, const PreparedSet&,                  \
                                                    const std::vector<std::size_t>&);                          \
  template ConfusionMatrix evaluate(const Model<Scalar>&, const PreparedSet&, int);                            \
  template TrainResult train(Model<Scalar>&, const PreparedSet&, const PreparedSet&, const TrainConfig&,       \
                             const TrainOptions&);

BEV_INSTANTIATE_TRAINING(float)
BEV_INSTANTIATE_TRAINING(double)

}  // namespace bev
