#pragma once

// Batch commands behind the bevtool executable. Each returns a process exit
// status: 0 iff no item failed. Diagnostics go to `err`, progress to `out`.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>

#include "bev/config.hpp"

namespace bev {

struct CommandIo {
  std::ostream& out;
  std::ostream& err;
  int threads = 1;
};

/// Renders `count` samples into `dir`. Samples whose files all exist are
/// kept as they are, so an interrupted run can be resumed. Resuming with a
/// different seed is refused.
int cmd_gen_dataset(const PipelineConfig& cfg, const std::filesystem::path& dir, std::size_t count,
                    std::uint64_t seed, double train_fraction, const CommandIo& io);

/// Writes samples/<id>/homography.png for every sample (or only `sample`)
/// and records it in the manifest.
int cmd_ipm_stitch(const PipelineConfig& cfg, const std::filesystem::path& dir,
                   const std::optional<std::string>& sample, const CommandIo& io);

/// Recomputes the occlusion-augmented labels from the BEV ground truth with
/// the configured policy.
int cmd_occlusion(const PipelineConfig& cfg, const std::filesystem::path& dir, const CommandIo& io);

/// Trains `variant` (xst, plain or single) on the train split, validating on
/// the val split, and fills `run_dir`.
int cmd_train(const PipelineConfig& cfg, const std::filesystem::path& dir, const std::string& variant,
              const std::filesystem::path& run_dir, const CommandIo& io);

/// Scores a checkpoint, or with variant "baseline" the stitched homography
/// images, on `split`. The CSV report goes to `report` or to `out`.
int cmd_eval(const PipelineConfig& cfg, const std::filesystem::path& dir,
             const std::optional<std::filesystem::path>& checkpoint, const std::string& split,
             const std::string& variant, const std::optional<std::filesystem::path>& report, const CommandIo& io);

/// Writes the prediction for one sample as a label PNG.
int cmd_predict(const PipelineConfig& cfg, const std::filesystem::path& dir,
                const std::filesystem::path& checkpoint, const std::string& sample,
                const std::filesystem::path& png, const CommandIo& io);

}  // namespace bev
