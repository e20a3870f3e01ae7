#pragma once

// The pipeline configuration: one JSON document whose sections are named
// after the modules they configure. Every field has a default, so `{}` is a
// valid configuration. Relative paths resolve against the document's folder.
//
//   {
//     "camera_geometry":   {"rig": "rig.json", "grid": {"width_m": 70, ...}},
//     "semantics_io":      {"palette": "palette.txt", "weight_k": 1.02, ...},
//     "occlusion_labeler": {"policy": "policy.json"},
//     "scene_synth":       {"density": 1.0, "sky": "occluded", ...},
//     "unetxst":           {"network": {...}, "training": {...}},
//     "cli":               {"seed": 0, "dataset_dir": "data", ...}
//   }

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "bev/camera_geometry.hpp"
#include "bev/occlusion.hpp"
#include "bev/optim.hpp"
#include "bev/scene.hpp"
#include "bev/semantic_image.hpp"

namespace bev {

struct NetworkShape {
  int levels = 4;
  int base_channels = 8;
  int input_width = 128;
  int input_height = 64;
};

struct TrainConfig {
  AdamConfig adam;
  int batch_size = 5;
  int epochs = 30;
  /// Early stop after this many epochs without a better validation MIoU.
  int patience = 5;
  /// Stop after this many optimizer steps in total; 0 means no limit.
  int max_steps = 0;
  std::uint64_t seed = 1;
  double weight_k = 1.02;
  /// When false the occluded class gets weight 1 instead of the log law.
  bool weight_occluded = true;

  void validate() const;
};

struct PipelineConfig {
  std::filesystem::path base_dir = ".";
  std::optional<std::filesystem::path> rig_file;
  std::optional<std::filesystem::path> palette_file;
  std::optional<std::filesystem::path> policy_file;

  std::vector<CameraModel> rig;
  PaletteRef palette;
  OcclusionPolicy policy;
  BevGrid grid;
  SceneParams scene;
  std::string sky_class = "occluded";

  NetworkShape network;
  TrainConfig training;

  std::uint64_t seed = 0;
  std::filesystem::path dataset_dir = "data";
  std::filesystem::path run_dir = "runs";
  double train_fraction = 0.9;

  ClassIndex sky() const { return palette->index_of(sky_class); }
  void validate() const;
  /// Fully resolved snapshot, suitable for reloading.
  nlohmann::json to_json() const;
};

PipelineConfig default_config();
PipelineConfig config_from_json(const nlohmann::json& doc, const std::filesystem::path& base_dir);
PipelineConfig load_config(const std::filesystem::path& path);

/// Rig file: {"cameras": [{"name", "width", "height", "hfov_deg", "yaw_deg",
/// "pitch_deg", "roll_deg", "position": [x, y, z], "intrinsics"?}]}
std::vector<CameraModel> rig_from_json(const nlohmann::json& doc);
nlohmann::json rig_to_json(const std::vector<CameraModel>& rig);
std::vector<CameraModel> load_rig(const std::filesystem::path& path);

/// Policy file: {"classes": {"car": {"rule": "blocks_except_taller",
/// "taller": ["truck"], "height_m": 1.5}, ...}}; every palette class must
/// appear exactly once.
OcclusionPolicy policy_from_json(const nlohmann::json& doc, PaletteRef palette);
nlohmann::json policy_to_json(const OcclusionPolicy& policy);

}  // namespace bev
