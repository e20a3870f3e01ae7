#pragma once

// On-disk datasets and the preprocessing that turns a sample into network
// inputs.
//
// A dataset folder holds manifest.txt, palette.txt, rig.json and one
// folder per sample under samples/. The manifest is line oriented:
//
//   birdseye-manifest 1
//   seed 42
//   palette palette.txt
//   rig rig.json
//   sample 000000 train front=samples/000000/front.png ... bev=... occluded=...
//
// Paths are relative to the dataset folder.

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "bev/camera_geometry.hpp"
#include "bev/config.hpp"
#include "bev/semantic_image.hpp"

namespace bev {

inline constexpr const char* kManifestFile = "manifest.txt";
inline constexpr const char* kBevKey = "bev";
inline constexpr const char* kOccludedKey = "occluded";
inline constexpr const char* kHomographyKey = "homography";

struct ManifestEntry {
  std::string id;
  std::string split;
  std::map<std::string, std::string> files;
};

struct Manifest {
  std::uint64_t seed = 0;
  std::string palette_file = "palette.txt";
  std::string rig_file = "rig.json";
  std::vector<ManifestEntry> samples;

  std::vector<const ManifestEntry*> split(const std::string& tag) const;

  static Manifest load(const std::filesystem::path& dir);
  /// Atomic replace of manifest.txt.
  void save(const std::filesystem::path& dir) const;
};

std::string sample_id(std::size_t index);

/// Well-mixed 64-bit hash used to derive per-sample seeds.
std::uint64_t splitmix64(std::uint64_t x);

/// Train / val tags for `count` samples: the first round(fraction * count)
/// are train.
std::vector<std::string> split_tags(std::size_t count, double train_fraction);

/// Parses "0.9", "0.9/0.1" or "0.9,0.1" into the train fraction.
double parse_split_fractions(const std::string& text);

struct GeneratedSample {
  std::map<std::string, SemanticImage> cameras;
  SemanticImage bev;
  SemanticImage occluded;
};

/// Renders one sample. Scene generation failures are retried with derived
/// seeds, so the result is a deterministic function of (seed, index).
GeneratedSample generate_sample(const PipelineConfig& cfg, std::uint64_t seed, std::size_t index);

/// Camera names in rig order, used as the stitching priority.
std::vector<std::string> rig_priority(const std::vector<CameraModel>& rig);

/// Center crop to the output aspect ratio followed by nearest resizing.
struct CropResize {
  int x0 = 0;
  int y0 = 0;
  int crop_w = 1;
  int crop_h = 1;
  int out_w = 1;
  int out_h = 1;

  static CropResize center(int src_w, int src_h, int out_w, int out_h);
  /// Continuous output pixel coordinates -> source pixel coordinates.
  Eigen::Matrix3d output_to_source() const;
};

SemanticImage crop_resize(const SemanticImage& src, const CropResize& cr);

/// Pixel coordinates of a W x H image -> normalized [-1, 1] coordinates.
Eigen::Matrix3d normalize_pixels(int width, int height);

/// Maps normalized network-BEV coordinates to normalized network-camera
/// coordinates, composing the crops with the camera's IPM homography.
Eigen::Matrix3d network_homography(const CameraModel& cam, const BevGrid& grid, const CropResize& cam_crop,
                                   const CropResize& bev_crop);

/// A sample as the network sees it: cropped camera labels, the cropped
/// homography image and the cropped occlusion-augmented target.
struct PreparedSample {
  std::string id;
  std::map<std::string, SemanticImage> inputs;
  SemanticImage target;
  /// Homography image at network resolution, the evaluation baseline.
  SemanticImage baseline;
};

struct PreparedSet {
  /// Rig and palette recorded with the dataset.
  std::vector<CameraModel> rig;
  PaletteRef palette;
  std::vector<PreparedSample> samples;
  CropResize bev_crop;
  std::map<std::string, CropResize> camera_crops;
};

/// Loads and preprocesses every sample of `split` ("all" selects all).
/// Missing files raise a manifest error naming the sample.
PreparedSet load_prepared(const PipelineConfig& cfg, const std::filesystem::path& dataset_dir,
                          const std::string& split);

}  // namespace bev
