#pragma once

// Procedural toy scenes: a straight road with sidewalks, flanking buildings
// and vegetation, and vehicles / pedestrians as extruded oriented boxes.
// Scenes render to semantic camera views by ray casting and to BEV ground
// truth by top-down rasterization.

#include <cstdint>
#include <optional>
#include <vector>

#include <Eigen/Core>

#include "bev/camera_geometry.hpp"
#include "bev/occlusion.hpp"
#include "bev/semantic_image.hpp"

namespace bev {

struct Box3 {
  /// Footprint center in world meters.
  Eigen::Vector2d center = Eigen::Vector2d::Zero();
  /// Footprint length (along the yawed x axis) and width, meters.
  Eigen::Vector2d size = Eigen::Vector2d::Ones();
  double yaw = 0.0;
  double height = 1.0;
  ClassIndex cls = 0;

  bool contains_xy(const Eigen::Vector2d& p, double margin = 0.0) const;
  /// Ray parameter interval [t_enter, t_exit] of origin + t * dir inside the box.
  std::optional<std::pair<double, double>> intersect(const Eigen::Vector3d& origin, const Eigen::Vector3d& dir) const;
  std::array<Eigen::Vector2d, 4> corners() const;
};

struct ToyScene {
  BevGrid grid;
  /// Flat classes over the BEV grid; outside the grid the border values extend.
  SemanticImage ground;
  std::vector<Box3> objects;

  ClassIndex ground_class_at(const Eigen::Vector2d& xy) const;
};

struct SceneParams {
  /// Scales every object count; 0 yields a ground-only scene.
  double density = 1.0;
  double vehicle_density = 1.0;
  double pedestrian_density = 1.0;
  double static_density = 1.0;
  double road_width_min = 7.0;
  double road_width_max = 12.0;
  double road_offset_max = 2.0;
  double sidewalk_width_min = 2.0;
  double sidewalk_width_max = 4.0;
  /// Placement attempts per object before generation fails.
  int max_retries = 200;

  void validate() const;
};

/// Mount height 2 m at the ego origin, yaws 0/180/90/-90, pitch -15 deg,
/// horizontal fov 110 deg, 241 x 151 pixels.
std::vector<CameraModel> default_rig();

ToyScene generate_scene(std::uint64_t seed, const SceneParams& params, const BevGrid& grid, PaletteRef palette,
                        const OcclusionPolicy& policy);

/// Rays that hit nothing get `sky`.
SemanticImage render_camera(const ToyScene& scene, const CameraModel& cam, ClassIndex sky);

SemanticImage render_bev_gt(const ToyScene& scene);

/// Exact 3-D visibility: true where a BEV cell is occluded from every camera.
/// Flat cells are probed at their ground center. Object cells are probed at
/// four heights over their center and count as seen when the first surface
/// the sight line meets belongs to their own box and lies within one cell of
/// them. NeverBlocks boxes never obstruct other cells. Object components are
/// rescued exactly as in label_occlusion.
Mask visibility_oracle(const ToyScene& scene, const std::vector<CameraModel>& cams, const OcclusionPolicy& policy);

}  // namespace bev
