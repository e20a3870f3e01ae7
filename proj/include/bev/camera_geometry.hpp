#pragma once

// Pinhole projection, road-plane embedding and the inverse perspective
// mapping (IPM) homography between camera pixels and BEV grid pixels.
//
// Frames: the world is right-handed and z-up with the road at z = 0; the ego
// vehicle sits at the origin facing +x. Camera frames follow the usual
// computer-vision convention (x right, y down, z along the optical axis).
// Pixel (row i, col j) has continuous coordinates (j + 0.5, i + 0.5).

#include <optional>
#include <string>

#include <Eigen/Dense>

namespace bev {

using Matrix34d = Eigen::Matrix<double, 3, 4>;
using Matrix43d = Eigen::Matrix<double, 4, 3>;

struct Intrinsics {
  double focal_u = 1.0;
  double focal_v = 1.0;
  double center_u = 0.0;
  double center_v = 0.0;
  double skew = 0.0;

  /// Square pixels with the principal point at the image center.
  static Intrinsics from_fov(double hfov_deg, int width, int height);
};

/// World-to-camera rigid transform. Orthonormality is checked on
/// construction so downstream code never has to re-validate it.
class Extrinsics {
 public:
  Extrinsics();
  Extrinsics(const Eigen::Matrix3d& rotation, const Eigen::Vector3d& translation);

  /// Camera mounted at `position` (world meters) with body yaw/pitch/roll in
  /// degrees. Yaw 0 looks along +x, yaw 90 along +y; negative pitch looks down.
  static Extrinsics from_pose(double yaw_deg, double pitch_deg, double roll_deg,
                              const Eigen::Vector3d& position);

  const Eigen::Matrix3d& rotation() const { return rotation_; }
  const Eigen::Vector3d& translation() const { return translation_; }

  /// Optical center in world coordinates.
  Eigen::Vector3d center() const { return -rotation_.transpose() * translation_; }
  /// Unit optical axis in world coordinates.
  Eigen::Vector3d optical_axis() const { return rotation_.row(2).transpose(); }

 private:
  Eigen::Matrix3d rotation_;
  Eigen::Vector3d translation_;
};

struct ProjectionMatrix {
  Matrix34d p;
};

struct PlaneEmbedding {
  Matrix43d m;
};

enum class GridOrigin { Centered, EdgeAligned };

/// Metric extent of the BEV image. Columns run along world +x (forward),
/// rows run along world -y, so the ego's left side is at the top.
struct BevGrid {
  double width_m = 70.0;
  double height_m = 44.0;
  double px_per_m = 2.0;
  GridOrigin origin = GridOrigin::Centered;

  int cols() const;
  int rows() const;
  double x_min() const;
  double y_max() const;

  /// Road meters (x, y, 1) -> BEV pixel (u, v, 1).
  Eigen::Matrix3d meters_to_pixels() const;
  Eigen::Vector2d pixel_center_to_meters(int row, int col) const;

  void validate() const;
};

struct CameraModel {
  std::string name;
  Intrinsics intrinsics;
  Extrinsics extrinsics;
  double fov_deg = 90.0;
  int width = 0;
  int height = 0;
};

struct IpmHomography {
  /// Image pixel -> road-plane meters, i.e. (P M)^-1.
  Eigen::Matrix3d h;
  /// Road-plane meters -> image pixel, i.e. P M.
  Eigen::Matrix3d h_inv;
  /// Image pixel -> BEV grid pixel.
  Eigen::Matrix3d bev_pixel;
  /// BEV grid pixel -> image pixel. The third homogeneous component is the
  /// camera-frame depth (up to a positive factor), so its sign tells whether
  /// the BEV point lies in front of the camera.
  Eigen::Matrix3d image_from_bev;

  /// Wraps an arbitrary invertible BEV-from-image map, mostly for fixtures.
  static IpmHomography from_bev_pixel(const Eigen::Matrix3d& bev_pixel);
};

Eigen::Matrix3d intrinsics_matrix(const Intrinsics& intr);

ProjectionMatrix projection_matrix(const Intrinsics& intr, const Extrinsics& extr);

PlaneEmbedding plane_embedding(const Eigen::Vector3d& origin, const Eigen::Vector3d& axis_u,
                               const Eigen::Vector3d& axis_v);

/// The canonical road frame: origin at the world origin, axes world x and y.
PlaneEmbedding ground_plane_embedding();

inline constexpr double kDefaultMaxCondition = 1e12;

IpmHomography ipm_homography(const ProjectionMatrix& p, const PlaneEmbedding& m,
                             const BevGrid& grid, double max_condition = kDefaultMaxCondition);

IpmHomography ipm_homography(const CameraModel& camera, const BevGrid& grid,
                             double max_condition = kDefaultMaxCondition);

/// P x_w normalized to a unit third component. Empty when the point is at or
/// behind the camera plane.
std::optional<Eigen::Vector3d> project_world_point(const ProjectionMatrix& p,
                                                   const Eigen::Vector4d& x_w);

/// Applies a homography and dehomogenizes; empty when w <= 0.
std::optional<Eigen::Vector2d> apply_homography(const Eigen::Matrix3d& h,
                                                const Eigen::Vector2d& x);

}  // namespace bev
