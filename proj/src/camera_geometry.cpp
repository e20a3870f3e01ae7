#include "bev/camera_geometry.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>

#include "bev/error.hpp"

namespace bev {

namespace {

constexpr double kRotationTolerance = 1e-9;

double deg2rad(double deg) { return deg * std::numbers::pi / 180.0; }

}  // namespace

Intrinsics Intrinsics::from_fov(double hfov_deg, int width, int height) {
  if (!(hfov_deg > 0.0 && hfov_deg < 180.0) || width <= 0 || height <= 0) {
    throw Error(ErrorKind::InvalidIntrinsics, "fov must be in (0, 180) and resolution positive");
  }
  const double f = 0.5 * width / std::tan(0.5 * deg2rad(hfov_deg));
  return Intrinsics{f, f, 0.5 * width, 0.5 * height, 0.0};
}

Extrinsics::Extrinsics() : rotation_(Eigen::Matrix3d::Identity()), translation_(Eigen::Vector3d::Zero()) {}

Extrinsics::Extrinsics(const Eigen::Matrix3d& rotation, const Eigen::Vector3d& translation)
    : rotation_(rotation), translation_(translation) {
  const double ortho = (rotation.transpose() * rotation - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff();
  const double det = rotation.determinant();
  if (!(ortho <= kRotationTolerance) || !(std::abs(det - 1.0) <= kRotationTolerance)) {
    std::ostringstream os;
    os << "rotation is not proper orthonormal (|R^T R - I| = " << ortho << ", det = " << det << ")";
    throw Error(ErrorKind::InvalidExtrinsics, os.str());
  }
  if (!translation.allFinite()) throw Error(ErrorKind::InvalidExtrinsics, "non-finite translation");
}

Extrinsics Extrinsics::from_pose(double yaw_deg, double pitch_deg, double roll_deg,
                                 const Eigen::Vector3d& position) {
  // Body frame: x forward, y left, z up. A negative pitch tilts the nose down.
  const Eigen::Matrix3d world_from_body =
      (Eigen::AngleAxisd(deg2rad(yaw_deg), Eigen::Vector3d::UnitZ()) *
       Eigen::AngleAxisd(-deg2rad(pitch_deg), Eigen::Vector3d::UnitY()) *
       Eigen::AngleAxisd(deg2rad(roll_deg), Eigen::Vector3d::UnitX()))
          .toRotationMatrix();
  Eigen::Matrix3d body_from_camera;
  body_from_camera << 0, 0, 1,
                      -1, 0, 0,
                      0, -1, 0;
  const Eigen::Matrix3d rotation = (world_from_body * body_from_camera).transpose();
  return Extrinsics(rotation, -rotation * position);
}

int BevGrid::cols() const { return static_cast<int>(std::lround(width_m * px_per_m)); }
int BevGrid::rows() const { return static_cast<int>(std::lround(height_m * px_per_m)); }

double BevGrid::x_min() const { return origin == GridOrigin::Centered ? -0.5 * width_m : 0.0; }
double BevGrid::y_max() const { return 0.5 * height_m; }

Eigen::Matrix3d BevGrid::meters_to_pixels() const {
  Eigen::Matrix3d g;
  g << px_per_m, 0.0, -x_min() * px_per_m,
       0.0, -px_per_m, y_max() * px_per_m,
       0.0, 0.0, 1.0;
  return g;
}

Eigen::Vector2d BevGrid::pixel_center_to_meters(int row, int col) const {
  return {x_min() + (col + 0.5) / px_per_m, y_max() - (row + 0.5) / px_per_m};
}

void BevGrid::validate() const {
  if (!(width_m > 0.0 && height_m > 0.0 && px_per_m > 0.0) || cols() <= 0 || rows() <= 0) {
    throw Error(ErrorKind::Configuration, "BEV grid extents and resolution must be positive");
  }
}

IpmHomography IpmHomography::from_bev_pixel(const Eigen::Matrix3d& bev_pixel) {
  Eigen::FullPivLU<Eigen::Matrix3d> lu(bev_pixel);
  if (!lu.isInvertible()) throw Error(ErrorKind::DegenerateHomography, "bev_pixel map is singular");
  IpmHomography out;
  out.h = bev_pixel;
  out.h_inv = lu.inverse();
  out.bev_pixel = bev_pixel;
  out.image_from_bev = out.h_inv;
  return out;
}

Eigen::Matrix3d intrinsics_matrix(const Intrinsics& intr) {
  if (!(intr.focal_u > 0.0) || !(intr.focal_v > 0.0)) {
    std::ostringstream os;
    os << "focal lengths must be positive (got " << intr.focal_u << ", " << intr.focal_v << ")";
    throw Error(ErrorKind::InvalidIntrinsics, os.str());
  }
  Eigen::Matrix3d k;
  k << intr.focal_u, intr.skew, intr.center_u,
       0.0, intr.focal_v, intr.center_v,
       0.0, 0.0, 1.0;
  return k;
}

ProjectionMatrix projection_matrix(const Intrinsics& intr, const Extrinsics& extr) {
  Matrix34d rt;
  rt << extr.rotation(), extr.translation();
  return {intrinsics_matrix(intr) * rt};
}

PlaneEmbedding plane_embedding(const Eigen::Vector3d& origin, const Eigen::Vector3d& axis_u,
                               const Eigen::Vector3d& axis_v) {
  constexpr double tol = 1e-9;
  if (std::abs(origin.z()) > tol || std::abs(axis_u.z()) > tol || std::abs(axis_v.z()) > tol) {
    throw Error(ErrorKind::InvalidFrame, "road frame must lie in the z = 0 plane");
  }
  if (std::abs(axis_u.norm() - 1.0) > tol || std::abs(axis_v.norm() - 1.0) > tol) {
    throw Error(ErrorKind::InvalidFrame, "road frame axes must be unit vectors");
  }
  if (std::abs(axis_u.dot(axis_v)) > tol) {
    throw Error(ErrorKind::InvalidFrame, "road frame axes must be orthogonal");
  }
  Matrix43d m = Matrix43d::Zero();
  m.block<3, 1>(0, 0) = axis_u;
  m.block<3, 1>(0, 1) = axis_v;
  m.block<3, 1>(0, 2) = origin;
  m(3, 2) = 1.0;
  return {m};
}

PlaneEmbedding ground_plane_embedding() {
  return plane_embedding(Eigen::Vector3d::Zero(), Eigen::Vector3d::UnitX(), Eigen::Vector3d::UnitY());
}

IpmHomography ipm_homography(const ProjectionMatrix& p, const PlaneEmbedding& m, const BevGrid& grid,
                             double max_condition) {
  grid.validate();
  const Eigen::Matrix3d pm = p.p * m.m;
  const Eigen::Vector3d sv = Eigen::JacobiSVD<Eigen::Matrix3d>(pm).singularValues();
  const double cond = sv(2) > 0.0 ? sv(0) / sv(2) : std::numeric_limits<double>::infinity();
  if (!(cond <= max_condition)) {
    std::ostringstream os;
    os << "P*M is singular or ill-conditioned (condition number " << cond << ", cap " << max_condition << ")";
    throw Error(ErrorKind::DegenerateHomography, os.str());
  }
  const Eigen::Matrix3d g = grid.meters_to_pixels();
  IpmHomography out;
  out.h_inv = pm;
  out.h = pm.inverse();
  out.bev_pixel = g * out.h;
  // The grid map is affine with a unit last row, so this keeps the depth sign.
  out.image_from_bev = pm * g.inverse();
  return out;
}

IpmHomography ipm_homography(const CameraModel& camera, const BevGrid& grid, double max_condition) {
  return ipm_homography(projection_matrix(camera.intrinsics, camera.extrinsics), ground_plane_embedding(),
                        grid, max_condition);
}

std::optional<Eigen::Vector3d> project_world_point(const ProjectionMatrix& p, const Eigen::Vector4d& x_w) {
  if (x_w(3) == 0.0 || !x_w.allFinite()) {
    throw Error(ErrorKind::InvalidPoint, "world point must have a nonzero finite homogeneous component");
  }
  const Eigen::Vector3d x_i = p.p * (x_w / x_w(3));
  if (!(x_i(2) > 0.0)) return std::nullopt;
  return Eigen::Vector3d(x_i / x_i(2));
}

std::optional<Eigen::Vector2d> apply_homography(const Eigen::Matrix3d& h, const Eigen::Vector2d& x) {
  const Eigen::Vector3d y = h * x.homogeneous();
  if (!(y(2) > 0.0)) return std::nullopt;
  return Eigen::Vector2d(y.head<2>() / y(2));
}

}  // namespace bev
