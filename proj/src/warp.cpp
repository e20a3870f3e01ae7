#include "bev/warp.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "bev/error.hpp"

namespace bev {

SemanticImage warp_label(const SemanticImage& src, const IpmHomography& hom, const BevGrid& grid,
                         ClassIndex fill) {
  src.validate();
  if (fill >= src.palette->size()) throw Error(ErrorKind::Palette, "fill index is not a class of the source palette");
  grid.validate();
  const int rows = grid.rows();
  const int cols = grid.cols();
  SemanticImage out(cols, rows, src.palette, fill);
  const Eigen::Matrix3d& a = hom.image_from_bev;
  for (int i = 0; i < rows; ++i) {
    for (int j = 0; j < cols; ++j) {
      const Eigen::Vector3d q = a * Eigen::Vector3d(j + 0.5, i + 0.5, 1.0);
      if (!(q(2) > 0.0)) continue;
      const double u = q(0) / q(2);
      const double v = q(1) / q(2);
      if (!(u >= 0.0 && v >= 0.0 && u < src.width() && v < src.height())) continue;
      out(i, j) = src(static_cast<int>(v), static_cast<int>(u));
    }
  }
  return out;
}

FovMask fov_mask(const CameraModel& camera, const BevGrid& grid) {
  if (!(camera.fov_deg > 0.0 && camera.fov_deg < 180.0)) {
    throw Error(ErrorKind::UnsupportedFov, "camera '" + camera.name + "' needs 0 < fov < 180 degrees");
  }
  grid.validate();
  const Eigen::Vector3d axis3 = camera.extrinsics.optical_axis();
  Eigen::Vector2d axis = axis3.head<2>();
  if (axis.norm() < 1e-9) {
    throw Error(ErrorKind::UnsupportedFov, "camera '" + camera.name + "' has no ground-projected optical axis");
  }
  axis.normalize();
  const Eigen::Vector2d origin = camera.extrinsics.center().head<2>();
  const double cos_half = std::cos(0.5 * camera.fov_deg * std::numbers::pi / 180.0);
  FovMask mask{Mask::Constant(grid.rows(), grid.cols(), false), camera.name};
  for (int i = 0; i < grid.rows(); ++i) {
    for (int j = 0; j < grid.cols(); ++j) {
      const Eigen::Vector2d d = grid.pixel_center_to_meters(i, j) - origin;
      const double n = d.norm();
      mask.bits(i, j) = n == 0.0 || d.dot(axis) >= cos_half * n;
    }
  }
  return mask;
}

Mask view_mask(const CameraModel& camera, const BevGrid& grid) {
  Mask seen = fov_mask(camera, grid).bits;
  const Eigen::Matrix3d a = ipm_homography(camera, grid).image_from_bev;
  for (int i = 0; i < grid.rows(); ++i) {
    for (int j = 0; j < grid.cols(); ++j) {
      if (!seen(i, j)) continue;
      const Eigen::Vector3d q = a * Eigen::Vector3d(j + 0.5, i + 0.5, 1.0);
      const double u = q.x() / q.z();
      const double v = q.y() / q.z();
      seen(i, j) = q.z() > 0.0 && u >= 0.0 && v >= 0.0 && u < camera.width && v < camera.height;
    }
  }
  return seen;
}

SemanticImage stitch(const std::vector<CameraWarp>& warps, const std::vector<std::string>& priority,
                     ClassIndex fill) {
  if (warps.empty()) throw Error(ErrorKind::Stitch, "nothing to stitch");
  const auto& first = warps.front().image;
  std::vector<const CameraWarp*> ordered;
  for (const auto& w : warps) {
    if (w.image.width() != first.width() || w.image.height() != first.height() ||
        w.mask.bits.rows() != first.height() || w.mask.bits.cols() != first.width()) {
      throw Error(ErrorKind::Stitch, "warp '" + w.mask.camera_name + "' has mismatching dimensions");
    }
    if (!same_palette(w.image, first)) {
      throw Error(ErrorKind::Stitch, "warp '" + w.mask.camera_name + "' uses a different palette");
    }
    if (std::find(priority.begin(), priority.end(), w.mask.camera_name) == priority.end()) {
      throw Error(ErrorKind::Stitch, "camera '" + w.mask.camera_name + "' missing from priority list");
    }
  }
  for (const auto& name : priority) {
    for (const auto& w : warps) {
      if (w.mask.camera_name == name) ordered.push_back(&w);
    }
  }
  SemanticImage out(first.width(), first.height(), first.palette, fill);
  for (int i = 0; i < out.height(); ++i) {
    for (int j = 0; j < out.width(); ++j) {
      for (const CameraWarp* w : ordered) {
        if (w->mask.bits(i, j) && w->image(i, j) != fill) {
          out(i, j) = w->image(i, j);
          break;
        }
      }
    }
  }
  return out;
}

std::vector<std::string> default_priority() { return {"front", "rear", "left", "right"}; }

SemanticImage homography_image(const std::vector<CameraModel>& rig, const std::vector<SemanticImage>& views,
                               const BevGrid& grid, ClassIndex fill, const std::vector<std::string>& priority) {
  if (rig.size() != views.size()) throw Error(ErrorKind::Input, "one view per rig camera is required");
  std::vector<std::string> order;
  for (const auto& name : priority) {
    if (std::any_of(rig.begin(), rig.end(), [&](const CameraModel& c) { return c.name == name; })) {
      order.push_back(name);
    }
  }
  for (const auto& c : rig) {
    if (std::find(order.begin(), order.end(), c.name) == order.end()) order.push_back(c.name);
  }
  std::vector<CameraWarp> warps;
  warps.reserve(rig.size());
  for (std::size_t k = 0; k < rig.size(); ++k) {
    warps.push_back({warp_label(views[k], ipm_homography(rig[k], grid), grid, fill), fov_mask(rig[k], grid)});
  }
  return stitch(warps, order, fill);
}

}  // namespace bev
