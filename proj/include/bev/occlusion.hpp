#pragma once

// Occlusion labeling of BEV ground truth by 2-D ray casting from every
// camera mount. A BEV cell keeps its class only if at least one camera can
// see it; whole objects with any visible pixel stay visible.

#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "bev/camera_geometry.hpp"
#include "bev/semantic_image.hpp"

namespace bev {

enum class BlockRule { AlwaysBlocks, NeverBlocks, BlocksExceptTaller };

struct ClassRule {
  BlockRule rule = BlockRule::NeverBlocks;
  /// Classes that stay visible behind a BlocksExceptTaller blocker.
  std::vector<ClassIndex> taller;
  /// Representative height in meters, used by the 3-D visibility oracle.
  std::optional<double> height_m;
};

class OcclusionPolicy {
 public:
  OcclusionPolicy() = default;
  /// One rule per palette class, in palette order.
  OcclusionPolicy(PaletteRef palette, std::vector<ClassRule> rules);

  static OcclusionPolicy standard(PaletteRef palette);

  const ClassRule& operator[](ClassIndex c) const { return rules_[c]; }
  ClassRule& rule(ClassIndex c) { return rules_[c]; }
  const PaletteRef& palette() const { return palette_; }
  std::size_t size() const { return rules_.size(); }

  /// Palette classes flagged as objects; these are rescued as whole components.
  std::vector<ClassIndex> object_classes() const;
  bool is_taller(ClassIndex blocker, ClassIndex other) const;

 private:
  PaletteRef palette_;
  std::vector<ClassRule> rules_;
};

struct CameraMountBev {
  /// Continuous BEV pixel coordinates (u = column, v = row).
  Eigen::Vector2d position;
  /// Unit direction in BEV pixel coordinates.
  Eigen::Vector2d axis;
  double fov_deg = 90.0;
};

CameraMountBev mount_from_camera(const CameraModel& camera, const BevGrid& grid);

/// Visits every cell touched by the segment from `from` to `to` (continuous
/// pixel coordinates), in order of first contact, clipped to the grid. At
/// exact corner crossings both side cells are visited before the diagonal.
template <class Visit>
void supercover_line(const Eigen::Vector2d& from, const Eigen::Vector2d& to, int rows, int cols, Visit&& visit);

Mask cast_rays(const SemanticImage& gt, const CameraMountBev& mount, const OcclusionPolicy& policy);

/// 4-connected same-class components of the given classes become fully
/// visible if any of their pixels is visible.
Mask rescue_components(const SemanticImage& gt, const Mask& visibility, const std::vector<ClassIndex>& object_classes);

SemanticImage label_occlusion(const SemanticImage& gt, const std::vector<CameraMountBev>& mounts,
                              const OcclusionPolicy& policy);

// ---------------------------------------------------------------------------

template <class Visit>
void supercover_line(const Eigen::Vector2d& from, const Eigen::Vector2d& to, int rows, int cols, Visit&& visit) {
  auto inside = [&](int x, int y) { return x >= 0 && y >= 0 && x < cols && y < rows; };
  int x = static_cast<int>(std::floor(from.x()));
  int y = static_cast<int>(std::floor(from.y()));
  const int x_end = static_cast<int>(std::floor(to.x()));
  const int y_end = static_cast<int>(std::floor(to.y()));
  const Eigen::Vector2d d = to - from;
  const int step_x = d.x() > 0 ? 1 : (d.x() < 0 ? -1 : 0);
  const int step_y = d.y() > 0 ? 1 : (d.y() < 0 ? -1 : 0);
  constexpr double inf = std::numeric_limits<double>::infinity();
  const double delta_x = step_x != 0 ? 1.0 / std::abs(d.x()) : inf;
  const double delta_y = step_y != 0 ? 1.0 / std::abs(d.y()) : inf;
  double next_x = inf;
  double next_y = inf;
  if (step_x > 0) next_x = (x + 1 - from.x()) * delta_x;
  if (step_x < 0) next_x = (from.x() - x) * delta_x;
  if (step_y > 0) next_y = (y + 1 - from.y()) * delta_y;
  if (step_y < 0) next_y = (from.y() - y) * delta_y;

  if (inside(x, y)) visit(y, x);
  constexpr double tie = 1e-12;
  while (x != x_end || y != y_end) {
    const double t = std::min(next_x, next_y);
    if (t > 1.0) break;
    if (std::abs(next_x - next_y) <= tie) {
      // The segment passes exactly through a cell corner.
      if (inside(x + step_x, y)) visit(y, x + step_x);
      if (inside(x, y + step_y)) visit(y + step_y, x);
      x += step_x;
      y += step_y;
      next_x += delta_x;
      next_y += delta_y;
    } else if (next_x < next_y) {
      x += step_x;
      next_x += delta_x;
    } else {
      y += step_y;
      next_y += delta_y;
    }
    if (inside(x, y)) visit(y, x);
  }
}

}  // namespace bev
