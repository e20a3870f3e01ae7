#include "bev/occlusion.hpp"

#include <algorithm>
#include <numbers>

#include "bev/error.hpp"

namespace bev {

OcclusionPolicy::OcclusionPolicy(PaletteRef palette, std::vector<ClassRule> rules)
    : palette_(std::move(palette)), rules_(std::move(rules)) {
  if (!palette_) throw Error(ErrorKind::Configuration, "occlusion policy needs a palette");
  if (rules_.size() != palette_->size()) {
    throw Error(ErrorKind::Configuration, "occlusion policy must define exactly one rule per palette class");
  }
  for (auto& r : rules_) {
    for (ClassIndex t : r.taller) {
      if (t >= palette_->size()) throw Error(ErrorKind::Configuration, "taller-set references an unknown class");
    }
    std::sort(r.taller.begin(), r.taller.end());
  }
}

OcclusionPolicy OcclusionPolicy::standard(PaletteRef palette) {
  const Palette& p = *palette;
  std::vector<ClassRule> rules(p.size());
  auto set = [&](std::string_view name, BlockRule rule, std::optional<double> height,
                 std::vector<std::string_view> taller = {}) {
    auto idx = p.find(name);
    if (!idx) return;
    ClassRule& r = rules[*idx];
    r.rule = rule;
    r.height_m = height;
    for (auto t : taller) {
      if (auto ti = p.find(t)) r.taller.push_back(*ti);
    }
  };
  set("road", BlockRule::NeverBlocks, 0.0);
  set("sidewalk", BlockRule::NeverBlocks, 0.0);
  set("person", BlockRule::NeverBlocks, 1.8);
  set("bike", BlockRule::NeverBlocks, 1.6);
  set("car", BlockRule::BlocksExceptTaller, 1.5, {"truck", "bus", "obstacle", "vegetation"});
  set("truck", BlockRule::AlwaysBlocks, 3.5);
  set("bus", BlockRule::AlwaysBlocks, 3.2);
  set("obstacle", BlockRule::AlwaysBlocks, 8.0);
  set("vegetation", BlockRule::AlwaysBlocks, 4.0);
  set("occluded", BlockRule::NeverBlocks, 0.0);
  return OcclusionPolicy(std::move(palette), std::move(rules));
}

std::vector<ClassIndex> OcclusionPolicy::object_classes() const {
  std::vector<ClassIndex> out;
  for (std::size_t c = 0; c < palette_->size(); ++c) {
    if ((*palette_)[c].is_object) out.push_back(static_cast<ClassIndex>(c));
  }
  return out;
}

bool OcclusionPolicy::is_taller(ClassIndex blocker, ClassIndex other) const {
  const auto& t = rules_[blocker].taller;
  return std::binary_search(t.begin(), t.end(), other);
}

CameraMountBev mount_from_camera(const CameraModel& camera, const BevGrid& grid) {
  const Eigen::Matrix3d g = grid.meters_to_pixels();
  const Eigen::Vector3d c = camera.extrinsics.center();
  const Eigen::Vector3d axis = camera.extrinsics.optical_axis();
  CameraMountBev mount;
  mount.position = (g * Eigen::Vector3d(c.x(), c.y(), 1.0)).head<2>();
  // Directions transform with the linear part of the grid map.
  Eigen::Vector2d a = g.topLeftCorner<2, 2>() * axis.head<2>();
  if (a.norm() < 1e-12) throw Error(ErrorKind::UnsupportedFov, "camera '" + camera.name + "' looks straight down");
  mount.axis = a.normalized();
  mount.fov_deg = camera.fov_deg;
  return mount;
}

namespace {

enum class RayState { Clear, BlockedExceptTaller, Blocked };

void validate_mount(const CameraMountBev& mount, int rows, int cols) {
  if (!(mount.fov_deg > 0.0 && mount.fov_deg < 180.0)) {
    throw Error(ErrorKind::UnsupportedFov, "mount fov must lie in (0, 180) degrees");
  }
  const auto& p = mount.position;
  if (!(p.x() >= 0.0 && p.y() >= 0.0 && p.x() <= cols && p.y() <= rows)) {
    throw Error(ErrorKind::Configuration, "camera mount lies outside the BEV grid");
  }
}

}  // namespace

Mask cast_rays(const SemanticImage& gt, const CameraMountBev& mount, const OcclusionPolicy& policy) {
  const int rows = gt.height();
  const int cols = gt.width();
  validate_mount(mount, rows, cols);
  if (policy.size() != gt.palette->size()) throw Error(ErrorKind::Configuration, "policy does not match palette");
  Mask visible = Mask::Constant(rows, cols, false);
  const Eigen::Vector2d axis = mount.axis.normalized();
  const double cos_half = std::cos(0.5 * mount.fov_deg * std::numbers::pi / 180.0);

  const int mount_col = std::clamp(static_cast<int>(std::floor(mount.position.x())), 0, cols - 1);
  const int mount_row = std::clamp(static_cast<int>(std::floor(mount.position.y())), 0, rows - 1);
  visible(mount_row, mount_col) = true;

  auto cast = [&](int border_row, int border_col) {
    const Eigen::Vector2d target(border_col + 0.5, border_row + 0.5);
    const Eigen::Vector2d d = target - mount.position;
    const double n = d.norm();
    if (n > 0.0 && d.dot(axis) < cos_half * n) return;
    RayState state = RayState::Clear;
    ClassIndex blocker = 0;
    supercover_line(mount.position, target, rows, cols, [&](int r, int c) {
      const ClassIndex cls = gt(r, c);
      bool seen = false;
      switch (state) {
        case RayState::Clear: seen = true; break;
        case RayState::BlockedExceptTaller: seen = policy.is_taller(blocker, cls); break;
        case RayState::Blocked: seen = false; break;
      }
      if (seen) visible(r, c) = true;
      // Blocking takes effect after the blocker's own cell.
      const BlockRule rule = policy[cls].rule;
      if (rule == BlockRule::AlwaysBlocks) {
        state = RayState::Blocked;
      } else if (rule == BlockRule::BlocksExceptTaller && state == RayState::Clear) {
        state = RayState::BlockedExceptTaller;
        blocker = cls;
      }
    });
  };

  for (int c = 0; c < cols; ++c) {
    cast(0, c);
    if (rows > 1) cast(rows - 1, c);
  }
  for (int r = 1; r + 1 < rows; ++r) {
    cast(r, 0);
    if (cols > 1) cast(r, cols - 1);
  }
  return visible;
}

Mask rescue_components(const SemanticImage& gt, const Mask& visibility, const std::vector<ClassIndex>& object_classes) {
  const int rows = gt.height();
  const int cols = gt.width();
  Mask out = visibility;
  std::vector<bool> is_object(256, false);
  for (ClassIndex c : object_classes) {
    if (c >= gt.palette->size()) throw Error(ErrorKind::Configuration, "rescue class outside palette");
    is_object[c] = true;
  }
  Eigen::Array<int, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> label =
      Eigen::Array<int, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>::Constant(rows, cols, -1);
  std::vector<std::pair<int, int>> stack;
  std::vector<std::pair<int, int>> component;
  int next_label = 0;
  for (int r0 = 0; r0 < rows; ++r0) {
    for (int c0 = 0; c0 < cols; ++c0) {
      const ClassIndex cls = gt(r0, c0);
      if (!is_object[cls] || label(r0, c0) >= 0) continue;
      component.clear();
      stack.assign(1, {r0, c0});
      label(r0, c0) = next_label;
      bool any_visible = false;
      while (!stack.empty()) {
        auto [r, c] = stack.back();
        stack.pop_back();
        component.emplace_back(r, c);
        any_visible = any_visible || visibility(r, c);
        constexpr int dr[4] = {-1, 1, 0, 0};
        constexpr int dc[4] = {0, 0, -1, 1};
        for (int k = 0; k < 4; ++k) {
          const int rr = r + dr[k];
          const int cc = c + dc[k];
          if (rr < 0 || cc < 0 || rr >= rows || cc >= cols) continue;
          if (label(rr, cc) >= 0 || gt(rr, cc) != cls) continue;
          label(rr, cc) = next_label;
          stack.emplace_back(rr, cc);
        }
      }
      ++next_label;
      if (any_visible) {
        for (auto [r, c] : component) out(r, c) = true;
      }
    }
  }
  return out;
}

SemanticImage label_occlusion(const SemanticImage& gt, const std::vector<CameraMountBev>& mounts,
                              const OcclusionPolicy& policy) {
  gt.validate();
  if (!gt.palette->find("occluded")) throw Error(ErrorKind::Configuration, "palette lacks an 'occluded' class");
  if (mounts.empty()) throw Error(ErrorKind::Configuration, "occlusion labeling needs at least one camera mount");
  Mask visible = Mask::Constant(gt.height(), gt.width(), false);
  for (const auto& m : mounts) visible = visible || cast_rays(gt, m, policy);
  visible = rescue_components(gt, visible, policy.object_classes());
  SemanticImage out = gt;
  const ClassIndex occluded = gt.palette->occluded();
  for (int r = 0; r < gt.height(); ++r) {
    for (int c = 0; c < gt.width(); ++c) {
      if (!visible(r, c)) out(r, c) = occluded;
    }
  }
  return out;
}

}  // namespace bev
