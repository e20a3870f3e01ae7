#include <cmath>
#include <numbers>
#include <random>

#include <gtest/gtest.h>

#include "bev/error.hpp"
#include "bev/occlusion.hpp"
#include "bev/scene.hpp"
#include "bev/semantics_io.hpp"
#include "bev/warp.hpp"
#include "support.hpp"

namespace bev {
namespace {

using test::cls;
using test::palette;

const OcclusionPolicy& policy() {
  static const OcclusionPolicy p = OcclusionPolicy::standard(palette());
  return p;
}

ToyScene flat_scene() {
  ToyScene s;
  s.grid = BevGrid();
  s.ground = SemanticImage(s.grid.cols(), s.grid.rows(), palette(), cls("road"));
  return s;
}

Box3 box(double x, double y, double length, double width, double height, const char* name) {
  Box3 b;
  b.center = {x, y};
  b.size = {length, width};
  b.height = height;
  b.cls = cls(name);
  return b;
}

TEST(GenerateScene, SameSeedSameScene) {
  const ToyScene a = generate_scene(17, SceneParams(), BevGrid(), palette(), policy());
  const ToyScene b = generate_scene(17, SceneParams(), BevGrid(), palette(), policy());
  EXPECT_EQ(a.ground.labels, b.ground.labels);
  ASSERT_EQ(a.objects.size(), b.objects.size());
  for (std::size_t k = 0; k < a.objects.size(); ++k) {
    EXPECT_EQ(a.objects[k].center, b.objects[k].center);
    EXPECT_EQ(a.objects[k].cls, b.objects[k].cls);
  }
  const ToyScene c = generate_scene(18, SceneParams(), BevGrid(), palette(), policy());
  EXPECT_NE(render_bev_gt(a).labels, render_bev_gt(c).labels);
}

TEST(GenerateScene, ZeroDensityHasNoObjects) {
  SceneParams p;
  p.density = 0.0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const ToyScene s = generate_scene(seed, p, BevGrid(), palette(), policy());
    EXPECT_TRUE(s.objects.empty());
    EXPECT_EQ(render_bev_gt(s).labels, s.ground.labels);
  }
}

TEST(GenerateScene, ObjectsNeverOverlap) {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    ToyScene s;
    try {
      s = generate_scene(seed, SceneParams(), BevGrid(), palette(), policy());
    } catch (const Error& e) {
      ASSERT_EQ(e.kind(), ErrorKind::Generation);
      continue;
    }
    const BevGrid& g = s.grid;
    for (int r = 0; r < g.rows(); ++r) {
      for (int c = 0; c < g.cols(); ++c) {
        int inside = 0;
        for (const auto& b : s.objects) inside += b.contains_xy(g.pixel_center_to_meters(r, c));
        EXPECT_LE(inside, 1);
      }
    }
  }
}

TEST(GenerateScene, EveryClassOccursOverManySeeds) {
  const auto rig = default_rig();
  std::vector<CameraMountBev> mounts;
  for (const auto& cam : rig) mounts.push_back(mount_from_camera(cam, BevGrid()));
  std::vector<std::uint64_t> counts(palette()->size(), 0);
  int generated = 0;
  for (std::uint64_t seed = 0; seed < 1000; ++seed) {
    ToyScene s;
    try {
      s = generate_scene(seed, SceneParams(), BevGrid(), palette(), policy());
    } catch (const Error& e) {
      ASSERT_EQ(e.kind(), ErrorKind::Generation);
      continue;
    }
    ++generated;
    count_classes(label_occlusion(render_bev_gt(s), mounts, policy()), counts);
  }
  EXPECT_GE(generated, 950);
  for (std::size_t c = 0; c < counts.size(); ++c) EXPECT_GT(counts[c], 0u) << (*palette())[c].name;
}

TEST(RenderCamera, FlatWorldSplitsAtTheHorizon) {
  const ToyScene s = generate_scene(3, SceneParams{.density = 0.0}, BevGrid(), palette(), policy());
  const CameraModel cam = default_rig().front();
  const SemanticImage img = render_camera(s, cam, cls("occluded"));
  // Level roll: the horizon is the row where the view direction turns level.
  const double horizon = cam.intrinsics.center_v - cam.intrinsics.focal_v * std::tan(15.0 * std::numbers::pi / 180.0);
  for (int i = 0; i < cam.height; ++i) {
    const double v = i + 0.5;
    if (std::abs(v - horizon) < 1.0) continue;
    for (int j = 0; j < cam.width; ++j) {
      if (v < horizon) {
        EXPECT_EQ(img(i, j), cls("occluded"));
      } else {
        EXPECT_NE(img(i, j), cls("occluded"));
      }
    }
  }
}

TEST(RenderCamera, BoxSilhouetteMatchesProjectedCorners) {
  ToyScene s = flat_scene();
  const Box3 b = box(10.0, 0.5, 4.0, 2.0, 1.5, "car");
  s.objects.push_back(b);
  const CameraModel cam = default_rig().front();
  const ProjectionMatrix p = projection_matrix(cam.intrinsics, cam.extrinsics);
  const SemanticImage img = render_camera(s, cam, cls("occluded"));

  double u0 = 1e9, u1 = -1e9, v0 = 1e9, v1 = -1e9;
  for (const auto& c : b.corners()) {
    for (double z : {0.0, b.height}) {
      const auto q = project_world_point(p, Eigen::Vector4d(c.x(), c.y(), z, 1.0));
      ASSERT_TRUE(q);
      u0 = std::min(u0, q->x());
      u1 = std::max(u1, q->x());
      v0 = std::min(v0, q->y());
      v1 = std::max(v1, q->y());
    }
  }
  int inside = 0;
  for (int i = 0; i < cam.height; ++i) {
    for (int j = 0; j < cam.width; ++j) {
      const bool is_car = img(i, j) == cls("car");
      inside += is_car;
      // Nothing outside the projected bounding box.
      if (j + 0.5 < u0 - 1 || j + 0.5 > u1 + 1 || i + 0.5 < v0 - 1 || i + 0.5 > v1 + 1) EXPECT_FALSE(is_car);
    }
  }
  EXPECT_GT(inside, 50);
  // The middle of the rear face is the car, the ground right behind it is hidden.
  const auto mid = project_world_point(p, Eigen::Vector4d(8.0, 0.5, 0.75, 1.0));
  ASSERT_TRUE(mid);
  EXPECT_EQ(img(static_cast<int>(mid->y()), static_cast<int>(mid->x())), cls("car"));
  const auto behind = project_world_point(p, Eigen::Vector4d(12.5, 0.5, 0.0, 1.0));
  ASSERT_TRUE(behind);
  EXPECT_EQ(img(static_cast<int>(behind->y()), static_cast<int>(behind->x())), cls("car"));
}

TEST(RenderCamera, GroundContourWithinOnePixelOfProjectedFootprint) {
  ToyScene s = flat_scene();
  const Box3 b = box(9.0, -1.0, 4.0, 2.0, 1.5, "truck");
  s.objects.push_back(b);
  const CameraModel cam = default_rig().front();
  const ProjectionMatrix p = projection_matrix(cam.intrinsics, cam.extrinsics);
  const SemanticImage img = render_camera(s, cam, cls("occluded"));
  // The two near corners are visible ground contour points.
  for (const Eigen::Vector2d c : {Eigen::Vector2d(7.0, 0.0), Eigen::Vector2d(7.0, -2.0)}) {
    const auto q = project_world_point(p, Eigen::Vector4d(c.x(), c.y(), 0.0, 1.0));
    ASSERT_TRUE(q);
    bool has_box = false, has_ground = false;
    for (int di = -1; di <= 1; ++di) {
      for (int dj = -1; dj <= 1; ++dj) {
        const int i = static_cast<int>(std::floor(q->y())) + di;
        const int j = static_cast<int>(std::floor(q->x())) + dj;
        has_box = has_box || img(i, j) == cls("truck");
        has_ground = has_ground || img(i, j) == cls("road");
      }
    }
    EXPECT_TRUE(has_box && has_ground);
  }
}

TEST(RenderCamera, BoxBehindTheCameraIsCulled) {
  ToyScene s = flat_scene();
  const CameraModel cam = default_rig().front();
  const SemanticImage empty = render_camera(s, cam, cls("occluded"));
  s.objects.push_back(box(-10.0, 0.0, 4.0, 2.0, 3.5, "truck"));
  EXPECT_EQ(render_camera(s, cam, cls("occluded")).labels, empty.labels);
}

TEST(RenderCamera, Deterministic) {
  const ToyScene s = generate_scene(21, SceneParams(), BevGrid(), palette(), policy());
  for (const auto& cam : default_rig()) {
    EXPECT_EQ(render_camera(s, cam, cls("occluded")).labels, render_camera(s, cam, cls("occluded")).labels);
  }
}

TEST(RenderBevGt, CarFootprintOnRoad) {
  ToyScene s = flat_scene();
  s.objects.push_back(box(10.0, 0.0, 4.0, 2.0, 1.5, "car"));
  const SemanticImage gt = render_bev_gt(s);
  // x in [8, 12], y in [-1, 1] -> columns 86..93, rows 42..45.
  for (int r = 0; r < gt.height(); ++r) {
    for (int c = 0; c < gt.width(); ++c) {
      const bool in = c >= 86 && c <= 93 && r >= 42 && r <= 45;
      EXPECT_EQ(gt(r, c), in ? cls("car") : cls("road")) << r << "," << c;
    }
  }
}

TEST(VisibilityOracle, EmptySceneHidesNothingInView) {
  const ToyScene s = flat_scene();
  const auto rig = default_rig();
  EXPECT_FALSE(visibility_oracle(s, rig, policy()).any());
}

// 2-D segment against a convex polygon, for the truck shadow oracle.
bool segment_hits_rect(const Eigen::Vector2d& a, const Eigen::Vector2d& b, double x0, double x1, double y0, double y1) {
  double t0 = 0.0, t1 = 1.0;
  const Eigen::Vector2d d = b - a;
  for (int axis = 0; axis < 2; ++axis) {
    const double lo = axis == 0 ? x0 : y0, hi = axis == 0 ? x1 : y1;
    if (std::abs(d(axis)) < 1e-15) {
      if (a(axis) < lo || a(axis) > hi) return false;
      continue;
    }
    double ta = (lo - a(axis)) / d(axis), tb = (hi - a(axis)) / d(axis);
    if (ta > tb) std::swap(ta, tb);
    t0 = std::max(t0, ta);
    t1 = std::min(t1, tb);
  }
  return t0 <= t1;
}

TEST(VisibilityOracle, TruckShadowMatchesTheFlatShadowPolygon) {
  // The truck is taller than the camera, so a ground cell is hidden exactly
  // when the top-down segment from the camera to it crosses the footprint.
  ToyScene s = flat_scene();
  s.objects.push_back(box(12.0, 2.0, 6.0, 2.5, 3.5, "truck"));
  const CameraModel cam = default_rig().front();
  const Mask hidden = visibility_oracle(s, {cam}, policy());
  const Mask fov = fov_mask(cam, s.grid).bits;
  const SemanticImage gt = render_bev_gt(s);
  const Eigen::Vector2d c = cam.extrinsics.center().head<2>();
  int shadow = 0;
  for (int r = 0; r < s.grid.rows(); ++r) {
    for (int col = 0; col < s.grid.cols(); ++col) {
      if (!fov(r, col) || gt(r, col) == cls("truck")) continue;
      const Eigen::Vector2d g = s.grid.pixel_center_to_meters(r, col);
      const bool inner = segment_hits_rect(c, g, 9.05, 14.95, 0.8, 3.2);
      const bool outer = segment_hits_rect(c, g, 8.95, 15.05, 0.7, 3.3);
      if (inner != outer) continue;  // within a hair of the shadow edge
      EXPECT_EQ(hidden(r, col), inner) << r << "," << col;
      shadow += inner;
    }
  }
  EXPECT_GT(shadow, 300);
}

}  // namespace
}  // namespace bev
