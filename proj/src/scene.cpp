#include "bev/scene.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "bev/error.hpp"

namespace bev {

namespace {

Eigen::Matrix2d yaw_rotation(double yaw) {
  Eigen::Matrix2d r;
  r << std::cos(yaw), -std::sin(yaw), std::sin(yaw), std::cos(yaw);
  return r;
}

/// Separating-axis test between two oriented rectangles inflated by `margin`.
bool footprints_overlap(const Box3& a, const Box3& b, double margin) {
  const Eigen::Matrix2d ra = yaw_rotation(a.yaw);
  const Eigen::Matrix2d rb = yaw_rotation(b.yaw);
  const Eigen::Vector2d ha = 0.5 * a.size + Eigen::Vector2d::Constant(margin);
  const Eigen::Vector2d hb = 0.5 * b.size + Eigen::Vector2d::Constant(margin);
  const Eigen::Vector2d d = b.center - a.center;
  for (int k = 0; k < 4; ++k) {
    const Eigen::Vector2d axis = k < 2 ? ra.col(k) : rb.col(k - 2);
    const double ra_proj = ha.x() * std::abs(axis.dot(ra.col(0))) + ha.y() * std::abs(axis.dot(ra.col(1)));
    const double rb_proj = hb.x() * std::abs(axis.dot(rb.col(0))) + hb.y() * std::abs(axis.dot(rb.col(1)));
    if (std::abs(axis.dot(d)) > ra_proj + rb_proj) return false;
  }
  return true;
}

double class_height(const OcclusionPolicy& policy, ClassIndex cls) {
  const auto& h = policy[cls].height_m;
  if (!h || !(*h > 0.0)) {
    throw Error(ErrorKind::Configuration,
                "class '" + (*policy.palette())[cls].name + "' needs a positive height for scene objects");
  }
  return *h;
}

}  // namespace

bool Box3::contains_xy(const Eigen::Vector2d& p, double margin) const {
  const Eigen::Vector2d local = yaw_rotation(yaw).transpose() * (p - center);
  return std::abs(local.x()) <= 0.5 * size.x() + margin && std::abs(local.y()) <= 0.5 * size.y() + margin;
}

std::array<Eigen::Vector2d, 4> Box3::corners() const {
  const Eigen::Matrix2d r = yaw_rotation(yaw);
  const Eigen::Vector2d h = 0.5 * size;
  return {center + r * Eigen::Vector2d(h.x(), h.y()), center + r * Eigen::Vector2d(-h.x(), h.y()),
          center + r * Eigen::Vector2d(-h.x(), -h.y()), center + r * Eigen::Vector2d(h.x(), -h.y())};
}

std::optional<std::pair<double, double>> Box3::intersect(const Eigen::Vector3d& origin,
                                                         const Eigen::Vector3d& dir) const {
  const Eigen::Matrix2d rt = yaw_rotation(yaw).transpose();
  const Eigen::Vector2d o_xy = rt * (origin.head<2>() - center);
  const Eigen::Vector2d d_xy = rt * dir.head<2>();
  const Eigen::Vector3d o(o_xy.x(), o_xy.y(), origin.z() - 0.5 * height);
  const Eigen::Vector3d d(d_xy.x(), d_xy.y(), dir.z());
  const Eigen::Vector3d half(0.5 * size.x(), 0.5 * size.y(), 0.5 * height);
  double t0 = -std::numeric_limits<double>::infinity();
  double t1 = std::numeric_limits<double>::infinity();
  for (int k = 0; k < 3; ++k) {
    if (d(k) == 0.0) {
      if (std::abs(o(k)) > half(k)) return std::nullopt;
      continue;
    }
    double a = (-half(k) - o(k)) / d(k);
    double b = (half(k) - o(k)) / d(k);
    if (a > b) std::swap(a, b);
    t0 = std::max(t0, a);
    t1 = std::min(t1, b);
    if (t0 > t1) return std::nullopt;
  }
  return std::make_pair(t0, t1);
}

ClassIndex ToyScene::ground_class_at(const Eigen::Vector2d& xy) const {
  const Eigen::Vector3d uv = grid.meters_to_pixels() * Eigen::Vector3d(xy.x(), xy.y(), 1.0);
  const int col = std::clamp(static_cast<int>(std::floor(uv.x())), 0, ground.width() - 1);
  const int row = std::clamp(static_cast<int>(std::floor(uv.y())), 0, ground.height() - 1);
  return ground(row, col);
}

void SceneParams::validate() const {
  auto check = [](bool ok, const char* what) {
    if (!ok) throw Error(ErrorKind::Configuration, std::string("scene parameter out of range: ") + what);
  };
  check(density >= 0.0 && density <= 10.0, "density in [0, 10]");
  check(vehicle_density >= 0.0 && pedestrian_density >= 0.0 && static_density >= 0.0, "non-negative densities");
  check(road_width_min >= 4.0 && road_width_max >= road_width_min, "road width range");
  check(road_offset_max >= 0.0, "road offset");
  check(sidewalk_width_min > 0.0 && sidewalk_width_max >= sidewalk_width_min, "sidewalk width range");
  check(max_retries > 0, "max_retries");
}

std::vector<CameraModel> default_rig() {
  struct Mount {
    const char* name;
    double yaw;
  };
  constexpr Mount mounts[] = {{"front", 0.0}, {"rear", 180.0}, {"left", 90.0}, {"right", -90.0}};
  constexpr int width = 241;
  constexpr int height = 151;
  constexpr double fov = 110.0;
  std::vector<CameraModel> rig;
  for (const auto& m : mounts) {
    CameraModel cam;
    cam.name = m.name;
    cam.intrinsics = Intrinsics::from_fov(fov, width, height);
    cam.extrinsics = Extrinsics::from_pose(m.yaw, -15.0, 0.0, Eigen::Vector3d(0.0, 0.0, 2.0));
    cam.fov_deg = fov;
    cam.width = width;
    cam.height = height;
    rig.push_back(cam);
  }
  return rig;
}

ToyScene generate_scene(std::uint64_t seed, const SceneParams& params, const BevGrid& grid, PaletteRef palette,
                        const OcclusionPolicy& policy) {
  params.validate();
  grid.validate();
  const Palette& pal = *palette;
  const ClassIndex road = pal.index_of("road");
  const ClassIndex sidewalk = pal.index_of("sidewalk");

  std::mt19937_64 rng(seed);
  auto uniform = [&](double a, double b) { return std::uniform_real_distribution<double>(a, b)(rng); };
  // Object counts: integer part of lambda plus a Bernoulli draw for the rest.
  auto count = [&](double lambda) {
    const double whole = std::floor(lambda);
    return static_cast<int>(whole) + (uniform(0.0, 1.0) < lambda - whole ? 1 : 0);
  };

  const double x0 = grid.x_min();
  const double x1 = x0 + grid.width_m;
  const double y1 = grid.y_max();
  const double y0 = y1 - grid.height_m;

  const double road_width = uniform(params.road_width_min, params.road_width_max);
  const double max_offset = std::max(0.0, std::min(params.road_offset_max, 0.5 * road_width - 1.5));
  const double road_center = uniform(-max_offset, max_offset);
  const double walk_left = uniform(params.sidewalk_width_min, params.sidewalk_width_max);
  const double walk_right = uniform(params.sidewalk_width_min, params.sidewalk_width_max);
  const double road_lo = road_center - 0.5 * road_width;
  const double road_hi = road_center + 0.5 * road_width;

  ToyScene scene{grid, SemanticImage(grid.cols(), grid.rows(), palette, sidewalk), {}};
  for (int r = 0; r < grid.rows(); ++r) {
    const double y = grid.pixel_center_to_meters(r, 0).y();
    if (y >= road_lo && y <= road_hi) scene.ground.labels.row(r).setConstant(road);
  }

  const Box3 ego{Eigen::Vector2d::Zero(), Eigen::Vector2d(5.0, 2.2), 0.0, 1.5, 0};
  // `margin` inflates both footprints, so the clearance between objects is twice it.
  auto place = [&](double margin, auto&& propose) {
    for (int attempt = 0; attempt < params.max_retries; ++attempt) {
      const Box3 b = propose();
      bool ok = !footprints_overlap(b, ego, 0.5);
      for (const auto& o : scene.objects) {
        if (!ok) break;
        ok = !footprints_overlap(b, o, margin);
      }
      if (ok) {
        scene.objects.push_back(b);
        return;
      }
    }
    throw Error(ErrorKind::Generation, "cannot place object without overlap after " +
                                           std::to_string(params.max_retries) + " attempts; lower the density");
  };

  const double scale = params.density;

  // Buildings and vegetation rows beyond each sidewalk.
  if (scale * params.static_density > 0.0) {
    const ClassIndex obstacle = pal.index_of("obstacle");
    const ClassIndex vegetation = pal.index_of("vegetation");
    const double p_static = std::min(1.0, 0.8 * scale * params.static_density);
    for (int side = 0; side < 2; ++side) {
      const double inner = side == 0 ? road_hi + walk_left : road_lo - walk_right;
      const double outer = side == 0 ? y1 : y0;
      const double flank = std::abs(outer - inner);
      double x = x0 - uniform(0.0, 6.0);
      while (x < x1) {
        const double length = uniform(6.0, 20.0);
        const double gap = uniform(1.0, 6.0);
        const bool building = uniform(0.0, 1.0) < 0.55;
        const double depth = building ? flank : std::min(flank, uniform(1.5, 4.0));
        const bool placed = uniform(0.0, 1.0) < p_static;
        const double a = std::max(x, x0);
        const double b = std::min(x + length, x1);
        if (placed && b - a >= 1.0 && depth >= 1.0) {
          const double ya = inner;
          const double yb = side == 0 ? inner + depth : inner - depth;
          const ClassIndex cls = building ? obstacle : vegetation;
          scene.objects.push_back(Box3{Eigen::Vector2d(0.5 * (a + b), 0.5 * (ya + yb)),
                                       Eigen::Vector2d(b - a, depth), 0.0, class_height(policy, cls), cls});
        }
        x += length + gap;
      }
    }
  }

  // Vehicles in lanes.
  if (scale * params.vehicle_density > 0.0) {
    const ClassIndex car = pal.index_of("car");
    const ClassIndex truck = pal.index_of("truck");
    const ClassIndex bus = pal.index_of("bus");
    const int lanes = road_width >= 10.0 ? 3 : 2;
    const double lane_width = road_width / lanes;
    for (int lane = 0; lane < lanes; ++lane) {
      const double lane_center = road_lo + (lane + 0.5) * lane_width;
      const int n = count(scale * params.vehicle_density * grid.width_m / 24.0);
      for (int k = 0; k < n; ++k) {
        const double pick = uniform(0.0, 1.0);
        const ClassIndex cls = pick < 0.65 ? car : (pick < 0.825 ? truck : bus);
        const double length = cls == car ? uniform(4.0, 4.8) : (cls == truck ? uniform(7.0, 10.0) : uniform(10.0, 12.0));
        const double width = cls == car ? uniform(1.7, 1.9) : 2.5;
        place(0.4, [&] {
          const double cx = uniform(x0 + 0.5 * length + 0.5, x1 - 0.5 * length - 0.5);
          const double cy = lane_center + uniform(-0.3, 0.3);
          return Box3{Eigen::Vector2d(cx, cy), Eigen::Vector2d(length, width), uniform(-0.04, 0.04),
                      class_height(policy, cls), cls};
        });
      }
    }
  }

  // Pedestrians and bikes on the sidewalks.
  if (scale * params.pedestrian_density > 0.0) {
    const ClassIndex person = pal.index_of("person");
    const ClassIndex bike = pal.index_of("bike");
    for (int side = 0; side < 2; ++side) {
      const double lo = side == 0 ? road_hi : road_lo - walk_right;
      const double hi = side == 0 ? road_hi + walk_left : road_lo;
      const double lambda = scale * params.pedestrian_density * grid.width_m / 14.0;
      const int persons = count(lambda);
      const int bikes = count(lambda / 3.0);
      for (int k = 0; k < persons + bikes; ++k) {
        const bool is_bike = k >= persons;
        const Eigen::Vector2d size = is_bike ? Eigen::Vector2d(1.8, 0.6) : Eigen::Vector2d(0.6, 0.6);
        const ClassIndex cls = is_bike ? bike : person;
        // Keep clear of the road edge and the building line.
        place(0.2, [&] {
          const double cx = uniform(x0 + 1.0, x1 - 1.0);
          const double cy = uniform(std::min(lo + 0.75, hi), std::max(hi - 0.75, lo));
          return Box3{Eigen::Vector2d(cx, cy), size, 0.0, class_height(policy, cls), cls};
        });
      }
    }
  }
  return scene;
}

namespace {

struct Hit {
  double t = std::numeric_limits<double>::infinity();
  int box = -1;
};

/// Nearest box entry along origin + t * dir with t > 0 (ties favor the box
/// whose center is nearer to the origin).
Hit first_box_hit(const std::vector<Box3>& boxes, const Eigen::Vector3d& origin, const Eigen::Vector3d& dir,
                  const std::vector<bool>* skip = nullptr) {
  constexpr double tie = 1e-12;
  Hit best;
  for (std::size_t k = 0; k < boxes.size(); ++k) {
    if (skip && (*skip)[k]) continue;
    const auto span = boxes[k].intersect(origin, dir);
    if (!span || span->second <= 0.0) continue;
    const double t = std::max(span->first, 0.0);
    if (t < best.t - tie) {
      best = {t, static_cast<int>(k)};
    } else if (std::abs(t - best.t) <= tie && best.box >= 0) {
      const double dk = (boxes[k].center - origin.head<2>()).squaredNorm();
      const double db = (boxes[best.box].center - origin.head<2>()).squaredNorm();
      if (dk < db) best = {t, static_cast<int>(k)};
    }
  }
  return best;
}

}  // namespace

SemanticImage render_camera(const ToyScene& scene, const CameraModel& cam, ClassIndex sky) {
  if (!(cam.extrinsics.center().z() > 0.0)) throw Error(ErrorKind::Configuration, "camera must be above the ground");
  const Eigen::Matrix3d k_inv = intrinsics_matrix(cam.intrinsics).inverse();
  const Eigen::Matrix3d world_from_cam = cam.extrinsics.rotation().transpose();
  const Eigen::Vector3d origin = cam.extrinsics.center();
  SemanticImage out(cam.width, cam.height, scene.ground.palette, sky);
  for (int i = 0; i < cam.height; ++i) {
    for (int j = 0; j < cam.width; ++j) {
      const Eigen::Vector3d dir = world_from_cam * (k_inv * Eigen::Vector3d(j + 0.5, i + 0.5, 1.0));
      const Hit hit = first_box_hit(scene.objects, origin, dir);
      const double t_ground = dir.z() < 0.0 ? -origin.z() / dir.z() : std::numeric_limits<double>::infinity();
      if (hit.box >= 0 && hit.t <= t_ground) {
        out(i, j) = scene.objects[hit.box].cls;
      } else if (std::isfinite(t_ground)) {
        out(i, j) = scene.ground_class_at((origin + t_ground * dir).head<2>());
      }
    }
  }
  return out;
}

namespace {

/// Index of the tallest box covering each BEV cell center, or -1.
Eigen::Array<int, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> covering_boxes(const ToyScene& scene) {
  const BevGrid& g = scene.grid;
  Eigen::Array<int, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> cover =
      Eigen::Array<int, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>::Constant(g.rows(), g.cols(), -1);
  const Eigen::Matrix3d to_px = g.meters_to_pixels();
  for (std::size_t k = 0; k < scene.objects.size(); ++k) {
    const Box3& b = scene.objects[k];
    // Pixel bounding box of the footprint.
    double u0 = 1e300, u1 = -1e300, v0 = 1e300, v1 = -1e300;
    for (const auto& c : b.corners()) {
      const Eigen::Vector3d uv = to_px * Eigen::Vector3d(c.x(), c.y(), 1.0);
      u0 = std::min(u0, uv.x());
      u1 = std::max(u1, uv.x());
      v0 = std::min(v0, uv.y());
      v1 = std::max(v1, uv.y());
    }
    const int c0 = std::max(0, static_cast<int>(std::floor(u0)) - 1);
    const int c1 = std::min(g.cols() - 1, static_cast<int>(std::ceil(u1)) + 1);
    const int r0 = std::max(0, static_cast<int>(std::floor(v0)) - 1);
    const int r1 = std::min(g.rows() - 1, static_cast<int>(std::ceil(v1)) + 1);
    for (int r = r0; r <= r1; ++r) {
      for (int c = c0; c <= c1; ++c) {
        if (!b.contains_xy(g.pixel_center_to_meters(r, c))) continue;
        int& cur = cover(r, c);
        if (cur < 0 || scene.objects[cur].height < b.height) cur = static_cast<int>(k);
      }
    }
  }
  return cover;
}

}  // namespace

SemanticImage render_bev_gt(const ToyScene& scene) {
  SemanticImage out = scene.ground;
  const auto cover = covering_boxes(scene);
  for (int r = 0; r < out.height(); ++r) {
    for (int c = 0; c < out.width(); ++c) {
      if (cover(r, c) >= 0) out(r, c) = scene.objects[cover(r, c)].cls;
    }
  }
  return out;
}

Mask visibility_oracle(const ToyScene& scene, const std::vector<CameraModel>& cams, const OcclusionPolicy& policy) {
  const BevGrid& g = scene.grid;
  const SemanticImage gt = render_bev_gt(scene);
  const auto cover = covering_boxes(scene);
  // A surface hit counts for a cell when it lands in the cell or one of its
  // neighbours: footprints are rasterized by cell center, so the face of a box
  // can sit up to one cell away from the first cell labeled with its class.
  const double reach = 1.0 / g.px_per_m + 1e-9;

  std::vector<bool> transparent(scene.objects.size());
  for (std::size_t k = 0; k < scene.objects.size(); ++k) {
    transparent[k] = policy[scene.objects[k].cls].rule == BlockRule::NeverBlocks;
  }

  struct View {
    Eigen::Vector3d center;
    Eigen::Vector2d axis;
    double cos_half;
  };
  std::vector<View> views;
  for (const auto& cam : cams) {
    Eigen::Vector2d axis = cam.extrinsics.optical_axis().head<2>();
    if (axis.norm() < 1e-12) throw Error(ErrorKind::UnsupportedFov, "camera '" + cam.name + "' looks straight down");
    views.push_back({cam.extrinsics.center(), axis.normalized(), std::cos(0.5 * cam.fov_deg * std::numbers::pi / 180.0)});
  }

  Mask visible = Mask::Constant(g.rows(), g.cols(), false);
  std::vector<bool> skip(scene.objects.size());
  for (int r = 0; r < g.rows(); ++r) {
    for (int c = 0; c < g.cols(); ++c) {
      const Eigen::Vector2d xy = g.pixel_center_to_meters(r, c);
      const int own = cover(r, c);
      for (const auto& v : views) {
        const Eigen::Vector2d d = xy - v.center.head<2>();
        if (d.norm() > 0.0 && d.dot(v.axis) < v.cos_half * d.norm()) continue;
        bool seen = false;
        if (own < 0) {
          const Eigen::Vector3d dir = Eigen::Vector3d(xy.x(), xy.y(), 0.0) - v.center;
          const Hit hit = first_box_hit(scene.objects, v.center, dir, &transparent);
          seen = !(hit.box >= 0 && hit.t < 1.0 - 1e-9);
        } else {
          const Box3& box = scene.objects[own];
          const double top = std::min(box.height, policy[box.cls].height_m.value_or(box.height));
          for (std::size_t k = 0; k < skip.size(); ++k) skip[k] = transparent[k] && static_cast<int>(k) != own;
          for (double z : {top, 0.75 * top, 0.5 * top, 0.25 * top}) {
            const Eigen::Vector3d dir = Eigen::Vector3d(xy.x(), xy.y(), z) - v.center;
            const Hit hit = first_box_hit(scene.objects, v.center, dir, &skip);
            if (hit.box != own || hit.t > 1.0 + 1e-9) continue;
            const Eigen::Vector2d p = (v.center + hit.t * dir).head<2>();
            if (std::abs(p.x() - xy.x()) <= reach && std::abs(p.y() - xy.y()) <= reach) {
              seen = true;
              break;
            }
          }
        }
        if (seen) {
          visible(r, c) = true;
          break;
        }
      }
    }
  }
  visible = rescue_components(gt, visible, policy.object_classes());
  return !visible;
}

}  // namespace bev
