#pragma once

#include <string>
#include <vector>

#include "bev/camera_geometry.hpp"
#include "bev/semantic_image.hpp"

namespace bev {

struct FovMask {
  Mask bits;
  std::string camera_name;
};

struct CameraWarp {
  SemanticImage image;
  FovMask mask;
};

/// Nearest-neighbor inverse warp of a label image into the BEV grid. BEV
/// pixels that map behind the camera or outside the source get `fill`.
SemanticImage warp_label(const SemanticImage& src, const IpmHomography& hom, const BevGrid& grid,
                         ClassIndex fill);

/// BEV pixels whose ground direction from the camera lies within +-fov/2 of
/// the ground-projected optical axis.
FovMask fov_mask(const CameraModel& camera, const BevGrid& grid);

/// fov_mask restricted to BEV pixels whose ground point actually lands inside
/// the camera image; excludes the blind area below the lower image border.
Mask view_mask(const CameraModel& camera, const BevGrid& grid);

/// Per pixel, the first camera in `priority` whose mask covers the pixel and
/// whose warped value differs from `fill`.
SemanticImage stitch(const std::vector<CameraWarp>& warps, const std::vector<std::string>& priority,
                     ClassIndex fill);

/// front > rear > left > right
std::vector<std::string> default_priority();

/// Warps every camera image and stitches the result into the homography image.
SemanticImage homography_image(const std::vector<CameraModel>& rig, const std::vector<SemanticImage>& views,
                               const BevGrid& grid, ClassIndex fill,
                               const std::vector<std::string>& priority = default_priority());

}  // namespace bev
