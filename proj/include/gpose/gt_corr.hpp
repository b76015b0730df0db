#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "gpose/featuregrid.hpp"
#include "gpose/geometry.hpp"
#include "gpose/matching.hpp"

namespace gpose {

/// Depth raster (mm, 0 = invalid) of the processed image, its intrinsics,
/// the object-to-camera pose and the patch-level mask.
struct DepthView {
  Eigen::MatrixXf depth;  // rows = image height
  Intrinsicsd intrinsics;
  Pose6Dd pose;
  std::vector<std::uint8_t> patch_mask;  // grid_side^2, row-major

  /// Mask cells whose patch-center depth is valid.
  void mask_from_depth(const PatchGeometry& geom = {});
};

/// Intrinsics of the processed image: K followed by a non-rotating crop.
Intrinsicsd processed_intrinsics(const Intrinsicsd& k, const Affine2d& crop);

/// Depth (mm) of a sphere of `radius` centered at `center` (camera frame),
/// one ray per integer pixel coordinate; 0 where the ray misses.
Eigen::MatrixXf render_sphere_depth(double radius, const Eigen::Vector3d& center, const Intrinsicsd& k, int width,
                                    int height);

/// Ground-truth patch correspondences from `source` to `target`: each masked
/// source patch center is lifted with its depth, moved into the target camera
/// by the relative pose and re-projected; when it falls in a masked target
/// patch, the nearest masked target patch center becomes its match.
std::vector<Correspondence> reproject_correspondences(const DepthView& source, const DepthView& target,
                                                      const PatchGeometry& geom = {});

/// Union of forward (source->target) and backward (target->source) lists,
/// backward pairs flipped into source->target orientation, duplicates dropped.
std::vector<Correspondence> symmetrize(const std::vector<Correspondence>& forward,
                                       const std::vector<Correspondence>& backward);

// GPDP: "GPDP" | version u16 | H u32 | W u32 | H*W f32 mm, row-major, LE.
inline constexpr std::uint16_t kDepthFormatVersion = 1;
void write_depth(const Eigen::MatrixXf& depth, std::ostream& out);
Eigen::MatrixXf read_depth(std::istream& in);
void write_depth_file(const Eigen::MatrixXf& depth, const std::string& path);
Eigen::MatrixXf read_depth_file(const std::string& path);

}  // namespace gpose
