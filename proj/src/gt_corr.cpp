#include "gpose/gt_corr.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <set>
#include <tuple>

#include "gpose/binary_io.hpp"

namespace gpose {
namespace {

void check_view(const DepthView& v, const PatchGeometry& geom) {
  if (static_cast<int>(v.patch_mask.size()) != geom.grid_side * geom.grid_side)
    throw Error(ErrorCode::kInvalidArgument, "patch mask does not match the patch grid");
  v.intrinsics.validate();
}

// Depth at the pixel containing `uv`; 0 when outside the raster.
double depth_at(const Eigen::MatrixXf& depth, const Eigen::Vector2d& uv) {
  const auto col = static_cast<Eigen::Index>(std::floor(uv.x()));
  const auto row = static_cast<Eigen::Index>(std::floor(uv.y()));
  if (row < 0 || col < 0 || row >= depth.rows() || col >= depth.cols()) return 0.0;
  return depth(row, col);
}

}  // namespace

Intrinsicsd processed_intrinsics(const Intrinsicsd& k, const Affine2d& crop) {
  if (std::abs(crop.alpha) > 1e-12) throw Error(ErrorCode::kInvalidArgument, "crop must not rotate");
  return {crop.s * k.fx, crop.s * k.fy, crop.s * k.cx + crop.t.x(), crop.s * k.cy + crop.t.y()};
}

Eigen::MatrixXf render_sphere_depth(double radius, const Eigen::Vector3d& center, const Intrinsicsd& k, int width,
                                    int height) {
  k.validate();
  if (width <= 0 || height <= 0) throw Error(ErrorCode::kInvalidArgument, "raster size must be positive");
  Eigen::MatrixXf depth = Eigen::MatrixXf::Zero(height, width);
  for (int r = 0; r < height; ++r) {
    for (int c = 0; c < width; ++c) {
      // Ray p = z * d with d = K^-1 [c, r, 1]; solve |z d - center| = radius.
      const Eigen::Vector3d d((c - k.cx) / k.fx, (r - k.cy) / k.fy, 1.0);
      const double a = d.squaredNorm(), b = d.dot(center), cc = center.squaredNorm() - radius * radius;
      const double disc = b * b - a * cc;
      if (disc < 0) continue;
      const double z = (b - std::sqrt(disc)) / a;
      if (z > 0) depth(r, c) = static_cast<float>(z);
    }
  }
  return depth;
}

void DepthView::mask_from_depth(const PatchGeometry& geom) {
  patch_mask.assign(static_cast<std::size_t>(geom.grid_side * geom.grid_side), 0);
  for (int r = 0; r < geom.grid_side; ++r)
    for (int c = 0; c < geom.grid_side; ++c)
      patch_mask[static_cast<std::size_t>(r * geom.grid_side + c)] = depth_at(depth, patch_center({r, c}, geom)) > 0;
}

std::vector<Correspondence> reproject_correspondences(const DepthView& source, const DepthView& target,
                                                      const PatchGeometry& geom) {
  check_view(source, geom);
  check_view(target, geom);
  const int side = geom.grid_side;
  // Relative pose source camera -> target camera.
  const Rotation3d r_rel = target.pose.rotation * source.pose.rotation.transpose();
  const Eigen::Vector3d t_rel = target.pose.translation - r_rel * source.pose.translation;

  std::vector<int> target_masked;
  for (int c = 0; c < side * side; ++c)
    if (target.patch_mask[static_cast<std::size_t>(c)]) target_masked.push_back(c);

  std::vector<Correspondence> out;
  for (int cell = 0; cell < side * side; ++cell) {
    if (!source.patch_mask[static_cast<std::size_t>(cell)]) continue;
    const PatchIndex si{cell / side, cell % side};
    const Eigen::Vector2d uv = patch_center(si, geom);
    const double z = depth_at(source.depth, uv);
    if (!(z > 0)) continue;
    const Eigen::Vector3d p_target = r_rel * source.intrinsics.backproject(uv, z) + t_rel;
    if (!(p_target.z() > 0)) continue;
    const Eigen::Vector2d proj = target.intrinsics.project(p_target);
    const int pc = static_cast<int>(std::floor(proj.x() / geom.patch_size));
    const int pr = static_cast<int>(std::floor(proj.y() / geom.patch_size));
    if (pr < 0 || pc < 0 || pr >= side || pc >= side) continue;
    if (!target.patch_mask[static_cast<std::size_t>(pr * side + pc)]) continue;

    int best = -1;
    double best_d2 = std::numeric_limits<double>::infinity();
    for (int tc : target_masked) {
      const double d2 = (patch_center({tc / side, tc % side}, geom) - proj).squaredNorm();
      if (d2 < best_d2) {
        best_d2 = d2;
        best = tc;
      }
    }
    out.push_back({si, {best / side, best % side}, 1.0});
  }
  return out;
}

std::vector<Correspondence> symmetrize(const std::vector<Correspondence>& forward,
                                       const std::vector<Correspondence>& backward) {
  using Key = std::tuple<int, int, int, int>;
  std::set<Key> seen;
  std::vector<Correspondence> out;
  auto add = [&](const PatchIndex& src, const PatchIndex& tgt, double score) {
    if (seen.emplace(src.row, src.col, tgt.row, tgt.col).second) out.push_back({src, tgt, score});
  };
  for (const auto& c : forward) add(c.query_index, c.template_index, c.score);
  for (const auto& c : backward) add(c.template_index, c.query_index, c.score);
  return out;
}

void write_depth(const Eigen::MatrixXf& depth, std::ostream& out) {
  if (depth.size() == 0) throw Error(ErrorCode::kInvalidArgument, "empty depth raster");
  if (!depth.allFinite() || (depth.array() < 0).any())
    throw Error(ErrorCode::kInvalidArgument, "depth must be finite and non-negative");
  io::Writer w(out);
  w.put_magic("GPDP");
  w.put<std::uint16_t>(kDepthFormatVersion);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(depth.rows()));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(depth.cols()));
  const Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm = depth;
  w.put_f32_array(rm.data(), static_cast<std::size_t>(rm.size()));
  w.check();
}

Eigen::MatrixXf read_depth(std::istream& in) {
  io::Reader r(in);
  r.expect_magic("GPDP");
  const auto version_at = r.offset();
  if (const auto v = r.get<std::uint16_t>("version"); v != kDepthFormatVersion)
    throw FormatError(ErrorCode::kFormat, version_at, "unsupported GPDP version " + std::to_string(v));
  const auto dims_at = r.offset();
  const auto h = r.get<std::uint32_t>("height");
  const auto w = r.get<std::uint32_t>("width");
  if (h == 0 || w == 0 || static_cast<std::uint64_t>(h) * w > (1ull << 28))
    throw FormatError(ErrorCode::kFormat, dims_at, "invalid depth raster size");
  Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm(h, w);
  const auto data_at = r.offset();
  r.get_f32_array(rm.data(), static_cast<std::size_t>(rm.size()), "depth data");
  for (Eigen::Index i = 0; i < rm.size(); ++i)
    if (!std::isfinite(rm.data()[i]) || rm.data()[i] < 0)
      throw FormatError(ErrorCode::kFormat, data_at + 4 * static_cast<std::uint64_t>(i), "invalid depth value");
  return rm;
}

void write_depth_file(const Eigen::MatrixXf& depth, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kIo, "cannot open " + path + " for writing");
  write_depth(depth, out);
}

Eigen::MatrixXf read_depth_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot open " + path);
  return read_depth(in);
}

}  // namespace gpose
