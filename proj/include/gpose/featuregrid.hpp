#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "gpose/geometry.hpp"

namespace gpose {

/// Patch layout of the processed image: grid_side patches of patch_size
/// pixels along each axis.
struct PatchGeometry {
  int patch_size = 14;
  int grid_side = 16;
  int image_side = 224;

  void validate() const;
};

struct PatchIndex {
  int row = 0;
  int col = 0;

  friend bool operator==(const PatchIndex&, const PatchIndex&) = default;
  int linear(int width) const { return row * width + col; }
};

/// Processed-image pixel center (x right, y down) of a patch.
Eigen::Vector2d patch_center(PatchIndex index, const PatchGeometry& geom = {});

/// Original image pixels -> processed pixels. Never rotates.
struct CropTransform {
  Affine2d affine;
};

/// Square crop centered on the box, side = max(box sides) * (1 + pad_ratio),
/// resized to the processed image side.
CropTransform crop_transform(double x0, double y0, double x1, double y1, double pad_ratio = 0.0,
                             const PatchGeometry& geom = {});

using DescriptorMatrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// H x W grid of D-dimensional descriptors with a patch-level mask.
///
/// Rows of `data()` are cells in row-major order. Masked cells hold unit-norm
/// descriptors and unmasked cells are zero.
class FeatureGrid {
 public:
  static constexpr std::uint32_t kVariantFlag = 1u;

  FeatureGrid() = default;
  FeatureGrid(int height, int width, int dim, bool variant = false);

  int height() const { return height_; }
  int width() const { return width_; }
  int dim() const { return dim_; }
  int cells() const { return height_ * width_; }
  bool variant() const { return variant_; }
  void set_variant(bool v) { variant_ = v; }

  bool masked(int cell) const { return mask_[static_cast<std::size_t>(cell)] != 0; }
  bool masked(PatchIndex p) const { return masked(p.linear(width_)); }
  int masked_count() const;
  std::vector<int> masked_cells() const;
  const std::vector<std::uint8_t>& mask() const { return mask_; }

  const DescriptorMatrix& data() const { return data_; }
  auto descriptor(int cell) const { return data_.row(cell); }
  auto descriptor(PatchIndex p) const { return data_.row(p.linear(width_)); }

  PatchIndex index_of(int cell) const { return {cell / width_, cell % width_}; }

  /// Stores `values` normalized to unit length and marks the cell. A zero
  /// vector clears the cell instead.
  void set_descriptor(int cell, std::span<const double> values);
  void set_descriptor(int cell, std::span<const float> values);
  void clear_cell(int cell);

  /// Throws kFormat when an invariant is broken (norms, zero unmasked cells).
  void validate(double norm_tol = 1e-5) const;

  friend bool operator==(const FeatureGrid& a, const FeatureGrid& b);
  friend FeatureGrid read_grid(std::istream& in);

 private:
  void assign_raw(DescriptorMatrix data, std::vector<std::uint8_t> mask) {
    data_ = std::move(data);
    mask_ = std::move(mask);
  }

  int height_ = 0, width_ = 0, dim_ = 0;
  bool variant_ = false;
  DescriptorMatrix data_;
  std::vector<std::uint8_t> mask_;
};

/// a.b / (|a||b|), clamped to [-1, 1].
template <typename DA, typename DB>
double cosine_similarity(const Eigen::MatrixBase<DA>& a, const Eigen::MatrixBase<DB>& b) {
  const double na = a.template cast<double>().norm();
  const double nb = b.template cast<double>().norm();
  if (!(na > 0) || !(nb > 0)) throw Error(ErrorCode::kInvalidArgument, "cosine similarity of a zero vector");
  const double c = a.template cast<double>().dot(b.template cast<double>()) / (na * nb);
  return std::clamp(c, -1.0, 1.0);
}

// GPFG binary format, little-endian:
//   "GPFG" | version u16 | H u16 | W u16 | D u32 | flags u32 | mask H*W u8 |
//   data H*W*D f32 (row-major, channel-last)
inline constexpr std::uint16_t kGridFormatVersion = 1;

void write_grid(const FeatureGrid& grid, std::ostream& out);
FeatureGrid read_grid(std::istream& in);
void write_grid_file(const FeatureGrid& grid, const std::string& path);
FeatureGrid read_grid_file(const std::string& path);

}  // namespace gpose
