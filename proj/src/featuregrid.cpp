#include "gpose/featuregrid.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>

#include "gpose/binary_io.hpp"

namespace gpose {

void PatchGeometry::validate() const {
  if (patch_size <= 0 || grid_side <= 0 || patch_size * grid_side != image_side)
    throw Error(ErrorCode::kInvalidArgument, "patch geometry requires patch_size * grid_side == image_side");
}

Eigen::Vector2d patch_center(PatchIndex index, const PatchGeometry& geom) {
  if (index.row < 0 || index.col < 0 || index.row >= geom.grid_side || index.col >= geom.grid_side)
    throw Error(ErrorCode::kInvalidArgument, "patch index outside the grid");
  const double half = geom.patch_size / 2.0;
  return {geom.patch_size * index.col + half, geom.patch_size * index.row + half};
}

CropTransform crop_transform(double x0, double y0, double x1, double y1, double pad_ratio,
                             const PatchGeometry& geom) {
  if (!(x1 > x0) || !(y1 > y0)) throw Error(ErrorCode::kInvalidArgument, "empty bounding box");
  if (!(pad_ratio > -1.0)) throw Error(ErrorCode::kInvalidArgument, "pad ratio must exceed -1");
  const double side = std::max(x1 - x0, y1 - y0) * (1.0 + pad_ratio);
  const double s = geom.image_side / side;
  const Eigen::Vector2d center(0.5 * (x0 + x1), 0.5 * (y0 + y1));
  const Eigen::Vector2d half_image(geom.image_side / 2.0, geom.image_side / 2.0);
  return {Affine2d(s, 0.0, half_image - s * center)};
}

FeatureGrid::FeatureGrid(int height, int width, int dim, bool variant)
    : height_(height), width_(width), dim_(dim), variant_(variant) {
  if (height <= 0 || width <= 0 || dim <= 0) throw Error(ErrorCode::kInvalidArgument, "grid dimensions must be positive");
  data_ = DescriptorMatrix::Zero(cells(), dim);
  mask_.assign(static_cast<std::size_t>(cells()), 0);
}

int FeatureGrid::masked_count() const {
  int n = 0;
  for (auto m : mask_) n += m != 0;
  return n;
}

std::vector<int> FeatureGrid::masked_cells() const {
  std::vector<int> out;
  for (int i = 0; i < cells(); ++i)
    if (mask_[static_cast<std::size_t>(i)]) out.push_back(i);
  return out;
}

void FeatureGrid::set_descriptor(int cell, std::span<const double> values) {
  if (static_cast<int>(values.size()) != dim_) throw Error(ErrorCode::kInvalidArgument, "descriptor length mismatch");
  double n2 = 0;
  for (double v : values) n2 += v * v;
  if (!(n2 > 0)) {
    clear_cell(cell);
    return;
  }
  const double inv = 1.0 / std::sqrt(n2);
  for (int d = 0; d < dim_; ++d) data_(cell, d) = static_cast<float>(values[static_cast<std::size_t>(d)] * inv);
  mask_[static_cast<std::size_t>(cell)] = 1;
}

void FeatureGrid::set_descriptor(int cell, std::span<const float> values) {
  std::vector<double> tmp(values.begin(), values.end());
  set_descriptor(cell, std::span<const double>(tmp));
}

void FeatureGrid::clear_cell(int cell) {
  data_.row(cell).setZero();
  mask_[static_cast<std::size_t>(cell)] = 0;
}

void FeatureGrid::validate(double norm_tol) const {
  for (int i = 0; i < cells(); ++i) {
    if (mask_[static_cast<std::size_t>(i)]) {
      const double n = data_.row(i).cast<double>().norm();
      if (std::abs(n - 1.0) > norm_tol)
        throw Error(ErrorCode::kFormat, "masked cell " + std::to_string(i) + " has norm " + std::to_string(n));
    } else if (data_.row(i).cwiseAbs().maxCoeff() != 0.0f) {
      throw Error(ErrorCode::kFormat, "unmasked cell " + std::to_string(i) + " is not zero");
    }
  }
}

bool operator==(const FeatureGrid& a, const FeatureGrid& b) {
  if (a.height_ != b.height_ || a.width_ != b.width_ || a.dim_ != b.dim_ || a.variant_ != b.variant_ ||
      a.mask_ != b.mask_)
    return false;
  // Bitwise comparison so that the check is exact for serialization tests.
  return std::memcmp(a.data_.data(), b.data_.data(), sizeof(float) * static_cast<std::size_t>(a.data_.size())) == 0;
}

void write_grid(const FeatureGrid& grid, std::ostream& out) {
  if (grid.height() > std::numeric_limits<std::uint16_t>::max() || grid.width() > std::numeric_limits<std::uint16_t>::max())
    throw Error(ErrorCode::kInvalidArgument, "grid too large for GPFG");
  grid.validate();
  io::Writer w(out);
  w.put_magic("GPFG");
  w.put<std::uint16_t>(kGridFormatVersion);
  w.put<std::uint16_t>(static_cast<std::uint16_t>(grid.height()));
  w.put<std::uint16_t>(static_cast<std::uint16_t>(grid.width()));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(grid.dim()));
  w.put<std::uint32_t>(grid.variant() ? FeatureGrid::kVariantFlag : 0u);
  w.put_bytes(grid.mask().data(), grid.mask().size());
  w.put_f32_array(grid.data().data(), static_cast<std::size_t>(grid.data().size()));
  w.check();
}

FeatureGrid read_grid(std::istream& in) {
  io::Reader r(in);
  r.expect_magic("GPFG");
  const std::uint64_t version_at = r.offset();
  const auto version = r.get<std::uint16_t>("version");
  if (version != kGridFormatVersion)
    throw FormatError(ErrorCode::kFormat, version_at, "unsupported GPFG version " + std::to_string(version));
  const std::uint64_t dims_at = r.offset();
  const int h = r.get<std::uint16_t>("height");
  const int w = r.get<std::uint16_t>("width");
  const auto d = r.get<std::uint32_t>("dim");
  if (h == 0 || w == 0 || d == 0 || d > (1u << 20))
    throw FormatError(ErrorCode::kFormat, dims_at, "dimension mismatch in GPFG header");
  const auto flags = r.get<std::uint32_t>("flags");

  FeatureGrid grid(h, w, static_cast<int>(d), (flags & FeatureGrid::kVariantFlag) != 0);
  std::vector<std::uint8_t> mask(static_cast<std::size_t>(h * w));
  const std::uint64_t mask_at = r.offset();
  r.read_raw(mask.data(), mask.size(), "mask");
  for (std::size_t i = 0; i < mask.size(); ++i)
    if (mask[i] > 1) throw FormatError(ErrorCode::kFormat, mask_at + i, "mask byte must be 0 or 1");

  const std::uint64_t data_at = r.offset();
  DescriptorMatrix data(h * w, static_cast<int>(d));
  r.get_f32_array(data.data(), static_cast<std::size_t>(data.size()), "descriptor data");

  for (int c = 0; c < h * w; ++c) {
    if (mask[static_cast<std::size_t>(c)]) {
      const double n = data.row(c).cast<double>().norm();
      if (std::abs(n - 1.0) > 1e-5)
        throw FormatError(ErrorCode::kFormat, data_at + static_cast<std::uint64_t>(c) * d * 4,
                          "masked descriptor is not unit norm");
    } else if (data.row(c).cwiseAbs().maxCoeff() != 0.0f) {
      throw FormatError(ErrorCode::kFormat, data_at + static_cast<std::uint64_t>(c) * d * 4,
                        "unmasked descriptor is not zero");
    }
  }
  grid.assign_raw(std::move(data), std::move(mask));
  return grid;
}

void write_grid_file(const FeatureGrid& grid, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kIo, "cannot open " + path + " for writing");
  write_grid(grid, out);
}

FeatureGrid read_grid_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot open " + path);
  return read_grid(in);
}

}  // namespace gpose
