#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <vector>

#include "gpose/geometry.hpp"

namespace gpose {

/// Model points (mm, object frame) and the finite symmetry set of the object.
/// The identity is inserted when missing.
struct ObjectModel {
  std::vector<Eigen::Vector3d> points;
  std::vector<Rotation3d> symmetries{Rotation3d::Identity()};

  ObjectModel() = default;
  ObjectModel(std::vector<Eigen::Vector3d> pts, std::vector<Rotation3d> syms = {});

  void validate() const;
  double diameter() const;  // largest pairwise point distance
};

/// Continuous symmetry about `axis` discretized into `steps` rotations.
std::vector<Rotation3d> discretize_axial_symmetry(const Eigen::Vector3d& axis, int steps = 36);

double mssd(const Pose6Dd& pred, const Pose6Dd& gt, const ObjectModel& model);
double mspd(const Pose6Dd& pred, const Pose6Dd& gt, const ObjectModel& model, const Intrinsicsd& k);

/// Mean over thresholds of the fraction of errors strictly below each one.
/// Zero for an empty error list.
double recall_curve(const std::vector<double>& errors, const std::vector<double>& thresholds);

/// Binary raster, row-major.
struct Mask {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;

  Mask() = default;
  Mask(int w, int h) : width(w), height(h), pixels(static_cast<std::size_t>(w) * h, 0) {}

  /// Run lengths over the row-major raster, alternating background and
  /// foreground and starting with background (first run may be 0).
  static Mask from_rle(int w, int h, const std::vector<std::uint32_t>& counts);
  std::vector<std::uint32_t> to_rle() const;
  std::size_t area() const;
};

double mask_iou(const Mask& a, const Mask& b);

struct DetectionRecord {
  int scene_id = 0;
  int im_id = 0;
  int obj_id = 0;
  Mask pred_mask;
  Mask gt_mask;
  Pose6Dd pred;
  Pose6Dd gt;
  double score = 0;
  Intrinsicsd intrinsics;
};

struct ArThresholds {
  std::vector<double> mssd_mm;
  std::vector<double> mspd_px;

  /// MSSD 5%..50% of the diameter, MSPD 5r..50r with r = image diagonal / 640.
  static ArThresholds standard(double diameter_mm, int image_width, int image_height);
};

struct RecordErrors {
  double mssd_mm = 0;
  double mspd_px = 0;
  double iou = 0;
};

RecordErrors record_errors(const DetectionRecord& record, const ObjectModel& model);

/// AR(MSSD, MSPD) over records whose mask IoU is below tau. Empty rows keep
/// n_records = 0 and no AR values.
struct RobustnessRow {
  double iou_threshold = 0;
  int n_records = 0;
  std::optional<double> ar_mssd, ar_mspd, ar_mean;
};

std::vector<RobustnessRow> robustness_curve(const std::vector<DetectionRecord>& records,
                                            const std::vector<double>& iou_thresholds, const ObjectModel& model,
                                            const ArThresholds& thresholds);

void write_robustness_csv(const std::vector<RobustnessRow>& rows, std::ostream& out);
void write_error_csv(const std::vector<DetectionRecord>& records, const std::vector<RecordErrors>& errors,
                     std::ostream& out);

}  // namespace gpose
