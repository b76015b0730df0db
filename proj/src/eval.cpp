#include "gpose/eval.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>

#include "gpose/error.hpp"

namespace gpose {

ObjectModel::ObjectModel(std::vector<Eigen::Vector3d> pts, std::vector<Rotation3d> syms)
    : points(std::move(pts)), symmetries(std::move(syms)) {
  const bool has_identity = std::any_of(symmetries.begin(), symmetries.end(),
                                        [](const Rotation3d& s) { return s.isApprox(Rotation3d::Identity(), 1e-12); });
  if (!has_identity) symmetries.insert(symmetries.begin(), Rotation3d::Identity());
}

void ObjectModel::validate() const {
  if (points.size() < 4) throw Error(ErrorCode::kInvalidModel, "object model needs at least 4 points");
  if (symmetries.empty()) throw Error(ErrorCode::kInvalidModel, "symmetry set must contain the identity");
  for (const auto& s : symmetries)
    if (!is_rotation(s, 1e-6)) throw Error(ErrorCode::kInvalidModel, "symmetry is not a rotation");
}

double ObjectModel::diameter() const {
  double d2 = 0;
  for (std::size_t i = 0; i < points.size(); ++i)
    for (std::size_t j = i + 1; j < points.size(); ++j) d2 = std::max(d2, (points[i] - points[j]).squaredNorm());
  return std::sqrt(d2);
}

std::vector<Rotation3d> discretize_axial_symmetry(const Eigen::Vector3d& axis, int steps) {
  if (steps < 1) throw Error(ErrorCode::kInvalidArgument, "symmetry step count must be positive");
  std::vector<Rotation3d> out;
  for (int i = 0; i < steps; ++i)
    out.push_back(Eigen::AngleAxisd(2.0 * M_PI * i / steps, axis.normalized()).toRotationMatrix());
  return out;
}

double mssd(const Pose6Dd& pred, const Pose6Dd& gt, const ObjectModel& model) {
  model.validate();
  double best = std::numeric_limits<double>::infinity();
  for (const auto& sym : model.symmetries) {
    const Rotation3d rg = gt.rotation * sym;
    double worst = 0;
    for (const auto& x : model.points)
      worst = std::max(worst, (pred.rotation * x + pred.translation - (rg * x + gt.translation)).norm());
    best = std::min(best, worst);
  }
  return best;
}

double mspd(const Pose6Dd& pred, const Pose6Dd& gt, const ObjectModel& model, const Intrinsicsd& k) {
  model.validate();
  k.validate();
  auto project = [&k](const Eigen::Vector3d& p) {
    if (!(p.z() > 0)) throw Error(ErrorCode::kBehindCamera, "model point projects with non-positive depth");
    return k.project(p);
  };
  double best = std::numeric_limits<double>::infinity();
  for (const auto& sym : model.symmetries) {
    const Rotation3d rg = gt.rotation * sym;
    double worst = 0;
    for (const auto& x : model.points)
      worst = std::max(worst, (project(pred.rotation * x + pred.translation) - project(rg * x + gt.translation)).norm());
    best = std::min(best, worst);
  }
  return best;
}

double recall_curve(const std::vector<double>& errors, const std::vector<double>& thresholds) {
  if (thresholds.empty()) throw Error(ErrorCode::kInvalidArgument, "threshold list is empty");
  if (!std::is_sorted(thresholds.begin(), thresholds.end()))
    throw Error(ErrorCode::kInvalidArgument, "thresholds must be sorted ascending");
  if (errors.empty()) return 0.0;
  // Integer hit count and one division keep the result correctly rounded.
  std::uint64_t hits = 0;
  for (double th : thresholds)
    hits += static_cast<std::uint64_t>(std::count_if(errors.begin(), errors.end(), [th](double e) { return e < th; }));
  return static_cast<double>(hits) / (static_cast<double>(errors.size()) * static_cast<double>(thresholds.size()));
}

Mask Mask::from_rle(int w, int h, const std::vector<std::uint32_t>& counts) {
  if (w < 0 || h < 0) throw Error(ErrorCode::kInvalidArgument, "negative mask size");
  Mask m(w, h);
  std::size_t pos = 0;
  std::uint8_t value = 0;
  for (std::uint32_t run : counts) {
    if (pos + run > m.pixels.size()) throw Error(ErrorCode::kInvalidArgument, "run lengths exceed the mask size");
    std::fill_n(m.pixels.begin() + static_cast<std::ptrdiff_t>(pos), run, value);
    pos += run;
    value ^= 1;
  }
  if (pos != m.pixels.size()) throw Error(ErrorCode::kInvalidArgument, "run lengths do not cover the mask");
  return m;
}

std::vector<std::uint32_t> Mask::to_rle() const {
  std::vector<std::uint32_t> counts;
  std::uint8_t value = 0;
  std::uint32_t run = 0;
  for (std::uint8_t p : pixels) {
    const std::uint8_t v = p ? 1 : 0;
    if (v != value) {
      counts.push_back(run);
      run = 0;
      value = v;
    }
    ++run;
  }
  counts.push_back(run);
  return counts;
}

std::size_t Mask::area() const {
  return static_cast<std::size_t>(std::count_if(pixels.begin(), pixels.end(), [](std::uint8_t p) { return p != 0; }));
}

double mask_iou(const Mask& a, const Mask& b) {
  if (a.width != b.width || a.height != b.height || a.pixels.size() != b.pixels.size())
    throw Error(ErrorCode::kInvalidArgument, "mask dimensions differ");
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < a.pixels.size(); ++i) {
    const bool x = a.pixels[i] != 0, y = b.pixels[i] != 0;
    inter += x && y;
    uni += x || y;
  }
  return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

ArThresholds ArThresholds::standard(double diameter_mm, int image_width, int image_height) {
  ArThresholds t;
  const double r = std::hypot(image_width, image_height) / 640.0;
  for (int i = 1; i <= 10; ++i) {
    t.mssd_mm.push_back(0.05 * i * diameter_mm);
    t.mspd_px.push_back(5.0 * i * r);
  }
  return t;
}

RecordErrors record_errors(const DetectionRecord& record, const ObjectModel& model) {
  return {mssd(record.pred, record.gt, model), mspd(record.pred, record.gt, model, record.intrinsics),
          mask_iou(record.pred_mask, record.gt_mask)};
}

std::vector<RobustnessRow> robustness_curve(const std::vector<DetectionRecord>& records,
                                            const std::vector<double>& iou_thresholds, const ObjectModel& model,
                                            const ArThresholds& thresholds) {
  if (records.empty()) throw Error(ErrorCode::kInvalidArgument, "no detection records");
  std::vector<RecordErrors> errs;
  errs.reserve(records.size());
  for (const auto& r : records) errs.push_back(record_errors(r, model));

  std::vector<RobustnessRow> rows;
  for (double tau : iou_thresholds) {
    RobustnessRow row;
    row.iou_threshold = tau;
    std::vector<double> e_mssd, e_mspd;
    for (const auto& e : errs) {
      if (!(e.iou < tau)) continue;
      e_mssd.push_back(e.mssd_mm);
      e_mspd.push_back(e.mspd_px);
    }
    row.n_records = static_cast<int>(e_mssd.size());
    if (row.n_records > 0) {
      row.ar_mssd = recall_curve(e_mssd, thresholds.mssd_mm);
      row.ar_mspd = recall_curve(e_mspd, thresholds.mspd_px);
      row.ar_mean = 0.5 * (*row.ar_mssd + *row.ar_mspd);
    }
    rows.push_back(row);
  }
  return rows;
}

void write_robustness_csv(const std::vector<RobustnessRow>& rows, std::ostream& out) {
  out << "iou_threshold,n_records,ar_mssd,ar_mspd,ar_mean\n";
  auto opt = [&out](const std::optional<double>& v) {
    if (v) out << *v;
  };
  for (const auto& r : rows) {
    out << r.iou_threshold << ',' << r.n_records << ',';
    opt(r.ar_mssd);
    out << ',';
    opt(r.ar_mspd);
    out << ',';
    opt(r.ar_mean);
    out << '\n';
  }
}

void write_error_csv(const std::vector<DetectionRecord>& records, const std::vector<RecordErrors>& errors,
                     std::ostream& out) {
  out << "scene_id,im_id,obj_id,score,iou,mssd_mm,mspd_px\n";
  for (std::size_t i = 0; i < records.size() && i < errors.size(); ++i) {
    const auto& r = records[i];
    out << r.scene_id << ',' << r.im_id << ',' << r.obj_id << ',' << r.score << ',' << errors[i].iou << ','
        << errors[i].mssd_mm << ',' << errors[i].mspd_px << '\n';
  }
}

}  // namespace gpose
