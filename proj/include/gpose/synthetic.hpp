#pragma once

// Analytic feature provider standing in for the invariant / variant feature
// networks. The object is a sphere carrying a seeded random feature field and
// is imaged under weak perspective, so scale, in-plane rotation and 2D
// translation of the image act as exact similarities on patch positions.
//
// Invariant descriptors depend on the object-frame surface point and on the
// viewing direction in the object frame only. Variant descriptors encode the
// in-plane angle (relative to the look-at gauge of the viewing direction) and
// the log apparent scale, plus surface content.

#include <Eigen/Dense>

#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include "gpose/estimator.hpp"
#include "gpose/featuregrid.hpp"
#include "gpose/geometry.hpp"

namespace gpose::synth {

struct ObjectParams {
  int invariant_dim = 64;
  int variant_dim = 16;
  double radius_mm = 50.0;
  double position_frequency = 2.0;  // rad per unit of surface displacement
  double view_frequency = 6.0;      // rad per unit of view-direction displacement
  double view_weight = 0.5;         // share of the descriptor energy carried by the view term
};

/// Variant-feature channel layout: [cos(theta)/2, sin(theta)/2, w, content...]
/// with w = clamp(kLogScaleGain * ln(sigma / kScaleReferencePx)).
inline constexpr double kLogScaleGain = 0.25;
inline constexpr double kScaleReferencePx = 100.0;
inline constexpr double kLogScaleClamp = 0.45;

class SyntheticObject {
 public:
  explicit SyntheticObject(std::uint64_t seed, ObjectParams params = {});

  const ObjectParams& params() const { return params_; }
  std::uint64_t seed() const { return seed_; }

  /// `surface` is an object-frame unit vector, `view` the object-frame unit
  /// direction toward the camera.
  void invariant_descriptor(const Eigen::Vector3d& surface, const Eigen::Vector3d& view, std::span<double> out) const;
  void variant_descriptor(const Eigen::Vector3d& surface, double theta, double sigma_px, std::span<double> out) const;

  /// Model points (mm) on a Fibonacci lattice over the sphere.
  std::vector<Eigen::Vector3d> model_points(int count) const;

 private:
  ObjectParams params_;
  std::uint64_t seed_;
  Eigen::MatrixXd pos_freq_, view_freq_, content_freq_;  // rows: 3-vectors
  Eigen::VectorXd pos_phase_, view_phase_, content_phase_;
};

/// Weak-perspective view of the object.
struct View {
  Rotation3d rotation = Rotation3d::Identity();  // object -> camera
  Eigen::Vector2d center_px = Eigen::Vector2d::Zero();  // object center, original image
  double px_per_mm = 1.0;                        // f / t_z
  Affine2d crop;                                 // original -> processed pixels
};

struct SurfaceSample {
  Eigen::Vector3d surface;  // object-frame unit vector
  Eigen::Vector3d view;     // object-frame unit direction toward the camera
  double theta = 0;         // in-plane angle relative to the look-at gauge
  double sigma_px = 0;      // processed pixels per object radius
};

/// Surface point seen at a processed-image pixel, if any.
std::optional<SurfaceSample> sample(const SyntheticObject& object, const View& view, const Eigen::Vector2d& pixel);

struct RenderedGrids {
  FeatureGrid invariant;
  FeatureGrid variant;
};

RenderedGrids render(const SyntheticObject& object, const View& view, const PatchGeometry& geom = {});

/// Fixed template camera used for onboarding.
struct TemplateCamera {
  Intrinsicsd intrinsics{600.0, 600.0, 320.0, 240.0};
  double tz_mm = 600.0;
};

struct TemplateView {
  View view;
  CropTransform crop;
  Eigen::Vector2d center_px;
};

/// Template view for an out-of-plane rotation: object centered on the
/// principal point, crop fitted to the silhouette.
TemplateView template_view(const SyntheticObject& object, const Rotation3d& r_ae, const TemplateCamera& camera = {},
                           double pad_ratio = 0.0, const PatchGeometry& geom = {});

/// Invariant grid of the template at r_ae for an object with the given seed
/// and descriptor dimension (>= 8).
FeatureGrid synth_features(const Rotation3d& r_ae, const PatchGeometry& geom, std::uint64_t object_seed, int dim);

struct QueryParams {
  double tz_min_mm = 400.0, tz_max_mm = 900.0;
  double focal_min = 500.0, focal_max = 700.0;
  int image_width = 640, image_height = 480;
  double pad_ratio = 0.0;
  double crop_scale_min = 1.0, crop_scale_max = 1.0;  // apparent scale inside the crop
  double crop_shift = 0.0;                            // bbox center jitter, fraction of radius
};

struct Query {
  View view;
  Intrinsicsd intrinsics;
  CropTransform crop;
  Pose6Dd gt_pose;
  double gt_alpha = 0;
};

/// Query whose rotation is R_alpha * look_at(direction); translation and
/// crop drawn from `params`.
Query make_query(const SyntheticObject& object, const Eigen::Vector3d& direction, double alpha, std::mt19937_64& rng,
                 const QueryParams& params = {}, const PatchGeometry& geom = {});

/// Closed-form regressor weights reading the variant channel layout above:
/// the scale head is linear, the in-plane head expands the products
/// cos/sin(theta_q - theta_t) through piecewise-linear squares.
RegressorWeights oracle_regressor(int variant_dim, int knots = 32);

}  // namespace gpose::synth
