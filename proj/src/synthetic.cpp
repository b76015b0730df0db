#include "gpose/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace gpose::synth {
namespace {

void random_features(std::mt19937_64& rng, int count, double frequency, Eigen::MatrixXd& freq, Eigen::VectorXd& phase) {
  std::normal_distribution<double> normal(0.0, frequency);
  std::uniform_real_distribution<double> uniform(0.0, 2.0 * std::numbers::pi);
  freq.resize(count, 3);
  phase.resize(count);
  for (int i = 0; i < count; ++i) {
    for (int j = 0; j < 3; ++j) freq(i, j) = normal(rng);
    phase[i] = uniform(rng);
  }
}

// Writes cos(F x + b), scaled to norm `gain`, into out.
void fourier_block(const Eigen::MatrixXd& freq, const Eigen::VectorXd& phase, const Eigen::Vector3d& x, double gain,
                   std::span<double> out) {
  const Eigen::VectorXd v = ((freq * x) + phase).array().cos().matrix();
  const double n = v.norm();
  for (Eigen::Index i = 0; i < v.size(); ++i) out[static_cast<std::size_t>(i)] = n > 0 ? gain * v[i] / n : 0.0;
}

}  // namespace

SyntheticObject::SyntheticObject(std::uint64_t seed, ObjectParams params) : params_(params), seed_(seed) {
  if (params_.invariant_dim < 8) throw Error(ErrorCode::kInvalidArgument, "invariant dimension must be at least 8");
  if (params_.variant_dim < 8) throw Error(ErrorCode::kInvalidArgument, "variant dimension must be at least 8");
  std::mt19937_64 rng(seed);
  const int pos_dims = params_.invariant_dim / 2;
  random_features(rng, pos_dims, params_.position_frequency, pos_freq_, pos_phase_);
  random_features(rng, params_.invariant_dim - pos_dims, params_.view_frequency, view_freq_, view_phase_);
  random_features(rng, params_.variant_dim - 3, params_.position_frequency, content_freq_, content_phase_);
}

void SyntheticObject::invariant_descriptor(const Eigen::Vector3d& surface, const Eigen::Vector3d& view,
                                           std::span<double> out) const {
  const auto pos_dims = static_cast<std::size_t>(pos_freq_.rows());
  fourier_block(pos_freq_, pos_phase_, surface, std::sqrt(1.0 - params_.view_weight), out.first(pos_dims));
  fourier_block(view_freq_, view_phase_, view, std::sqrt(params_.view_weight), out.subspan(pos_dims));
}

void SyntheticObject::variant_descriptor(const Eigen::Vector3d& surface, double theta, double sigma_px,
                                         std::span<double> out) const {
  const double w = std::clamp(kLogScaleGain * std::log(sigma_px / kScaleReferencePx), -kLogScaleClamp, kLogScaleClamp);
  out[0] = 0.5 * std::cos(theta);
  out[1] = 0.5 * std::sin(theta);
  out[2] = w;
  fourier_block(content_freq_, content_phase_, surface, std::sqrt(0.75 - w * w), out.subspan(3));
}

std::vector<Eigen::Vector3d> SyntheticObject::model_points(int count) const {
  std::vector<Eigen::Vector3d> pts;
  pts.reserve(static_cast<std::size_t>(count));
  const double golden = std::numbers::pi * (3.0 - std::sqrt(5.0));
  for (int i = 0; i < count; ++i) {
    const double z = 1.0 - 2.0 * (i + 0.5) / count;
    const double r = std::sqrt(std::max(0.0, 1.0 - z * z));
    const double phi = golden * i;
    pts.emplace_back(params_.radius_mm * r * std::cos(phi), params_.radius_mm * r * std::sin(phi),
                     params_.radius_mm * z);
  }
  return pts;
}

std::optional<SurfaceSample> sample(const SyntheticObject& object, const View& view, const Eigen::Vector2d& pixel) {
  const double r = object.params().radius_mm;
  const Eigen::Vector2d original = view.crop.inverse().apply(pixel);
  const Eigen::Vector2d offset = (original - view.center_px) / view.px_per_mm;
  const double rho2 = offset.squaredNorm();
  if (rho2 >= r * r) return std::nullopt;
  const Eigen::Vector3d cam(offset.x(), offset.y(), -std::sqrt(r * r - rho2));
  SurfaceSample s;
  s.surface = (view.rotation.transpose() * cam / r).normalized();
  s.view = -view.rotation.row(2).transpose();
  const Rotation3d gauge = view.rotation * viewpoint_to_rotation<double>(s.view).transpose();
  s.theta = normalize_angle(std::atan2(gauge(1, 0), gauge(0, 0)) + view.crop.alpha);
  s.sigma_px = view.crop.s * view.px_per_mm * r;
  return s;
}

RenderedGrids render(const SyntheticObject& object, const View& view, const PatchGeometry& geom) {
  geom.validate();
  const auto& p = object.params();
  RenderedGrids out{FeatureGrid(geom.grid_side, geom.grid_side, p.invariant_dim, false),
                    FeatureGrid(geom.grid_side, geom.grid_side, p.variant_dim, true)};
  std::vector<double> inv(static_cast<std::size_t>(p.invariant_dim)), var(static_cast<std::size_t>(p.variant_dim));
  for (int row = 0; row < geom.grid_side; ++row) {
    for (int col = 0; col < geom.grid_side; ++col) {
      const auto s = sample(object, view, patch_center({row, col}, geom));
      if (!s) continue;
      const int cell = row * geom.grid_side + col;
      object.invariant_descriptor(s->surface, s->view, inv);
      object.variant_descriptor(s->surface, s->theta, s->sigma_px, var);
      out.invariant.set_descriptor(cell, std::span<const double>(inv));
      out.variant.set_descriptor(cell, std::span<const double>(var));
    }
  }
  return out;
}

TemplateView template_view(const SyntheticObject& object, const Rotation3d& r_ae, const TemplateCamera& camera,
                           double pad_ratio, const PatchGeometry& geom) {
  TemplateView out;
  out.center_px = Eigen::Vector2d(camera.intrinsics.cx, camera.intrinsics.cy);
  const double px_per_mm = camera.intrinsics.focal() / camera.tz_mm;
  const double radius_px = object.params().radius_mm * px_per_mm;
  out.crop = crop_transform(out.center_px.x() - radius_px, out.center_px.y() - radius_px,
                            out.center_px.x() + radius_px, out.center_px.y() + radius_px, pad_ratio, geom);
  out.view = View{r_ae, out.center_px, px_per_mm, out.crop.affine};
  return out;
}

FeatureGrid synth_features(const Rotation3d& r_ae, const PatchGeometry& geom, std::uint64_t object_seed, int dim) {
  if (dim < 8) throw Error(ErrorCode::kInvalidArgument, "descriptor dimension must be at least 8");
  ObjectParams params;
  params.invariant_dim = dim;
  const SyntheticObject object(object_seed, params);
  return render(object, template_view(object, r_ae, {}, 0.0, geom).view, geom).invariant;
}

Query make_query(const SyntheticObject& object, const Eigen::Vector3d& direction, double alpha, std::mt19937_64& rng,
                 const QueryParams& params, const PatchGeometry& geom) {
  auto uniform = [&rng](double lo, double hi) { return lo == hi ? lo : std::uniform_real_distribution<double>(lo, hi)(rng); };
  Query q;
  q.gt_alpha = normalize_angle(alpha);
  const double f = uniform(params.focal_min, params.focal_max);
  q.intrinsics = Intrinsicsd{f, f, params.image_width / 2.0, params.image_height / 2.0};
  const double tz = uniform(params.tz_min_mm, params.tz_max_mm);
  const double radius_px = f * object.params().radius_mm / tz;
  auto coord = [&](double extent) {
    return extent > 2 * radius_px ? uniform(radius_px, extent - radius_px) : extent / 2.0;
  };
  const Eigen::Vector2d center(coord(params.image_width), coord(params.image_height));

  q.gt_pose.rotation = compose_rotation(alpha, viewpoint_to_rotation<double>(direction.normalized()));
  q.gt_pose.translation = tz * Eigen::Vector3d((center.x() - q.intrinsics.cx) / f, (center.y() - q.intrinsics.cy) / f, 1.0);

  const double crop_scale = uniform(params.crop_scale_min, params.crop_scale_max);
  const double half = radius_px / crop_scale;
  const Eigen::Vector2d jitter(uniform(-1.0, 1.0), uniform(-1.0, 1.0));
  const Eigen::Vector2d box_center = center + params.crop_shift * radius_px * jitter;
  q.crop = crop_transform(box_center.x() - half, box_center.y() - half, box_center.x() + half, box_center.y() + half,
                          params.pad_ratio, geom);
  q.view = View{q.gt_pose.rotation, center, f / tz, q.crop.affine};
  return q;
}

RegressorWeights oracle_regressor(int variant_dim, int knots) {
  if (variant_dim < 8) throw Error(ErrorCode::kInvalidArgument, "variant dimension must be at least 8");
  if (knots < 1) throw Error(ErrorCode::kInvalidArgument, "knot count must be positive");
  const int in = 2 * variant_dim;
  const int cq = 0, sq = 1, wq = 2;
  const int ct = variant_dim, st = variant_dim + 1, wt = variant_dim + 2;

  RegressorWeights w;
  {
    DenseLayer hidden{Eigen::MatrixXf::Zero(2, in), Eigen::VectorXf::Zero(2)};
    hidden.weights(0, wq) = 1.0f;
    hidden.weights(0, wt) = -1.0f;
    hidden.weights(1, wq) = -1.0f;
    hidden.weights(1, wt) = 1.0f;
    DenseLayer out{Eigen::MatrixXf::Zero(1, 2), Eigen::VectorXf::Zero(1)};
    out.weights(0, 0) = static_cast<float>(1.0 / kLogScaleGain);
    out.weights(0, 1) = static_cast<float>(-1.0 / kLogScaleGain);
    w.scale_head = {hidden, out};
  }

  // cos(dq - dt)/4 = cq ct + sq st and sin(dq - dt)/4 = sq ct - cq st, each
  // product written as ((a + b)^2 - (a - b)^2) / 4.
  struct Square {
    int a, b;
    float sign_b;
    int output;
    float sign_out;
  };
  const Square squares[] = {{cq, ct, 1, 0, 1},  {cq, ct, -1, 0, -1}, {sq, st, 1, 0, 1},  {sq, st, -1, 0, -1},
                            {sq, ct, 1, 1, 1},  {sq, ct, -1, 1, -1}, {cq, st, 1, 1, -1}, {cq, st, -1, 1, 1}};
  const int per_square = 2 * knots;
  const int hidden_units = 8 * per_square;
  const double h = 1.0 / knots;  // |a +- b| <= 1
  DenseLayer hidden{Eigen::MatrixXf::Zero(hidden_units, in), Eigen::VectorXf::Zero(hidden_units)};
  DenseLayer out{Eigen::MatrixXf::Zero(2, hidden_units), Eigen::VectorXf::Zero(2)};
  int unit = 0;
  for (const Square& sqr : squares) {
    for (int k = 0; k < knots; ++k) {
      const float coeff = static_cast<float>((k == 0 ? 1.0 : 2.0) * h * 0.25) * sqr.sign_out;
      for (float side : {1.0f, -1.0f}) {
        hidden.weights(unit, sqr.a) = side;
        hidden.weights(unit, sqr.b) = side * sqr.sign_b;
        hidden.bias[unit] = static_cast<float>(-k * h);
        out.weights(sqr.output, unit) = coeff;
        ++unit;
      }
    }
  }
  w.inplane_head = {hidden, out};
  return w;
}

}  // namespace gpose::synth
