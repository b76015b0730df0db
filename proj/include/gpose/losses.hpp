#pragma once

// Training objectives evaluated with analytic gradients: patch-level InfoNCE
// with cross-pair negatives, the log-scale + geodesic regression loss, and
// the geodesic angle distance.

#include <Eigen/Dense>

#include <span>
#include <utility>
#include <vector>

#include "gpose/featuregrid.hpp"

namespace gpose {

struct ContrastivePair {
  FeatureGrid query;
  FeatureGrid templ;
  std::vector<std::pair<int, int>> positives;  // (query cell, template cell)
};

struct ContrastiveBatch {
  std::vector<ContrastivePair> pairs;
  double temperature = 0.1;
};

enum class InfoNceMode {
  kStandard,  // positive term included in the denominator
  kStrict,    // denominator over (k', i') != (k, i*) only
};

/// Descriptor rows in double precision, one matrix per grid.
struct InfoNceInput {
  std::vector<Eigen::MatrixXd> query;  // cells x D per pair
  std::vector<Eigen::MatrixXd> templ;
  std::vector<std::vector<std::pair<int, int>>> positives;
  double temperature = 0.1;
};

struct InfoNceResult {
  double value = 0;
  std::vector<Eigen::MatrixXd> grad_query;  // same shapes as the input grids
  std::vector<Eigen::MatrixXd> grad_templ;
};

/// Every positive (k, i) is scored against the corresponding template patch
/// of every positive in the batch; the diagonal holds the positives. The
/// similarity is the cosine of the raw descriptors, so gradients include the
/// normalization.
InfoNceResult infonce_loss(const InfoNceInput& input, InfoNceMode mode = InfoNceMode::kStandard);
InfoNceResult infonce_loss(const ContrastiveBatch& batch, InfoNceMode mode = InfoNceMode::kStandard);

inline constexpr double kGeodesicClamp = 1e-7;

/// acos(cos a1 cos a2 + sin a1 sin a2), argument clamped 1e-7 inside [-1, 1].
double geodesic(double alpha1, double alpha2);

struct ScaleInplaneLoss {
  double value = 0;
  std::vector<double> d_log_scale;  // d value / d ln s_pred
  std::vector<double> d_cos;        // d value / d cos(alpha_pred)
  std::vector<double> d_sin;        // d value / d sin(alpha_pred)
};

/// sum_i (ln s_i - ln s*)^2 + geo(alpha_i, alpha*).
ScaleInplaneLoss scale_inplane_loss(std::span<const double> s_pred, std::span<const double> alpha_pred, double s_star,
                                    double alpha_star);

/// Same loss on the raw head outputs (ln s, cos, sin); cos/sin need not be
/// normalized.
ScaleInplaneLoss scale_inplane_loss_raw(std::span<const double> log_s, std::span<const double> cos_pred,
                                        std::span<const double> sin_pred, double s_star, double alpha_star);

}  // namespace gpose
