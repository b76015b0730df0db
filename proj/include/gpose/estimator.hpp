#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "gpose/featuregrid.hpp"
#include "gpose/geometry.hpp"
#include "gpose/matching.hpp"

namespace gpose {

struct DenseLayer {
  Eigen::MatrixXf weights;  // out x in
  Eigen::VectorXf bias;     // out
};

/// Affine layers with ReLU between all but the last.
using Mlp = std::vector<DenseLayer>;

void validate_mlp(const Mlp& mlp);
Eigen::VectorXf mlp_forward(const Mlp& mlp, const Eigen::Ref<const Eigen::VectorXf>& input);

/// Two heads fed with [query descriptor, template descriptor] from the
/// variant-feature grids. The scale head emits ln s, the in-plane head emits
/// an unnormalized (cos a, sin a).
struct RegressorWeights {
  Mlp scale_head;
  Mlp inplane_head;

  int input_dim() const;
  void validate() const;
};

// GPWT: "GPWT" | version u16 | head count u8 | per head: layer count u8, per
// layer rows u32, cols u32, f32 weights row-major, f32 biases. Little-endian.
inline constexpr std::uint16_t kWeightsFormatVersion = 1;
void write_weights(const RegressorWeights& weights, std::ostream& out);
RegressorWeights read_weights(std::istream& in);
void write_weights_file(const RegressorWeights& weights, const std::string& path);
RegressorWeights read_weights_file(const std::string& path);

struct ScaleInplane {
  double s = 1;
  double alpha = 0;
};

ScaleInplane predict_scale_inplane(const RegressorWeights& weights, const Eigen::Ref<const Eigen::VectorXf>& feat_query,
                                   const Eigen::Ref<const Eigen::VectorXf>& feat_template);

/// Predictions for every correspondence from the variant grids.
std::vector<ScaleInplane> predict_correspondences(const RegressorWeights& weights, const FeatureGrid& query_variant,
                                                  const FeatureGrid& template_variant,
                                                  std::span<const Correspondence> correspondences);

/// Similarity that maps the template patch center exactly onto the query
/// patch center: t = p_Q - s R_alpha p_T.
Affine2d hypothesis_from_points(const Eigen::Vector2d& p_template, const Eigen::Vector2d& p_query, double s,
                                double alpha);
Affine2d hypothesis_from_correspondence(const Correspondence& corr, double s, double alpha,
                                        const PatchGeometry& geom = {});

/// Point-level view of a correspondence in processed-image pixels.
struct PointMatch {
  Eigen::Vector2d template_pt;
  Eigen::Vector2d query_pt;
  double score = 0;
};

std::vector<PointMatch> to_point_matches(std::span<const Correspondence> correspondences,
                                         const PatchGeometry& geom = {});

struct AffineHypothesis {
  Affine2d transform;
  int source = -1;         // correspondence index (first of the pair for Kabsch)
  int source_second = -1;  // second correspondence of a Kabsch pair
  std::vector<int> inliers;
  double mean_inlier_score = 0;
};

struct RansacOptions {
  double delta_px = 14.0;
  int threads = 1;
  int pair_cap = 20000;    // Kabsch pairs evaluated before subsampling
  std::uint64_t seed = 0;  // subsampling seed for the pair cap
};

/// Exhaustive single-correspondence RANSAC: every correspondence proposes
/// the hypothesis built from its own (s, alpha); inliers are matches whose
/// mapped template point lands within delta of its query point. Winner: most
/// inliers, then higher mean inlier score, then smaller source index.
AffineHypothesis ransac_affine(std::span<const PointMatch> matches, std::span<const ScaleInplane> predictions,
                               const RansacOptions& options = {});
AffineHypothesis ransac_affine(std::span<const Correspondence> correspondences,
                               std::span<const ScaleInplane> predictions, const RansacOptions& options = {},
                               const PatchGeometry& geom = {});

/// Two-correspondence variant solving each pair with kabsch2d. Coincident
/// pairs are skipped.
AffineHypothesis ransac_kabsch2(std::span<const PointMatch> matches, const RansacOptions& options = {});
AffineHypothesis ransac_kabsch2(std::span<const Correspondence> correspondences, const RansacOptions& options = {},
                                const PatchGeometry& geom = {});

enum class EstimatorMode { kSingle, kKabsch };

struct TemplateMeta {
  Rotation3d r_ae = Rotation3d::Identity();
  Affine2d crop;  // original template -> processed
  double tz_mm = 0;
  Intrinsicsd intrinsics;
  Eigen::Vector2d center_px = Eigen::Vector2d::Zero();  // projected object center
};

struct QueryMeta {
  Affine2d crop;  // original query -> processed
  Intrinsicsd intrinsics;
};

struct Candidate {
  int template_id = -1;
  double similarity = 0;
  std::vector<Correspondence> correspondences;
  std::vector<ScaleInplane> predictions;  // unused in Kabsch mode
  TemplateMeta meta;
};

struct PoseEstimate {
  int template_id = -1;
  double similarity = 0;
  AffineHypothesis hypothesis;
  Pose6Dd pose;
};

/// Winner among candidates without the pose (pose left at identity).
PoseEstimate select_hypothesis(std::span<const Candidate> candidates, EstimatorMode mode,
                               const RansacOptions& options = {}, const PatchGeometry& geom = {});

/// 6D pose from a processed-template -> processed-query similarity.
Pose6Dd recover_candidate_pose(const QueryMeta& query, const TemplateMeta& meta, const Affine2d& m_tq);

/// Runs the estimator on every candidate, keeps the one with most inliers
/// (then higher similarity, then smaller id) and recovers its 6D pose.
PoseEstimate select_pose(const QueryMeta& query, std::span<const Candidate> candidates, EstimatorMode mode,
                         const RansacOptions& options = {}, const PatchGeometry& geom = {});

}  // namespace gpose
