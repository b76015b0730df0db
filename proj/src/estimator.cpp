#include "gpose/estimator.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <optional>
#include <random>

#include "gpose/binary_io.hpp"
#include "gpose/parallel.hpp"

namespace gpose {

void validate_mlp(const Mlp& mlp) {
  if (mlp.empty()) throw Error(ErrorCode::kInvalidWeights, "MLP has no layers");
  for (std::size_t l = 0; l < mlp.size(); ++l) {
    const auto& layer = mlp[l];
    if (layer.weights.rows() == 0 || layer.weights.cols() == 0)
      throw Error(ErrorCode::kInvalidWeights, "layer " + std::to_string(l) + " is empty");
    if (layer.bias.size() != layer.weights.rows())
      throw Error(ErrorCode::kInvalidWeights, "layer " + std::to_string(l) + " bias length mismatch");
    if (l > 0 && layer.weights.cols() != mlp[l - 1].weights.rows())
      throw Error(ErrorCode::kInvalidWeights, "layer " + std::to_string(l) + " does not chain with the previous layer");
  }
}

Eigen::VectorXf mlp_forward(const Mlp& mlp, const Eigen::Ref<const Eigen::VectorXf>& input) {
  validate_mlp(mlp);
  if (input.size() != mlp.front().weights.cols())
    throw Error(ErrorCode::kInvalidWeights, "input length " + std::to_string(input.size()) + " does not match layer 0");
  Eigen::VectorXf x = input;
  for (std::size_t l = 0; l < mlp.size(); ++l) {
    Eigen::VectorXf y = mlp[l].weights * x + mlp[l].bias;
    if (l + 1 < mlp.size()) y = y.cwiseMax(0.0f);
    x = std::move(y);
  }
  return x;
}

int RegressorWeights::input_dim() const {
  return scale_head.empty() ? 0 : static_cast<int>(scale_head.front().weights.cols());
}

void RegressorWeights::validate() const {
  validate_mlp(scale_head);
  validate_mlp(inplane_head);
  if (scale_head.back().weights.rows() != 1) throw Error(ErrorCode::kInvalidWeights, "scale head must output 1 value");
  if (inplane_head.back().weights.rows() != 2)
    throw Error(ErrorCode::kInvalidWeights, "in-plane head must output 2 values");
  if (inplane_head.front().weights.cols() != scale_head.front().weights.cols())
    throw Error(ErrorCode::kInvalidWeights, "heads disagree on input dimension");
}

void write_weights(const RegressorWeights& weights, std::ostream& out) {
  weights.validate();
  io::Writer w(out);
  w.put_magic("GPWT");
  w.put<std::uint16_t>(kWeightsFormatVersion);
  w.put<std::uint8_t>(2);
  for (const Mlp* head : {&weights.scale_head, &weights.inplane_head}) {
    if (head->size() > 255) throw Error(ErrorCode::kInvalidWeights, "too many layers");
    w.put<std::uint8_t>(static_cast<std::uint8_t>(head->size()));
    for (const auto& layer : *head) {
      w.put<std::uint32_t>(static_cast<std::uint32_t>(layer.weights.rows()));
      w.put<std::uint32_t>(static_cast<std::uint32_t>(layer.weights.cols()));
      const Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm = layer.weights;
      w.put_f32_array(rm.data(), static_cast<std::size_t>(rm.size()));
      w.put_f32_array(layer.bias.data(), static_cast<std::size_t>(layer.bias.size()));
    }
  }
  w.check();
}

RegressorWeights read_weights(std::istream& in) {
  io::Reader r(in);
  r.expect_magic("GPWT");
  const auto version_at = r.offset();
  if (const auto v = r.get<std::uint16_t>("version"); v != kWeightsFormatVersion)
    throw FormatError(ErrorCode::kFormat, version_at, "unsupported GPWT version " + std::to_string(v));
  const auto heads_at = r.offset();
  const int heads = r.get<std::uint8_t>("head count");
  if (heads != 2) throw FormatError(ErrorCode::kFormat, heads_at, "GPWT must hold exactly 2 heads");
  RegressorWeights out;
  for (Mlp* head : {&out.scale_head, &out.inplane_head}) {
    const auto layers_at = r.offset();
    const int layers = r.get<std::uint8_t>("layer count");
    if (layers == 0) throw FormatError(ErrorCode::kFormat, layers_at, "head without layers");
    for (int l = 0; l < layers; ++l) {
      const auto shape_at = r.offset();
      const auto rows = r.get<std::uint32_t>("layer rows");
      const auto cols = r.get<std::uint32_t>("layer cols");
      if (rows == 0 || cols == 0 || static_cast<std::uint64_t>(rows) * cols > (1ull << 28))
        throw FormatError(ErrorCode::kFormat, shape_at, "invalid layer shape");
      if (!head->empty() && static_cast<Eigen::Index>(cols) != head->back().weights.rows())
        throw FormatError(ErrorCode::kFormat, shape_at, "layer shape does not chain");
      Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> wm(rows, cols);
      r.get_f32_array(wm.data(), static_cast<std::size_t>(wm.size()), "layer weights");
      DenseLayer layer;
      layer.weights = wm;
      layer.bias.resize(rows);
      r.get_f32_array(layer.bias.data(), rows, "layer biases");
      head->push_back(std::move(layer));
    }
  }
  try {
    out.validate();
  } catch (const Error& e) {
    throw FormatError(ErrorCode::kFormat, r.offset(), e.what());
  }
  return out;
}

void write_weights_file(const RegressorWeights& weights, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kIo, "cannot open " + path + " for writing");
  write_weights(weights, out);
}

RegressorWeights read_weights_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot open " + path);
  return read_weights(in);
}

ScaleInplane predict_scale_inplane(const RegressorWeights& weights, const Eigen::Ref<const Eigen::VectorXf>& feat_query,
                                   const Eigen::Ref<const Eigen::VectorXf>& feat_template) {
  Eigen::VectorXf input(feat_query.size() + feat_template.size());
  input << feat_query, feat_template;
  const Eigen::VectorXf log_s = mlp_forward(weights.scale_head, input);
  const Eigen::VectorXf cs = mlp_forward(weights.inplane_head, input);
  const double c = cs[0], s = cs[1];
  if (std::hypot(c, s) < 1e-6) throw Error(ErrorCode::kUnreliableAngle, "in-plane head output is near zero");
  return {std::exp(static_cast<double>(log_s[0])), std::atan2(s, c)};
}

std::vector<ScaleInplane> predict_correspondences(const RegressorWeights& weights, const FeatureGrid& query_variant,
                                                  const FeatureGrid& template_variant,
                                                  std::span<const Correspondence> correspondences) {
  std::vector<ScaleInplane> out;
  out.reserve(correspondences.size());
  for (const auto& c : correspondences) {
    const Eigen::VectorXf fq = query_variant.descriptor(c.query_index).transpose();
    const Eigen::VectorXf ft = template_variant.descriptor(c.template_index).transpose();
    out.push_back(predict_scale_inplane(weights, fq, ft));
  }
  return out;
}

Affine2d hypothesis_from_points(const Eigen::Vector2d& p_template, const Eigen::Vector2d& p_query, double s,
                                double alpha) {
  if (!(s > 0)) throw Error(ErrorCode::kInvalidArgument, "scale must be positive");
  const double c = std::cos(alpha), sn = std::sin(alpha);
  const Eigen::Vector2d rotated(c * p_template.x() - sn * p_template.y(), sn * p_template.x() + c * p_template.y());
  return Affine2d(s, alpha, p_query - s * rotated);
}

Affine2d hypothesis_from_correspondence(const Correspondence& corr, double s, double alpha, const PatchGeometry& geom) {
  return hypothesis_from_points(patch_center(corr.template_index, geom), patch_center(corr.query_index, geom), s,
                                alpha);
}

std::vector<PointMatch> to_point_matches(std::span<const Correspondence> correspondences, const PatchGeometry& geom) {
  std::vector<PointMatch> out;
  out.reserve(correspondences.size());
  for (const auto& c : correspondences)
    out.push_back({patch_center(c.template_index, geom), patch_center(c.query_index, geom), c.score});
  return out;
}

namespace {

// Inlier test shared by counting and materialization so both agree exactly.
struct InlierTest {
  Eigen::Matrix2d a;
  Eigen::Vector2d t;
  double delta2;

  InlierTest(const Affine2d& h, double delta) : a(h.matrix().topLeftCorner<2, 2>()), t(h.t), delta2(delta * delta) {}
  bool operator()(const PointMatch& m) const { return (a * m.template_pt + t - m.query_pt).squaredNorm() <= delta2; }
};

struct HypothesisScore {
  int source = -1;  // -1: no hypothesis
  int count = 0;
  double mean_score = 0;
};

HypothesisScore score_hypothesis(const Affine2d& h, std::span<const PointMatch> matches, double delta, int source) {
  const InlierTest inlier(h, delta);
  HypothesisScore out;
  out.source = source;
  double score_sum = 0;
  for (const auto& m : matches) {
    if (inlier(m)) {
      ++out.count;
      score_sum += m.score;
    }
  }
  out.mean_score = out.count == 0 ? 0.0 : score_sum / out.count;
  return out;
}

// Total order used to pick winners; `a` wins over `b` when true.
bool beats(const HypothesisScore& a, const HypothesisScore& b) {
  if (a.source < 0 || b.source < 0) return b.source < 0 && a.source >= 0;
  if (a.count != b.count) return a.count > b.count;
  if (a.mean_score != b.mean_score) return a.mean_score > b.mean_score;
  return a.source < b.source;
}

HypothesisScore reduce(const std::vector<HypothesisScore>& scores) {
  HypothesisScore best;
  for (const auto& s : scores)
    if (beats(s, best)) best = s;
  return best;
}

AffineHypothesis materialize(const Affine2d& h, std::span<const PointMatch> matches, double delta,
                             const HypothesisScore& score) {
  const InlierTest inlier(h, delta);
  AffineHypothesis out;
  out.transform = h;
  out.source = score.source;
  out.mean_inlier_score = score.mean_score;
  for (std::size_t i = 0; i < matches.size(); ++i)
    if (inlier(matches[i])) out.inliers.push_back(static_cast<int>(i));
  return out;
}

}  // namespace

AffineHypothesis ransac_affine(std::span<const PointMatch> matches, std::span<const ScaleInplane> predictions,
                               const RansacOptions& options) {
  if (matches.empty()) throw Error(ErrorCode::kNoCorrespondences, "no correspondences");
  if (predictions.size() != matches.size())
    throw Error(ErrorCode::kInvalidArgument, "one (s, alpha) prediction per correspondence is required");
  auto hypothesis = [&](int i) {
    const auto& m = matches[static_cast<std::size_t>(i)];
    const auto& p = predictions[static_cast<std::size_t>(i)];
    return hypothesis_from_points(m.template_pt, m.query_pt, p.s, p.alpha);
  };
  std::vector<HypothesisScore> scores(matches.size());
  parallel_for(static_cast<int>(matches.size()), options.threads, [&](int i) {
    scores[static_cast<std::size_t>(i)] = score_hypothesis(hypothesis(i), matches, options.delta_px, i);
  });
  const HypothesisScore best = reduce(scores);
  return materialize(hypothesis(best.source), matches, options.delta_px, best);
}

AffineHypothesis ransac_affine(std::span<const Correspondence> correspondences,
                               std::span<const ScaleInplane> predictions, const RansacOptions& options,
                               const PatchGeometry& geom) {
  const auto matches = to_point_matches(correspondences, geom);
  return ransac_affine(std::span<const PointMatch>(matches), predictions, options);
}

AffineHypothesis ransac_kabsch2(std::span<const PointMatch> matches, const RansacOptions& options) {
  if (matches.size() < 2) throw Error(ErrorCode::kInsufficientData, "Kabsch RANSAC needs at least 2 correspondences");
  std::vector<std::pair<int, int>> pairs;
  const int n = static_cast<int>(matches.size());
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) pairs.emplace_back(i, j);
  if (options.pair_cap > 0 && static_cast<int>(pairs.size()) > options.pair_cap) {
    std::mt19937_64 rng(options.seed);
    std::shuffle(pairs.begin(), pairs.end(), rng);
    pairs.resize(static_cast<std::size_t>(options.pair_cap));
    std::sort(pairs.begin(), pairs.end());
  }
  auto hypothesis = [&](int k) {
    const auto [i, j] = pairs[static_cast<std::size_t>(k)];
    const auto& a = matches[static_cast<std::size_t>(i)];
    const auto& b = matches[static_cast<std::size_t>(j)];
    return kabsch2d(a.template_pt, b.template_pt, a.query_pt, b.query_pt);
  };
  std::vector<HypothesisScore> scores(pairs.size());
  parallel_for(static_cast<int>(pairs.size()), options.threads, [&](int k) {
    const auto [i, j] = pairs[static_cast<std::size_t>(k)];
    const auto& a = matches[static_cast<std::size_t>(i)];
    const auto& b = matches[static_cast<std::size_t>(j)];
    if (a.template_pt == b.template_pt || a.query_pt == b.query_pt) return;  // left with source = -1
    scores[static_cast<std::size_t>(k)] = score_hypothesis(hypothesis(k), matches, options.delta_px, k);
  });
  const HypothesisScore best = reduce(scores);
  if (best.source < 0) throw Error(ErrorCode::kDegenerateCorrespondence, "every correspondence pair is degenerate");
  AffineHypothesis out = materialize(hypothesis(best.source), matches, options.delta_px, best);
  // Report the pair by its correspondence indices.
  out.source = pairs[static_cast<std::size_t>(best.source)].first;
  out.source_second = pairs[static_cast<std::size_t>(best.source)].second;
  return out;
}

AffineHypothesis ransac_kabsch2(std::span<const Correspondence> correspondences, const RansacOptions& options,
                                const PatchGeometry& geom) {
  const auto matches = to_point_matches(correspondences, geom);
  return ransac_kabsch2(std::span<const PointMatch>(matches), options);
}

PoseEstimate select_hypothesis(std::span<const Candidate> candidates, EstimatorMode mode, const RansacOptions& options,
                               const PatchGeometry& geom) {
  if (candidates.empty()) throw Error(ErrorCode::kNoCandidates, "no template candidates");
  std::vector<std::optional<AffineHypothesis>> results(candidates.size());
  std::vector<std::string> diagnostics(candidates.size());
  for (std::size_t c = 0; c < candidates.size(); ++c) {
    const auto& cand = candidates[c];
    try {
      if (mode == EstimatorMode::kSingle)
        results[c] = ransac_affine(std::span<const Correspondence>(cand.correspondences), cand.predictions, options, geom);
      else
        results[c] = ransac_kabsch2(std::span<const Correspondence>(cand.correspondences), options, geom);
    } catch (const Error& e) {
      diagnostics[c] = "template " + std::to_string(cand.template_id) + ": " + e.what();
    }
  }
  int best = -1;
  for (std::size_t c = 0; c < candidates.size(); ++c) {
    if (!results[c]) continue;
    if (best < 0) {
      best = static_cast<int>(c);
      continue;
    }
    const auto& a = *results[c];
    const auto& b = *results[static_cast<std::size_t>(best)];
    const auto& ca = candidates[c];
    const auto& cb = candidates[static_cast<std::size_t>(best)];
    if (a.inliers.size() != b.inliers.size()) {
      if (a.inliers.size() > b.inliers.size()) best = static_cast<int>(c);
    } else if (ca.similarity != cb.similarity) {
      if (ca.similarity > cb.similarity) best = static_cast<int>(c);
    } else if (ca.template_id < cb.template_id) {
      best = static_cast<int>(c);
    }
  }
  if (best < 0) {
    std::string msg = "all candidates failed";
    for (const auto& d : diagnostics) msg += "; " + d;
    throw Error(ErrorCode::kEstimationFailed, msg);
  }
  const auto& cand = candidates[static_cast<std::size_t>(best)];
  PoseEstimate out;
  out.template_id = cand.template_id;
  out.similarity = cand.similarity;
  out.hypothesis = std::move(*results[static_cast<std::size_t>(best)]);
  return out;
}

Pose6Dd recover_candidate_pose(const QueryMeta& query, const TemplateMeta& meta, const Affine2d& m_tq) {
  const Affine2d full = compose_template_to_query(meta.crop, m_tq, query.crop);
  return recover_pose(meta.r_ae, full.alpha, full, meta.center_px, meta.tz_mm, meta.intrinsics, query.intrinsics);
}

PoseEstimate select_pose(const QueryMeta& query, std::span<const Candidate> candidates, EstimatorMode mode,
                         const RansacOptions& options, const PatchGeometry& geom) {
  PoseEstimate out = select_hypothesis(candidates, mode, options, geom);
  for (const auto& c : candidates)
    if (c.template_id == out.template_id) {
      out.pose = recover_candidate_pose(query, c.meta, out.hypothesis.transform);
      break;
    }
  return out;
}

}  // namespace gpose
