#include <gtest/gtest.h>

#include <algorithm>
#include <sstream>

#include "gpose/estimator.hpp"
#include "gpose/synthetic.hpp"
#include "test_support.hpp"

using namespace gpose;
using namespace testing_support;
using std::numbers::pi;

namespace {

DenseLayer random_layer(std::mt19937_64& rng, int out, int in) {
  std::normal_distribution<float> n;
  DenseLayer l{Eigen::MatrixXf(out, in), Eigen::VectorXf(out)};
  for (int i = 0; i < l.weights.size(); ++i) l.weights.data()[i] = n(rng);
  for (int i = 0; i < out; ++i) l.bias[i] = n(rng);
  return l;
}

RegressorWeights constant_weights(int in, float log_s, float c, float s) {
  RegressorWeights w;
  w.scale_head = {DenseLayer{Eigen::MatrixXf::Zero(1, in), Eigen::VectorXf::Constant(1, log_s)}};
  Eigen::VectorXf b(2);
  b << c, s;
  w.inplane_head = {DenseLayer{Eigen::MatrixXf::Zero(2, in), b}};
  return w;
}

std::vector<PointMatch> matches_from(const Affine2d& g, std::mt19937_64& rng, int inliers, int outliers,
                                     double outlier_min) {
  std::vector<PointMatch> m;
  for (int i = 0; i < inliers + outliers; ++i) {
    const Eigen::Vector2d pt(uniform(rng, 0, 224), uniform(rng, 0, 224));
    Eigen::Vector2d pq = g.apply(pt);
    if (i >= inliers) {
      const double ang = uniform(rng, -pi, pi);
      pq += uniform(rng, outlier_min, outlier_min + 100) * Eigen::Vector2d(std::cos(ang), std::sin(ang));
    }
    m.push_back({pt, pq, uniform(rng, 0.5, 1.0)});
  }
  return m;
}

}  // namespace

TEST(Mlp, ZeroWeightsGiveBias) {
  DenseLayer l{Eigen::MatrixXf::Zero(3, 4), Eigen::Vector3f(1, -2, 3)};
  const Eigen::VectorXf out = mlp_forward({l}, Eigen::Vector4f(5, 6, 7, 8));
  EXPECT_EQ(out, Eigen::Vector3f(1, -2, 3));
}

TEST(Mlp, IdentityLayer) {
  DenseLayer l{Eigen::MatrixXf::Identity(4, 4), Eigen::VectorXf::Zero(4)};
  const Eigen::Vector4f x(-1, 2, -3, 4);
  EXPECT_EQ(mlp_forward({l}, x), x);  // no ReLU after the last layer
}

TEST(Mlp, TwoLayerMatchesHandMatmul) {
  std::mt19937_64 rng(40);
  const Mlp net{random_layer(rng, 6, 5), random_layer(rng, 3, 6)};
  const Eigen::VectorXf x = Eigen::VectorXf::LinSpaced(5, -1, 1);
  const Eigen::VectorXf out = mlp_forward(net, x);
  for (int o = 0; o < 3; ++o) {
    double acc = net[1].bias[o];
    for (int h = 0; h < 6; ++h) {
      double z = net[0].bias[h];
      for (int i = 0; i < 5; ++i) z += static_cast<double>(net[0].weights(h, i)) * x[i];
      acc += static_cast<double>(net[1].weights(o, h)) * std::max(0.0, z);
    }
    EXPECT_NEAR(out[o], acc, 1e-5);
  }
}

TEST(Mlp, ShapeErrors) {
  std::mt19937_64 rng(41);
  const Mlp bad{random_layer(rng, 6, 5), random_layer(rng, 3, 7)};
  try {
    mlp_forward(bad, Eigen::VectorXf::Zero(5));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kInvalidWeights);
  }
  try {
    mlp_forward({random_layer(rng, 2, 5)}, Eigen::VectorXf::Zero(4));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kInvalidWeights);
  }
}

TEST(Gpwt, RoundTripAndCorruption) {
  const RegressorWeights w = synth::oracle_regressor(16, 8);
  std::stringstream ss;
  write_weights(w, ss);
  const std::string bytes = ss.str();
  EXPECT_EQ(bytes.substr(0, 4), "GPWT");
  std::istringstream is(bytes);
  const RegressorWeights back = read_weights(is);
  ASSERT_EQ(back.scale_head.size(), w.scale_head.size());
  ASSERT_EQ(back.inplane_head.size(), w.inplane_head.size());
  for (std::size_t i = 0; i < w.inplane_head.size(); ++i) {
    EXPECT_EQ(back.inplane_head[i].weights, w.inplane_head[i].weights);
    EXPECT_EQ(back.inplane_head[i].bias, w.inplane_head[i].bias);
  }
  std::stringstream again;
  write_weights(back, again);
  EXPECT_EQ(again.str(), bytes);

  std::istringstream trunc(bytes.substr(0, bytes.size() / 2));
  try {
    read_weights(trunc);
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_EQ(e.code(), ErrorCode::kTruncated);
    EXPECT_NE(std::string(e.what()).find("offset"), std::string::npos);
  }
  std::string bad = bytes;
  bad[6] = 3;  // head count
  std::istringstream badhead(bad);
  try {
    read_weights(badhead);
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_EQ(e.offset(), 6u);
  }
}

TEST(Predict, ConstantHeads) {
  const Eigen::VectorXf f = Eigen::VectorXf::Ones(4);
  const auto a = predict_scale_inplane(constant_weights(8, 0, 1, 0), f, f);
  EXPECT_DOUBLE_EQ(a.s, 1.0);
  EXPECT_DOUBLE_EQ(a.alpha, 0.0);
  const auto b = predict_scale_inplane(constant_weights(8, 0, 0, 1), f, f);
  EXPECT_NEAR(b.alpha, pi / 2, 1e-15);
  try {
    predict_scale_inplane(constant_weights(8, 0, 1e-8f, 0), f, f);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kUnreliableAngle);
  }
}

TEST(Predict, OracleRegressorOnHeldOutPairs) {
  // Pairs of synthetic variant descriptors at random scale and angle.
  const synth::SyntheticObject object(5);
  const RegressorWeights w = synth::oracle_regressor(object.params().variant_dim);
  std::mt19937_64 rng(42);
  std::vector<double> fq(16), ft(16);
  for (int i = 0; i < 1000; ++i) {
    const Eigen::Vector3d surf = random_unit(rng);
    const double th_t = uniform(rng, -pi, pi), th_q = uniform(rng, -pi, pi);
    const double sig_t = 100.0, sig_q = sig_t * std::exp(uniform(rng, -0.8, 0.8));
    object.variant_descriptor(surf, th_q, sig_q, fq);
    object.variant_descriptor(surf, th_t, sig_t, ft);
    const Eigen::VectorXf q = Eigen::Map<Eigen::VectorXd>(fq.data(), 16).cast<float>();
    const Eigen::VectorXf t = Eigen::Map<Eigen::VectorXd>(ft.data(), 16).cast<float>();
    const auto p = predict_scale_inplane(w, q, t);
    EXPECT_LT(std::abs(std::log(p.s / (sig_q / sig_t))), 0.1);
    EXPECT_LT(angle_diff(p.alpha, th_q - th_t), 0.05);
  }
}

TEST(Hypothesis, Examples) {
  const Affine2d id = hypothesis_from_points({50, 60}, {50, 60}, 1, 0);
  EXPECT_LT(id.t.norm(), 1e-12);
  const Affine2d two = hypothesis_from_points({7, 7}, {14, 14}, 2, 0);
  EXPECT_LT(two.t.norm(), 1e-12);
  EXPECT_THROW(hypothesis_from_points({0, 0}, {1, 1}, 0, 0), Error);
  std::mt19937_64 rng(43);
  for (int i = 0; i < 200; ++i) {
    const Correspondence c{{static_cast<int>(rng() % 16), static_cast<int>(rng() % 16)},
                           {static_cast<int>(rng() % 16), static_cast<int>(rng() % 16)}, 0.9};
    const double s = uniform(rng, 0.3, 3), a = uniform(rng, -pi, pi);
    const Affine2d h = hypothesis_from_correspondence(c, s, a);
    EXPECT_LT((h.apply(patch_center(c.template_index)) - patch_center(c.query_index)).norm(), 1e-9);
  }
}

TEST(RansacAffine, AllConsistent) {
  std::mt19937_64 rng(44);
  const Affine2d g(1.3, 0.7, Eigen::Vector2d(10, -20));
  const auto m = matches_from(g, rng, 20, 0, 0);
  const std::vector<ScaleInplane> pred(m.size(), {g.s, g.alpha});
  const auto h = ransac_affine(std::span<const PointMatch>(m), pred);
  EXPECT_EQ(h.inliers.size(), 20u);
  EXPECT_LT((h.transform.matrix() - g.matrix()).norm(), 1e-9);
  EXPECT_EQ(h.source, 0);  // all tie: smallest source wins after equal means
}

TEST(RansacAffine, SevenConsistentThreeDisplaced) {
  std::mt19937_64 rng(45);
  const Affine2d g(0.9, -0.4, Eigen::Vector2d(30, 5));
  std::vector<PointMatch> m = matches_from(g, rng, 7, 0, 0);
  for (int i = 0; i < 3; ++i) {
    const Eigen::Vector2d pt(uniform(rng, 0, 224), uniform(rng, 0, 224));
    m.push_back({pt, g.apply(pt) + Eigen::Vector2d(50, 0), 0.9});
  }
  const std::vector<ScaleInplane> pred(m.size(), {g.s, g.alpha});
  const auto h = ransac_affine(std::span<const PointMatch>(m), pred);
  EXPECT_EQ(h.inliers.size(), 7u);
  // Exhaustive oracle: the three displaced points are mutually consistent,
  // so their best count is 3.
  const auto k = ransac_kabsch2(std::span<const PointMatch>(m));
  EXPECT_EQ(k.inliers, h.inliers);
}

TEST(RansacAffine, SingleCorrespondenceAndErrors) {
  const std::vector<PointMatch> one{{{10, 10}, {20, 30}, 0.8}};
  const std::vector<ScaleInplane> p{{2.0, 0.5}};
  const auto h = ransac_affine(std::span<const PointMatch>(one), p);
  EXPECT_EQ(h.inliers, std::vector<int>{0});
  EXPECT_EQ(h.source, 0);
  try {
    ransac_affine(std::span<const PointMatch>(), std::span<const ScaleInplane>());
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kNoCorrespondences);
  }
}

TEST(RansacAffine, SourceIsAlwaysItsOwnInlier) {
  std::mt19937_64 rng(46);
  const auto m = matches_from(Affine2d(1, 0, Eigen::Vector2d::Zero()), rng, 5, 15, 30);
  std::vector<ScaleInplane> pred;
  for (std::size_t i = 0; i < m.size(); ++i) pred.push_back({uniform(rng, 0.5, 2), uniform(rng, -pi, pi)});
  const auto h = ransac_affine(std::span<const PointMatch>(m), pred);
  EXPECT_NE(std::find(h.inliers.begin(), h.inliers.end(), h.source), h.inliers.end());
}

TEST(RansacAffine, ThreadCountDoesNotChangeWinner) {
  std::mt19937_64 rng(47);
  for (int trial = 0; trial < 50; ++trial) {
    const auto m = matches_from(Affine2d(1.1, 0.2, Eigen::Vector2d(3, 4)), rng, 10, 30, 0);
    std::vector<ScaleInplane> pred;
    for (std::size_t i = 0; i < m.size(); ++i) pred.push_back({uniform(rng, 0.9, 1.2), uniform(rng, 0.1, 0.3)});
    RansacOptions one, many;
    many.threads = 7;
    const auto a = ransac_affine(std::span<const PointMatch>(m), pred, one);
    const auto b = ransac_affine(std::span<const PointMatch>(m), pred, many);
    EXPECT_EQ(a.source, b.source);
    EXPECT_EQ(a.inliers, b.inliers);
  }
}

TEST(RansacAffine, InlierMonotonicity) {
  std::mt19937_64 rng(48);
  const Affine2d g(1.2, 0.3, Eigen::Vector2d(5, 5));
  auto m = matches_from(g, rng, 6, 6, 50);
  std::vector<ScaleInplane> pred(m.size(), {g.s, g.alpha});
  const auto before = ransac_affine(std::span<const PointMatch>(m), pred);
  const Eigen::Vector2d pt(100, 100);
  m.push_back({pt, g.apply(pt), 0.7});
  pred.push_back({g.s, g.alpha});
  const auto after = ransac_affine(std::span<const PointMatch>(m), pred);
  EXPECT_GE(after.inliers.size(), before.inliers.size());
}

TEST(RansacKabsch, TwoExactAndDegenerate) {
  const Affine2d g(1.5, 1.0, Eigen::Vector2d(-3, 8));
  const std::vector<PointMatch> two{{{10, 20}, g.apply({10, 20}), 0.9}, {{100, 50}, g.apply({100, 50}), 0.8}};
  const auto h = ransac_kabsch2(std::span<const PointMatch>(two));
  EXPECT_LT((h.transform.apply({10, 20}) - two[0].query_pt).norm(), 1e-9);
  EXPECT_LT((h.transform.apply({100, 50}) - two[1].query_pt).norm(), 1e-9);
  try {
    ransac_kabsch2(std::span<const PointMatch>(two.data(), 1));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kInsufficientData);
  }
  // Coincident first pair is skipped.
  std::vector<PointMatch> deg{{{10, 20}, {5, 5}, 0.9}, {{10, 20}, {5, 5}, 0.9}, two[0], two[1]};
  const auto d = ransac_kabsch2(std::span<const PointMatch>(deg));
  EXPECT_GE(d.inliers.size(), 2u);
  const std::vector<PointMatch> all_same{{{1, 1}, {2, 2}, 1}, {{1, 1}, {2, 2}, 1}};
  EXPECT_THROW(ransac_kabsch2(std::span<const PointMatch>(all_same)), Error);
}

TEST(RansacKabsch, AgreesWithSingleOnConsistentData) {
  std::mt19937_64 rng(49);
  for (int trial = 0; trial < 50; ++trial) {
    const Affine2d g(uniform(rng, 0.5, 2), uniform(rng, -pi, pi), Eigen::Vector2d(uniform(rng, -50, 50), uniform(rng, -50, 50)));
    const auto m = matches_from(g, rng, 12, 0, 0);
    const std::vector<ScaleInplane> pred(m.size(), {g.s, g.alpha});
    const auto a = ransac_affine(std::span<const PointMatch>(m), pred);
    const auto b = ransac_kabsch2(std::span<const PointMatch>(m));
    EXPECT_LT((a.transform.matrix() - b.transform.matrix()).cwiseAbs().maxCoeff(), 1e-6);
  }
}

TEST(RansacKabsch, PairCapIsSeededAndDeterministic) {
  std::mt19937_64 rng(50);
  const auto m = matches_from(Affine2d(1, 0.1, Eigen::Vector2d(2, 2)), rng, 40, 40, 50);
  RansacOptions o;
  o.pair_cap = 300;
  o.seed = 9;
  const auto a = ransac_kabsch2(std::span<const PointMatch>(m), o);
  o.threads = 4;
  const auto b = ransac_kabsch2(std::span<const PointMatch>(m), o);
  EXPECT_EQ(a.inliers, b.inliers);
  EXPECT_EQ(a.source, b.source);
  EXPECT_GE(a.inliers.size(), 40u);
}

TEST(SelectPose, PicksCandidateWithMostInliers) {
  std::mt19937_64 rng(51);
  const Affine2d g(1.0, 0.2, Eigen::Vector2d(5, -5));
  auto make = [&](int id, int inliers, int outliers, double sim) {
    Candidate c;
    c.template_id = id;
    c.similarity = sim;
    for (int i = 0; i < inliers + outliers; ++i) {
      const PatchIndex t{static_cast<int>(rng() % 16), static_cast<int>(rng() % 16)};
      const Eigen::Vector2d q = i < inliers ? g.apply(patch_center(t)) : Eigen::Vector2d(uniform(rng, 0, 224), uniform(rng, 0, 224));
      // Query patches snap to the grid; keep only points that land near a center.
      const PatchIndex qi{std::clamp(static_cast<int>(q.y() / 14), 0, 15), std::clamp(static_cast<int>(q.x() / 14), 0, 15)};
      c.correspondences.push_back({qi, t, 0.8});
      c.predictions.push_back({g.s, g.alpha});
    }
    c.meta.tz_mm = 600;
    c.meta.intrinsics = {600, 600, 320, 240};
    c.meta.center_px = {320, 240};
    return c;
  };
  std::vector<Candidate> cands{make(3, 5, 10, 0.9), make(8, 15, 0, 0.5), make(1, 5, 10, 0.8)};
  QueryMeta q;
  q.intrinsics = {600, 600, 320, 240};
  const auto est = select_pose(q, cands, EstimatorMode::kSingle);
  EXPECT_EQ(est.template_id, 8);

  std::vector<Candidate> single{cands[0]};
  EXPECT_EQ(select_pose(q, single, EstimatorMode::kSingle).template_id, 3);
  EXPECT_EQ(select_pose(q, single, EstimatorMode::kKabsch).template_id, 3);

  std::vector<Candidate> empty_corrs{Candidate{}, Candidate{}};
  empty_corrs[1].template_id = 4;
  try {
    select_pose(q, empty_corrs, EstimatorMode::kSingle);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kEstimationFailed);
    EXPECT_NE(std::string(e.what()).find("template 4"), std::string::npos);
  }
  EXPECT_THROW(select_pose(q, std::span<const Candidate>(), EstimatorMode::kSingle), Error);
}
