#include <gtest/gtest.h>

#include "gpose/losses.hpp"
#include "test_support.hpp"

using namespace gpose;
using namespace testing_support;
using std::numbers::pi;

namespace {

InfoNceInput random_input(std::mt19937_64& rng, int pairs, int cells, int dim, int positives) {
  std::normal_distribution<double> n;
  InfoNceInput in;
  for (int k = 0; k < pairs; ++k) {
    Eigen::MatrixXd q(cells, dim), t(cells, dim);
    for (int i = 0; i < q.size(); ++i) q.data()[i] = n(rng);
    for (int i = 0; i < t.size(); ++i) t.data()[i] = n(rng);
    in.query.push_back(q);
    in.templ.push_back(t);
    std::vector<std::pair<int, int>> pos;
    for (int p = 0; p < positives; ++p)
      pos.emplace_back(static_cast<int>(rng() % static_cast<unsigned>(cells)), static_cast<int>(rng() % static_cast<unsigned>(cells)));
    in.positives.push_back(pos);
  }
  in.temperature = 0.5;
  return in;
}

// ||analytic - numeric|| / ||numeric|| over every descriptor entry.
double infonce_gradient_error(InfoNceInput in, InfoNceMode mode) {
  const InfoNceResult res = infonce_loss(in, mode);
  const double h = 1e-4;
  double diff = 0, ref = 0;
  auto visit = [&](std::vector<Eigen::MatrixXd>& grids, const std::vector<Eigen::MatrixXd>& grads) {
    for (std::size_t k = 0; k < grids.size(); ++k)
      for (int i = 0; i < grids[k].size(); ++i) {
        double& x = grids[k].data()[i];
        const double x0 = x;
        x = x0 + h;
        const double up = infonce_loss(in, mode).value;
        x = x0 - h;
        const double down = infonce_loss(in, mode).value;
        x = x0;
        const double num = (up - down) / (2 * h);
        diff += std::pow(grads[k].data()[i] - num, 2);
        ref += num * num;
      }
  };
  visit(in.query, res.grad_query);
  visit(in.templ, res.grad_templ);
  return std::sqrt(diff / ref);
}

ContrastivePair orthogonal_pair() {
  ContrastivePair p{FeatureGrid(1, 2, 2), FeatureGrid(1, 2, 2), {{0, 0}, {1, 1}}};
  const std::vector<double> e1{1, 0}, e2{0, 1};
  p.query.set_descriptor(0, e1);
  p.query.set_descriptor(1, e2);
  p.templ.set_descriptor(0, e1);
  p.templ.set_descriptor(1, e2);
  return p;
}

}  // namespace

TEST(InfoNce, ClosedFormTwoPatches) {
  ContrastiveBatch batch;
  batch.pairs.push_back(orthogonal_pair());
  batch.temperature = 0.1;
  const double term = -std::log(std::exp(10.0) / (std::exp(10.0) + 1.0));
  const auto res = infonce_loss(batch);
  EXPECT_NEAR(res.value, 2 * term, 1e-12);
  EXPECT_NEAR(res.value, 9.08e-5, 1e-6);
}

TEST(InfoNce, UniformLogitsGiveLogN) {
  InfoNceInput in;
  in.temperature = 0.1;
  for (int k = 0; k < 3; ++k) {
    in.query.push_back(Eigen::MatrixXd::Ones(4, 3));
    in.templ.push_back(Eigen::MatrixXd::Ones(4, 3));
    in.positives.push_back({{0, 1}, {2, 3}});
  }
  const int n = 6;
  EXPECT_NEAR(infonce_loss(in).value, n * std::log(n), 1e-9);
  EXPECT_NEAR(infonce_loss(in, InfoNceMode::kStrict).value, n * std::log(n - 1), 1e-9);
}

TEST(InfoNce, GradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(60);
  for (int trial = 0; trial < 5; ++trial) {
    const InfoNceInput in = random_input(rng, 2, 4, 5, 2);
    EXPECT_LT(infonce_gradient_error(in, InfoNceMode::kStandard), 1e-4);
    EXPECT_LT(infonce_gradient_error(in, InfoNceMode::kStrict), 1e-4);
  }
}

TEST(InfoNce, NonNegativeAndStrictCanGoNegative) {
  std::mt19937_64 rng(61);
  for (int trial = 0; trial < 100; ++trial) EXPECT_GE(infonce_loss(random_input(rng, 2, 3, 4, 2)).value, 0.0);
  // Perfect separation: the strict form is unbounded below.
  ContrastiveBatch batch;
  batch.pairs.push_back(orthogonal_pair());
  EXPECT_LT(infonce_loss(batch, InfoNceMode::kStrict).value, 0.0);
}

TEST(InfoNce, DecreasesWhenPositiveSimilarityRises) {
  InfoNceInput in;
  in.temperature = 0.1;
  Eigen::MatrixXd q(2, 2), t(2, 2);
  q << 1, 1, 0, 1;
  t << 1, 0, 0, 1;
  in.query.push_back(q);
  in.templ.push_back(t);
  in.positives.push_back({{0, 0}, {1, 1}});
  double prev = infonce_loss(in).value;
  for (int step = 0; step < 10; ++step) {
    in.query[0](0, 1) *= 0.7;  // query 0 turns toward template 0; its cosine to template 1 falls too
    const double v = infonce_loss(in).value;
    EXPECT_LT(v, prev);
    prev = v;
  }
}

TEST(InfoNce, Errors) {
  ContrastiveBatch one;
  one.pairs.push_back(orthogonal_pair());
  one.pairs[0].positives.resize(1);
  try {
    infonce_loss(one);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kDegenerateBatch);
  }
  ContrastiveBatch unmasked;
  unmasked.pairs.push_back(orthogonal_pair());
  unmasked.pairs[0].templ.clear_cell(1);
  EXPECT_THROW(infonce_loss(unmasked), Error);
  ContrastiveBatch cold;
  cold.pairs.push_back(orthogonal_pair());
  cold.temperature = 0;
  EXPECT_THROW(infonce_loss(cold), Error);
  ContrastiveBatch none;
  none.pairs.push_back(orthogonal_pair());
  none.pairs.push_back(orthogonal_pair());
  none.pairs[1].positives.clear();
  EXPECT_THROW(infonce_loss(none), Error);
}

TEST(InfoNce, GridBatchMatchesMatrixInput) {
  std::mt19937_64 rng(62);
  ContrastiveBatch batch;
  InfoNceInput in;
  in.temperature = batch.temperature;
  for (int k = 0; k < 2; ++k) {
    const FeatureGrid q = random_grid(rng, 3, 3, 8, 1.0, false);
    const FeatureGrid t = random_grid(rng, 3, 3, 8, 1.0, false);
    std::vector<std::pair<int, int>> pos{{0, 4}, {5, 2}};
    batch.pairs.push_back({q, t, pos});
    in.query.push_back(q.data().cast<double>());
    in.templ.push_back(t.data().cast<double>());
    in.positives.push_back(pos);
  }
  EXPECT_DOUBLE_EQ(infonce_loss(batch).value, infonce_loss(in).value);
}

TEST(Geodesic, Identities) {
  for (double a : {-3.0, -1.0, 0.0, 0.5, 2.0, 3.1}) EXPECT_NEAR(geodesic(a, a), 0.0, 4.5e-4);
  EXPECT_NEAR(geodesic(0, pi), pi, 4.5e-4);
  EXPECT_NEAR(geodesic(0, pi / 2), pi / 2, 1e-12);
  EXPECT_NEAR(geodesic(0.3, 0.3 + 2 * pi), 0.0, 4.5e-4);
  EXPECT_NEAR(geodesic(1.0, -1.0 + 4 * pi), 2.0, 1e-9);
}

TEST(Geodesic, SymmetryAndTriangleInequality) {
  std::mt19937_64 rng(63);
  for (int i = 0; i < 10000; ++i) {
    const double a = uniform(rng, -10, 10), b = uniform(rng, -10, 10), c = uniform(rng, -10, 10);
    EXPECT_EQ(geodesic(a, b), geodesic(b, a));
    EXPECT_LE(geodesic(a, c), geodesic(a, b) + geodesic(b, c) + 1e-6);
    const double g = geodesic(a, b);
    EXPECT_GE(g, 0.0);
    EXPECT_LE(g, pi);
  }
}

TEST(ScaleInplaneLoss, Examples) {
  const std::vector<double> s{2.0, 0.5}, a{0.4, -1.2};
  const auto exact = scale_inplane_loss(std::span<const double>(s.data(), 1), std::span<const double>(a.data(), 1), 2.0, 0.4);
  EXPECT_NEAR(exact.value, 0.0, 4.5e-4);
  const std::vector<double> se{std::exp(1.0) * 3.0}, ae{0.7};
  EXPECT_NEAR(scale_inplane_loss(se, ae, 3.0, 0.7).value, 1.0, 4.5e-4);
  // Swapping prediction and ground truth scale leaves the log term unchanged.
  const std::vector<double> s1{1.7}, s2{0.6}, zero{0.0};
  EXPECT_NEAR(scale_inplane_loss(s1, zero, 0.6, 0).value, scale_inplane_loss(s2, zero, 1.7, 0).value, 1e-12);
  const std::vector<double> bad{-1.0};
  try {
    scale_inplane_loss(bad, zero, 1.0, 0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kInvalidArgument);
  }
  EXPECT_THROW(scale_inplane_loss(s, zero, 1.0, 0), Error);
  EXPECT_THROW(scale_inplane_loss(s1, zero, 0.0, 0), Error);
}

TEST(ScaleInplaneLoss, GradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(64);
  const double h = 1e-4;
  int checked = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const int n = 4;
    std::vector<double> ls(n), c(n), s(n);
    const double s_star = std::exp(uniform(rng, -1, 1)), a_star = uniform(rng, -pi, pi);
    bool singular = false;
    for (int i = 0; i < n; ++i) {
      ls[i] = uniform(rng, -1.5, 1.5);
      const double a = uniform(rng, -pi, pi), r = uniform(rng, 0.5, 0.9);
      c[i] = r * std::cos(a);
      s[i] = r * std::sin(a);
      const double x = c[i] * std::cos(a_star) + s[i] * std::sin(a_star);
      if (std::acos(std::clamp(x, -1.0, 1.0)) < 0.01 || std::acos(std::clamp(x, -1.0, 1.0)) > pi - 0.01) singular = true;
    }
    if (singular) continue;
    const auto res = scale_inplane_loss_raw(ls, c, s, s_star, a_star);
    auto value = [&] { return scale_inplane_loss_raw(ls, c, s, s_star, a_star).value; };
    auto check = [&](std::vector<double>& v, const std::vector<double>& grad) {
      for (int i = 0; i < n; ++i) {
        const double x0 = v[static_cast<std::size_t>(i)];
        v[static_cast<std::size_t>(i)] = x0 + h;
        const double up = value();
        v[static_cast<std::size_t>(i)] = x0 - h;
        const double down = value();
        v[static_cast<std::size_t>(i)] = x0;
        const double num = (up - down) / (2 * h);
        EXPECT_LT(std::abs(grad[static_cast<std::size_t>(i)] - num), 1e-4 * std::max(1.0, std::abs(num)));
      }
    };
    check(ls, res.d_log_scale);
    check(c, res.d_cos);
    check(s, res.d_sin);
    ++checked;
  }
  EXPECT_GT(checked, 100);
}
