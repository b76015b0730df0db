#include <gtest/gtest.h>

#include <cstring>
#include <sstream>

#include "gpose/featuregrid.hpp"
#include "gpose/synthetic.hpp"
#include "test_support.hpp"

using namespace gpose;
using namespace testing_support;
using std::numbers::pi;

TEST(PatchCenter, Formula) {
  EXPECT_EQ(patch_center({0, 0}), Eigen::Vector2d(7, 7));
  EXPECT_EQ(patch_center({15, 15}), Eigen::Vector2d(217, 217));
  EXPECT_EQ(patch_center({7, 3}), Eigen::Vector2d(49, 105));
  EXPECT_THROW(patch_center({16, 0}), Error);
  EXPECT_THROW(patch_center({0, -1}), Error);
}

TEST(PatchGeometry, Validation) {
  EXPECT_NO_THROW(PatchGeometry{}.validate());
  EXPECT_THROW((PatchGeometry{14, 16, 200}.validate()), Error);
}

TEST(CropTransform, Examples) {
  const auto id = crop_transform(0, 0, 224, 224, 0.0);
  EXPECT_NEAR(id.affine.s, 1, 1e-15);
  EXPECT_LT(id.affine.t.norm(), 1e-12);
  EXPECT_EQ(id.affine.alpha, 0);

  const auto two = crop_transform(0, 0, 112, 112, 0.0);
  EXPECT_NEAR(two.affine.s, 2, 1e-15);
  EXPECT_LT(two.affine.t.norm(), 1e-12);

  const auto padded = crop_transform(100, 100, 200, 150, 0.1);
  EXPECT_NEAR(padded.affine.s, 224.0 / 110.0, 1e-12);
  EXPECT_LT((padded.affine.apply({150, 125}) - Eigen::Vector2d(112, 112)).norm(), 1e-9);

  EXPECT_THROW(crop_transform(10, 10, 10, 20), Error);
  EXPECT_THROW(crop_transform(10, 10, 20, 5), Error);
}

TEST(CropTransform, CenterAndInverseOnRandomBoxes) {
  std::mt19937_64 rng(10);
  for (int i = 0; i < 1000; ++i) {
    const double x0 = uniform(rng, -100, 600), y0 = uniform(rng, -100, 400);
    const double x1 = x0 + uniform(rng, 1, 300), y1 = y0 + uniform(rng, 1, 300);
    const auto c = crop_transform(x0, y0, x1, y1, uniform(rng, 0, 0.5));
    const Eigen::Vector2d center(0.5 * (x0 + x1), 0.5 * (y0 + y1));
    EXPECT_LT((c.affine.apply(center) - Eigen::Vector2d(112, 112)).norm(), 1e-9);
    EXPECT_LT((c.affine.inverse().apply(c.affine.apply(center)) - center).norm(), 1e-9);
  }
}

TEST(Cosine, Cases) {
  const Eigen::Vector3d v(1, 2, 3);
  EXPECT_NEAR(cosine_similarity(v, v), 1.0, 1e-15);
  EXPECT_NEAR(cosine_similarity(Eigen::Vector3d::UnitX(), Eigen::Vector3d::UnitY()), 0.0, 1e-15);
  EXPECT_NEAR(cosine_similarity(v, (-v).eval()), -1.0, 1e-15);
  EXPECT_THROW(cosine_similarity(v, Eigen::Vector3d::Zero().eval()), Error);
}

TEST(FeatureGrid, NormalizesAndClears) {
  FeatureGrid g(2, 2, 3);
  const std::vector<double> v{3, 4, 0};
  g.set_descriptor(1, std::span<const double>(v));
  EXPECT_TRUE(g.masked(1));
  EXPECT_NEAR(g.data().row(1).norm(), 1.0, 1e-7);
  EXPECT_FLOAT_EQ(g.data()(1, 0), 0.6f);
  EXPECT_EQ(g.masked_count(), 1);
  g.clear_cell(1);
  EXPECT_FALSE(g.masked(1));
  EXPECT_EQ(g.data().row(1).norm(), 0.0f);
  EXPECT_NO_THROW(g.validate());
}

TEST(Gpfg, RoundTripIsBitExact) {
  std::mt19937_64 rng(11);
  for (bool variant : {false, true}) {
    const FeatureGrid g = random_grid(rng, 16, 16, 37, 0.6, variant);
    std::stringstream ss;
    write_grid(g, ss);
    const std::string bytes = ss.str();
    EXPECT_EQ(bytes.size(), 4u + 2 + 2 + 2 + 4 + 4 + 256 + 256u * 37 * 4);
    std::istringstream is(bytes);
    const FeatureGrid back = read_grid(is);
    EXPECT_TRUE(back == g);
    EXPECT_EQ(back.variant(), variant);
    std::stringstream again;
    write_grid(back, again);
    EXPECT_EQ(again.str(), bytes);
  }
}

TEST(Gpfg, HeaderLayout) {
  FeatureGrid g(2, 3, 4, true);
  const std::vector<double> v{1, 0, 0, 0};
  g.set_descriptor(4, std::span<const double>(v));
  std::stringstream ss;
  write_grid(g, ss);
  const std::string b = ss.str();
  EXPECT_EQ(b.substr(0, 4), "GPFG");
  auto u16 = [&](std::size_t o) { return static_cast<unsigned>(static_cast<unsigned char>(b[o])) | static_cast<unsigned>(static_cast<unsigned char>(b[o + 1])) << 8; };
  EXPECT_EQ(u16(4), kGridFormatVersion);
  EXPECT_EQ(u16(6), 2u);
  EXPECT_EQ(u16(8), 3u);
  EXPECT_EQ(u16(10), 4u);
  EXPECT_EQ(static_cast<unsigned char>(b[14]), 1u);  // variant flag
  EXPECT_EQ(static_cast<unsigned char>(b[18 + 4]), 1u);  // mask of cell 4
  EXPECT_EQ(static_cast<unsigned char>(b[18 + 3]), 0u);
}

TEST(Gpfg, Errors) {
  std::mt19937_64 rng(12);
  const FeatureGrid g = random_grid(rng, 4, 4, 8);
  std::stringstream ss;
  write_grid(g, ss);
  const std::string bytes = ss.str();

  {
    std::istringstream is(bytes.substr(0, bytes.size() - 3));
    try {
      read_grid(is);
      FAIL();
    } catch (const FormatError& e) {
      EXPECT_EQ(e.code(), ErrorCode::kTruncated);
      EXPECT_GT(e.offset(), 18u);
    }
  }
  {
    std::string bad = bytes;
    bad[0] = 'X';
    std::istringstream is(bad);
    try {
      read_grid(is);
      FAIL();
    } catch (const FormatError& e) {
      EXPECT_EQ(e.code(), ErrorCode::kFormat);
      EXPECT_EQ(e.offset(), 0u);
      EXPECT_NE(std::string(e.what()).find("offset 0"), std::string::npos);
    }
  }
  {
    std::string bad = bytes;
    bad[6] = 0;  // H = 0
    bad[7] = 0;
    std::istringstream is(bad);
    EXPECT_THROW(read_grid(is), FormatError);
  }
  {
    // Corrupt a masked descriptor so its norm drifts.
    std::string bad = bytes;
    int cell = 0;
    while (!g.masked(cell)) ++cell;
    const std::size_t at = 18 + 16 + static_cast<std::size_t>(cell) * 8 * 4;
    const float two = 2.0f;
    std::memcpy(&bad[at], &two, 4);
    std::istringstream is(bad);
    try {
      read_grid(is);
      FAIL();
    } catch (const FormatError& e) {
      EXPECT_EQ(e.offset(), at);
    }
  }
}

TEST(SynthFeatures, DeterministicAndUnitNorm) {
  const Rotation3d r = icosphere_viewpoints(2)[17].rotation;
  const FeatureGrid a = synth::synth_features(r, {}, 42, 64), b = synth::synth_features(r, {}, 42, 64);
  EXPECT_TRUE(a == b);
  EXPECT_GT(a.masked_count(), 100);
  EXPECT_NO_THROW(a.validate());
  EXPECT_THROW(synth::synth_features(r, {}, 42, 4), Error);
}

TEST(SynthFeatures, FarViewpointsDiffer) {
  const auto views = icosphere_viewpoints(2);
  // The first and last sorted vertices are roughly antipodal.
  const FeatureGrid a = synth::synth_features(views.front().rotation, {}, 42, 64);
  const FeatureGrid b = synth::synth_features(views.back().rotation, {}, 42, 64);
  double sum = 0;
  int n = 0;
  for (int c = 0; c < a.cells(); ++c) {
    if (!a.masked(c) || !b.masked(c)) continue;
    sum += a.data().row(c).dot(b.data().row(c));
    ++n;
  }
  ASSERT_GT(n, 0);
  EXPECT_LT(sum / n, 0.9);
}

namespace {

// Processed-pixel index map of a rotation by k quarter turns about the crop
// center: (row, col) -> new (row, col).
PatchIndex quarter_turn(PatchIndex p, int k, int side) {
  for (int i = 0; i < k; ++i) p = {p.col, side - 1 - p.row};
  return p;
}

}  // namespace

TEST(SynthFeatures, InvarianceUnderInplaneRotationAndScale) {
  // Views r_ae and R_alpha r_ae at a different distance, with the query crop
  // rotated by -alpha and rescaled, see the same surface points: the
  // invariant grids agree cell by cell.
  const synth::SyntheticObject object(42);
  const auto views = icosphere_viewpoints(2);
  std::mt19937_64 rng(13);
  for (int trial = 0; trial < 100; ++trial) {
    const auto& vp = views[rng() % views.size()];
    const auto base = synth::template_view(object, vp.rotation);
    const auto ref = synth::render(object, base.view);

    const double alpha = uniform(rng, -pi, pi);
    const double zoom = uniform(rng, 0.5, 2.0);  // original-image scale change
    synth::View v = base.view;
    v.rotation = compose_rotation(alpha, vp.rotation);
    v.px_per_mm = base.view.px_per_mm * zoom;
    // original' = c + zoom R_alpha (original - c); the crop undoes it.
    const Affine2d undo = Affine2d(1, 0, v.center_px) * Affine2d(1 / zoom, -alpha, Eigen::Vector2d::Zero()) *
                          Affine2d(1, 0, -v.center_px);
    v.crop = base.view.crop * undo;
    const auto moved = synth::render(object, v);
    ASSERT_EQ(moved.invariant.masked_count(), ref.invariant.masked_count());
    for (int c = 0; c < ref.invariant.cells(); ++c) {
      if (ref.invariant.masked(c)) {
        ASSERT_LT((moved.invariant.data().row(c) - ref.invariant.data().row(c)).norm(), 1e-5) << "trial " << trial;
      }
    }
  }
}

TEST(SynthFeatures, QuarterTurnsPermuteCells) {
  // Without compensation, a quarter-turn in-plane rotation permutes cells.
  const synth::SyntheticObject object(42);
  const auto vp = icosphere_viewpoints(2)[50];
  const auto base = synth::template_view(object, vp.rotation);
  const auto ref = synth::render(object, base.view);
  for (int k = 1; k <= 3; ++k) {
    synth::View v = base.view;
    v.rotation = compose_rotation(k * pi / 2, vp.rotation);
    const auto moved = synth::render(object, v);
    for (int c = 0; c < ref.invariant.cells(); ++c) {
      if (!ref.invariant.masked(c)) continue;
      const PatchIndex p = quarter_turn(ref.invariant.index_of(c), k, 16);
      ASSERT_TRUE(moved.invariant.masked(p));
      EXPECT_LT((moved.invariant.descriptor(p) - ref.invariant.data().row(c)).norm(), 1e-5);
    }
  }
}
