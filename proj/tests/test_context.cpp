#include "doctest.h"

#include <cmath>

#include "cmr/context.hpp"
#include "helpers.hpp"

using namespace cmr;

namespace {

Keypoints2D makeKp(int count) {
  Keypoints2D kp;
  kp.positions = PointSet2D::Zero(count, 2);
  kp.visible.assign(static_cast<std::size_t>(count), 0);
  return kp;
}

// Dense independent oracle: evaluate every Gaussian at every pixel, compose
// by max.
CenterMap denseOracle(const std::vector<Vec2>& centers, int H, int W, double sigma) {
  CenterMap m({H, W});
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      double best = 0;
      for (const Vec2& c : centers) {
        double d2 = (x - c.x()) * (x - c.x()) + (y - c.y()) * (y - c.y());
        best = std::max(best, std::exp(-d2 / (2 * sigma * sigma)));
      }
      m.at(y, x) = static_cast<float>(best);
    }
  return m;
}

}  // namespace

TEST_SUITE_BEGIN("context");

TEST_CASE("body center: torso centroid, fallback, empty") {
  Keypoints2D kp = makeKp(kNumJoints);
  // All six torso joints visible on a rectangle.
  double xs[6] = {10, 30, 10, 30, 10, 30};
  double ys[6] = {20, 20, 60, 60, 40, 40};
  for (int i = 0; i < 6; ++i) {
    int j = kTorsoJoints[static_cast<std::size_t>(i)];
    kp.positions.row(j) << xs[i], ys[i];
    kp.visible[static_cast<std::size_t>(j)] = 1;
  }
  auto c = computeBodyCenter(kp);
  REQUIRE(c.has_value());
  CHECK(c->x() == doctest::Approx(20));
  CHECK(c->y() == doctest::Approx(40));

  // Torso occluded: average of the visible joints.
  Keypoints2D kp2 = makeKp(kNumJoints);
  kp2.positions.row(18) << 10, 10;
  kp2.positions.row(20) << 30, 50;
  kp2.visible[18] = kp2.visible[20] = 1;
  auto c2 = computeBodyCenter(kp2);
  REQUIRE(c2.has_value());
  CHECK(c2->x() == doctest::Approx(20));
  CHECK(c2->y() == doctest::Approx(30));

  CHECK(!computeBodyCenter(makeKp(kNumJoints)).has_value());
}

TEST_CASE("centermap: peak, empty map, clipping") {
  CenterMap m = renderCentermap({Vec2(112, 112)}, 224, 224);
  CHECK(m.at(112, 112) == doctest::Approx(1.0));
  CHECK(m.at(112, 118) < 1.0);
  CHECK(m.at(112, 118) == doctest::Approx(std::exp(-36.0 / 72.0)).epsilon(1e-6));

  CenterMap empty = renderCentermap({}, 32, 32);
  CHECK(empty.maxAbs() == 0.f);

  // Off-image center contributes only its in-image tail.
  CenterMap clipped = renderCentermap({Vec2(-3, 10)}, 32, 32);
  CHECK(clipped.at(10, 0) > 0.5f);
  CHECK(clipped.at(10, 0) < 1.0f);
}

TEST_CASE("centermap matches the dense oracle and is permutation-invariant") {
  Rng rng(300);
  for (int trial = 0; trial < 5; ++trial) {
    std::vector<Vec2> centers;
    int n = 1 + static_cast<int>(rng.below(3));
    for (int i = 0; i < n; ++i) centers.push_back(Vec2(rng.uniform(0, 63), rng.uniform(0, 63)));
    CenterMap a = renderCentermap(centers, 64, 64);
    CenterMap oracle = denseOracle(centers, 64, 64, kDefaultCenterSigma);
    double maxDiff = 0;
    for (std::int64_t i = 0; i < a.size(); ++i) maxDiff = std::max(maxDiff, std::abs(double(a[i]) - double(oracle[i])));
    CHECK(maxDiff < 1e-6);

    std::reverse(centers.begin(), centers.end());
    CenterMap b = renderCentermap(centers, 64, 64);
    for (std::int64_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
  }
}

TEST_CASE("two centers 3px apart: max composition preserves the midpoint value") {
  std::vector<Vec2> centers = {Vec2(30, 30), Vec2(33, 30)};
  CenterMap m = renderCentermap(centers, 64, 64);
  CenterMap oracle = denseOracle(centers, 64, 64, kDefaultCenterSigma);
  for (std::int64_t i = 0; i < m.size(); ++i) CHECK(m[i] == doctest::Approx(oracle[i]).epsilon(1e-6));
}

TEST_CASE("extraction: single peak, sub-threshold, two-center recovery") {
  CenterMap one = renderCentermap({Vec2(40, 50)}, 96, 96);
  auto det = extractLocalCentermaps(one, 0.3);
  REQUIRE(det.size() == 1);
  CHECK((det[0].center - Vec2(40, 50)).norm() < 1e-9);
  CenterMap expect = renderCentermap({det[0].center}, 96, 96);
  for (std::int64_t i = 0; i < expect.size(); ++i) CHECK(std::abs(det[0].localMap[i] - expect[i]) < 1e-6);

  CenterMap low({32, 32});
  low.at(16, 16) = 0.25f;
  CHECK(extractLocalCentermaps(low, 0.3).empty());

  CenterMap two = renderCentermap({Vec2(30, 40), Vec2(50, 46)}, 96, 96);
  auto det2 = extractLocalCentermaps(two, 0.3);
  REQUIRE(det2.size() == 2);
}

TEST_CASE("extraction matches a brute-force peak-search oracle") {
  Rng rng(301);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<Vec2> centers;
    int n = 1 + static_cast<int>(rng.below(3));
    for (int i = 0; i < n; ++i) {
      Vec2 c;
      bool ok;
      do {
        c = Vec2(rng.uniform(8, 88), rng.uniform(8, 88));
        ok = true;
        for (const Vec2& prev : centers) ok = ok && (c - prev).norm() >= 6.0;
      } while (!ok);
      centers.push_back(c);
    }
    CenterMap m = renderCentermap(centers, 96, 96);
    auto det = extractLocalCentermaps(m, 0.3);

    // Oracle: exhaustive strict-local-maximum search over all pixels.
    std::vector<Vec2> oracle;
    for (int y = 0; y < 96; ++y)
      for (int x = 0; x < 96; ++x) {
        float v = m.at(y, x);
        if (v <= 0.3f) continue;
        bool peak = true;
        for (int dy = -2; dy <= 2 && peak; ++dy)
          for (int dx = -2; dx <= 2; ++dx) {
            if (dy == 0 && dx == 0) continue;
            int ny = y + dy, nx = x + dx;
            if (ny < 0 || ny >= 96 || nx < 0 || nx >= 96) continue;
            float nv = m.at(ny, nx);
            if (nv > v || (nv == v && (ny < y || (ny == y && nx < x)))) {
              peak = false;
              break;
            }
          }
        if (peak) oracle.push_back(Vec2(x, y));
      }
    CHECK(det.size() == oracle.size());
    CHECK(det.size() == centers.size());
    for (const Vec2& c : centers) {
      double best = 1e9;
      for (const auto& d : det) best = std::min(best, (d.center - c).norm());
      CHECK(best <= 1.0);
    }
  }
}

TEST_CASE("round-trip property: centers >= 4px apart recovered within 1px") {
  Rng rng(302);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<Vec2> centers;
    int n = 1 + static_cast<int>(rng.below(4));
    int guard = 0;
    while (static_cast<int>(centers.size()) < n && guard++ < 200) {
      Vec2 c(rng.uniform(6, 218), rng.uniform(6, 218));
      bool ok = true;
      for (const Vec2& prev : centers) ok = ok && (c - prev).norm() >= 4.0;
      if (ok) centers.push_back(c);
    }
    CenterMap m = renderCentermap(centers, 224, 224);
    auto det = extractLocalCentermaps(m, 0.3);
    REQUIRE(det.size() == centers.size());
    for (const Vec2& c : centers) {
      double best = 1e9;
      for (const auto& d : det) best = std::min(best, (d.center - c).norm());
      CHECK(best <= 1.0);
    }
  }
}

TEST_CASE("instance context stacks global then local") {
  CenterMap g({4, 4}), l({4, 4});
  g.at(1, 2) = 0.5f;
  l.at(3, 0) = 0.25f;
  InstanceContext ctx = makeInstanceContext(g, l);
  CHECK(ctx.shape() == std::vector<int>{2, 4, 4});
  CHECK(ctx.at(0, 1, 2) == 0.5f);
  CHECK(ctx.at(1, 3, 0) == 0.25f);
  CHECK(ctx.at(1, 1, 2) == 0.f);

  InstanceContext zeros = makeInstanceContext(CenterMap({4, 4}), CenterMap({4, 4}));
  CHECK(zeros.maxAbs() == 0.f);
  InstanceContext same = makeInstanceContext(g, g);
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 4; ++x) CHECK(same.at(0, y, x) == same.at(1, y, x));
}

TEST_CASE("keypoint heatmaps: per-channel Gaussians, invisible -> zero") {
  Keypoints2D kp = makeKp(kNumKeypoints17);
  kp.positions.row(0) << 20, 24;
  kp.visible[0] = 1;
  TensorF maps = renderKeypointHeatmaps(kp, 48, 48);
  CHECK(maps.shape() == std::vector<int>{17, 48, 48});
  CHECK(maps.at(0, 24, 20) == doctest::Approx(1.0));
  for (int k = 1; k < 17; ++k)
    for (int i = 0; i < 48 * 48; ++i) CHECK(maps[k * 48 * 48 + i] == 0.f);

  TensorF none = renderKeypointHeatmaps(makeKp(kNumKeypoints17), 48, 48);
  CHECK(none.maxAbs() == 0.f);
}

TEST_CASE("keypoint heatmaps match dense per-pixel oracle") {
  Rng rng(303);
  Keypoints2D kp = makeKp(kNumKeypoints17);
  for (int k = 0; k < 17; ++k) {
    kp.positions.row(k) << rng.uniform(0, 47), rng.uniform(0, 47);
    kp.visible[static_cast<std::size_t>(k)] = rng.uniform() < 0.7 ? 1 : 0;
  }
  TensorF maps = renderKeypointHeatmaps(kp, 48, 48, 4.0);
  for (int k = 0; k < 17; ++k)
    for (int y = 0; y < 48; ++y)
      for (int x = 0; x < 48; ++x) {
        double expect = 0;
        if (kp.visible[static_cast<std::size_t>(k)]) {
          double d2 = (x - kp.positions(k, 0)) * (x - kp.positions(k, 0)) +
                      (y - kp.positions(k, 1)) * (y - kp.positions(k, 1));
          expect = std::exp(-d2 / 32.0);
        }
        CHECK(maps.at(k, y, x) == doctest::Approx(expect).epsilon(1e-5));
      }
}

TEST_CASE("context loss: zero, constant offset, summation oracle") {
  CenterMap a({8, 8}), b({8, 8});
  CHECK(lossContext(a, a) == 0.0);
  for (std::int64_t i = 0; i < b.size(); ++i) b[i] = 0.1f;
  CHECK(lossContext(b, a) == doctest::Approx(0.01).epsilon(1e-5));

  Rng rng(304);
  CenterMap x({8, 8}), y({8, 8});
  for (std::int64_t i = 0; i < x.size(); ++i) {
    x[i] = static_cast<float>(rng.uniform());
    y[i] = static_cast<float>(rng.uniform());
  }
  double oracle = 0;
  for (std::int64_t i = 0; i < x.size(); ++i) oracle += (double(x[i]) - double(y[i])) * (double(x[i]) - double(y[i]));
  oracle /= static_cast<double>(x.size());
  CHECK(lossContext(x, y) == doctest::Approx(oracle).epsilon(1e-9));
  CHECK(lossContext(x, y) >= 0.0);
}

TEST_CASE("context estimator outputs a [0,1] map of the right shape") {
  ContextEstimator<float> f;
  f.init(Rng(42), 4);
  TensorF image({3, 64, 64});
  Rng rng(305);
  for (std::int64_t i = 0; i < image.size(); ++i) image[i] = static_cast<float>(rng.uniform());
  CenterMap out = estimateContext(f, image);
  CHECK(out.shape() == std::vector<int>{64, 64});
  for (std::int64_t i = 0; i < out.size(); ++i) {
    CHECK(out[i] >= 0.f);
    CHECK(out[i] <= 1.f);
  }
}

TEST_SUITE_END();
