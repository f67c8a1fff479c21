#include "doctest.h"

#include "cmr/fields.hpp"
#include "helpers.hpp"
#include "mesh_fixtures.hpp"

using namespace cmr;
using test::finiteDiff;
using test::gradRelError;

TEST_SUITE_BEGIN("fields");

TEST_CASE("sdf: icosphere matches the analytic sphere field") {
  Mesh sphere = test::makeIcosphere(3);
  SDFGrid grid = buildSdf(sphere, 32);
  double tol = 1.5 * grid.spacing;

  CHECK(std::abs(sampleSdfAt(grid, Vec3::Zero()) - 1.0) < tol);

  Rng rng(400);
  for (int i = 0; i < 1000; ++i) {
    Vec3 p(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1));
    if (p.norm() > 0.97) continue;  // stay inside the inscribed mesh
    CHECK(std::abs(sampleSdfAt(grid, p) - test::sphereOmega(p, Vec3::Zero(), 1.0)) < tol);
  }
  // Exterior: exactly zero.
  for (int i = 0; i < 200; ++i) {
    Vec3 p = Vec3(rng.gaussian(), rng.gaussian(), rng.gaussian()).normalized() * rng.uniform(1.12, 3.0);
    CHECK(sampleSdfAt(grid, p) == 0.0);
  }
}

TEST_CASE("sdf: unit cube center value is 0.5") {
  Mesh cube = test::makeBoxMesh(Vec3::Zero(), Vec3::Ones(), 4);
  SDFGrid grid = buildSdf(cube, 32);
  double tol = 1.5 * grid.spacing;
  CHECK(std::abs(sampleSdfAt(grid, Vec3(0.5, 0.5, 0.5)) - 0.5) < tol);

  Rng rng(401);
  for (int i = 0; i < 1000; ++i) {
    Vec3 p(rng.uniform(0.03, 0.97), rng.uniform(0.03, 0.97), rng.uniform(0.03, 0.97));
    CHECK(std::abs(sampleSdfAt(grid, p) - test::boxOmega(p, Vec3::Zero(), Vec3::Ones())) < tol);
  }
  CHECK(sampleSdfAt(grid, Vec3(5, 5, 5)) == 0.0);
  CHECK(sampleSdfAt(grid, Vec3(-0.5, 0.5, 0.5)) == 0.0);
}

TEST_CASE("sdf: non-watertight mesh raises TopologyError") {
  Mesh sphere = test::makeIcosphere(1);
  sphere.faces.conservativeResize(sphere.faces.rows() - 1, 3);
  CHECK_THROWS_AS(buildSdf(sphere, 16), TopologyError);
}

TEST_CASE("sdf: resolution precondition") {
  Mesh cube = test::makeBoxMesh(Vec3::Zero(), Vec3::Ones(), 2);
  CHECK_THROWS_AS(buildSdf(cube, 4), ConfigError);
}

TEST_CASE("sample: node-exact, axis midpoint mean, out-of-grid zero") {
  SDFGrid grid;
  grid.origin = Vec3(0, 0, 0);
  grid.spacing = 1.0;
  grid.dims = {3, 3, 3};
  grid.values.assign(27, 0.0);
  grid.at(1, 1, 1) = 2.0;
  grid.at(2, 1, 1) = 4.0;

  CHECK(sampleSdfAt(grid, Vec3(1, 1, 1)) == 2.0);
  CHECK(sampleSdfAt(grid, Vec3(2, 1, 1)) == 4.0);
  CHECK(sampleSdfAt(grid, Vec3(1.5, 1, 1)) == doctest::Approx(3.0));
  CHECK(sampleSdfAt(grid, Vec3(9, 1, 1)) == 0.0);
  CHECK(sampleSdfAt(grid, Vec3(-0.1, 1, 1)) == 0.0);
}

TEST_CASE("sample gradient matches finite differences away from voxel boundaries") {
  Mesh sphere = test::makeIcosphere(2);
  SDFGrid grid = buildSdf(sphere, 24);
  Rng rng(402);
  int checked = 0;
  for (int trial = 0; trial < 200 && checked < 40; ++trial) {
    Vec3 p(rng.uniform(-0.7, 0.7), rng.uniform(-0.7, 0.7), rng.uniform(-0.7, 0.7));
    // Keep clear of cell boundaries so central differences stay one-sided-free.
    bool interior = true;
    for (int a = 0; a < 3; ++a) {
      double u = (p[a] - grid.origin[a]) / grid.spacing;
      double fr = u - std::floor(u);
      interior = interior && fr > 0.15 && fr < 0.85;
    }
    if (!interior) continue;
    ++checked;

    auto eval = [&](const Eigen::VectorXd& x) {
      double q[3] = {x[0], x[1], x[2]};
      return kernels::sampleSdfKernel<double>(grid, q, nullptr);
    };
    double q[3] = {p.x(), p.y(), p.z()};
    double grad[3];
    kernels::sampleSdfKernel<double>(grid, q, grad);
    Eigen::VectorXd analytic = Eigen::Map<Eigen::VectorXd>(grad, 3);
    Eigen::VectorXd x = p;
    CHECK(gradRelError(analytic, finiteDiff(eval, x, 1e-5)) < 1e-3);
  }
  CHECK(checked >= 20);
}

TEST_CASE("rasterize: one large front square covers the image") {
  std::vector<Mesh> meshes = {test::makeSquare(0, 0, 2.0, 1.5)};
  RasterConfig cfg;
  cfg.height = cfg.width = 32;
  DepthRender r = rasterize(meshes, WeakPerspectiveCamera{}, cfg);
  for (int y = 4; y < 28; ++y)
    for (int x = 4; x < 28; ++x) {
      CHECK(r.softVisibility[0].at(y, x) > 0.99);
      CHECK(r.depth[0].at(y, x) == doctest::Approx(1.5).epsilon(1e-6));
    }
}

TEST_CASE("rasterize: nearer instance wins everywhere in the overlap") {
  std::vector<Mesh> meshes = {test::makeSquare(-0.2, 0, 0.5, 1.0), test::makeSquare(0.2, 0, 0.5, 2.0)};
  RasterConfig cfg;
  cfg.height = cfg.width = 48;
  DepthRender r = rasterize(meshes, WeakPerspectiveCamera{}, cfg);
  bool sawOverlap = false;
  for (int y = 0; y < 48; ++y)
    for (int x = 0; x < 48; ++x) {
      bool inA = std::isfinite(r.depth[0].at(y, x)), inB = std::isfinite(r.depth[1].at(y, x));
      if (inA && inB && r.softVisibility[0].at(y, x) > 0.05 && r.softVisibility[1].at(y, x) > 1e-6) {
        sawOverlap = true;
        CHECK(r.softVisibility[0].at(y, x) > r.softVisibility[1].at(y, x));
      }
    }
  CHECK(sawOverlap);
}

TEST_CASE("rasterize: per-pixel visibility sums stay below one") {
  std::vector<Mesh> meshes = {test::makeSquare(-0.1, 0.1, 0.4, 1.2), test::makeSquare(0.15, -0.05, 0.35, 0.8)};
  RasterConfig cfg;
  cfg.height = cfg.width = 40;
  DepthRender r = rasterize(meshes, WeakPerspectiveCamera{}, cfg);
  for (int y = 0; y < 40; ++y)
    for (int x = 0; x < 40; ++x)
      CHECK(r.softVisibility[0].at(y, x) + r.softVisibility[1].at(y, x) <= 1.0 + 1e-6);
}

TEST_CASE("rasterize hard limit matches the point-in-triangle z-test oracle") {
  Rng rng(403);
  for (int trial = 0; trial < 5; ++trial) {
    // Two random triangles as two instances.
    auto randTri = [&](double zlo, double zhi) {
      Mesh m;
      m.vertices.resize(3, 3);
      for (int v = 0; v < 3; ++v)
        m.vertices.row(v) << rng.uniform(-0.8, 0.8), rng.uniform(-0.8, 0.8), rng.uniform(zlo, zhi);
      m.faces.resize(1, 3);
      m.faces << 0, 1, 2;
      return m;
    };
    std::vector<Mesh> meshes = {randTri(0.5, 1.0), randTri(1.2, 1.8)};
    RasterConfig cfg;
    cfg.height = cfg.width = 64;
    cfg.sharpness = 1e4;
    DepthRender r = rasterize(meshes, WeakPerspectiveCamera{}, cfg);

    int agree = 0, total = 64 * 64;
    for (int y = 0; y < 64; ++y)
      for (int x = 0; x < 64; ++x) {
        double px = 2.0 * (x + 0.5) / 64 - 1.0;
        double py = 1.0 - 2.0 * (y + 0.5) / 64;
        // Oracle: inside test + z-test.
        int winner = -1;
        double bestZ = std::numeric_limits<double>::infinity();
        for (int i = 0; i < 2; ++i) {
          const Mesh& m = meshes[static_cast<std::size_t>(i)];
          Vec3 a = m.vertices.row(0).transpose(), b = m.vertices.row(1).transpose(), c = m.vertices.row(2).transpose();
          double A2 = (b.x() - a.x()) * (c.y() - a.y()) - (b.y() - a.y()) * (c.x() - a.x());
          if (std::abs(A2) < 1e-12) continue;
          double na = (b.x() - px) * (c.y() - py) - (b.y() - py) * (c.x() - px);
          double nb = (c.x() - px) * (a.y() - py) - (c.y() - py) * (a.x() - px);
          double nc = A2 - na - nb;
          bool inside = (A2 > 0) ? (na >= 0 && nb >= 0 && nc >= 0) : (na <= 0 && nb <= 0 && nc <= 0);
          if (!inside) continue;
          double z = (na * a.z() + nb * b.z() + nc * c.z()) / A2;
          if (z < bestZ) {
            bestZ = z;
            winner = i;
          }
        }
        int soft = -1;
        double bestVis = 0.5;  // hard limit: winner visibility ~1
        for (int i = 0; i < 2; ++i)
          if (r.softVisibility[static_cast<std::size_t>(i)].at(y, x) > bestVis) {
            bestVis = r.softVisibility[static_cast<std::size_t>(i)].at(y, x);
            soft = i;
          }
        if (winner == soft) ++agree;
      }
    CHECK(static_cast<double>(agree) / total >= 0.99);
  }
}

TEST_CASE("rasterize: integer-pixel translation shifts visibility") {
  std::vector<Mesh> meshes = {test::makeSquare(-0.3, 0.1, 0.3, 1.0)};
  RasterConfig cfg;
  cfg.height = cfg.width = 32;
  DepthRender base = rasterize(meshes, WeakPerspectiveCamera{}, cfg);

  const int shift = 4;  // pixels
  double dx = shift * 2.0 / 32;
  meshes[0].vertices.col(0).array() += dx;
  DepthRender moved = rasterize(meshes, WeakPerspectiveCamera{}, cfg);
  for (int y = 0; y < 32; ++y)
    for (int x = 0; x < 32 - shift; ++x)
      CHECK(moved.softVisibility[0].at(y, x + shift) ==
            doctest::Approx(base.softVisibility[0].at(y, x)).epsilon(1e-5));
}

TEST_CASE("rasterize: decreasing depth never decreases visibility") {
  std::vector<Mesh> meshes = {test::makeSquare(-0.15, 0, 0.4, 1.5), test::makeSquare(0.15, 0, 0.4, 1.2)};
  RasterConfig cfg;
  cfg.height = cfg.width = 32;
  DepthRender before = rasterize(meshes, WeakPerspectiveCamera{}, cfg);
  meshes[0].vertices.col(2).array() -= 0.6;  // move instance 0 nearer
  DepthRender after = rasterize(meshes, WeakPerspectiveCamera{}, cfg);
  for (int y = 0; y < 32; ++y)
    for (int x = 0; x < 32; ++x)
      CHECK(after.softVisibility[0].at(y, x) >= before.softVisibility[0].at(y, x) - 1e-9);
}

TEST_CASE("rasterize: degenerate triangles are skipped and counted") {
  Mesh bad;
  bad.vertices.resize(4, 3);
  bad.vertices << -0.5, -0.5, 1, 0.5, -0.5, 1, 0.5, 0.5, 1, 0.4, 0.4, 1;
  bad.faces.resize(2, 3);
  bad.faces << 0, 1, 2, 3, 3, 3;  // second face has zero area
  RasterConfig cfg;
  cfg.height = cfg.width = 16;
  DepthRender r = rasterize({bad}, WeakPerspectiveCamera{}, cfg);
  CHECK(r.degenerateTriangles == 1);
}

TEST_SUITE_END();
