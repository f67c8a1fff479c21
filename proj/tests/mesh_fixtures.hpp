#pragma once

#include <array>
#include <cmath>
#include <map>
#include <tuple>
#include <vector>

#include "cmr/body_model.hpp"

namespace cmr::test {

// Icosphere: subdivided icosahedron with vertices pushed to the radius.
inline Mesh makeIcosphere(int subdiv, double radius = 1.0, const Vec3& center = Vec3::Zero()) {
  const double phi = (1.0 + std::sqrt(5.0)) / 2.0;
  std::vector<Vec3> verts = {{-1, phi, 0}, {1, phi, 0},   {-1, -phi, 0}, {1, -phi, 0},
                             {0, -1, phi}, {0, 1, phi},   {0, -1, -phi}, {0, 1, -phi},
                             {phi, 0, -1}, {phi, 0, 1},   {-phi, 0, -1}, {-phi, 0, 1}};
  for (Vec3& v : verts) v.normalize();
  std::vector<std::array<int, 3>> faces = {{0, 11, 5},  {0, 5, 1},   {0, 1, 7},   {0, 7, 10}, {0, 10, 11},
                                           {1, 5, 9},   {5, 11, 4},  {11, 10, 2}, {10, 7, 6}, {7, 1, 8},
                                           {3, 9, 4},   {3, 4, 2},   {3, 2, 6},   {3, 6, 8},  {3, 8, 9},
                                           {4, 9, 5},   {2, 4, 11},  {6, 2, 10},  {8, 6, 7},  {9, 8, 1}};
  for (int s = 0; s < subdiv; ++s) {
    std::map<std::pair<int, int>, int> midpoint;
    auto mid = [&](int a, int b) {
      auto key = std::minmax(a, b);
      auto it = midpoint.find(key);
      if (it != midpoint.end()) return it->second;
      Vec3 m = (verts[static_cast<std::size_t>(a)] + verts[static_cast<std::size_t>(b)]).normalized();
      verts.push_back(m);
      int idx = static_cast<int>(verts.size()) - 1;
      midpoint.emplace(key, idx);
      return idx;
    };
    std::vector<std::array<int, 3>> next;
    for (const auto& f : faces) {
      int ab = mid(f[0], f[1]), bc = mid(f[1], f[2]), ca = mid(f[2], f[0]);
      next.push_back({f[0], ab, ca});
      next.push_back({f[1], bc, ab});
      next.push_back({f[2], ca, bc});
      next.push_back({ab, bc, ca});
    }
    faces = std::move(next);
  }
  Mesh m;
  m.vertices.resize(static_cast<Eigen::Index>(verts.size()), 3);
  for (std::size_t i = 0; i < verts.size(); ++i) m.vertices.row(static_cast<Eigen::Index>(i)) = (center + radius * verts[i]).transpose();
  m.faces.resize(static_cast<Eigen::Index>(faces.size()), 3);
  for (std::size_t i = 0; i < faces.size(); ++i)
    m.faces.row(static_cast<Eigen::Index>(i)) << faces[i][0], faces[i][1], faces[i][2];
  return m;
}

// Axis-aligned box triangulated on a boundary lattice (watertight, outward).
inline Mesh makeBoxMesh(const Vec3& lo, const Vec3& hi, int subdiv = 4) {
  std::map<std::tuple<int, int, int>, int> lattice;
  std::vector<Vec3> verts;
  std::vector<std::array<int, 3>> faces;
  const int n = subdiv;
  auto node = [&](int i, int j, int k) {
    auto key = std::make_tuple(i, j, k);
    auto it = lattice.find(key);
    if (it != lattice.end()) return it->second;
    verts.push_back(Vec3(lo.x() + (hi.x() - lo.x()) * i / n, lo.y() + (hi.y() - lo.y()) * j / n,
                         lo.z() + (hi.z() - lo.z()) * k / n));
    lattice.emplace(key, static_cast<int>(verts.size()) - 1);
    return static_cast<int>(verts.size()) - 1;
  };
  struct Side {
    int fixedAxis, fixedVal;
    int axis1, axis2;
  };
  std::array<Side, 6> sides = {{{0, n, 1, 2}, {0, 0, 2, 1}, {1, n, 2, 0}, {1, 0, 0, 2}, {2, n, 0, 1}, {2, 0, 1, 0}}};
  for (const Side& s : sides)
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) {
        auto at = [&](int di, int dj) {
          int c[3];
          c[s.fixedAxis] = s.fixedVal;
          c[s.axis1] = i + di;
          c[s.axis2] = j + dj;
          return node(c[0], c[1], c[2]);
        };
        faces.push_back({at(0, 0), at(1, 0), at(1, 1)});
        faces.push_back({at(0, 0), at(1, 1), at(0, 1)});
      }
  Mesh m;
  m.vertices.resize(static_cast<Eigen::Index>(verts.size()), 3);
  for (std::size_t i = 0; i < verts.size(); ++i) m.vertices.row(static_cast<Eigen::Index>(i)) = verts[i].transpose();
  m.faces.resize(static_cast<Eigen::Index>(faces.size()), 3);
  for (std::size_t i = 0; i < faces.size(); ++i)
    m.faces.row(static_cast<Eigen::Index>(i)) << faces[i][0], faces[i][1], faces[i][2];
  // Outward orientation via signed volume.
  double vol = 0;
  for (Eigen::Index f = 0; f < m.faces.rows(); ++f) {
    Vec3 a = m.vertices.row(m.faces(f, 0)).transpose();
    Vec3 b = m.vertices.row(m.faces(f, 1)).transpose();
    Vec3 c = m.vertices.row(m.faces(f, 2)).transpose();
    vol += a.dot(b.cross(c));
  }
  if (vol < 0)
    for (Eigen::Index f = 0; f < m.faces.rows(); ++f) std::swap(m.faces(f, 1), m.faces(f, 2));
  return m;
}

// Analytic modified SDFs (distance inside, zero outside).
inline double sphereOmega(const Vec3& p, const Vec3& center, double radius) {
  return std::max(0.0, radius - (p - center).norm());
}

inline double boxOmega(const Vec3& p, const Vec3& lo, const Vec3& hi) {
  double d = std::numeric_limits<double>::infinity();
  for (int a = 0; a < 3; ++a) {
    if (p[a] <= lo[a] || p[a] >= hi[a]) return 0.0;
    d = std::min({d, p[a] - lo[a], hi[a] - p[a]});
  }
  return d;
}

// Flat square in the z = depth plane (two triangles, not closed; raster only).
inline Mesh makeSquare(double cx, double cy, double half, double depth) {
  Mesh m;
  m.vertices.resize(4, 3);
  m.vertices << cx - half, cy - half, depth, cx + half, cy - half, depth, cx + half, cy + half, depth, cx - half,
      cy + half, depth;
  m.faces.resize(2, 3);
  m.faces << 0, 1, 2, 0, 2, 3;
  return m;
}

}  // namespace cmr::test
