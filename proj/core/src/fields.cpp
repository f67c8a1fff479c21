#include "cmr/fields.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <utility>

namespace cmr {

namespace {

// --- watertightness ---------------------------------------------------------

void checkWatertight(const Mesh& mesh) {
  std::map<std::pair<int, int>, int> directed;
  for (int f = 0; f < mesh.faces.rows(); ++f) {
    for (int e = 0; e < 3; ++e) {
      int a = mesh.faces(f, e), b = mesh.faces(f, (e + 1) % 3);
      if (a == b) throw TopologyError("buildSdf: face " + std::to_string(f) + " has a repeated vertex");
      if (++directed[{a, b}] > 1)
        throw TopologyError("buildSdf: non-manifold edge " + std::to_string(a) + "-" + std::to_string(b));
    }
  }
  for (const auto& [edge, count] : directed) {
    auto rev = directed.find({edge.second, edge.first});
    if (rev == directed.end())
      throw TopologyError("buildSdf: open edge " + std::to_string(edge.first) + "-" + std::to_string(edge.second) +
                          " (mesh not watertight)");
  }
}

// --- point-triangle distance and AABB tree ----------------------------------

double distPointTriangleSq(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c) {
  Vec3 ab = b - a, ac = c - a, ap = p - a;
  double d1 = ab.dot(ap), d2 = ac.dot(ap);
  if (d1 <= 0 && d2 <= 0) return ap.squaredNorm();
  Vec3 bp = p - b;
  double d3 = ab.dot(bp), d4 = ac.dot(bp);
  if (d3 >= 0 && d4 <= d3) return bp.squaredNorm();
  double vc = d1 * d4 - d3 * d2;
  if (vc <= 0 && d1 >= 0 && d3 <= 0) {
    double v = d1 / (d1 - d3);
    return (ap - v * ab).squaredNorm();
  }
  Vec3 cp = p - c;
  double d5 = ab.dot(cp), d6 = ac.dot(cp);
  if (d6 >= 0 && d5 <= d6) return cp.squaredNorm();
  double vb = d5 * d2 - d1 * d6;
  if (vb <= 0 && d2 >= 0 && d6 <= 0) {
    double w = d2 / (d2 - d6);
    return (ap - w * ac).squaredNorm();
  }
  double va = d3 * d6 - d5 * d4;
  if (va <= 0 && (d4 - d3) >= 0 && (d5 - d6) >= 0) {
    double w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
    return (bp - w * (Vec3(c - b))).squaredNorm();
  }
  double denom = 1.0 / (va + vb + vc);
  double v = vb * denom, w = vc * denom;
  return (ap - (ab * v + ac * w)).squaredNorm();
}

class TriBvh {
 public:
  explicit TriBvh(const Mesh& mesh) : mesh_(mesh) {
    const int F = static_cast<int>(mesh.faces.rows());
    order_.resize(static_cast<std::size_t>(F));
    for (int f = 0; f < F; ++f) order_[static_cast<std::size_t>(f)] = f;
    nodes_.reserve(static_cast<std::size_t>(2 * F));
    build(0, F);
  }

  double distance(const Vec3& p) const {
    double best = std::numeric_limits<double>::infinity();
    query(0, p, best);
    return std::sqrt(best);
  }

 private:
  struct Node {
    Vec3 lo, hi;
    int left = -1, right = -1;
    int start = 0, count = 0;
  };

  int build(int start, int count) {
    int idx = static_cast<int>(nodes_.size());
    nodes_.push_back(Node{});
    Vec3 lo = Vec3::Constant(std::numeric_limits<double>::infinity());
    Vec3 hi = -lo;
    for (int i = start; i < start + count; ++i) {
      int f = order_[static_cast<std::size_t>(i)];
      for (int k = 0; k < 3; ++k) {
        Vec3 v = mesh_.vertices.row(mesh_.faces(f, k)).transpose();
        lo = lo.cwiseMin(v);
        hi = hi.cwiseMax(v);
      }
    }
    nodes_[static_cast<std::size_t>(idx)].lo = lo;
    nodes_[static_cast<std::size_t>(idx)].hi = hi;
    if (count <= 4) {
      nodes_[static_cast<std::size_t>(idx)].start = start;
      nodes_[static_cast<std::size_t>(idx)].count = count;
      return idx;
    }
    Vec3 extent = hi - lo;
    int axis = 0;
    if (extent.y() > extent.x()) axis = 1;
    if (extent.z() > extent[axis]) axis = 2;
    std::nth_element(order_.begin() + start, order_.begin() + start + count / 2, order_.begin() + start + count,
                     [&](int fa, int fb) { return centroid(fa, axis) < centroid(fb, axis); });
    int mid = count / 2;
    int l = build(start, mid);
    int r = build(start + mid, count - mid);
    nodes_[static_cast<std::size_t>(idx)].left = l;
    nodes_[static_cast<std::size_t>(idx)].right = r;
    return idx;
  }

  double centroid(int f, int axis) const {
    return (mesh_.vertices(mesh_.faces(f, 0), axis) + mesh_.vertices(mesh_.faces(f, 1), axis) +
            mesh_.vertices(mesh_.faces(f, 2), axis)) / 3.0;
  }

  double boxDistSq(const Node& n, const Vec3& p) const {
    double d = 0;
    for (int a = 0; a < 3; ++a) {
      double v = std::max({n.lo[a] - p[a], 0.0, p[a] - n.hi[a]});
      d += v * v;
    }
    return d;
  }

  void query(int idx, const Vec3& p, double& best) const {
    const Node& n = nodes_[static_cast<std::size_t>(idx)];
    if (boxDistSq(n, p) >= best) return;
    if (n.count > 0) {
      for (int i = n.start; i < n.start + n.count; ++i) {
        int f = order_[static_cast<std::size_t>(i)];
        double d = distPointTriangleSq(p, mesh_.vertices.row(mesh_.faces(f, 0)).transpose(),
                                       mesh_.vertices.row(mesh_.faces(f, 1)).transpose(),
                                       mesh_.vertices.row(mesh_.faces(f, 2)).transpose());
        best = std::min(best, d);
      }
      return;
    }
    query(n.left, p, best);
    query(n.right, p, best);
  }

  const Mesh& mesh_;
  std::vector<int> order_;
  std::vector<Node> nodes_;
};

}  // namespace

// --- SDF construction --------------------------------------------------------

SDFGrid buildSdf(const Mesh& mesh, int resolution) {
  if (resolution < 8) throw ConfigError("buildSdf: resolution must be >= 8");
  if (mesh.vertices.rows() < 4 || mesh.faces.rows() < 4) throw TopologyError("buildSdf: mesh too small");
  if (!mesh.vertices.allFinite()) throw NumericalError("buildSdf: non-finite vertices");
  checkWatertight(mesh);

  Vec3 lo = mesh.vertices.colwise().minCoeff();
  Vec3 hi = mesh.vertices.colwise().maxCoeff();
  Vec3 extent = hi - lo;
  double maxExtent = extent.maxCoeff();
  if (maxExtent <= 0) throw TopologyError("buildSdf: degenerate bounding box");

  SDFGrid grid;
  grid.spacing = maxExtent / static_cast<double>(resolution - 3);
  grid.origin = lo - Vec3::Constant(grid.spacing);
  for (int a = 0; a < 3; ++a)
    grid.dims[a] = static_cast<int>(std::ceil(extent[a] / grid.spacing)) + 3;
  grid.values.assign(static_cast<std::size_t>(grid.dims[0]) * grid.dims[1] * grid.dims[2], 0.0);

  // Slight deterministic offset keeps the parity rays off shared edges.
  const double jx = 1.234e-4 * grid.spacing, jy = 2.471e-4 * grid.spacing;

  // Bucket faces into the xy columns their projection touches.
  const int nx = grid.dims[0], ny = grid.dims[1], nz = grid.dims[2];
  std::vector<std::vector<int>> columns(static_cast<std::size_t>(nx) * ny);
  for (int f = 0; f < mesh.faces.rows(); ++f) {
    double fx0 = std::numeric_limits<double>::infinity(), fx1 = -fx0, fy0 = fx0, fy1 = -fx0;
    for (int k = 0; k < 3; ++k) {
      fx0 = std::min(fx0, mesh.vertices(mesh.faces(f, k), 0));
      fx1 = std::max(fx1, mesh.vertices(mesh.faces(f, k), 0));
      fy0 = std::min(fy0, mesh.vertices(mesh.faces(f, k), 1));
      fy1 = std::max(fy1, mesh.vertices(mesh.faces(f, k), 1));
    }
    int ix0 = std::max(0, static_cast<int>(std::ceil((fx0 - grid.origin.x() - jx) / grid.spacing)));
    int ix1 = std::min(nx - 1, static_cast<int>(std::floor((fx1 - grid.origin.x() - jx) / grid.spacing)));
    int iy0 = std::max(0, static_cast<int>(std::ceil((fy0 - grid.origin.y() - jy) / grid.spacing)));
    int iy1 = std::min(ny - 1, static_cast<int>(std::floor((fy1 - grid.origin.y() - jy) / grid.spacing)));
    for (int ix = ix0; ix <= ix1; ++ix)
      for (int iy = iy0; iy <= iy1; ++iy) columns[static_cast<std::size_t>(ix) * ny + iy].push_back(f);
  }

  TriBvh bvh(mesh);
  std::vector<std::pair<double, int>> crossings;
  for (int ix = 0; ix < nx; ++ix)
    for (int iy = 0; iy < ny; ++iy) {
      const auto& faces = columns[static_cast<std::size_t>(ix) * ny + iy];
      if (faces.empty()) continue;
      double px = grid.origin.x() + ix * grid.spacing + jx;
      double py = grid.origin.y() + iy * grid.spacing + jy;
      crossings.clear();
      for (int f : faces) {
        Vec3 a = mesh.vertices.row(mesh.faces(f, 0)).transpose();
        Vec3 b = mesh.vertices.row(mesh.faces(f, 1)).transpose();
        Vec3 c = mesh.vertices.row(mesh.faces(f, 2)).transpose();
        double e0 = (b.x() - a.x()) * (py - a.y()) - (b.y() - a.y()) * (px - a.x());
        double e1 = (c.x() - b.x()) * (py - b.y()) - (c.y() - b.y()) * (px - b.x());
        double e2 = (a.x() - c.x()) * (py - c.y()) - (a.y() - c.y()) * (px - c.x());
        bool inside = (e0 >= 0 && e1 >= 0 && e2 >= 0) || (e0 <= 0 && e1 <= 0 && e2 <= 0);
        if (!inside) continue;
        Vec3 n = (b - a).cross(c - a);
        if (std::abs(n.z()) < 1e-14) continue;
        double z = a.z() - (n.x() * (px - a.x()) + n.y() * (py - a.y())) / n.z();
        crossings.emplace_back(z, n.z() > 0 ? 1 : -1);
      }
      if (crossings.empty()) continue;
      std::sort(crossings.begin(), crossings.end());
      // Winding at node z = sum of crossing signs strictly above it.
      int suffix = 0;
      std::vector<int> suffixAt(crossings.size());
      for (int k = static_cast<int>(crossings.size()) - 1; k >= 0; --k) {
        suffix += crossings[static_cast<std::size_t>(k)].second;
        suffixAt[static_cast<std::size_t>(k)] = suffix;
      }
      for (int iz = 0; iz < nz; ++iz) {
        double pz = grid.origin.z() + iz * grid.spacing;
        auto it = std::upper_bound(crossings.begin(), crossings.end(), std::make_pair(pz, std::numeric_limits<int>::max()));
        int winding = it == crossings.end() ? 0 : suffixAt[static_cast<std::size_t>(it - crossings.begin())];
        if (winding > 0) grid.at(ix, iy, iz) = bvh.distance(Vec3(px - jx, py - jy, pz));
      }
    }
  return grid;
}

// --- sampling ----------------------------------------------------------------

namespace kernels {

template <typename T>
T sampleSdfKernel(const SDFGrid& grid, const T p[3], T gradOut[3]) {
  if (gradOut) gradOut[0] = gradOut[1] = gradOut[2] = T(0);
  T u[3];
  for (int a = 0; a < 3; ++a) {
    u[a] = (p[a] - static_cast<T>(grid.origin[a])) / static_cast<T>(grid.spacing);
    if (!(u[a] >= T(0) && u[a] <= static_cast<T>(grid.dims[a] - 1))) return T(0);
  }
  int i0[3];
  T f[3];
  for (int a = 0; a < 3; ++a) {
    i0[a] = std::min(static_cast<int>(u[a]), grid.dims[a] - 2);
    f[a] = u[a] - static_cast<T>(i0[a]);
  }
  T value = T(0);
  for (int dx = 0; dx < 2; ++dx)
    for (int dy = 0; dy < 2; ++dy)
      for (int dz = 0; dz < 2; ++dz) {
        T v = static_cast<T>(grid.at(i0[0] + dx, i0[1] + dy, i0[2] + dz));
        T wx = dx ? f[0] : T(1) - f[0];
        T wy = dy ? f[1] : T(1) - f[1];
        T wz = dz ? f[2] : T(1) - f[2];
        value += v * wx * wy * wz;
        if (gradOut) {
          T inv = T(1) / static_cast<T>(grid.spacing);
          gradOut[0] += v * (dx ? T(1) : T(-1)) * wy * wz * inv;
          gradOut[1] += v * wx * (dy ? T(1) : T(-1)) * wz * inv;
          gradOut[2] += v * wx * wy * (dz ? T(1) : T(-1)) * inv;
        }
      }
  return value;
}

template float sampleSdfKernel<float>(const SDFGrid&, const float*, float*);
template double sampleSdfKernel<double>(const SDFGrid&, const double*, double*);

}  // namespace kernels

double sampleSdfAt(const SDFGrid& grid, const Vec3& p) {
  double q[3] = {p.x(), p.y(), p.z()};
  return kernels::sampleSdfKernel<double>(grid, q, nullptr);
}

Eigen::VectorXd sampleSdf(const SDFGrid& grid, const PointSet3D& points) {
  Eigen::VectorXd out(points.rows());
  for (Eigen::Index i = 0; i < points.rows(); ++i) {
    Vec3 p = points.row(i).transpose();
    out[i] = sampleSdfAt(grid, p);
  }
  return out;
}

// --- soft rasterizer ---------------------------------------------------------

namespace detail {

namespace {

template <typename T>
T sigmoidT(T x) {
  return T(1) / (T(1) + std::exp(-x));
}

template <typename T>
struct TriangleSd {
  T sd = 0;          // signed distance, positive inside
  int edge = 0;      // argmin boundary edge (0: ab, 1: bc, 2: ca)
  T tparam = 0;      // clamped projection parameter along that edge
  T diff[2] = {0, 0};  // p - closestPoint
  T dist = 0;
};

template <typename T>
T cross2(T ax, T ay, T bx, T by) {
  return ax * by - ay * bx;
}

template <typename T>
T segDistSq(const T p[2], const T e0[2], const T e1[2], T& tOut, T dOut[2]) {
  T dx = e1[0] - e0[0], dy = e1[1] - e0[1];
  T len2 = dx * dx + dy * dy;
  T t = len2 > T(0) ? ((p[0] - e0[0]) * dx + (p[1] - e0[1]) * dy) / len2 : T(0);
  t = std::min(std::max(t, T(0)), T(1));
  dOut[0] = p[0] - (e0[0] + t * dx);
  dOut[1] = p[1] - (e0[1] + t * dy);
  tOut = t;
  return dOut[0] * dOut[0] + dOut[1] * dOut[1];
}

template <typename T>
TriangleSd<T> triangleSignedDistance(const T p[2], const T a[2], const T b[2], const T c[2]) {
  TriangleSd<T> out;
  T e0 = cross2(b[0] - a[0], b[1] - a[1], p[0] - a[0], p[1] - a[1]);
  T e1 = cross2(c[0] - b[0], c[1] - b[1], p[0] - b[0], p[1] - b[1]);
  T e2 = cross2(a[0] - c[0], a[1] - c[1], p[0] - c[0], p[1] - c[1]);
  bool inside = (e0 >= 0 && e1 >= 0 && e2 >= 0) || (e0 <= 0 && e1 <= 0 && e2 <= 0);

  const T* edges[3][2] = {{a, b}, {b, c}, {c, a}};
  T bestSq = std::numeric_limits<T>::infinity();
  for (int e = 0; e < 3; ++e) {
    T t, d[2];
    T dsq = segDistSq(p, edges[e][0], edges[e][1], t, d);
    if (dsq < bestSq) {
      bestSq = dsq;
      out.edge = e;
      out.tparam = t;
      out.diff[0] = d[0];
      out.diff[1] = d[1];
    }
  }
  out.dist = std::sqrt(bestSq);
  out.sd = inside ? out.dist : -out.dist;
  return out;
}

// Face data prepared once per (instance, face).
template <typename T>
struct FaceData {
  int v[3];
  T p2[3][2];  // projected xy
  T z[3];
  T zlo, zhi;
  int ix0, ix1, iy0, iy1;  // pixel bounds
  bool valid = false;
  bool degenerate = false;
};

template <typename T>
FaceData<T> prepareFace(const SoftRasterState<T>& st, int inst, int face, T band) {
  FaceData<T> fd;
  const auto& faces = *st.faces[static_cast<std::size_t>(inst)];
  const Tensor<T>& xy = st.xy[static_cast<std::size_t>(inst)];
  const Tensor<T>& z = st.z[static_cast<std::size_t>(inst)];
  T xlo = std::numeric_limits<T>::infinity(), xhi = -xlo, ylo = xlo, yhi = -xlo;
  fd.zlo = xlo;
  fd.zhi = -xlo;
  for (int k = 0; k < 3; ++k) {
    fd.v[k] = faces(face, k);
    fd.p2[k][0] = xy.at(fd.v[k], 0);
    fd.p2[k][1] = xy.at(fd.v[k], 1);
    fd.z[k] = z[fd.v[k]];
    xlo = std::min(xlo, fd.p2[k][0]);
    xhi = std::max(xhi, fd.p2[k][0]);
    ylo = std::min(ylo, fd.p2[k][1]);
    yhi = std::max(yhi, fd.p2[k][1]);
    fd.zlo = std::min(fd.zlo, fd.z[k]);
    fd.zhi = std::max(fd.zhi, fd.z[k]);
  }
  T A2 = cross2(fd.p2[1][0] - fd.p2[0][0], fd.p2[1][1] - fd.p2[0][1], fd.p2[2][0] - fd.p2[0][0],
                fd.p2[2][1] - fd.p2[0][1]);
  if (std::abs(A2) < T(1e-14)) {
    fd.degenerate = true;
    return fd;
  }

  // Normalized x in [-1,1] maps to pixel columns left-to-right; normalized y
  // maps to rows top-to-bottom (y up). Dilate by the sigmoid support band.
  const int W = st.width, H = st.height;
  auto xToCol = [&](T x) { return (x + T(1)) * T(0.5) * static_cast<T>(W) - T(0.5); };
  auto yToRow = [&](T y) { return (T(1) - y) * T(0.5) * static_cast<T>(H) - T(0.5); };
  fd.ix0 = std::max(0, static_cast<int>(std::ceil(xToCol(xlo - band))));
  fd.ix1 = std::min(W - 1, static_cast<int>(std::floor(xToCol(xhi + band))));
  fd.iy0 = std::max(0, static_cast<int>(std::ceil(yToRow(yhi + band))));
  fd.iy1 = std::min(H - 1, static_cast<int>(std::floor(yToRow(ylo - band))));
  fd.valid = fd.ix0 <= fd.ix1 && fd.iy0 <= fd.iy1;
  return fd;
}

}  // namespace

template <typename T>
void softRasterForward(SoftRasterState<T>& st) {
  const int H = st.height, W = st.width;
  const T s = st.sharpness;
  const T cut = st.coverageCut;
  const T band = std::log(T(1) / cut - T(1)) / s;
  st.coverage.assign(static_cast<std::size_t>(st.n), Tensor<T>({H, W}));
  st.depth.assign(static_cast<std::size_t>(st.n), Tensor<T>::full({H, W}, std::numeric_limits<T>::infinity()));
  st.den.assign(static_cast<std::size_t>(st.n), Tensor<T>({H, W}));
  st.zmin.assign(static_cast<std::size_t>(st.n), Tensor<T>::full({H, W}, std::numeric_limits<T>::infinity()));
  st.degenerate = 0;

  std::vector<T> xs(static_cast<std::size_t>(W)), ys(static_cast<std::size_t>(H));
  for (int x = 0; x < W; ++x) xs[static_cast<std::size_t>(x)] = T(2) * (x + T(0.5)) / W - T(1);
  for (int y = 0; y < H; ++y) ys[static_cast<std::size_t>(y)] = T(1) - T(2) * (y + T(0.5)) / H;

  for (int i = 0; i < st.n; ++i) {
    Tensor<T> num({H, W});
    Tensor<T>& cov = st.coverage[static_cast<std::size_t>(i)];
    Tensor<T>& den = st.den[static_cast<std::size_t>(i)];
    Tensor<T>& zmin = st.zmin[static_cast<std::size_t>(i)];
    const int F = static_cast<int>(st.faces[static_cast<std::size_t>(i)]->rows());
    for (int f = 0; f < F; ++f) {
      FaceData<T> fd = prepareFace(st, i, f, band);
      if (fd.degenerate) ++st.degenerate;
      if (!fd.valid) continue;
      for (int y = fd.iy0; y <= fd.iy1; ++y)
        for (int x = fd.ix0; x <= fd.ix1; ++x) {
          T p[2] = {xs[static_cast<std::size_t>(x)], ys[static_cast<std::size_t>(y)]};
          TriangleSd<T> tsd = triangleSignedDistance(p, fd.p2[0], fd.p2[1], fd.p2[2]);
          T covF = sigmoidT(s * tsd.sd);
          if (covF <= cut) continue;
          if (covF > cov.at(y, x)) cov.at(y, x) = covF;
          // Plane depth via barycentric areas, clamped to the face z-range.
          T Na = cross2(fd.p2[1][0] - p[0], fd.p2[1][1] - p[1], fd.p2[2][0] - p[0], fd.p2[2][1] - p[1]);
          T Nb = cross2(fd.p2[2][0] - p[0], fd.p2[2][1] - p[1], fd.p2[0][0] - p[0], fd.p2[0][1] - p[1]);
          T Nc = cross2(fd.p2[0][0] - p[0], fd.p2[0][1] - p[1], fd.p2[1][0] - p[0], fd.p2[1][1] - p[1]);
          T A2 = Na + Nb + Nc;
          T zf = (Na * fd.z[0] + Nb * fd.z[1] + Nc * fd.z[2]) / A2;
          zf = std::min(std::max(zf, fd.zlo), fd.zhi);
          // Online soft-min accumulation with a running shift.
          T& zm = zmin.at(y, x);
          if (zf < zm) {
            if (den.at(y, x) > T(0)) {
              T rescale = std::exp(-s * (zm - zf));
              num.at(y, x) *= rescale;
              den.at(y, x) *= rescale;
            }
            zm = zf;
          }
          T w = covF * std::exp(-s * (zf - zm));
          num.at(y, x) += w * zf;
          den.at(y, x) += w;
        }
    }
    Tensor<T>& depth = st.depth[static_cast<std::size_t>(i)];
    for (std::int64_t px = 0; px < depth.size(); ++px)
      if (den[px] > T(0)) depth[px] = num[px] / den[px];
  }
}

template <typename T>
void softRasterBackward(const SoftRasterState<T>& st, const std::vector<Tensor<T>>& dCoverage,
                        const std::vector<Tensor<T>>& dDepth, std::vector<Tensor<T>>& dXy,
                        std::vector<Tensor<T>>& dZ) {
  const int H = st.height, W = st.width;
  const T s = st.sharpness;
  const T cut = st.coverageCut;
  const T band = std::log(T(1) / cut - T(1)) / s;

  std::vector<T> xs(static_cast<std::size_t>(W)), ys(static_cast<std::size_t>(H));
  for (int x = 0; x < W; ++x) xs[static_cast<std::size_t>(x)] = T(2) * (x + T(0.5)) / W - T(1);
  for (int y = 0; y < H; ++y) ys[static_cast<std::size_t>(y)] = T(1) - T(2) * (y + T(0.5)) / H;

  dXy.assign(st.xy.begin(), st.xy.end());
  dZ.assign(st.z.begin(), st.z.end());
  for (auto& t : dXy) t.fill(T(0));
  for (auto& t : dZ) t.fill(T(0));

  for (int i = 0; i < st.n; ++i) {
    const Tensor<T>& cov = st.coverage[static_cast<std::size_t>(i)];
    const Tensor<T>& den = st.den[static_cast<std::size_t>(i)];
    const Tensor<T>& zmin = st.zmin[static_cast<std::size_t>(i)];
    const Tensor<T>& depth = st.depth[static_cast<std::size_t>(i)];
    const Tensor<T>& gCov = dCoverage[static_cast<std::size_t>(i)];
    const Tensor<T>& gDep = dDepth[static_cast<std::size_t>(i)];
    Tensor<T>& gXy = dXy[static_cast<std::size_t>(i)];
    Tensor<T>& gZ = dZ[static_cast<std::size_t>(i)];

    // Max-coverage is re-resolved by value: the first face (scan order)
    // matching the stored maximum receives the coverage gradient.
    Tensor<T> covClaimed({H, W});

    const int F = static_cast<int>(st.faces[static_cast<std::size_t>(i)]->rows());
    for (int f = 0; f < F; ++f) {
      FaceData<T> fd = prepareFace(st, i, f, band);
      if (!fd.valid) continue;
      for (int y = fd.iy0; y <= fd.iy1; ++y)
        for (int x = fd.ix0; x <= fd.ix1; ++x) {
          T p[2] = {xs[static_cast<std::size_t>(x)], ys[static_cast<std::size_t>(y)]};
          TriangleSd<T> tsd = triangleSignedDistance(p, fd.p2[0], fd.p2[1], fd.p2[2]);
          T covF = sigmoidT(s * tsd.sd);
          if (covF <= cut) continue;

          T dsd = T(0);     // accumulated dL/d(signed distance)
          T dzf = T(0);     // accumulated dL/d(face depth at pixel)

          if (gCov.at(y, x) != T(0) && covClaimed.at(y, x) == T(0) && covF == cov.at(y, x)) {
            covClaimed.at(y, x) = T(1);
            dsd += gCov.at(y, x) * s * covF * (T(1) - covF);
          }

          T gd = gDep.at(y, x);
          if (gd != T(0) && den.at(y, x) > T(0)) {
            T Na = cross2(fd.p2[1][0] - p[0], fd.p2[1][1] - p[1], fd.p2[2][0] - p[0], fd.p2[2][1] - p[1]);
            T Nb = cross2(fd.p2[2][0] - p[0], fd.p2[2][1] - p[1], fd.p2[0][0] - p[0], fd.p2[0][1] - p[1]);
            T Nc = cross2(fd.p2[0][0] - p[0], fd.p2[0][1] - p[1], fd.p2[1][0] - p[0], fd.p2[1][1] - p[1]);
            T A2 = Na + Nb + Nc;
            T zraw = (Na * fd.z[0] + Nb * fd.z[1] + Nc * fd.z[2]) / A2;
            int clamped = 0;  // -1 low, +1 high
            T zf = zraw;
            if (zraw < fd.zlo) {
              zf = fd.zlo;
              clamped = -1;
            } else if (zraw > fd.zhi) {
              zf = fd.zhi;
              clamped = 1;
            }
            T w = covF * std::exp(-s * (zf - zmin.at(y, x)));
            T dep = depth.at(y, x);
            T dwf = gd * (zf - dep) / den.at(y, x);
            dzf += gd * w / den.at(y, x);
            // w depends on zf and coverage
            dzf += dwf * (-s) * w;
            dsd += dwf * std::exp(-s * (zf - zmin.at(y, x))) * s * covF * (T(1) - covF);

            if (clamped == 0) {
              // dz/dN_k = (z_k - zraw)/A2 ; N_k depend on the other two verts.
              T dNa = dzf * (fd.z[0] - zraw) / A2;
              T dNb = dzf * (fd.z[1] - zraw) / A2;
              T dNc = dzf * (fd.z[2] - zraw) / A2;
              gZ[fd.v[0]] += dzf * Na / A2;
              gZ[fd.v[1]] += dzf * Nb / A2;
              gZ[fd.v[2]] += dzf * Nc / A2;
              // Na = cross2(b-p, c-p): d/db = ( (c-p).y', ...), etc.
              T bx = fd.p2[1][0] - p[0], by = fd.p2[1][1] - p[1];
              T cx = fd.p2[2][0] - p[0], cy = fd.p2[2][1] - p[1];
              T ax = fd.p2[0][0] - p[0], ay = fd.p2[0][1] - p[1];
              gXy.at(fd.v[1], 0) += dNa * cy;
              gXy.at(fd.v[1], 1) += dNa * (-cx);
              gXy.at(fd.v[2], 0) += dNa * (-by);
              gXy.at(fd.v[2], 1) += dNa * bx;
              gXy.at(fd.v[2], 0) += dNb * ay;
              gXy.at(fd.v[2], 1) += dNb * (-ax);
              gXy.at(fd.v[0], 0) += dNb * (-cy);
              gXy.at(fd.v[0], 1) += dNb * cx;
              gXy.at(fd.v[0], 0) += dNc * by;
              gXy.at(fd.v[0], 1) += dNc * (-bx);
              gXy.at(fd.v[1], 0) += dNc * (-ay);
              gXy.at(fd.v[1], 1) += dNc * ax;
            } else {
              // Clamped to a vertex z: route to the extreme vertex.
              int extreme = 0;
              for (int k = 1; k < 3; ++k)
                if ((clamped < 0 && fd.z[k] < fd.z[extreme]) || (clamped > 0 && fd.z[k] > fd.z[extreme])) extreme = k;
              gZ[fd.v[extreme]] += dzf;
            }
          }

          if (dsd != T(0) && tsd.dist > T(1e-12)) {
            T sign = tsd.sd >= T(0) ? T(1) : T(-1);
            T invD = T(1) / tsd.dist;
            int e0 = tsd.edge, e1 = (tsd.edge + 1) % 3;
            T gx = dsd * sign * (-tsd.diff[0]) * invD;
            T gy = dsd * sign * (-tsd.diff[1]) * invD;
            gXy.at(fd.v[e0], 0) += gx * (T(1) - tsd.tparam);
            gXy.at(fd.v[e0], 1) += gy * (T(1) - tsd.tparam);
            gXy.at(fd.v[e1], 0) += gx * tsd.tparam;
            gXy.at(fd.v[e1], 1) += gy * tsd.tparam;
          }
        }
    }
  }
}

template void softRasterForward<float>(SoftRasterState<float>&);
template void softRasterForward<double>(SoftRasterState<double>&);
template void softRasterBackward<float>(const SoftRasterState<float>&, const std::vector<Tensor<float>>&,
                                        const std::vector<Tensor<float>>&, std::vector<Tensor<float>>&,
                                        std::vector<Tensor<float>>&);
template void softRasterBackward<double>(const SoftRasterState<double>&, const std::vector<Tensor<double>>&,
                                         const std::vector<Tensor<double>>&, std::vector<Tensor<double>>&,
                                         std::vector<Tensor<double>>&);

}  // namespace detail

DepthRender rasterize(const std::vector<Mesh>& meshes, const WeakPerspectiveCamera& cam, const RasterConfig& cfg) {
  if (meshes.empty()) throw Error("rasterize: need at least one mesh");
  if (!(cfg.sharpness > 0)) throw ConfigError("rasterize: sharpness must be positive");

  detail::SoftRasterState<double> st;
  st.n = static_cast<int>(meshes.size());
  st.height = cfg.height;
  st.width = cfg.width;
  st.sharpness = cfg.sharpness;
  st.coverageCut = cfg.coverageCut;
  for (const Mesh& m : meshes) {
    const int V = static_cast<int>(m.vertices.rows());
    Tensor<double> xy({V, 2});
    Tensor<double> z({V});
    for (int v = 0; v < V; ++v) {
      xy.at(v, 0) = cam.s * m.vertices(v, 0) + cam.t.x();
      xy.at(v, 1) = cam.s * m.vertices(v, 1) + cam.t.y();
      z[v] = m.vertices(v, 2);
    }
    st.xy.push_back(std::move(xy));
    st.z.push_back(std::move(z));
    st.faces.push_back(&m.faces);
  }
  detail::softRasterForward(st);

  DepthRender out;
  out.degenerateTriangles = st.degenerate;
  out.depth = st.depth;
  out.softVisibility.assign(static_cast<std::size_t>(st.n), TensorD({cfg.height, cfg.width}));
  const double s = cfg.sharpness;
  for (int y = 0; y < cfg.height; ++y)
    for (int x = 0; x < cfg.width; ++x) {
      double covMax = 0, dmin = std::numeric_limits<double>::infinity();
      for (int i = 0; i < st.n; ++i) {
        double c = st.coverage[static_cast<std::size_t>(i)].at(y, x);
        covMax = std::max(covMax, c);
        if (c > cfg.coverageCut) dmin = std::min(dmin, st.depth[static_cast<std::size_t>(i)].at(y, x));
      }
      if (!(covMax > cfg.coverageCut)) continue;
      double S = std::max(0.0, 1.0 - covMax);
      std::vector<double> w(static_cast<std::size_t>(st.n), 0.0);
      for (int i = 0; i < st.n; ++i) {
        double c = st.coverage[static_cast<std::size_t>(i)].at(y, x);
        if (c <= cfg.coverageCut) continue;
        w[static_cast<std::size_t>(i)] = c * std::exp(-s * (st.depth[static_cast<std::size_t>(i)].at(y, x) - dmin));
        S += w[static_cast<std::size_t>(i)];
      }
      for (int i = 0; i < st.n; ++i)
        out.softVisibility[static_cast<std::size_t>(i)].at(y, x) = S > 0 ? w[static_cast<std::size_t>(i)] / S : 0.0;
    }
  return out;
}

}  // namespace cmr
