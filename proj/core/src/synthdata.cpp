#include "cmr/synthdata.hpp"

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "cmr/io/png_io.hpp"
#include "cmr/rng.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace cmr {

namespace {

constexpr std::uint8_t kPalette[4][3] = {{217, 82, 60}, {66, 135, 245}, {80, 200, 120}, {230, 195, 80}};

struct Box {
  double x0 = 0, y0 = 0, x1 = 0, y1 = 0;

  double area() const { return std::max(0.0, x1 - x0) * std::max(0.0, y1 - y0); }
};

double iou(const Box& a, const Box& b) {
  Box inter{std::max(a.x0, b.x0), std::max(a.y0, b.y0), std::min(a.x1, b.x1), std::min(a.y1, b.y1)};
  double ai = inter.area();
  double u = a.area() + b.area() - ai;
  return u > 0 ? ai / u : 0.0;
}

Box projectedBox(const PointSet3D& verts, const WeakPerspectiveCamera& cam) {
  Box b;
  b.x0 = cam.s * verts.col(0).minCoeff() + cam.t.x();
  b.x1 = cam.s * verts.col(0).maxCoeff() + cam.t.x();
  b.y0 = cam.s * verts.col(1).minCoeff() + cam.t.y();
  b.y1 = cam.s * verts.col(1).maxCoeff() + cam.t.y();
  return b;
}

Rotation6D randomRotation6d(Rng& rng, double stddev) {
  Vec3 axis(rng.gaussian(), rng.gaussian(), rng.gaussian());
  double n = axis.norm();
  if (n < 1e-9) axis = Vec3::UnitY();
  else axis /= n;
  double angle = rng.gaussian(0.0, stddev);
  Eigen::AngleAxisd aa(angle, axis);
  return matrixToRot6d(aa.toRotationMatrix());
}

}  // namespace

PointSet3D placePoints(const PointSet3D& points, const WeakPerspectiveCamera& cam) {
  PointSet3D out(points.rows(), 3);
  out.col(0) = cam.s * points.col(0).array() + cam.t.x();
  out.col(1) = cam.s * points.col(1).array() + cam.t.y();
  out.col(2) = cam.s * points.col(2).array() + kDepthGauge / cam.s;
  return out;
}

Tensor<std::int32_t> hardInstanceMap(const std::vector<Mesh>& placedMeshes, int height, int width) {
  Tensor<std::int32_t> labels = Tensor<std::int32_t>::full({height, width}, -1);
  TensorD zbuf = TensorD::full({height, width}, std::numeric_limits<double>::infinity());

  std::vector<double> xs(static_cast<std::size_t>(width)), ys(static_cast<std::size_t>(height));
  for (int x = 0; x < width; ++x) xs[static_cast<std::size_t>(x)] = 2.0 * (x + 0.5) / width - 1.0;
  for (int y = 0; y < height; ++y) ys[static_cast<std::size_t>(y)] = 1.0 - 2.0 * (y + 0.5) / height;

  for (std::size_t n = 0; n < placedMeshes.size(); ++n) {
    const Mesh& m = placedMeshes[n];
    for (int f = 0; f < m.faces.rows(); ++f) {
      Vec3 a = m.vertices.row(m.faces(f, 0)).transpose();
      Vec3 b = m.vertices.row(m.faces(f, 1)).transpose();
      Vec3 c = m.vertices.row(m.faces(f, 2)).transpose();
      double xlo = std::min({a.x(), b.x(), c.x()}), xhi = std::max({a.x(), b.x(), c.x()});
      double ylo = std::min({a.y(), b.y(), c.y()}), yhi = std::max({a.y(), b.y(), c.y()});
      int ix0 = std::max(0, static_cast<int>(std::ceil((xlo + 1.0) * 0.5 * width - 0.5)));
      int ix1 = std::min(width - 1, static_cast<int>(std::floor((xhi + 1.0) * 0.5 * width - 0.5)));
      int iy0 = std::max(0, static_cast<int>(std::ceil((1.0 - yhi) * 0.5 * height - 0.5)));
      int iy1 = std::min(height - 1, static_cast<int>(std::floor((1.0 - ylo) * 0.5 * height - 0.5)));
      double A2 = (b.x() - a.x()) * (c.y() - a.y()) - (b.y() - a.y()) * (c.x() - a.x());
      if (std::abs(A2) < 1e-14) continue;
      for (int y = iy0; y <= iy1; ++y)
        for (int x = ix0; x <= ix1; ++x) {
          double px = xs[static_cast<std::size_t>(x)], py = ys[static_cast<std::size_t>(y)];
          double na = (b.x() - px) * (c.y() - py) - (b.y() - py) * (c.x() - px);
          double nb = (c.x() - px) * (a.y() - py) - (c.y() - py) * (a.x() - px);
          double nc = A2 - na - nb;
          bool inside = (A2 > 0) ? (na >= 0 && nb >= 0 && nc >= 0) : (na <= 0 && nb <= 0 && nc <= 0);
          if (!inside) continue;
          double z = (na * a.z() + nb * b.z() + nc * c.z()) / A2;
          if (z < zbuf.at(y, x)) {
            zbuf.at(y, x) = z;
            labels.at(y, x) = static_cast<std::int32_t>(n);
          }
        }
    }
  }
  return labels;
}

double presetOverlapTarget(const std::string& preset) {
  if (preset == "clear") return 0.02;
  if (preset == "occluded") return 0.45;
  if (preset == "severe") return 0.72;
  throw ConfigError("unknown stratification preset '" + preset + "' (expected clear|occluded|severe)");
}

std::string iouBucket(double v) {
  if (v < 0.1) return "clear";
  if (v >= 0.3 && v <= 0.6) return "occluded";
  if (v > 0.6) return "severe";
  return "other";
}

Scene generateScene(const SceneConfig& cfg, const BodyModelSpec& spec) {
  cfg.validate();
  Rng root(cfg.seed);
  const int S = cfg.imageSize;

  // Poses and shapes are fixed up front; placement retries only resample
  // cameras, so a scene's articulation does not depend on layout luck.
  Rng poseRng = root.substream("pose");
  std::vector<BodyParams> params(static_cast<std::size_t>(cfg.nPersons));
  std::vector<BodyForwardResult> bodies;
  for (int i = 0; i < cfg.nPersons; ++i) {
    BodyParams p = BodyParams::neutral();
    for (int j = 0; j < kNumJoints; ++j) p.pose.row(j) = randomRotation6d(poseRng, cfg.poseNoise).transpose();
    for (int k = 0; k < kNumShape; ++k)
      p.shape[k] = std::clamp(poseRng.gaussian(0.0, cfg.shapeScale), -2.0, 2.0);
    params[static_cast<std::size_t>(i)] = p;
    bodies.push_back(bodyForward(spec, p));
  }

  Scene scene;
  scene.seed = cfg.seed;
  double bestIoU = -1.0;

  for (int attempt = 0; attempt < 1000; ++attempt) {
    Rng layout = root.substream("layout").substream(static_cast<std::uint64_t>(attempt));
    std::vector<WeakPerspectiveCamera> cams(static_cast<std::size_t>(cfg.nPersons));
    cams[0].s = layout.uniform(0.72, 0.92);
    cams[0].t = Vec2(layout.uniform(-0.12, 0.12), layout.uniform(-0.08, 0.08));
    // Shift the frame so the body (roughly y in [0, 1.7] model units) is centered.
    cams[0].t.y() -= cams[0].s * 0.85;

    bool ok = true;
    double maxIoU = 0.0;
    for (int i = 1; i < cfg.nPersons && ok; ++i) {
      cams[static_cast<std::size_t>(i)].s = layout.uniform(0.72, 0.92);
      double ang = layout.uniform(0.0, 2.0 * M_PI);
      Vec2 dir(std::cos(ang), std::sin(ang) * 0.35);  // mostly lateral offsets
      dir.normalize();
      Box anchor = projectedBox(bodies[0].mesh.vertices, cams[0]);

      auto iouAt = [&](double dist) {
        WeakPerspectiveCamera c = cams[static_cast<std::size_t>(i)];
        c.t = cams[0].t + dist * dir;
        c.t.y() += cams[0].s * 0.85 - c.s * 0.85;  // keep vertical framing comparable
        return iou(anchor, projectedBox(bodies[static_cast<std::size_t>(i)].mesh.vertices, c));
      };
      double lo = 0.0, hi = 3.0;
      if (iouAt(lo) < cfg.overlapTarget - 0.1) {
        ok = false;
        bestIoU = std::max(bestIoU, iouAt(lo));
        break;
      }
      for (int it = 0; it < 40; ++it) {
        double mid = 0.5 * (lo + hi);
        (iouAt(mid) > cfg.overlapTarget ? lo : hi) = mid;
      }
      double dist = 0.5 * (lo + hi);
      double got = iouAt(dist);
      bestIoU = std::max(bestIoU, got);
      if (std::abs(got - cfg.overlapTarget) > 0.1) {
        ok = false;
        break;
      }
      cams[static_cast<std::size_t>(i)].t = cams[0].t + dist * dir;
      cams[static_cast<std::size_t>(i)].t.y() += cams[0].s * 0.85 - cams[static_cast<std::size_t>(i)].s * 0.85;
    }
    if (!ok) continue;

    // Render the candidate layout and check keypoint visibility.
    std::vector<Mesh> placed;
    for (int i = 0; i < cfg.nPersons; ++i) {
      Mesh m = bodies[static_cast<std::size_t>(i)].mesh;
      m.vertices = placePoints(m.vertices, cams[static_cast<std::size_t>(i)]);
      placed.push_back(std::move(m));
    }
    Tensor<std::int32_t> labels = hardInstanceMap(placed, S, S);

    std::vector<SceneInstance> instances(static_cast<std::size_t>(cfg.nPersons));
    bool visOk = true;
    maxIoU = 0.0;
    for (int i = 0; i < cfg.nPersons && visOk; ++i) {
      SceneInstance& inst = instances[static_cast<std::size_t>(i)];
      inst.params = params[static_cast<std::size_t>(i)];
      inst.params.camera = cams[static_cast<std::size_t>(i)];
      inst.joints3d = bodies[static_cast<std::size_t>(i)].joints;

      PointSet2D kpNorm = projectWeakPerspective(inst.joints3d, inst.params.camera);
      inst.keypoints2d.positions.resize(kNumJoints, 2);
      inst.keypoints2d.visible.assign(kNumJoints, 0);
      for (int j = 0; j < kNumJoints; ++j) {
        Vec2 px = normalizedToPixel(kpNorm.row(j).transpose(), S, S);
        inst.keypoints2d.positions.row(j) = px.transpose();
        int cx = static_cast<int>(std::lround(px.x()));
        int cy = static_cast<int>(std::lround(px.y()));
        if (cx < 0 || cx >= S || cy < 0 || cy >= S) continue;
        // Visible when its own silhouette or background lies within 2 px.
        for (int dy = -2; dy <= 2 && !inst.keypoints2d.visible[static_cast<std::size_t>(j)]; ++dy)
          for (int dx = -2; dx <= 2; ++dx) {
            int qx = cx + dx, qy = cy + dy;
            if (qx < 0 || qx >= S || qy < 0 || qy >= S) continue;
            std::int32_t lab = labels.at(qy, qx);
            if (lab == i || lab == -1) {
              inst.keypoints2d.visible[static_cast<std::size_t>(j)] = 1;
              break;
            }
          }
      }
      if (inst.keypoints2d.visibleCount() < kMinVisibleKeypoints) {
        visOk = false;
        break;
      }
      auto center = computeBodyCenter(inst.keypoints2d);
      if (!center) {
        visOk = false;
        break;
      }
      inst.center = *center;

      inst.mask = Tensor<std::uint8_t>({S, S});
      for (std::int64_t p = 0; p < labels.size(); ++p) inst.mask[p] = labels[p] == i ? 255 : 0;

      for (int j = 0; j < i; ++j)
        maxIoU = std::max(maxIoU, iou(projectedBox(bodies[static_cast<std::size_t>(i)].mesh.vertices,
                                                   cams[static_cast<std::size_t>(i)]),
                                      projectedBox(bodies[static_cast<std::size_t>(j)].mesh.vertices,
                                                   cams[static_cast<std::size_t>(j)])));
    }
    if (!visOk) continue;

    scene.instances = std::move(instances);
    scene.achievedIoU = maxIoU;
    scene.image = TensorF({3, S, S});
    for (int y = 0; y < S; ++y)
      for (int x = 0; x < S; ++x) {
        std::int32_t lab = labels.at(y, x);
        if (lab < 0) continue;
        for (int c = 0; c < 3; ++c) scene.image.at(c, y, x) = kPalette[lab][c] / 255.f;
      }
    std::vector<Vec2> centers;
    for (const auto& inst : scene.instances) centers.push_back(inst.center);
    scene.globalMap = renderCentermap(centers, S, S);
    return scene;
  }

  throw GenerationError("generateScene: overlap target " + std::to_string(cfg.overlapTarget) +
                        " unattainable in 1000 attempts (best achieved " + std::to_string(bestIoU) + ")");
}

// --- dataset I/O --------------------------------------------------------------

namespace {

std::string sceneId(int idx) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%04d", idx);
  return buf;
}

std::uint32_t fileCrc32(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  if (!f) throw DataError("dataset: cannot open '" + p.string() + "'");
  std::vector<char> buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return static_cast<std::uint32_t>(
      crc32(0, reinterpret_cast<const Bytef*>(buf.data()), static_cast<uInt>(buf.size())));
}

json instanceToJson(const SceneInstance& inst) {
  json j;
  std::vector<double> pose(kNumJoints * 6);
  for (int r = 0; r < kNumJoints; ++r)
    for (int c = 0; c < 6; ++c) pose[static_cast<std::size_t>(r * 6 + c)] = inst.params.pose(r, c);
  j["params"]["pose"] = pose;
  j["params"]["shape"] = std::vector<double>(inst.params.shape.data(), inst.params.shape.data() + kNumShape);
  j["params"]["camera"] = {{"s", inst.params.camera.s}, {"tx", inst.params.camera.t.x()}, {"ty", inst.params.camera.t.y()}};
  json kp = json::array(), vis = json::array(), joints = json::array();
  for (int k = 0; k < kNumJoints; ++k) {
    kp.push_back({inst.keypoints2d.positions(k, 0), inst.keypoints2d.positions(k, 1)});
    vis.push_back(static_cast<int>(inst.keypoints2d.visible[static_cast<std::size_t>(k)]));
    joints.push_back({inst.joints3d(k, 0), inst.joints3d(k, 1), inst.joints3d(k, 2)});
  }
  j["keypoints2d"] = kp;
  j["visibility"] = vis;
  j["joints3d"] = joints;
  j["center"] = {inst.center.x(), inst.center.y()};
  return j;
}

SceneInstance instanceFromJson(const json& j) {
  SceneInstance inst;
  auto pose = j.at("params").at("pose").get<std::vector<double>>();
  if (pose.size() != kNumJoints * 6) throw SchemaError("dataset: annotation field 'params.pose' has wrong length");
  for (int r = 0; r < kNumJoints; ++r)
    for (int c = 0; c < 6; ++c) inst.params.pose(r, c) = pose[static_cast<std::size_t>(r * 6 + c)];
  auto shape = j.at("params").at("shape").get<std::vector<double>>();
  if (shape.size() != kNumShape) throw SchemaError("dataset: annotation field 'params.shape' has wrong length");
  for (int k = 0; k < kNumShape; ++k) inst.params.shape[k] = shape[static_cast<std::size_t>(k)];
  inst.params.camera.s = j.at("params").at("camera").at("s").get<double>();
  inst.params.camera.t =
      Vec2(j.at("params").at("camera").at("tx").get<double>(), j.at("params").at("camera").at("ty").get<double>());

  const json& kp = j.at("keypoints2d");
  const json& vis = j.at("visibility");
  const json& joints = j.at("joints3d");
  if (kp.size() != kNumJoints || vis.size() != kNumJoints || joints.size() != kNumJoints)
    throw SchemaError("dataset: annotation keypoint arrays have wrong length");
  inst.keypoints2d.positions.resize(kNumJoints, 2);
  inst.keypoints2d.visible.assign(kNumJoints, 0);
  inst.joints3d.resize(kNumJoints, 3);
  for (int k = 0; k < kNumJoints; ++k) {
    inst.keypoints2d.positions(k, 0) = kp[static_cast<std::size_t>(k)][0].get<double>();
    inst.keypoints2d.positions(k, 1) = kp[static_cast<std::size_t>(k)][1].get<double>();
    inst.keypoints2d.visible[static_cast<std::size_t>(k)] = vis[static_cast<std::size_t>(k)].get<int>() ? 1 : 0;
    for (int c = 0; c < 3; ++c) inst.joints3d(k, c) = joints[static_cast<std::size_t>(k)][c].get<double>();
  }
  inst.center = Vec2(j.at("center")[0].get<double>(), j.at("center")[1].get<double>());
  return inst;
}

}  // namespace

void writeDataset(const std::vector<Scene>& scenes, const std::string& dir, int toyResolution) {
  fs::create_directories(fs::path(dir) / "images");
  fs::create_directories(fs::path(dir) / "masks");
  fs::create_directories(fs::path(dir) / "annotations");

  json manifest;
  manifest["version"] = 1;
  manifest["scene_count"] = scenes.size();
  manifest["toy_resolution"] = toyResolution;
  json sceneList = json::array();
  json checks = json::object();

  for (std::size_t i = 0; i < scenes.size(); ++i) {
    const Scene& s = scenes[i];
    std::string id = sceneId(static_cast<int>(i));
    std::string imgRel = "images/" + id + ".png";
    io::writePngRgb8((fs::path(dir) / imgRel).string(), s.image);
    checks[imgRel] = fileCrc32(fs::path(dir) / imgRel);

    json ann;
    ann["seed"] = s.seed;
    ann["preset"] = s.preset;
    ann["achieved_iou"] = s.achievedIoU;
    ann["image_size"] = s.imageSize();
    json insts = json::array();
    for (std::size_t k = 0; k < s.instances.size(); ++k) {
      insts.push_back(instanceToJson(s.instances[k]));
      std::string maskRel = "masks/" + id + "_" + std::to_string(k) + ".png";
      io::writePngGray8((fs::path(dir) / maskRel).string(), s.instances[k].mask);
      checks[maskRel] = fileCrc32(fs::path(dir) / maskRel);
    }
    ann["instances"] = insts;
    std::string annRel = "annotations/" + id + ".json";
    std::ofstream f(fs::path(dir) / annRel);
    f << ann.dump(2) << "\n";
    f.close();
    checks[annRel] = fileCrc32(fs::path(dir) / annRel);
    sceneList.push_back({{"id", id}, {"seed", s.seed}, {"preset", s.preset}, {"iou", s.achievedIoU}});
  }
  manifest["scenes"] = sceneList;
  manifest["checksums"] = checks;
  std::ofstream mf(fs::path(dir) / "manifest.json");
  mf << manifest.dump(2) << "\n";
}

int datasetToyResolution(const std::string& dir) {
  std::ifstream mf(fs::path(dir) / "manifest.json");
  if (!mf) throw DataError("dataset: missing manifest.json in '" + dir + "'");
  json manifest = json::parse(mf);
  return manifest.at("toy_resolution").get<int>();
}

std::vector<Scene> readDataset(const std::string& dir) {
  std::ifstream mf(fs::path(dir) / "manifest.json");
  if (!mf) throw DataError("dataset: missing manifest.json in '" + dir + "'");
  json manifest;
  try {
    manifest = json::parse(mf);
  } catch (const json::exception& e) {
    throw SchemaError("dataset: malformed manifest.json: " + std::string(e.what()));
  }

  for (const auto& [rel, crcVal] : manifest.at("checksums").items()) {
    fs::path p = fs::path(dir) / rel;
    if (!fs::exists(p)) throw SchemaError("dataset: file '" + rel + "' listed in manifest is missing");
    if (fileCrc32(p) != crcVal.get<std::uint32_t>())
      throw SchemaError("dataset: checksum mismatch for '" + rel + "'");
  }

  std::vector<Scene> scenes;
  for (const auto& entry : manifest.at("scenes")) {
    std::string id = entry.at("id").get<std::string>();
    Scene s;
    s.seed = entry.at("seed").get<std::uint64_t>();
    s.preset = entry.at("preset").get<std::string>();
    s.achievedIoU = entry.at("iou").get<double>();
    s.image = io::readPngRgb8((fs::path(dir) / "images" / (id + ".png")).string());

    std::ifstream af(fs::path(dir) / "annotations" / (id + ".json"));
    if (!af) throw DataError("dataset: missing annotation for scene " + id);
    json ann = json::parse(af);
    int S = ann.at("image_size").get<int>();
    std::size_t k = 0;
    for (const auto& ij : ann.at("instances")) {
      SceneInstance inst = instanceFromJson(ij);
      inst.mask = io::readPngGray8((fs::path(dir) / "masks" / (id + "_" + std::to_string(k) + ".png")).string());
      s.instances.push_back(std::move(inst));
      ++k;
    }
    std::vector<Vec2> centers;
    for (const auto& inst : s.instances) centers.push_back(inst.center);
    s.globalMap = renderCentermap(centers, S, S);
    scenes.push_back(std::move(s));
  }
  return scenes;
}

InstanceTarget targetFromInstance(const SceneInstance& inst, int imageSize) {
  InstanceTarget t;
  t.params = inst.params;
  t.keypoints2d = inst.keypoints2d;
  t.joints3d = inst.joints3d;
  t.imageWidth = imageSize;
  t.imageHeight = imageSize;
  return t;
}

}  // namespace cmr
