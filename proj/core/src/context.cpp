#include "cmr/context.hpp"

#include <algorithm>
#include <cmath>

namespace cmr {

std::optional<Vec2> computeBodyCenter(const Keypoints2D& kp, std::span<const int> torsoIndices) {
  Vec2 acc = Vec2::Zero();
  int n = 0;
  for (int idx : torsoIndices) {
    if (idx < 0 || idx >= kp.count()) throw Error("computeBodyCenter: torso index out of range");
    if (kp.visible[static_cast<std::size_t>(idx)]) {
      acc += kp.positions.row(idx).transpose();
      ++n;
    }
  }
  if (n == 0) {
    for (int i = 0; i < kp.count(); ++i) {
      if (kp.visible[static_cast<std::size_t>(i)]) {
        acc += kp.positions.row(i).transpose();
        ++n;
      }
    }
  }
  if (n == 0) return std::nullopt;
  return acc / static_cast<double>(n);
}

CenterMap renderCentermap(const std::vector<Vec2>& centers, int height, int width, double sigma) {
  if (sigma <= 0) throw ConfigError("renderCentermap: sigma must be positive");
  CenterMap map({height, width});
  const double inv = 1.0 / (2.0 * sigma * sigma);
  for (const Vec2& c : centers) {
    for (int y = 0; y < height; ++y) {
      double dy = y - c.y();
      for (int x = 0; x < width; ++x) {
        double dx = x - c.x();
        float g = static_cast<float>(std::exp(-(dx * dx + dy * dy) * inv));
        float& px = map.at(y, x);
        if (g > px) px = g;
      }
    }
  }
  return map;
}

std::vector<CenterDetection> extractLocalCentermaps(const CenterMap& globalMap, double threshold, double sigma) {
  if (!(threshold > 0.0 && threshold < 1.0)) throw ConfigError("extractLocalCentermaps: threshold must be in (0,1)");
  const int H = globalMap.dim(0), W = globalMap.dim(1);
  const int r = kPeakWindow / 2;
  std::vector<CenterDetection> out;
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      float v = globalMap.at(y, x);
      if (v <= threshold) continue;
      bool isPeak = true;
      for (int dy = -r; dy <= r && isPeak; ++dy)
        for (int dx = -r; dx <= r; ++dx) {
          if (dy == 0 && dx == 0) continue;
          int ny = y + dy, nx = x + dx;
          if (ny < 0 || ny >= H || nx < 0 || nx >= W) continue;
          float nv = globalMap.at(ny, nx);
          // Strict maximum with row-major tie-breaking: an equal-valued
          // neighbor earlier in scan order claims the plateau.
          if (nv > v || (nv == v && (ny < y || (ny == y && nx < x)))) {
            isPeak = false;
            break;
          }
        }
      if (isPeak) {
        CenterDetection det;
        det.center = Vec2(x, y);
        det.peak = v;
        out.push_back(std::move(det));
      }
    }
  std::stable_sort(out.begin(), out.end(), [](const CenterDetection& a, const CenterDetection& b) { return a.peak > b.peak; });
  for (CenterDetection& det : out) det.localMap = renderCentermap({det.center}, H, W, sigma);
  return out;
}

InstanceContext makeInstanceContext(const CenterMap& globalMap, const CenterMap& localMap) {
  if (!globalMap.sameShape(localMap)) throw Error("makeInstanceContext: map shapes differ");
  const int H = globalMap.dim(0), W = globalMap.dim(1);
  InstanceContext ctx({2, H, W});
  std::copy(globalMap.data(), globalMap.data() + globalMap.size(), ctx.data());
  std::copy(localMap.data(), localMap.data() + localMap.size(), ctx.data() + globalMap.size());
  return ctx;
}

TensorF renderKeypointHeatmaps(const Keypoints2D& kp17, int height, int width, double sigma) {
  if (kp17.count() != kNumKeypoints17) throw ConfigError("renderKeypointHeatmaps: expected 17 keypoints");
  TensorF maps({kNumKeypoints17, height, width});
  const double inv = 1.0 / (2.0 * sigma * sigma);
  for (int k = 0; k < kNumKeypoints17; ++k) {
    if (!kp17.visible[static_cast<std::size_t>(k)]) continue;
    double cx = kp17.positions(k, 0), cy = kp17.positions(k, 1);
    for (int y = 0; y < height; ++y) {
      double dy = y - cy;
      for (int x = 0; x < width; ++x) {
        double dx = x - cx;
        maps.at(k, y, x) = static_cast<float>(std::exp(-(dx * dx + dy * dy) * inv));
      }
    }
  }
  return maps;
}

double lossContext(const CenterMap& pred, const CenterMap& gt) {
  if (!pred.sameShape(gt)) throw Error("lossContext: map shapes differ");
  double acc = 0;
  for (std::int64_t i = 0; i < pred.size(); ++i) {
    double d = static_cast<double>(pred[i]) - static_cast<double>(gt[i]);
    acc += d * d;
  }
  return acc / static_cast<double>(pred.size());
}

CenterMap estimateContext(ContextEstimator<float>& estimator, const TensorF& image) {
  nn::Graph<float> g;
  g.train = false;
  auto out = estimator.forward(g, g.input(image));
  const auto& t = out.val();
  return t.reshaped({t.dim(1), t.dim(2)});
}

}  // namespace cmr
