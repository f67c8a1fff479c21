#include "cmr/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace cmr {

double mpjpe(const PointSet3D& pred, const PointSet3D& gt, int rootIndex) {
  if (pred.rows() != gt.rows() || pred.rows() == 0) throw Error("mpjpe: joint count mismatch");
  PointSet3D p = pred.rowwise() - pred.row(rootIndex);
  PointSet3D g = gt.rowwise() - gt.row(rootIndex);
  return (p - g).rowwise().norm().mean() * 1000.0;
}

double pmpjpe(const PointSet3D& pred, const PointSet3D& gt) {
  ProcrustesResult res = procrustesAlign(pred, gt);
  return (res.aligned - gt).rowwise().norm().mean() * 1000.0;
}

double pve(const Mesh& predMesh, const Mesh& gtMesh, const Vec3& predRoot, const Vec3& gtRoot) {
  if (predMesh.vertices.rows() != gtMesh.vertices.rows()) throw Error("pve: vertex count mismatch");
  PointSet3D p = predMesh.vertices.rowwise() - predRoot.transpose();
  PointSet3D g = gtMesh.vertices.rowwise() - gtRoot.transpose();
  return (p - g).rowwise().norm().mean() * 1000.0;
}

double oks(const Keypoints2D& pred, const Keypoints2D& gt, double area,
           const std::array<double, kNumKeypoints17>& sigmas) {
  if (pred.count() != kNumKeypoints17 || gt.count() != kNumKeypoints17)
    throw Error("oks: expected 17-keypoint layouts");
  double acc = 0;
  int n = 0;
  for (int k = 0; k < kNumKeypoints17; ++k) {
    if (!gt.visible[static_cast<std::size_t>(k)]) continue;
    double dx = pred.positions(k, 0) - gt.positions(k, 0);
    double dy = pred.positions(k, 1) - gt.positions(k, 1);
    double var = 4.0 * sigmas[static_cast<std::size_t>(k)] * sigmas[static_cast<std::size_t>(k)];
    double e = (dx * dx + dy * dy) / (2.0 * var * (area + 1e-9));
    acc += std::exp(-e);
    ++n;
  }
  return n > 0 ? acc / n : 0.0;
}

namespace {

struct Range {
  double lo, hi;
};

// One threshold, one area bucket: greedy matching, then 101-point AP.
void evalBucket(const std::vector<KeypointEvalImage>& images, double threshold, Range area, double* apOut,
                double* arOut) {
  struct Det {
    double score;
    int order;
    bool tp;
  };
  std::vector<Det> dets;
  int totalGt = 0;
  int order = 0;

  for (const KeypointEvalImage& img : images) {
    std::vector<int> predOrder(img.preds.size());
    std::iota(predOrder.begin(), predOrder.end(), 0);
    std::stable_sort(predOrder.begin(), predOrder.end(),
                     [&](int a, int b) { return img.preds[static_cast<std::size_t>(a)].score > img.preds[static_cast<std::size_t>(b)].score; });

    std::vector<bool> ignoredGt(img.gts.size());
    for (std::size_t g = 0; g < img.gts.size(); ++g) {
      ignoredGt[g] = img.gts[g].area < area.lo || img.gts[g].area >= area.hi;
      if (!ignoredGt[g]) ++totalGt;
    }

    std::vector<bool> taken(img.gts.size(), false);
    for (int pi : predOrder) {
      const DetectionInstance& det = img.preds[static_cast<std::size_t>(pi)];
      int best = -1;
      double bestOks = threshold;
      bool bestIgnored = false;
      // Prefer real ground truths; fall back to ignored ones.
      for (int pass = 0; pass < 2; ++pass) {
        for (std::size_t g = 0; g < img.gts.size(); ++g) {
          if (taken[g] || ignoredGt[g] != (pass == 1)) continue;
          double o = oks(det.keypoints, img.gts[g].keypoints, img.gts[g].area);
          if (o >= bestOks) {
            bestOks = o + 1e-12;  // strict improvement for deterministic ties
            best = static_cast<int>(g);
            bestIgnored = pass == 1;
          }
        }
        if (best >= 0) break;
      }
      if (best >= 0) {
        taken[static_cast<std::size_t>(best)] = true;
        if (!bestIgnored) dets.push_back({det.score, order++, true});
        // matches to ignored GTs drop out of the evaluation entirely
      } else {
        dets.push_back({det.score, order++, false});
      }
    }
  }

  if (totalGt == 0) {
    *apOut = -1;
    *arOut = -1;
    return;
  }
  std::stable_sort(dets.begin(), dets.end(), [](const Det& a, const Det& b) { return a.score > b.score; });

  std::vector<double> precision, recall;
  int tp = 0, fp = 0;
  for (const Det& d : dets) {
    d.tp ? ++tp : ++fp;
    precision.push_back(static_cast<double>(tp) / (tp + fp));
    recall.push_back(static_cast<double>(tp) / totalGt);
  }
  // Monotone precision envelope, then 101-point interpolation.
  for (int i = static_cast<int>(precision.size()) - 2; i >= 0; --i)
    precision[static_cast<std::size_t>(i)] = std::max(precision[static_cast<std::size_t>(i)], precision[static_cast<std::size_t>(i) + 1]);
  double ap = 0;
  std::size_t idx = 0;
  for (int r = 0; r <= 100; ++r) {
    double target = r / 100.0;
    while (idx < recall.size() && recall[idx] < target) ++idx;
    if (idx < recall.size()) ap += precision[idx];
  }
  *apOut = ap / 101.0;
  *arOut = recall.empty() ? 0.0 : recall.back();
}

double meanOverThresholds(const std::vector<KeypointEvalImage>& images, const std::vector<double>& thresholds,
                          Range area, double* arOut) {
  double apAcc = 0, arAcc = 0;
  int n = 0;
  for (double t : thresholds) {
    double ap, ar;
    evalBucket(images, t, area, &ap, &ar);
    if (ap < 0) {
      if (arOut) *arOut = -1;
      return -1;
    }
    apAcc += ap;
    arAcc += ar;
    ++n;
  }
  if (arOut) *arOut = arAcc / n;
  return apAcc / n;
}

}  // namespace

ApResult averagePrecision(const std::vector<KeypointEvalImage>& images, const std::vector<double>& thresholds) {
  if (thresholds.empty()) throw Error("averagePrecision: need at least one threshold");
  ApResult res;
  const Range all{0.0, std::numeric_limits<double>::infinity()};
  const Range medium{32.0 * 32.0, 96.0 * 96.0};
  const Range large{96.0 * 96.0, std::numeric_limits<double>::infinity()};

  res.ap = meanOverThresholds(images, thresholds, all, &res.ar);
  double arTmp;
  evalBucket(images, 0.5, all, &res.ap50, &arTmp);
  evalBucket(images, 0.75, all, &res.ap75, &arTmp);
  res.apMedium = meanOverThresholds(images, thresholds, medium, nullptr);
  res.apLarge = meanOverThresholds(images, thresholds, large, nullptr);
  return res;
}

}  // namespace cmr
