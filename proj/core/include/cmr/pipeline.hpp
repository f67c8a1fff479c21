#pragma once

#include <map>
#include <string>
#include <vector>

#include "cmr/config.hpp"
#include "cmr/metrics.hpp"
#include "cmr/synthdata.hpp"

namespace cmr {

// Trained model bundle: config snapshot, regressor (and optionally the
// context estimator) parameters, optimizer state, step counter.
struct Checkpoint {
  RunConfig config;
  long step = 0;
  long adamStep = 0;
  ConditionedRegressor<float> regressor;
  ContextEstimator<float> contextEstimator;
  bool hasContextEstimator = false;
  // Adam moments keyed by parameter name (restored on resume).
  std::map<std::string, std::pair<TensorF, TensorF>> adamState;

  void save(const std::string& path) const;
  static Checkpoint load(const std::string& path);
};

// Per-step loss components, one CSV row per step.
struct StepLog {
  long step = 0;
  double total = 0, single = 0, collision = 0, depth = 0, context = 0;
};

struct TrainResult {
  std::string finalCheckpoint;
  std::string bestCheckpoint;
  double firstLoss = 0, finalLoss = 0;
  std::vector<StepLog> log;
};

// Command implementations shared by the CLI and the test suites.
void cmdGenData(const RunConfig& cfg, const std::string& outDir);
TrainResult cmdTrain(const RunConfig& cfg, const std::string& datasetDir, const std::string& outDir,
                     const std::string& resumeFrom = "");

struct EvalOptions {
  bool estimatedContext = false;  // additionally evaluate with F-predicted centers
};
std::string cmdEval(const std::string& checkpointPath, const std::string& datasetDir, const EvalOptions& opts = {});

// Sweep spec: {"axes": [{"key": "<config path>", "values": [...]}, ...]};
// runs the cross-product and writes one CSV row per run.
void cmdAblate(const RunConfig& base, const std::string& sweepSpecJson, const std::string& trainDir,
               const std::string& evalDir, const std::string& outDir);

std::string cmdInfer(const std::string& checkpointPath, const std::string& imagePath,
                     const std::vector<Vec2>& centers, bool useContextEstimator);

void cmdVisualize(const std::string& checkpointPath, const std::string& datasetDir, int sceneIndex,
                  const std::string& outDir);

}  // namespace cmr
