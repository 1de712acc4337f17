#pragma once

#include <vector>

#include "oga/models.hpp"
#include "oga/scene.hpp"

namespace oga {

struct PretrainOptions {
  int budget = 6000;  // max optimizer steps; 0 = no-op
  int batch = 2;
  double lr = 6e-3;
  int eval_every = 100;
  double target_conf = 0.8;      // detectors / segmenter target threshold
  double background_conf = 0.2;  // detectors / segmenter background threshold
  double depth_relerr = 0.15;    // depth threshold (mean relative error)
  double pos_weight = 64.0;      // BCE weight on positive cells/pixels
  double tau = 0.3;              // IoU threshold for the target metric
  uint64_t seed = 42;
};

struct PretrainMetrics {
  std::string status = "undertrained";  // "trained" | "undertrained"
  double target_conf = 0.0;
  double background_conf = 0.0;
  double seg_iou = 0.0;
  double depth_relerr = 0.0;
  int steps_used = 0;
};

/// Adam on weighted BCE (detectors, segmenter) or L2 to the rendered depth
/// (depth model), with early stop once the held-out thresholds are met.
PretrainMetrics pretrain(Model& model, const SceneParams& params,
                         const Mesh& mesh,
                         const std::vector<SceneView>& train_views,
                         const std::vector<SceneView>& held_out,
                         const PretrainOptions& opts);

/// Per-cell labels for a detector grid: 1 iff the cell center lies inside
/// the ground-truth box.
std::vector<double> cell_labels(int grid, const Box& gt);

}  // namespace oga
