#pragma once

#include <memory>
#include <string>
#include <vector>

#include "oga/fusion.hpp"
#include "oga/models.hpp"
#include "oga/rng.hpp"
#include "oga/scene.hpp"

namespace oga {

struct AttackOptions {
  double lr = 0.01;
  double tau = 0.3;
  double lambda_det = 1.0;
  double lambda_fea = 1.0;
  double lambda_smo = 0.1;
  double std_p = 0.1;
  int std_block = 8;
  int oga_patch = 16;          // 0 = single global patch
  double eps_floor = 1e-10;
  std::string fusion = "oga";  // oga | equal-sum | norm-average | conflict-project
  // gd = raw descent; normalized-gd = fused gradient scaled to unit max-abs
  // before the lr (texture-scale independent); adam = per-texel adaptive.
  std::string optimizer = "adam";
  bool vtg = true;
  uint64_t seed = 42;
};

struct StepRecord {
  int step = 0;
  int epoch = 0;
  std::vector<LossReport> models;
  double fused_norm = 0.0;
  std::vector<double> omega;
  bool stalled = false;
};

struct AttackState {
  Tensor texture;  // clamped to [0,1] after every update
  int step = 0;
  int epoch = 0;
  uint64_t seed = 0;
  std::vector<StepRecord> history;
  // adam optimizer state (allocated lazily when the adam optimizer runs)
  Tensor adam_m, adam_v;
  int64_t adam_t = 0;
};

/// Binary spatial dropout mask built from square blocks; the union of
/// dropped blocks covers ~p of the texels (overshoot < one block).
Tensor std_mask(int h, int w, double p, int block, Rng& rng);

/// grad (H,W,C) gated by texel visibility (H,W), broadcast over channels.
Tensor apply_vtg(const Tensor& grad, const Tensor& visibility);

/// Per-model objective recorded on a graph. `texture_raw` is the optimized
/// variable (smooth loss attaches here); `texture_live` is the post-dropout
/// texture the renderer consumes.
class Objective {
 public:
  virtual ~Objective() = default;
  virtual std::string objective_name() const = 0;
  virtual Var build(Graph& g, Var texture_raw, Var texture_live,
                    const SceneView& view, const RenderPlan& plan,
                    const SceneParams& params, LossReport* report) const = 0;
};

/// Render -> composite -> surrogate forward -> task + feature + smooth loss.
class SurrogateObjective : public Objective {
 public:
  SurrogateObjective(const Model& model, const AttackOptions& opts)
      : model_(model), opts_(opts) {}
  std::string objective_name() const override { return model_.name(); }
  Var build(Graph& g, Var texture_raw, Var texture_live, const SceneView& view,
            const RenderPlan& plan, const SceneParams& params,
            LossReport* report) const override;

 private:
  const Model& model_;
  AttackOptions opts_;
};

/// One optimization step over a minibatch of views: STD, per-model losses
/// and texture gradients, dynamic weights, fusion, VTG gating, clamped
/// descent update. Appends one history record.
void attack_step(AttackState& state, const std::vector<SceneView>& batch,
                 const std::vector<const Objective*>& objectives,
                 const SceneParams& params, const Mesh& mesh,
                 const AttackOptions& opts);

struct ModelEval {
  std::string model;
  Task task = Task::kDetect;
  double asr = 0.0;
  double ap = 0.0;
  double mean_confidence = 0.0;
  double mean_task_loss = 0.0;  // segmentation / depth branches
  std::vector<double> per_view_confidence;
};

struct EvalResult {
  std::vector<ModelEval> models;
  double ensemble_mean_asr = 0.0;  // over detector models
};

/// Held-out evaluation: per-view target confidence is the max confidence
/// over detections whose IoU with the ground truth exceeds tau (0 when the
/// hazardous set is empty); ASR counts views strictly below 0.5. AP uses
/// 11-point interpolation over all detections across views.
EvalResult evaluate(const Tensor& texture, const std::vector<Model>& models,
                    const std::vector<SceneView>& views,
                    const SceneParams& params, const Mesh& mesh, double tau);

struct AttackRunConfig {
  int epochs = 10;
  int steps_per_epoch = 50;
  int minibatch = 4;
  AttackOptions options;
};

struct AttackRun {
  Tensor initial_texture;
  Tensor final_texture;
  std::vector<StepRecord> history;
  std::vector<Tensor> epoch_checkpoints;
};

/// Algorithm-level loop: seeded texture init, epoch x step minibatch
/// sampling, per-epoch checkpoints.
AttackRun run_attack(const std::vector<const Objective*>& objectives,
                     const std::vector<SceneView>& train_views,
                     const SceneParams& params, const Mesh& mesh,
                     const AttackRunConfig& cfg);

}  // namespace oga
