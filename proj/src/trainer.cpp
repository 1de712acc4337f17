#include "oga/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "oga/threading.hpp"

namespace oga {

Tensor std_mask(int h, int w, double p, int block, Rng& rng) {
  if (p < 0.0 || p > 1.0) {
    throw std::invalid_argument("std_mask: p must be in [0,1]");
  }
  if (block < 1) throw std::invalid_argument("std_mask: block must be >= 1");
  Tensor mask(Shape{h, w}, 1.0);
  const int64_t total = int64_t(h) * w;
  const int64_t target = int64_t(std::llround(p * double(total)));
  int64_t dropped = 0;
  while (dropped < target) {
    const int y0 = int(rng.uniform_int(h));
    const int x0 = int(rng.uniform_int(w));
    for (int y = y0; y < std::min(y0 + block, h); ++y) {
      for (int x = x0; x < std::min(x0 + block, w); ++x) {
        double& cell = mask.at2(y, x);
        if (cell != 0.0) {
          cell = 0.0;
          ++dropped;
        }
      }
    }
  }
  return mask;
}

Tensor apply_vtg(const Tensor& grad, const Tensor& visibility) {
  if (grad.rank() != 3 || visibility.rank() != 2 ||
      grad.shape[0] != visibility.shape[0] ||
      grad.shape[1] != visibility.shape[1]) {
    throw std::invalid_argument("apply_vtg: shape mismatch");
  }
  Tensor out(grad.shape);
  const int c = grad.shape[2];
  for (int64_t pix = 0; pix < visibility.numel(); ++pix) {
    const double v = visibility.data[size_t(pix)];
    for (int ch = 0; ch < c; ++ch) {
      out.data[size_t(pix) * c + ch] = grad.data[size_t(pix) * c + ch] * v;
    }
  }
  return out;
}

Var SurrogateObjective::build(Graph& g, Var texture_raw, Var texture_live,
                              const SceneView& view, const RenderPlan& plan,
                              const SceneParams& params,
                              LossReport* report) const {
  (void)params;
  Tensor background = make_background(view.background_seed, plan.img_h,
                                      plan.img_w);
  Var img = render_image_node(g, plan, texture_live);
  Var adv = composite_node(g, img, background, plan.screen_mask);
  ModelGraph mg = model_.build(g, adv, false);

  Var task;
  bool with_features = true;
  switch (model_.task()) {
    case Task::kDetect:
      task = detection_loss(
          g, mg.output,
          hazardous_boxes(model_.cell_boxes(), plan.gt_box, opts_.tau));
      break;
    case Task::kSegment:
      task = segmentation_loss(g, mg.output, plan.screen_mask);
      break;
    case Task::kDepth:
      task = depth_loss(g, mg.output, plan.screen_mask);
      with_features = false;  // depth branch carries no feature loss
      break;
  }
  const double texels =
      double(g.value(texture_raw).shape[0]) * g.value(texture_raw).shape[1];
  Var smooth = g.mul(smooth_loss(g, texture_raw),
                     g.constant_scalar(1.0 / texels));
  Var total = g.mul(task, g.constant_scalar(opts_.lambda_det));
  Var fea;
  if (with_features && opts_.lambda_fea != 0.0) {
    fea = feature_loss(g, mg.features, plan.screen_mask);
    total = g.add(total, g.mul(fea, g.constant_scalar(opts_.lambda_fea)));
  }
  total = g.add(total, g.mul(smooth, g.constant_scalar(opts_.lambda_smo)));
  if (report != nullptr) {
    report->model = model_.name();
    report->task = g.value(task).data[0];
    report->feature = fea.valid() ? g.value(fea).data[0] : 0.0;
    report->smooth = g.value(smooth).data[0];
    report->total = g.value(total).data[0];
  }
  return total;
}

void attack_step(AttackState& state, const std::vector<SceneView>& batch,
                 const std::vector<const Objective*>& objectives,
                 const SceneParams& params, const Mesh& mesh,
                 const AttackOptions& opts) {
  if (batch.empty() || objectives.empty()) {
    throw std::invalid_argument("attack_step: empty batch or ensemble");
  }
  const int n = int(objectives.size());
  const Shape tex_shape = state.texture.shape;

  // Stochastic texture dropout: one spatial mask per step, dropped texels
  // render mid-gray.
  Tensor live_mask3(tex_shape, 1.0);
  Tensor live_bias(tex_shape, 0.0);
  if (opts.std_p > 0.0) {
    Rng rng(derive_seed(opts.seed, "std", uint64_t(state.step)));
    Tensor m = std_mask(tex_shape[0], tex_shape[1], opts.std_p,
                        opts.std_block, rng);
    for (int64_t pix = 0; pix < m.numel(); ++pix) {
      for (int ch = 0; ch < 3; ++ch) {
        live_mask3.data[size_t(pix) * 3 + ch] = m.data[size_t(pix)];
        live_bias.data[size_t(pix) * 3 + ch] =
            0.5 * (1.0 - m.data[size_t(pix)]);
      }
    }
  }

  std::vector<RenderPlan> plans;
  plans.reserve(batch.size());
  for (const SceneView& view : batch) {
    plans.push_back(plan_render(mesh, view.pose, view.illum,
                                params.image_size, params.image_size,
                                view.offset_x, view.offset_y));
  }

  StepRecord record;
  record.step = state.step;
  record.epoch = state.epoch;
  record.models.resize(size_t(n));

  // One graph per (model, view); tasks only write their own slot, so the
  // merged result is independent of scheduling.
  const int vcount = int(batch.size());
  std::vector<Tensor> task_grads(size_t(n) * vcount);
  std::vector<LossReport> task_reports(size_t(n) * vcount);
  parallel_for(n * vcount, [&](int t) {
    const int k = t / vcount;
    const int vi = t % vcount;
    Graph g;
    Var raw = g.input("texture", state.texture);
    Var live = raw;
    if (opts.std_p > 0.0) {
      live = g.add(g.mul(raw, g.constant(live_mask3, "std_mask")),
                   g.constant(live_bias, "std_bias"));
    }
    Var total = objectives[size_t(k)]->build(g, raw, live, batch[size_t(vi)],
                                             plans[size_t(vi)], params,
                                             &task_reports[size_t(t)]);
    task_grads[size_t(t)] = g.backward(total, Tensor::scalar(1.0)).at("texture");
  });

  GradientSet grads;
  grads.grads.assign(size_t(n), Tensor(tex_shape));
  std::vector<double> totals(size_t(n), 0.0);
  const double inv = 1.0 / double(vcount);
  for (int k = 0; k < n; ++k) {
    LossReport mean_report;
    for (int vi = 0; vi < vcount; ++vi) {
      const int t = k * vcount + vi;
      const Tensor& grad = task_grads[size_t(t)];
      for (int64_t i = 0; i < grad.numel(); ++i) {
        grads.grads[size_t(k)].data[size_t(i)] += grad.data[size_t(i)] * inv;
      }
      const LossReport& report = task_reports[size_t(t)];
      mean_report.model = report.model;
      mean_report.task += report.task * inv;
      mean_report.feature += report.feature * inv;
      mean_report.smooth += report.smooth * inv;
      mean_report.total += report.total * inv;
    }
    record.models[size_t(k)] = mean_report;
    totals[size_t(k)] = std::max(mean_report.total, 0.0);
  }

  FusionWeights weights = task_weights(totals);
  record.omega = weights.omega;

  Tensor fused;
  if (n == 1) {
    // single-model run degenerates to plain descent under every strategy
    fused = grads.grads[0];
  } else if (opts.fusion == "oga") {
    fused = opts.oga_patch > 0
                ? oga_fuse(grads, weights, opts.oga_patch, opts.eps_floor)
                : oga_fuse_global(grads, weights, opts.eps_floor);
  } else {
    fused = baseline_fuse(grads, weights, baseline_from_string(opts.fusion));
  }

  Tensor vtg_vis;
  if (opts.vtg) {
    vtg_vis = Tensor(Shape{tex_shape[0], tex_shape[1]});
    for (const RenderPlan& plan : plans) {
      for (int64_t i = 0; i < vtg_vis.numel(); ++i) {
        if (plan.texel_visibility.data[size_t(i)] > 0.0) {
          vtg_vis.data[size_t(i)] = 1.0;
        }
      }
    }
    fused = apply_vtg(fused, vtg_vis);
  }

  record.fused_norm = fused.norm();
  record.stalled = record.fused_norm == 0.0;
  if (!record.stalled && opts.lr != 0.0) {
    if (opts.optimizer == "gd") {
      for (int64_t i = 0; i < state.texture.numel(); ++i) {
        state.texture.data[size_t(i)] = std::clamp(
            state.texture.data[size_t(i)] - opts.lr * fused.data[size_t(i)],
            0.0, 1.0);
      }
    } else if (opts.optimizer == "normalized-gd") {
      const double scale = 1.0 / fused.max_abs();
      for (int64_t i = 0; i < state.texture.numel(); ++i) {
        state.texture.data[size_t(i)] = std::clamp(
            state.texture.data[size_t(i)] -
                opts.lr * scale * fused.data[size_t(i)],
            0.0, 1.0);
      }
    } else if (opts.optimizer == "adam") {
      if (state.adam_t == 0) {
        state.adam_m = Tensor(tex_shape);
        state.adam_v = Tensor(tex_shape);
      }
      state.adam_t += 1;
      const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
      const double c1 = 1.0 - std::pow(b1, double(state.adam_t));
      const double c2 = 1.0 - std::pow(b2, double(state.adam_t));
      for (int64_t i = 0; i < state.texture.numel(); ++i) {
        double& m = state.adam_m.data[size_t(i)];
        double& v = state.adam_v.data[size_t(i)];
        const double gv = fused.data[size_t(i)];
        m = b1 * m + (1.0 - b1) * gv;
        v = b2 * v + (1.0 - b2) * gv * gv;
        double delta = opts.lr * (m / c1) / (std::sqrt(v / c2) + eps);
        // momentum must not leak updates into texels the VTG gated out
        if (opts.vtg && vtg_vis.data[size_t(i / 3)] == 0.0) delta = 0.0;
        state.texture.data[size_t(i)] =
            std::clamp(state.texture.data[size_t(i)] - delta, 0.0, 1.0);
      }
    } else {
      throw std::invalid_argument("unknown optimizer '" + opts.optimizer +
                                  "'");
    }
  }
  state.step += 1;
  state.history.push_back(std::move(record));
}

namespace {

double average_precision(
    std::vector<std::pair<double, bool>>& scored_matches, int gt_count) {
  // scored_matches: (confidence, is_true_positive), any order.
  std::stable_sort(scored_matches.begin(), scored_matches.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  std::vector<double> precision, recall;
  int tp = 0, fp = 0;
  for (const auto& [conf, is_tp] : scored_matches) {
    if (is_tp) ++tp; else ++fp;
    precision.push_back(double(tp) / double(tp + fp));
    recall.push_back(gt_count > 0 ? double(tp) / double(gt_count) : 0.0);
  }
  double ap = 0.0;
  for (int k = 0; k <= 10; ++k) {
    const double r = k / 10.0;
    double pmax = 0.0;
    for (size_t i = 0; i < recall.size(); ++i) {
      if (recall[i] >= r) pmax = std::max(pmax, precision[i]);
    }
    ap += pmax / 11.0;
  }
  return ap;
}

}  // namespace

EvalResult evaluate(const Tensor& texture, const std::vector<Model>& models,
                    const std::vector<SceneView>& views,
                    const SceneParams& params, const Mesh& mesh, double tau) {
  if (views.empty()) throw std::invalid_argument("evaluate: empty view set");
  EvalResult result;
  result.models.resize(models.size());

  // Realize each view once with the attack texture.
  std::vector<RealizedView> realized(views.size(), RealizedView{});
  parallel_for(int(views.size()), [&](int vi) {
    realized[size_t(vi)] = realize_view(views[size_t(vi)], params, mesh,
                                        texture);
  });

  double asr_sum = 0.0;
  int detector_count = 0;
  for (size_t mi = 0; mi < models.size(); ++mi) {
    const Model& model = models[mi];
    ModelEval& ev = result.models[mi];
    ev.model = model.name();
    ev.task = model.task();
    switch (model.task()) {
      case Task::kDetect: {
        std::vector<Box> boxes = model.cell_boxes();
        std::vector<double> view_conf(views.size(), 0.0);
        std::vector<std::vector<std::pair<double, bool>>> view_scored(
            views.size());
        parallel_for(int(views.size()), [&](int vi) {
          Graph g;
          ModelGraph mg = model.build(
              g, g.constant(realized[size_t(vi)].image, "image"), false);
          const Tensor& conf = g.value(mg.output);
          std::vector<char> hz =
              hazardous_boxes(boxes, realized[size_t(vi)].gt, tau);
          double target_conf = 0.0;  // empty hazardous set counts as 0
          bool gt_matched = false;   // one ground truth per view
          std::vector<int> order(boxes.size());
          std::iota(order.begin(), order.end(), 0);
          std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
            return conf.data[size_t(a)] > conf.data[size_t(b)];
          });
          for (int idx : order) {
            const bool overlaps = hz[size_t(idx)] != 0;
            if (overlaps) {
              target_conf = std::max(target_conf, conf.data[size_t(idx)]);
            }
            bool tp = false;
            if (overlaps && !gt_matched) {
              tp = true;
              gt_matched = true;
            }
            view_scored[size_t(vi)].emplace_back(conf.data[size_t(idx)], tp);
          }
          view_conf[size_t(vi)] = target_conf;
        });
        std::vector<std::pair<double, bool>> scored;
        int below = 0;
        double conf_sum = 0.0;
        for (size_t vi = 0; vi < views.size(); ++vi) {
          ev.per_view_confidence.push_back(view_conf[vi]);
          conf_sum += view_conf[vi];
          if (view_conf[vi] < 0.5) ++below;
          scored.insert(scored.end(), view_scored[vi].begin(),
                        view_scored[vi].end());
        }
        ev.asr = double(below) / double(views.size());
        ev.mean_confidence = conf_sum / double(views.size());
        ev.ap = average_precision(scored, int(views.size()));
        asr_sum += ev.asr;
        ++detector_count;
        break;
      }
      case Task::kSegment:
      case Task::kDepth: {
        std::vector<double> losses(views.size(), 0.0);
        parallel_for(int(views.size()), [&](int vi) {
          Graph g;
          ModelGraph mg = model.build(
              g, g.constant(realized[size_t(vi)].image, "image"), false);
          Var loss =
              model.task() == Task::kSegment
                  ? segmentation_loss(g, mg.output,
                                      realized[size_t(vi)].screen_mask)
                  : depth_loss(g, mg.output, realized[size_t(vi)].screen_mask);
          losses[size_t(vi)] = g.value(loss).data[0];
        });
        double loss_sum = 0.0;
        for (double l : losses) loss_sum += l;
        ev.mean_task_loss = loss_sum / double(views.size());
        break;
      }
    }
  }
  result.ensemble_mean_asr =
      detector_count > 0 ? asr_sum / double(detector_count) : 0.0;
  return result;
}

AttackRun run_attack(const std::vector<const Objective*>& objectives,
                     const std::vector<SceneView>& train_views,
                     const SceneParams& params, const Mesh& mesh,
                     const AttackRunConfig& cfg) {
  if (train_views.empty()) {
    throw std::invalid_argument("run_attack: no training views");
  }
  AttackRun run;
  Rng init_rng(derive_seed(cfg.options.seed, "texture-init"));
  run.initial_texture = Tensor::uniform(
      Shape{params.atlas_h, params.atlas_w, 3}, init_rng, 0.25, 0.75);

  AttackState state;
  state.texture = run.initial_texture;
  state.seed = cfg.options.seed;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    state.epoch = epoch;
    Rng batch_rng(derive_seed(cfg.options.seed, "minibatch", uint64_t(epoch)));
    for (int s = 0; s < cfg.steps_per_epoch; ++s) {
      std::vector<SceneView> batch;
      batch.reserve(size_t(cfg.minibatch));
      for (int b = 0; b < cfg.minibatch; ++b) {
        batch.push_back(train_views[size_t(
            batch_rng.uniform_int(int64_t(train_views.size())))]);
      }
      attack_step(state, batch, objectives, params, mesh, cfg.options);
    }
    run.epoch_checkpoints.push_back(state.texture);
  }
  run.final_texture = state.texture;
  run.history = std::move(state.history);
  return run;
}

}  // namespace oga
