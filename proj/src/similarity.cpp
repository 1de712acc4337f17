#include "oga/similarity.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "oga/threading.hpp"

namespace oga {

namespace {
constexpr double kNormFloor = 1e-12;
}

Tensor task_gradient(const Model& model, const SceneView& view,
                     const SceneParams& params, const Mesh& mesh,
                     const Tensor& texture, double tau) {
  RenderPlan plan = plan_render(mesh, view.pose, view.illum,
                                params.image_size, params.image_size,
                                view.offset_x, view.offset_y);
  Tensor background = make_background(view.background_seed, params.image_size,
                                      params.image_size);
  Graph g;
  Var tex = g.input("texture", texture);
  Var img = render_image_node(g, plan, tex);
  Var adv = composite_node(g, img, background, plan.screen_mask);
  ModelGraph mg = model.build(g, adv, false);
  Var loss;
  switch (model.task()) {
    case Task::kDetect:
      loss = detection_loss(
          g, mg.output, hazardous_boxes(model.cell_boxes(), plan.gt_box, tau));
      break;
    case Task::kSegment:
      loss = segmentation_loss(g, mg.output, plan.screen_mask);
      break;
    case Task::kDepth:
      loss = depth_loss(g, mg.output, plan.screen_mask);
      break;
  }
  return g.backward(loss, Tensor::scalar(1.0)).at("texture");
}

double gradient_cosine(const std::function<Tensor(int)>& grads_a,
                       const std::function<Tensor(int)>& grads_b,
                       int view_count) {
  if (view_count < 1) {
    throw std::invalid_argument("gradient_cosine: need at least one view");
  }
  double acc = 0.0;
  int used = 0;
  for (int i = 0; i < view_count; ++i) {
    Tensor ga = grads_a(i);
    Tensor gb = grads_b(i);
    const double na = ga.norm();
    const double nb = gb.norm();
    if (na < kNormFloor || nb < kNormFloor) continue;
    acc += dot(ga, gb) / (na * nb);
    ++used;
  }
  if (used == 0) {
    throw std::runtime_error(
        "gradient_cosine: every view excluded (vanished gradients)");
  }
  return acc / double(used);
}

double gradient_cosine(const Model& a, const Model& b,
                       const std::vector<SceneView>& views,
                       const SceneParams& params, const Mesh& mesh,
                       const Tensor& texture, double tau) {
  return gradient_cosine(
      [&](int i) {
        return task_gradient(a, views[size_t(i)], params, mesh, texture, tau);
      },
      [&](int i) {
        return task_gradient(b, views[size_t(i)], params, mesh, texture, tau);
      },
      int(views.size()));
}

SimilarityMatrix similarity_matrix(const std::vector<Model>& pool,
                                   const std::vector<SceneView>& views,
                                   const SceneParams& params, const Mesh& mesh,
                                   const Tensor& texture, double tau) {
  const int n = int(pool.size());
  if (n < 2) {
    throw std::invalid_argument("similarity_matrix: pool size must be >= 2");
  }
  if (views.empty()) {
    throw std::invalid_argument("similarity_matrix: no views");
  }
  // Accumulate pairwise cosine sums one view at a time so only one view's
  // gradients are alive at once.
  std::vector<double> cos_sum(size_t(n) * n, 0.0);
  std::vector<int> cos_cnt(size_t(n) * n, 0);
  for (const SceneView& view : views) {
    std::vector<Tensor> grads(size_t(n), Tensor{});
    std::vector<double> norms(size_t(n), 0.0);
    parallel_for(n, [&](int k) {
      grads[size_t(k)] =
          task_gradient(pool[size_t(k)], view, params, mesh, texture, tau);
      norms[size_t(k)] = grads[size_t(k)].norm();
    });
    for (int a = 0; a < n; ++a) {
      for (int b = a + 1; b < n; ++b) {
        if (norms[size_t(a)] < kNormFloor || norms[size_t(b)] < kNormFloor) {
          continue;
        }
        const double c = dot(grads[size_t(a)], grads[size_t(b)]) /
                         (norms[size_t(a)] * norms[size_t(b)]);
        cos_sum[size_t(a) * n + b] += c;
        cos_cnt[size_t(a) * n + b] += 1;
      }
    }
  }
  SimilarityMatrix m;
  m.n = n;
  m.entries.assign(size_t(n) * n, 0.0);
  for (int a = 0; a < n; ++a) m.entries[size_t(a) * n + a] = 1.0;
  for (int a = 0; a < n; ++a) {
    for (int b = a + 1; b < n; ++b) {
      if (cos_cnt[size_t(a) * n + b] == 0) {
        throw std::runtime_error("similarity_matrix: every view excluded for " +
                                 pool[size_t(a)].name() + " vs " +
                                 pool[size_t(b)].name());
      }
      const double v =
          cos_sum[size_t(a) * n + b] / double(cos_cnt[size_t(a) * n + b]);
      m.entries[size_t(a) * n + b] = v;
      m.entries[size_t(b) * n + a] = v;
    }
  }
  return m;
}

std::vector<int> greedy_select(const SimilarityMatrix& matrix, int n) {
  const int pool = matrix.n;
  if (n < 2 || n > pool) {
    throw std::invalid_argument("greedy_select: n out of range");
  }
  // Seed: globally least-similar unordered pair, lowest indices on ties.
  int best_a = 0, best_b = 1;
  double best = matrix.at(0, 1);
  for (int a = 0; a < pool; ++a) {
    for (int b = a + 1; b < pool; ++b) {
      if (matrix.at(a, b) < best) {
        best = matrix.at(a, b);
        best_a = a;
        best_b = b;
      }
    }
  }
  std::vector<int> chosen = {best_a, best_b};
  std::vector<bool> in_set(size_t(pool), false);
  in_set[size_t(best_a)] = in_set[size_t(best_b)] = true;
  while (int(chosen.size()) < n) {
    int pick = -1;
    double pick_score = 0.0;
    for (int c = 0; c < pool; ++c) {
      if (in_set[size_t(c)]) continue;
      double max_sim = -1e300;
      for (int e : chosen) max_sim = std::max(max_sim, matrix.at(c, e));
      if (pick < 0 || max_sim < pick_score) {
        pick = c;
        pick_score = max_sim;
      }
    }
    chosen.push_back(pick);
    in_set[size_t(pick)] = true;
  }
  std::sort(chosen.begin(), chosen.end());
  return chosen;
}

}  // namespace oga
