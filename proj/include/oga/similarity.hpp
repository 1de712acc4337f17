#pragma once

#include <functional>
#include <vector>

#include "oga/models.hpp"
#include "oga/scene.hpp"

namespace oga {

struct SimilarityMatrix {
  int n = 0;
  std::vector<double> entries;  // n*n row-major; symmetric, unit diagonal

  double at(int a, int b) const { return entries[size_t(a) * n + b]; }
};

/// Gradient of the model's own attack-task loss (detection, segmentation or
/// depth suppression) w.r.t. the texture, through render + composite.
Tensor task_gradient(const Model& model, const SceneView& view,
                     const SceneParams& params, const Mesh& mesh,
                     const Tensor& texture, double tau);

/// Mean over views of the cosine between two per-view gradient streams.
/// Views where either norm is under 1e-12 are excluded; all-excluded is an
/// error.
double gradient_cosine(const std::function<Tensor(int)>& grads_a,
                       const std::function<Tensor(int)>& grads_b,
                       int view_count);

double gradient_cosine(const Model& a, const Model& b,
                       const std::vector<SceneView>& views,
                       const SceneParams& params, const Mesh& mesh,
                       const Tensor& texture, double tau);

/// Pairwise mean gradient cosine over the pool. Each model's per-view
/// gradient is computed once and shared across pairs; entries are symmetric
/// by construction with an exact unit diagonal.
SimilarityMatrix similarity_matrix(const std::vector<Model>& pool,
                                   const std::vector<SceneView>& views,
                                   const SceneParams& params, const Mesh& mesh,
                                   const Tensor& texture, double tau);

/// Greedy most-diverse ensemble: seed with the globally least similar pair,
/// then repeatedly add the candidate whose maximum similarity to the chosen
/// set is minimal. Ties resolve to the lowest index. Returns sorted indices.
std::vector<int> greedy_select(const SimilarityMatrix& matrix, int n);

}  // namespace oga
