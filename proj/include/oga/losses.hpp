#pragma once

#include <string>
#include <vector>

#include "oga/graph.hpp"

namespace oga {

/// Axis-aligned box, corners normalized or in pixels; x1<x2, y1<y2.
struct Box {
  double x1 = 0, y1 = 0, x2 = 0, y2 = 0;
};

/// Intersection over union; 0 for disjoint boxes. Degenerate (zero-area)
/// boxes are an error.
double iou(const Box& a, const Box& b);

/// Marks boxes whose IoU with the ground truth exceeds tau.
std::vector<char> hazardous_boxes(const std::vector<Box>& boxes,
                                  const Box& gt, double tau);

/// Squared LogSumExp of the hazardous confidences; constant 0 when the
/// hazardous set is empty.
Var detection_loss(Graph& g, Var confidences,
                   const std::vector<char>& hazardous);

/// Mean suppression + variance flattening over trunk feature layers, with
/// the screen mask nearest-downsampled to each layer and channels pooled
/// into the masked population. Layers whose downsampled mask is empty are
/// skipped; all-empty is an error.
Var feature_loss(Graph& g, const std::vector<Var>& features,
                 const Tensor& screen_mask);

/// Softened total variation of the texture; the last row/column is excluded
/// so both forward differences exist at every counted texel.
Var smooth_loss(Graph& g, Var texture);

/// Masked mean of the per-pixel target probability.
Var segmentation_loss(Graph& g, Var prob, const Tensor& target_mask);

/// Masked mean of inverse depth; depth must be strictly positive.
Var depth_loss(Graph& g, Var depth, const Tensor& target_mask);

/// Nearest-neighbor downsample of a (H,W) map.
Tensor nearest_downsample(const Tensor& map, int out_h, int out_w);

/// Per-model loss values recorded into history rows.
struct LossReport {
  std::string model;
  double task = 0.0;     // detection / segmentation / depth value
  double feature = 0.0;
  double smooth = 0.0;
  double total = 0.0;
};

}  // namespace oga
