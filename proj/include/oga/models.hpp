#pragma once

#include <string>
#include <utility>
#include <vector>

#include "oga/graph.hpp"
#include "oga/losses.hpp"

namespace oga {

enum class Arch { kConvA, kConvC, kAttnB, kSeg, kDepth };
enum class Task { kDetect, kSegment, kDepth };

Arch arch_from_string(const std::string& name);
std::string arch_to_string(Arch arch);

struct ModelSpec {
  Arch arch = Arch::kConvA;
  uint64_t seed = 1;
  int image_size = 128;
};

struct Detection {
  Box box;            // normalized cell extent
  double confidence;  // [0,1]
};

struct DetectionSet {
  std::vector<Detection> detections;
  std::vector<Tensor> features;
};

/// Handles into a model forward pass recorded on a graph.
struct ModelGraph {
  Var output;                 // cell confidences / prob map / depth map
  Var logits;                 // pre-sigmoid (or pre-softplus) head output
  std::vector<Var> features;  // post-activation trunk tensors, (C,h,w)
};

struct Model {
  ModelSpec spec;
  std::vector<std::pair<std::string, Tensor>> weights;

  Task task() const;
  std::string name() const;  // e.g. "conv-a-s101"

  /// Detector grid geometry: one fixed-extent box per cell, row-major,
  /// tiling the frame exactly.
  std::vector<Box> cell_boxes() const;
  int grid() const;  // detector grid edge (image_size / 8)

  /// Records the forward pass. With `trainable`, weights enter the graph as
  /// named inputs (so backward returns their adjoints); otherwise they are
  /// constants and only the image/texture path is differentiated.
  ModelGraph build(Graph& g, Var image_hwc, bool trainable) const;
};

/// Deterministic seeded construction per the architecture id.
Model build_model(const ModelSpec& spec);

DetectionSet detect(const Model& model, const Tensor& image);
Tensor segment(const Model& model, const Tensor& image);
Tensor estimate_depth(const Model& model, const Tensor& image);

}  // namespace oga
