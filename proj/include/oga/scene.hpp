#pragma once

#include <vector>

#include "oga/renderer.hpp"

namespace oga {

struct SceneParams {
  int image_size = 128;
  int atlas_h = 128, atlas_w = 192;
  double azimuth_min = 0.0, azimuth_max = 360.0;
  double elevation_min = 0.0, elevation_max = 50.0;
  double distance_min = 13.0, distance_max = 15.5;
  double ambient_min = 0.55, ambient_max = 1.0;
  // Resample poses until the target is detectably framed: some cell of the
  // canonical detector grid must clear the IoU threshold, otherwise the
  // per-view target confidence is 0 by construction and the view carries no
  // detection signal at all.
  bool require_detectable = true;
  double detect_tau = 0.3;
};

/// One training/eval view. Backgrounds and the per-view pretraining texture
/// are regenerated on demand from their seeds; the target is placed with a
/// seeded screen-space offset so detectors cannot learn a position shortcut.
struct SceneView {
  Pose pose;
  Illumination illum;
  double offset_x = 0.0, offset_y = 0.0;
  uint64_t background_seed = 0;
  uint64_t texture_seed = 0;
  Box gt;  // projected cube bbox, normalized
};

std::vector<SceneView> make_views(const SceneParams& params, const Mesh& mesh,
                                  int count, uint64_t seed);

/// Smooth procedural background (low-frequency color field plus faint
/// noise); deterministic in the seed.
Tensor make_background(uint64_t seed, int h, int w);

/// Per-view pretraining texture, drawn from the same band the attack
/// initializes in.
Tensor make_pretrain_texture(uint64_t seed, int h, int w);

struct RealizedView {
  Tensor image;        // composited target over background
  Tensor screen_mask;  // (H,W)
  Tensor depth;        // (H,W)
  Box gt;
};

/// Renders the view with an explicit texture and composites it.
RealizedView realize_view(const SceneView& view, const SceneParams& params,
                          const Mesh& mesh, const Tensor& texture);

/// Renders the view with its own seeded pretraining texture.
RealizedView realize_view(const SceneView& view, const SceneParams& params,
                          const Mesh& mesh);

}  // namespace oga
