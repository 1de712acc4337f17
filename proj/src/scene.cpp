#include "oga/scene.hpp"

#include <cmath>

#include "oga/rng.hpp"

namespace oga {

namespace {

// Whether some cell of the canonical grid (stride-8 detector geometry)
// clears the IoU threshold against the box.
bool detectable(const Box& gt, int image_size, double tau) {
  const int grid = image_size / 8;
  for (int i = 0; i < grid; ++i) {
    for (int j = 0; j < grid; ++j) {
      Box cell{double(j) / grid, double(i) / grid, double(j + 1) / grid,
               double(i + 1) / grid};
      if (iou(cell, gt) > tau) return true;
    }
  }
  return false;
}

}  // namespace

std::vector<SceneView> make_views(const SceneParams& params, const Mesh& mesh,
                                  int count, uint64_t seed) {
  (void)mesh;
  std::vector<SceneView> views;
  views.reserve(size_t(count));
  for (int i = 0; i < count; ++i) {
    Rng rng(derive_seed(seed, "scene-view", uint64_t(i)));
    SceneView v;
    for (int attempt = 0; attempt < 200; ++attempt) {
      v.pose.azimuth_deg = rng.uniform(params.azimuth_min, params.azimuth_max);
      if (v.pose.azimuth_deg >= 360.0) v.pose.azimuth_deg = 0.0;
      v.pose.elevation_deg =
          rng.uniform(params.elevation_min, params.elevation_max);
      v.pose.distance = rng.uniform(params.distance_min, params.distance_max);
      v.illum.ambient = rng.uniform(params.ambient_min, params.ambient_max);
      double lx = rng.normal(), ly = rng.normal(), lz = rng.normal();
      double ln = std::sqrt(lx * lx + ly * ly + lz * lz);
      if (ln < 1e-9) {
        lx = 0.0;
        ly = 0.0;
        lz = 1.0;
        ln = 1.0;
      }
      v.illum.light_dir = {lx / ln, ly / ln, lz / ln};
      // keep the projected cube fully inside the frame
      const double scale = 0.5 * params.image_size / v.pose.distance;
      const double radius = std::sqrt(3.0) * scale;
      const double margin =
          std::max(0.0, 0.5 * params.image_size - radius - 2.0);
      v.offset_x = rng.uniform(-margin, margin);
      v.offset_y = rng.uniform(-margin, margin);
      v.gt = project_gt_box(v.pose, params.image_size, params.image_size,
                            v.offset_x, v.offset_y);
      if (!params.require_detectable ||
          detectable(v.gt, params.image_size, params.detect_tau)) {
        break;
      }
    }
    v.background_seed = derive_seed(seed, "background", uint64_t(i));
    v.texture_seed = derive_seed(seed, "view-texture", uint64_t(i));
    views.push_back(v);
  }
  return views;
}

Tensor make_background(uint64_t seed, int h, int w) {
  Rng rng(seed);
  Tensor img(Shape{h, w, 3});
  // three low-frequency waves per channel plus faint per-pixel noise
  struct Wave {
    double fx, fy, phase, amp;
  };
  Wave waves[3][3];
  double base[3];
  for (int c = 0; c < 3; ++c) {
    base[c] = rng.uniform(0.25, 0.75);
    for (int k = 0; k < 3; ++k) {
      waves[c][k].fx = rng.uniform(-3.0, 3.0);
      waves[c][k].fy = rng.uniform(-3.0, 3.0);
      waves[c][k].phase = rng.uniform(0.0, 6.283185307179586);
      waves[c][k].amp = rng.uniform(0.02, 0.12);
    }
  }
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double u = double(x) / w, v = double(y) / h;
      for (int c = 0; c < 3; ++c) {
        double val = base[c];
        for (int k = 0; k < 3; ++k) {
          const Wave& wv = waves[c][k];
          val += wv.amp *
                 std::sin(6.283185307179586 * (wv.fx * u + wv.fy * v) +
                          wv.phase);
        }
        val += rng.uniform(-0.02, 0.02);
        img.at3(y, x, c) = std::min(std::max(val, 0.0), 1.0);
      }
    }
  }
  return img;
}

Tensor make_pretrain_texture(uint64_t seed, int h, int w) {
  Rng rng(seed);
  return Tensor::uniform(Shape{h, w, 3}, rng, 0.25, 0.75);
}

RealizedView realize_view(const SceneView& view, const SceneParams& params,
                          const Mesh& mesh, const Tensor& texture) {
  RenderPlan plan = plan_render(mesh, view.pose, view.illum,
                                params.image_size, params.image_size,
                                view.offset_x, view.offset_y);
  Tensor rendered = render_image(plan, texture);
  Tensor background =
      make_background(view.background_seed, params.image_size,
                      params.image_size);
  RealizedView out;
  out.image = composite(rendered, background, plan.screen_mask);
  out.screen_mask = std::move(plan.screen_mask);
  out.depth = std::move(plan.depth);
  out.gt = plan.gt_box;
  return out;
}

RealizedView realize_view(const SceneView& view, const SceneParams& params,
                          const Mesh& mesh) {
  Tensor tex =
      make_pretrain_texture(view.texture_seed, params.atlas_h, params.atlas_w);
  return realize_view(view, params, mesh, tex);
}

}  // namespace oga
