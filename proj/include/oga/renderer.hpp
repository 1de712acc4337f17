#pragma once

#include <array>

#include "oga/graph.hpp"
#include "oga/losses.hpp"

namespace oga {

struct Pose {
  double azimuth_deg = 0.0;    // [0, 360)
  double elevation_deg = 0.0;  // [0, 50]
  double distance = 12.0;      // > 0; larger distance = smaller projection
};

struct Illumination {
  double ambient = 1.0;                          // [0.3, 1.0]
  std::array<double, 3> light_dir = {0, 0, 1};   // unit length
};

void validate_pose(const Pose& pose);
void validate_illumination(const Illumination& illum);

struct MeshFace {
  std::array<double, 3> center;
  std::array<double, 3> normal;
  std::array<double, 3> u_axis;  // u_axis x v_axis == normal
  std::array<double, 3> v_axis;
  int atlas_x0 = 0, atlas_y0 = 0;  // texel rect in the atlas
  int atlas_w = 0, atlas_h = 0;
};

/// Textured axis-aligned unit cube (half-edge 1) with a 3x2 UV atlas grid.
struct Mesh {
  std::array<MeshFace, 6> faces;
  int atlas_h = 0, atlas_w = 0;
  static Mesh unit_cube(int atlas_h, int atlas_w);
};

struct RenderOutput {
  Tensor image;             // (H,W,3) in [0,1]
  Tensor screen_mask;       // (H,W) in [0,1]
  Tensor depth;             // (H,W) nonnegative
  Tensor texel_visibility;  // (atlas_h, atlas_w) in {0,1}
};

/// Texture-independent per-view tables: per-face pixel weights (coverage *
/// facing * shading, normalized so colors stay in range) and atlas sample
/// coordinates, plus the mask/depth/visibility byproducts. Everything here
/// is constant w.r.t. the texture; only bilinear sampling is differentiable.
/// Each pixel carries kSubsamples jittered taps whose average approximates
/// the pixel's texture footprint, so minified textures stay alias-free.
struct RenderPlan {
  static constexpr int kSubGrid = 3;  // 3x3 taps per pixel
  static constexpr int kSubsamples = kSubGrid * kSubGrid;
  int img_h = 0, img_w = 0;
  int atlas_h = 0, atlas_w = 0;
  struct FaceTab {
    bool live = false;
    // Screen-space block the face can touch; tables cover only this block.
    int bx0 = 0, by0 = 0, bw = 0, bh = 0;
    Tensor weight;      // (B,1) final per-pixel color weight, B = bw*bh
    Tensor cov_facing;  // (B,1) coverage * facing, pre-shading
    Tensor uv;          // (B*kSubsamples,2) atlas texel coordinates (x,y)
  };
  std::array<FaceTab, 6> faces;
  Tensor screen_mask;
  Tensor depth;
  Tensor texel_visibility;
  Box gt_box;  // projected cube bbox, normalized to [0,1]

  /// Coverage*facing of face fi at image pixel (y,x); 0 outside its block.
  double face_cov(int fi, int y, int x) const {
    const FaceTab& tab = faces[size_t(fi)];
    if (!tab.live || y < tab.by0 || y >= tab.by0 + tab.bh || x < tab.bx0 ||
        x >= tab.bx0 + tab.bw) {
      return 0.0;
    }
    return tab.cov_facing.data[size_t(y - tab.by0) * tab.bw + (x - tab.bx0)];
  }
};

RenderPlan plan_render(const Mesh& mesh, const Pose& pose,
                       const Illumination& illum, int img_h, int img_w,
                       double offset_x = 0.0, double offset_y = 0.0);

/// Projected cube bbox only (cheap; no per-pixel tables).
Box project_gt_box(const Pose& pose, int img_h, int img_w,
                   double offset_x = 0.0, double offset_y = 0.0);

/// Value-path rasterization of a plan.
Tensor render_image(const RenderPlan& plan, const Tensor& texture);

/// Graph-path rasterization: the returned image Var is differentiable with
/// respect to the texture Var.
Var render_image_node(Graph& g, const RenderPlan& plan, Var texture);

/// Full rasterization per the module contract.
RenderOutput rasterize(const Mesh& mesh, const Tensor& texture,
                       const Pose& pose, const Illumination& illum,
                       int img_h, int img_w, double offset_x = 0.0,
                       double offset_y = 0.0);

/// Per-pixel convex blend of the rendered image over the background.
Tensor composite(const Tensor& render_img, const Tensor& background,
                 const Tensor& mask);
Var composite_node(Graph& g, Var render_img, const Tensor& background,
                   const Tensor& mask);

}  // namespace oga
