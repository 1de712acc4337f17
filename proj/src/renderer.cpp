#include "oga/renderer.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace oga {

namespace {

constexpr double kGamma = 20.0;   // edge sharpness, per pixel of signed dist
constexpr double kKappa = 50.0;   // facing sharpness
constexpr double kFarDepth = 25.0;
constexpr double kWeightCut = 1e-9;
constexpr double kDegreesToRad = 0.017453292519943295;

struct V3 {
  double x, y, z;
};
struct V2 {
  double x, y;
};

V3 v3(const std::array<double, 3>& a) { return {a[0], a[1], a[2]}; }
double dot3(V3 a, V3 b) { return a.x * b.x + a.y * b.y + a.z * b.z; }
V3 cross3(V3 a, V3 b) {
  return {a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z,
          a.x * b.y - a.y * b.x};
}
V3 addm(V3 a, V3 b, double s) { return {a.x + s * b.x, a.y + s * b.y, a.z + s * b.z}; }
double cross2(V2 a, V2 b) { return a.x * b.y - a.y * b.x; }

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  double e = std::exp(x);
  return e / (1.0 + e);
}

double point_segment_dist(V2 p, V2 a, V2 b) {
  V2 ab{b.x - a.x, b.y - a.y};
  double len2 = ab.x * ab.x + ab.y * ab.y;
  double t = len2 > 0.0
                 ? std::clamp(((p.x - a.x) * ab.x + (p.y - a.y) * ab.y) / len2,
                              0.0, 1.0)
                 : 0.0;
  double dx = p.x - (a.x + t * ab.x);
  double dy = p.y - (a.y + t * ab.y);
  return std::sqrt(dx * dx + dy * dy);
}

// Signed distance to a convex quad: positive inside, negative outside.
// Degenerate (edge-on) quads fall back to -distance-to-boundary.
struct QuadSdf {
  std::array<V2, 4> v;
  double orient = 1.0;
  bool degenerate = false;

  void init() {
    double area2 = 0.0;
    for (int i = 0; i < 4; ++i) {
      const V2& a = v[size_t(i)];
      const V2& b = v[size_t((i + 1) % 4)];
      area2 += cross2(a, b);
    }
    degenerate = std::fabs(area2) < 1e-9;
    orient = area2 >= 0.0 ? 1.0 : -1.0;
  }

  double eval(V2 p) const {
    if (degenerate) {
      double d = 1e300;
      for (int i = 0; i < 4; ++i) {
        d = std::min(d, point_segment_dist(p, v[size_t(i)],
                                           v[size_t((i + 1) % 4)]));
      }
      return -d;
    }
    double sd = 1e300;
    for (int i = 0; i < 4; ++i) {
      const V2& a = v[size_t(i)];
      const V2& b = v[size_t((i + 1) % 4)];
      V2 e{b.x - a.x, b.y - a.y};
      double len = std::sqrt(e.x * e.x + e.y * e.y);
      if (len <= 0.0) continue;
      double c = orient * cross2(e, V2{p.x - a.x, p.y - a.y}) / len;
      sd = std::min(sd, c);
    }
    return sd;
  }
};

}  // namespace

void validate_pose(const Pose& pose) {
  if (!(pose.azimuth_deg >= 0.0 && pose.azimuth_deg < 360.0)) {
    throw std::invalid_argument("pose: azimuth must be in [0,360)");
  }
  if (!(pose.elevation_deg >= 0.0 && pose.elevation_deg <= 50.0)) {
    throw std::invalid_argument("pose: elevation must be in [0,50]");
  }
  if (!(pose.distance > 0.0)) {
    throw std::invalid_argument("pose: degenerate projection, distance <= 0");
  }
}

void validate_illumination(const Illumination& illum) {
  if (!(illum.ambient >= 0.3 && illum.ambient <= 1.0)) {
    throw std::invalid_argument("illumination: ambient must be in [0.3,1]");
  }
  double n2 = illum.light_dir[0] * illum.light_dir[0] +
              illum.light_dir[1] * illum.light_dir[1] +
              illum.light_dir[2] * illum.light_dir[2];
  if (std::fabs(std::sqrt(n2) - 1.0) > 1e-9) {
    throw std::invalid_argument("illumination: light_dir must be unit length");
  }
}

Mesh Mesh::unit_cube(int atlas_h, int atlas_w) {
  if (atlas_w % 3 != 0 || atlas_h % 2 != 0 || atlas_w < 6 || atlas_h < 4) {
    throw std::invalid_argument("atlas must be a 3x2 grid of face rects");
  }
  Mesh m;
  m.atlas_h = atlas_h;
  m.atlas_w = atlas_w;
  const int fw = atlas_w / 3;
  const int fh = atlas_h / 2;
  auto face = [&](int idx, std::array<double, 3> c, std::array<double, 3> n,
                  std::array<double, 3> u, std::array<double, 3> v) {
    MeshFace f;
    f.center = c;
    f.normal = n;
    f.u_axis = u;
    f.v_axis = v;
    f.atlas_x0 = (idx % 3) * fw;
    f.atlas_y0 = (idx / 3) * fh;
    f.atlas_w = fw;
    f.atlas_h = fh;
    m.faces[size_t(idx)] = f;
  };
  face(0, {1, 0, 0}, {1, 0, 0}, {0, 0, -1}, {0, 1, 0});
  face(1, {-1, 0, 0}, {-1, 0, 0}, {0, 0, 1}, {0, 1, 0});
  face(2, {0, 1, 0}, {0, 1, 0}, {1, 0, 0}, {0, 0, -1});
  face(3, {0, -1, 0}, {0, -1, 0}, {1, 0, 0}, {0, 0, 1});
  face(4, {0, 0, 1}, {0, 0, 1}, {1, 0, 0}, {0, 1, 0});
  face(5, {0, 0, -1}, {0, 0, -1}, {-1, 0, 0}, {0, 1, 0});
  return m;
}

RenderPlan plan_render(const Mesh& mesh, const Pose& pose,
                       const Illumination& illum, int img_h, int img_w,
                       double offset_x, double offset_y) {
  validate_pose(pose);
  validate_illumination(illum);
  if (img_h < 2 || img_w < 2) {
    throw std::invalid_argument("image must be at least 2x2");
  }

  RenderPlan plan;
  plan.img_h = img_h;
  plan.img_w = img_w;
  plan.atlas_h = mesh.atlas_h;
  plan.atlas_w = mesh.atlas_w;

  const double az = pose.azimuth_deg * kDegreesToRad;
  const double el = pose.elevation_deg * kDegreesToRad;
  const V3 view{std::cos(el) * std::sin(az), std::sin(el),
                std::cos(el) * std::cos(az)};
  V3 right = cross3(V3{0, 1, 0}, view);
  double rlen = std::sqrt(dot3(right, right));
  right = {right.x / rlen, right.y / rlen, right.z / rlen};
  const V3 up = cross3(view, right);
  const V3 light = v3(illum.light_dir);
  const double scale = 0.5 * std::min(img_h, img_w) / pose.distance;
  const double cx = 0.5 * img_w + offset_x;
  const double cy = 0.5 * img_h + offset_y;

  auto project = [&](V3 p) -> V2 {
    return {dot3(p, right) * scale + cx, -dot3(p, up) * scale + cy};
  };

  const int64_t npix = int64_t(img_h) * img_w;
  std::array<std::vector<double>, 6> face_depth;
  plan.screen_mask = Tensor(Shape{img_h, img_w});
  plan.depth = Tensor(Shape{img_h, img_w});
  plan.texel_visibility = Tensor(Shape{mesh.atlas_h, mesh.atlas_w});

  plan.gt_box = project_gt_box(pose, img_h, img_w, offset_x, offset_y);

  constexpr int kSubs = RenderPlan::kSubsamples;
  for (int fi = 0; fi < 6; ++fi) {
    const MeshFace& f = mesh.faces[size_t(fi)];
    RenderPlan::FaceTab& tab = plan.faces[size_t(fi)];

    const V3 n = v3(f.normal);
    const V3 c = v3(f.center);
    const V3 ua = v3(f.u_axis);
    const V3 va = v3(f.v_axis);
    const double nv = dot3(n, view);
    const double facing = sigmoid(kKappa * nv);
    const double nl = dot3(n, light);
    const double shade = illum.ambient +
                         (1.0 - illum.ambient) * std::max(0.0, nl);

    QuadSdf quad;
    quad.v[0] = project(addm(addm(c, ua, -1.0), va, -1.0));
    quad.v[1] = project(addm(addm(c, ua, 1.0), va, -1.0));
    quad.v[2] = project(addm(addm(c, ua, 1.0), va, 1.0));
    quad.v[3] = project(addm(addm(c, ua, -1.0), va, 1.0));
    quad.init();

    // Inverse of the affine face->screen map.
    const V2 p0 = project(c);
    const V2 pu{dot3(ua, right) * scale, -dot3(ua, up) * scale};
    const V2 pv{dot3(va, right) * scale, -dot3(va, up) * scale};
    const double det = cross2(pu, pv);
    const bool invertible = std::fabs(det) > 1e-12 * scale * scale;

    // Coverage is negligible a few pixels outside the projected bbox; the
    // face tables cover only this screen block.
    double bx1 = 1e300, by1 = 1e300, bx2 = -1e300, by2 = -1e300;
    for (const V2& q : quad.v) {
      bx1 = std::min(bx1, q.x);
      by1 = std::min(by1, q.y);
      bx2 = std::max(bx2, q.x);
      by2 = std::max(by2, q.y);
    }
    const int iy0 = std::max(0, int(std::floor(by1 - 2.0)));
    const int iy1 = std::min(img_h - 1, int(std::ceil(by2 + 2.0)));
    const int ix0 = std::max(0, int(std::floor(bx1 - 2.0)));
    const int ix1 = std::min(img_w - 1, int(std::ceil(bx2 + 2.0)));
    tab.bx0 = ix0;
    tab.by0 = iy0;
    tab.bw = std::max(0, ix1 - ix0 + 1);
    tab.bh = std::max(0, iy1 - iy0 + 1);
    const int64_t block = int64_t(tab.bw) * tab.bh;
    if (block <= 0) {
      tab.live = false;
      face_depth[size_t(fi)].clear();
      continue;
    }
    tab.weight = Tensor(Shape{int(block), 1});
    tab.cov_facing = Tensor(Shape{int(block), 1});
    tab.uv = Tensor(Shape{int(block) * kSubs, 2});
    face_depth[size_t(fi)].assign(size_t(block), 0.0);

    // Face-plane steps corresponding to one screen pixel in x and y.
    double da_dx = 0.0, db_dx = 0.0, da_dy = 0.0, db_dy = 0.0;
    if (invertible) {
      da_dx = cross2(V2{1, 0}, pv) / det;
      db_dx = cross2(pu, V2{1, 0}) / det;
      da_dy = cross2(V2{0, 1}, pv) / det;
      db_dy = cross2(pu, V2{0, 1}) / det;
    }
    auto uv_of = [&](double a, double b, int64_t slot) {
      // Texel centers sit half a texel inside the face edge; samples clamp
      // to the face rect so bilinear taps never cross a seam.
      tab.uv.data[size_t(slot) * 2 + 0] = std::clamp(
          f.atlas_x0 + 0.5 * (a + 1.0) * f.atlas_w - 0.5,
          double(f.atlas_x0), double(f.atlas_x0 + f.atlas_w - 1));
      tab.uv.data[size_t(slot) * 2 + 1] = std::clamp(
          f.atlas_y0 + 0.5 * (b + 1.0) * f.atlas_h - 0.5,
          double(f.atlas_y0), double(f.atlas_y0 + f.atlas_h - 1));
    };

    bool live = false;
    if (facing > kWeightCut) {
      for (int iy = iy0; iy <= iy1; ++iy) {
        for (int ix = ix0; ix <= ix1; ++ix) {
          const V2 p{ix + 0.5, iy + 0.5};
          const double sd = quad.eval(p);
          double w = sigmoid(kGamma * sd) * facing;
          if (w <= kWeightCut) continue;
          const int64_t bi = int64_t(iy - iy0) * tab.bw + (ix - ix0);
          double a = 0.0, b = 0.0;
          if (invertible) {
            const V2 rel{p.x - p0.x, p.y - p0.y};
            a = std::clamp(cross2(rel, pv) / det, -1.0, 1.0);
            b = std::clamp(cross2(pu, rel) / det, -1.0, 1.0);
          }
          tab.cov_facing.data[size_t(bi)] = w;
          const int g = RenderPlan::kSubGrid;
          for (int sy = 0; sy < g; ++sy) {
            const double oy = (sy - (g - 1) * 0.5) / g;
            for (int sx = 0; sx < g; ++sx) {
              const double ox = (sx - (g - 1) * 0.5) / g;
              const double as =
                  std::clamp(a + ox * da_dx + oy * da_dy, -1.0, 1.0);
              const double bs =
                  std::clamp(b + ox * db_dx + oy * db_dy, -1.0, 1.0);
              uv_of(as, bs, bi * kSubs + sy * g + sx);
            }
          }
          const V3 surf = addm(addm(c, ua, a), va, b);
          face_depth[size_t(fi)][size_t(bi)] =
              std::max(pose.distance - dot3(surf, view), 0.0);
          tab.weight.data[size_t(bi)] = w * shade;  // normalized below
          live = true;
        }
      }
    }
    tab.live = live;

    // Visible texels of this face: front-facing, projected inside the
    // image, and strictly inside the soft-coverage half level.
    if (facing > 0.5) {
      for (int ty = 0; ty < f.atlas_h; ++ty) {
        const double b = 2.0 * (ty + 0.5) / double(f.atlas_h) - 1.0;
        for (int tx = 0; tx < f.atlas_w; ++tx) {
          const double a = 2.0 * (tx + 0.5) / double(f.atlas_w) - 1.0;
          const V2 p = project(addm(addm(c, ua, a), va, b));
          if (p.x < 0.0 || p.x >= img_w || p.y < 0.0 || p.y >= img_h) continue;
          if (quad.eval(p) <= 0.0) continue;
          plan.texel_visibility.at2(f.atlas_y0 + ty, f.atlas_x0 + tx) = 1.0;
        }
      }
    }
  }

  // Per-pixel normalization, union mask and blended depth over the union of
  // face blocks.
  std::vector<double> sumw(size_t(npix), 0.0);
  std::vector<double> miss(size_t(npix), 1.0);
  std::vector<double> wdepth(size_t(npix), 0.0);
  for (int fi = 0; fi < 6; ++fi) {
    const RenderPlan::FaceTab& tab = plan.faces[size_t(fi)];
    if (!tab.live) continue;
    for (int by = 0; by < tab.bh; ++by) {
      for (int bx = 0; bx < tab.bw; ++bx) {
        const int64_t bi = int64_t(by) * tab.bw + bx;
        const double w = tab.cov_facing.data[size_t(bi)];
        if (w == 0.0) continue;
        const int64_t pix = int64_t(tab.by0 + by) * img_w + (tab.bx0 + bx);
        sumw[size_t(pix)] += w;
        miss[size_t(pix)] *= 1.0 - w;
        wdepth[size_t(pix)] += w * face_depth[size_t(fi)][size_t(bi)];
      }
    }
  }
  for (int64_t pix = 0; pix < npix; ++pix) {
    const double mask = 1.0 - miss[size_t(pix)];
    plan.screen_mask.data[size_t(pix)] = mask;
    const double obj_depth =
        sumw[size_t(pix)] > 0.0 ? wdepth[size_t(pix)] / sumw[size_t(pix)]
                                : kFarDepth;
    plan.depth.data[size_t(pix)] =
        mask * obj_depth + (1.0 - mask) * kFarDepth;
  }
  for (int fi = 0; fi < 6; ++fi) {
    RenderPlan::FaceTab& tab = plan.faces[size_t(fi)];
    if (!tab.live) continue;
    for (int by = 0; by < tab.bh; ++by) {
      for (int bx = 0; bx < tab.bw; ++bx) {
        const int64_t bi = int64_t(by) * tab.bw + bx;
        const int64_t pix = int64_t(tab.by0 + by) * img_w + (tab.bx0 + bx);
        if (sumw[size_t(pix)] > 1.0) {
          tab.weight.data[size_t(bi)] /= sumw[size_t(pix)];
        }
      }
    }
  }
  return plan;
}

Box project_gt_box(const Pose& pose, int img_h, int img_w, double offset_x,
                   double offset_y) {
  validate_pose(pose);
  const double az = pose.azimuth_deg * kDegreesToRad;
  const double el = pose.elevation_deg * kDegreesToRad;
  const V3 view{std::cos(el) * std::sin(az), std::sin(el),
                std::cos(el) * std::cos(az)};
  V3 right = cross3(V3{0, 1, 0}, view);
  double rlen = std::sqrt(dot3(right, right));
  right = {right.x / rlen, right.y / rlen, right.z / rlen};
  const V3 up = cross3(view, right);
  const double scale = 0.5 * std::min(img_h, img_w) / pose.distance;
  const double cx = 0.5 * img_w + offset_x;
  const double cy = 0.5 * img_h + offset_y;
  double x1 = 1e300, y1 = 1e300, x2 = -1e300, y2 = -1e300;
  for (int sx = -1; sx <= 1; sx += 2) {
    for (int sy = -1; sy <= 1; sy += 2) {
      for (int sz = -1; sz <= 1; sz += 2) {
        const V3 p{double(sx), double(sy), double(sz)};
        const double px = dot3(p, right) * scale + cx;
        const double py = -dot3(p, up) * scale + cy;
        x1 = std::min(x1, px);
        y1 = std::min(y1, py);
        x2 = std::max(x2, px);
        y2 = std::max(y2, py);
      }
    }
  }
  return Box{std::clamp(x1 / img_w, 0.0, 1.0), std::clamp(y1 / img_h, 0.0, 1.0),
             std::clamp(x2 / img_w, 0.0, 1.0),
             std::clamp(y2 / img_h, 0.0, 1.0)};
}

namespace {

void validate_texture(const Tensor& texture, const RenderPlan& plan) {
  if (texture.rank() != 3 || texture.shape[0] != plan.atlas_h ||
      texture.shape[1] != plan.atlas_w || texture.shape[2] != 3) {
    throw std::invalid_argument("texture shape does not match the atlas");
  }
  if (texture.min() < -1e-12 || texture.max() > 1.0 + 1e-12) {
    throw std::invalid_argument("texture out of [0,1]");
  }
}

}  // namespace

Tensor render_image(const RenderPlan& plan, const Tensor& texture) {
  validate_texture(texture, plan);
  const int h = plan.atlas_h, w = plan.atlas_w;
  constexpr int kSubs = RenderPlan::kSubsamples;
  Tensor img(Shape{plan.img_h, plan.img_w, 3});
  for (int fi = 0; fi < 6; ++fi) {
    const RenderPlan::FaceTab& tab = plan.faces[size_t(fi)];
    if (!tab.live) continue;
    const int64_t block = int64_t(tab.bw) * tab.bh;
    for (int64_t bi = 0; bi < block; ++bi) {
      const double wgt = tab.weight.data[size_t(bi)];
      if (wgt == 0.0) continue;
      double acc[3] = {0.0, 0.0, 0.0};
      for (int s = 0; s < kSubs; ++s) {
        const int64_t slot = bi * kSubs + s;
        double x = tab.uv.data[size_t(slot) * 2 + 0];
        double y = tab.uv.data[size_t(slot) * 2 + 1];
        x = std::clamp(x, 0.0, double(w - 1));
        y = std::clamp(y, 0.0, double(h - 1));
        const int x0 = std::min(int(std::floor(x)), w - 2);
        const int y0 = std::min(int(std::floor(y)), h - 2);
        const double fx = x - x0, fy = y - y0;
        const double w00 = (1 - fy) * (1 - fx), w01 = (1 - fy) * fx;
        const double w10 = fy * (1 - fx), w11 = fy * fx;
        for (int ch = 0; ch < 3; ++ch) {
          acc[ch] += w00 * texture.at3(y0, x0, ch) +
                     w01 * texture.at3(y0, x0 + 1, ch) +
                     w10 * texture.at3(y0 + 1, x0, ch) +
                     w11 * texture.at3(y0 + 1, x0 + 1, ch);
        }
      }
      const int64_t pix =
          int64_t(tab.by0 + bi / tab.bw) * plan.img_w + tab.bx0 + bi % tab.bw;
      for (int ch = 0; ch < 3; ++ch) {
        img.data[size_t(pix) * 3 + ch] += wgt * (acc[ch] / kSubs);
      }
    }
  }
  return img;
}

namespace {

/// Pads a (bh,bw,3) block Var out to (H,W,3) with zero constants.
Var pad_block(Graph& g, Var block, int by0, int bx0, int bh, int bw, int h,
              int w) {
  Var rowwise = block;
  if (bx0 > 0 || bx0 + bw < w) {
    std::vector<Var> cols;
    if (bx0 > 0) cols.push_back(g.constant(Tensor(Shape{bh, bx0, 3})));
    cols.push_back(block);
    if (bx0 + bw < w) {
      cols.push_back(g.constant(Tensor(Shape{bh, w - bx0 - bw, 3})));
    }
    rowwise = g.concat(cols, 1);
  }
  if (by0 == 0 && by0 + bh == h) return rowwise;
  std::vector<Var> rows;
  if (by0 > 0) rows.push_back(g.constant(Tensor(Shape{by0, w, 3})));
  rows.push_back(rowwise);
  if (by0 + bh < h) {
    rows.push_back(g.constant(Tensor(Shape{h - by0 - bh, w, 3})));
  }
  return g.concat(rows, 0);
}

}  // namespace

Var render_image_node(Graph& g, const RenderPlan& plan, Var texture) {
  validate_texture(g.value(texture), plan);
  constexpr int kSubs = RenderPlan::kSubsamples;
  Var acc;
  bool first = true;
  for (int fi = 0; fi < 6; ++fi) {
    const RenderPlan::FaceTab& tab = plan.faces[size_t(fi)];
    if (!tab.live) continue;
    const int block = tab.bw * tab.bh;
    Var uv = g.constant(tab.uv, "uv_face" + std::to_string(fi));
    Var sampled = g.bilinear_sample(texture, uv);  // (B*kSubs, 3)
    Var footprint =
        g.mean(g.reshape(sampled, Shape{block, kSubs, 3}), 1);  // (B,3)
    Var wgt = g.broadcast(
        g.constant(tab.weight, "w_face" + std::to_string(fi)),
        Shape{block, 3});
    Var contrib = g.reshape(g.mul(footprint, wgt), Shape{tab.bh, tab.bw, 3});
    Var padded = pad_block(g, contrib, tab.by0, tab.bx0, tab.bh, tab.bw,
                           plan.img_h, plan.img_w);
    acc = first ? padded : g.add(acc, padded);
    first = false;
  }
  if (first) {
    acc = g.constant(Tensor(Shape{plan.img_h, plan.img_w, 3}),
                     "empty_render");
  }
  return acc;
}

RenderOutput rasterize(const Mesh& mesh, const Tensor& texture,
                       const Pose& pose, const Illumination& illum,
                       int img_h, int img_w, double offset_x,
                       double offset_y) {
  RenderPlan plan =
      plan_render(mesh, pose, illum, img_h, img_w, offset_x, offset_y);
  RenderOutput out;
  out.image = render_image(plan, texture);
  out.screen_mask = std::move(plan.screen_mask);
  out.depth = std::move(plan.depth);
  out.texel_visibility = std::move(plan.texel_visibility);
  return out;
}

Tensor composite(const Tensor& render_img, const Tensor& background,
                 const Tensor& mask) {
  if (!shape_eq(render_img.shape, background.shape) ||
      render_img.rank() != 3 || mask.rank() != 2 ||
      mask.shape[0] != render_img.shape[0] ||
      mask.shape[1] != render_img.shape[1]) {
    throw std::invalid_argument("composite: shape mismatch");
  }
  Tensor out(render_img.shape);
  const int64_t npix = int64_t(mask.numel());
  for (int64_t pix = 0; pix < npix; ++pix) {
    const double m = mask.data[size_t(pix)];
    for (int ch = 0; ch < 3; ++ch) {
      out.data[size_t(pix) * 3 + ch] =
          m * render_img.data[size_t(pix) * 3 + ch] +
          (1.0 - m) * background.data[size_t(pix) * 3 + ch];
    }
  }
  return out;
}

Var composite_node(Graph& g, Var render_img, const Tensor& background,
                   const Tensor& mask) {
  const Shape rshape = g.value(render_img).shape;
  if (rshape.size() != 3 || !shape_eq(background.shape, rshape) ||
      mask.rank() != 2 || mask.shape[0] != rshape[0] ||
      mask.shape[1] != rshape[1]) {
    throw std::invalid_argument("composite: shape mismatch");
  }
  Tensor mask3(rshape);
  Tensor bg_term(rshape);
  const int64_t npix = int64_t(mask.numel());
  for (int64_t pix = 0; pix < npix; ++pix) {
    const double m = mask.data[size_t(pix)];
    for (int ch = 0; ch < 3; ++ch) {
      mask3.data[size_t(pix) * 3 + ch] = m;
      bg_term.data[size_t(pix) * 3 + ch] =
          (1.0 - m) * background.data[size_t(pix) * 3 + ch];
    }
  }
  return g.add(g.mul(render_img, g.constant(std::move(mask3), "mask3")),
               g.constant(std::move(bg_term), "bg_term"));
}

}  // namespace oga
