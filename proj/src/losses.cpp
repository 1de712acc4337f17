#include "oga/losses.hpp"

#include <cmath>
#include <stdexcept>

namespace oga {

namespace {
constexpr double kFeatureEps = 1e-8;
constexpr double kMaskEps = 1e-8;
constexpr double kTvDelta = 1e-12;
}  // namespace

double iou(const Box& a, const Box& b) {
  auto area = [](const Box& x) { return (x.x2 - x.x1) * (x.y2 - x.y1); };
  if (area(a) <= 0.0 || area(b) <= 0.0) {
    throw std::invalid_argument("iou: degenerate box");
  }
  double iw = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
  double ih = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
  if (iw <= 0.0 || ih <= 0.0) return 0.0;
  double inter = iw * ih;
  return inter / (area(a) + area(b) - inter);
}

std::vector<char> hazardous_boxes(const std::vector<Box>& boxes,
                                  const Box& gt, double tau) {
  std::vector<char> out(boxes.size(), 0);
  for (size_t i = 0; i < boxes.size(); ++i) {
    out[i] = iou(boxes[i], gt) > tau ? 1 : 0;
  }
  return out;
}

Var detection_loss(Graph& g, Var confidences,
                   const std::vector<char>& hazardous) {
  const Tensor& conf = g.value(confidences);
  if (int64_t(hazardous.size()) != conf.numel()) {
    throw std::invalid_argument("detection_loss: mask size mismatch");
  }
  int count = 0;
  Tensor mask(conf.shape);
  for (size_t i = 0; i < hazardous.size(); ++i) {
    if (hazardous[i]) {
      mask.data[i] = 1.0;
      ++count;
    }
  }
  if (count == 0) return g.constant_scalar(0.0, "det_loss_empty");
  Var masked = g.mul(g.exp_(confidences), g.constant(std::move(mask)));
  return g.square(g.log_(g.sum(masked)));
}

Var feature_loss(Graph& g, const std::vector<Var>& features,
                 const Tensor& screen_mask) {
  if (features.empty()) {
    throw std::invalid_argument("feature_loss: no feature layers");
  }
  Var acc;
  int used = 0;
  for (Var f : features) {
    const Shape fshape = g.value(f).shape;
    if (fshape.size() != 3) {
      throw std::invalid_argument("feature_loss: features must be (C,H,W)");
    }
    int c = fshape[0], h = fshape[1], w = fshape[2];
    Tensor m = nearest_downsample(screen_mask, h, w);
    double msum = m.sum();
    if (msum <= 0.0) continue;
    Tensor mb({c, h, w});
    for (int ch = 0; ch < c; ++ch) {
      std::copy(m.data.begin(), m.data.end(),
                mb.data.begin() + size_t(ch) * h * w);
    }
    double pop = msum * c;
    Var maskc = g.constant(std::move(mb));
    Var mu = g.mul(g.sum(g.mul(f, maskc)), g.constant_scalar(1.0 / pop));
    Var dev = g.sub(f, g.broadcast(mu, fshape));
    Var var = g.mul(g.sum(g.mul(g.square(dev), maskc)),
                    g.constant_scalar(1.0 / pop));
    Var term = g.log_(g.add(
        g.add(g.constant_scalar(1.0), g.square(mu)),
        g.sqrt_(g.add(var, g.constant_scalar(kFeatureEps)))));
    acc = used == 0 ? term : g.add(acc, term);
    ++used;
  }
  if (used == 0) {
    throw std::invalid_argument("feature_loss: mask empty on every layer");
  }
  return g.mul(acc, g.constant_scalar(1.0 / used));
}

Var smooth_loss(Graph& g, Var texture) {
  const Tensor& t = g.value(texture);
  if (t.rank() != 3 || t.shape[0] < 2 || t.shape[1] < 2) {
    throw std::invalid_argument("smooth_loss: texture must be (H,W,C), H,W>=2");
  }
  int h = t.shape[0], w = t.shape[1], c = t.shape[2];
  Var base = g.slice(texture, {0, 0, 0}, {h - 1, w - 1, c});
  Var down = g.slice(texture, {1, 0, 0}, {h - 1, w - 1, c});
  Var right = g.slice(texture, {0, 1, 0}, {h - 1, w - 1, c});
  Var dx = g.square(g.sub(down, base));
  Var dy = g.square(g.sub(right, base));
  Var delta = g.broadcast(g.constant_scalar(kTvDelta), Shape{h - 1, w - 1, c});
  return g.sum(g.sqrt_(g.add(g.add(dx, dy), delta)));
}

Var segmentation_loss(Graph& g, Var prob, const Tensor& target_mask) {
  const Tensor& p = g.value(prob);
  if (!shape_eq(p.shape, target_mask.shape)) {
    throw std::invalid_argument("segmentation_loss: shape mismatch");
  }
  double msum = target_mask.sum();
  Var masked = g.mul(prob, g.constant(target_mask));
  return g.mul(g.sum(masked), g.constant_scalar(1.0 / (msum + kMaskEps)));
}

Var depth_loss(Graph& g, Var depth, const Tensor& target_mask) {
  const Tensor& d = g.value(depth);
  if (!shape_eq(d.shape, target_mask.shape)) {
    throw std::invalid_argument("depth_loss: shape mismatch");
  }
  if (d.min() <= 0.0) {
    throw std::invalid_argument("depth_loss: nonpositive depth");
  }
  double msum = target_mask.sum();
  Var ones = g.broadcast(g.constant_scalar(1.0), d.shape);
  Var eps = g.broadcast(g.constant_scalar(kMaskEps), d.shape);
  Var inv = g.div(ones, g.add(depth, eps));
  Var masked = g.mul(inv, g.constant(target_mask));
  return g.mul(g.sum(masked), g.constant_scalar(1.0 / (msum + kMaskEps)));
}

Tensor nearest_downsample(const Tensor& map, int out_h, int out_w) {
  if (map.rank() != 2) {
    throw std::invalid_argument("nearest_downsample: map must be (H,W)");
  }
  int h = map.shape[0], w = map.shape[1];
  Tensor out(Shape{out_h, out_w});
  for (int i = 0; i < out_h; ++i) {
    int sy = std::min(int((double(i) + 0.5) * h / out_h), h - 1);
    for (int j = 0; j < out_w; ++j) {
      int sx = std::min(int((double(j) + 0.5) * w / out_w), w - 1);
      out.at2(i, j) = map.at2(sy, sx);
    }
  }
  return out;
}

}  // namespace oga
