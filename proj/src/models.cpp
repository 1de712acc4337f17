#include "oga/models.hpp"

#include <cmath>
#include <stdexcept>

#include "oga/rng.hpp"

namespace oga {

namespace {

Tensor he_init(Shape shape, Rng& rng, double fan_in) {
  return Tensor::normal(std::move(shape), rng, std::sqrt(2.0 / fan_in));
}

Tensor xavier_init(Shape shape, Rng& rng, double fan_in, double fan_out) {
  return Tensor::normal(std::move(shape), rng,
                        std::sqrt(2.0 / (fan_in + fan_out)));
}

/// Fixed sinusoidal position table for a g x g patch grid, feature dim c.
Tensor sinusoidal_positions(int g, int c) {
  Tensor pos(Shape{g * g, c});
  for (int p = 0; p < g * g; ++p) {
    const int py = p / g, px = p % g;
    for (int k = 0; k < c / 4; ++k) {
      const double freq = std::pow(100.0, -2.0 * k / double(c / 2));
      pos.at2(p, 4 * k + 0) = std::sin(px * freq);
      pos.at2(p, 4 * k + 1) = std::cos(px * freq);
      pos.at2(p, 4 * k + 2) = std::sin(py * freq);
      pos.at2(p, 4 * k + 3) = std::cos(py * freq);
    }
  }
  return pos;
}

struct WeightTable {
  const Model& model;
  Graph& g;
  bool trainable;
  Var operator()(const std::string& name) const {
    const std::string full = model.name() + "." + name;
    for (const auto& [wname, tensor] : model.weights) {
      if (wname == name) {
        return trainable ? g.input(full, tensor) : g.constant(tensor, full);
      }
    }
    throw std::runtime_error("model weight '" + name + "' missing");
  }
};

Var conv_bias(Graph& g, Var x, Var w, Var b, int stride, int pad,
              int dilation = 1) {
  Var y = g.conv2d(x, w, stride, pad, dilation);
  const Shape ys = g.value(y).shape;
  Var b3 = g.reshape(b, Shape{ys[0], 1, 1});
  return g.add(y, g.broadcast(b3, ys));
}

Var linear_bias(Graph& g, Var x, Var w, Var b) {
  Var y = g.matmul(x, w);
  const Shape ys = g.value(y).shape;
  return g.add(y, g.broadcast(g.reshape(b, Shape{1, ys[1]}), ys));
}

/// (1,h,w) -> (2h,2w) nearest upsample via reshape+broadcast.
Var upsample2(Graph& g, Var x) {
  const Shape s = g.value(x).shape;  // (1,h,w)
  const int h = s[1], w = s[2];
  Var r = g.reshape(x, Shape{h, 1, w, 1});
  Var b = g.broadcast(r, Shape{h, 2, w, 2});
  return g.reshape(b, Shape{2 * h, 2 * w});
}

Var layer_norm(Graph& g, Var x, Var gamma, Var beta) {
  const Shape s = g.value(x).shape;  // (P,C)
  const int p = s[0], c = s[1];
  Var mu = g.reshape(g.mean(x, 1), Shape{p, 1});
  Var dev = g.sub(x, g.broadcast(mu, s));
  Var var = g.reshape(g.mean(g.square(dev), 1), Shape{p, 1});
  Var denom = g.sqrt_(g.add(var, g.broadcast(g.constant_scalar(1e-5), Shape{p, 1})));
  Var normed = g.div(dev, g.broadcast(denom, s));
  Var scaled = g.mul(normed, g.broadcast(g.reshape(gamma, Shape{1, c}), s));
  return g.add(scaled, g.broadcast(g.reshape(beta, Shape{1, c}), s));
}

}  // namespace

Arch arch_from_string(const std::string& name) {
  if (name == "conv-a") return Arch::kConvA;
  if (name == "conv-c") return Arch::kConvC;
  if (name == "attn-b") return Arch::kAttnB;
  if (name == "seg") return Arch::kSeg;
  if (name == "depth") return Arch::kDepth;
  throw std::invalid_argument("unknown architecture '" + name + "'");
}

std::string arch_to_string(Arch arch) {
  switch (arch) {
    case Arch::kConvA: return "conv-a";
    case Arch::kConvC: return "conv-c";
    case Arch::kAttnB: return "attn-b";
    case Arch::kSeg: return "seg";
    case Arch::kDepth: return "depth";
  }
  return "?";
}

Task Model::task() const {
  switch (spec.arch) {
    case Arch::kSeg: return Task::kSegment;
    case Arch::kDepth: return Task::kDepth;
    default: return Task::kDetect;
  }
}

std::string Model::name() const {
  return arch_to_string(spec.arch) + "-s" + std::to_string(spec.seed);
}

int Model::grid() const { return spec.image_size / 8; }

std::vector<Box> Model::cell_boxes() const {
  if (task() != Task::kDetect) return {};
  const int n = grid();
  std::vector<Box> boxes;
  boxes.reserve(size_t(n) * n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      boxes.push_back(Box{double(j) / n, double(i) / n, double(j + 1) / n,
                          double(i + 1) / n});
    }
  }
  return boxes;
}

Model build_model(const ModelSpec& spec) {
  if (spec.image_size % 8 != 0 || spec.image_size < 16) {
    throw std::invalid_argument("image size must be a multiple of 8, >= 16");
  }
  Model m;
  m.spec = spec;
  Rng rng(derive_seed(spec.seed, "weights"));
  auto push = [&](const std::string& name, Tensor t) {
    m.weights.emplace_back(name, std::move(t));
  };
  switch (spec.arch) {
    case Arch::kConvA: {
      push("w1", he_init({8, 3, 3, 3}, rng, 27));
      push("b1", Tensor(Shape{8}));
      push("w2", he_init({16, 8, 3, 3}, rng, 72));
      push("b2", Tensor(Shape{16}));
      push("w3", he_init({16, 16, 3, 3}, rng, 144));
      push("b3", Tensor(Shape{16}));
      push("wh", he_init({1, 16, 1, 1}, rng, 16));
      push("bh", Tensor(Shape{1}));
      break;
    }
    case Arch::kConvC: {
      // slimmer trunk than conv-a keeps this branch cheap and attackable
      push("w1", xavier_init({6, 3, 3, 3}, rng, 27, 6 * 9));
      push("b1", Tensor(Shape{6}));
      push("w2", xavier_init({12, 6, 3, 3}, rng, 54, 12 * 9));
      push("b2", Tensor(Shape{12}));
      push("w3", xavier_init({12, 12, 3, 3}, rng, 108, 12 * 9));
      push("b3", Tensor(Shape{12}));
      push("wh", xavier_init({1, 12, 1, 1}, rng, 12, 1));
      push("bh", Tensor(Shape{1}));
      break;
    }
    case Arch::kAttnB: {
      push("we", xavier_init({32, 3, 8, 8}, rng, 192, 32));
      push("be", Tensor(Shape{32}));
      push("ln_g", Tensor(Shape{32}, 1.0));
      push("ln_b", Tensor(Shape{32}));
      push("wq", xavier_init({32, 32}, rng, 32, 32));
      push("bq", Tensor(Shape{32}));
      push("wk", xavier_init({32, 32}, rng, 32, 32));
      push("bk", Tensor(Shape{32}));
      push("wv", xavier_init({32, 32}, rng, 32, 32));
      push("bv", Tensor(Shape{32}));
      push("wo", xavier_init({32, 32}, rng, 32, 32));
      push("bo", Tensor(Shape{32}));
      push("wh1", xavier_init({32, 32}, rng, 32, 32));
      push("bh1", Tensor(Shape{32}));
      push("wh2", xavier_init({32, 1}, rng, 32, 1));
      push("bh2", Tensor(Shape{1}));
      break;
    }
    case Arch::kSeg: {
      push("w1", he_init({8, 3, 3, 3}, rng, 27));
      push("b1", Tensor(Shape{8}));
      push("w2", he_init({16, 8, 3, 3}, rng, 72));
      push("b2", Tensor(Shape{16}));
      push("wh", he_init({1, 16, 1, 1}, rng, 16));
      push("bh", Tensor(Shape{1}));
      break;
    }
    case Arch::kDepth: {
      push("w1", he_init({8, 3, 3, 3}, rng, 27));
      push("b1", Tensor(Shape{8}));
      push("w2", he_init({8, 8, 3, 3}, rng, 72));
      push("b2", Tensor(Shape{8}));
      push("wh", he_init({1, 8, 1, 1}, rng, 8));
      push("bh", Tensor(Shape{1}));
      break;
    }
  }
  return m;
}

ModelGraph Model::build(Graph& g, Var image_hwc, bool trainable) const {
  const Shape is = g.value(image_hwc).shape;
  if (is.size() != 3 || is[0] != spec.image_size || is[1] != spec.image_size ||
      is[2] != 3) {
    throw std::invalid_argument(
        "model " + name() + ": image must be (" +
        std::to_string(spec.image_size) + "," +
        std::to_string(spec.image_size) + ",3), got " + shape_str(is));
  }
  WeightTable W{*this, g, trainable};
  Var x = g.transpose(image_hwc, {2, 0, 1});  // (3,H,W)
  ModelGraph out;
  switch (spec.arch) {
    case Arch::kConvA: {
      Var h1 = g.relu(conv_bias(g, x, W("w1"), W("b1"), 2, 1));
      Var h2 = g.relu(conv_bias(g, h1, W("w2"), W("b2"), 2, 1));
      Var h3 = g.relu(conv_bias(g, h2, W("w3"), W("b3"), 2, 1));
      out.features = {h1, h2, h3};
      Var head = conv_bias(g, h3, W("wh"), W("bh"), 1, 0);
      out.logits = g.reshape(head, Shape{grid() * grid()});
      out.output = g.sigmoid(out.logits);
      break;
    }
    case Arch::kConvC: {
      Var h1 = g.tanh_(conv_bias(g, x, W("w1"), W("b1"), 2, 2, 2));
      Var h2 = g.tanh_(conv_bias(g, h1, W("w2"), W("b2"), 2, 2, 2));
      Var h3 = g.tanh_(conv_bias(g, h2, W("w3"), W("b3"), 2, 2, 2));
      out.features = {h1, h2, h3};
      Var head = conv_bias(g, h3, W("wh"), W("bh"), 1, 0);
      out.logits = g.reshape(head, Shape{grid() * grid()});
      out.output = g.sigmoid(out.logits);
      break;
    }
    case Arch::kAttnB: {
      const int gd = spec.image_size / 8;  // patch grid edge
      const int p = gd * gd;
      Var embed = conv_bias(g, x, W("we"), W("be"), 8, 0);  // (32,gd,gd)
      out.features.push_back(embed);
      Var tokens = g.transpose(g.reshape(embed, Shape{32, p}), {1, 0});
      Var pos = g.constant(sinusoidal_positions(gd, 32), "positions");
      Var xt = layer_norm(g, g.add(tokens, pos), W("ln_g"), W("ln_b"));
      Var q = linear_bias(g, xt, W("wq"), W("bq"));
      Var k = linear_bias(g, xt, W("wk"), W("bk"));
      Var v = linear_bias(g, xt, W("wv"), W("bv"));
      Var scores = g.mul(g.matmul(q, g.transpose(k, {1, 0})),
                         g.broadcast(g.constant_scalar(1.0 / std::sqrt(32.0)),
                                     Shape{p, p}));
      Var ctx = g.matmul(g.softmax(scores), v);
      Var attn_out = linear_bias(g, ctx, W("wo"), W("bo"));
      Var x2 = g.add(xt, attn_out);
      out.features.push_back(
          g.reshape(g.transpose(x2, {1, 0}), Shape{32, gd, gd}));
      Var h1 = g.gelu(linear_bias(g, x2, W("wh1"), W("bh1")));
      Var logits2 = linear_bias(g, h1, W("wh2"), W("bh2"));
      out.logits = g.reshape(logits2, Shape{p});
      out.output = g.sigmoid(out.logits);
      break;
    }
    case Arch::kSeg: {
      Var h1 = g.relu(conv_bias(g, x, W("w1"), W("b1"), 2, 1));
      Var h2 = g.relu(conv_bias(g, h1, W("w2"), W("b2"), 1, 1));
      out.features = {h1, h2};
      Var head = conv_bias(g, h2, W("wh"), W("bh"), 1, 0);  // (1,H/2,W/2)
      out.logits = upsample2(g, head);
      out.output = g.sigmoid(out.logits);
      break;
    }
    case Arch::kDepth: {
      Var h1 = g.relu(conv_bias(g, x, W("w1"), W("b1"), 2, 1));
      Var h2 = g.relu(conv_bias(g, h1, W("w2"), W("b2"), 1, 1));
      out.features = {h1, h2};
      Var head = conv_bias(g, h2, W("wh"), W("bh"), 1, 0);
      out.logits = upsample2(g, head);
      out.output = g.softplus(out.logits);
      break;
    }
  }
  return out;
}

namespace {

void validate_image(const Model& m, const Tensor& image) {
  if (image.rank() != 3 || image.shape[0] != m.spec.image_size ||
      image.shape[1] != m.spec.image_size || image.shape[2] != 3) {
    throw std::invalid_argument("image shape mismatch for model " + m.name());
  }
}

}  // namespace

DetectionSet detect(const Model& model, const Tensor& image) {
  if (model.task() != Task::kDetect) {
    throw std::invalid_argument(model.name() + " is not a detector");
  }
  validate_image(model, image);
  Graph g;
  Var img = g.constant(image, "image");
  ModelGraph mg = model.build(g, img, false);
  DetectionSet out;
  const Tensor& conf = g.value(mg.output);
  std::vector<Box> boxes = model.cell_boxes();
  out.detections.reserve(boxes.size());
  for (size_t i = 0; i < boxes.size(); ++i) {
    out.detections.push_back(Detection{boxes[i], conf.data[i]});
  }
  for (Var f : mg.features) out.features.push_back(g.value(f));
  return out;
}

Tensor segment(const Model& model, const Tensor& image) {
  if (model.task() != Task::kSegment) {
    throw std::invalid_argument(model.name() + " is not a segmenter");
  }
  validate_image(model, image);
  Graph g;
  ModelGraph mg = model.build(g, g.constant(image, "image"), false);
  return g.value(mg.output);
}

Tensor estimate_depth(const Model& model, const Tensor& image) {
  if (model.task() != Task::kDepth) {
    throw std::invalid_argument(model.name() + " is not a depth model");
  }
  validate_image(model, image);
  Graph g;
  ModelGraph mg = model.build(g, g.constant(image, "image"), false);
  return g.value(mg.output);
}

}  // namespace oga
