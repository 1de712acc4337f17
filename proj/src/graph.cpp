#include "oga/graph.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>

namespace oga {

namespace {

constexpr double kPi = 3.141592653589793238462643383279502884;

std::vector<int64_t> strides_of(const Shape& s) {
  std::vector<int64_t> st(s.size(), 1);
  int64_t acc = 1;
  for (int i = int(s.size()) - 1; i >= 0; --i) {
    st[size_t(i)] = acc;
    acc *= s[size_t(i)];
  }
  return st;
}

double stable_sigmoid(double x) {
  if (x >= 0.0) {
    double e = std::exp(-x);
    return 1.0 / (1.0 + e);
  }
  double e = std::exp(x);
  return e / (1.0 + e);
}

double stable_softplus(double x) {
  // log(1 + e^x) without overflow on either tail.
  if (x > 0.0) return x + std::log1p(std::exp(-x));
  return std::log1p(std::exp(x));
}

}  // namespace

const char* op_name(Op op) {
  switch (op) {
    case Op::kInput: return "input";
    case Op::kConst: return "const";
    case Op::kAdd: return "add";
    case Op::kSub: return "sub";
    case Op::kMul: return "mul";
    case Op::kDiv: return "div";
    case Op::kNeg: return "neg";
    case Op::kMatmul: return "matmul";
    case Op::kConv2d: return "conv2d";
    case Op::kRelu: return "relu";
    case Op::kGelu: return "gelu";
    case Op::kTanh: return "tanh";
    case Op::kSigmoid: return "sigmoid";
    case Op::kSoftplus: return "softplus";
    case Op::kExp: return "exp";
    case Op::kLog: return "log";
    case Op::kSqrt: return "sqrt";
    case Op::kSquare: return "square";
    case Op::kSum: return "sum";
    case Op::kMean: return "mean";
    case Op::kMaxConst: return "max_const";
    case Op::kBilinearSample: return "bilinear_sample";
    case Op::kReshape: return "reshape";
    case Op::kTranspose: return "transpose";
    case Op::kConcat: return "concat";
    case Op::kSlice: return "slice";
    case Op::kBroadcast: return "broadcast";
    case Op::kSoftmax: return "softmax";
    case Op::kLogSumExp: return "logsumexp";
  }
  return "?";
}

void Graph::fail(const Node& n, const std::string& what) const {
  std::ostringstream os;
  os << op_name(n.op) << " '" << n.name << "': " << what;
  throw GraphError(os.str());
}

int Graph::append(Node n) {
  if (n.name.empty()) {
    n.name = std::string(op_name(n.op)) + "#" + std::to_string(nodes_.size());
  }
  nodes_.push_back(std::move(n));
  return int(nodes_.size()) - 1;
}

Var Graph::finish(Node n) {
  n.needs_grad = false;
  for (int in : n.inputs) n.needs_grad |= nodes_[size_t(in)].needs_grad;
  int id = append(std::move(n));
  eval(id);
  check_finite(id);
  return Var{this, id};
}

void Graph::check_finite(int id) const {
  const Node& n = nodes_[size_t(id)];
  if (!n.value.all_finite()) fail(n, "non-finite output");
}

Var Graph::input(const std::string& name, Shape shape) {
  if (inputs_.count(name)) {
    throw GraphError("duplicate input name '" + name + "'");
  }
  Node n;
  n.op = Op::kInput;
  n.name = name;
  n.value = Tensor(std::move(shape));
  n.needs_grad = true;
  int id = append(std::move(n));
  inputs_[name] = id;
  return Var{this, id};
}

Var Graph::input(const std::string& name, Tensor initial) {
  Var v = input(name, initial.shape);
  nodes_[size_t(v.id)].value = std::move(initial);
  check_finite(v.id);
  return v;
}

Var Graph::constant(Tensor value, const std::string& name) {
  Node n;
  n.op = Op::kConst;
  n.name = name;
  n.value = std::move(value);
  n.needs_grad = false;
  int id = append(std::move(n));
  check_finite(id);
  return Var{this, id};
}

Var Graph::constant_scalar(double v, const std::string& name) {
  return constant(Tensor::scalar(v), name);
}

const Tensor& Graph::value(Var v) const { return nodes_[size_t(v.id)].value; }
const Tensor& Graph::adjoint(Var v) const {
  return nodes_[size_t(v.id)].adjoint;
}

// ---------------------------------------------------------------------------
// builders
// ---------------------------------------------------------------------------

static void require_same_graph(const Graph* g, std::initializer_list<Var> vs) {
  for (Var v : vs) {
    if (!v.valid() || v.graph != g) {
      throw GraphError("operand does not belong to this graph");
    }
  }
}

Var Graph::add(Var a, Var b) {
  require_same_graph(this, {a, b});
  Node n;
  n.op = Op::kAdd;
  n.inputs = {a.id, b.id};
  if (!shape_eq(value(a).shape, value(b).shape)) {
    fail(n, "shape mismatch " + shape_str(value(a).shape) + " vs " +
                shape_str(value(b).shape));
  }
  return finish(std::move(n));
}

Var Graph::sub(Var a, Var b) {
  require_same_graph(this, {a, b});
  Node n;
  n.op = Op::kSub;
  n.inputs = {a.id, b.id};
  if (!shape_eq(value(a).shape, value(b).shape)) {
    fail(n, "shape mismatch " + shape_str(value(a).shape) + " vs " +
                shape_str(value(b).shape));
  }
  return finish(std::move(n));
}

Var Graph::mul(Var a, Var b) {
  require_same_graph(this, {a, b});
  Node n;
  n.op = Op::kMul;
  n.inputs = {a.id, b.id};
  if (!shape_eq(value(a).shape, value(b).shape)) {
    fail(n, "shape mismatch " + shape_str(value(a).shape) + " vs " +
                shape_str(value(b).shape));
  }
  return finish(std::move(n));
}

Var Graph::div(Var a, Var b) {
  require_same_graph(this, {a, b});
  Node n;
  n.op = Op::kDiv;
  n.inputs = {a.id, b.id};
  if (!shape_eq(value(a).shape, value(b).shape)) {
    fail(n, "shape mismatch " + shape_str(value(a).shape) + " vs " +
                shape_str(value(b).shape));
  }
  return finish(std::move(n));
}

Var Graph::neg(Var a) {
  require_same_graph(this, {a});
  Node n;
  n.op = Op::kNeg;
  n.inputs = {a.id};
  return finish(std::move(n));
}

Var Graph::matmul(Var a, Var b) {
  require_same_graph(this, {a, b});
  Node n;
  n.op = Op::kMatmul;
  n.inputs = {a.id, b.id};
  const Tensor& ta = value(a);
  const Tensor& tb = value(b);
  if (ta.rank() != 2 || tb.rank() != 2) fail(n, "operands must be rank-2");
  if (ta.shape[1] != tb.shape[0]) {
    fail(n, "inner dims differ: " + shape_str(ta.shape) + " vs " +
                shape_str(tb.shape));
  }
  return finish(std::move(n));
}

Var Graph::conv2d(Var x, Var w, int stride, int pad, int dilation) {
  require_same_graph(this, {x, w});
  Node n;
  n.op = Op::kConv2d;
  n.inputs = {x.id, w.id};
  n.iattrs = {stride, pad, dilation};
  const Tensor& tx = value(x);
  const Tensor& tw = value(w);
  if (tx.rank() != 3 || tw.rank() != 4) fail(n, "expect x(C,H,W) w(O,C,kh,kw)");
  if (tx.shape[0] != tw.shape[1]) fail(n, "channel mismatch");
  if (stride < 1 || pad < 0 || dilation < 1) fail(n, "bad stride/pad/dilation");
  int eff_h = (tw.shape[2] - 1) * dilation + 1;
  int eff_w = (tw.shape[3] - 1) * dilation + 1;
  if (tx.shape[1] + 2 * pad < eff_h || tx.shape[2] + 2 * pad < eff_w) {
    fail(n, "kernel larger than padded input");
  }
  return finish(std::move(n));
}

#define OGA_UNARY(method, opcode)              \
  Var Graph::method(Var a) {                   \
    require_same_graph(this, {a});             \
    Node n;                                    \
    n.op = opcode;                             \
    n.inputs = {a.id};                         \
    return finish(std::move(n));               \
  }

OGA_UNARY(relu, Op::kRelu)
OGA_UNARY(gelu, Op::kGelu)
OGA_UNARY(tanh_, Op::kTanh)
OGA_UNARY(sigmoid, Op::kSigmoid)
OGA_UNARY(softplus, Op::kSoftplus)
OGA_UNARY(exp_, Op::kExp)
OGA_UNARY(log_, Op::kLog)
OGA_UNARY(sqrt_, Op::kSqrt)
OGA_UNARY(square, Op::kSquare)
#undef OGA_UNARY

Var Graph::sum(Var a, int axis) {
  require_same_graph(this, {a});
  Node n;
  n.op = Op::kSum;
  n.inputs = {a.id};
  n.iattrs = {axis};
  if (axis != -1 && (axis < 0 || axis >= value(a).rank())) {
    fail(n, "axis out of range");
  }
  return finish(std::move(n));
}

Var Graph::mean(Var a, int axis) {
  require_same_graph(this, {a});
  Node n;
  n.op = Op::kMean;
  n.inputs = {a.id};
  n.iattrs = {axis};
  if (axis != -1 && (axis < 0 || axis >= value(a).rank())) {
    fail(n, "axis out of range");
  }
  return finish(std::move(n));
}

Var Graph::max_const(Var a, double c) {
  require_same_graph(this, {a});
  Node n;
  n.op = Op::kMaxConst;
  n.inputs = {a.id};
  n.dattrs = {c};
  return finish(std::move(n));
}

Var Graph::bilinear_sample(Var texture, Var uv) {
  require_same_graph(this, {texture, uv});
  Node n;
  n.op = Op::kBilinearSample;
  n.inputs = {texture.id, uv.id};
  const Tensor& t = value(texture);
  const Tensor& u = value(uv);
  if (t.rank() != 3) fail(n, "texture must be (H,W,C)");
  if (t.shape[0] < 2 || t.shape[1] < 2) fail(n, "texture must be at least 2x2");
  if (u.rank() != 2 || u.shape[1] != 2) fail(n, "uv must be (P,2)");
  if (nodes_[size_t(uv.id)].needs_grad) {
    fail(n, "sample positions must be constant");
  }
  return finish(std::move(n));
}

Var Graph::reshape(Var a, Shape target) {
  require_same_graph(this, {a});
  Node n;
  n.op = Op::kReshape;
  n.inputs = {a.id};
  for (int d : target) n.iattrs.push_back(d);
  if (shape_numel(target) != value(a).numel()) {
    fail(n, "numel mismatch: " + shape_str(value(a).shape) + " -> " +
                shape_str(target));
  }
  return finish(std::move(n));
}

Var Graph::transpose(Var a, std::vector<int> perm) {
  require_same_graph(this, {a});
  Node n;
  n.op = Op::kTranspose;
  n.inputs = {a.id};
  const Tensor& t = value(a);
  if (int(perm.size()) != t.rank()) fail(n, "perm rank mismatch");
  std::vector<bool> seen(perm.size(), false);
  for (int p : perm) {
    if (p < 0 || p >= t.rank() || seen[size_t(p)]) fail(n, "bad permutation");
    seen[size_t(p)] = true;
  }
  for (int p : perm) n.iattrs.push_back(p);
  return finish(std::move(n));
}

Var Graph::concat(const std::vector<Var>& parts, int axis) {
  if (parts.empty()) throw GraphError("concat: no inputs");
  require_same_graph(this, {parts[0]});
  Node n;
  n.op = Op::kConcat;
  n.iattrs = {axis};
  const Tensor& t0 = value(parts[0]);
  if (axis < 0 || axis >= t0.rank()) fail(n, "axis out of range");
  for (Var p : parts) {
    require_same_graph(this, {p});
    const Tensor& t = value(p);
    if (t.rank() != t0.rank()) fail(n, "rank mismatch");
    for (int d = 0; d < t.rank(); ++d) {
      if (d != axis && t.shape[size_t(d)] != t0.shape[size_t(d)]) {
        fail(n, "non-axis dims differ");
      }
    }
    n.inputs.push_back(p.id);
  }
  return finish(std::move(n));
}

Var Graph::slice(Var a, std::vector<int> offsets, std::vector<int> sizes) {
  require_same_graph(this, {a});
  Node n;
  n.op = Op::kSlice;
  n.inputs = {a.id};
  const Tensor& t = value(a);
  if (int(offsets.size()) != t.rank() || int(sizes.size()) != t.rank()) {
    fail(n, "offsets/sizes rank mismatch");
  }
  for (int d = 0; d < t.rank(); ++d) {
    if (offsets[size_t(d)] < 0 || sizes[size_t(d)] <= 0 ||
        offsets[size_t(d)] + sizes[size_t(d)] > t.shape[size_t(d)]) {
      fail(n, "slice out of bounds");
    }
  }
  for (int v : offsets) n.iattrs.push_back(v);
  for (int v : sizes) n.iattrs.push_back(v);
  return finish(std::move(n));
}

Var Graph::broadcast(Var a, Shape target) {
  require_same_graph(this, {a});
  Node n;
  n.op = Op::kBroadcast;
  n.inputs = {a.id};
  for (int d : target) n.iattrs.push_back(d);
  const Tensor& t = value(a);
  if (t.numel() != 1) {
    if (int(target.size()) != t.rank()) fail(n, "rank mismatch");
    for (int d = 0; d < t.rank(); ++d) {
      if (t.shape[size_t(d)] != target[size_t(d)] && t.shape[size_t(d)] != 1) {
        fail(n, "dim " + std::to_string(d) + " not broadcastable");
      }
    }
  }
  return finish(std::move(n));
}

Var Graph::softmax(Var a) {
  require_same_graph(this, {a});
  Node n;
  n.op = Op::kSoftmax;
  n.inputs = {a.id};
  if (value(a).rank() < 1) fail(n, "needs rank >= 1");
  return finish(std::move(n));
}

Var Graph::logsumexp(Var a) {
  require_same_graph(this, {a});
  Node n;
  n.op = Op::kLogSumExp;
  n.inputs = {a.id};
  return finish(std::move(n));
}

// ---------------------------------------------------------------------------
// evaluation
// ---------------------------------------------------------------------------

void Graph::eval(int id) {
  Node& n = nodes_[size_t(id)];
  auto in = [&](int k) -> const Tensor& {
    return nodes_[size_t(n.inputs[size_t(k)])].value;
  };
  switch (n.op) {
    case Op::kInput:
    case Op::kConst:
      break;
    case Op::kAdd: {
      const Tensor &a = in(0), &b = in(1);
      n.value = Tensor(a.shape);
      for (size_t i = 0; i < a.data.size(); ++i)
        n.value.data[i] = a.data[i] + b.data[i];
      break;
    }
    case Op::kSub: {
      const Tensor &a = in(0), &b = in(1);
      n.value = Tensor(a.shape);
      for (size_t i = 0; i < a.data.size(); ++i)
        n.value.data[i] = a.data[i] - b.data[i];
      break;
    }
    case Op::kMul: {
      const Tensor &a = in(0), &b = in(1);
      n.value = Tensor(a.shape);
      for (size_t i = 0; i < a.data.size(); ++i)
        n.value.data[i] = a.data[i] * b.data[i];
      break;
    }
    case Op::kDiv: {
      const Tensor &a = in(0), &b = in(1);
      n.value = Tensor(a.shape);
      for (size_t i = 0; i < a.data.size(); ++i)
        n.value.data[i] = a.data[i] / b.data[i];
      break;
    }
    case Op::kNeg: {
      const Tensor& a = in(0);
      n.value = Tensor(a.shape);
      for (size_t i = 0; i < a.data.size(); ++i) n.value.data[i] = -a.data[i];
      break;
    }
    case Op::kMatmul: {
      const Tensor &a = in(0), &b = in(1);
      int m = a.shape[0], k = a.shape[1], p = b.shape[1];
      n.value = Tensor(Shape{m, p});
      for (int i = 0; i < m; ++i) {
        for (int l = 0; l < k; ++l) {
          double av = a.data[size_t(i) * k + l];
          if (av == 0.0) continue;
          const double* brow = &b.data[size_t(l) * p];
          double* crow = &n.value.data[size_t(i) * p];
          for (int j = 0; j < p; ++j) crow[j] += av * brow[j];
        }
      }
      break;
    }
    case Op::kConv2d: {
      const Tensor &x = in(0), &w = in(1);
      int stride = int(n.iattrs[0]), pad = int(n.iattrs[1]),
          dil = int(n.iattrs[2]);
      int ci = x.shape[0], h = x.shape[1], wd = x.shape[2];
      int co = w.shape[0], kh = w.shape[2], kw = w.shape[3];
      int ho = (h + 2 * pad - ((kh - 1) * dil + 1)) / stride + 1;
      int wo = (wd + 2 * pad - ((kw - 1) * dil + 1)) / stride + 1;
      n.value = Tensor(Shape{co, ho, wo});
      for (int oc = 0; oc < co; ++oc) {
        for (int ic = 0; ic < ci; ++ic) {
          const double* xc = &x.data[size_t(ic) * h * wd];
          const double* wc = &w.data[(size_t(oc) * ci + ic) * kh * kw];
          for (int r = 0; r < kh; ++r) {
            for (int c = 0; c < kw; ++c) {
              double wv = wc[r * kw + c];
              if (wv == 0.0) continue;
              for (int oy = 0; oy < ho; ++oy) {
                int iy = oy * stride - pad + r * dil;
                if (iy < 0 || iy >= h) continue;
                double* orow = &n.value.data[(size_t(oc) * ho + oy) * wo];
                const double* irow = &xc[size_t(iy) * wd];
                for (int ox = 0; ox < wo; ++ox) {
                  int ix = ox * stride - pad + c * dil;
                  if (ix < 0 || ix >= wd) continue;
                  orow[ox] += wv * irow[ix];
                }
              }
            }
          }
        }
      }
      break;
    }
    case Op::kRelu: {
      const Tensor& a = in(0);
      n.value = Tensor(a.shape);
      for (size_t i = 0; i < a.data.size(); ++i)
        n.value.data[i] = a.data[i] > 0.0 ? a.data[i] : 0.0;
      break;
    }
    case Op::kGelu: {
      const Tensor& a = in(0);
      n.value = Tensor(a.shape);
      for (size_t i = 0; i < a.data.size(); ++i) {
        double x = a.data[i];
        n.value.data[i] = 0.5 * x * (1.0 + std::erf(x * 0.7071067811865475244));
      }
      break;
    }
    case Op::kTanh: {
      const Tensor& a = in(0);
      n.value = Tensor(a.shape);
      for (size_t i = 0; i < a.data.size(); ++i)
        n.value.data[i] = std::tanh(a.data[i]);
      break;
    }
    case Op::kSigmoid: {
      const Tensor& a = in(0);
      n.value = Tensor(a.shape);
      for (size_t i = 0; i < a.data.size(); ++i)
        n.value.data[i] = stable_sigmoid(a.data[i]);
      break;
    }
    case Op::kSoftplus: {
      const Tensor& a = in(0);
      n.value = Tensor(a.shape);
      for (size_t i = 0; i < a.data.size(); ++i)
        n.value.data[i] = stable_softplus(a.data[i]);
      break;
    }
    case Op::kExp: {
      const Tensor& a = in(0);
      n.value = Tensor(a.shape);
      for (size_t i = 0; i < a.data.size(); ++i)
        n.value.data[i] = std::exp(a.data[i]);
      break;
    }
    case Op::kLog: {
      const Tensor& a = in(0);
      n.value = Tensor(a.shape);
      for (size_t i = 0; i < a.data.size(); ++i)
        n.value.data[i] = std::log(a.data[i]);
      break;
    }
    case Op::kSqrt: {
      const Tensor& a = in(0);
      n.value = Tensor(a.shape);
      for (size_t i = 0; i < a.data.size(); ++i)
        n.value.data[i] = std::sqrt(a.data[i]);
      break;
    }
    case Op::kSquare: {
      const Tensor& a = in(0);
      n.value = Tensor(a.shape);
      for (size_t i = 0; i < a.data.size(); ++i)
        n.value.data[i] = a.data[i] * a.data[i];
      break;
    }
    case Op::kSum:
    case Op::kMean: {
      const Tensor& a = in(0);
      int axis = int(n.iattrs[0]);
      if (axis == -1) {
        double s = 0.0;
        for (double v : a.data) s += v;
        if (n.op == Op::kMean) s /= double(a.numel());
        n.value = Tensor::scalar(s);
      } else {
        int64_t outer = 1, inner = 1;
        int cnt = a.shape[size_t(axis)];
        for (int d = 0; d < axis; ++d) outer *= a.shape[size_t(d)];
        for (int d = axis + 1; d < a.rank(); ++d) inner *= a.shape[size_t(d)];
        Shape os;
        for (int d = 0; d < a.rank(); ++d)
          if (d != axis) os.push_back(a.shape[size_t(d)]);
        if (os.empty()) os.push_back(1);
        n.value = Tensor(os);
        for (int64_t o = 0; o < outer; ++o) {
          for (int64_t k = 0; k < cnt; ++k) {
            const double* src = &a.data[size_t((o * cnt + k) * inner)];
            double* dst = &n.value.data[size_t(o * inner)];
            for (int64_t i = 0; i < inner; ++i) dst[i] += src[i];
          }
        }
        if (n.op == Op::kMean) {
          for (double& v : n.value.data) v /= double(cnt);
        }
      }
      break;
    }
    case Op::kMaxConst: {
      const Tensor& a = in(0);
      double c = n.dattrs[0];
      n.value = Tensor(a.shape);
      for (size_t i = 0; i < a.data.size(); ++i)
        n.value.data[i] = a.data[i] > c ? a.data[i] : c;
      break;
    }
    case Op::kBilinearSample: {
      const Tensor &t = in(0), &uv = in(1);
      int h = t.shape[0], w = t.shape[1], c = t.shape[2];
      int p = uv.shape[0];
      n.value = Tensor(Shape{p, c});
      for (int i = 0; i < p; ++i) {
        double x = uv.data[size_t(i) * 2 + 0];
        double y = uv.data[size_t(i) * 2 + 1];
        x = std::min(std::max(x, 0.0), double(w - 1));
        y = std::min(std::max(y, 0.0), double(h - 1));
        int x0 = std::min(int(std::floor(x)), w - 2);
        int y0 = std::min(int(std::floor(y)), h - 2);
        double fx = x - x0, fy = y - y0;
        double w00 = (1 - fy) * (1 - fx), w01 = (1 - fy) * fx;
        double w10 = fy * (1 - fx), w11 = fy * fx;
        const double* r0 = &t.data[(size_t(y0) * w + x0) * c];
        const double* r1 = &t.data[(size_t(y0 + 1) * w + x0) * c];
        double* out = &n.value.data[size_t(i) * c];
        for (int ch = 0; ch < c; ++ch) {
          out[ch] = w00 * r0[ch] + w01 * r0[c + ch] + w10 * r1[ch] +
                    w11 * r1[c + ch];
        }
      }
      break;
    }
    case Op::kReshape: {
      const Tensor& a = in(0);
      Shape target(n.iattrs.begin(), n.iattrs.end());
      n.value.shape = target;
      n.value.data = a.data;
      break;
    }
    case Op::kTranspose: {
      const Tensor& a = in(0);
      int r = a.rank();
      Shape os(size_t(r), 0);
      for (int d = 0; d < r; ++d)
        os[size_t(d)] = a.shape[size_t(n.iattrs[size_t(d)])];
      n.value = Tensor(os);
      auto ost = strides_of(os);
      std::vector<int> idx(size_t(r), 0);
      int64_t total = a.numel();
      for (int64_t f = 0; f < total; ++f) {
        int64_t off = 0;
        for (int d = 0; d < r; ++d) {
          off += int64_t(idx[size_t(n.iattrs[size_t(d)])]) * ost[size_t(d)];
        }
        n.value.data[size_t(off)] = a.data[size_t(f)];
        for (int d = r - 1; d >= 0; --d) {
          if (++idx[size_t(d)] < a.shape[size_t(d)]) break;
          idx[size_t(d)] = 0;
        }
      }
      break;
    }
    case Op::kConcat: {
      int axis = int(n.iattrs[0]);
      const Tensor& t0 = in(0);
      Shape os = t0.shape;
      int total_axis = 0;
      for (size_t k = 0; k < n.inputs.size(); ++k) {
        total_axis += nodes_[size_t(n.inputs[k])].value.shape[size_t(axis)];
      }
      os[size_t(axis)] = total_axis;
      n.value = Tensor(os);
      int64_t outer = 1, inner = 1;
      for (int d = 0; d < axis; ++d) outer *= os[size_t(d)];
      for (int d = axis + 1; d < int(os.size()); ++d) inner *= os[size_t(d)];
      int64_t dst_axis_off = 0;
      for (size_t k = 0; k < n.inputs.size(); ++k) {
        const Tensor& part = nodes_[size_t(n.inputs[k])].value;
        int pa = part.shape[size_t(axis)];
        for (int64_t o = 0; o < outer; ++o) {
          for (int64_t j = 0; j < pa; ++j) {
            const double* src = &part.data[size_t((o * pa + j) * inner)];
            double* dst =
                &n.value
                     .data[size_t((o * total_axis + dst_axis_off + j) * inner)];
            std::memcpy(dst, src, size_t(inner) * sizeof(double));
          }
        }
        dst_axis_off += pa;
      }
      break;
    }
    case Op::kSlice: {
      const Tensor& a = in(0);
      int r = a.rank();
      std::vector<int> off(size_t(r), 0), sz(size_t(r), 0);
      for (int d = 0; d < r; ++d) {
        off[size_t(d)] = int(n.iattrs[size_t(d)]);
        sz[size_t(d)] = int(n.iattrs[size_t(r + d)]);
      }
      Shape os(sz.begin(), sz.end());
      n.value = Tensor(os);
      auto ist = strides_of(a.shape);
      std::vector<int> idx(size_t(r), 0);
      int64_t total = n.value.numel();
      for (int64_t f = 0; f < total; ++f) {
        int64_t src = 0;
        for (int d = 0; d < r; ++d) {
          src += int64_t(off[size_t(d)] + idx[size_t(d)]) * ist[size_t(d)];
        }
        n.value.data[size_t(f)] = a.data[size_t(src)];
        for (int d = r - 1; d >= 0; --d) {
          if (++idx[size_t(d)] < sz[size_t(d)]) break;
          idx[size_t(d)] = 0;
        }
      }
      break;
    }
    case Op::kBroadcast: {
      const Tensor& a = in(0);
      Shape os(n.iattrs.begin(), n.iattrs.end());
      n.value = Tensor(os);
      if (a.numel() == 1) {
        double v = a.data[0];
        for (double& x : n.value.data) x = v;
      } else {
        int r = int(os.size());
        auto ist = strides_of(a.shape);
        std::vector<int> idx(size_t(r), 0);
        int64_t total = n.value.numel();
        for (int64_t f = 0; f < total; ++f) {
          int64_t src = 0;
          for (int d = 0; d < r; ++d) {
            int i = a.shape[size_t(d)] == 1 ? 0 : idx[size_t(d)];
            src += int64_t(i) * ist[size_t(d)];
          }
          n.value.data[size_t(f)] = a.data[size_t(src)];
          for (int d = r - 1; d >= 0; --d) {
            if (++idx[size_t(d)] < os[size_t(d)]) break;
            idx[size_t(d)] = 0;
          }
        }
      }
      break;
    }
    case Op::kSoftmax: {
      const Tensor& a = in(0);
      int last = a.shape.back();
      int64_t rows = a.numel() / last;
      n.value = Tensor(a.shape);
      for (int64_t r = 0; r < rows; ++r) {
        const double* src = &a.data[size_t(r * last)];
        double* dst = &n.value.data[size_t(r * last)];
        double m = src[0];
        for (int j = 1; j < last; ++j) m = std::max(m, src[j]);
        double s = 0.0;
        for (int j = 0; j < last; ++j) {
          dst[j] = std::exp(src[j] - m);
          s += dst[j];
        }
        for (int j = 0; j < last; ++j) dst[j] /= s;
      }
      break;
    }
    case Op::kLogSumExp: {
      const Tensor& a = in(0);
      double m = a.data[0];
      for (double v : a.data) m = std::max(m, v);
      double s = 0.0;
      for (double v : a.data) s += std::exp(v - m);
      n.value = Tensor::scalar(m + std::log(s));
      break;
    }
  }
}

// ---------------------------------------------------------------------------
// forward with bindings
// ---------------------------------------------------------------------------

void Graph::forward(const std::unordered_map<std::string, Tensor>& bindings) {
  for (auto& [name, id] : inputs_) {
    auto it = bindings.find(name);
    if (it == bindings.end()) {
      throw GraphError("input '" + name + "' has no binding");
    }
    Node& n = nodes_[size_t(id)];
    if (!shape_eq(it->second.shape, n.value.shape)) {
      fail(n, "binding shape " + shape_str(it->second.shape) +
                  " does not match declared " + shape_str(n.value.shape));
    }
    n.value = it->second;
    check_finite(id);
  }
  for (int id = 0; id < int(nodes_.size()); ++id) {
    Node& n = nodes_[size_t(id)];
    if (n.op == Op::kInput || n.op == Op::kConst) continue;
    eval(id);
    check_finite(id);
  }
}

// ---------------------------------------------------------------------------
// backward
// ---------------------------------------------------------------------------

void Graph::backprop(int id) {
  Node& n = nodes_[size_t(id)];
  const Tensor& g = n.adjoint;
  auto inv = [&](int k) -> const Tensor& {
    return nodes_[size_t(n.inputs[size_t(k)])].value;
  };
  auto ing = [&](int k) -> Tensor& {
    return nodes_[size_t(n.inputs[size_t(k)])].adjoint;
  };
  auto wants = [&](int k) {
    return nodes_[size_t(n.inputs[size_t(k)])].needs_grad;
  };
  switch (n.op) {
    case Op::kInput:
    case Op::kConst:
      break;
    case Op::kAdd: {
      if (wants(0)) {
        Tensor& da = ing(0);
        for (size_t i = 0; i < g.data.size(); ++i) da.data[i] += g.data[i];
      }
      if (wants(1)) {
        Tensor& db = ing(1);
        for (size_t i = 0; i < g.data.size(); ++i) db.data[i] += g.data[i];
      }
      break;
    }
    case Op::kSub: {
      if (wants(0)) {
        Tensor& da = ing(0);
        for (size_t i = 0; i < g.data.size(); ++i) da.data[i] += g.data[i];
      }
      if (wants(1)) {
        Tensor& db = ing(1);
        for (size_t i = 0; i < g.data.size(); ++i) db.data[i] -= g.data[i];
      }
      break;
    }
    case Op::kMul: {
      const Tensor &a = inv(0), &b = inv(1);
      if (wants(0)) {
        Tensor& da = ing(0);
        for (size_t i = 0; i < g.data.size(); ++i)
          da.data[i] += g.data[i] * b.data[i];
      }
      if (wants(1)) {
        Tensor& db = ing(1);
        for (size_t i = 0; i < g.data.size(); ++i)
          db.data[i] += g.data[i] * a.data[i];
      }
      break;
    }
    case Op::kDiv: {
      const Tensor &a = inv(0), &b = inv(1);
      if (wants(0)) {
        Tensor& da = ing(0);
        for (size_t i = 0; i < g.data.size(); ++i)
          da.data[i] += g.data[i] / b.data[i];
      }
      if (wants(1)) {
        Tensor& db = ing(1);
        for (size_t i = 0; i < g.data.size(); ++i)
          db.data[i] -= g.data[i] * a.data[i] / (b.data[i] * b.data[i]);
      }
      break;
    }
    case Op::kNeg: {
      if (wants(0)) {
        Tensor& da = ing(0);
        for (size_t i = 0; i < g.data.size(); ++i) da.data[i] -= g.data[i];
      }
      break;
    }
    case Op::kMatmul: {
      const Tensor &a = inv(0), &b = inv(1);
      int m = a.shape[0], k = a.shape[1], p = b.shape[1];
      if (wants(0)) {
        Tensor& da = ing(0);
        // dA = G * B^T
        for (int i = 0; i < m; ++i) {
          for (int l = 0; l < k; ++l) {
            double acc = 0.0;
            const double* grow = &g.data[size_t(i) * p];
            const double* brow = &b.data[size_t(l) * p];
            for (int j = 0; j < p; ++j) acc += grow[j] * brow[j];
            da.data[size_t(i) * k + l] += acc;
          }
        }
      }
      if (wants(1)) {
        Tensor& db = ing(1);
        // dB = A^T * G
        for (int l = 0; l < k; ++l) {
          for (int i = 0; i < m; ++i) {
            double av = a.data[size_t(i) * k + l];
            if (av == 0.0) continue;
            const double* grow = &g.data[size_t(i) * p];
            double* drow = &db.data[size_t(l) * p];
            for (int j = 0; j < p; ++j) drow[j] += av * grow[j];
          }
        }
      }
      break;
    }
    case Op::kConv2d: {
      const Tensor &x = inv(0), &w = inv(1);
      int stride = int(n.iattrs[0]), pad = int(n.iattrs[1]),
          dil = int(n.iattrs[2]);
      int ci = x.shape[0], h = x.shape[1], wd = x.shape[2];
      int co = w.shape[0], kh = w.shape[2], kw = w.shape[3];
      int ho = n.value.shape[1], wo = n.value.shape[2];
      if (wants(0)) {
        Tensor& dx = ing(0);
        for (int oc = 0; oc < co; ++oc) {
          for (int ic = 0; ic < ci; ++ic) {
            double* dxc = &dx.data[size_t(ic) * h * wd];
            const double* wc = &w.data[(size_t(oc) * ci + ic) * kh * kw];
            for (int r = 0; r < kh; ++r) {
              for (int c = 0; c < kw; ++c) {
                double wv = wc[r * kw + c];
                if (wv == 0.0) continue;
                for (int oy = 0; oy < ho; ++oy) {
                  int iy = oy * stride - pad + r * dil;
                  if (iy < 0 || iy >= h) continue;
                  const double* grow = &g.data[(size_t(oc) * ho + oy) * wo];
                  double* drow = &dxc[size_t(iy) * wd];
                  for (int ox = 0; ox < wo; ++ox) {
                    int ix = ox * stride - pad + c * dil;
                    if (ix < 0 || ix >= wd) continue;
                    drow[ix] += wv * grow[ox];
                  }
                }
              }
            }
          }
        }
      }
      if (wants(1)) {
        Tensor& dw = ing(1);
        for (int oc = 0; oc < co; ++oc) {
          for (int ic = 0; ic < ci; ++ic) {
            const double* xc = &x.data[size_t(ic) * h * wd];
            double* dwc = &dw.data[(size_t(oc) * ci + ic) * kh * kw];
            for (int r = 0; r < kh; ++r) {
              for (int c = 0; c < kw; ++c) {
                double acc = 0.0;
                for (int oy = 0; oy < ho; ++oy) {
                  int iy = oy * stride - pad + r * dil;
                  if (iy < 0 || iy >= h) continue;
                  const double* grow = &g.data[(size_t(oc) * ho + oy) * wo];
                  const double* irow = &xc[size_t(iy) * wd];
                  for (int ox = 0; ox < wo; ++ox) {
                    int ix = ox * stride - pad + c * dil;
                    if (ix < 0 || ix >= wd) continue;
                    acc += grow[ox] * irow[ix];
                  }
                }
                dwc[r * kw + c] += acc;
              }
            }
          }
        }
      }
      break;
    }
    case Op::kRelu: {
      if (wants(0)) {
        const Tensor& a = inv(0);
        Tensor& da = ing(0);
        for (size_t i = 0; i < g.data.size(); ++i)
          if (a.data[i] > 0.0) da.data[i] += g.data[i];
      }
      break;
    }
    case Op::kGelu: {
      if (wants(0)) {
        const Tensor& a = inv(0);
        Tensor& da = ing(0);
        for (size_t i = 0; i < g.data.size(); ++i) {
          double x = a.data[i];
          double cdf = 0.5 * (1.0 + std::erf(x * 0.7071067811865475244));
          double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * kPi);
          da.data[i] += g.data[i] * (cdf + x * pdf);
        }
      }
      break;
    }
    case Op::kTanh: {
      if (wants(0)) {
        Tensor& da = ing(0);
        for (size_t i = 0; i < g.data.size(); ++i) {
          double y = n.value.data[i];
          da.data[i] += g.data[i] * (1.0 - y * y);
        }
      }
      break;
    }
    case Op::kSigmoid: {
      if (wants(0)) {
        Tensor& da = ing(0);
        for (size_t i = 0; i < g.data.size(); ++i) {
          double y = n.value.data[i];
          da.data[i] += g.data[i] * y * (1.0 - y);
        }
      }
      break;
    }
    case Op::kSoftplus: {
      if (wants(0)) {
        const Tensor& a = inv(0);
        Tensor& da = ing(0);
        for (size_t i = 0; i < g.data.size(); ++i)
          da.data[i] += g.data[i] * stable_sigmoid(a.data[i]);
      }
      break;
    }
    case Op::kExp: {
      if (wants(0)) {
        Tensor& da = ing(0);
        for (size_t i = 0; i < g.data.size(); ++i)
          da.data[i] += g.data[i] * n.value.data[i];
      }
      break;
    }
    case Op::kLog: {
      if (wants(0)) {
        const Tensor& a = inv(0);
        Tensor& da = ing(0);
        for (size_t i = 0; i < g.data.size(); ++i)
          da.data[i] += g.data[i] / a.data[i];
      }
      break;
    }
    case Op::kSqrt: {
      if (wants(0)) {
        Tensor& da = ing(0);
        for (size_t i = 0; i < g.data.size(); ++i)
          da.data[i] += g.data[i] * 0.5 / n.value.data[i];
      }
      break;
    }
    case Op::kSquare: {
      if (wants(0)) {
        const Tensor& a = inv(0);
        Tensor& da = ing(0);
        for (size_t i = 0; i < g.data.size(); ++i)
          da.data[i] += g.data[i] * 2.0 * a.data[i];
      }
      break;
    }
    case Op::kSum:
    case Op::kMean: {
      if (!wants(0)) break;
      const Tensor& a = inv(0);
      Tensor& da = ing(0);
      int axis = int(n.iattrs[0]);
      if (axis == -1) {
        double gv = g.data[0];
        if (n.op == Op::kMean) gv /= double(a.numel());
        for (size_t i = 0; i < da.data.size(); ++i) da.data[i] += gv;
      } else {
        int64_t outer = 1, inner = 1;
        int cnt = a.shape[size_t(axis)];
        for (int d = 0; d < axis; ++d) outer *= a.shape[size_t(d)];
        for (int d = axis + 1; d < a.rank(); ++d) inner *= a.shape[size_t(d)];
        double scale = n.op == Op::kMean ? 1.0 / double(cnt) : 1.0;
        for (int64_t o = 0; o < outer; ++o) {
          for (int64_t k = 0; k < cnt; ++k) {
            double* dst = &da.data[size_t((o * cnt + k) * inner)];
            const double* src = &g.data[size_t(o * inner)];
            for (int64_t i = 0; i < inner; ++i) dst[i] += src[i] * scale;
          }
        }
      }
      break;
    }
    case Op::kMaxConst: {
      if (wants(0)) {
        const Tensor& a = inv(0);
        Tensor& da = ing(0);
        double c = n.dattrs[0];
        for (size_t i = 0; i < g.data.size(); ++i)
          if (a.data[i] > c) da.data[i] += g.data[i];
      }
      break;
    }
    case Op::kBilinearSample: {
      if (!wants(0)) break;
      const Tensor &t = inv(0), &uv = inv(1);
      Tensor& dt = ing(0);
      int h = t.shape[0], w = t.shape[1], c = t.shape[2];
      int p = uv.shape[0];
      for (int i = 0; i < p; ++i) {
        double x = uv.data[size_t(i) * 2 + 0];
        double y = uv.data[size_t(i) * 2 + 1];
        x = std::min(std::max(x, 0.0), double(w - 1));
        y = std::min(std::max(y, 0.0), double(h - 1));
        int x0 = std::min(int(std::floor(x)), w - 2);
        int y0 = std::min(int(std::floor(y)), h - 2);
        double fx = x - x0, fy = y - y0;
        double w00 = (1 - fy) * (1 - fx), w01 = (1 - fy) * fx;
        double w10 = fy * (1 - fx), w11 = fy * fx;
        double* d0 = &dt.data[(size_t(y0) * w + x0) * c];
        double* d1 = &dt.data[(size_t(y0 + 1) * w + x0) * c];
        const double* grow = &g.data[size_t(i) * c];
        for (int ch = 0; ch < c; ++ch) {
          d0[ch] += w00 * grow[ch];
          d0[c + ch] += w01 * grow[ch];
          d1[ch] += w10 * grow[ch];
          d1[c + ch] += w11 * grow[ch];
        }
      }
      break;
    }
    case Op::kReshape: {
      if (wants(0)) {
        Tensor& da = ing(0);
        for (size_t i = 0; i < g.data.size(); ++i) da.data[i] += g.data[i];
      }
      break;
    }
    case Op::kTranspose: {
      if (!wants(0)) break;
      const Tensor& a = inv(0);
      Tensor& da = ing(0);
      int r = a.rank();
      auto ost = strides_of(n.value.shape);
      std::vector<int> idx(size_t(r), 0);
      int64_t total = a.numel();
      for (int64_t f = 0; f < total; ++f) {
        int64_t off = 0;
        for (int d = 0; d < r; ++d) {
          off += int64_t(idx[size_t(n.iattrs[size_t(d)])]) * ost[size_t(d)];
        }
        da.data[size_t(f)] += g.data[size_t(off)];
        for (int d = r - 1; d >= 0; --d) {
          if (++idx[size_t(d)] < a.shape[size_t(d)]) break;
          idx[size_t(d)] = 0;
        }
      }
      break;
    }
    case Op::kConcat: {
      int axis = int(n.iattrs[0]);
      const Shape& os = n.value.shape;
      int64_t outer = 1, inner = 1;
      for (int d = 0; d < axis; ++d) outer *= os[size_t(d)];
      for (int d = axis + 1; d < int(os.size()); ++d) inner *= os[size_t(d)];
      int total_axis = os[size_t(axis)];
      int64_t src_axis_off = 0;
      for (size_t k = 0; k < n.inputs.size(); ++k) {
        Node& part = nodes_[size_t(n.inputs[k])];
        int pa = part.value.shape[size_t(axis)];
        if (part.needs_grad) {
          for (int64_t o = 0; o < outer; ++o) {
            for (int64_t j = 0; j < pa; ++j) {
              const double* src =
                  &g.data[size_t((o * total_axis + src_axis_off + j) * inner)];
              double* dst = &part.adjoint.data[size_t((o * pa + j) * inner)];
              for (int64_t i = 0; i < inner; ++i) dst[i] += src[i];
            }
          }
        }
        src_axis_off += pa;
      }
      break;
    }
    case Op::kSlice: {
      if (!wants(0)) break;
      const Tensor& a = inv(0);
      Tensor& da = ing(0);
      int r = a.rank();
      auto ist = strides_of(a.shape);
      std::vector<int> idx(size_t(r), 0);
      int64_t total = n.value.numel();
      for (int64_t f = 0; f < total; ++f) {
        int64_t src = 0;
        for (int d = 0; d < r; ++d) {
          src += int64_t(int(n.iattrs[size_t(d)]) + idx[size_t(d)]) *
                 ist[size_t(d)];
        }
        da.data[size_t(src)] += g.data[size_t(f)];
        for (int d = r - 1; d >= 0; --d) {
          if (++idx[size_t(d)] < int(n.iattrs[size_t(r + d)])) break;
          idx[size_t(d)] = 0;
        }
      }
      break;
    }
    case Op::kBroadcast: {
      if (!wants(0)) break;
      const Tensor& a = inv(0);
      Tensor& da = ing(0);
      if (a.numel() == 1) {
        double s = 0.0;
        for (double v : g.data) s += v;
        da.data[0] += s;
      } else {
        int r = int(n.value.rank());
        auto ist = strides_of(a.shape);
        std::vector<int> idx(size_t(r), 0);
        int64_t total = n.value.numel();
        for (int64_t f = 0; f < total; ++f) {
          int64_t src = 0;
          for (int d = 0; d < r; ++d) {
            int i = a.shape[size_t(d)] == 1 ? 0 : idx[size_t(d)];
            src += int64_t(i) * ist[size_t(d)];
          }
          da.data[size_t(src)] += g.data[size_t(f)];
          for (int d = r - 1; d >= 0; --d) {
            if (++idx[size_t(d)] < n.value.shape[size_t(d)]) break;
            idx[size_t(d)] = 0;
          }
        }
      }
      break;
    }
    case Op::kSoftmax: {
      if (!wants(0)) break;
      Tensor& da = ing(0);
      int last = n.value.shape.back();
      int64_t rows = n.value.numel() / last;
      for (int64_t r = 0; r < rows; ++r) {
        const double* y = &n.value.data[size_t(r * last)];
        const double* gy = &g.data[size_t(r * last)];
        double dotv = 0.0;
        for (int j = 0; j < last; ++j) dotv += gy[j] * y[j];
        double* dst = &da.data[size_t(r * last)];
        for (int j = 0; j < last; ++j) dst[j] += y[j] * (gy[j] - dotv);
      }
      break;
    }
    case Op::kLogSumExp: {
      if (!wants(0)) break;
      const Tensor& a = inv(0);
      Tensor& da = ing(0);
      double y = n.value.data[0];
      double gv = g.data[0];
      for (size_t i = 0; i < a.data.size(); ++i)
        da.data[i] += gv * std::exp(a.data[i] - y);
      break;
    }
  }
}

std::unordered_map<std::string, Tensor> Graph::backward(Var output,
                                                        const Tensor& seed) {
  if (!output.valid() || output.graph != this ||
      output.id >= int(nodes_.size())) {
    throw GraphError("backward: invalid output node");
  }
  const Node& out = nodes_[size_t(output.id)];
  if (!shape_eq(seed.shape, out.value.shape)) {
    throw GraphError("backward: seed shape " + shape_str(seed.shape) +
                     " does not match output shape " +
                     shape_str(out.value.shape) + " of '" + out.name + "'");
  }
  for (Node& n : nodes_) {
    n.adjoint = Tensor(n.value.shape);
  }
  nodes_[size_t(output.id)].adjoint = seed;
  for (int id = output.id; id >= 0; --id) {
    if (!nodes_[size_t(id)].needs_grad) continue;
    backprop(id);
  }
  std::unordered_map<std::string, Tensor> grads;
  for (auto& [name, id] : inputs_) {
    grads.emplace(name, nodes_[size_t(id)].adjoint);
  }
  return grads;
}

// ---------------------------------------------------------------------------

Var operator+(Var a, Var b) { return a.graph->add(a, b); }
Var operator-(Var a, Var b) { return a.graph->sub(a, b); }
Var operator*(Var a, Var b) { return a.graph->mul(a, b); }
Var operator/(Var a, Var b) { return a.graph->div(a, b); }
Var operator-(Var a) { return a.graph->neg(a); }

double check_gradients(const std::function<Var(Graph&, Var)>& fn,
                       const Tensor& point, double eps,
                       const std::vector<int64_t>& coords) {
  if (eps <= 0.0) throw GraphError("check_gradients: eps must be positive");
  Graph g;
  Var x = g.input("x", point.shape);
  g.forward({{"x", point}});
  Var out = fn(g, x);
  if (g.value(out).numel() != 1) {
    throw GraphError("check_gradients: function must be scalar-valued");
  }
  auto grads = g.backward(out, Tensor::scalar(1.0));
  const Tensor& analytic = grads.at("x");

  std::vector<int64_t> idx = coords;
  if (idx.empty()) {
    idx.resize(size_t(point.numel()));
    for (int64_t i = 0; i < point.numel(); ++i) idx[size_t(i)] = i;
  }
  double worst = 0.0;
  Tensor probe = point;
  for (int64_t i : idx) {
    double saved = probe.data[size_t(i)];
    probe.data[size_t(i)] = saved + eps;
    g.forward({{"x", probe}});
    double fp = g.value(out).data[0];
    probe.data[size_t(i)] = saved - eps;
    g.forward({{"x", probe}});
    double fm = g.value(out).data[0];
    probe.data[size_t(i)] = saved;
    if (!std::isfinite(fp) || !std::isfinite(fm)) {
      throw GraphError("check_gradients: non-finite function value near point");
    }
    double numeric = (fp - fm) / (2.0 * eps);
    double rel = std::fabs(analytic.data[size_t(i)] - numeric) /
                 (std::fabs(numeric) + 1e-12);
    worst = std::max(worst, rel);
  }
  // Restore the graph to the unperturbed state.
  g.forward({{"x", point}});
  return worst;
}

}  // namespace oga
