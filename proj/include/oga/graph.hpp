#pragma once

#include <deque>
#include <functional>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "oga/tensor.hpp"

namespace oga {

/// Error raised by graph construction/evaluation; message names the node.
struct GraphError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class Op {
  kInput,
  kConst,
  kAdd,
  kSub,
  kMul,
  kDiv,
  kNeg,
  kMatmul,
  kConv2d,
  kRelu,
  kGelu,
  kTanh,
  kSigmoid,
  kSoftplus,
  kExp,
  kLog,
  kSqrt,
  kSquare,
  kSum,
  kMean,
  kMaxConst,
  kBilinearSample,
  kReshape,
  kTranspose,
  kConcat,
  kSlice,
  kBroadcast,
  kSoftmax,
  kLogSumExp,
};

const char* op_name(Op op);

struct Node {
  Op op;
  std::vector<int> inputs;
  std::vector<int64_t> iattrs;
  std::vector<double> dattrs;
  std::string name;
  Tensor value;
  Tensor adjoint;
  bool needs_grad = false;
};

class Graph;

/// Lightweight handle to a node in a Graph.
struct Var {
  Graph* graph = nullptr;
  int id = -1;
  bool valid() const { return graph != nullptr && id >= 0; }
};

/// Reverse-mode tape over dense tensors. Nodes are appended in topological
/// order (operands always precede consumers) and evaluated eagerly, so the
/// value of any Var is available as soon as it is built. forward() re-runs
/// the recorded program against fresh input bindings; backward() seeds an
/// output adjoint and accumulates exact adjoints for every input.
class Graph {
 public:
  Var input(const std::string& name, Shape shape);
  /// Declares an input and seeds it with an initial value, so ops built
  /// eagerly on top of it see real numbers.
  Var input(const std::string& name, Tensor initial);
  Var constant(Tensor value, const std::string& name = "");
  Var constant_scalar(double v, const std::string& name = "");

  // --- primitive set ---
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var div(Var a, Var b);
  Var neg(Var a);
  Var matmul(Var a, Var b);
  Var conv2d(Var x, Var w, int stride, int pad, int dilation = 1);
  Var relu(Var a);
  Var gelu(Var a);
  Var tanh_(Var a);
  Var sigmoid(Var a);
  Var softplus(Var a);
  Var exp_(Var a);
  Var log_(Var a);
  Var sqrt_(Var a);
  Var square(Var a);
  Var sum(Var a, int axis = -1);
  Var mean(Var a, int axis = -1);
  Var max_const(Var a, double c);
  Var bilinear_sample(Var texture, Var uv);
  Var reshape(Var a, Shape target);
  Var transpose(Var a, std::vector<int> perm);
  Var concat(const std::vector<Var>& parts, int axis);
  Var slice(Var a, std::vector<int> offsets, std::vector<int> sizes);
  Var broadcast(Var a, Shape target);
  Var softmax(Var a);     // along last axis
  Var logsumexp(Var a);   // over all elements -> shape {1}

  /// Re-evaluates every node with the given input bindings. Every declared
  /// input must be bound with its declared shape.
  void forward(const std::unordered_map<std::string, Tensor>& bindings);

  /// Runs reverse-mode accumulation from `output` seeded with `seed` and
  /// returns the adjoint of every input by name. Forward values must be
  /// current (they are after construction or forward()).
  std::unordered_map<std::string, Tensor> backward(Var output,
                                                   const Tensor& seed);

  const Tensor& value(Var v) const;
  const Tensor& adjoint(Var v) const;
  const Node& node(int id) const { return nodes_[size_t(id)]; }
  int size() const { return int(nodes_.size()); }

 private:
  int append(Node n);
  Var finish(Node n);
  void eval(int id);
  void backprop(int id);
  void check_finite(int id) const;
  [[noreturn]] void fail(const Node& n, const std::string& what) const;

  // deque keeps Tensor references stable while the tape grows
  std::deque<Node> nodes_;
  std::unordered_map<std::string, int> inputs_;
};

// Operator sugar for scalar-heavy test code.
Var operator+(Var a, Var b);
Var operator-(Var a, Var b);
Var operator*(Var a, Var b);
Var operator/(Var a, Var b);
Var operator-(Var a);

/// Builds `fn` at `point` (as input "x"), backpropagates from its scalar
/// output, and compares the analytic gradient against central finite
/// differences. Returns the max over checked coordinates of
/// |analytic - numeric| / (|numeric| + 1e-12). `coords` empty = check all.
double check_gradients(const std::function<Var(Graph&, Var)>& fn,
                       const Tensor& point, double eps,
                       const std::vector<int64_t>& coords = {});

}  // namespace oga
