#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "oga/graph.hpp"
#include "oga/rng.hpp"

using namespace oga;

TEST_CASE("elementwise add") {
  Graph g;
  Var a = g.input("a", Tensor::from({2}, {1, 2}));
  Var b = g.input("b", Tensor::from({2}, {3, 4}));
  Var c = g.add(a, b);
  CHECK(g.value(c).data == std::vector<double>{4, 6});
}

TEST_CASE("matmul identity-padded") {
  Graph g;
  // A = 2x3 identity-padded, x = [1,2,3] -> [1,2]
  Var a = g.constant(Tensor::from({2, 3}, {1, 0, 0, 0, 1, 0}));
  Var x = g.constant(Tensor::from({3, 1}, {1, 2, 3}));
  Var y = g.matmul(a, x);
  CHECK(g.value(y).data[0] == doctest::Approx(1.0));
  CHECK(g.value(y).data[1] == doctest::Approx(2.0));
}

TEST_CASE("sigmoid at zero") {
  Graph g;
  Var x = g.input("x", Tensor::from({1}, {0}));
  Var y = g.sigmoid(x);
  CHECK(g.value(y).data[0] == doctest::Approx(0.5));
}

TEST_CASE("backward of square") {
  Graph g;
  Var x = g.input("x", Tensor::from({1}, {3}));
  Var y = g.square(x);
  auto grads = g.backward(y, Tensor::scalar(1.0));
  CHECK(grads.at("x").data[0] == doctest::Approx(6.0));
}

TEST_CASE("backward of scalar product") {
  Graph g;
  Var x = g.input("x", Tensor::from({1}, {2}));
  Var y = g.input("y", Tensor::from({1}, {5}));
  Var z = g.mul(x, y);
  auto grads = g.backward(z, Tensor::scalar(1.0));
  CHECK(grads.at("x").data[0] == doctest::Approx(5.0));
  CHECK(grads.at("y").data[0] == doctest::Approx(2.0));
}

TEST_CASE("bilinear sample gradient vs finite differences") {
  Rng rng(7);
  Tensor tex = Tensor::uniform({5, 6, 3}, rng, 0.2, 0.8);
  // A grid of sample points, including clamped edge locations.
  std::vector<double> uvs;
  Rng rng2(9);
  for (int i = 0; i < 20; ++i) {
    uvs.push_back(rng2.uniform(-0.5, 5.5));
    uvs.push_back(rng2.uniform(-0.5, 4.5));
  }
  Tensor uv = Tensor::from({20, 2}, uvs);
  double err = check_gradients(
      [&](Graph& g, Var x) {
        Var s = g.bilinear_sample(x, g.constant(uv));
        return g.sum(s);
      },
      tex, 1e-5);
  CHECK(err < 1e-7);
}

TEST_CASE("check_gradients on a quadratic form") {
  Rng rng(3);
  Tensor p = Tensor::uniform({6}, rng, -1, 1);
  double err = check_gradients(
      [](Graph& g, Var x) { return g.sum(g.square(x)); }, p, 1e-5);
  CHECK(err < 1e-7);
}

namespace {

// Checks one primitive wrapped into a scalar objective at random points.
double probe(const std::function<Var(Graph&, Var)>& fn, Shape shape,
             double lo, double hi, uint64_t seed, int reps = 4) {
  double worst = 0.0;
  for (int r = 0; r < reps; ++r) {
    Rng rng(derive_seed(seed, "probe", uint64_t(r)));
    Tensor p = Tensor::uniform(shape, rng, lo, hi);
    worst = std::max(worst, check_gradients(fn, p, 1e-5));
  }
  return worst;
}

}  // namespace

TEST_CASE("every primitive matches finite differences") {
  // Elementwise and reduction primitives on generic inputs.
  auto wrap = [](std::function<Var(Graph&, Var)> f) { return f; };
  struct CaseDef {
    const char* name;
    std::function<Var(Graph&, Var)> fn;
    Shape shape;
    double lo, hi;
  };
  Tensor mate;  // second operand for binary ops
  {
    Rng r(1234);
    mate = Tensor::uniform({3, 4}, r, 0.5, 1.5);
  }
  std::vector<CaseDef> cases = {
      {"add", wrap([&](Graph& g, Var x) {
         return g.sum(g.add(x, g.constant(mate)));
       }), {3, 4}, -1, 1},
      {"sub", wrap([&](Graph& g, Var x) {
         return g.sum(g.sub(x, g.constant(mate)));
       }), {3, 4}, -1, 1},
      {"mul", wrap([&](Graph& g, Var x) {
         return g.sum(g.mul(x, g.constant(mate)));
       }), {3, 4}, -1, 1},
      {"div", wrap([&](Graph& g, Var x) {
         return g.sum(g.div(x, g.constant(mate)));
       }), {3, 4}, -1, 1},
      {"div_denom", wrap([&](Graph& g, Var x) {
         return g.sum(g.div(g.constant(mate), x));
       }), {3, 4}, 0.5, 2},
      {"neg", wrap([&](Graph& g, Var x) { return g.sum(g.neg(x)); }),
       {3, 4}, -1, 1},
      {"matmul_a", wrap([&](Graph& g, Var x) {
         return g.sum(g.matmul(x, g.constant(mate)));
       }), {5, 3}, -1, 1},
      {"matmul_b", wrap([&](Graph& g, Var x) {
         return g.sum(g.matmul(g.constant(mate), x));
       }), {4, 2}, -1, 1},
      {"relu", wrap([&](Graph& g, Var x) { return g.sum(g.relu(x)); }),
       {3, 4}, 0.2, 1.5},
      {"gelu", wrap([&](Graph& g, Var x) { return g.sum(g.gelu(x)); }),
       {3, 4}, -2, 2},
      {"tanh", wrap([&](Graph& g, Var x) { return g.sum(g.tanh_(x)); }),
       {3, 4}, -2, 2},
      {"sigmoid", wrap([&](Graph& g, Var x) { return g.sum(g.sigmoid(x)); }),
       {3, 4}, -2, 2},
      {"softplus", wrap([&](Graph& g, Var x) { return g.sum(g.softplus(x)); }),
       {3, 4}, -2, 2},
      {"exp", wrap([&](Graph& g, Var x) { return g.sum(g.exp_(x)); }),
       {3, 4}, -1, 1},
      {"log", wrap([&](Graph& g, Var x) { return g.sum(g.log_(x)); }),
       {3, 4}, 0.5, 2},
      {"sqrt", wrap([&](Graph& g, Var x) { return g.sum(g.sqrt_(x)); }),
       {3, 4}, 0.5, 2},
      {"square", wrap([&](Graph& g, Var x) { return g.sum(g.square(x)); }),
       {3, 4}, -1, 1},
      {"sum_axis0", wrap([&](Graph& g, Var x) {
         return g.sum(g.square(g.sum(x, 0)));
       }), {3, 4}, -1, 1},
      {"mean_axis1", wrap([&](Graph& g, Var x) {
         return g.sum(g.square(g.mean(x, 1)));
       }), {3, 4}, -1, 1},
      {"mean_all", wrap([&](Graph& g, Var x) { return g.mean(x); }),
       {3, 4}, -1, 1},
      {"max_const", wrap([&](Graph& g, Var x) {
         return g.sum(g.max_const(x, 0.0));
       }), {3, 4}, 0.3, 1.5},
      {"reshape", wrap([&](Graph& g, Var x) {
         return g.sum(g.square(g.reshape(x, {4, 3})));
       }), {3, 4}, -1, 1},
      {"transpose", wrap([&](Graph& g, Var x) {
         return g.sum(g.square(g.transpose(x, {1, 0})));
       }), {3, 4}, -1, 1},
      {"concat", wrap([&](Graph& g, Var x) {
         return g.sum(g.square(g.concat({x, g.constant(mate)}, 0)));
       }), {3, 4}, -1, 1},
      {"slice", wrap([&](Graph& g, Var x) {
         return g.sum(g.square(g.slice(x, {1, 0}, {2, 3})));
       }), {3, 4}, -1, 1},
      {"broadcast", wrap([&](Graph& g, Var x) {
         return g.sum(g.square(g.broadcast(x, {3, 4})));
       }), {3, 1}, -1, 1},
      {"softmax", wrap([&](Graph& g, Var x) {
         return g.sum(g.square(g.softmax(x)));
       }), {3, 4}, -2, 2},
      {"logsumexp", wrap([&](Graph& g, Var x) { return g.logsumexp(x); }),
       {3, 4}, -2, 2},
      {"conv2d_x", wrap([&](Graph& g, Var x) {
         Rng wr(55);
         Var w = g.constant(Tensor::normal({2, 3, 3, 3}, wr, 0.5));
         return g.sum(g.square(g.conv2d(x, w, 2, 1)));
       }), {3, 9, 9}, -1, 1},
      {"conv2d_w", wrap([&](Graph& g, Var x) {
         Rng xr(56);
         Var img = g.constant(Tensor::normal({2, 8, 8}, xr, 0.5));
         return g.sum(g.square(g.conv2d(img, x, 1, 1, 2)));
       }), {3, 2, 3, 3}, -1, 1},
  };
  int total_coords = 0;
  for (auto& c : cases) {
    double err = probe(c.fn, c.shape, c.lo, c.hi,
                       derive_seed(909, c.name));
    INFO(c.name);
    CHECK(err < 1e-4);
    total_coords += 4 * int(shape_numel(c.shape));
  }
  CHECK(total_coords >= 100);
}

TEST_CASE("backward is linear in the objective") {
  Rng rng(11);
  Tensor p = Tensor::uniform({8}, rng, 0.2, 1.0);
  double a = 2.25, b = -0.75;

  auto grad_of = [&](const std::function<Var(Graph&, Var)>& fn) {
    Graph g;
    Var x = g.input("x", p);
    Var out = fn(g, x);
    return g.backward(out, Tensor::scalar(1.0)).at("x");
  };
  auto f = [](Graph& g, Var x) { return g.sum(g.square(x)); };
  auto h = [](Graph& g, Var x) { return g.sum(g.exp_(x)); };
  Tensor gf = grad_of(f);
  Tensor gh = grad_of(h);
  Tensor gmix = grad_of([&](Graph& g, Var x) {
    Var lhs = g.mul(g.constant_scalar(a), f(g, x));
    Var rhs = g.mul(g.constant_scalar(b), h(g, x));
    return g.add(lhs, rhs);
  });
  for (int i = 0; i < 8; ++i) {
    CHECK(std::fabs(gmix.data[size_t(i)] -
                    (a * gf.data[size_t(i)] + b * gh.data[size_t(i)])) <
          1e-10);
  }
}

TEST_CASE("identical bindings give bitwise-identical gradients") {
  auto run = [] {
    Rng rng(77);
    Tensor p = Tensor::uniform({4, 4}, rng, -1, 1);
    Graph g;
    Var x = g.input("x", p);
    Var y = g.sum(g.square(g.tanh_(g.matmul(x, x))));
    return g.backward(y, Tensor::scalar(1.0)).at("x").data;
  };
  CHECK(run() == run());
}

TEST_CASE("forward rebinding updates values") {
  Graph g;
  Var x = g.input("x", Tensor::from({2}, {1, 2}));
  Var y = g.square(x);
  CHECK(g.value(y).data == std::vector<double>{1, 4});
  g.forward({{"x", Tensor::from({2}, {3, 4})}});
  CHECK(g.value(y).data == std::vector<double>{9, 16});
}

TEST_CASE("errors name the offending node") {
  Graph g;
  Var a = g.input("a", Tensor::from({2}, {1, 2}));
  Var b = g.input("b", Tensor::from({3}, {1, 2, 3}));
  CHECK_THROWS_WITH_AS(g.add(a, b),
                       doctest::Contains("shape mismatch"), GraphError);
  Var lg = g.input("neg", Tensor::from({1}, {-1.0}));
  CHECK_THROWS_WITH_AS(g.log_(lg), doctest::Contains("non-finite"),
                       GraphError);
  Var ok = g.square(a);
  CHECK_THROWS_WITH_AS((void)g.backward(ok, Tensor::scalar(1.0)),
                       doctest::Contains("seed shape"), GraphError);
  CHECK_THROWS_AS(g.forward({{"a", Tensor::from({2}, {0, 0})}}), GraphError);
}

TEST_CASE("reduction shapes and values") {
  Graph g;
  Var x = g.constant(Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6}));
  CHECK(g.value(g.sum(x, 0)).data == std::vector<double>{5, 7, 9});
  CHECK(g.value(g.sum(x, 1)).data == std::vector<double>{6, 15});
  CHECK(g.value(g.mean(x)).data[0] == doctest::Approx(3.5));
  CHECK(g.value(g.logsumexp(x)).data[0] ==
        doctest::Approx(std::log(std::exp(1.0) + std::exp(2.0) +
                                 std::exp(3.0) + std::exp(4.0) +
                                 std::exp(5.0) + std::exp(6.0))));
  Tensor sm = g.value(g.softmax(x));
  CHECK(sm.data[0] + sm.data[1] + sm.data[2] == doctest::Approx(1.0));
  CHECK(sm.data[3] + sm.data[4] + sm.data[5] == doctest::Approx(1.0));
}
