#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "oga/losses.hpp"
#include "oga/rng.hpp"

using namespace oga;

TEST_CASE("iou basics") {
  Box a{0, 0, 2, 2};
  CHECK(iou(a, a) == doctest::Approx(1.0));
  CHECK(iou(a, Box{3, 3, 4, 4}) == 0.0);
  CHECK(iou(a, Box{1, 1, 3, 3}) == doctest::Approx(1.0 / 7.0).epsilon(1e-12));
  CHECK_THROWS_AS(iou(a, Box{1, 1, 1, 2}), std::invalid_argument);
}

TEST_CASE("detection loss hand values") {
  Graph g;
  SUBCASE("empty hazardous set") {
    Var conf = g.input("c", Tensor::from({3}, {0.9, 0.8, 0.7}));
    Var l = detection_loss(g, conf, {0, 0, 0});
    CHECK(g.value(l).data[0] == 0.0);
  }
  SUBCASE("single box") {
    Var conf = g.input("c", Tensor::from({2}, {0.9, 0.2}));
    Var l = detection_loss(g, conf, {1, 0});
    CHECK(std::fabs(g.value(l).data[0] - 0.81) < 1e-9);
  }
  SUBCASE("two boxes") {
    Var conf = g.input("c", Tensor::from({2}, {0.9, 0.9}));
    Var l = detection_loss(g, conf, {1, 1});
    double expect = std::pow(0.9 + std::log(2.0), 2.0);
    CHECK(std::fabs(g.value(l).data[0] - expect) < 1e-9);
    CHECK(expect == doctest::Approx(2.5381).epsilon(1e-4));
  }
}

TEST_CASE("detection loss is monotone in each hazardous score") {
  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor conf = Tensor::uniform({6}, rng, 0.05, 0.95);
    std::vector<char> hz = {1, 0, 1, 1, 0, 1};
    Graph g;
    Var c = g.input("c", conf);
    double before = g.value(detection_loss(g, c, hz)).data[0];
    int bump = int(rng.uniform_int(6));
    Tensor conf2 = conf;
    conf2.data[size_t(bump)] =
        std::min(1.0, conf2.data[size_t(bump)] + 0.04);
    Graph g2;
    Var c2 = g2.input("c", conf2);
    double after = g2.value(detection_loss(g2, c2, hz)).data[0];
    if (hz[size_t(bump)]) {
      CHECK(after >= before);
    } else {
      CHECK(after == doctest::Approx(before).epsilon(1e-12));
    }
  }
}

TEST_CASE("feature loss hand values") {
  SUBCASE("all zero inside mask") {
    Graph g;
    Var f = g.input("f", Tensor({1, 2, 2}, 0.0));
    Var l = feature_loss(g, {f}, Tensor({2, 2}, 1.0));
    CHECK(std::fabs(g.value(l).data[0] - std::log(1.0 + 1e-4)) < 1e-9);
  }
  SUBCASE("constant two inside mask") {
    Graph g;
    Var f = g.input("f", Tensor({1, 2, 2}, 2.0));
    Var l = feature_loss(g, {f}, Tensor({2, 2}, 1.0));
    CHECK(std::fabs(g.value(l).data[0] - std::log(5.0001)) < 1e-9);
  }
  SUBCASE("plus-minus one") {
    Graph g;
    Var f = g.input("f", Tensor::from({1, 1, 2}, {1.0, -1.0}));
    Var l = feature_loss(g, {f}, Tensor({1, 2}, 1.0));
    double expect = std::log(1.0 + std::sqrt(1.0 + 1e-8));
    CHECK(std::fabs(g.value(l).data[0] - expect) < 1e-9);
    CHECK(expect == doctest::Approx(std::log(2.0)).epsilon(1e-6));
  }
}

TEST_CASE("feature loss ignores features outside the mask") {
  Rng rng(11);
  Tensor mask({4, 4}, 0.0);
  mask.at2(1, 1) = 1.0;
  mask.at2(1, 2) = 1.0;
  Tensor f = Tensor::uniform({2, 4, 4}, rng, -1, 1);
  Graph g;
  double base = g.value(feature_loss(g, {g.input("f", f)}, mask)).data[0];
  Tensor f2 = f;
  for (int c = 0; c < 2; ++c) {
    f2.at3(c, 3, 3) += 17.0;  // far outside the mask
    f2.at3(c, 0, 0) -= 4.0;
  }
  Graph g2;
  double tweaked =
      g2.value(feature_loss(g2, {g2.input("f", f2)}, mask)).data[0];
  CHECK(std::fabs(base - tweaked) < 1e-12);
}

TEST_CASE("feature loss errors when every layer mask is empty") {
  Graph g;
  Var f = g.input("f", Tensor({1, 2, 2}, 1.0));
  CHECK_THROWS_AS((void)feature_loss(g, {f}, Tensor({2, 2}, 0.0)),
                  std::invalid_argument);
}

TEST_CASE("smooth loss hand values") {
  SUBCASE("constant texture") {
    Graph g;
    Var t = g.input("t", Tensor({8, 8, 3}, 0.37));
    CHECK(g.value(smooth_loss(g, t)).data[0] < 1e-3);
  }
  SUBCASE("vertical stripes 2x2") {
    Graph g;
    Var t = g.input("t", Tensor::from({2, 2, 1}, {0, 1, 0, 1}));
    CHECK(std::fabs(g.value(smooth_loss(g, t)).data[0] - 1.0) < 1e-6);
  }
  SUBCASE("checkerboard 2x2") {
    Graph g;
    Var t = g.input("t", Tensor::from({2, 2, 1}, {0, 1, 1, 0}));
    CHECK(std::fabs(g.value(smooth_loss(g, t)).data[0] - std::sqrt(2.0)) <
          1e-6);
  }
}

TEST_CASE("smooth loss invariant under constant shift") {
  Rng rng(3);
  Tensor t = Tensor::uniform({6, 7, 3}, rng, 0.2, 0.8);
  Graph g;
  double a = g.value(smooth_loss(g, g.input("t", t))).data[0];
  Tensor shifted = t;
  for (double& v : shifted.data) v += 0.1;
  Graph g2;
  double b = g2.value(smooth_loss(g2, g2.input("t", shifted))).data[0];
  CHECK(a == doctest::Approx(b).epsilon(1e-12));
}

TEST_CASE("segmentation loss hand values") {
  Tensor mask({2, 2}, 1.0);
  Graph g;
  CHECK(g.value(segmentation_loss(g, g.input("p1", Tensor({2, 2}, 1.0)), mask))
            .data[0] == doctest::Approx(1.0).epsilon(1e-7));
  Graph g2;
  CHECK(g2.value(segmentation_loss(g2, g2.input("p2", Tensor({2, 2}, 0.0)),
                                   mask))
            .data[0] == 0.0);
  Graph g3;
  Var p = g3.input("p3", Tensor::from({2, 2}, {0.5, 0.5, 0.0, 0.0}));
  CHECK(g3.value(segmentation_loss(g3, p, mask)).data[0] ==
        doctest::Approx(0.25).epsilon(1e-7));
}

TEST_CASE("depth loss hand values") {
  Tensor mask({2, 1}, 1.0);
  Graph g;
  CHECK(g.value(depth_loss(g, g.input("d1", Tensor({2, 1}, 1.0)), mask))
            .data[0] == doctest::Approx(1.0).epsilon(1e-6));
  Graph g2;
  CHECK(g2.value(depth_loss(g2, g2.input("d2", Tensor({2, 1}, 1e6)), mask))
            .data[0] == doctest::Approx(1e-6).epsilon(1e-6));
  Graph g3;
  Var d = g3.input("d3", Tensor::from({2, 1}, {2.0, 1.0}));
  CHECK(g3.value(depth_loss(g3, d, mask)).data[0] ==
        doctest::Approx(0.75).epsilon(1e-6));
  Graph g4;
  CHECK_THROWS_AS(
      (void)depth_loss(g4, g4.input("d4", Tensor({2, 1}, 0.0)), mask),
      std::invalid_argument);
}

TEST_CASE("loss gradients match finite differences") {
  Rng rng(23);
  SUBCASE("detection") {
    std::vector<char> hz = {1, 0, 1, 1, 0, 0, 1, 0};
    for (int i = 0; i < 3; ++i) {
      Tensor p = Tensor::uniform({8}, rng, 0.1, 0.9);
      double err = check_gradients(
          [&](Graph& g, Var x) { return detection_loss(g, x, hz); }, p, 1e-5);
      CHECK(err < 1e-4);
    }
  }
  SUBCASE("feature") {
    Tensor mask({4, 4}, 0.0);
    mask.at2(1, 1) = 1.0;
    mask.at2(2, 1) = 1.0;
    mask.at2(1, 2) = 1.0;
    for (int i = 0; i < 3; ++i) {
      Tensor p = Tensor::uniform({2, 4, 4}, rng, -1, 1);
      double err = check_gradients(
          [&](Graph& g, Var x) { return feature_loss(g, {x}, mask); }, p,
          1e-5);
      CHECK(err < 1e-4);
    }
  }
  SUBCASE("smooth") {
    for (int i = 0; i < 3; ++i) {
      Tensor p = Tensor::uniform({5, 6, 3}, rng, 0.1, 0.9);
      double err = check_gradients(
          [&](Graph& g, Var x) { return smooth_loss(g, x); }, p, 1e-5);
      CHECK(err < 1e-4);
    }
  }
  SUBCASE("segmentation") {
    Tensor mask({3, 3}, 0.0);
    mask.at2(0, 0) = 1.0;
    mask.at2(2, 2) = 1.0;
    for (int i = 0; i < 3; ++i) {
      Tensor p = Tensor::uniform({3, 3}, rng, 0.1, 0.9);
      double err = check_gradients(
          [&](Graph& g, Var x) { return segmentation_loss(g, x, mask); }, p,
          1e-5);
      CHECK(err < 1e-4);
    }
  }
  SUBCASE("depth") {
    Tensor mask({3, 3}, 1.0);
    for (int i = 0; i < 3; ++i) {
      Tensor p = Tensor::uniform({3, 3}, rng, 0.5, 2.0);
      double err = check_gradients(
          [&](Graph& g, Var x) { return depth_loss(g, x, mask); }, p, 1e-5);
      CHECK(err < 1e-4);
    }
  }
}

TEST_CASE("one gradient step decreases masked means") {
  Rng rng(31);
  Tensor mask({4, 4}, 0.0);
  mask.at2(0, 1) = 1.0;
  mask.at2(3, 2) = 1.0;
  SUBCASE("segmentation") {
    Tensor p = Tensor::uniform({4, 4}, rng, 0.3, 0.9);
    Graph g;
    Var x = g.input("x", p);
    Var l = segmentation_loss(g, x, mask);
    double before = g.value(l).data[0];
    auto grad = g.backward(l, Tensor::scalar(1.0)).at("x");
    Tensor stepped = p;
    for (int64_t i = 0; i < p.numel(); ++i) {
      stepped.data[size_t(i)] -= 0.05 * grad.data[size_t(i)];
    }
    Graph g2;
    double after =
        g2.value(segmentation_loss(g2, g2.input("x", stepped), mask)).data[0];
    CHECK(after < before);
  }
  SUBCASE("depth") {
    Tensor p = Tensor::uniform({4, 4}, rng, 0.5, 1.5);
    Graph g;
    Var x = g.input("x", p);
    Var l = depth_loss(g, x, mask);
    double before = g.value(l).data[0];
    auto grad = g.backward(l, Tensor::scalar(1.0)).at("x");
    Tensor stepped = p;
    for (int64_t i = 0; i < p.numel(); ++i) {
      stepped.data[size_t(i)] -= 0.05 * grad.data[size_t(i)];
    }
    Graph g2;
    double after =
        g2.value(depth_loss(g2, g2.input("x", stepped), mask)).data[0];
    CHECK(after < before);
  }
}
