#include <cmath>
#include <memory>
#include <numeric>

#include "doctest.h"
#include "sthq/autodiff.hpp"
#include "sthq/rng.hpp"
#include "support/gradcheck.hpp"

using namespace sthq;
using sthq::testing::Builder;
using sthq::testing::check_gradients;
using sthq::testing::random_away_from_zero;
using sthq::testing::random_tensor;

namespace {

// Reduces any op output to a scalar through a fixed random weighting so
// every output element contributes a distinct gradient.
ad::Var weigh(ad::Var v, std::uint64_t seed) {
  Rng rng(seed, "weigh");
  Tensor w = random_tensor(rng, v.shape());
  return ad::sum(ad::mul(v, v.graph().constant(std::move(w))));
}

void check_op(const char* name, int instances, const std::function<std::vector<Tensor>(Rng&)>& make_inputs,
              const Builder& build, double tolerance = 1e-5) {
  Rng rng(7, name);
  double worst = 0.0;
  for (int i = 0; i < instances; ++i) {
    const auto inputs = make_inputs(rng);
    worst = std::max(worst, check_gradients(build, inputs).relative_error);
  }
  INFO(name << " worst relative error " << worst);
  CHECK(worst < tolerance);
}

}  // namespace

TEST_CASE("forward examples") {
  ad::Graph g;
  auto a = g.constant(Tensor::matrix(2, 3, {1, 2, 3, 4, 5, 6}));
  auto b = g.constant(Tensor::matrix(3, 1, {1, 0, -1}));
  auto c = ad::matmul(a, b);
  CHECK(c.shape() == Shape{2, 1});
  CHECK(c.value()[0] == -2.0);
  CHECK(c.value()[1] == -2.0);

  auto r = ad::relu(g.constant(Tensor::vector({-1, 0, 2})));
  CHECK(r.value().values() == std::vector<double>{0, 0, 2});

  auto s = ad::softmax(g.constant(Tensor::vector({0, 0})));
  CHECK(s.value()[0] == 0.5);
  CHECK(s.value()[1] == 0.5);
}

TEST_CASE("backward examples") {
  {
    ad::Graph g;
    auto x = g.input("x", Tensor::scalar(2.0));
    auto y = g.input("y", Tensor::scalar(3.0));
    g.backward(ad::mul(x, y));
    CHECK(g.named("x").grad()[0] == 3.0);
    CHECK(y.grad()[0] == 2.0);
  }
  {
    ad::Graph g;
    auto x = g.variable(Tensor::vector({-1, 2}));
    g.backward(ad::sum(ad::relu(x)));
    CHECK(x.grad().values() == std::vector<double>{0, 1});
  }
  {
    // Subgradient at exactly zero is zero.
    ad::Graph g;
    auto x = g.variable(Tensor::vector({0.0}));
    g.backward(ad::sum(ad::relu(x)));
    CHECK(x.grad()[0] == 0.0);
  }
}

TEST_CASE("random five-op graph matches finite differences") {
  Rng rng(11);
  const Builder build = [](ad::Graph&, const std::vector<ad::Var>& in) {
    auto h = ad::matmul(in[0], in[1]);          // [3,4]
    auto e = ad::exp(ad::scale(h, 0.5));        // [3,4]
    auto m = ad::mul(e, in[2]);                 // broadcast [4]
    auto s = ad::log_softmax(m);                // [3,4]
    return ad::sum(ad::mul(s, s));
  };
  double worst = 0.0;
  for (int i = 0; i < 20; ++i) {
    std::vector<Tensor> inputs{random_tensor(rng, {3, 2}), random_tensor(rng, {2, 4}), random_tensor(rng, {4})};
    worst = std::max(worst, check_gradients(build, inputs).relative_error);
  }
  CHECK(worst < 1e-6);
}

TEST_CASE("every op kind matches finite differences") {
  check_op("add", 100, [](Rng& r) { return std::vector{random_tensor(r, {3, 4}), random_tensor(r, {4})}; },
           [](ad::Graph&, const std::vector<ad::Var>& v) { return weigh(ad::add(v[0], v[1]), 1); });
  check_op("sub", 100, [](Rng& r) { return std::vector{random_tensor(r, {1}), random_tensor(r, {2, 3})}; },
           [](ad::Graph&, const std::vector<ad::Var>& v) { return weigh(ad::sub(v[0], v[1]), 2); });
  check_op("mul", 100, [](Rng& r) { return std::vector{random_tensor(r, {2, 3, 2}), random_tensor(r, {3, 2})}; },
           [](ad::Graph&, const std::vector<ad::Var>& v) { return weigh(ad::mul(v[0], v[1]), 3); });
  check_op("scale", 100, [](Rng& r) { return std::vector{random_tensor(r, {5})}; },
           [](ad::Graph&, const std::vector<ad::Var>& v) { return weigh(ad::scale(v[0], -2.5), 4); });
  check_op("matmul", 100, [](Rng& r) { return std::vector{random_tensor(r, {3, 4}), random_tensor(r, {4, 2})}; },
           [](ad::Graph&, const std::vector<ad::Var>& v) { return weigh(ad::matmul(v[0], v[1]), 5); });
  // Inputs stay at least 1e-4 away from the kink.
  check_op("relu", 100, [](Rng& r) { return std::vector{random_away_from_zero(r, {10}, 1e-4)}; },
           [](ad::Graph&, const std::vector<ad::Var>& v) { return weigh(ad::relu(v[0]), 6); });
  check_op("log", 100, [](Rng& r) { return std::vector{random_tensor(r, {6}, 0.1, 2.0)}; },
           [](ad::Graph&, const std::vector<ad::Var>& v) { return weigh(ad::log(v[0]), 7); });
  check_op("exp", 100, [](Rng& r) { return std::vector{random_tensor(r, {6})}; },
           [](ad::Graph&, const std::vector<ad::Var>& v) { return weigh(ad::exp(v[0]), 8); });
  check_op("softmax", 100, [](Rng& r) { return std::vector{random_tensor(r, {3, 5}, -3, 3)}; },
           [](ad::Graph&, const std::vector<ad::Var>& v) { return weigh(ad::softmax(v[0]), 9); });
  check_op("log_softmax", 100, [](Rng& r) { return std::vector{random_tensor(r, {3, 5}, -3, 3)}; },
           [](ad::Graph&, const std::vector<ad::Var>& v) { return weigh(ad::log_softmax(v[0]), 10); });
  check_op("sum", 100, [](Rng& r) { return std::vector{random_tensor(r, {2, 3})}; },
           [](ad::Graph&, const std::vector<ad::Var>& v) { return ad::scale(ad::sum(v[0]), 1.5); });
  check_op("squared_error", 100, [](Rng& r) { return std::vector{random_tensor(r, {2, 3}), random_tensor(r, {2, 3})}; },
           [](ad::Graph&, const std::vector<ad::Var>& v) { return ad::squared_error(v[0], v[1]); });
  check_op("reshape", 100, [](Rng& r) { return std::vector{random_tensor(r, {2, 6})}; },
           [](ad::Graph&, const std::vector<ad::Var>& v) { return weigh(ad::reshape(v[0], {3, 4}), 11); });
  check_op("slice", 100, [](Rng& r) { return std::vector{random_tensor(r, {2, 5, 3})}; },
           [](ad::Graph&, const std::vector<ad::Var>& v) { return weigh(ad::slice(v[0], 1, 1, 4), 12); });
  check_op("concat", 100, [](Rng& r) { return std::vector{random_tensor(r, {2, 2, 3}), random_tensor(r, {2, 1, 3})}; },
           [](ad::Graph&, const std::vector<ad::Var>& v) { return weigh(ad::concat({v[0], v[1], v[0]}, 1), 13); });
  auto perm = std::make_shared<std::vector<std::size_t>>(std::vector<std::size_t>{5, 0, 3, 3, 1, 2, 4});
  check_op("gather", 100, [](Rng& r) { return std::vector{random_tensor(r, {6})}; },
           [perm](ad::Graph&, const std::vector<ad::Var>& v) { return weigh(ad::gather(v[0], perm, {7}), 14); });
  check_op("conv2d stride 1", 100,
           [](Rng& r) { return std::vector{random_tensor(r, {2, 2, 5, 5}), random_tensor(r, {3, 2, 3, 3}), random_tensor(r, {3})}; },
           [](ad::Graph&, const std::vector<ad::Var>& v) { return weigh(ad::conv2d(v[0], v[1], v[2], 1, 1), 15); });
  check_op("conv2d stride 2", 100,
           [](Rng& r) { return std::vector{random_tensor(r, {1, 2, 6, 6}), random_tensor(r, {2, 2, 3, 3}), random_tensor(r, {2})}; },
           [](ad::Graph&, const std::vector<ad::Var>& v) { return weigh(ad::conv2d(v[0], v[1], v[2], 2, 1), 16); });
  check_op("upsample2x", 100, [](Rng& r) { return std::vector{random_tensor(r, {1, 2, 3, 2})}; },
           [](ad::Graph&, const std::vector<ad::Var>& v) { return weigh(ad::upsample2x(v[0]), 17); });
  check_op("sq_dist", 100, [](Rng& r) { return std::vector{random_tensor(r, {4, 3}), random_tensor(r, {5, 3})}; },
           [](ad::Graph&, const std::vector<ad::Var>& v) { return weigh(ad::sq_dist(v[0], v[1]), 18); });
}

TEST_CASE("conv2d matches a direct evaluation") {
  ad::Graph g;
  // 1x1x3x3 input, single 3x3 kernel of ones, padding 1, stride 2.
  auto x = g.constant(Tensor({1, 1, 3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9}));
  auto w = g.constant(Tensor({1, 1, 3, 3}, 1.0));
  auto b = g.constant(Tensor::vector({0.5}));
  auto y = ad::conv2d(x, w, b, 2, 1);
  REQUIRE(y.shape() == Shape{1, 1, 2, 2});
  CHECK(y.value()[0] == doctest::Approx(1 + 2 + 4 + 5 + 0.5));
  CHECK(y.value()[1] == doctest::Approx(2 + 3 + 5 + 6 + 0.5));
  CHECK(y.value()[3] == doctest::Approx(5 + 6 + 8 + 9 + 0.5));
}

TEST_CASE("forward is deterministic and gradient order is fixed") {
  Rng rng(3);
  const Tensor a = random_tensor(rng, {4, 3});
  const Tensor b = random_tensor(rng, {3, 4});
  auto run = [&](bool swapped) {
    ad::Graph g;
    auto va = g.variable(a);
    auto vb = g.variable(b);
    auto h = ad::matmul(va, vb);
    auto s = ad::softmax(h);
    auto out = swapped ? ad::sum(ad::add(ad::mul(s, h), s)) : ad::sum(ad::add(s, ad::mul(h, s)));
    g.backward(out);
    return std::pair{out.value().item(), va.grad()};
  };
  const auto [v1, g1] = run(false);
  const auto [v2, g2] = run(false);
  CHECK(v1 == v2);
  CHECK(g1.values() == g2.values());
  const auto [v3, g3] = run(true);
  for (std::size_t i = 0; i < g1.size(); ++i) CHECK(std::abs(g1[i] - g3[i]) < 1e-12);
  CHECK(std::abs(v1 - v3) < 1e-12);
}

TEST_CASE("errors name the op and shapes") {
  ad::Graph g;
  auto a = g.constant(Tensor({2, 3}));
  auto b = g.constant(Tensor({2, 3}));
  try {
    ad::matmul(a, b);
    FAIL("expected a shape error");
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("matmul") != std::string::npos);
    CHECK(msg.find("[2x3]") != std::string::npos);
  }
  CHECK_THROWS_AS(ad::add(a, g.constant(Tensor({4}))), ShapeError);
  CHECK_THROWS_AS(g.backward(ad::relu(a)), ShapeError);
  CHECK_THROWS_AS(ad::log(g.constant(Tensor::vector({0.0}))), ad::NonFiniteError);
  CHECK_THROWS_AS(g.variable(Tensor::vector({std::nan("")})), ad::NonFiniteError);
  CHECK_THROWS(g.named("missing"));
}

TEST_CASE("constants carry no gradient") {
  ad::Graph g;
  auto c = g.constant(Tensor::vector({1, 2}));
  auto x = g.variable(Tensor::vector({3, 4}));
  g.backward(ad::sum(ad::mul(c, x)));
  CHECK(x.grad().values() == std::vector<double>{1, 2});
  CHECK_THROWS_AS(c.grad(), std::logic_error);
}
