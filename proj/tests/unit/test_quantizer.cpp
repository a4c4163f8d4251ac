#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "doctest.h"
#include "sthq/quantizer.hpp"
#include "sthq/rng.hpp"
#include "support/gradcheck.hpp"

using namespace sthq;

namespace {

CenterSet scalar_centers(std::vector<double> values) {
  const std::size_t n = values.size();
  return CenterSet(n, 1, std::move(values));
}

CenterSet random_centers(Rng& rng, std::size_t count, std::size_t dim) {
  std::vector<double> coords(count * dim);
  for (double& v : coords) v = rng.uniform(-2.0, 2.0);
  return CenterSet(count, dim, std::move(coords));
}

std::vector<double> random_point(Rng& rng, std::size_t dim) {
  std::vector<double> p(dim);
  for (double& v : p) v = rng.uniform(-2.5, 2.5);
  return p;
}

// Sorted distances (not squared) from a point to every center.
std::vector<double> sorted_distances(std::span<const double> p, const CenterSet& c) {
  std::vector<double> d;
  for (std::size_t j = 0; j < c.size(); ++j) {
    double s = 0.0;
    for (std::size_t k = 0; k < p.size(); ++k) s += (p[k] - c.center(j)[k]) * (p[k] - c.center(j)[k]);
    d.push_back(std::sqrt(s));
  }
  std::sort(d.begin(), d.end());
  return d;
}

// Brute-force nearest center scan, independent of hard_assign.
std::size_t brute_nearest(std::span<const double> p, const CenterSet& c) {
  std::size_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < c.size(); ++j) {
    double s = 0.0;
    for (std::size_t k = 0; k < p.size(); ++k) s += (p[k] - c.center(j)[k]) * (p[k] - c.center(j)[k]);
    if (s < best_d) best_d = s, best = j;
  }
  return best;
}

// Exact 1-D 2-means by enumerating every split point of the sorted data.
std::pair<double, double> exact_two_means(std::vector<double> xs) {
  std::sort(xs.begin(), xs.end());
  double best = std::numeric_limits<double>::infinity();
  std::pair<double, double> out;
  for (std::size_t k = 1; k < xs.size(); ++k) {
    const double m1 = std::accumulate(xs.begin(), xs.begin() + k, 0.0) / k;
    const double m2 = std::accumulate(xs.begin() + k, xs.end(), 0.0) / (xs.size() - k);
    double e = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) e += std::pow(xs[i] - (i < k ? m1 : m2), 2);
    if (e < best) best = e, out = {m1, m2};
  }
  return out;
}

}  // namespace

TEST_CASE("reshape_columns") {
  const std::vector<double> z{1, 2, 3, 4};
  const ColumnMatrix cols = reshape_columns(z, 2);
  REQUIRE(cols.count() == 2);
  CHECK(cols.column(0)[0] == 1);
  CHECK(cols.column(0)[1] == 2);
  CHECK(cols.column(1)[0] == 3);
  CHECK(cols.column(1)[1] == 4);

  const ColumnMatrix single = reshape_columns(std::vector<double>{5}, 1);
  CHECK(single.count() == 1);
  CHECK(single.column(0)[0] == 5);

  CHECK_THROWS_AS(reshape_columns(std::vector<double>{1, 2, 3}, 2), std::invalid_argument);

  Rng rng(1);
  for (int i = 0; i < 100; ++i) {
    const std::size_t dim = 1 + rng.index(4);
    std::vector<double> v(dim * (1 + rng.index(10)));
    for (double& x : v) x = rng.normal();
    CHECK(reshape_columns(v, dim).flatten() == v);
  }
}

TEST_CASE("center set validation and serialization") {
  CHECK_THROWS(CenterSet(1, 1, {0.0}));
  CHECK_THROWS(CenterSet(2, 1, {0.0, std::numeric_limits<double>::infinity()}));
  CHECK_THROWS(Hardness(0.0));
  CHECK_THROWS(Hardness(-1.0));

  CenterSet c(3, 2, {0.1, -1.5, 2.25, 3.0, 1e-3, 7.0});
  const auto bytes = c.serialize();
  REQUIRE(bytes.size() == 4 + 3 * 2 * 4);
  CHECK(bytes[0] == 2);  // dim first
  CHECK(bytes[2] == 3);
  const CenterSet back = CenterSet::deserialize(bytes);
  CenterSet rounded = c;
  rounded.round_to_float();
  CHECK(back.points().values() == rounded.points().values());
}

TEST_CASE("soft_assign examples") {
  const CenterSet c = scalar_centers({0.0, 1.0});
  for (double sigma : {1e-3, 1.0, 50.0, 1e9}) {
    const auto phi = soft_assign(std::vector<double>{0.5}, c, Hardness(sigma));
    CHECK(phi.probs[0] == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(phi.probs[1] == doctest::Approx(0.5).epsilon(1e-15));
  }
  const auto phi = soft_assign(std::vector<double>{0.0}, c, Hardness(1.0));
  CHECK(std::abs(phi.probs[0] - 0.731058578630004879) < 1e-15);
  CHECK(std::abs(phi.probs[1] - 0.268941421369995121) < 1e-15);

  const auto hard = soft_assign(std::vector<double>{0.4}, c, Hardness(1e9));
  CHECK(hard.probs[0] == 1.0);
  CHECK(hard.probs[1] == 0.0);

  CHECK_THROWS(soft_assign(std::vector<double>{std::nan("")}, c, Hardness(1.0)));
  CHECK_THROWS_AS(soft_assign(std::vector<double>{0.0, 1.0}, c, Hardness(1.0)), ShapeError);
}

TEST_CASE("hard_assign examples") {
  const CenterSet c = scalar_centers({0.0, 1.0});
  CHECK(hard_assign(std::vector<double>{0.4}, c) == 0);
  CHECK(hard_assign(std::vector<double>{0.5}, c) == 0);  // tie goes to the lower index
  CHECK(hard_assign(std::vector<double>{0.6}, c) == 1);

  Rng rng(2);
  int compared = 0;
  for (int i = 0; i < 1000; ++i) {
    const CenterSet cs = random_centers(rng, 2 + rng.index(10), 1 + rng.index(3));
    const auto p = random_point(rng, cs.dim());
    const auto d = sorted_distances(p, cs);
    if (d[1] - d[0] < 1e-9) continue;
    const auto phi = soft_assign(p, cs, Hardness(1.0));
    const auto argmax = static_cast<std::size_t>(std::max_element(phi.probs.begin(), phi.probs.end()) - phi.probs.begin());
    CHECK(hard_assign(p, cs) == brute_nearest(p, cs));
    CHECK(argmax == brute_nearest(p, cs));
    ++compared;
  }
  CHECK(compared > 990);
}

TEST_CASE("soft_quantize examples") {
  const CenterSet c = scalar_centers({0.0, 1.0});
  CHECK(soft_quantize(std::vector<double>{0.5}, c, Hardness(3.0))[0] == doctest::Approx(0.5));
  CHECK(std::abs(soft_quantize(std::vector<double>{0.0}, c, Hardness(1.0))[0] - 0.268941421369995121) < 1e-15);
  CHECK(std::abs(soft_quantize(std::vector<double>{0.3}, c, Hardness(1e8))[0] - 0.0) < 1e-12);

  // Equidistant from four centers of a square: the centroid.
  const CenterSet square(4, 2, {0, 0, 2, 0, 0, 2, 2, 2});
  const auto q = soft_quantize(std::vector<double>{1.0, 1.0}, square, Hardness(0.7));
  CHECK(q[0] == doctest::Approx(1.0));
  CHECK(q[1] == doctest::Approx(1.0));
}

TEST_CASE("hard_quantize examples") {
  const CenterSet c = scalar_centers({-1.0, 1.0});
  const auto hq = hard_quantize(reshape_columns(std::vector<double>{-0.9, 0.2, 2.0}, 1), c);
  CHECK(hq.symbols.symbols == std::vector<std::uint32_t>{0, 1, 1});
  CHECK(hq.reconstruction.flatten() == std::vector<double>{-1, 1, 1});

  const CenterSet c2(3, 2, {0, 0, 1, 1, -1, 2});
  const auto fixed = hard_quantize(reshape_columns(std::vector<double>{1, 1, -1, 2, 0, 0}, 2), c2);
  CHECK(fixed.symbols.symbols == std::vector<std::uint32_t>{1, 2, 0});
  CHECK(fixed.reconstruction.flatten() == std::vector<double>{1, 1, -1, 2, 0, 0});

  Rng rng(3);
  for (int i = 0; i < 100; ++i) {
    const CenterSet cs = random_centers(rng, 2 + rng.index(8), 1 + rng.index(4));
    std::vector<double> z(cs.dim() * (1 + rng.index(20)));
    for (double& v : z) v = rng.uniform(-3, 3);
    const auto first = hard_quantize(reshape_columns(z, cs.dim()), cs);
    const auto second = hard_quantize(first.reconstruction, cs);
    CHECK(second.symbols == first.symbols);
    CHECK(second.reconstruction == first.reconstruction);
    CHECK(dequantize(first.symbols, cs) == first.reconstruction);
  }
}

TEST_CASE("soft assignment properties") {
  Rng rng(4);
  for (int i = 0; i < 200; ++i) {
    const CenterSet cs = random_centers(rng, 2 + rng.index(12), 1 + rng.index(4));
    const auto p = random_point(rng, cs.dim());
    const auto d = sorted_distances(p, cs);
    const std::size_t nearest = brute_nearest(p, cs);
    double last_top = 0.0;
    for (double sigma : {1e-3, 0.1, 1.0, 10.0, 100.0, 1e4, 1e9}) {
      const auto phi = soft_assign(p, cs, Hardness(sigma));
      const double total = std::accumulate(phi.probs.begin(), phi.probs.end(), 0.0);
      CHECK(std::abs(total - 1.0) < 1e-9);
      for (double v : phi.probs) CHECK(v >= 0.0);
      // Strict positivity holds while exp(-sigma * d^2) stays representable.
      if (sigma <= 1.0) {
        for (double v : phi.probs) CHECK(v > 0.0);
      }
      if (sigma >= 0.1 && sigma <= 100.0 && d[1] - d[0] > 1e-9) {
        CHECK(phi.probs[nearest] >= last_top);
        last_top = phi.probs[nearest];
      }
    }

    // Convex hull: every random projection of Q~ lies within the projected centers.
    const auto q = soft_quantize(p, cs, Hardness(rng.uniform(0.01, 10.0)));
    for (int r = 0; r < 5; ++r) {
      std::vector<double> dir(cs.dim());
      for (double& v : dir) v = rng.normal();
      double lo = std::numeric_limits<double>::infinity(), hi = -lo, proj = 0.0;
      for (std::size_t j = 0; j < cs.size(); ++j) {
        double s = 0.0;
        for (std::size_t k = 0; k < dir.size(); ++k) s += dir[k] * cs.center(j)[k];
        lo = std::min(lo, s);
        hi = std::max(hi, s);
      }
      for (std::size_t k = 0; k < dir.size(); ++k) proj += dir[k] * q[k];
      CHECK(proj >= lo - 1e-12);
      CHECK(proj <= hi + 1e-12);
    }

    // Hard limit at sigma = 1e6 when the two nearest distances are separated.
    if (d[1] - d[0] > 1e-2) {
      const auto soft = soft_quantize(p, cs, Hardness(1e6));
      const auto hard = cs.center(hard_assign(p, cs));
      double gap = 0.0;
      for (std::size_t k = 0; k < soft.size(); ++k) gap = std::max(gap, std::abs(soft[k] - hard[k]));
      CHECK(gap < 1e-6);
    }
  }
}

TEST_CASE("graph soft quantization matches the direct path and finite differences") {
  Rng rng(5);
  const CenterSet cs = random_centers(rng, 5, 3);
  Tensor cols = sthq::testing::random_tensor(rng, {4, 3});
  ad::Graph g;
  auto q = ad::soft_quantize(g.constant(cols), g.constant(cs.points()), g.constant(Tensor::scalar(0.8)));
  for (std::size_t l = 0; l < 4; ++l) {
    const auto direct = soft_quantize(std::span<const double>(cols.data().data() + 3 * l, 3), cs, Hardness(0.8));
    for (std::size_t k = 0; k < 3; ++k) CHECK(q.value().at(l, k) == doctest::Approx(direct[k]).epsilon(1e-12));
  }

  double worst_assign = 0.0, worst_quantize = 0.0;
  for (int i = 0; i < 100; ++i) {
    const std::size_t L = 2 + rng.index(6), dim = 1 + rng.index(3), m = 1 + rng.index(5);
    std::vector<Tensor> inputs{sthq::testing::random_tensor(rng, {m, dim}), sthq::testing::random_tensor(rng, {L, dim}),
                               Tensor::scalar(rng.uniform(0.2, 3.0))};
    Tensor weights = sthq::testing::random_tensor(rng, {m, L});
    Tensor qweights = sthq::testing::random_tensor(rng, {m, dim});
    worst_assign = std::max(worst_assign, sthq::testing::check_gradients(
                                              [&](ad::Graph& gr, const std::vector<ad::Var>& v) {
                                                return ad::sum(ad::mul(ad::soft_assign(v[0], v[1], v[2]), gr.constant(weights)));
                                              },
                                              inputs)
                                              .relative_error);
    worst_quantize = std::max(worst_quantize, sthq::testing::check_gradients(
                                                  [&](ad::Graph& gr, const std::vector<ad::Var>& v) {
                                                    return ad::sum(ad::mul(ad::soft_quantize(v[0], v[1], v[2]), gr.constant(qweights)));
                                                  },
                                                  inputs)
                                                  .relative_error);
  }
  CHECK(worst_assign < 1e-5);
  CHECK(worst_quantize < 1e-5);
}

TEST_CASE("init_centers") {
  SUBCASE("two separated clusters land one center in each, near exact 2-means") {
    Rng rng(6);
    std::vector<double> xs;
    for (int i = 0; i < 60; ++i) xs.push_back(rng.uniform(-3.2, -2.8));
    for (int i = 0; i < 40; ++i) xs.push_back(rng.uniform(4.0, 4.5));
    const auto [m1, m2] = exact_two_means(xs);
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      CenterInitOptions opt;
      opt.seed = seed;
      opt.iterations = 300;
      const auto init = init_centers(reshape_columns(xs, 1), 2, opt);
      double a = init.centers.center(0)[0], b = init.centers.center(1)[0];
      if (a > b) std::swap(a, b);
      CHECK(a >= -3.2);
      CHECK(a <= -2.8);
      CHECK(b >= 4.0);
      CHECK(b <= 4.5);
      CHECK(a == doctest::Approx(m1).epsilon(1e-3));
      CHECK(b == doctest::Approx(m2).epsilon(1e-3));
    }
  }
  SUBCASE("one center per sample drives the energy to zero") {
    std::vector<double> xs{0.0, 3.0, 6.0, 9.0, 12.0};
    const auto init = init_centers(reshape_columns(xs, 1), 5, {.iterations = 50});
    CHECK(init.sigma0 == 10.0);
    CHECK(cluster_energy(reshape_columns(xs, 1), init.centers, Hardness(init.sigma0)) < 1e-12);
  }
  SUBCASE("seeded runs are identical") {
    Rng rng(7);
    std::vector<double> xs(400);
    for (double& v : xs) v = rng.normal();
    CenterInitOptions opt{.iterations = 100, .seed = 42};
    const auto a = init_centers(reshape_columns(xs, 2), 8, opt);
    const auto b = init_centers(reshape_columns(xs, 2), 8, opt);
    CHECK(a.centers.points().values() == b.centers.points().values());
    CHECK(a.sigma0 == b.sigma0);
    CHECK(a.sigma0 >= 1e-2);
    CHECK(a.sigma0 <= 10.0);
  }
  SUBCASE("too few samples") {
    CHECK_THROWS_AS(init_centers(reshape_columns(std::vector<double>{1, 2}, 1), 3), std::invalid_argument);
  }
}
