#include <cmath>
#include <numeric>

#include "doctest.h"
#include "sthq/entropy_model.hpp"
#include "support/gradcheck.hpp"
#include "support/oracles.hpp"

using namespace sthq;

namespace {

SymbolStream stream(std::vector<std::uint32_t> s, std::uint32_t L) { return {std::move(s), L}; }

HistogramPMF pmf(std::vector<double> p) { return HistogramPMF::from_probs(std::move(p)); }

}  // namespace

TEST_CASE("hard_histogram") {
  const auto p = hard_histogram(stream({0, 0, 1, 2, 2, 2}, 3), 3);
  CHECK(p.probs[0] == doctest::Approx(1.0 / 3));
  CHECK(p.probs[1] == doctest::Approx(1.0 / 6));
  CHECK(p.probs[2] == doctest::Approx(0.5));
  CHECK(std::abs(sample_entropy(p) - 1.45914791702724476) < 1e-12);

  const auto one = hard_histogram(stream({2, 2, 2}, 4), 4);
  CHECK(one.probs == std::vector<double>{0, 0, 1, 0});
  CHECK(sample_entropy(one) == 0.0);

  const auto uniform = hard_histogram(stream({0, 1, 2, 3, 3, 2, 1, 0}, 4), 4);
  CHECK(sample_entropy(uniform) == doctest::Approx(2.0));

  // Several streams pool into one histogram.
  const std::vector<SymbolStream> many{stream({0, 1}, 2), stream({1, 1}, 2)};
  CHECK(hard_histogram(many, 2).probs[1] == doctest::Approx(0.75));

  CHECK_THROWS(hard_histogram(stream({}, 3), 3));
  CHECK_THROWS(hard_histogram(stream({5}, 3), 3));
}

TEST_CASE("soft_histogram") {
  const CenterSet square(4, 2, {0, 0, 2, 0, 0, 2, 2, 2});
  const auto q = soft_histogram(reshape_columns(std::vector<double>{1, 1}, 2), square, Hardness(2.0));
  for (double v : q.probs) CHECK(v == doctest::Approx(0.25));

  // Hard limit on separated data.
  Rng rng(1);
  const CenterSet line(4, 1, {-3, -1, 1, 3});
  std::vector<double> z;
  for (int i = 0; i < 200; ++i) z.push_back(-3 + 2 * static_cast<double>(rng.index(4)) + rng.uniform(-0.5, 0.5));
  const auto cols = reshape_columns(z, 1);
  const auto soft = soft_histogram(cols, line, Hardness(1e6));
  const auto hard = hard_histogram(hard_quantize(cols, line).symbols, 4);
  for (std::size_t j = 0; j < 4; ++j) CHECK(std::abs(soft.probs[j] - hard.probs[j]) < 1e-6);

  // Graph version: arithmetic mean of the assignment rows.
  ad::Graph g;
  auto phi = g.constant(Tensor::matrix(2, 2, {0.7, 0.3, 0.1, 0.9}));
  auto qv = ad::soft_histogram(phi);
  CHECK(qv.value()[0] == doctest::Approx(0.4));
  CHECK(qv.value()[1] == doctest::Approx(0.6));
}

TEST_CASE("sample entropy and cross entropy") {
  CHECK(sample_entropy(pmf({0.5, 0.5})) == doctest::Approx(1.0));
  CHECK(sample_entropy(pmf({1.0, 0.0})) == 0.0);

  const auto p = pmf({0.2, 0.3, 0.5});
  CHECK(cross_entropy(p, p) == doctest::Approx(sample_entropy(p)).epsilon(1e-14));
  CHECK(cross_entropy(pmf({1.0, 0.0}), pmf({0.5, 0.5})) == doctest::Approx(1.0));
  CHECK_THROWS_AS(cross_entropy(pmf({0.5, 0.5}), pmf({1.0, 0.0})), std::domain_error);
  CHECK_THROWS(HistogramPMF::from_probs({0.5, 0.6}));

  Rng rng(2);
  for (int i = 0; i < 1000; ++i) {
    const std::size_t L = 2 + rng.index(60);
    const auto pp = pmf(sthq::testing::random_pmf(rng, L, 0.2));
    const auto qq = pmf(sthq::testing::random_pmf(rng, L));
    const double h = sample_entropy(pp);
    const double hpq = cross_entropy(pp, qq);
    CHECK(std::abs(hpq - h - kl_divergence(pp, qq)) < 1e-9);
    CHECK(hpq >= h - 1e-12);
    CHECK(h >= 0.0);
    CHECK(h <= std::log2(static_cast<double>(L)) + 1e-9);
  }
}

TEST_CASE("joint entropy estimate equals brute-force enumeration") {
  CHECK(joint_entropy_estimate(pmf({0.5, 0.5}), 2) == doctest::Approx(2.0));
  CHECK(sthq::testing::brute_force_joint_entropy({0.5, 0.5}, 2) == doctest::Approx(2.0));
  CHECK(joint_entropy_estimate(pmf({0.1, 0.9}), 1) == doctest::Approx(sample_entropy(pmf({0.1, 0.9}))));
  CHECK(joint_entropy_estimate(pmf({1.0, 0.0}), 3) == 0.0);
  CHECK_THROWS(joint_entropy_estimate(pmf({1.0}), 0));

  Rng rng(3);
  for (std::size_t L = 2; L <= 64; ++L) {
    for (std::size_t m = 1, size = L; size <= 4096; ++m, size *= L) {
      const auto p = sthq::testing::random_pmf(rng, L, 0.1);
      CHECK(std::abs(joint_entropy_estimate(pmf(p), m) - sthq::testing::brute_force_joint_entropy(p, m)) < 1e-9);
    }
  }
}

TEST_CASE("soft cross entropy H(q,p)") {
  ad::Graph g;
  auto phi = g.constant(Tensor::matrix(1, 2, {0.5, 0.5}));
  CHECK(ad::soft_cross_entropy_qp(phi, pmf({0.5, 0.5})).value().item() == doctest::Approx(1.0));

  // Hard limit with the exact histogram recovers H(p).
  const CenterSet line(3, 1, {0, 1, 2});
  const std::vector<double> z{0.1, 0.9, 1.1, 2.05, 1.95, 0.0, 1.0, 1.02};
  const auto cols = reshape_columns(z, 1);
  const auto p = hard_histogram(hard_quantize(cols, line).symbols, 3);
  ad::Graph g2;
  auto h = ad::soft_cross_entropy_qp(g2.constant(cols.tensor()), g2.constant(line.points()), g2.constant(Tensor::scalar(1e6)), p);
  CHECK(h.value().item() == doctest::Approx(sample_entropy(p)).epsilon(1e-9));

  // Unused centers are floored instead of producing -inf.
  ad::Graph g3;
  auto floored = ad::soft_cross_entropy_qp(g3.constant(Tensor::matrix(1, 2, {0.5, 0.5})), pmf({1.0, 0.0}));
  CHECK(floored.value().item() == doctest::Approx(0.5 * -std::log2(kProbabilityFloor)));

  // Additive over batches: the union is the size-weighted mean.
  Rng rng(4);
  const auto pp = pmf(sthq::testing::random_pmf(rng, 5));
  Tensor a = sthq::testing::random_tensor(rng, {3, 5}, 0.0, 1.0);
  Tensor b = sthq::testing::random_tensor(rng, {5, 5}, 0.0, 1.0);
  Tensor both({8, 5});
  std::copy(a.data().begin(), a.data().end(), both.data().begin());
  std::copy(b.data().begin(), b.data().end(), both.data().begin() + 15);
  ad::Graph g4;
  const double ha = ad::soft_cross_entropy_qp(g4.constant(a), pp).value().item();
  const double hb = ad::soft_cross_entropy_qp(g4.constant(b), pp).value().item();
  const double hab = ad::soft_cross_entropy_qp(g4.constant(both), pp).value().item();
  CHECK(hab == doctest::Approx((3 * ha + 5 * hb) / 8).epsilon(1e-13));
}

TEST_CASE("soft cross entropy gradients match finite differences") {
  Rng rng(5);
  double worst_qp = 0.0, worst_pq = 0.0;
  for (int i = 0; i < 100; ++i) {
    const std::size_t L = 2 + rng.index(6), dim = 1 + rng.index(3), m = 1 + rng.index(6);
    const auto p = pmf(sthq::testing::random_pmf(rng, L, 0.2));
    std::vector<Tensor> inputs{sthq::testing::random_tensor(rng, {m, dim}), sthq::testing::random_tensor(rng, {L, dim}),
                               Tensor::scalar(rng.uniform(0.2, 3.0))};
    worst_qp = std::max(worst_qp, sthq::testing::check_gradients(
                                      [&](ad::Graph&, const std::vector<ad::Var>& v) {
                                        return ad::soft_cross_entropy_qp(v[0], v[1], v[2], p);
                                      },
                                      inputs)
                                      .relative_error);
    worst_pq = std::max(worst_pq, sthq::testing::check_gradients(
                                      [&](ad::Graph&, const std::vector<ad::Var>& v) {
                                        return ad::soft_cross_entropy_pq(ad::soft_assign(v[0], v[1], v[2]), p);
                                      },
                                      inputs)
                                      .relative_error);
  }
  CHECK(worst_qp < 1e-5);
  CHECK(worst_pq < 1e-5);
}

TEST_CASE("running histogram") {
  SUBCASE("capacity 1 keeps only the last item") {
    RunningHistogram rh(3, 1, 1);
    const std::vector<SymbolStream> first{stream({0, 0, 1}, 3)};
    const std::vector<SymbolStream> second{stream({2, 2, 1, 2}, 3)};
    rh.update(first);
    rh.update(second);
    CHECK(rh.pmf().probs == hard_histogram(second.front(), 3).probs);
  }
  SUBCASE("recompute equals a recount over the buffer") {
    RunningHistogram rh(4, 3, 100);
    const std::vector<SymbolStream> a{stream({0, 1, 1}, 4), stream({3, 3}, 4)};
    const std::vector<SymbolStream> b{stream({2, 1}, 4), stream({0}, 4)};
    rh.update(a);
    rh.update(b);
    rh.recompute();
    const std::vector<SymbolStream> kept{a[1], b[0], b[1]};
    CHECK(rh.buffered() == 3);
    CHECK(rh.pmf().probs == hard_histogram(kept, 4).probs);
  }
  SUBCASE("PMF only changes every interval iterations") {
    RunningHistogram rh(2, 1000, 10);
    const std::vector<SymbolStream> zeros{stream({0, 0}, 2)};
    const std::vector<SymbolStream> ones{stream({1, 1}, 2)};
    CHECK(rh.update(zeros));
    const auto frozen = rh.pmf().probs;
    for (int i = 1; i < 10; ++i) {
      CHECK_FALSE(rh.update(ones));
      CHECK(rh.pmf().probs == frozen);
    }
    CHECK(rh.update(ones));
    CHECK(rh.pmf().probs[1] == doctest::Approx(20.0 / 22.0));
  }
  CHECK_THROWS(RunningHistogram(3, 0, 1));
}
