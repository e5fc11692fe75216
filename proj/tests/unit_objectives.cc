// Copyright (c) 2026, The RecFound-Desk Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <random>
#include <vector>

#include "doctest.h"
#include "oracles.h"
#include "recfound/error.h"
#include "recfound/objectives/objectives.h"

using namespace recfound;

namespace {

Tensor<double> from_rows(const oracle::Mat& m) {
  std::vector<double> flat;
  for (const auto& r : m) flat.insert(flat.end(), r.begin(), r.end());
  return Tensor<double>(Shape{m.size(), m[0].size()}, std::move(flat));
}

oracle::Mat random_rows(std::size_t n, std::size_t d, std::mt19937_64& rng) {
  std::normal_distribution<double> nd(0.0, 1.0);
  oracle::Mat m(n, oracle::Vec(d));
  for (auto& r : m) {
    for (auto& v : r) v = nd(rng);
  }
  return m;
}

}  // namespace

TEST_CASE("mean pool examples") {
  ParamStore<double> ps;
  Graph<double> g(ps);
  auto a = g.input(Tensor<double>(Shape{2, 2}, {1, 0, 0, 1}), "h");
  const std::vector<std::uint8_t> both = {1, 1};
  CHECK(g.value(mean_pool<double>(g, a, 1, 2, both)) == Tensor<double>(Shape{1, 2}, {0.5, 0.5}));
  auto b = g.input(Tensor<double>(Shape{2, 2}, {2, 2, 9, 9}), "h");
  const std::vector<std::uint8_t> first = {1, 0};
  CHECK(g.value(mean_pool<double>(g, b, 1, 2, first)) == Tensor<double>(Shape{1, 2}, {2, 2}));
  auto c = g.input(Tensor<double>(Shape{3, 2}, {0.7, -1, 0.7, -1, 0.7, -1}), "h");
  const std::vector<std::uint8_t> all = {1, 1, 1};
  const auto& pooled = g.value(mean_pool<double>(g, c, 1, 3, all));
  CHECK(pooled[0] == doctest::Approx(0.7).epsilon(1e-15));
  CHECK(pooled[1] == doctest::Approx(-1.0).epsilon(1e-15));
  const std::vector<std::uint8_t> none = {0, 0};
  CHECK_THROWS(mean_pool<double>(g, a, 1, 2, none));
}

TEST_CASE("info_nce examples") {
  ParamStore<double> ps;
  Graph<double> g(ps);
  // B = 1, cos(q, p) = 1, cos(q, n) = 0, T = 1.
  auto q = g.input(Tensor<double>(Shape{1, 2}, {1, 0}), "q");
  auto p = g.input(Tensor<double>(Shape{1, 2}, {2, 0}), "p");
  auto n = g.input(Tensor<double>(Shape{1, 2}, {0, 3}), "n");
  const double loss = g.scalar(info_nce<double>(g, q, p, n, 1.0));
  CHECK(loss == doctest::Approx(-std::log(std::exp(1.0) / (std::exp(1.0) + 1.0))).epsilon(1e-12));
  CHECK(loss == doctest::Approx(0.3133).epsilon(1e-3));
  // Every candidate equally similar: ln(C).
  auto q3 = g.input(Tensor<double>(Shape{3, 2}, {1, 1, 1, 1, 1, 1}), "q");
  auto p3 = g.input(Tensor<double>(Shape{3, 2}, {1, 1, 2, 2, 3, 3}), "p");
  auto n3 = g.input(Tensor<double>(Shape{3, 2}, {5, 5, 1, 1, 4, 4}), "n");
  CHECK(g.scalar(info_nce<double>(g, q3, p3, n3, 0.05)) == doctest::Approx(std::log(6.0)).epsilon(1e-12));
  CHECK_THROWS_AS(info_nce<double>(g, q, p, n, 0.0), ConfigError);
  auto zero = g.input(Tensor<double>(Shape{1, 2}, {0, 0}), "z");
  CHECK_THROWS(info_nce<double>(g, zero, p, n, 1.0));
}

TEST_CASE("info_nce matches the oracle") {
  std::mt19937_64 rng(31);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t b = 1 + rng() % 5, d = 2 + rng() % 6;
    const auto q = random_rows(b, d, rng), p = random_rows(b, d, rng), n = random_rows(b, d, rng);
    const double t = 0.05 + 0.01 * double(rng() % 100);
    ParamStore<double> ps;
    Graph<double> g(ps);
    auto qi = g.input(from_rows(q), "q"), pi = g.input(from_rows(p), "p"), ni = g.input(from_rows(n), "n");
    CHECK(g.scalar(info_nce<double>(g, qi, pi, ni, t)) == doctest::Approx(oracle::info_nce(q, p, n, t)).epsilon(1e-10));
    if (b == 1) {
      // A single candidate carries no contrastive signal.
      CHECK_THROWS(info_nce<double>(g, qi, pi, std::nullopt, t));
    } else {
      CHECK(g.scalar(info_nce<double>(g, qi, pi, std::nullopt, t)) ==
            doctest::Approx(oracle::info_nce(q, p, std::nullopt, t)).epsilon(1e-10));
    }
  }
}

TEST_CASE("token_ce examples") {
  ParamStore<double> ps;
  Graph<double> g(ps);
  auto uniform = g.input(Tensor<double>(Shape{2, 260}, 0.25), "z");
  const std::vector<std::size_t> t = {3, 200};
  const std::vector<std::uint8_t> m = {1, 1};
  CHECK(g.scalar(token_ce<double>(g, uniform, t, m)) == doctest::Approx(std::log(260.0)).epsilon(1e-12));

  Tensor<double> sharp(Shape{1, 4}, {0, 60, 0, 0});
  auto s = g.input(sharp, "z");
  const std::vector<std::size_t> t1 = {1};
  const std::vector<std::uint8_t> m1 = {1};
  CHECK(g.scalar(token_ce<double>(g, s, t1, m1)) < 1e-20);

  // Per-token NLL 0.2 and 0.4 on two classes: logit gap log(p / (1 - p)).
  const double p1 = std::exp(-0.2), p2 = std::exp(-0.4);
  auto two = g.input(Tensor<double>(Shape{3, 2}, {std::log(p1 / (1 - p1)), 0, std::log(p2 / (1 - p2)), 0, 0, 9}), "z");
  const std::vector<std::size_t> t2 = {0, 0, 0};
  const std::vector<std::uint8_t> m2 = {1, 1, 0};
  CHECK(g.scalar(token_ce<double>(g, two, t2, m2)) == doctest::Approx(0.3).epsilon(1e-12));

  const std::vector<std::size_t> bad = {4};
  CHECK_THROWS(token_ce<double>(g, s, bad, m1));
}

TEST_CASE("token_ce and mean_pool match the oracle") {
  std::mt19937_64 rng(41);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 1 + rng() % 6, v = 2 + rng() % 9;
    const auto z = random_rows(n, v, rng);
    std::vector<std::size_t> targets(n);
    std::vector<std::uint8_t> mask(n);
    for (std::size_t i = 0; i < n; ++i) {
      targets[i] = rng() % v;
      mask[i] = i == 0 || rng() % 3 != 0;
    }
    ParamStore<double> ps;
    Graph<double> g(ps);
    auto zi = g.input(from_rows(z), "z");
    CHECK(g.scalar(token_ce<double>(g, zi, targets, mask)) ==
          doctest::Approx(oracle::token_ce(z, targets, mask)).epsilon(1e-10));

    const std::size_t batch = 1 + rng() % 3, seq = 1 + rng() % 4;
    const auto h = random_rows(batch * seq, 3, rng);
    std::vector<std::uint8_t> pm(batch * seq);
    for (std::size_t i = 0; i < pm.size(); ++i) pm[i] = i % seq == 0 || rng() % 2;
    auto hi = g.input(from_rows(h), "h");
    const auto& pooled = g.value(mean_pool<double>(g, hi, batch, seq, pm));
    const auto ref = oracle::mean_pool(h, batch, seq, pm);
    for (std::size_t b = 0; b < batch; ++b) {
      for (std::size_t j = 0; j < 3; ++j) CHECK(pooled.at(b, j) == doctest::Approx(ref[b][j]).epsilon(1e-12));
    }
  }
}
