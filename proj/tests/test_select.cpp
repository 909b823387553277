// Copyright 2026 The Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <doctest.h>

#include <numeric>
#include <set>
#include <sstream>

#include "derts/kernels.hpp"
#include "derts/select.hpp"
#include "test_support.hpp"

using namespace derts;
using namespace derts::testing;

namespace {

std::vector<Vector> line(std::initializer_list<double> xs) {
  std::vector<Vector> pts;
  for (double x : xs) pts.push_back({x});
  return pts;
}

std::vector<GradientEstimate> estimates_from(const std::vector<Vector>& pts) {
  std::vector<GradientEstimate> e;
  for (std::size_t i = 0; i < pts.size(); ++i) e.push_back(GradientEstimate::make(pts[i], i));
  return e;
}

}  // namespace

TEST_CASE("facility value on three collinear points") {
  // Points 0, 1, 2: c = 2. F({1}) = 1 + 2 + 1 = 4, F({0}) = 2 + 1 + 0 = 3.
  const auto pts = line({0.0, 1.0, 2.0});
  const DistanceOracle d(pts, true);
  CHECK(d.max_distance() == 2.0);
  const std::size_t mid[] = {1};
  const std::size_t end[] = {0};
  const std::size_t both[] = {0, 2};
  CHECK(facility_value(d, mid) == 4.0);
  CHECK(facility_value(d, end) == 3.0);
  CHECK(facility_value(d, both) == 2.0 + 1.0 + 2.0);
  CHECK(facility_value(d, std::span<const std::size_t>{}) == 0.0);
  Rng rng(0);
  const auto sel = greedy_select(pts, 1, GreedyMode::kExact, 0.01, rng);
  CHECK(sel == std::vector<std::size_t>{1});
}

TEST_CASE("distance oracle validation and lazy equivalence") {
  CHECK_THROWS_AS(DistanceOracle(Matrix(2, 3)), InputError);
  CHECK_THROWS_AS(DistanceOracle(Matrix(2, 2, {0.0, 1.0, 2.0, 0.0})), InputError);
  CHECK_THROWS_AS(DistanceOracle(Matrix(2, 2, {1.0, 1.0, 1.0, 0.0})), InputError);
  CHECK_THROWS_AS(DistanceOracle(Matrix(2, 2, {0.0, -1.0, -1.0, 0.0})), InputError);
  Rng rng(1);
  const auto pts = random_points(20, 4, rng);
  const DistanceOracle lazy(pts, false);
  const DistanceOracle mat(pts, true);
  for (std::size_t i = 0; i < 20; ++i) {
    for (std::size_t j = 0; j < 20; ++j) CHECK(lazy(i, j) == mat(i, j));
  }
  CHECK(lazy.max_distance() == mat.max_distance());
  CHECK(mat.max_distance() == naive_max_distance(pts));
}

TEST_CASE("facility value agrees with the definition") {
  Rng rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    const auto pts = random_points(7, 3, rng);
    const DistanceOracle d(pts, true);
    std::vector<std::size_t> s{static_cast<std::size_t>(trial) % 7, 3};
    if (s[0] == s[1]) s.pop_back();
    CHECK(facility_value(d, s) ==
          doctest::Approx(naive_facility(pts, s, naive_max_distance(pts))).epsilon(1e-13));
    CHECK(facility_value(d, s, 10.0) ==
          doctest::Approx(naive_facility(pts, s, 10.0)).epsilon(1e-13));
  }
}

TEST_CASE("greedy matches from-scratch greedy for any constant") {
  Rng rng(3);
  for (int trial = 0; trial < 30; ++trial) {
    const auto pts = random_points(12, 3, rng);
    const std::size_t k = 1 + static_cast<std::size_t>(trial) % 6;
    Rng r(0);
    const auto got = greedy_select(pts, k, GreedyMode::kExact, 0.01, r);
    CHECK(got == naive_greedy(pts, k, naive_max_distance(pts)));
    // With a large constant the naive sums round differently, so a near-tie
    // may break the other way. Allow that only at a genuine tie.
    const double c = 2.0 * naive_max_distance(pts) + 1.0;
    const auto other = naive_greedy(pts, k, c);
    std::size_t t = 0;
    while (t < k && got[t] == other[t]) ++t;
    if (t < k) {
      const std::vector<std::size_t> prefix(got.begin(), got.begin() + static_cast<long>(t));
      auto a = prefix;
      auto b = prefix;
      a.push_back(got[t]);
      b.push_back(other[t]);
      const double base = naive_facility(pts, prefix, c);
      CHECK(naive_facility(pts, a, c) - base ==
            doctest::Approx(naive_facility(pts, b, c) - base).epsilon(1e-12));
    }
  }
}

TEST_CASE("ties go to the lowest index") {
  // Two identical clusters: symmetric gains everywhere.
  const auto pts = line({0.0, 0.0, 5.0, 5.0});
  Rng rng(0);
  CHECK(greedy_select(pts, 2, GreedyMode::kExact, 0.01, rng) ==
        std::vector<std::size_t>{0, 2});
  const auto mapping = assign_to_nearest(pts, std::vector<std::size_t>{2, 0});
  CHECK(mapping == std::vector<std::size_t>{0, 0, 2, 2});
  // Point 1 is equidistant from the selected 0 and 2: lowest index wins.
  const auto eq = line({0.0, 1.0, 2.0});
  CHECK(assign_to_nearest(eq, std::vector<std::size_t>{2, 0})[1] == 0);
}

TEST_CASE("weights on a one-dimensional example") {
  const auto pts = line({0.0, 0.1, 5.0, 5.1});
  Rng rng(0);
  const auto sel = greedy_select(pts, 2, GreedyMode::kExact, 0.01, rng);
  REQUIRE(sel.size() == 2);
  CHECK(compute_weights(pts, sel) == std::vector<std::size_t>{2, 2});
}

TEST_CASE("weights are positive and sum to the pool size") {
  Rng rng(4);
  for (int trial = 0; trial < 100; ++trial) {
    std::uniform_int_distribution<std::size_t> nd(1, 40);
    const std::size_t n = nd(rng);
    std::uniform_int_distribution<std::size_t> kd(1, n);
    const std::size_t k = kd(rng);
    // Duplicated points exercise the tie rules.
    auto pts = random_points(n, 2, rng);
    if (n > 3) pts[1] = pts[0];
    const auto sel = greedy_select(pts, k, GreedyMode::kStochastic, 0.05, rng);
    CHECK(std::set<std::size_t>(sel.begin(), sel.end()).size() == k);
    const auto w = compute_weights(pts, sel);
    CHECK(std::accumulate(w.begin(), w.end(), std::size_t{0}) == n);
    for (std::size_t v : w) CHECK(v >= 1);
  }
  const auto pts = random_points(9, 2, rng);
  std::vector<std::size_t> all(9);
  std::iota(all.begin(), all.end(), std::size_t{0});
  CHECK(compute_weights(pts, all) == std::vector<std::size_t>(9, 1));
}

TEST_CASE("k validation") {
  const auto pts = line({0.0, 1.0});
  Rng rng(0);
  CHECK_THROWS_AS(greedy_select(pts, 0, GreedyMode::kExact, 0.01, rng), ConfigError);
  CHECK_THROWS_AS(greedy_select(pts, 3, GreedyMode::kExact, 0.01, rng), ConfigError);
  CHECK_THROWS_AS(stochastic_sample_size(10, 2, 1.0), ConfigError);
  CHECK(greedy_select(pts, 2, GreedyMode::kExact, 0.01, rng).size() == 2);
}

TEST_CASE("stochastic sample size and evaluation counter") {
  CHECK(stochastic_sample_size(256, 76, 0.01) ==
        static_cast<std::size_t>(std::ceil(256.0 / 76.0 * std::log(100.0))));
  Rng rng(5);
  const auto pts = random_points(300, 3, rng);
  const std::size_t s = stochastic_sample_size(300, 20, 0.01);
  GreedyStats st;
  greedy_select(pts, 20, GreedyMode::kStochastic, 0.01, rng, &st);
  CHECK(st.gain_evaluations == 20 * s);
  GreedyStats ex;
  greedy_select(pts, 20, GreedyMode::kExact, 0.01, rng, &ex);
  // Exact greedy scans all remaining candidates at each step.
  CHECK(ex.gain_evaluations == 20 * 300 - 19 * 20 / 2);
}

TEST_CASE("stochastic greedy with a full sample is exact greedy") {
  Rng rng(6);
  const auto pts = random_points(10, 3, rng);
  // epsilon tiny: s >= n at every step.
  Rng a(1);
  Rng b(2);
  CHECK(greedy_select(pts, 4, GreedyMode::kStochastic, 1e-30, a) ==
        greedy_select(pts, 4, GreedyMode::kExact, 0.01, b));
}

TEST_CASE("noise filter drops high-norm tasks without reweighting") {
  // Norms 1,1,1,1,10: mean 2.8, h = 3.5 with tau = 1.25.
  const std::vector<Vector> pts{{1.0}, {-1.0}, {1.0}, {-1.0}, {10.0}};
  const auto est = estimates_from(pts);
  WeightedSubset s;
  s.indices = {4, 0, 1};
  s.weights = {1, 3, 1};
  const WeightedSubset f = filter_noisy(est, s, 1.25);
  CHECK(f.indices == std::vector<std::size_t>{0, 1});
  CHECK(f.weights == std::vector<std::size_t>{3, 1});
  CHECK(f.dropped == std::vector<std::size_t>{4});
  CHECK(f.dropped_weights == std::vector<std::size_t>{1});
  CHECK_FALSE(f.filter_fallback);

  // Subset-based mean: (10 + 1 + 1) / 3 = 4, h = 5.
  const WeightedSubset g = filter_noisy(est, s, 1.25, ThresholdBase::kSubset);
  CHECK(g.dropped == std::vector<std::size_t>{4});

  // Norm exactly at the threshold is dropped: norms {2, 2}: h = tau * 2 = 2.
  const std::vector<Vector> eq{{2.0}, {-2.0}, {2.0}};
  WeightedSubset t;
  t.indices = {0, 1};
  t.weights = {2, 1};
  const WeightedSubset ft = filter_noisy(estimates_from(eq), t, 1.0);
  // Everything would go: the lowest-norm task (lowest index on ties) is kept.
  CHECK(ft.filter_fallback);
  CHECK(ft.indices == std::vector<std::size_t>{0});
  CHECK(ft.dropped == std::vector<std::size_t>{1});
  CHECK_THROWS_AS(filter_noisy(est, s, 0.0), ConfigError);
}

TEST_CASE("filter with a huge tau keeps everything") {
  Rng rng(7);
  const auto pts = random_points(30, 5, rng);
  SelectionConfig cfg;
  cfg.k_select = 9;
  cfg.mode = GreedyMode::kExact;
  cfg.noise_flag = true;
  cfg.tau = 1e9;
  const WeightedSubset s = select_from_estimates(estimates_from(pts), cfg);
  CHECK(s.indices.size() == 9);
  CHECK(s.dropped.empty());
  CHECK(s.total_weight() == 30);
}

TEST_CASE("selection is reproducible from the seed") {
  Rng rng(8);
  const auto est = estimates_from(random_points(200, 5, rng));
  SelectionConfig cfg;
  cfg.k_select = 30;
  cfg.seed = 77;
  const auto a = select_from_estimates(est, cfg);
  const auto b = select_from_estimates(est, cfg);
  CHECK(a == b);
  cfg.seed = 78;
  CHECK_FALSE(select_from_estimates(est, cfg).indices == a.indices);
}

TEST_CASE("subset CSV lists kept rows then dropped rows") {
  const std::vector<Vector> pts{{1.0}, {-1.0}, {1.0}, {-1.0}, {10.0}};
  auto est = estimates_from(pts);
  for (auto& e : est) e.task_index += 100;
  WeightedSubset s;
  s.indices = {0, 1};
  s.weights = {3, 1};
  s.dropped = {4};
  s.dropped_weights = {1};
  std::ostringstream out;
  write_subset_csv(s, est, out);
  CHECK(out.str() == "task_id,weight,dropped\n100,3,0\n101,1,0\n104,1,1\n");
}

TEST_CASE("parallel distance and gain kernels match the serial reference") {
  Rng rng(9);
  const auto pts = random_points(150, 6, rng);
  CHECK(kernels::pairwise_distances(pts) == kernels::serial::pairwise_distances(pts));
  const DistanceOracle d(pts, false);
  std::vector<std::size_t> cand(100);
  std::iota(cand.begin(), cand.end(), std::size_t{20});
  std::vector<double> nearest(150);
  for (std::size_t j = 0; j < 150; ++j) nearest[j] = d(j, 3);
  for (bool first : {true, false}) {
    std::vector<double> a;
    std::vector<double> b;
    kernels::facility_gains(d, cand, nearest, first, a);
    kernels::serial::facility_gains(d, cand, nearest, first, b);
    CHECK(a == b);
  }
}
