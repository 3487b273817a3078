#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <set>

#include "helpers.hpp"
#include "treerank/ccm.hpp"
#include "treerank/errors.hpp"
#include "treerank/metrics.hpp"
#include "treerank/tcem.hpp"

using namespace treerank;

namespace {

// Counts positive/negative pairs directly.
Scalar pair_count_auc(const std::vector<Scalar>& s, const std::vector<std::uint8_t>& y) {
  Scalar wins = 0, pairs = 0;
  for (std::size_t i = 0; i < s.size(); ++i)
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (!y[i] || y[j]) continue;
      pairs += 1;
      wins += s[i] > s[j] ? 1.0 : (s[i] == s[j] ? 0.5 : 0.0);
    }
  return wins / pairs;
}

}  // namespace

TEST_CASE("auc examples") {
  const std::vector<std::uint8_t> y{0, 0, 1, 1};
  CHECK(auc(std::vector<Scalar>{0.1, 0.2, 0.8, 0.9}, y) == 1.0);
  CHECK(auc(std::vector<Scalar>{0.5, 0.5, 0.5, 0.5}, y) == 0.5);
  CHECK(auc(std::vector<Scalar>{0.1, 0.4, 0.35, 0.8}, y) == doctest::Approx(0.75));
  CHECK_THROWS_AS(auc(std::vector<Scalar>{0.1, 0.2}, std::vector<std::uint8_t>{1, 1}), UndefinedMetricError);
}

TEST_CASE("auc agrees with pair counting, including ties, and ignores monotone transforms") {
  std::mt19937_64 rng(71);
  std::uniform_int_distribution<int> coarse(0, 5);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<Scalar> s(30);
    std::vector<std::uint8_t> y(30);
    for (std::size_t i = 0; i < 30; ++i) {
      s[i] = coarse(rng) * 0.1;
      y[i] = coarse(rng) < 2;
    }
    y[0] = 1;
    y[1] = 0;
    const Scalar a = auc(s, y);
    CHECK(a == doctest::Approx(pair_count_auc(s, y)).epsilon(1e-14));
    CHECK(a >= 0.0);
    CHECK(a <= 1.0);
    std::vector<Scalar> t = s;
    for (auto& v : t) v = std::exp(3 * v) - 7;
    CHECK(auc(t, y) == doctest::Approx(a).epsilon(1e-14));
  }
}

TEST_CASE("gauc is the unweighted mean of per-list auc") {
  const EvalRecord perfect{1, {0.1, 0.9}, {0, 1}};
  const EvalRecord coin{2, {0.5, 0.5}, {0, 1}};
  CHECK(gauc(std::vector<EvalRecord>{perfect}) == 1.0);
  CHECK(gauc(std::vector<EvalRecord>{perfect, coin}) == doctest::Approx(0.75));
  const EvalRecord longer{3, {0.5, 0.5, 0.5, 0.5}, {0, 1, 0, 0}};
  CHECK(gauc(std::vector<EvalRecord>{perfect, longer}, true) == doctest::Approx((2 * 1.0 + 4 * 0.5) / 6));
  CHECK_THROWS_AS(gauc(std::vector<EvalRecord>{}), UndefinedMetricError);

  // Reordering items inside a list leaves its auc alone.
  const EvalRecord a{4, {0.3, 0.8, 0.1, 0.6}, {1, 0, 0, 1}};
  const EvalRecord b{4, {0.6, 0.1, 0.8, 0.3}, {1, 0, 0, 1}};
  CHECK(gauc(std::vector<EvalRecord>{a}) == gauc(std::vector<EvalRecord>{b}));
}

TEST_CASE("hit ratio") {
  std::vector<HRTrial> t{{1, 5, {1, 5, 9}}, {2, 3, {0, 1}}};
  CHECK(hit_ratio(t) == 0.5);
  CHECK(hit_ratio(std::vector<HRTrial>{}) == 0.0);
}

TEST_CASE("random-K GSU draws distinct sorted indices") {
  std::mt19937_64 rng(72);
  const auto c = gsu_random_k(40320, 100, rng);
  CHECK(c.size() == 100);
  CHECK(std::is_sorted(c.begin(), c.end()));
  CHECK(std::set<std::size_t>(c.begin(), c.end()).size() == 100);
  CHECK(c.back() < 40320);
  CHECK(gsu_random_k(24, 24, rng).size() == 24);
  CHECK(gsu_random_k(24, 100, rng).size() == 24);

  // Full enumeration always hits; K = P for n=m=4 too.
  std::vector<HRTrial> trials;
  for (std::size_t best = 0; best < 24; ++best) trials.push_back({best, best, gsu_random_k(24, 24, rng)});
  CHECK(hit_ratio(trials) == 1.0);

  // Every index is drawn with probability K/P.
  std::vector<int> hits(50, 0);
  for (int i = 0; i < 20000; ++i)
    for (auto v : gsu_random_k(50, 5, rng)) ++hits[v];
  for (int h : hits) CHECK(std::abs(h / 20000.0 - 0.1) < 0.015);
}

TEST_CASE("beam search") {
  const Config cfg = testutil::small_config(4, 4);
  const ModelParams p = init_model(cfg.model, 73);
  std::mt19937_64 rng(74);
  const Tensor semantic = testutil::random_tensor(4, cfg.model.dim, rng);

  // Greedy oracle: best unused item at each position under a zero context.
  const std::vector<Scalar> zero(cfg.model.context_levels() * cfg.model.dim, 0.0);
  std::vector<std::uint32_t> greedy;
  for (std::size_t t = 0; t < 4; ++t) {
    Scalar best = -1;
    std::uint32_t arg = 0;
    for (std::uint32_t i = 0; i < 4; ++i) {
      if (std::find(greedy.begin(), greedy.end(), i) != greedy.end()) continue;
      const Scalar v = predict_item_pctr(t, semantic.row(i), zero, p);
      if (v > best) {
        best = v;
        arg = i;
      }
    }
    greedy.push_back(arg);
  }
  const auto one = gsu_beam_search(semantic, p, 1);
  REQUIRE(one.size() == 1);
  CHECK(one[0] == greedy);

  const auto three = gsu_beam_search(semantic, p, 3);
  CHECK(three.size() == 3);
  CHECK(std::set<std::vector<std::uint32_t>>(three.begin(), three.end()).size() == 3);

  const auto all = gsu_beam_search(semantic, p, 24);
  CHECK(all.size() == 24);
  CHECK(std::find(all.begin(), all.end(), greedy) != all.end());
  CHECK_THROWS_AS(gsu_beam_search(semantic, p, 0), InputError);
}

TEST_CASE("percentile uses nearest rank") {
  std::vector<double> v(100);
  for (int i = 0; i < 100; ++i) v[i] = 100 - i;
  CHECK(percentile(v, 0.99) == 99);
  CHECK(percentile(v, 1.0) == 100);
  CHECK(percentile({3.0}, 0.99) == 3.0);
}

TEST_CASE("bench call counts") {
  const Config cfg = testutil::small_config();
  const ModelParams p = init_model(cfg.model, 75);
  std::mt19937_64 rng(76);
  std::vector<RawRequest> reqs{testutil::random_request(cfg.model, 8, rng), testutil::random_request(cfg.model, 8, rng)};
  const PermutationSpace space = build_index_matrix(8, 8);

  BenchOptions cached;
  cached.repetitions = 2;
  cached.warmup = 1;
  const BenchResult c = bench(reqs, p, space, cached);
  CHECK(c.set_attention_calls == 99);
  CHECK(c.head_evals == 40320u * 8);
  CHECK(c.mean_ms > 0);
  CHECK(c.p99_ms >= c.mean_ms * 0.5);

  BenchOptions naive = cached;
  naive.mode = "naive";
  naive.k = 100;
  const BenchResult n = bench(reqs, p, space, naive);
  CHECK(n.set_attention_calls == 700);
  CHECK(n.head_evals == 800);
  CHECK(n.permutations_scored == 100);

  BenchOptions bad = cached;
  bad.mode = "fast";
  CHECK_THROWS_AS(bench(reqs, p, space, bad), ConfigError);
}

TEST_CASE("naive rerank agrees with the cached argmax when given every permutation") {
  const Config cfg = testutil::small_config(5, 4);
  const ModelParams p = init_model(cfg.model, 77);
  std::mt19937_64 rng(78);
  const RawRequest r = testutil::random_request(cfg.model, 5, rng);
  const PermutationSpace space = build_index_matrix(5, 4);
  std::vector<std::size_t> all(space.permutations.count());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  CHECK(naive_rerank(r, p, space, all) == rerank(r, p, space).best_index);
}
