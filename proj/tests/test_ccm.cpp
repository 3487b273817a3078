#include <doctest.h>

#include <algorithm>
#include <bit>
#include <fstream>
#include <numeric>
#include <random>
#include <set>

#include "helpers.hpp"
#include "treerank/ccm.hpp"
#include "treerank/errors.hpp"
#include "treerank/telemetry.hpp"

using namespace treerank;

namespace {

// Power-set scan: subsets of {0..n-1} whose size is m, m/2, ..., 2.
std::size_t powerset_count(std::size_t n, std::size_t m) {
  std::size_t count = 0;
  for (std::uint32_t mask = 0; mask < (1u << n); ++mask) {
    const auto bits = static_cast<std::size_t>(std::popcount(mask));
    for (std::size_t s = m; s >= 2; s /= 2) count += bits == s ? 1 : 0;
  }
  return count;
}

std::vector<Scalar> naive_scores(const PermutationSpace& space, const Tensor& semantic, const ModelParams& p,
                                 std::span<const std::size_t> rows) {
  std::vector<Scalar> out;
  for (auto r : rows) out.push_back(score_list(space.permutations.row(r), semantic, p).total);
  return out;
}

}  // namespace

TEST_CASE("binomials and arrangements") {
  CHECK(binomial(8, 4) == 70);
  CHECK(binomial(8, 0) == 1);
  CHECK(binomial(3, 5) == 0);
  CHECK(arrangements(8, 8) == 40320);
  CHECK(arrangements(10, 3) == 720);
  CHECK(block_sizes(8, 3) == std::vector<std::size_t>{8, 4, 2});
  CHECK(block_sizes(8, 1) == std::vector<std::size_t>{8});
}

TEST_CASE("subset enumeration counts match a power-set scan") {
  CHECK(enumerate_subsets(8, 8).size() == 99);
  for (auto [n, m] : {std::pair{2, 2}, {4, 4}, {6, 4}, {8, 8}, {10, 8}, {12, 4}}) {
    CHECK(enumerate_subsets(n, m).size() == powerset_count(n, m));
  }
  CHECK_THROWS_AS(enumerate_subsets(4, 8), InputError);
  CHECK_THROWS_AS(enumerate_subsets(8, 6), ConfigError);
}

TEST_CASE("subset order is size-major then lexicographic, and the indexer agrees") {
  for (auto [n, m] : {std::pair{8, 8}, {10, 4}, {6, 2}}) {
    const auto keys = enumerate_subsets(n, m);
    for (std::size_t i = 1; i < keys.size(); ++i) {
      const bool bigger_first = keys[i - 1].size() > keys[i].size();
      CHECK((bigger_first || (keys[i - 1].size() == keys[i].size() && keys[i - 1] < keys[i])));
    }
    std::vector<std::size_t> sizes;
    for (std::size_t s = m; s >= 2; s /= 2) sizes.push_back(s);
    const SubsetIndexer idx(n, sizes);
    CHECK(idx.slot_count() == keys.size());
    for (std::size_t i = 0; i < keys.size(); ++i) CHECK(idx.slot(keys[i].items) == i);
  }
}

TEST_CASE("permutation table is lexicographic and ranks invert it") {
  const PermutationTable t = enumerate_permutations(5, 3);
  CHECK(t.count() == 60);
  for (std::size_t p = 1; p < t.count(); ++p) {
    const auto a = t.row(p - 1), b = t.row(p);
    CHECK(std::lexicographical_compare(a.begin(), a.end(), b.begin(), b.end()));
  }
  for (std::size_t p = 0; p < t.count(); ++p) CHECK(permutation_rank(5, t.row(p)) == p);
  CHECK(enumerate_permutations(8, 8).count() == 40320);
}

TEST_CASE("index matrix slots point at the sorted block contents") {
  const PermutationSpace space = build_index_matrix(6, 4);
  CHECK(space.index.levels == 2);
  const auto keys = enumerate_subsets(6, 4);
  const TreeLayout layout = tree_blocks(4);
  for (std::size_t p = 0; p < space.permutations.count(); p += 7) {
    const auto row = space.permutations.row(p);
    for (std::size_t level = 0; level < 2; ++level) {
      for (std::size_t t = 0; t < 4; ++t) {
        const Block& b = layout.block_containing(level, t);
        std::vector<std::uint32_t> items(row.begin() + b.begin, row.begin() + b.end);
        std::sort(items.begin(), items.end());
        CHECK(keys[space.index.at(p, t, level)].items == items);
      }
    }
  }
  IndexOptions small;
  small.max_permutations = 100;
  CHECK_THROWS_AS(build_index_matrix(8, 8, small), ResourceError);
}

TEST_CASE("index file round trip and corruption") {
  const auto dir = testutil::temp_dir("index");
  const PermutationSpace space = build_index_matrix(5, 4);
  save_index_file(space, dir / "m.trix");
  const PermutationSpace back = load_index_file(dir / "m.trix");
  CHECK(back.permutations.items == space.permutations.items);
  CHECK(back.index.slots == space.index.slots);
  CHECK(back.index.levels == space.index.levels);

  std::ifstream in(dir / "m.trix", std::ios::binary);
  std::string bytes((std::istreambuf_iterator<char>(in)), {});
  {
    std::ofstream cut(dir / "cut.trix", std::ios::binary);
    cut.write(bytes.data(), static_cast<std::streamsize>(bytes.size() / 2));
  }
  CHECK_THROWS_AS(load_index_file(dir / "cut.trix"), FormatError);
  bytes[0] = 'X';
  {
    std::ofstream bad(dir / "bad.trix", std::ios::binary);
    bad << bytes;
  }
  CHECK_THROWS_AS(load_index_file(dir / "bad.trix"), FormatError);
}

TEST_CASE("cached scores equal naive recomputation") {
  for (auto [n, m] : {std::pair{2, 2}, {4, 4}, {6, 4}, {5, 2}}) {
    Config cfg = testutil::small_config(n, m);
    const ModelParams p = init_model(cfg.model, 40 + n);
    std::mt19937_64 rng(41);
    const RawRequest r = testutil::random_request(cfg.model, n, rng);
    const Tensor semantic = semantic_encode(r, p);
    const ContextCache cache = build_cache(semantic, p);
    const PermutationSpace space = build_index_matrix(n, m);
    const auto cached = score_all_permutations(cache, space, semantic, p);
    std::vector<std::size_t> all(space.permutations.count());
    std::iota(all.begin(), all.end(), 0);
    const auto naive = naive_scores(space, semantic, p, all);
    Scalar worst = 0;
    for (std::size_t i = 0; i < all.size(); ++i) worst = std::max(worst, std::abs(cached[i] - naive[i]));
    CHECK(worst <= 1e-12);
  }
}

TEST_CASE("cache holds one embedding per subset and costs one call each") {
  const Config cfg = testutil::small_config();
  const ModelParams p = init_model(cfg.model, 50);
  std::mt19937_64 rng(51);
  const Tensor semantic = testutil::random_tensor(8, cfg.model.dim, rng);
  const auto before = counters().snapshot();
  const ContextCache cache = build_cache(semantic, p);
  CHECK((counters().snapshot() - before).set_attention == 99);
  CHECK(cache.size() == 99);
  CHECK(cache.stored_embeddings() == 107);
  const SubsetKey key{{1, 4, 6, 7}};
  const Tensor direct = set_attention(semantic, key.items, p.set_attention_for_level(1));
  const auto looked = cache.lookup(key);
  CHECK(std::equal(looked.begin(), looked.end(), direct.row(0).begin()));
}

TEST_CASE("parallel chunked scoring is bit-identical to one worker") {
  const Config cfg = testutil::small_config(6, 4);
  const ModelParams p = init_model(cfg.model, 52);
  std::mt19937_64 rng(53);
  const Tensor semantic = semantic_encode(testutil::random_request(cfg.model, 6, rng), p);
  const ContextCache cache = build_cache(semantic, p);
  const PermutationSpace space = build_index_matrix(6, 4);
  const auto one = score_all_permutations(cache, space, semantic, p, {}, {4096, 1});
  const auto many = score_all_permutations(cache, space, semantic, p, {}, {17, 3});
  CHECK(one == many);
}

TEST_CASE("mismatched cache and index are rejected") {
  const Config cfg = testutil::small_config(6, 4);
  const ModelParams p = init_model(cfg.model, 54);
  std::mt19937_64 rng(55);
  const Tensor semantic = testutil::random_tensor(6, cfg.model.dim, rng);
  const ContextCache cache = build_cache(semantic, p);
  const PermutationSpace other = build_index_matrix(5, 4);
  CHECK_THROWS_AS(score_all_permutations(cache, other, semantic, p), ConsistencyError);
}

TEST_CASE("argmax picks the first maximum") {
  const std::vector<Scalar> s{0.1, 0.7, 0.3, 0.7};
  CHECK(argmax_index(s) == 1);
  CHECK_THROWS_AS(argmax_index(std::vector<Scalar>{}), InputError);
  const PermutationTable t = enumerate_permutations(2, 2);
  const ArgmaxResult r = argmax_list(std::vector<Scalar>{0.5, 0.5}, t);
  CHECK(r.best_index == 0);
  CHECK(r.best_permutation == std::vector<std::uint32_t>{0, 1});
}

TEST_CASE("lazy cache matches the full cache on sampled permutations") {
  const Config cfg = testutil::small_config();
  const ModelParams p = init_model(cfg.model, 56);
  std::mt19937_64 rng(57);
  const Tensor semantic = semantic_encode(testutil::random_request(cfg.model, 8, rng), p);
  const PermutationSpace space = build_index_matrix(8, 8);
  const ContextCache cache = build_cache(semantic, p);
  const auto full = score_all_permutations(cache, space, semantic, p);
  std::vector<std::uint32_t> rows;
  std::vector<std::size_t> picked;
  std::uniform_int_distribution<std::size_t> pick(0, space.permutations.count() - 1);
  for (int i = 0; i < 200; ++i) {
    picked.push_back(pick(rng));
    const auto row = space.permutations.row(picked.back());
    rows.insert(rows.end(), row.begin(), row.end());
  }
  LazyContextCache lazy;
  const auto sampled = score_permutations_lazy(rows, semantic, p, lazy);
  for (std::size_t i = 0; i < picked.size(); ++i) CHECK(sampled[i] == doctest::Approx(full[picked[i]]).epsilon(1e-12));
  CHECK(lazy.size() <= 99);
}

TEST_CASE("rerank counts and counter neutrality") {
  const Config cfg = testutil::small_config();
  const ModelParams p = init_model(cfg.model, 58);
  std::mt19937_64 rng(59);
  const RawRequest r = testutil::random_request(cfg.model, 8, rng);
  const PermutationSpace space = build_index_matrix(8, 8);
  const RerankResult res = rerank(r, p, space);
  CHECK(res.set_attention_calls == 99);
  CHECK(res.head_evals == 40320 * 8);
  CHECK(res.feature_cross_calls == 8);
  CHECK(res.best_items.size() == 8);
  for (std::size_t t = 0; t < 8; ++t) CHECK(res.best_items[t] == r.candidate_item_ids[res.best_permutation[t]]);

  counters().set_enabled(false);
  const RerankResult quiet = rerank(r, p, space);
  counters().set_enabled(true);
  CHECK(quiet.scores == res.scores);
  CHECK(quiet.set_attention_calls == 0);
}
