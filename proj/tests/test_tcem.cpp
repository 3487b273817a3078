#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "helpers.hpp"
#include "treerank/errors.hpp"
#include "treerank/tcem.hpp"
#include "treerank/telemetry.hpp"

using namespace treerank;

namespace {

std::vector<Scalar> set_attention_oracle(const Tensor& semantic, std::vector<std::uint32_t> items,
                                         const SetAttentionParams& p) {
  std::sort(items.begin(), items.end());
  const std::size_t d = semantic.cols();
  const std::size_t k = items.size();
  auto project = [&](std::uint32_t row, const Tensor& w) {
    std::vector<Scalar> out(d, 0.0);
    for (std::size_t j = 0; j < d; ++j)
      for (std::size_t c = 0; c < d; ++c) out[j] += semantic(row, c) * w(c, j);
    return out;
  };
  std::vector<std::vector<Scalar>> q, kk, v;
  for (auto it : items) {
    q.push_back(project(it, p.query.value));
    kk.push_back(project(it, p.key.value));
    v.push_back(project(it, p.value.value));
  }
  std::vector<Scalar> pooled(d, 0.0);
  for (std::size_t a = 0; a < k; ++a) {
    std::vector<Scalar> w(k);
    for (std::size_t b = 0; b < k; ++b) {
      Scalar dot = 0;
      for (std::size_t j = 0; j < d; ++j) dot += q[a][j] * kk[b][j];
      w[b] = dot / std::sqrt(static_cast<Scalar>(d));
    }
    const Scalar mx = *std::max_element(w.begin(), w.end());
    Scalar z = 0;
    for (auto& x : w) z += (x = std::exp(x - mx));
    for (std::size_t b = 0; b < k; ++b)
      for (std::size_t j = 0; j < d; ++j) pooled[j] += w[b] / z * v[b][j] / static_cast<Scalar>(k);
  }
  return pooled;
}

}  // namespace

TEST_CASE("tree layout halves the list") {
  const TreeLayout t = tree_blocks(8);
  REQUIRE(t.level_count() == 3);
  CHECK(t.level(0).size() == 1);
  CHECK(t.level(1).size() == 2);
  CHECK(t.level(2).size() == 4);
  CHECK(t.block_count() == 7);
  CHECK(t.level(2)[1] == Block{2, 2, 4});
  CHECK(t.block_containing(1, 5) == Block{1, 4, 8});
  CHECK(tree_blocks(2).block_count() == 1);
  CHECK_THROWS_AS(tree_blocks(6), ConfigError);
  CHECK_THROWS_AS(tree_blocks(1), ConfigError);
  CHECK(level_for_block_size(8, 8) == 0);
  CHECK(level_for_block_size(8, 2) == 2);

  ModelConfig mc;
  mc.no_tcem = true;
  const TreeLayout flat = context_layout(mc);
  CHECK(flat.level_count() == 1);
  CHECK(flat.block_count() == 1);
}

TEST_CASE("set attention matches a loop oracle") {
  const Config cfg = testutil::small_config();
  const ModelParams p = init_model(cfg.model, 21);
  std::mt19937_64 rng(22);
  const Tensor semantic = testutil::random_tensor(8, cfg.model.dim, rng);
  for (std::vector<std::uint32_t> items : {std::vector<std::uint32_t>{3}, {1, 6}, {7, 0, 2, 5}, {0, 1, 2, 3, 4, 5, 6, 7}}) {
    const Tensor got = set_attention(semantic, items, p.set_attention_for_level(0));
    const auto want = set_attention_oracle(semantic, items, p.set_attention_for_level(0));
    for (std::size_t j = 0; j < cfg.model.dim; ++j) CHECK(got(0, j) == doctest::Approx(want[j]).epsilon(1e-12));
  }
  // A single row attends only to itself: pooled = x·Wv.
  const Tensor one = set_attention(semantic, std::vector<std::uint32_t>{4}, p.set_attention_for_level(0));
  const Tensor xv = matmul(Tensor::row_vector(semantic.row(4)), p.set_attention_for_level(0).value.value);
  CHECK(testutil::max_abs_diff(one, xv) < 1e-14);
  CHECK_THROWS_AS(set_attention(semantic, std::vector<std::uint32_t>{}, p.set_attention_for_level(0)), InputError);
  CHECK_THROWS_AS(set_attention(semantic, std::vector<std::uint32_t>{8}, p.set_attention_for_level(0)), InputError);
}

TEST_CASE("set attention is bit-identical under any input order") {
  const Config cfg = testutil::small_config();
  const ModelParams p = init_model(cfg.model, 23);
  std::mt19937_64 rng(24);
  const Tensor semantic = testutil::random_tensor(8, cfg.model.dim, rng);
  std::vector<std::uint32_t> items{0, 1, 2, 3, 4, 5, 6, 7};
  const Tensor ref = set_attention(semantic, items, p.set_attention_for_level(0));
  for (int i = 0; i < 50; ++i) {
    std::shuffle(items.begin(), items.end(), rng);
    CHECK(set_attention(semantic, items, p.set_attention_for_level(0)) == ref);
  }
}

TEST_CASE("set attention backward matches finite differences") {
  const Config cfg = testutil::small_config();
  ModelParams p = init_model(cfg.model, 25);
  std::mt19937_64 rng(26);
  Param sem("semantic", testutil::random_tensor(6, cfg.model.dim, rng));
  const Tensor coeff = testutil::random_tensor(1, cfg.model.dim, rng);
  const std::vector<std::uint32_t> items{5, 1, 3};
  auto& sa = p.set_attention_for_level(0);
  auto loss = [&](bool with_grad) {
    const SetAttentionTrace t = set_attention_forward(sem.value, items, sa);
    Scalar l = 0;
    for (std::size_t j = 0; j < cfg.model.dim; ++j) l += coeff(0, j) * t.pooled(0, j);
    if (with_grad) set_attention_backward(t, coeff.row(0), sa, sem.grad);
    return l;
  };
  std::vector<Param*> params{&sa.query, &sa.key, &sa.value, &sem};
  CHECK(gradcheck(loss, params, 1e-5).max_relative_error < 1e-6);
}

TEST_CASE("context stack and call counts") {
  Config cfg = testutil::small_config();
  const ModelParams p = init_model(cfg.model, 27);
  std::mt19937_64 rng(28);
  const Tensor semantic = testutil::random_tensor(8, cfg.model.dim, rng);
  std::vector<std::uint32_t> perm{3, 1, 7, 0, 2, 6, 5, 4};

  auto before = counters().snapshot();
  const ContextStack stack = context_stack_for_list(perm, semantic, p);
  CHECK((counters().snapshot() - before).set_attention == 7);
  CHECK(stack.levels == 3);
  // Level 1 block {2,6,5,4} sits at positions 4..7.
  const Tensor blk = set_attention(semantic, std::vector<std::uint32_t>{2, 6, 5, 4}, p.set_attention_for_level(1));
  for (std::size_t t = 4; t < 8; ++t)
    for (std::size_t j = 0; j < cfg.model.dim; ++j) CHECK(stack.at(t, 1)[j] == blk(0, j));

  cfg.model.no_tcem = true;
  const ModelParams flat = init_model(cfg.model, 27);
  before = counters().snapshot();
  const ContextStack one = context_stack_for_list(perm, semantic, flat);
  CHECK((counters().snapshot() - before).set_attention == 1);
  CHECK(one.levels == 1);
}

TEST_CASE("per-level set attention uses a separate layer per level") {
  Config cfg = testutil::small_config();
  cfg.model.per_level_set_attention = true;
  const ModelParams p = init_model(cfg.model, 29);
  CHECK(p.set_attention.size() == 3);
  CHECK(!(p.set_attention_for_level(0).query.value == p.set_attention_for_level(2).query.value));
}

TEST_CASE("permutation validation") {
  CHECK_NOTHROW(validate_permutation(std::vector<std::uint32_t>{0, 2, 1, 3}, 5, 4));
  CHECK_THROWS_AS(validate_permutation(std::vector<std::uint32_t>{0, 2, 2, 3}, 5, 4), InputError);
  CHECK_THROWS_AS(validate_permutation(std::vector<std::uint32_t>{0, 2, 1, 5}, 5, 4), InputError);
  CHECK_THROWS_AS(validate_permutation(std::vector<std::uint32_t>{0, 2, 1}, 5, 4), InputError);
}

TEST_CASE("list score is the weighted sum of per-item pCTR") {
  const Config cfg = testutil::small_config();
  const ModelParams p = init_model(cfg.model, 30);
  std::mt19937_64 rng(31);
  const Tensor semantic = testutil::random_tensor(8, cfg.model.dim, rng);
  std::vector<std::uint32_t> perm(8);
  std::iota(perm.begin(), perm.end(), 0);
  const ListScore plain = score_list(perm, semantic, p);
  Scalar sum = 0;
  for (auto v : plain.per_item) {
    CHECK(v > 0.0);
    CHECK(v < 1.0);
    sum += v;
  }
  CHECK(plain.total == doctest::Approx(sum).epsilon(1e-15));

  const std::vector<Scalar> w{2, 0, 1, 1, 1, 1, 1, 0.5};
  const ListScore weighted = score_list(perm, semantic, p, w);
  Scalar expect = 0;
  for (std::size_t t = 0; t < 8; ++t) expect += w[t] * plain.per_item[t];
  CHECK(weighted.total == doctest::Approx(expect).epsilon(1e-15));
  CHECK_THROWS_AS(weighted_total(plain.per_item, std::vector<Scalar>{1, 2}), DimensionError);

  // Moving an item changes its context, so scores are order dependent.
  std::vector<std::uint32_t> swapped = perm;
  std::swap(swapped[0], swapped[7]);
  CHECK(score_list(swapped, semantic, p).total != plain.total);
}

TEST_CASE("head input width is checked") {
  const Config cfg = testutil::small_config();
  const ModelParams p = init_model(cfg.model, 32);
  const std::vector<Scalar> sem(cfg.model.dim, 0.0), ctx(2 * cfg.model.dim, 0.0);
  CHECK_THROWS_AS(head_logit(0, sem, ctx, p), DimensionError);
  CHECK_THROWS_AS(head_logit(8, sem, std::vector<Scalar>(3 * cfg.model.dim), p), InputError);
}
