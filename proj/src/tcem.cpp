#include "treerank/tcem.hpp"

#include <algorithm>
#include <cmath>

#include "treerank/errors.hpp"
#include "treerank/telemetry.hpp"

namespace treerank {

std::size_t TreeLayout::block_count() const {
  std::size_t total = 0;
  for (const auto& lvl : levels_) total += lvl.size();
  return total;
}

const Block& TreeLayout::block_containing(std::size_t level, std::size_t position) const {
  const auto& blocks = levels_.at(level);
  const std::size_t size = blocks.front().size();
  return blocks.at(position / size);
}

bool is_power_of_two(std::size_t v) { return v != 0 && (v & (v - 1)) == 0; }

TreeLayout tree_blocks(std::size_t m) {
  if (m < 2 || !is_power_of_two(m)) {
    throw ConfigError("list length must be a power of two >= 2, got " + std::to_string(m));
  }
  std::vector<std::vector<Block>> levels;
  for (std::size_t size = m, level = 0; size >= 2; size /= 2, ++level) {
    std::vector<Block> blocks;
    for (std::size_t begin = 0; begin < m; begin += size) blocks.push_back({level, begin, begin + size});
    levels.push_back(std::move(blocks));
  }
  return TreeLayout(m, std::move(levels));
}

TreeLayout context_layout(const ModelConfig& cfg) {
  if (!cfg.no_tcem) return tree_blocks(cfg.list_len);
  if (cfg.list_len < 2 || !is_power_of_two(cfg.list_len)) tree_blocks(cfg.list_len);
  return TreeLayout(cfg.list_len, {{Block{0, 0, cfg.list_len}}});
}

std::size_t level_for_block_size(std::size_t m, std::size_t block_size) {
  std::size_t level = 0;
  for (std::size_t s = m; s > block_size; s /= 2) ++level;
  return level;
}

namespace {

struct AttentionParts {
  Tensor query, key, value, weights;
};

AttentionParts attend(const Tensor& rows, const SetAttentionParams& params) {
  AttentionParts p;
  p.query = matmul(rows, params.query.value);
  p.key = matmul(rows, params.key.value);
  p.value = matmul(rows, params.value.value);
  Tensor logits = matmul_nt(p.query, p.key);
  logits *= 1.0 / std::sqrt(static_cast<Scalar>(rows.cols()));
  p.weights = softmax_rows(logits);
  return p;
}

std::vector<std::uint32_t> sorted_items(std::span<const std::uint32_t> items, std::size_t n) {
  if (items.empty()) throw InputError("set_attention needs at least one row");
  std::vector<std::uint32_t> sorted(items.begin(), items.end());
  std::sort(sorted.begin(), sorted.end());
  if (sorted.back() >= n) throw InputError("set_attention item index " + std::to_string(sorted.back()) + " >= n");
  return sorted;
}

Tensor gather(const Tensor& semantic, std::span<const std::uint32_t> items) {
  Tensor rows(items.size(), semantic.cols());
  for (std::size_t i = 0; i < items.size(); ++i) {
    std::copy_n(semantic.row(items[i]).begin(), semantic.cols(), rows.row(i).begin());
  }
  return rows;
}

}  // namespace

Tensor set_attention_rows(const Tensor& rows, const SetAttentionParams& params) {
  if (rows.rows() == 0) throw InputError("set_attention needs at least one row");
  counters().add_set_attention();
  const AttentionParts p = attend(rows, params);
  return mean_rows(matmul(p.weights, p.value));
}

Tensor set_attention(const Tensor& semantic, std::span<const std::uint32_t> items, const SetAttentionParams& params) {
  const auto sorted = sorted_items(items, semantic.rows());
  return set_attention_rows(gather(semantic, sorted), params);
}

SetAttentionTrace set_attention_forward(const Tensor& semantic, std::span<const std::uint32_t> items,
                                        const SetAttentionParams& params) {
  SetAttentionTrace t;
  t.items = sorted_items(items, semantic.rows());
  t.rows = gather(semantic, t.items);
  counters().add_set_attention();
  AttentionParts p = attend(t.rows, params);
  t.query = std::move(p.query);
  t.key = std::move(p.key);
  t.value = std::move(p.value);
  t.weights = std::move(p.weights);
  t.pooled = mean_rows(matmul(t.weights, t.value));
  return t;
}

void set_attention_backward(const SetAttentionTrace& t, std::span<const Scalar> d_pooled, SetAttentionParams& params,
                            Tensor& d_semantic) {
  const std::size_t k = t.rows.rows();
  const std::size_t d = t.rows.cols();
  Tensor d_out(k, d);
  const Scalar inv_k = 1.0 / static_cast<Scalar>(k);
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t j = 0; j < d; ++j) d_out(i, j) = d_pooled[j] * inv_k;
  }
  const Tensor d_weights = matmul_nt(d_out, t.value);
  const Tensor d_value = matmul_tn(t.weights, d_out);
  Tensor d_logits = softmax_rows_backward(t.weights, d_weights);
  d_logits *= 1.0 / std::sqrt(static_cast<Scalar>(d));
  const Tensor d_query = matmul(d_logits, t.key);
  const Tensor d_key = matmul_tn(d_logits, t.query);
  add_matmul_tn(params.query.grad, t.rows, d_query);
  add_matmul_tn(params.key.grad, t.rows, d_key);
  add_matmul_tn(params.value.grad, t.rows, d_value);
  Tensor d_rows = matmul_nt(d_query, params.query.value);
  d_rows += matmul_nt(d_key, params.key.value);
  d_rows += matmul_nt(d_value, params.value.value);
  for (std::size_t i = 0; i < k; ++i) {
    auto dst = d_semantic.row(t.items[i]);
    auto src = d_rows.row(i);
    for (std::size_t j = 0; j < d; ++j) dst[j] += src[j];
  }
}

void validate_permutation(std::span<const std::uint32_t> permutation, std::size_t n, std::size_t m) {
  if (permutation.size() != m) {
    throw InputError("permutation has " + std::to_string(permutation.size()) + " items, expected " + std::to_string(m));
  }
  std::vector<bool> seen(n, false);
  for (auto item : permutation) {
    if (item >= n) throw InputError("permutation item " + std::to_string(item) + " >= n=" + std::to_string(n));
    if (seen[item]) throw InputError("duplicate item " + std::to_string(item) + " in permutation");
    seen[item] = true;
  }
}

ContextStack context_stack_for_list(std::span<const std::uint32_t> permutation, const Tensor& semantic,
                                    const ModelParams& params) {
  const auto& cfg = params.config;
  validate_permutation(permutation, semantic.rows(), cfg.list_len);
  const TreeLayout layout = context_layout(cfg);
  ContextStack stack{layout.level_count(), cfg.dim, Tensor(cfg.list_len, layout.level_count() * cfg.dim)};
  for (std::size_t level = 0; level < layout.level_count(); ++level) {
    for (const Block& block : layout.level(level)) {
      const Tensor e =
          set_attention(semantic, permutation.subspan(block.begin, block.size()), params.set_attention_for_level(level));
      for (std::size_t pos = block.begin; pos < block.end; ++pos) {
        std::copy_n(e.row(0).begin(), cfg.dim, stack.values.row(pos).begin() + level * cfg.dim);
      }
    }
  }
  return stack;
}

Scalar head_logit(std::size_t position, std::span<const Scalar> semantic_row, std::span<const Scalar> context_row,
                  const ModelParams& params) {
  const std::size_t d = params.config.dim;
  if (position >= params.position.value.rows()) throw InputError("position out of range");
  if (semantic_row.size() != d || 2 * d + context_row.size() != params.head_w.value.rows()) {
    throw DimensionError("head input has " + std::to_string(d + semantic_row.size() + context_row.size()) +
                         " features, head expects " + std::to_string(params.head_w.value.rows()));
  }
  const Scalar* w = params.head_w.value.data();
  Scalar acc = 0;
  auto pos = params.position.value.row(position);
  for (std::size_t j = 0; j < d; ++j) acc += w[j] * pos[j];
  w += d;
  for (std::size_t j = 0; j < d; ++j) acc += w[j] * semantic_row[j];
  w += d;
  for (std::size_t j = 0; j < context_row.size(); ++j) acc += w[j] * context_row[j];
  return acc + params.head_b.value(0, 0);
}

Scalar predict_item_pctr(std::size_t position, std::span<const Scalar> semantic_row,
                         std::span<const Scalar> context_row, const ModelParams& params) {
  return sigmoid(head_logit(position, semantic_row, context_row, params));
}

Scalar weighted_total(std::span<const Scalar> pctr, std::span<const Scalar> weights) {
  if (!weights.empty() && weights.size() != pctr.size()) {
    throw DimensionError("weight vector has " + std::to_string(weights.size()) + " entries, list has " +
                         std::to_string(pctr.size()));
  }
  Scalar total = 0;
  for (std::size_t t = 0; t < pctr.size(); ++t) total += (weights.empty() ? 1.0 : weights[t]) * pctr[t];
  return total;
}

ListScore score_list(std::span<const std::uint32_t> permutation, const Tensor& semantic, const ModelParams& params,
                     std::span<const Scalar> weights) {
  const ContextStack stack = context_stack_for_list(permutation, semantic, params);
  ListScore score;
  score.per_item.resize(permutation.size());
  for (std::size_t t = 0; t < permutation.size(); ++t) {
    score.per_item[t] = predict_item_pctr(t, semantic.row(permutation[t]), stack.at(t), params);
  }
  counters().add_head_evals(permutation.size());
  score.total = weighted_total(score.per_item, weights);
  return score;
}

}  // namespace treerank
