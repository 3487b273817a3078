#pragma once

// Tree-based context extraction. A list of length m is halved recursively
// into blocks of size m, m/2, ..., 2. Each block is summarized by an
// order-free set attention, and each position's pCTR is read off its own
// semantic row, its position embedding and the embeddings of the blocks
// that contain it.
//
// Positions are 0-based in code; level 0 is the whole list.

#include <cstdint>
#include <span>
#include <vector>

#include "treerank/model.hpp"
#include "treerank/tensor.hpp"

namespace treerank {

struct Block {
  std::size_t level = 0;
  std::size_t begin = 0;  // inclusive
  std::size_t end = 0;    // exclusive

  std::size_t size() const { return end - begin; }
  bool contains(std::size_t pos) const { return pos >= begin && pos < end; }
  friend bool operator==(const Block&, const Block&) = default;
};

class TreeLayout {
 public:
  TreeLayout(std::size_t list_len, std::vector<std::vector<Block>> levels)
      : list_len_(list_len), levels_(std::move(levels)) {}

  std::size_t list_len() const { return list_len_; }
  std::size_t level_count() const { return levels_.size(); }
  std::size_t block_count() const;
  const std::vector<Block>& level(std::size_t k) const { return levels_.at(k); }
  const Block& block_containing(std::size_t level, std::size_t position) const;

 private:
  std::size_t list_len_;
  std::vector<std::vector<Block>> levels_;
};

bool is_power_of_two(std::size_t v);

// Full halving tree; throws ConfigError unless m is a power of two >= 2.
TreeLayout tree_blocks(std::size_t m);

// Layout the model actually uses: the full tree, or only the whole-list block
// under the no_tcem ablation.
TreeLayout context_layout(const ModelConfig& cfg);

// Tree level whose blocks have `block_size` items.
std::size_t level_for_block_size(std::size_t m, std::size_t block_size);

// Self-attention over the rows in the order given, mean-pooled to 1 × D.
Tensor set_attention_rows(const Tensor& rows, const SetAttentionParams& params);

// Set attention over semantic rows `items`; the items are sorted ascending
// first so any input order gives a bit-identical result.
Tensor set_attention(const Tensor& semantic, std::span<const std::uint32_t> items, const SetAttentionParams& params);

struct SetAttentionTrace {
  std::vector<std::uint32_t> items;  // sorted
  Tensor rows;
  Tensor query;
  Tensor key;
  Tensor value;
  Tensor weights;
  Tensor pooled;  // 1 × D
};

SetAttentionTrace set_attention_forward(const Tensor& semantic, std::span<const std::uint32_t> items,
                                        const SetAttentionParams& params);
// Accumulates into the projection grads and into rows of d_semantic.
void set_attention_backward(const SetAttentionTrace& trace, std::span<const Scalar> d_pooled,
                            SetAttentionParams& params, Tensor& d_semantic);

// Per-position concatenation of the L level embeddings: m × (L·D).
struct ContextStack {
  std::size_t levels = 0;
  std::size_t dim = 0;
  Tensor values;

  std::span<const Scalar> at(std::size_t position) const { return values.row(position); }
  std::span<const Scalar> at(std::size_t position, std::size_t level) const {
    return values.row(position).subspan(level * dim, dim);
  }
};

// Throws InputError when the permutation repeats an item or indexes past n.
void validate_permutation(std::span<const std::uint32_t> permutation, std::size_t n, std::size_t m);

ContextStack context_stack_for_list(std::span<const std::uint32_t> permutation, const Tensor& semantic,
                                    const ModelParams& params);

// FC head logit over [E_p(position) | semantic_row | context_row].
Scalar head_logit(std::size_t position, std::span<const Scalar> semantic_row, std::span<const Scalar> context_row,
                  const ModelParams& params);

Scalar predict_item_pctr(std::size_t position, std::span<const Scalar> semantic_row,
                         std::span<const Scalar> context_row, const ModelParams& params);

struct ListScore {
  std::vector<Scalar> per_item;
  Scalar total = 0;
};

// Σ_t w_t · pCTR_t; empty weights means all ones.
Scalar weighted_total(std::span<const Scalar> pctr, std::span<const Scalar> weights);

ListScore score_list(std::span<const std::uint32_t> permutation, const Tensor& semantic, const ModelParams& params,
                     std::span<const Scalar> weights = {});

}  // namespace treerank
