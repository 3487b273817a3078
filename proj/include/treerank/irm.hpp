#pragma once

// Item-level representation: raw request features -> n × D semantic matrix.
// Every candidate row is computed independently of the other candidates.

#include <cstdint>
#include <span>
#include <vector>

#include "treerank/model.hpp"
#include "treerank/tensor.hpp"

namespace treerank {

struct RawRequest {
  std::vector<std::uint32_t> user_profile_ids;
  std::vector<std::uint32_t> context_ids;
  std::vector<std::uint32_t> behavior_item_ids;  // most recent first
  std::vector<std::uint32_t> candidate_item_ids;
  Tensor candidate_dense;  // n × dense_dim, or empty when dense_dim == 0

  std::size_t num_candidates() const { return candidate_item_ids.size(); }
};

struct RequestEmbeddings {
  Tensor user;       // 1 × D, mean over profile ids
  Tensor context;    // 1 × D, mean over context ids
  Tensor behaviors;  // N_b × D
  Tensor items;      // n × D
};

// Row of `id` in a table with `vocab` regular rows plus one OOV row.
std::size_t embedding_row(std::uint32_t id, std::size_t vocab, bool oov_enabled);

RequestEmbeddings embed_lookup(const RawRequest& request, const ModelParams& params);

// Scaled dot-product attention of one candidate over the behavior rows;
// returns 1 × D, or zeros when there are no behaviors.
Tensor target_attention(std::span<const Scalar> item, const Tensor& behaviors, const ModelParams& params);

Tensor semantic_encode(const RawRequest& request, const ModelParams& params);

// Batched forward pass that keeps what the backward pass needs.
struct IrmForward {
  struct PerRequest {
    std::vector<std::size_t> user_rows;
    std::vector<std::size_t> context_rows;
    std::vector<std::size_t> behavior_rows;
    std::vector<std::size_t> item_rows;
    Tensor items;      // X, n × D
    Tensor behaviors;  // E_b
    Tensor query;      // X·Wq
    Tensor key;        // E_b·Wk
    Tensor value;      // E_b·Wv
    Tensor weights;    // softmax(Q Kᵀ / √D)
    Tensor attended;   // weights·V
    std::size_t row_offset = 0;
  };
  std::vector<PerRequest> requests;
  std::vector<Tensor> activations;  // activations[0] = MLP input, back() = semantic rows
  Tensor semantic;                  // all candidates stacked, Σn × D
};

IrmForward irm_forward(std::span<const RawRequest* const> requests, const ModelParams& params);

// Backpropagates d(semantic) into every IRM parameter's grad.
void irm_backward(const IrmForward& fwd, const Tensor& d_semantic, ModelParams& params);

}  // namespace treerank
