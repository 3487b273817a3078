#pragma once

#include <filesystem>
#include <vector>

#include "treerank/config.hpp"
#include "treerank/tensor.hpp"

namespace treerank {

// Query/key/value projections of one set-attention layer.
struct SetAttentionParams {
  Param query;
  Param key;
  Param value;
};

struct ModelParams {
  ModelConfig config;

  // Embedding tables; the last row of each is the out-of-vocabulary row.
  Param user_emb;
  Param context_emb;
  Param item_emb;

  // Target attention between a candidate and the behavior sequence.
  Param ta_query;
  Param ta_key;
  Param ta_value;
  Param ta_out;

  // Feature-cross network: hidden ReLU layers then a linear projection to D.
  std::vector<Param> mlp_w;
  std::vector<Param> mlp_b;

  // One shared layer, or one per tree level when per_level_set_attention.
  std::vector<SetAttentionParams> set_attention;

  Param position;  // m × D
  Param head_w;    // head_input_dim × 1
  Param head_b;    // 1 × 1

  const SetAttentionParams& set_attention_for_level(std::size_t level) const;
  SetAttentionParams& set_attention_for_level(std::size_t level);

  std::vector<Param*> parameters();
  std::vector<const Param*> parameters() const;

  void zero_grad();
};

ModelParams init_model(const ModelConfig& cfg, std::uint64_t seed);

void save_model(const ModelParams& params, const std::filesystem::path& path);
// Loads tensors into a model built from `cfg`; names and shapes must match.
ModelParams load_model(const ModelConfig& cfg, const std::filesystem::path& path);

}  // namespace treerank
