#include "treerank/model.hpp"

#include <unordered_map>

#include "treerank/checkpoint.hpp"
#include "treerank/errors.hpp"

namespace treerank {

const SetAttentionParams& ModelParams::set_attention_for_level(std::size_t level) const {
  return set_attention.size() == 1 ? set_attention.front() : set_attention.at(level);
}

SetAttentionParams& ModelParams::set_attention_for_level(std::size_t level) {
  return set_attention.size() == 1 ? set_attention.front() : set_attention.at(level);
}

std::vector<Param*> ModelParams::parameters() {
  std::vector<Param*> out{&user_emb, &context_emb, &item_emb, &ta_query, &ta_key, &ta_value, &ta_out};
  for (std::size_t i = 0; i < mlp_w.size(); ++i) {
    out.push_back(&mlp_w[i]);
    out.push_back(&mlp_b[i]);
  }
  for (auto& sa : set_attention) {
    out.push_back(&sa.query);
    out.push_back(&sa.key);
    out.push_back(&sa.value);
  }
  out.push_back(&position);
  out.push_back(&head_w);
  out.push_back(&head_b);
  return out;
}

std::vector<const Param*> ModelParams::parameters() const {
  auto mut = const_cast<ModelParams*>(this)->parameters();
  return {mut.begin(), mut.end()};
}

void ModelParams::zero_grad() {
  for (Param* p : parameters()) p->zero_grad();
}

ModelParams init_model(const ModelConfig& cfg, std::uint64_t seed) {
  const std::size_t d = cfg.dim;
  ModelParams mp;
  mp.config = cfg;
  mp.user_emb = Param("emb.user", cfg.user_vocab + 1, d);
  mp.context_emb = Param("emb.context", cfg.context_vocab + 1, d);
  mp.item_emb = Param("emb.item", cfg.item_vocab + 1, d);
  mp.ta_query = Param("target_attention.query", d, d);
  mp.ta_key = Param("target_attention.key", d, d);
  mp.ta_value = Param("target_attention.value", d, d);
  mp.ta_out = Param("target_attention.out", d, d);

  std::size_t in = cfg.mlp_input_dim();
  std::vector<std::size_t> widths = cfg.hidden;
  widths.push_back(d);
  for (std::size_t i = 0; i < widths.size(); ++i) {
    mp.mlp_w.emplace_back("mlp." + std::to_string(i) + ".weight", in, widths[i]);
    mp.mlp_b.emplace_back("mlp." + std::to_string(i) + ".bias", 1, widths[i]);
    in = widths[i];
  }

  const std::size_t sa_sets = cfg.per_level_set_attention ? cfg.context_levels() : 1;
  for (std::size_t l = 0; l < sa_sets; ++l) {
    const std::string prefix = "set_attention." + std::to_string(l) + ".";
    mp.set_attention.push_back({Param(prefix + "query", d, d), Param(prefix + "key", d, d), Param(prefix + "value", d, d)});
  }

  mp.position = Param("position", cfg.list_len, d);
  mp.head_w = Param("head.weight", cfg.head_input_dim(), 1);
  mp.head_b = Param("head.bias", 1, 1);

  std::mt19937_64 rng(seed);
  for (Param* p : mp.parameters()) {
    // Biases start at zero; everything else draws from N(0, init_std).
    if (p->value.rows() == 1 && p->name.ends_with("bias")) continue;
    p->init_normal(rng, cfg.init_std);
  }
  return mp;
}

void save_model(const ModelParams& params, const std::filesystem::path& path) {
  std::vector<NamedTensor> tensors;
  for (const Param* p : params.parameters()) tensors.push_back({p->name, p->value});
  save_tensors(path, tensors);
}

ModelParams load_model(const ModelConfig& cfg, const std::filesystem::path& path) {
  ModelParams mp = init_model(cfg, 0);
  std::unordered_map<std::string, Tensor> loaded;
  for (auto& nt : load_tensors(path)) loaded.emplace(nt.name, std::move(nt.tensor));
  for (Param* p : mp.parameters()) {
    auto it = loaded.find(p->name);
    if (it == loaded.end()) throw FormatError("checkpoint is missing tensor '" + p->name + "'");
    if (!it->second.same_shape(p->value)) {
      throw DimensionError("checkpoint tensor '" + p->name + "' has shape " + it->second.shape_str() + ", model expects " +
                           p->value.shape_str());
    }
    p->value = std::move(it->second);
    loaded.erase(it);
  }
  if (!loaded.empty()) throw FormatError("checkpoint has unexpected tensor '" + loaded.begin()->first + "'");
  return mp;
}

}  // namespace treerank
