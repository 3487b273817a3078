#include "treerank/irm.hpp"

#include <algorithm>
#include <cmath>

#include "treerank/errors.hpp"
#include "treerank/telemetry.hpp"

namespace treerank {

namespace {

std::vector<std::size_t> rows_for(const std::vector<std::uint32_t>& ids, std::size_t vocab, bool oov) {
  std::vector<std::size_t> rows;
  rows.reserve(ids.size());
  for (auto id : ids) rows.push_back(embedding_row(id, vocab, oov));
  return rows;
}

Tensor gather_rows(const Tensor& table, const std::vector<std::size_t>& rows) {
  Tensor out(rows.size(), table.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    std::copy_n(table.row(rows[i]).begin(), table.cols(), out.row(i).begin());
  }
  return out;
}

Tensor mean_of_rows(const Tensor& table, const std::vector<std::size_t>& rows) {
  Tensor out(1, table.cols());
  if (rows.empty()) return out;
  for (auto r : rows) {
    auto src = table.row(r);
    for (std::size_t j = 0; j < src.size(); ++j) out(0, j) += src[j];
  }
  out *= 1.0 / static_cast<Scalar>(rows.size());
  return out;
}

void scatter_add(Tensor& grad, const std::vector<std::size_t>& rows, const Tensor& d) {
  for (std::size_t i = 0; i < rows.size(); ++i) {
    auto dst = grad.row(rows[i]);
    auto src = d.row(i);
    for (std::size_t j = 0; j < src.size(); ++j) dst[j] += src[j];
  }
}

void scatter_mean(Tensor& grad, const std::vector<std::size_t>& rows, std::span<const Scalar> d) {
  if (rows.empty()) return;
  const Scalar w = 1.0 / static_cast<Scalar>(rows.size());
  for (auto r : rows) {
    auto dst = grad.row(r);
    for (std::size_t j = 0; j < d.size(); ++j) dst[j] += w * d[j];
  }
}

void check_request(const RawRequest& request, const ModelConfig& cfg) {
  if (cfg.dense_dim > 0) {
    if (request.candidate_dense.rows() != request.num_candidates() || request.candidate_dense.cols() != cfg.dense_dim) {
      throw DimensionError("candidate_dense must be " + std::to_string(request.num_candidates()) + "x" +
                           std::to_string(cfg.dense_dim) + ", got " + request.candidate_dense.shape_str());
    }
  } else if (!request.candidate_dense.empty()) {
    throw DimensionError("model has no dense features but request carries " + request.candidate_dense.shape_str());
  }
}

}  // namespace

std::size_t embedding_row(std::uint32_t id, std::size_t vocab, bool oov_enabled) {
  if (id < vocab) return id;
  if (!oov_enabled) {
    throw InputError("id " + std::to_string(id) + " outside vocabulary of size " + std::to_string(vocab));
  }
  return vocab;
}

RequestEmbeddings embed_lookup(const RawRequest& request, const ModelParams& params) {
  const auto& cfg = params.config;
  RequestEmbeddings e;
  e.user = mean_of_rows(params.user_emb.value, rows_for(request.user_profile_ids, cfg.user_vocab, cfg.oov_enabled));
  e.context =
      mean_of_rows(params.context_emb.value, rows_for(request.context_ids, cfg.context_vocab, cfg.oov_enabled));
  e.behaviors =
      gather_rows(params.item_emb.value, rows_for(request.behavior_item_ids, cfg.item_vocab, cfg.oov_enabled));
  e.items = gather_rows(params.item_emb.value, rows_for(request.candidate_item_ids, cfg.item_vocab, cfg.oov_enabled));
  return e;
}

Tensor target_attention(std::span<const Scalar> item, const Tensor& behaviors, const ModelParams& params) {
  const std::size_t d = params.config.dim;
  if (item.size() != d || (behaviors.rows() > 0 && behaviors.cols() != d)) {
    throw DimensionError("target_attention expects D=" + std::to_string(d) + " inputs");
  }
  if (behaviors.rows() == 0) return Tensor(1, d);
  const Tensor q = matmul(Tensor::row_vector(item), params.ta_query.value);
  const Tensor k = matmul(behaviors, params.ta_key.value);
  const Tensor v = matmul(behaviors, params.ta_value.value);
  Tensor logits = matmul_nt(q, k);
  logits *= 1.0 / std::sqrt(static_cast<Scalar>(d));
  return matmul(matmul(softmax_rows(logits), v), params.ta_out.value);
}

IrmForward irm_forward(std::span<const RawRequest* const> requests, const ModelParams& params) {
  const auto& cfg = params.config;
  const std::size_t d = cfg.dim;
  const Scalar scale = 1.0 / std::sqrt(static_cast<Scalar>(d));

  IrmForward fwd;
  fwd.requests.resize(requests.size());
  std::size_t total = 0;
  for (std::size_t r = 0; r < requests.size(); ++r) {
    check_request(*requests[r], cfg);
    fwd.requests[r].row_offset = total;
    total += requests[r]->num_candidates();
  }

  const std::size_t in_dim = cfg.mlp_input_dim();
  Tensor input = cfg.no_irm ? Tensor() : Tensor(total, in_dim);
  if (cfg.no_irm) fwd.semantic = Tensor(total, d);

  for (std::size_t r = 0; r < requests.size(); ++r) {
    const RawRequest& req = *requests[r];
    auto& pr = fwd.requests[r];
    pr.item_rows = rows_for(req.candidate_item_ids, cfg.item_vocab, cfg.oov_enabled);
    pr.items = gather_rows(params.item_emb.value, pr.item_rows);
    if (cfg.no_irm) {
      for (std::size_t i = 0; i < pr.items.rows(); ++i) {
        std::copy_n(pr.items.row(i).begin(), d, fwd.semantic.row(pr.row_offset + i).begin());
      }
      continue;
    }
    pr.user_rows = rows_for(req.user_profile_ids, cfg.user_vocab, cfg.oov_enabled);
    pr.context_rows = rows_for(req.context_ids, cfg.context_vocab, cfg.oov_enabled);
    pr.behavior_rows = rows_for(req.behavior_item_ids, cfg.item_vocab, cfg.oov_enabled);
    pr.behaviors = gather_rows(params.item_emb.value, pr.behavior_rows);
    const Tensor user = mean_of_rows(params.user_emb.value, pr.user_rows);
    const Tensor context = mean_of_rows(params.context_emb.value, pr.context_rows);

    Tensor out(pr.items.rows(), d);
    if (!pr.behavior_rows.empty()) {
      pr.query = matmul(pr.items, params.ta_query.value);
      pr.key = matmul(pr.behaviors, params.ta_key.value);
      pr.value = matmul(pr.behaviors, params.ta_value.value);
      Tensor logits = matmul_nt(pr.query, pr.key);
      logits *= scale;
      pr.weights = softmax_rows(logits);
      pr.attended = matmul(pr.weights, pr.value);
      out = matmul(pr.attended, params.ta_out.value);
    }

    for (std::size_t i = 0; i < pr.items.rows(); ++i) {
      auto dst = input.row(pr.row_offset + i);
      auto it = std::copy_n(out.row(i).begin(), d, dst.begin());
      if (cfg.concat_item) it = std::copy_n(pr.items.row(i).begin(), d, it);
      it = std::copy_n(user.row(0).begin(), d, it);
      it = std::copy_n(context.row(0).begin(), d, it);
      if (cfg.dense_dim > 0) std::copy_n(req.candidate_dense.row(i).begin(), cfg.dense_dim, it);
    }
  }
  if (cfg.no_irm) return fwd;

  fwd.activations.push_back(std::move(input));
  for (std::size_t l = 0; l < params.mlp_w.size(); ++l) {
    Tensor z = affine(fwd.activations.back(), params.mlp_w[l], params.mlp_b[l]);
    const bool hidden = l + 1 < params.mlp_w.size();
    fwd.activations.push_back(hidden ? relu(z) : std::move(z));
  }
  counters().add_feature_cross(total);
  fwd.semantic = fwd.activations.back();
  return fwd;
}

void irm_backward(const IrmForward& fwd, const Tensor& d_semantic, ModelParams& params) {
  const auto& cfg = params.config;
  const std::size_t d = cfg.dim;
  if (!d_semantic.same_shape(fwd.semantic)) {
    throw DimensionError("irm_backward: gradient " + d_semantic.shape_str() + " vs semantic " + fwd.semantic.shape_str());
  }
  if (cfg.no_irm) {
    for (const auto& pr : fwd.requests) {
      for (std::size_t i = 0; i < pr.item_rows.size(); ++i) {
        auto dst = params.item_emb.grad.row(pr.item_rows[i]);
        auto src = d_semantic.row(pr.row_offset + i);
        for (std::size_t j = 0; j < d; ++j) dst[j] += src[j];
      }
    }
    return;
  }

  Tensor grad = d_semantic;
  for (std::size_t l = params.mlp_w.size(); l-- > 0;) {
    const bool hidden = l + 1 < params.mlp_w.size();
    if (hidden) grad = relu_backward(fwd.activations[l + 1], grad);
    grad = affine_backward(fwd.activations[l], params.mlp_w[l], params.mlp_b[l], grad);
  }
  // grad is now d(MLP input): [x' | X | e_u | e_c | dense]
  const Scalar scale = 1.0 / std::sqrt(static_cast<Scalar>(d));
  for (const auto& pr : fwd.requests) {
    const std::size_t n = pr.item_rows.size();
    Tensor d_out(n, d);
    Tensor d_items(n, d);
    Tensor d_user(1, d);
    Tensor d_context(1, d);
    for (std::size_t i = 0; i < n; ++i) {
      auto src = grad.row(pr.row_offset + i);
      std::size_t off = 0;
      for (std::size_t j = 0; j < d; ++j) d_out(i, j) = src[off + j];
      off += d;
      if (cfg.concat_item) {
        for (std::size_t j = 0; j < d; ++j) d_items(i, j) = src[off + j];
        off += d;
      }
      for (std::size_t j = 0; j < d; ++j) d_user(0, j) += src[off + j];
      off += d;
      for (std::size_t j = 0; j < d; ++j) d_context(0, j) += src[off + j];
    }
    scatter_mean(params.user_emb.grad, pr.user_rows, d_user.row(0));
    scatter_mean(params.context_emb.grad, pr.context_rows, d_context.row(0));

    if (!pr.behavior_rows.empty()) {
      add_matmul_tn(params.ta_out.grad, pr.attended, d_out);
      const Tensor d_attended = matmul_nt(d_out, params.ta_out.value);
      const Tensor d_weights = matmul_nt(d_attended, pr.value);
      const Tensor d_value = matmul_tn(pr.weights, d_attended);
      Tensor d_logits = softmax_rows_backward(pr.weights, d_weights);
      d_logits *= scale;
      const Tensor d_query = matmul(d_logits, pr.key);
      const Tensor d_key = matmul_tn(d_logits, pr.query);
      add_matmul_tn(params.ta_query.grad, pr.items, d_query);
      add_matmul_tn(params.ta_key.grad, pr.behaviors, d_key);
      add_matmul_tn(params.ta_value.grad, pr.behaviors, d_value);
      d_items += matmul_nt(d_query, params.ta_query.value);
      Tensor d_behaviors = matmul_nt(d_key, params.ta_key.value);
      d_behaviors += matmul_nt(d_value, params.ta_value.value);
      scatter_add(params.item_emb.grad, pr.behavior_rows, d_behaviors);
    }
    scatter_add(params.item_emb.grad, pr.item_rows, d_items);
  }
}

Tensor semantic_encode(const RawRequest& request, const ModelParams& params) {
  const RawRequest* one[] = {&request};
  return irm_forward(one, params).semantic;
}

}  // namespace treerank
