#include "treerank/training.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <numeric>

#include "treerank/errors.hpp"
#include "treerank/telemetry.hpp"

namespace treerank {

namespace {

constexpr Scalar kClampLo = 1e-7;
constexpr Scalar kClampHi = 1.0 - 1e-7;

// -log σ(x), stable for large |x|.
Scalar neg_log_sigmoid(Scalar x) { return std::log1p(std::exp(-std::abs(x))) + std::max<Scalar>(-x, 0); }

void check_labels(std::span<const Scalar> preds, std::span<const std::uint8_t> labels) {
  if (preds.size() != labels.size()) {
    throw DimensionError("got " + std::to_string(preds.size()) + " predictions for " + std::to_string(labels.size()) +
                         " labels");
  }
}

struct ListTrace {
  std::vector<SetAttentionTrace> blocks;  // level-major
  std::vector<std::size_t> block_level;
  std::vector<Block> block_span;
  std::vector<Scalar> mask;  // m × levels
};

struct BatchForward {
  IrmForward irm;
  std::vector<ListTrace> lists;
  Tensor head_input;  // Σm × head_dim
  std::vector<Scalar> preds;
};

BatchForward forward_batch(const ModelParams& params, std::span<const ListSample* const> batch, Scalar dropout_rate,
                           std::mt19937_64* dropout_rng) {
  const auto& cfg = params.config;
  const std::size_t m = cfg.list_len;
  const std::size_t d = cfg.dim;
  const TreeLayout layout = context_layout(cfg);
  const std::size_t levels = layout.level_count();

  std::vector<const RawRequest*> requests;
  requests.reserve(batch.size());
  for (const ListSample* s : batch) requests.push_back(&s->request);

  BatchForward fwd;
  fwd.irm = irm_forward(requests, params);
  const Tensor& semantic = fwd.irm.semantic;
  fwd.lists.resize(batch.size());
  fwd.head_input = Tensor(batch.size() * m, cfg.head_input_dim());
  fwd.preds.resize(batch.size() * m);

  std::vector<std::uint32_t> block_rows;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    ListTrace& lt = fwd.lists[b];
    const std::size_t base = b * m;
    lt.mask = dropout_rng ? dropout_mask(m, levels, dropout_rate, *dropout_rng) : std::vector<Scalar>(m * levels, 1.0);
    for (std::size_t level = 0; level < levels; ++level) {
      for (const Block& blk : layout.level(level)) {
        block_rows.clear();
        for (std::size_t t = blk.begin; t < blk.end; ++t) block_rows.push_back(static_cast<std::uint32_t>(base + t));
        lt.blocks.push_back(set_attention_forward(semantic, block_rows, params.set_attention_for_level(level)));
        lt.block_level.push_back(level);
        lt.block_span.push_back(blk);
        const Tensor& pooled = lt.blocks.back().pooled;
        for (std::size_t t = blk.begin; t < blk.end; ++t) {
          auto row = fwd.head_input.row(base + t);
          const Scalar keep = lt.mask[t * levels + level];
          for (std::size_t j = 0; j < d; ++j) row[2 * d + level * d + j] = keep * pooled(0, j);
        }
      }
    }
    for (std::size_t t = 0; t < m; ++t) {
      auto row = fwd.head_input.row(base + t);
      std::copy_n(params.position.value.row(t).begin(), d, row.begin());
      std::copy_n(semantic.row(base + t).begin(), d, row.begin() + d);
      fwd.preds[base + t] =
          predict_item_pctr(t, row.subspan(d, d), row.subspan(2 * d), params);
    }
  }
  counters().add_head_evals(batch.size() * m);
  return fwd;
}

void backward_batch(const BatchForward& fwd, std::span<const Scalar> d_preds, ModelParams& params) {
  const auto& cfg = params.config;
  const std::size_t m = cfg.list_len;
  const std::size_t d = cfg.dim;
  const std::size_t levels = cfg.context_levels();
  const std::size_t head_dim = cfg.head_input_dim();
  Tensor d_semantic(fwd.irm.semantic.rows(), d);
  std::vector<Scalar> d_head_in(head_dim);

  for (std::size_t b = 0; b < fwd.lists.size(); ++b) {
    const ListTrace& lt = fwd.lists[b];
    const std::size_t base = b * m;
    // d(context) per position and level, before the dropout multiplier.
    Tensor d_context(m, levels * d);
    for (std::size_t t = 0; t < m; ++t) {
      const Scalar p = fwd.preds[base + t];
      const Scalar d_logit = d_preds[base + t] * p * (1.0 - p);
      auto in = fwd.head_input.row(base + t);
      for (std::size_t j = 0; j < head_dim; ++j) params.head_w.grad(j, 0) += d_logit * in[j];
      params.head_b.grad(0, 0) += d_logit;
      for (std::size_t j = 0; j < head_dim; ++j) d_head_in[j] = d_logit * params.head_w.value(j, 0);
      auto dpos = params.position.grad.row(t);
      auto dsem = d_semantic.row(base + t);
      for (std::size_t j = 0; j < d; ++j) {
        dpos[j] += d_head_in[j];
        dsem[j] += d_head_in[d + j];
      }
      for (std::size_t level = 0; level < levels; ++level) {
        const Scalar keep = lt.mask[t * levels + level];
        for (std::size_t j = 0; j < d; ++j) d_context(t, level * d + j) = keep * d_head_in[2 * d + level * d + j];
      }
    }
    std::vector<Scalar> d_pooled(d);
    for (std::size_t i = 0; i < lt.blocks.size(); ++i) {
      const std::size_t level = lt.block_level[i];
      const Block& blk = lt.block_span[i];
      std::fill(d_pooled.begin(), d_pooled.end(), 0.0);
      for (std::size_t t = blk.begin; t < blk.end; ++t) {
        for (std::size_t j = 0; j < d; ++j) d_pooled[j] += d_context(t, level * d + j);
      }
      set_attention_backward(lt.blocks[i], d_pooled, params.set_attention_for_level(level), d_semantic);
    }
  }
  irm_backward(fwd.irm, d_semantic, params);
}

}  // namespace

Scalar ce_loss(std::span<const Scalar> preds, std::span<const std::uint8_t> labels) {
  check_labels(preds, labels);
  if (preds.empty()) return 0;
  Scalar sum = 0;
  for (std::size_t t = 0; t < preds.size(); ++t) {
    const Scalar p = std::clamp(preds[t], kClampLo, kClampHi);
    sum += labels[t] ? std::log(p) : std::log(1.0 - p);
  }
  return -sum / static_cast<Scalar>(preds.size());
}

void ce_loss_grad(std::span<const Scalar> preds, std::span<const std::uint8_t> labels, Scalar scale,
                  std::span<Scalar> grad) {
  check_labels(preds, labels);
  const Scalar inv_m = 1.0 / static_cast<Scalar>(preds.size());
  for (std::size_t t = 0; t < preds.size(); ++t) {
    const Scalar p = preds[t];
    if (p < kClampLo || p > kClampHi) continue;  // clamped: flat
    grad[t] += scale * inv_m * (labels[t] ? -1.0 / p : 1.0 / (1.0 - p));
  }
}

GbprLoss gbpr_loss(std::span<const Scalar> preds, std::span<const std::uint8_t> labels) {
  check_labels(preds, labels);
  GbprLoss out;
  Scalar sum = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (!labels[i]) continue;
    for (std::size_t j = 0; j < preds.size(); ++j) {
      if (labels[j]) continue;
      sum += neg_log_sigmoid(preds[i] - preds[j]);
      ++out.pair_count;
    }
  }
  out.loss = out.pair_count == 0 ? 0 : sum / static_cast<Scalar>(out.pair_count);
  return out;
}

void gbpr_loss_grad(std::span<const Scalar> preds, std::span<const std::uint8_t> labels, Scalar scale,
                    std::span<Scalar> grad) {
  check_labels(preds, labels);
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (!labels[i]) continue;
    for (std::size_t j = 0; j < preds.size(); ++j) pairs += labels[j] ? 0 : 1;
  }
  if (pairs == 0) return;
  const Scalar w = scale / static_cast<Scalar>(pairs);
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (!labels[i]) continue;
    for (std::size_t j = 0; j < preds.size(); ++j) {
      if (labels[j]) continue;
      // d/dx of -log σ(x) is σ(x) - 1.
      const Scalar g = w * (sigmoid(preds[i] - preds[j]) - 1.0);
      grad[i] += g;
      grad[j] -= g;
    }
  }
}

LossReport combine_losses(Scalar ce, const GbprLoss& gbpr, Scalar alpha) {
  return {ce, gbpr.loss, ce + alpha * gbpr.loss, gbpr.pair_count};
}

std::vector<Scalar> dropout_mask(std::size_t positions, std::size_t levels, Scalar rate, std::mt19937_64& rng) {
  if (rate < 0 || rate >= 1) throw InputError("dropout rate must lie in [0, 1)");
  std::vector<Scalar> mask(positions * levels, 1.0);
  if (rate == 0) return mask;
  std::bernoulli_distribution drop(rate);
  const Scalar keep = 1.0 / (1.0 - rate);
  for (auto& v : mask) v = drop(rng) ? 0.0 : keep;
  return mask;
}

ContextStack context_dropout(const ContextStack& stack, Scalar rate, std::mt19937_64& rng, bool training) {
  if (!training || rate == 0) return stack;
  const std::size_t positions = stack.values.rows();
  const auto mask = dropout_mask(positions, stack.levels, rate, rng);
  ContextStack out = stack;
  for (std::size_t t = 0; t < positions; ++t) {
    for (std::size_t l = 0; l < stack.levels; ++l) {
      auto row = out.values.row(t).subspan(l * stack.dim, stack.dim);
      for (auto& v : row) v *= mask[t * stack.levels + l];
    }
  }
  return out;
}

Config ablation_variant(const Config& cfg) {
  validate_config(cfg);
  Config out = cfg;
  if (out.train.no_gbpr) out.train.alpha = 0;
  return out;
}

LossReport batch_loss(ModelParams& params, std::span<const ListSample* const> batch, Scalar alpha,
                      Scalar dropout_rate, std::mt19937_64* dropout_rng, bool with_grad) {
  if (batch.empty()) return {};
  const std::size_t m = params.config.list_len;
  const BatchForward fwd = forward_batch(params, batch, dropout_rate, dropout_rng);
  LossReport report;
  std::vector<Scalar> d_preds(fwd.preds.size(), 0.0);
  const Scalar inv_b = 1.0 / static_cast<Scalar>(batch.size());
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const std::span<const Scalar> preds(fwd.preds.data() + b * m, m);
    const auto& labels = batch[b]->labels;
    const Scalar ce = ce_loss(preds, labels);
    const GbprLoss g = gbpr_loss(preds, labels);
    report.ce += ce * inv_b;
    report.gbpr += g.loss * inv_b;
    report.pair_count += g.pair_count;
    if (with_grad) {
      std::span<Scalar> grad(d_preds.data() + b * m, m);
      ce_loss_grad(preds, labels, inv_b, grad);
      if (alpha != 0) gbpr_loss_grad(preds, labels, alpha * inv_b, grad);
    }
  }
  report.total = report.ce + alpha * report.gbpr;
  if (!std::isfinite(report.total)) throw NumericError("non-finite training loss");
  if (with_grad) backward_batch(fwd, d_preds, params);
  return report;
}

std::vector<std::vector<Scalar>> predict_lists(std::span<const ListSample> samples, const ModelParams& params,
                                               std::size_t batch_size) {
  const std::size_t m = params.config.list_len;
  std::vector<std::vector<Scalar>> out;
  out.reserve(samples.size());
  std::vector<const ListSample*> batch;
  for (std::size_t start = 0; start < samples.size(); start += batch_size) {
    const std::size_t end = std::min(samples.size(), start + batch_size);
    batch.clear();
    for (std::size_t i = start; i < end; ++i) {
      if (samples[i].request.num_candidates() != m) {
        throw DimensionError("sample " + std::to_string(samples[i].id) + " has " +
                             std::to_string(samples[i].request.num_candidates()) + " items, model expects " +
                             std::to_string(m));
      }
      batch.push_back(&samples[i]);
    }
    const BatchForward fwd = forward_batch(params, batch, 0, nullptr);
    for (std::size_t b = 0; b < batch.size(); ++b) {
      out.emplace_back(fwd.preds.begin() + b * m, fwd.preds.begin() + (b + 1) * m);
    }
  }
  return out;
}

TrainResult train(std::span<const ListSample> dataset, const Config& cfg) {
  return train(dataset, cfg, init_model(cfg.model, cfg.seed));
}

TrainResult train(std::span<const ListSample> dataset, const Config& raw_cfg, ModelParams initial) {
  const Config cfg = ablation_variant(raw_cfg);
  TrainResult result{std::move(initial), {}, 0};
  ModelParams& params = result.params;
  const std::size_t m = params.config.list_len;

  std::vector<const ListSample*> usable;
  usable.reserve(dataset.size());
  for (const auto& s : dataset) {
    if (s.request.num_candidates() != m || s.labels.size() != m) {
      ++result.skipped;
      continue;
    }
    usable.push_back(&s);
  }
  if (result.skipped > 0) {
    std::cerr << "warning: skipped " << result.skipped << " samples whose list length differs from m=" << m << "\n";
  }

  std::mt19937_64 shuffle_rng(cfg.seed ^ 0x5eedULL);
  std::mt19937_64 dropout_rng(cfg.seed ^ 0xd70bULL);
  const AdamConfig adam{cfg.train.lr};
  auto param_list = params.parameters();
  params.zero_grad();

  for (std::size_t epoch = 1; epoch <= cfg.train.epochs; ++epoch) {
    std::shuffle(usable.begin(), usable.end(), shuffle_rng);
    EpochReport er;
    er.epoch = epoch;
    for (std::size_t start = 0; start < usable.size(); start += cfg.train.batch_size) {
      const std::size_t end = std::min(usable.size(), start + cfg.train.batch_size);
      const std::span<const ListSample* const> batch(usable.data() + start, end - start);
      const LossReport r = batch_loss(params, batch, cfg.train.alpha, cfg.train.dropout, &dropout_rng, true);
      adam_step(param_list, adam);
      const auto w = static_cast<Scalar>(batch.size());
      er.loss.ce += r.ce * w;
      er.loss.gbpr += r.gbpr * w;
      er.loss.pair_count += r.pair_count;
      er.lists += batch.size();
    }
    if (er.lists > 0) {
      er.loss.ce /= static_cast<Scalar>(er.lists);
      er.loss.gbpr /= static_cast<Scalar>(er.lists);
    }
    er.loss.total = er.loss.ce + cfg.train.alpha * er.loss.gbpr;
    result.epochs.push_back(er);
  }
  return result;
}

}  // namespace treerank
