#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "treerank/config.hpp"
#include "treerank/irm.hpp"
#include "treerank/model.hpp"
#include "treerank/tcem.hpp"

namespace treerank {

// One exposed list: the request restricted to the m displayed items (in
// display order) and their click labels.
struct ListSample {
  std::uint64_t id = 0;
  RawRequest request;
  std::vector<std::uint8_t> labels;
};

struct LossReport {
  Scalar ce = 0;
  Scalar gbpr = 0;
  Scalar total = 0;
  std::size_t pair_count = 0;
};

// Mean binary cross-entropy with predictions clamped to [1e-7, 1 - 1e-7].
Scalar ce_loss(std::span<const Scalar> preds, std::span<const std::uint8_t> labels);
// Adds scale * d(ce)/d(pred) into grad.
void ce_loss_grad(std::span<const Scalar> preds, std::span<const std::uint8_t> labels, Scalar scale,
                  std::span<Scalar> grad);

struct GbprLoss {
  Scalar loss = 0;
  std::size_t pair_count = 0;
};

// Mean of -log σ(ŷ_pos - ŷ_neg) over label-discordant pairs; 0 when none.
GbprLoss gbpr_loss(std::span<const Scalar> preds, std::span<const std::uint8_t> labels);
void gbpr_loss_grad(std::span<const Scalar> preds, std::span<const std::uint8_t> labels, Scalar scale,
                    std::span<Scalar> grad);

LossReport combine_losses(Scalar ce, const GbprLoss& gbpr, Scalar alpha);

// Inverted dropout over whole level sub-vectors: m × levels multipliers, each
// 0 with probability `rate` and 1/(1-rate) otherwise.
std::vector<Scalar> dropout_mask(std::size_t positions, std::size_t levels, Scalar rate, std::mt19937_64& rng);
ContextStack context_dropout(const ContextStack& stack, Scalar rate, std::mt19937_64& rng, bool training = true);

// Validates ablation flags and returns the effective training config
// (no_gbpr forces alpha = 0).
Config ablation_variant(const Config& cfg);

// Mean loss over the batch; with `with_grad` the gradients of that mean are
// accumulated into params. A null `dropout_rng` disables context dropout.
LossReport batch_loss(ModelParams& params, std::span<const ListSample* const> batch, Scalar alpha,
                      Scalar dropout_rate, std::mt19937_64* dropout_rng, bool with_grad);

// Inference-mode per-item pCTR of each list in its exposed order.
std::vector<std::vector<Scalar>> predict_lists(std::span<const ListSample> samples, const ModelParams& params,
                                               std::size_t batch_size = 1024);

struct EpochReport {
  std::size_t epoch = 0;
  LossReport loss;
  std::size_t lists = 0;
};

struct TrainResult {
  ModelParams params;
  std::vector<EpochReport> epochs;
  std::size_t skipped = 0;
};

TrainResult train(std::span<const ListSample> dataset, const Config& cfg);
TrainResult train(std::span<const ListSample> dataset, const Config& cfg, ModelParams initial);

}  // namespace treerank
