#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "treerank/ccm.hpp"
#include "treerank/irm.hpp"
#include "treerank/model.hpp"
#include "treerank/tensor.hpp"

namespace treerank {

struct EvalRecord {
  std::uint64_t list_id = 0;
  std::vector<Scalar> scores;
  std::vector<std::uint8_t> labels;
};

// Mann-Whitney AUC; tied scores count one half.
Scalar auc(std::span<const Scalar> scores, std::span<const std::uint8_t> labels);
// AUC over all items of all records pooled together.
Scalar auc(std::span<const EvalRecord> records);
// Mean of per-list AUCs; `weighted` weights each list by its item count.
Scalar gauc(std::span<const EvalRecord> records, bool weighted = false);

struct HRTrial {
  std::uint64_t request_id = 0;
  std::size_t best_index = 0;
  std::vector<std::size_t> candidates;
};

Scalar hit_ratio(std::span<const HRTrial> trials);

// K distinct permutation indices drawn uniformly from [0, P), ascending.
std::vector<std::size_t> gsu_random_k(std::size_t permutation_count, std::size_t k, std::mt19937_64& rng);

// Position-by-position beam search ranking extensions by the head's pCTR with
// an all-zero context. Returns up to `beam` complete lists, best first.
std::vector<std::vector<std::uint32_t>> gsu_beam_search(const Tensor& semantic, const ModelParams& params,
                                                        std::size_t beam);

// Nearest-rank percentile of unsorted samples, q in (0, 1].
double percentile(std::vector<double> samples, double q);

struct BenchOptions {
  std::string mode = "cached";  // cached | naive
  std::size_t repetitions = 100;
  std::size_t warmup = 10;
  std::size_t k = 0;  // naive mode: sampled permutations per request, 0 = all
  std::uint64_t seed = 1;
  ScoringOptions scoring;
};

struct BenchResult {
  std::string mode;
  std::size_t repetitions = 0;
  std::size_t permutations_scored = 0;  // per request
  double mean_ms = 0;
  double p99_ms = 0;
  // Per request; identical for every request at fixed n and m.
  std::uint64_t set_attention_calls = 0;
  std::uint64_t head_evals = 0;
  std::uint64_t feature_cross_calls = 0;
};

// Runs batch-of-one requests round-robin. Call counts come from the first
// measured request.
BenchResult bench(std::span<const RawRequest> requests, const ModelParams& params, const PermutationSpace& space,
                  const BenchOptions& opts);

// Best permutation index of one request when scoring K sampled permutations
// with block embeddings recomputed for every list.
std::size_t naive_rerank(const RawRequest& request, const ModelParams& params, const PermutationSpace& space,
                         std::span<const std::size_t> candidates);

}  // namespace treerank
