#include "treerank/metrics.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

#include "treerank/errors.hpp"
#include "treerank/tcem.hpp"
#include "treerank/telemetry.hpp"

namespace treerank {

Scalar auc(std::span<const Scalar> scores, std::span<const std::uint8_t> labels) {
  if (scores.size() != labels.size()) throw DimensionError("auc: scores and labels differ in length");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  // Sum of midranks of the positives.
  double rank_sum = 0;
  std::size_t pos = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
    const double midrank = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t k = i; k < j; ++k) {
      if (labels[order[k]]) {
        rank_sum += midrank;
        ++pos;
      }
    }
    i = j;
  }
  const std::size_t neg = scores.size() - pos;
  if (pos == 0 || neg == 0) throw UndefinedMetricError("auc needs at least one positive and one negative");
  const double p = static_cast<double>(pos);
  return (rank_sum - p * (p + 1) / 2) / (p * static_cast<double>(neg));
}

Scalar auc(std::span<const EvalRecord> records) {
  std::vector<Scalar> scores;
  std::vector<std::uint8_t> labels;
  for (const auto& r : records) {
    scores.insert(scores.end(), r.scores.begin(), r.scores.end());
    labels.insert(labels.end(), r.labels.begin(), r.labels.end());
  }
  return auc(scores, labels);
}

Scalar gauc(std::span<const EvalRecord> records, bool weighted) {
  if (records.empty()) throw UndefinedMetricError("gauc over an empty record set");
  double sum = 0, weight = 0;
  for (const auto& r : records) {
    const double w = weighted ? static_cast<double>(r.scores.size()) : 1.0;
    sum += w * auc(r.scores, r.labels);
    weight += w;
  }
  return sum / weight;
}

Scalar hit_ratio(std::span<const HRTrial> trials) {
  if (trials.empty()) return 0;
  std::size_t hits = 0;
  for (const auto& t : trials) {
    if (std::find(t.candidates.begin(), t.candidates.end(), t.best_index) != t.candidates.end()) ++hits;
  }
  return static_cast<Scalar>(hits) / static_cast<Scalar>(trials.size());
}

std::vector<std::size_t> gsu_random_k(std::size_t permutation_count, std::size_t k, std::mt19937_64& rng) {
  std::vector<std::size_t> out;
  if (k >= permutation_count) {
    out.resize(permutation_count);
    std::iota(out.begin(), out.end(), 0);
    return out;
  }
  // Floyd's algorithm: k draws, no O(P) scratch.
  std::vector<std::size_t> chosen;
  chosen.reserve(k);
  for (std::size_t j = permutation_count - k; j < permutation_count; ++j) {
    std::uniform_int_distribution<std::size_t> dist(0, j);
    const std::size_t t = dist(rng);
    if (std::find(chosen.begin(), chosen.end(), t) == chosen.end()) {
      chosen.push_back(t);
    } else {
      chosen.push_back(j);
    }
  }
  std::sort(chosen.begin(), chosen.end());
  return chosen;
}

std::vector<std::vector<std::uint32_t>> gsu_beam_search(const Tensor& semantic, const ModelParams& params,
                                                        std::size_t beam) {
  if (beam == 0) throw InputError("beam width must be >= 1");
  const std::size_t n = semantic.rows();
  const std::size_t m = params.config.list_len;
  if (n < m) throw DimensionError("beam search needs n >= m");
  const std::vector<Scalar> zero_context(params.config.context_levels() * params.config.dim, 0.0);

  // pCTR of item i at position t does not depend on the prefix when the
  // context is zeroed, so it is tabulated once.
  std::vector<Scalar> pctr(m * n);
  for (std::size_t t = 0; t < m; ++t) {
    for (std::size_t i = 0; i < n; ++i) pctr[t * n + i] = predict_item_pctr(t, semantic.row(i), zero_context, params);
  }

  struct Partial {
    std::vector<std::uint32_t> items;
    Scalar score = 0;
  };
  auto better = [](const Partial& a, const Partial& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.items < b.items;
  };
  std::vector<Partial> frontier{Partial{}};
  for (std::size_t t = 0; t < m; ++t) {
    std::vector<Partial> next;
    for (const auto& p : frontier) {
      for (std::uint32_t i = 0; i < n; ++i) {
        if (std::find(p.items.begin(), p.items.end(), i) != p.items.end()) continue;
        Partial q = p;
        q.items.push_back(i);
        q.score += pctr[t * n + i];
        next.push_back(std::move(q));
      }
    }
    const std::size_t keep = std::min(beam, next.size());
    std::partial_sort(next.begin(), next.begin() + static_cast<std::ptrdiff_t>(keep), next.end(), better);
    next.resize(keep);
    frontier = std::move(next);
  }
  std::vector<std::vector<std::uint32_t>> out;
  out.reserve(frontier.size());
  for (auto& p : frontier) out.push_back(std::move(p.items));
  return out;
}

double percentile(std::vector<double> samples, double q) {
  if (samples.empty()) return 0;
  std::sort(samples.begin(), samples.end());
  const auto rank = static_cast<std::size_t>(std::ceil(q * static_cast<double>(samples.size())));
  return samples[std::clamp<std::size_t>(rank, 1, samples.size()) - 1];
}

std::size_t naive_rerank(const RawRequest& request, const ModelParams& params, const PermutationSpace& space,
                         std::span<const std::size_t> candidates) {
  if (candidates.empty()) throw InputError("naive rerank needs at least one candidate permutation");
  const Tensor semantic = semantic_encode(request, params);
  std::vector<Scalar> scores(candidates.size());
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    scores[i] = score_list(space.permutations.row(candidates[i]), semantic, params).total;
  }
  return candidates[argmax_index(scores)];
}

BenchResult bench(std::span<const RawRequest> requests, const ModelParams& params, const PermutationSpace& space,
                  const BenchOptions& opts) {
  if (requests.empty()) throw InputError("bench needs at least one request");
  if (opts.mode != "cached" && opts.mode != "naive") throw ConfigError("unknown bench mode '" + opts.mode + "'");
  const std::size_t total = space.permutations.count();
  const bool naive = opts.mode == "naive";
  const std::size_t k = (opts.k == 0 || opts.k > total) ? total : opts.k;

  BenchResult result;
  result.mode = opts.mode;
  result.repetitions = opts.repetitions;
  result.permutations_scored = naive ? k : total;

  std::mt19937_64 rng(opts.seed);
  auto run_one = [&](const RawRequest& req) {
    if (naive) {
      const auto candidates = gsu_random_k(total, k, rng);
      naive_rerank(req, params, space, candidates);
    } else {
      rerank(req, params, space, {}, opts.scoring);
    }
  };

  for (std::size_t i = 0; i < opts.warmup; ++i) run_one(requests[i % requests.size()]);
  std::vector<double> latencies;
  latencies.reserve(opts.repetitions);
  for (std::size_t i = 0; i < opts.repetitions; ++i) {
    const auto before = counters().snapshot();
    const auto start = std::chrono::steady_clock::now();
    run_one(requests[i % requests.size()]);
    const auto stop = std::chrono::steady_clock::now();
    const auto delta = counters().snapshot() - before;
    if (i == 0) {
      result.set_attention_calls = delta.set_attention;
      result.head_evals = delta.head_evals;
      result.feature_cross_calls = delta.feature_cross;
    }
    latencies.push_back(std::chrono::duration<double, std::milli>(stop - start).count());
  }
  if (!latencies.empty()) {
    result.mean_ms = std::accumulate(latencies.begin(), latencies.end(), 0.0) / static_cast<double>(latencies.size());
    result.p99_ms = percentile(latencies, 0.99);
  }
  return result;
}

}  // namespace treerank
