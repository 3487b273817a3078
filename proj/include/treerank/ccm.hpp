#pragma once

// Context cache: every block embedding any permutation can need is computed
// once per request, and scoring a permutation becomes gathers plus the FC head.

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <vector>

#include "treerank/irm.hpp"
#include "treerank/model.hpp"
#include "treerank/tcem.hpp"
#include "treerank/tensor.hpp"

namespace treerank {

// Ascending item indices, each < n.
struct SubsetKey {
  std::vector<std::uint32_t> items;

  std::size_t size() const { return items.size(); }
  friend auto operator<=>(const SubsetKey&, const SubsetKey&) = default;
};

std::uint64_t binomial(std::size_t n, std::size_t k);
std::uint64_t arrangements(std::size_t n, std::size_t m);  // A(n, m) = n! / (n-m)!

// Block sizes the tree uses, largest first: m, m/2, ..., 2 (or just m).
std::vector<std::size_t> block_sizes(std::size_t m, std::size_t levels);

// All subsets of the given sizes, size-major (largest first) then lexicographic.
std::vector<SubsetKey> enumerate_subsets(std::size_t n, std::size_t m);
std::vector<SubsetKey> enumerate_subsets(std::size_t n, std::span<const std::size_t> sizes);

// Maps a sorted subset to its dense slot in enumerate_subsets order.
class SubsetIndexer {
 public:
  SubsetIndexer() = default;
  SubsetIndexer(std::size_t n, std::vector<std::size_t> sizes);

  std::size_t slot(std::span<const std::uint32_t> sorted_items) const;
  std::size_t slot_count() const { return total_; }
  std::size_t n() const { return n_; }
  const std::vector<std::size_t>& sizes() const { return sizes_; }

 private:
  std::size_t n_ = 0;
  std::vector<std::size_t> sizes_;
  std::map<std::size_t, std::size_t> offsets_;
  std::vector<std::vector<std::uint64_t>> binom_;
  std::size_t total_ = 0;
};

class ContextCache {
 public:
  ContextCache(std::size_t n, std::size_t m, std::size_t levels, std::vector<SubsetKey> keys, Tensor embeddings);

  std::size_t n() const { return n_; }
  std::size_t m() const { return m_; }
  std::size_t levels() const { return levels_; }
  std::size_t size() const { return keys_.size(); }
  // Subset entries plus the n item-level semantic rows.
  std::size_t stored_embeddings() const { return keys_.size() + n_; }

  const std::vector<SubsetKey>& keys() const { return keys_; }
  const Tensor& embeddings() const { return embeddings_; }
  std::span<const Scalar> embedding(std::size_t slot) const { return embeddings_.row(slot); }
  std::size_t slot_of(std::span<const std::uint32_t> sorted_items) const { return indexer_.slot(sorted_items); }
  std::span<const Scalar> lookup(const SubsetKey& key) const { return embedding(slot_of(key.items)); }

 private:
  std::size_t n_;
  std::size_t m_;
  std::size_t levels_;
  std::vector<SubsetKey> keys_;
  Tensor embeddings_;
  SubsetIndexer indexer_;
};

// One set_attention call per subset key.
ContextCache build_cache(const Tensor& semantic, const ModelParams& params);

struct PermutationTable {
  std::size_t n = 0;
  std::size_t m = 0;
  std::vector<std::uint32_t> items;  // P × m, lexicographic

  std::size_t count() const { return m == 0 ? 0 : items.size() / m; }
  std::span<const std::uint32_t> row(std::size_t p) const { return {items.data() + p * m, m}; }
};

struct IndexMatrix {
  std::size_t n = 0;
  std::size_t m = 0;
  std::size_t levels = 0;
  std::vector<std::uint32_t> slots;  // P × m × levels

  std::size_t count() const { return (m * levels) == 0 ? 0 : slots.size() / (m * levels); }
  std::uint32_t at(std::size_t p, std::size_t t, std::size_t level) const {
    return slots[(p * m + t) * levels + level];
  }
};

struct PermutationSpace {
  PermutationTable permutations;
  IndexMatrix index;
};

struct IndexOptions {
  std::size_t levels = 0;  // 0 = full tree (log2 m)
  std::size_t max_permutations = 5'000'000;
};

PermutationTable enumerate_permutations(std::size_t n, std::size_t m);
// Lexicographic index of an arrangement among all A(n, m).
std::uint64_t permutation_rank(std::size_t n, std::span<const std::uint32_t> arrangement);

PermutationSpace build_index_matrix(std::size_t n, std::size_t m, const IndexOptions& opts = {});

inline constexpr std::uint32_t kIndexFileVersion = 1;

// Little-endian: "TRIX", u32 version, u32 n, u32 m, u64 P, u32 levels,
// P×m u32 permutation items, P×m×levels u32 slots.
void save_index_file(const PermutationSpace& space, const std::filesystem::path& path);
PermutationSpace load_index_file(const std::filesystem::path& path);

struct ScoringOptions {
  std::size_t chunk_size = 4096;
  std::size_t workers = 1;
};

std::vector<Scalar> score_all_permutations(const ContextCache& cache, const PermutationSpace& space,
                                           const Tensor& semantic, const ModelParams& params,
                                           std::span<const Scalar> weights = {}, const ScoringOptions& opts = {});

struct ArgmaxResult {
  std::size_t best_index = 0;
  std::vector<std::uint32_t> best_permutation;
  Scalar best_score = 0;
};

// Smallest index among the maximal scores.
std::size_t argmax_index(std::span<const Scalar> scores);
ArgmaxResult argmax_list(std::span<const Scalar> scores, const PermutationTable& table);

// On-demand memoization for scoring a sample of permutations.
class LazyContextCache {
 public:
  std::span<const Scalar> get(const Tensor& semantic, std::span<const std::uint32_t> block, std::size_t level,
                              const ModelParams& params);
  std::size_t size() const { return entries_.size(); }

 private:
  std::map<SubsetKey, Tensor> entries_;
};

std::vector<Scalar> score_permutations_lazy(std::span<const std::uint32_t> permutations, const Tensor& semantic,
                                            const ModelParams& params, LazyContextCache& cache,
                                            std::span<const Scalar> weights = {});

struct StageTimings {
  double irm_ms = 0;
  double cache_ms = 0;
  double score_ms = 0;
  double argmax_ms = 0;
};

struct RerankResult {
  std::size_t best_index = 0;
  std::vector<std::uint32_t> best_permutation;  // candidate indices
  std::vector<std::uint32_t> best_items;        // candidate item ids
  Scalar best_score = 0;
  StageTimings timings;
  std::uint64_t set_attention_calls = 0;
  std::uint64_t head_evals = 0;
  std::uint64_t feature_cross_calls = 0;
  std::vector<Scalar> scores;
};

RerankResult rerank(const RawRequest& request, const ModelParams& params, const PermutationSpace& space,
                    std::span<const Scalar> weights = {}, const ScoringOptions& opts = {});

}  // namespace treerank
