#include "treerank/ccm.hpp"

#include <algorithm>
#include <chrono>
#include <fstream>
#include <thread>

#include "treerank/binio.hpp"
#include "treerank/errors.hpp"
#include "treerank/telemetry.hpp"

namespace treerank {

namespace {

using Clock = std::chrono::steady_clock;

double elapsed_ms(Clock::time_point since) {
  return std::chrono::duration<double, std::milli>(Clock::now() - since).count();
}

void check_shape(std::size_t n, std::size_t m) {
  if (m < 2 || !is_power_of_two(m)) {
    throw ConfigError("list length must be a power of two >= 2, got " + std::to_string(m));
  }
  if (m > n) throw InputError("m=" + std::to_string(m) + " exceeds n=" + std::to_string(n));
}

void append_combinations(std::size_t n, std::size_t k, std::vector<SubsetKey>& out) {
  std::vector<std::uint32_t> c(k);
  for (std::size_t i = 0; i < k; ++i) c[i] = static_cast<std::uint32_t>(i);
  while (true) {
    out.push_back({c});
    std::size_t i = k;
    while (i > 0 && c[i - 1] == n - k + i - 1) --i;
    if (i == 0) return;
    ++c[i - 1];
    for (std::size_t j = i; j < k; ++j) c[j] = c[j - 1] + 1;
  }
}

}  // namespace

std::uint64_t binomial(std::size_t n, std::size_t k) {
  if (k > n) return 0;
  k = std::min(k, n - k);
  std::uint64_t r = 1;
  for (std::size_t i = 1; i <= k; ++i) r = r * (n - k + i) / i;
  return r;
}

std::uint64_t arrangements(std::size_t n, std::size_t m) {
  if (m > n) return 0;
  std::uint64_t r = 1;
  for (std::size_t i = 0; i < m; ++i) r *= (n - i);
  return r;
}

std::vector<std::size_t> block_sizes(std::size_t m, std::size_t levels) {
  std::vector<std::size_t> sizes;
  for (std::size_t s = m; s >= 2 && sizes.size() < levels; s /= 2) sizes.push_back(s);
  return sizes;
}

std::vector<SubsetKey> enumerate_subsets(std::size_t n, std::span<const std::size_t> sizes) {
  std::vector<SubsetKey> keys;
  for (std::size_t k : sizes) {
    if (k == 0 || k > n) throw InputError("subset size " + std::to_string(k) + " invalid for n=" + std::to_string(n));
    append_combinations(n, k, keys);
  }
  return keys;
}

std::vector<SubsetKey> enumerate_subsets(std::size_t n, std::size_t m) {
  check_shape(n, m);
  const auto sizes = block_sizes(m, tree_blocks(m).level_count());
  return enumerate_subsets(n, sizes);
}

SubsetIndexer::SubsetIndexer(std::size_t n, std::vector<std::size_t> sizes) : n_(n), sizes_(std::move(sizes)) {
  binom_.assign(n + 1, std::vector<std::uint64_t>(n + 1, 0));
  for (std::size_t a = 0; a <= n; ++a) {
    binom_[a][0] = 1;
    for (std::size_t b = 1; b <= a; ++b) binom_[a][b] = binom_[a - 1][b - 1] + (b <= a - 1 ? binom_[a - 1][b] : 0);
  }
  for (std::size_t k : sizes_) {
    offsets_[k] = total_;
    total_ += binom_[n][k];
  }
}

std::size_t SubsetIndexer::slot(std::span<const std::uint32_t> items) const {
  const std::size_t k = items.size();
  auto it = offsets_.find(k);
  if (it == offsets_.end()) throw InputError("no cache entries of size " + std::to_string(k));
  // Lexicographic rank: for each chosen item, count the combinations that
  // place a smaller value at that position.
  std::uint64_t rank = 0;
  std::size_t next = 0;
  for (std::size_t i = 0; i < k; ++i) {
    if (items[i] >= n_ || items[i] < next) throw InputError("subset must be strictly increasing and < n");
    for (std::size_t v = next; v < items[i]; ++v) rank += binom_[n_ - 1 - v][k - 1 - i];
    next = items[i] + 1;
  }
  return it->second + static_cast<std::size_t>(rank);
}

ContextCache::ContextCache(std::size_t n, std::size_t m, std::size_t levels, std::vector<SubsetKey> keys,
                           Tensor embeddings)
    : n_(n), m_(m), levels_(levels), keys_(std::move(keys)), embeddings_(std::move(embeddings)),
      indexer_(n, block_sizes(m, levels)) {
  if (indexer_.slot_count() != keys_.size() || embeddings_.rows() != keys_.size()) {
    throw ConsistencyError("context cache size does not match its subset enumeration");
  }
}

ContextCache build_cache(const Tensor& semantic, const ModelParams& params) {
  const auto& cfg = params.config;
  const std::size_t n = semantic.rows();
  check_shape(n, cfg.list_len);
  const std::size_t levels = cfg.context_levels();
  const auto sizes = block_sizes(cfg.list_len, levels);
  auto keys = enumerate_subsets(n, sizes);
  Tensor emb(keys.size(), cfg.dim);
  for (std::size_t s = 0; s < keys.size(); ++s) {
    const std::size_t level = level_for_block_size(cfg.list_len, keys[s].size());
    const Tensor e = set_attention(semantic, keys[s].items, params.set_attention_for_level(level));
    std::copy_n(e.row(0).begin(), cfg.dim, emb.row(s).begin());
  }
  return ContextCache(n, cfg.list_len, levels, std::move(keys), std::move(emb));
}

PermutationTable enumerate_permutations(std::size_t n, std::size_t m) {
  PermutationTable table{n, m, {}};
  table.items.reserve(arrangements(n, m) * m);
  std::vector<std::uint32_t> current;
  std::vector<bool> used(n, false);
  // Trying smaller items first at every depth yields lexicographic order.
  auto extend = [&](auto& self) -> void {
    if (current.size() == m) {
      table.items.insert(table.items.end(), current.begin(), current.end());
      return;
    }
    for (std::uint32_t v = 0; v < n; ++v) {
      if (used[v]) continue;
      used[v] = true;
      current.push_back(v);
      self(self);
      current.pop_back();
      used[v] = false;
    }
  };
  extend(extend);
  return table;
}

std::uint64_t permutation_rank(std::size_t n, std::span<const std::uint32_t> arrangement) {
  const std::size_t m = arrangement.size();
  std::vector<bool> used(n, false);
  std::uint64_t rank = 0;
  for (std::size_t t = 0; t < m; ++t) {
    const auto item = arrangement[t];
    if (item >= n || used[item]) throw InputError("invalid arrangement");
    std::uint64_t smaller_unused = 0;
    for (std::uint32_t v = 0; v < item; ++v) smaller_unused += used[v] ? 0 : 1;
    rank += smaller_unused * arrangements(n - t - 1, m - t - 1);
    used[item] = true;
  }
  return rank;
}

PermutationSpace build_index_matrix(std::size_t n, std::size_t m, const IndexOptions& opts) {
  check_shape(n, m);
  const TreeLayout full = tree_blocks(m);
  const std::size_t levels = opts.levels == 0 ? full.level_count() : std::min(opts.levels, full.level_count());
  const std::uint64_t count = arrangements(n, m);
  if (count > opts.max_permutations) {
    throw ResourceError("A(" + std::to_string(n) + "," + std::to_string(m) + ")=" + std::to_string(count) +
                        " permutations exceed max_permutations=" + std::to_string(opts.max_permutations) +
                        "; score a sample with the lazy cache instead");
  }
  PermutationSpace space;
  space.permutations = enumerate_permutations(n, m);
  const SubsetIndexer indexer(n, block_sizes(m, levels));
  IndexMatrix& index = space.index;
  index.n = n;
  index.m = m;
  index.levels = levels;
  index.slots.assign(count * m * levels, 0);
  std::vector<std::uint32_t> block;
  for (std::size_t p = 0; p < count; ++p) {
    const auto perm = space.permutations.row(p);
    for (std::size_t level = 0; level < levels; ++level) {
      for (const Block& b : full.level(level)) {
        block.assign(perm.begin() + b.begin, perm.begin() + b.end);
        std::sort(block.begin(), block.end());
        const auto slot = static_cast<std::uint32_t>(indexer.slot(block));
        for (std::size_t t = b.begin; t < b.end; ++t) index.slots[(p * m + t) * levels + level] = slot;
      }
    }
  }
  return space;
}

namespace {
constexpr char kIndexMagic[4] = {'T', 'R', 'I', 'X'};
}

void save_index_file(const PermutationSpace& space, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot open index file for writing: " + path.string());
  const auto& idx = space.index;
  out.write(kIndexMagic, 4);
  binio::write_le(out, kIndexFileVersion);
  binio::write_le(out, static_cast<std::uint32_t>(idx.n));
  binio::write_le(out, static_cast<std::uint32_t>(idx.m));
  binio::write_le(out, static_cast<std::uint64_t>(space.permutations.count()));
  binio::write_le(out, static_cast<std::uint32_t>(idx.levels));
  for (auto v : space.permutations.items) binio::write_le(out, v);
  for (auto v : idx.slots) binio::write_le(out, v);
  if (!out) throw FormatError("failed writing index file: " + path.string());
}

PermutationSpace load_index_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open index file: " + path.string());
  char magic[4];
  in.read(magic, 4);
  if (!in || std::string(magic, 4) != std::string(kIndexMagic, 4)) throw FormatError("not an index file: " + path.string());
  const auto version = binio::read_le<std::uint32_t>(in);
  if (version != kIndexFileVersion) throw FormatError("unsupported index file version " + std::to_string(version));
  PermutationSpace space;
  const auto n = binio::read_le<std::uint32_t>(in);
  const auto m = binio::read_le<std::uint32_t>(in);
  const auto count = binio::read_le<std::uint64_t>(in);
  const auto levels = binio::read_le<std::uint32_t>(in);
  if (m < 2 || !is_power_of_two(m) || m > n || count != arrangements(n, m) || levels == 0 ||
      levels > tree_blocks(m).level_count()) {
    throw FormatError("index file header is inconsistent");
  }
  space.permutations = {n, m, std::vector<std::uint32_t>(count * m)};
  for (auto& v : space.permutations.items) v = binio::read_le<std::uint32_t>(in);
  space.index = {n, m, levels, std::vector<std::uint32_t>(count * m * levels)};
  for (auto& v : space.index.slots) v = binio::read_le<std::uint32_t>(in);
  return space;
}

std::vector<Scalar> score_all_permutations(const ContextCache& cache, const PermutationSpace& space,
                                           const Tensor& semantic, const ModelParams& params,
                                           std::span<const Scalar> weights, const ScoringOptions& opts) {
  const auto& idx = space.index;
  const std::size_t m = params.config.list_len;
  if (cache.n() != idx.n || cache.m() != idx.m || cache.levels() != idx.levels || idx.m != m ||
      space.permutations.n != idx.n || semantic.rows() != idx.n || params.config.context_levels() != idx.levels) {
    throw ConsistencyError("cache, index matrix and model disagree on (n, m, levels)");
  }
  if (!weights.empty() && weights.size() != m) throw DimensionError("weights must have m entries");
  const std::size_t count = space.permutations.count();
  const std::size_t dim = params.config.dim;
  const std::size_t chunk = std::max<std::size_t>(1, opts.chunk_size);
  const std::size_t chunks = (count + chunk - 1) / chunk;
  std::vector<Scalar> scores(count);

  auto work = [&](std::size_t first_chunk, std::size_t stride) {
    std::vector<Scalar> context(idx.levels * dim);
    std::vector<Scalar> pctr(m);
    std::uint64_t evals = 0;
    for (std::size_t c = first_chunk; c < chunks; c += stride) {
      const std::size_t end = std::min(count, (c + 1) * chunk);
      for (std::size_t p = c * chunk; p < end; ++p) {
        const auto perm = space.permutations.row(p);
        for (std::size_t t = 0; t < m; ++t) {
          for (std::size_t l = 0; l < idx.levels; ++l) {
            const auto e = cache.embedding(idx.at(p, t, l));
            std::copy(e.begin(), e.end(), context.begin() + l * dim);
          }
          pctr[t] = predict_item_pctr(t, semantic.row(perm[t]), context, params);
        }
        evals += m;
        scores[p] = weighted_total(pctr, weights);
      }
    }
    counters().add_head_evals(evals);
  };

  const std::size_t workers = std::clamp<std::size_t>(opts.workers, 1, std::max<std::size_t>(1, chunks));
  if (workers == 1) {
    work(0, 1);
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work, w, workers);
  }
  return scores;
}

std::size_t argmax_index(std::span<const Scalar> scores) {
  if (scores.empty()) throw InputError("argmax over an empty score vector");
  std::size_t best = 0;
  for (std::size_t i = 1; i < scores.size(); ++i) {
    if (scores[i] > scores[best]) best = i;
  }
  return best;
}

ArgmaxResult argmax_list(std::span<const Scalar> scores, const PermutationTable& table) {
  if (scores.size() != table.count()) throw ConsistencyError("score count does not match permutation table");
  ArgmaxResult r;
  r.best_index = argmax_index(scores);
  const auto row = table.row(r.best_index);
  r.best_permutation.assign(row.begin(), row.end());
  r.best_score = scores[r.best_index];
  return r;
}

std::span<const Scalar> LazyContextCache::get(const Tensor& semantic, std::span<const std::uint32_t> block,
                                              std::size_t level, const ModelParams& params) {
  SubsetKey key{{block.begin(), block.end()}};
  std::sort(key.items.begin(), key.items.end());
  auto it = entries_.find(key);
  if (it == entries_.end()) {
    Tensor e = set_attention(semantic, key.items, params.set_attention_for_level(level));
    it = entries_.emplace(std::move(key), std::move(e)).first;
  }
  return it->second.row(0);
}

std::vector<Scalar> score_permutations_lazy(std::span<const std::uint32_t> permutations, const Tensor& semantic,
                                            const ModelParams& params, LazyContextCache& cache,
                                            std::span<const Scalar> weights) {
  const std::size_t m = params.config.list_len;
  const std::size_t dim = params.config.dim;
  if (permutations.size() % m != 0) throw DimensionError("permutation buffer is not a multiple of m");
  const TreeLayout layout = context_layout(params.config);
  const std::size_t count = permutations.size() / m;
  std::vector<Scalar> scores(count);
  std::vector<Scalar> context(layout.level_count() * dim);
  std::vector<Scalar> pctr(m);
  for (std::size_t p = 0; p < count; ++p) {
    const auto perm = permutations.subspan(p * m, m);
    validate_permutation(perm, semantic.rows(), m);
    for (std::size_t t = 0; t < m; ++t) {
      for (std::size_t l = 0; l < layout.level_count(); ++l) {
        const Block& b = layout.block_containing(l, t);
        const auto e = cache.get(semantic, perm.subspan(b.begin, b.size()), l, params);
        std::copy(e.begin(), e.end(), context.begin() + l * dim);
      }
      pctr[t] = predict_item_pctr(t, semantic.row(perm[t]), context, params);
    }
    scores[p] = weighted_total(pctr, weights);
  }
  counters().add_head_evals(count * m);
  return scores;
}

RerankResult rerank(const RawRequest& request, const ModelParams& params, const PermutationSpace& space,
                    std::span<const Scalar> weights, const ScoringOptions& opts) {
  RerankResult result;
  const CallCounts before = counters().snapshot();

  auto t0 = Clock::now();
  const Tensor semantic = semantic_encode(request, params);
  result.timings.irm_ms = elapsed_ms(t0);

  t0 = Clock::now();
  const ContextCache cache = build_cache(semantic, params);
  result.timings.cache_ms = elapsed_ms(t0);

  t0 = Clock::now();
  result.scores = score_all_permutations(cache, space, semantic, params, weights, opts);
  result.timings.score_ms = elapsed_ms(t0);

  t0 = Clock::now();
  ArgmaxResult best = argmax_list(result.scores, space.permutations);
  result.timings.argmax_ms = elapsed_ms(t0);

  result.best_index = best.best_index;
  result.best_score = best.best_score;
  result.best_permutation = std::move(best.best_permutation);
  for (auto idx : result.best_permutation) result.best_items.push_back(request.candidate_item_ids[idx]);

  const CallCounts used = counters().snapshot() - before;
  result.set_attention_calls = used.set_attention;
  result.head_evals = used.head_evals;
  result.feature_cross_calls = used.feature_cross;
  return result;
}

}  // namespace treerank
