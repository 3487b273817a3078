#pragma once

// Line-delimited dataset files, list filtering, and the synthetic click world.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "treerank/ccm.hpp"
#include "treerank/config.hpp"
#include "treerank/irm.hpp"
#include "treerank/training.hpp"

namespace treerank {

inline constexpr int kDatasetSchemaVersion = 1;
inline constexpr const char* kListFormat = "treerank-lists";
inline constexpr const char* kRequestFormat = "treerank-requests";

struct RequestRecord {
  std::uint64_t id = 0;
  RawRequest request;
};

struct GroundTruth {
  std::uint64_t id = 0;
  std::vector<std::uint32_t> best;  // candidate indices, length m
  Scalar best_value = 0;
};

std::uint64_t splitmix64(std::uint64_t x);
// Seed of one request, independent of generation order.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t id);

// ---- synthetic world ------------------------------------------------------

struct SyntheticWorld {
  WorldConfig cfg;
  std::size_t items = 0;
  std::size_t users = 0;
  std::size_t contexts = 0;
  std::vector<std::uint32_t> category;   // per item
  std::vector<Scalar> quality;           // q_i
  std::vector<Scalar> influence;         // g_j, effect of j on its block mates
  std::vector<Scalar> bonus;             // items × items, symmetric planted pairs
  std::vector<std::uint32_t> preferred;  // per user

  // W[i, j]: effect on item i of item j sharing a block with it.
  Scalar context_effect(std::uint32_t i, std::uint32_t j) const { return influence[j] + bonus[i * items + j]; }
};

SyntheticWorld make_world(const Config& cfg);

// True click probability of every position of an ordered list. Item t gains
// W[i_t, j] from each j in its size-2 block and again from each j in its
// size-4 block (the latter only for lists of 4 or more).
std::vector<Scalar> true_click_probs(const SyntheticWorld& world, std::uint32_t user,
                                     std::span<const std::uint32_t> items);
Scalar true_list_value(const SyntheticWorld& world, std::uint32_t user, std::span<const std::uint32_t> items);

// Exhaustive search over all ordered m-arrangements of the candidates;
// lexicographically first maximum.
GroundTruth brute_force_best(const SyntheticWorld& world, const RawRequest& request, std::size_t m);

// True list value of every row of the table (rows hold candidate indices).
std::vector<Scalar> true_permutation_scores(const SyntheticWorld& world, const RawRequest& request,
                                            const PermutationTable& table);

RequestRecord generate_request(const SyntheticWorld& world, const Config& cfg, std::uint64_t id);
// Exposes the request's candidates in a uniformly random order, keeps the
// first m, and draws Bernoulli labels from the true probabilities.
ListSample generate_list(const SyntheticWorld& world, const Config& cfg, std::uint64_t id);

struct GeneratedData {
  std::vector<ListSample> train;
  std::vector<ListSample> test;
  std::vector<RequestRecord> requests;
  std::vector<GroundTruth> ground_truth;  // keyed by request id
};

GeneratedData generate(const SyntheticWorld& world, const Config& cfg);

// ---- filtering ------------------------------------------------------------

struct FilterStats {
  std::size_t kept = 0;
  std::size_t dropped_all_zero = 0;
  std::size_t dropped_all_one = 0;
};

bool has_mixed_labels(std::span<const std::uint8_t> labels);
std::vector<ListSample> filter_lists(std::vector<ListSample> samples, FilterStats* stats = nullptr);

// ---- files ----------------------------------------------------------------

struct LoadStats {
  std::size_t lines = 0;
  std::size_t records = 0;
  std::size_t malformed = 0;
  std::vector<std::string> errors;  // first few, "line N: reason"
};

struct DatasetHeader {
  std::string format;
  std::size_t items_per_record = 0;  // m for lists, n for requests
  std::size_t dense_dim = 0;
};

// Streaming reader; malformed lines are skipped and counted until the error
// budget is exceeded, which throws FormatError.
class RecordReader {
 public:
  RecordReader(const std::filesystem::path& path, const std::string& expected_format, std::size_t error_budget);

  const DatasetHeader& header() const { return header_; }
  const LoadStats& stats() const { return stats_; }

  bool next(ListSample& out);

 private:
  std::ifstream in_;
  std::filesystem::path path_;
  DatasetHeader header_;
  LoadStats stats_;
  std::size_t error_budget_;
  bool labelled_;
};

std::vector<ListSample> load_dataset(const std::filesystem::path& path, std::size_t error_budget = 100,
                                     LoadStats* stats = nullptr);
std::vector<RequestRecord> load_requests(const std::filesystem::path& path, std::size_t error_budget = 100,
                                         LoadStats* stats = nullptr);

void write_dataset(const std::filesystem::path& path, std::span<const ListSample> samples, std::size_t m,
                   std::size_t dense_dim);
void write_requests(const std::filesystem::path& path, std::span<const RequestRecord> requests, std::size_t n,
                    std::size_t dense_dim);
void write_ground_truth(const std::filesystem::path& path, std::span<const GroundTruth> truth);
std::vector<GroundTruth> load_ground_truth(const std::filesystem::path& path);

}  // namespace treerank
