#pragma once

// Run configuration. The on-disk form is a versioned `key = value` text file;
// unknown keys are rejected so typos never silently fall back to defaults.

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "treerank/tensor.hpp"

namespace treerank {

inline constexpr int kConfigFormatVersion = 1;

struct ModelConfig {
  std::size_t dim = 8;
  std::size_t list_len = 8;        // m
  std::size_t num_candidates = 8;  // n
  std::vector<std::size_t> hidden{1024, 256, 128};
  std::size_t user_vocab = 1000;
  std::size_t context_vocab = 24;
  std::size_t item_vocab = 200;
  std::size_t dense_dim = 0;
  bool oov_enabled = true;
  bool concat_item = true;
  bool per_level_set_attention = false;
  bool no_irm = false;
  bool no_tcem = false;
  Scalar init_std = 0.01;

  std::size_t tree_levels() const;     // log2(m)
  std::size_t context_levels() const;  // levels fed to the head (1 under no_tcem)
  std::size_t mlp_input_dim() const;
  std::size_t head_input_dim() const;
};

struct TrainConfig {
  Scalar lr = 0.001;
  Scalar alpha = 0.05;
  bool alpha_set = false;
  Scalar dropout = 0.1;
  std::size_t batch_size = 1024;
  std::size_t epochs = 5;
  bool no_gbpr = false;
};

// Parameters of the synthetic contextual click model.
struct WorldConfig {
  std::size_t num_categories = 8;
  std::size_t behavior_len = 8;
  Scalar bias = -1.6;
  Scalar quality_std = 0.6;
  Scalar influence_std = 0.7;
  std::size_t planted_pairs = 30;
  Scalar planted_strength = 1.5;
  Scalar affinity = 1.2;
  Scalar position_decay = 0.0;
};

struct DataConfig {
  std::size_t train_lists = 50000;
  std::size_t test_lists = 5000;
  std::size_t requests = 200;
  bool ground_truth = true;
  std::size_t error_budget = 100;
};

struct BenchConfig {
  std::vector<std::size_t> k_values{100, 200, 300, 400};
  std::size_t beam = 3;
  std::size_t repetitions = 100;
  std::size_t warmup = 10;
  std::string mode = "cached";
  std::size_t workers = 1;
  std::size_t chunk_size = 4096;
  std::size_t max_permutations = 5'000'000;
  std::size_t hr_draws = 5;
};

struct Config {
  std::uint64_t seed = 1;
  ModelConfig model;
  TrainConfig train;
  WorldConfig world;
  DataConfig data;
  BenchConfig bench;
};

// Applies one `key = value` setting. Throws ConfigError for unknown keys or
// unparsable values.
void apply_setting(Config& cfg, const std::string& key, const std::string& value);

Config parse_config(const std::string& text);
Config load_config(const std::filesystem::path& path);
std::string render_config(const Config& cfg);
std::uint64_t config_hash(const Config& cfg);

// Validates structural constraints (m power of two, n >= m, ablation conflicts).
void validate_config(const Config& cfg);

}  // namespace treerank
