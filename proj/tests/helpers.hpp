#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "treerank/config.hpp"
#include "treerank/irm.hpp"
#include "treerank/model.hpp"
#include "treerank/tensor.hpp"
#include "treerank/training.hpp"

namespace testutil {

using namespace treerank;

// Small architecture that keeps unit tests fast.
inline Config small_config(std::size_t n = 8, std::size_t m = 8) {
  Config cfg;
  cfg.model.dim = 4;
  cfg.model.num_candidates = n;
  cfg.model.list_len = m;
  cfg.model.hidden = {16, 8};
  cfg.model.user_vocab = 20;
  cfg.model.context_vocab = 5;
  cfg.model.item_vocab = 40;
  cfg.model.init_std = 0.3;
  return cfg;
}

inline Tensor random_tensor(std::size_t rows, std::size_t cols, std::mt19937_64& rng, Scalar scale = 1.0) {
  Tensor t(rows, cols);
  std::normal_distribution<Scalar> d(0.0, scale);
  for (auto& v : t.values()) v = d(rng);
  return t;
}

inline RawRequest random_request(const ModelConfig& mc, std::size_t n, std::mt19937_64& rng,
                                 std::size_t behaviors = 5) {
  RawRequest r;
  std::uniform_int_distribution<std::uint32_t> user(0, static_cast<std::uint32_t>(mc.user_vocab - 1));
  std::uniform_int_distribution<std::uint32_t> ctx(0, static_cast<std::uint32_t>(mc.context_vocab - 1));
  std::uniform_int_distribution<std::uint32_t> item(0, static_cast<std::uint32_t>(mc.item_vocab - 1));
  r.user_profile_ids = {user(rng), user(rng)};
  r.context_ids = {ctx(rng)};
  for (std::size_t b = 0; b < behaviors; ++b) r.behavior_item_ids.push_back(item(rng));
  for (std::size_t c = 0; c < n; ++c) r.candidate_item_ids.push_back(item(rng));
  if (mc.dense_dim > 0) r.candidate_dense = random_tensor(n, mc.dense_dim, rng);
  return r;
}

inline ListSample random_sample(const ModelConfig& mc, std::uint64_t id, std::mt19937_64& rng) {
  ListSample s;
  s.id = id;
  s.request = random_request(mc, mc.list_len, rng);
  std::bernoulli_distribution click(0.4);
  for (std::size_t t = 0; t < mc.list_len; ++t) s.labels.push_back(click(rng) ? 1 : 0);
  s.labels[0] = 1;
  s.labels[1] = 0;
  return s;
}

inline std::filesystem::path temp_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("treerank_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline Scalar max_abs_diff(const Tensor& a, const Tensor& b) {
  Scalar worst = 0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a.data()[i] - b.data()[i]));
  return worst;
}

}  // namespace testutil
