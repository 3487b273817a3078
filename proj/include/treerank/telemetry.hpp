#pragma once

#include <atomic>
#include <cstdint>

namespace treerank {

// Process-wide call counters. Counting only observes; when disabled the
// increments are skipped and model outputs are unchanged.
struct CallCounts {
  std::uint64_t set_attention = 0;
  std::uint64_t head_evals = 0;
  std::uint64_t feature_cross = 0;
};

class CallCounters {
 public:
  void add_set_attention(std::uint64_t n = 1) {
    if (enabled_.load(std::memory_order_relaxed)) set_attention_.fetch_add(n, std::memory_order_relaxed);
  }
  void add_head_evals(std::uint64_t n) {
    if (enabled_.load(std::memory_order_relaxed)) head_evals_.fetch_add(n, std::memory_order_relaxed);
  }
  void add_feature_cross(std::uint64_t n) {
    if (enabled_.load(std::memory_order_relaxed)) feature_cross_.fetch_add(n, std::memory_order_relaxed);
  }

  void set_enabled(bool on) { enabled_.store(on); }
  bool enabled() const { return enabled_.load(); }

  void reset() {
    set_attention_ = 0;
    head_evals_ = 0;
    feature_cross_ = 0;
  }

  CallCounts snapshot() const { return {set_attention_.load(), head_evals_.load(), feature_cross_.load()}; }

 private:
  std::atomic<bool> enabled_{true};
  std::atomic<std::uint64_t> set_attention_{0};
  std::atomic<std::uint64_t> head_evals_{0};
  std::atomic<std::uint64_t> feature_cross_{0};
};

inline CallCounters& counters() {
  static CallCounters instance;
  return instance;
}

inline CallCounts operator-(const CallCounts& a, const CallCounts& b) {
  return {a.set_attention - b.set_attention, a.head_evals - b.head_evals, a.feature_cross - b.feature_cross};
}

}  // namespace treerank
