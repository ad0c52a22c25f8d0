#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "fusedet/tensor.hpp"

namespace fusedet {

using FeatureMapPtr = std::shared_ptr<const Tensor>;

/// The 2n+1 clamped frame indices around a target frame. Out-of-range
/// positions duplicate the first or last frame of the sequence.
struct WindowIndex {
  int t = 0;
  int n = 0;
  int target_pos = 0;        // window position holding frame t
  std::vector<int> indices;  // length 2n+1, each clamped to [0, T)
};

/// Symmetric window [t-n .. t+n], target at position n.
WindowIndex window_indices(int t, int n, int frame_count);

/// Past-only window [t-2n .. t], target at position 2n. Used by the
/// past-frames-only ablation rows.
WindowIndex window_indices_past(int t, int n, int frame_count);

struct CacheStats {
  std::int64_t computes = 0;
  std::int64_t hits = 0;
  std::int64_t evictions = 0;

  std::string csv_header() const { return "computes,hits,evictions"; }
  std::string csv_row() const;
};

/// Per-stream store of backbone feature maps so sequential inference
/// computes each frame once. Eviction removes the lowest frame index first;
/// capacity must cover the window for a sequential pass to stay compute-free.
class FeatureCache {
 public:
  explicit FeatureCache(std::size_t capacity);

  FeatureMapPtr get_or_compute(int frame_index, const std::function<Tensor(int)>& compute);

  bool resident(int frame_index) const { return entries_.count(frame_index) > 0; }
  std::size_t size() const { return entries_.size(); }
  std::size_t capacity() const { return capacity_; }
  const CacheStats& stats() const { return stats_; }
  void clear() { entries_.clear(); }

 private:
  std::size_t capacity_;
  std::map<int, FeatureMapPtr> entries_;  // ordered: begin() is the eviction victim
  CacheStats stats_;
};

/// Feature maps for a window, in window order. Duplicated boundary indices
/// alias the same cached tensor.
std::vector<FeatureMapPtr> assemble_window(FeatureCache& cache, const WindowIndex& window,
                                           const std::function<Tensor(int)>& compute);

}  // namespace fusedet
