#include "fusedet/frame_window.hpp"

#include <algorithm>

namespace fusedet {

namespace {
WindowIndex clamped_window(int t, int n, int frame_count, int lo_offset, int hi_offset,
                           int target_pos) {
  if (frame_count < 1) throw TensorError("window_indices: empty sequence");
  if (t < 0 || t >= frame_count) {
    throw TensorError("window_indices: t=" + std::to_string(t) + " out of range [0," +
                      std::to_string(frame_count) + ")");
  }
  if (n < 0) throw TensorError("window_indices: n must be >= 0");
  WindowIndex w;
  w.t = t;
  w.n = n;
  w.target_pos = target_pos;
  w.indices.reserve(static_cast<std::size_t>(hi_offset - lo_offset + 1));
  for (int off = lo_offset; off <= hi_offset; ++off) {
    w.indices.push_back(std::clamp(t + off, 0, frame_count - 1));
  }
  return w;
}
}  // namespace

WindowIndex window_indices(int t, int n, int frame_count) {
  return clamped_window(t, n, frame_count, -n, n, n);
}

WindowIndex window_indices_past(int t, int n, int frame_count) {
  return clamped_window(t, n, frame_count, -2 * n, 0, 2 * n);
}

std::string CacheStats::csv_row() const {
  return std::to_string(computes) + "," + std::to_string(hits) + "," + std::to_string(evictions);
}

FeatureCache::FeatureCache(std::size_t capacity) : capacity_(capacity) {
  if (capacity_ < 1) throw TensorError("FeatureCache capacity must be >= 1");
}

FeatureMapPtr FeatureCache::get_or_compute(int frame_index,
                                           const std::function<Tensor(int)>& compute) {
  if (auto it = entries_.find(frame_index); it != entries_.end()) {
    ++stats_.hits;
    return it->second;
  }
  auto map = std::make_shared<const Tensor>(compute(frame_index));
  ++stats_.computes;
  if (entries_.size() >= capacity_) {
    entries_.erase(entries_.begin());  // lowest frame index first
    ++stats_.evictions;
  }
  entries_.emplace(frame_index, map);
  return map;
}

std::vector<FeatureMapPtr> assemble_window(FeatureCache& cache, const WindowIndex& window,
                                           const std::function<Tensor(int)>& compute) {
  std::vector<FeatureMapPtr> maps;
  maps.reserve(window.indices.size());
  for (int idx : window.indices) maps.push_back(cache.get_or_compute(idx, compute));
  return maps;
}

}  // namespace fusedet
