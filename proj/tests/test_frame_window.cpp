#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "fusedet/frame_window.hpp"

using namespace fusedet;

namespace {
Tensor tiny_map(int idx) { return Tensor({1, 1, 1}, static_cast<float>(idx)); }
}  // namespace

TEST_CASE("window_indices reproduces the duplicated-boundary examples") {
  CHECK(window_indices(1, 2, 6).indices == std::vector<int>{0, 0, 1, 2, 3});
  CHECK(window_indices(0, 2, 6).indices == std::vector<int>{0, 0, 0, 1, 2});
  CHECK(window_indices(5, 2, 6).indices == std::vector<int>{3, 4, 5, 5, 5});
  CHECK(window_indices(3, 0, 6).indices == std::vector<int>{3});
}

TEST_CASE("window_indices is monotone and centred on t") {
  const int T = 9, n = 2;
  std::vector<int> prev;
  for (int t = 0; t < T; ++t) {
    const WindowIndex w = window_indices(t, n, T);
    CHECK(w.indices[static_cast<std::size_t>(w.target_pos)] == t);
    CHECK(w.target_pos == n);
    if (!prev.empty()) {
      for (std::size_t k = 0; k < prev.size(); ++k) CHECK(w.indices[k] >= prev[k]);
    }
    prev = w.indices;
  }
}

TEST_CASE("past-only windows end at the target") {
  const WindowIndex w = window_indices_past(5, 2, 10);
  CHECK(w.indices == std::vector<int>{1, 2, 3, 4, 5});
  CHECK(w.target_pos == 4);
  const WindowIndex w0 = window_indices_past(0, 2, 10);
  CHECK(w0.indices == std::vector<int>{0, 0, 0, 0, 0});
}

TEST_CASE("window_indices argument errors") {
  CHECK_THROWS_AS(window_indices(6, 2, 6), TensorError);
  CHECK_THROWS_AS(window_indices(-1, 2, 6), TensorError);
  CHECK_THROWS_AS(window_indices(0, 2, 0), TensorError);
}

TEST_CASE("cache computes each index once") {
  FeatureCache cache(8);
  int calls = 0;
  const auto fn = [&](int idx) {
    ++calls;
    return tiny_map(idx);
  };
  auto a = cache.get_or_compute(3, fn);
  auto b = cache.get_or_compute(3, fn);
  CHECK(calls == 1);
  CHECK(a.get() == b.get());
  CHECK(cache.stats().computes == 1);
  CHECK(cache.stats().hits == 1);
}

TEST_CASE("sequential pass over T=10 with n=2 costs exactly 10 backbone calls") {
  const int T = 10, n = 2;
  FeatureCache cache(static_cast<std::size_t>(2 * n + 1));
  int calls = 0;
  const auto fn = [&](int idx) {
    ++calls;
    return tiny_map(idx);
  };
  for (int t = 0; t < T; ++t) {
    assemble_window(cache, window_indices(t, n, T), fn);
  }
  CHECK(calls == 10);
  CHECK(cache.stats().computes == 10);

  // The naive recompute cost for comparison: T * (2n+1) window entries.
  int naive = 0;
  for (int t = 0; t < T; ++t) naive += 2 * n + 1;
  CHECK(naive == 50);
}

TEST_CASE("lowest-index eviction trace") {
  FeatureCache cache(5);
  int calls = 0;
  const auto fn = [&](int idx) {
    ++calls;
    return tiny_map(idx);
  };
  for (int i = 0; i <= 4; ++i) cache.get_or_compute(i, fn);
  CHECK(calls == 5);
  cache.get_or_compute(5, fn);  // evicts 0
  CHECK(calls == 6);
  CHECK(!cache.resident(0));
  CHECK(cache.resident(5));
  cache.get_or_compute(0, fn);  // recompute
  CHECK(calls == 7);
  CHECK(cache.stats().computes == 7);
  CHECK(cache.stats().evictions == 2);
}

TEST_CASE("assemble_window aliases duplicated boundary entries") {
  FeatureCache cache(4);
  const auto fn = [&](int idx) { return tiny_map(idx); };
  auto maps = assemble_window(cache, window_indices(0, 1, 6), fn);
  REQUIRE(maps.size() == 3);
  CHECK(maps[0].get() == maps[1].get());  // both are frame 0, no copy
  CHECK(maps[0]->data[0] == 0.0f);
  CHECK(maps[2]->data[0] == 1.0f);

  auto single = assemble_window(cache, window_indices(2, 0, 6), fn);
  CHECK(single.size() == 1);
  CHECK(single[0]->data[0] == 2.0f);
}

TEST_CASE("cache stats export as a CSV row") {
  FeatureCache cache(2);
  const auto fn = [&](int idx) { return tiny_map(idx); };
  cache.get_or_compute(0, fn);
  cache.get_or_compute(0, fn);
  cache.get_or_compute(1, fn);
  cache.get_or_compute(2, fn);
  CHECK(cache.stats().csv_header() == "computes,hits,evictions");
  CHECK(cache.stats().csv_row() == "3,1,1");
}

TEST_CASE("backbone failures propagate") {
  FeatureCache cache(2);
  const auto fn = [&](int) -> Tensor { throw TensorError("backbone exploded"); };
  CHECK_THROWS_AS(cache.get_or_compute(0, fn), TensorError);
  CHECK(cache.stats().computes == 0);
  CHECK(cache.size() == 0);
}
