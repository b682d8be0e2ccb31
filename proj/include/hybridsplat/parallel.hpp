#pragma once

#include <cstdlib>
#include <exception>
#include <string>
#include <thread>
#include <vector>

namespace hybridsplat {

/// Worker count from HYBRIDSPLAT_WORKERS, else the hardware concurrency.
inline int default_worker_count() {
  if (const char* env = std::getenv("HYBRIDSPLAT_WORKERS")) {
    try {
      const int n = std::stoi(env);
      if (n >= 1) return n;
    } catch (const std::exception&) {
    }
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

/// Static partition of [0, count) into `workers` contiguous chunks; worker w
/// always receives the same chunk, which keeps per-worker reductions
/// reproducible for a fixed worker count.
template <class Fn>
void parallel_chunks(std::size_t count, int workers, Fn&& fn) {
  if (workers < 1) workers = 1;
  if (static_cast<std::size_t>(workers) > count) workers = count == 0 ? 1 : static_cast<int>(count);
  auto chunk = [&](int w) {
    const std::size_t begin = count * w / workers;
    const std::size_t end = count * (w + 1) / workers;
    fn(w, begin, end);
  };
  if (workers == 1) {
    chunk(0);
    return;
  }
  std::vector<std::thread> threads;
  std::vector<std::exception_ptr> errors(workers);
  threads.reserve(workers - 1);
  for (int w = 1; w < workers; ++w) {
    threads.emplace_back([&, w] {
      try {
        chunk(w);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  try {
    chunk(0);
  } catch (...) {
    errors[0] = std::current_exception();
  }
  for (auto& t : threads) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace hybridsplat
