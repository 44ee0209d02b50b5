// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace syncref {

/// Runs `body(task, worker)` for every task in [0, tasks) on up to `workers`
/// threads. Tasks are handed out dynamically, so callers must not let results
/// depend on which worker ran a task. The first exception is rethrown.
template <typename Body>
void parallel_for(std::size_t tasks, std::size_t workers, Body&& body) {
  workers = std::max<std::size_t>(1, std::min(workers, tasks));
  if (workers <= 1) {
    for (std::size_t t = 0; t < tasks; ++t) body(t, std::size_t{0});
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto run = [&](std::size_t worker) {
    try {
      for (std::size_t t = next.fetch_add(1); t < tasks; t = next.fetch_add(1)) {
        body(t, worker);
      }
    } catch (...) {
      std::lock_guard lock(failure_mutex);
      if (!failure) failure = std::current_exception();
      next.store(tasks);
    }
  };
  {
    std::vector<std::jthread> pool;
    pool.reserve(workers - 1);
    for (std::size_t w = 1; w < workers; ++w) pool.emplace_back(run, w);
    run(0);
  }
  if (failure) std::rethrow_exception(failure);
}

}  // namespace syncref
