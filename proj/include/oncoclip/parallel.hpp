#pragma once

#include <cstddef>
#include <exception>
#include <mutex>

namespace oncoclip::parallel {

// Number of OpenMP worker threads used by the kernels. Defaults to 1 so that
// a plain run is bit-reproducible; kernels are written so that results do not
// depend on the thread count anyway (no floating-point reductions across
// threads).
void set_threads(int n);
int threads();

// Applies ONCOCLIP_THREADS when set, otherwise `requested`.
int configure_threads(int requested);

// Runs fn(i) for i in [0, n) across the worker threads. Each index must write
// only its own outputs. The first exception thrown is rethrown afterwards.
template <class Fn>
void for_each_index(std::size_t n, Fn&& fn) {
  std::exception_ptr error;
  std::mutex lock;
  const long long count = static_cast<long long>(n);
#pragma omp parallel for schedule(static) if (threads() > 1)
  for (long long i = 0; i < count; ++i) {
    try {
      fn(static_cast<std::size_t>(i));
    } catch (...) {
      std::lock_guard<std::mutex> guard(lock);
      if (!error) error = std::current_exception();
    }
  }
  if (error) std::rethrow_exception(error);
}

}  // namespace oncoclip::parallel
