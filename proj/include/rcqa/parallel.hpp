#pragma once

#include <cstddef>
#include <exception>

#if defined(_OPENMP)
#include <omp.h>
#endif

namespace rcqa {

// Batch kernels take an execution policy. kSerial is the reference path the
// tests compare against; kParallel splits independent instances across
// OpenMP threads. Every kernel writes per-index outputs and reduces in index
// order, so both policies produce bit-identical results.
enum class Exec { kSerial, kParallel };

inline int max_threads() {
#if defined(_OPENMP)
  return omp_get_max_threads();
#else
  return 1;
#endif
}

inline void set_threads(int n) {
#if defined(_OPENMP)
  if (n > 0) omp_set_num_threads(n);
#else
  (void)n;
#endif
}

// Calls fn(i) for i in [0, n). Under kParallel the first exception thrown
// by any iteration is rethrown on the calling thread after the loop.
template <class Fn>
void for_each_index(std::size_t n, Exec exec, Fn&& fn) {
  if (exec == Exec::kParallel) {
    const long count = static_cast<long>(n);
    std::exception_ptr error;
#pragma omp parallel for schedule(dynamic, 4)
    for (long i = 0; i < count; ++i) {
      try {
        fn(static_cast<std::size_t>(i));
      } catch (...) {
#pragma omp critical(rcqa_for_each_index)
        if (!error) error = std::current_exception();
      }
    }
    if (error) std::rethrow_exception(error);
  } else {
    for (std::size_t i = 0; i < n; ++i) fn(i);
  }
}

}  // namespace rcqa
