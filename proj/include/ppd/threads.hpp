#pragma once

#include <cstdlib>
#include <string>
#include <thread>

#ifdef _OPENMP
#include <omp.h>
#endif

#include <Eigen/Core>

namespace ppd {

// Worker-thread cap. PPD_THREADS overrides the hardware default.
inline int thread_count() {
  if (const char* env = std::getenv("PPD_THREADS")) {
    int n = std::atoi(env);
    if (n > 0) return n;
  }
  unsigned hw = std::thread::hardware_concurrency();
  return hw ? static_cast<int>(hw) : 1;
}

inline void configure_threads() {
  int n = thread_count();
#ifdef _OPENMP
  omp_set_num_threads(n);
#endif
  Eigen::setNbThreads(n);
}

}  // namespace ppd
