#include "oncoclip/parallel.hpp"

#include <cstdlib>
#include <string>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace oncoclip::parallel {

namespace {
int g_threads = 1;
}

void set_threads(int n) {
  g_threads = n < 1 ? 1 : n;
#ifdef _OPENMP
  omp_set_num_threads(g_threads);
#endif
}

int threads() { return g_threads; }

int configure_threads(int requested) {
  int n = requested;
  if (const char* env = std::getenv("ONCOCLIP_THREADS"); env != nullptr && *env != '\0') {
    try {
      n = std::stoi(env);
    } catch (const std::exception&) {
      n = requested;
    }
  }
  set_threads(n);
  return threads();
}

}  // namespace oncoclip::parallel
