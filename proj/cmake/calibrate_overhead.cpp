// Prints the resident bytes of an otherwise idle process that has loaded the
// OpenMP runtime.
#include <cstdio>

#include <omp.h>
#include <unistd.h>

int main() {
  volatile int threads = omp_get_max_threads();
  (void)threads;
  std::FILE* f = std::fopen("/proc/self/statm", "r");
  if (!f) return 1;
  unsigned long long size = 0, resident = 0;
  const int n = std::fscanf(f, "%llu %llu", &size, &resident);
  std::fclose(f);
  if (n != 2) return 1;
  std::printf("%llu", resident * static_cast<unsigned long long>(sysconf(_SC_PAGESIZE)));
  return 0;
}
