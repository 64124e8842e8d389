#pragma once

#include <string>
#include <vector>

namespace dgssm {

// One timed kernel invocation at a given sequence length.
struct BenchRow {
  std::string kernel;  // "sequential" or "parallel"
  long length = 0;
  long state_dim = 0;
  int threads = 1;
  double elements_per_sec = 0;      // tokens processed per second, best of reps
  double max_residual = 0;          // max |out - sequential out|; 0 for the reference itself
};

struct BenchReport {
  std::vector<BenchRow> rows;
  // CSV with header kernel,length,Dh,threads,elements_per_sec,max_residual_vs_sequential
  std::string csv() const;
};

// Times the sequential and parallel scan kernels on random single-line
// inputs of the given lengths (ascending), reporting throughput and the
// parallel kernel's residual against the sequential reference.
BenchReport bench_scan(const std::vector<long>& lengths, long state_dim, int reps,
                       int n_threads);

}  // namespace dgssm
