#include "dgssm/bench.hpp"

#include <chrono>
#include <cmath>
#include <sstream>

#include "dgssm/scan.hpp"

namespace dgssm {

namespace {

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// Best-of-reps wall time for one invocation of fn.
template <typename F>
double best_time(int reps, F&& fn) {
  double best = 1e300;
  for (int r = 0; r < reps; ++r) {
    const auto t0 = std::chrono::steady_clock::now();
    fn();
    best = std::min(best, seconds_since(t0));
  }
  return best;
}

double max_abs_diff(const Tensor<double>& a, const Tensor<double>& b) {
  double m = 0;
  for (long i = 0; i < a.numel(); ++i)
    m = std::max(m, std::abs(a.data()[static_cast<size_t>(i)] -
                             b.data()[static_cast<size_t>(i)]));
  return m;
}

}  // namespace

std::string BenchReport::csv() const {
  std::ostringstream out;
  out << "kernel,length,Dh,threads,elements_per_sec,max_residual_vs_sequential\n";
  for (const BenchRow& r : rows) {
    char line[160];
    std::snprintf(line, sizeof(line), "%s,%ld,%ld,%d,%.6g,%.3e\n", r.kernel.c_str(), r.length,
                  r.state_dim, r.threads, r.elements_per_sec, r.max_residual);
    out << line;
  }
  return out.str();
}

BenchReport bench_scan(const std::vector<long>& lengths, long state_dim, int reps,
                       int n_threads) {
  if (lengths.empty()) throw Error("bench_scan: no lengths given");
  for (size_t i = 0; i + 1 < lengths.size(); ++i)
    if (lengths[i] > lengths[i + 1]) throw Error("bench_scan: lengths must ascend");
  if (state_dim <= 0) throw Error("bench_scan: state dim must be positive");
  if (reps <= 0) throw Error("bench_scan: reps must be positive");

  Rng rng(0xBE9CULL);
  BenchReport report;
  for (long n : lengths) {
    if (n <= 0) throw Error("bench_scan: lengths must be positive");
    ScanParams<double> params = ScanParams<double>::init(state_dim, state_dim, state_dim, rng);
    Tensor<double> x = Tensor<double>::randn(Shape{state_dim, 1, n}, rng, 1.0);

    Tensor<double> ref;
    const double t_seq = best_time(reps, [&] {
      ref = scan_sequential(x, params, ScanDirection::kLeftToRight);
    });
    Tensor<double> par;
    const double t_par = best_time(reps, [&] {
      par = scan_parallel(x, params, ScanDirection::kLeftToRight, n_threads);
    });

    const double tokens = static_cast<double>(n);
    report.rows.push_back({"sequential", n, state_dim, 1, tokens / t_seq, 0.0});
    report.rows.push_back(
        {"parallel", n, state_dim, n_threads, tokens / t_par, max_abs_diff(ref, par)});
  }
  return report;
}

}  // namespace dgssm
