#pragma once

#include <string>
#include <vector>

#include "dgssm/tensor.hpp"

namespace dgssm {

// Per-sample saliency quality scores, all in [0,1].
struct EvalResult {
  double s_measure = 0.0;
  double f_measure_mean = 0.0;
  double e_measure_mean = 0.0;
  double mae = 0.0;
};

// A prediction/target pair flattened to H×W doubles. Predictions are soft
// values in [0,1]; targets must be binary {0,1}.
struct MetricInput {
  const std::vector<double>& pred;
  const std::vector<double>& gt;
  long height;
  long width;
};

// Structure measure: 0.5·object-similarity + 0.5·region-similarity, with the
// usual degenerate rules for empty / full masks and a floor at 0.
double s_measure(const MetricInput& in);

// F-beta (beta^2 = 0.3) averaged over the 255 thresholds k/256; prediction
// binarized at p >= tau; 0/0 ratios score 0.
double f_measure_mean(const MetricInput& in);

// Enhanced-alignment score averaged over the same 255 thresholds. The
// alignment matrix is computed on mean-centered binarized maps and the
// enhanced value (1+phi)^2/4 is averaged over all H·W pixels.
double e_measure_mean(const MetricInput& in);

double mae(const MetricInput& in);

EvalResult evaluate_sample(const MetricInput& in);

// One CSV row per sample plus a mean row, matching the documented schema
// sample_id,s_measure,f_measure_mean,e_measure_mean,mae.
std::string eval_csv(const std::vector<std::string>& ids, const std::vector<EvalResult>& rows);

}  // namespace dgssm
