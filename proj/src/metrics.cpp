#include "dgssm/metrics.hpp"

#include <cfloat>
#include <cmath>
#include <sstream>

#include "dgssm/common.hpp"

namespace dgssm {

namespace {

constexpr double kEps = DBL_EPSILON;

void check_input(const MetricInput& in) {
  const size_t n = static_cast<size_t>(in.height * in.width);
  if (in.height < 1 || in.width < 1 || in.pred.size() != n || in.gt.size() != n)
    throw Error("metric input does not match " + std::to_string(in.height) + "x" +
                std::to_string(in.width));
  for (double g : in.gt)
    if (g != 0.0 && g != 1.0) throw Error("metric target must be binary");
  for (double p : in.pred)
    if (!(p >= 0.0 && p <= 1.0)) throw Error("metric prediction must lie in [0,1]");
}

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

// Similarity of one region's values against a binary reference: 2x̄/(x̄²+1+σ),
// where x̄ and σ are mean and sample standard deviation of the masked values.
double object_score(const std::vector<double>& vals) {
  if (vals.empty()) return 0.0;
  const double n = static_cast<double>(vals.size());
  double mean = 0.0;
  for (double v : vals) mean += v;
  mean /= n;
  double var = 0.0;
  for (double v : vals) var += (v - mean) * (v - mean);
  const double sd = vals.size() > 1 ? std::sqrt(var / (n - 1.0)) : 0.0;
  return 2.0 * mean / (mean * mean + 1.0 + sd + kEps);
}

double s_object(const MetricInput& in) {
  std::vector<double> fg, bg;
  const size_t n = in.pred.size();
  for (size_t i = 0; i < n; ++i) {
    if (in.gt[i] == 1.0)
      fg.push_back(in.pred[i]);
    else
      bg.push_back(1.0 - in.pred[i]);
  }
  const double mu = static_cast<double>(fg.size()) / static_cast<double>(n);
  return mu * object_score(fg) + (1.0 - mu) * object_score(bg);
}

// SSIM-style similarity of one rectangular block of pred vs gt.
double region_ssim(const MetricInput& in, long y0, long y1, long x0, long x1) {
  const double n = static_cast<double>((y1 - y0) * (x1 - x0));
  double mx = 0.0, my = 0.0;
  for (long y = y0; y < y1; ++y)
    for (long x = x0; x < x1; ++x) {
      mx += in.pred[static_cast<size_t>(y * in.width + x)];
      my += in.gt[static_cast<size_t>(y * in.width + x)];
    }
  mx /= n;
  my /= n;
  double sx = 0.0, sy = 0.0, sxy = 0.0;
  for (long y = y0; y < y1; ++y)
    for (long x = x0; x < x1; ++x) {
      const double dx = in.pred[static_cast<size_t>(y * in.width + x)] - mx;
      const double dy = in.gt[static_cast<size_t>(y * in.width + x)] - my;
      sx += dx * dx;
      sy += dy * dy;
      sxy += dx * dy;
    }
  sx /= n - 1.0 + kEps;
  sy /= n - 1.0 + kEps;
  sxy /= n - 1.0 + kEps;
  const double a = 4.0 * mx * my * sxy;
  const double b = (mx * mx + my * my) * (sx + sy);
  if (a != 0.0) return a / (b + kEps);
  return b == 0.0 ? 1.0 : 0.0;
}

double s_region(const MetricInput& in) {
  // foreground centroid in 1-based coordinates, rounded half away from zero
  double total = 0.0, sx = 0.0, sy = 0.0;
  for (long y = 0; y < in.height; ++y)
    for (long x = 0; x < in.width; ++x) {
      const double g = in.gt[static_cast<size_t>(y * in.width + x)];
      total += g;
      sx += g * static_cast<double>(x + 1);
      sy += g * static_cast<double>(y + 1);
    }
  const long cx = static_cast<long>(std::round(sx / total));
  const long cy = static_cast<long>(std::round(sy / total));

  const double area = static_cast<double>(in.height * in.width);
  const long xs[3] = {0, cx, in.width};
  const long ys[3] = {0, cy, in.height};
  double score = 0.0;
  for (int ry = 0; ry < 2; ++ry)
    for (int rx = 0; rx < 2; ++rx) {
      const long h = ys[ry + 1] - ys[ry], w = xs[rx + 1] - xs[rx];
      if (h <= 0 || w <= 0) continue;  // centroid on the frame: block is empty, weight 0
      const double weight = static_cast<double>(h * w) / area;
      score += weight * region_ssim(in, ys[ry], ys[ry + 1], xs[rx], xs[rx + 1]);
    }
  return score;
}

}  // namespace

double s_measure(const MetricInput& in) {
  check_input(in);
  const double mu = mean_of(in.gt);
  if (mu == 0.0) return 1.0 - mean_of(in.pred);
  if (mu == 1.0) return mean_of(in.pred);
  const double s = 0.5 * s_object(in) + 0.5 * s_region(in);
  return s < 0.0 ? 0.0 : s;
}

double f_measure_mean(const MetricInput& in) {
  check_input(in);
  const double beta2 = 0.3;
  const size_t n = in.pred.size();
  double acc = 0.0;
  for (int k = 1; k <= 255; ++k) {
    const double tau = static_cast<double>(k) / 256.0;
    long tp = 0, fp = 0, fn = 0;
    for (size_t i = 0; i < n; ++i) {
      const bool b = in.pred[i] >= tau;
      if (b && in.gt[i] == 1.0)
        ++tp;
      else if (b)
        ++fp;
      else if (in.gt[i] == 1.0)
        ++fn;
    }
    const double prec = (tp + fp) > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
    const double rec = (tp + fn) > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0;
    const double denom = beta2 * prec + rec;
    acc += denom > 0.0 ? (1.0 + beta2) * prec * rec / denom : 0.0;
  }
  return acc / 255.0;
}

double e_measure_mean(const MetricInput& in) {
  check_input(in);
  const size_t n = in.pred.size();
  const double gt_mean = mean_of(in.gt);
  double acc = 0.0;
  for (int k = 1; k <= 255; ++k) {
    const double tau = static_cast<double>(k) / 256.0;
    double score = 0.0;
    if (gt_mean == 0.0) {
      for (size_t i = 0; i < n; ++i) score += in.pred[i] >= tau ? 0.0 : 1.0;
    } else if (gt_mean == 1.0) {
      for (size_t i = 0; i < n; ++i) score += in.pred[i] >= tau ? 1.0 : 0.0;
    } else {
      double bin_mean = 0.0;
      for (size_t i = 0; i < n; ++i) bin_mean += in.pred[i] >= tau ? 1.0 : 0.0;
      bin_mean /= static_cast<double>(n);
      for (size_t i = 0; i < n; ++i) {
        const double a = (in.pred[i] >= tau ? 1.0 : 0.0) - bin_mean;
        const double g = in.gt[i] - gt_mean;
        const double phi = 2.0 * a * g / (a * a + g * g + kEps);
        score += (1.0 + phi) * (1.0 + phi) / 4.0;
      }
    }
    acc += score / static_cast<double>(n);
  }
  return acc / 255.0;
}

double mae(const MetricInput& in) {
  check_input(in);
  double s = 0.0;
  for (size_t i = 0; i < in.pred.size(); ++i) s += std::abs(in.pred[i] - in.gt[i]);
  return s / static_cast<double>(in.pred.size());
}

EvalResult evaluate_sample(const MetricInput& in) {
  return EvalResult{s_measure(in), f_measure_mean(in), e_measure_mean(in), mae(in)};
}

std::string eval_csv(const std::vector<std::string>& ids, const std::vector<EvalResult>& rows) {
  if (ids.size() != rows.size()) throw Error("eval_csv: id/result count mismatch");
  std::ostringstream os;
  os << "sample_id,s_measure,f_measure_mean,e_measure_mean,mae\n";
  os.precision(9);
  os << std::fixed;
  EvalResult sum;
  for (size_t i = 0; i < rows.size(); ++i) {
    const EvalResult& r = rows[i];
    os << ids[i] << ',' << r.s_measure << ',' << r.f_measure_mean << ',' << r.e_measure_mean << ','
       << r.mae << '\n';
    sum.s_measure += r.s_measure;
    sum.f_measure_mean += r.f_measure_mean;
    sum.e_measure_mean += r.e_measure_mean;
    sum.mae += r.mae;
  }
  const double n = rows.empty() ? 1.0 : static_cast<double>(rows.size());
  os << "mean," << sum.s_measure / n << ',' << sum.f_measure_mean / n << ','
     << sum.e_measure_mean / n << ',' << sum.mae / n << '\n';
  return os.str();
}

}  // namespace dgssm
