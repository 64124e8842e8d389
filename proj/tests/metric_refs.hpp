#pragma once

#include <cfloat>
#include <cmath>
#include <vector>

// Brute-force metric definitions written as single straight-line loops so
// they share no structure with the library kernels they are checked against.

namespace ref {

double sm(const std::vector<double>& p, const std::vector<double>& g, long H, long W) {
  const double N = double(H * W);
  double gsum = 0, psum = 0;
  for (size_t i = 0; i < g.size(); ++i) {
    gsum += g[i];
    psum += p[i];
  }
  if (gsum == 0.0) return 1.0 - psum / N;
  if (gsum == N) return psum / N;

  auto masked_score = [&](bool fg) {
    double m = 0, cnt = 0;
    for (size_t i = 0; i < g.size(); ++i)
      if ((g[i] == 1.0) == fg) {
        m += fg ? p[i] : 1.0 - p[i];
        cnt += 1;
      }
    m /= cnt;
    double var = 0;
    for (size_t i = 0; i < g.size(); ++i)
      if ((g[i] == 1.0) == fg) {
        const double d = (fg ? p[i] : 1.0 - p[i]) - m;
        var += d * d;
      }
    const double sd = cnt > 1 ? std::sqrt(var / (cnt - 1.0)) : 0.0;
    return 2.0 * m / (m * m + 1.0 + sd + DBL_EPSILON);
  };
  const double mu = gsum / N;
  const double object_part = mu * masked_score(true) + (1.0 - mu) * masked_score(false);

  double cxs = 0, cys = 0;
  for (long y = 0; y < H; ++y)
    for (long x = 0; x < W; ++x) {
      cxs += g[size_t(y * W + x)] * double(x + 1);
      cys += g[size_t(y * W + x)] * double(y + 1);
    }
  const long X = long(std::round(cxs / gsum)), Y = long(std::round(cys / gsum));

  auto block_ssim = [&](long y0, long y1, long x0, long x1) {
    const double n = double((y1 - y0) * (x1 - x0));
    double mx = 0, my = 0;
    for (long y = y0; y < y1; ++y)
      for (long x = x0; x < x1; ++x) {
        mx += p[size_t(y * W + x)];
        my += g[size_t(y * W + x)];
      }
    mx /= n;
    my /= n;
    double vx = 0, vy = 0, vxy = 0;
    for (long y = y0; y < y1; ++y)
      for (long x = x0; x < x1; ++x) {
        const double a = p[size_t(y * W + x)] - mx, b = g[size_t(y * W + x)] - my;
        vx += a * a;
        vy += b * b;
        vxy += a * b;
      }
    vx /= n - 1.0 + DBL_EPSILON;
    vy /= n - 1.0 + DBL_EPSILON;
    vxy /= n - 1.0 + DBL_EPSILON;
    const double num = 4.0 * mx * my * vxy;
    const double den = (mx * mx + my * my) * (vx + vy);
    if (num != 0.0) return num / (den + DBL_EPSILON);
    return den == 0.0 ? 1.0 : 0.0;
  };
  double region_part = 0;
  if (Y > 0 && X > 0) region_part += double(X * Y) / N * block_ssim(0, Y, 0, X);
  if (Y > 0 && X < W) region_part += double((W - X) * Y) / N * block_ssim(0, Y, X, W);
  if (Y < H && X > 0) region_part += double(X * (H - Y)) / N * block_ssim(Y, H, 0, X);
  if (Y < H && X < W) region_part += double((W - X) * (H - Y)) / N * block_ssim(Y, H, X, W);

  const double s = 0.5 * object_part + 0.5 * region_part;
  return s < 0.0 ? 0.0 : s;
}

double fm(const std::vector<double>& p, const std::vector<double>& g) {
  double acc = 0;
  for (int k = 1; k <= 255; ++k) {
    const double tau = k / 256.0;
    double tp = 0, predpos = 0, gtpos = 0;
    for (size_t i = 0; i < p.size(); ++i) {
      const bool b = p[i] >= tau;
      predpos += b;
      gtpos += g[i];
      tp += (b && g[i] == 1.0) ? 1.0 : 0.0;
    }
    const double prec = predpos > 0 ? tp / predpos : 0.0;
    const double rec = gtpos > 0 ? tp / gtpos : 0.0;
    acc += (0.3 * prec + rec) > 0 ? 1.3 * prec * rec / (0.3 * prec + rec) : 0.0;
  }
  return acc / 255.0;
}

double em(const std::vector<double>& p, const std::vector<double>& g) {
  const double N = double(p.size());
  double gmean = 0;
  for (double v : g) gmean += v;
  gmean /= N;
  double acc = 0;
  for (int k = 1; k <= 255; ++k) {
    const double tau = k / 256.0;
    double term = 0;
    if (gmean == 0.0 || gmean == 1.0) {
      for (size_t i = 0; i < p.size(); ++i) {
        const double b = p[i] >= tau ? 1.0 : 0.0;
        term += gmean == 1.0 ? b : 1.0 - b;
      }
    } else {
      double bmean = 0;
      for (double v : p) bmean += v >= tau ? 1.0 : 0.0;
      bmean /= N;
      for (size_t i = 0; i < p.size(); ++i) {
        const double a = (p[i] >= tau ? 1.0 : 0.0) - bmean;
        const double b = g[i] - gmean;
        const double phi = 2.0 * a * b / (a * a + b * b + DBL_EPSILON);
        term += (1.0 + phi) * (1.0 + phi) / 4.0;
      }
    }
    acc += term / N;
  }
  return acc / 255.0;
}

}  // namespace ref
