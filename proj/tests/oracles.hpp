#pragma once

// Scalar reference implementations written independently of the library:
// plain loops over double vectors, no shared helpers.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

namespace oracle {

inline double keys_cubic(double x) {
  x = std::fabs(x);
  if (x < 1.0) return 1.5 * x * x * x - 2.5 * x * x + 1.0;
  if (x < 2.0) return -0.5 * x * x * x + 2.5 * x * x - 4.0 * x + 2.0;
  return 0.0;
}

// Catmull-Rom spline between p1 and p2 at t in [0, 1].
inline double catmull_rom(double p0, double p1, double p2, double p3, double t) {
  return 0.5 * (2.0 * p1 + (-p0 + p2) * t + (2.0 * p0 - 5.0 * p1 + 4.0 * p2 - p3) * t * t +
                (-p0 + 3.0 * p1 - 3.0 * p2 + p3) * t * t * t);
}

// 1-D resample with half-pixel centres, edge clamping and a kernel stretched
// by the shrink factor; every source sample within reach is visited.
inline std::vector<double> resample_row(const std::vector<double>& in, int out_size) {
  const int n = static_cast<int>(in.size());
  const double scale = static_cast<double>(n) / out_size;
  const double stretch = std::max(1.0, scale);
  std::vector<double> out(out_size);
  for (int d = 0; d < out_size; ++d) {
    const double c = (d + 0.5) * scale - 0.5;
    double acc = 0.0;
    double total = 0.0;
    for (int i = static_cast<int>(std::floor(c - 2.0 * stretch)) - 1;
         i <= static_cast<int>(std::ceil(c + 2.0 * stretch)) + 1; ++i) {
      const double w = keys_cubic((c - i) / stretch);
      if (w == 0.0) continue;
      acc += w * in[std::min(std::max(i, 0), n - 1)];
      total += w;
    }
    out[d] = acc / total;
  }
  return out;
}

// Bilinear resize of one h x w plane, half-pixel centres, clamped edges.
inline std::vector<double> bilinear_plane(const std::vector<double>& in, int h, int w, int oh,
                                          int ow) {
  std::vector<double> out(static_cast<std::size_t>(oh) * ow);
  auto src = [](int d, int in_size, int out_size) {
    double c = (d + 0.5) * in_size / out_size - 0.5;
    return std::min(std::max(c, 0.0), static_cast<double>(in_size - 1));
  };
  for (int y = 0; y < oh; ++y) {
    const double sy = src(y, h, oh);
    const int y0 = static_cast<int>(std::floor(sy));
    const int y1 = std::min(y0 + 1, h - 1);
    const double fy = sy - y0;
    for (int x = 0; x < ow; ++x) {
      const double sx = src(x, w, ow);
      const int x0 = static_cast<int>(std::floor(sx));
      const int x1 = std::min(x0 + 1, w - 1);
      const double fx = sx - x0;
      out[y * ow + x] = (1 - fy) * ((1 - fx) * in[y0 * w + x0] + fx * in[y0 * w + x1]) +
                        fy * ((1 - fx) * in[y1 * w + x0] + fx * in[y1 * w + x1]);
    }
  }
  return out;
}

inline double psnr(const std::vector<double>& a, const std::vector<double>& b, double peak) {
  double se = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) se += (a[i] - b[i]) * (a[i] - b[i]);
  const double mse = se / a.size();
  if (mse == 0.0) return 100.0;
  return std::min(100.0, 10.0 * std::log10(peak * peak / mse));
}

// Mean SSIM of one h x w plane with a full 2-D Gaussian window evaluated
// directly at each valid position.
inline double ssim_plane(const std::vector<double>& a, const std::vector<double>& b, int h, int w,
                         int win = 11, double sigma = 1.5, double k1 = 0.01, double k2 = 0.03,
                         double peak = 1.0) {
  std::vector<double> g(static_cast<std::size_t>(win) * win);
  const double mid = (win - 1) / 2.0;
  double gs = 0.0;
  for (int y = 0; y < win; ++y) {
    for (int x = 0; x < win; ++x) {
      const double r2 = (y - mid) * (y - mid) + (x - mid) * (x - mid);
      g[y * win + x] = std::exp(-r2 / (2.0 * sigma * sigma));
      gs += g[y * win + x];
    }
  }
  for (double& v : g) v /= gs;
  const double c1 = (k1 * peak) * (k1 * peak);
  const double c2 = (k2 * peak) * (k2 * peak);
  double sum = 0.0;
  int count = 0;
  for (int oy = 0; oy + win <= h; ++oy) {
    for (int ox = 0; ox + win <= w; ++ox) {
      double ma = 0, mb = 0, saa = 0, sbb = 0, sab = 0;
      for (int y = 0; y < win; ++y) {
        for (int x = 0; x < win; ++x) {
          const double wt = g[y * win + x];
          const double va = a[(oy + y) * w + ox + x];
          const double vb = b[(oy + y) * w + ox + x];
          ma += wt * va;
          mb += wt * vb;
          saa += wt * va * va;
          sbb += wt * vb * vb;
          sab += wt * va * vb;
        }
      }
      const double va = saa - ma * ma;
      const double vb = sbb - mb * mb;
      const double cov = sab - ma * mb;
      sum += ((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
      ++count;
    }
  }
  return sum / count;
}

inline std::vector<double> softmax(const std::vector<double>& z) {
  double total = 0.0;
  std::vector<double> p(z.size());
  for (std::size_t i = 0; i < z.size(); ++i) total += std::exp(z[i]);
  for (std::size_t i = 0; i < z.size(); ++i) p[i] = std::exp(z[i]) / total;
  return p;
}

// logits row-major (n, k).
inline double focal(const std::vector<double>& logits, const std::vector<int>& labels, int k,
                    double gamma, const std::vector<double>& alpha = {}) {
  double sum = 0.0;
  const int n = static_cast<int>(labels.size());
  for (int i = 0; i < n; ++i) {
    const std::vector<double> row(logits.begin() + i * k, logits.begin() + (i + 1) * k);
    const double p = softmax(row)[labels[i]];
    const double a = alpha.empty() ? 1.0 : alpha[labels[i]];
    sum += -a * std::pow(1.0 - p, gamma) * std::log(p);
  }
  return sum / n;
}

// z_sr, z_hr row-major (n, d).
inline double nt_xent(const std::vector<double>& z_sr, const std::vector<double>& z_hr, int n,
                      int d, double tau) {
  std::vector<std::vector<double>> v;
  for (int s = 0; s < 2; ++s) {
    const std::vector<double>& z = s == 0 ? z_sr : z_hr;
    for (int i = 0; i < n; ++i) {
      std::vector<double> row(z.begin() + i * d, z.begin() + (i + 1) * d);
      double norm = 0.0;
      for (double x : row) norm += x * x;
      norm = std::sqrt(norm);
      for (double& x : row) x /= norm;
      v.push_back(row);
    }
  }
  auto cos = [&](int a, int b) {
    double s = 0.0;
    for (int j = 0; j < d; ++j) s += v[a][j] * v[b][j];
    return s;
  };
  double total = 0.0;
  for (int a = 0; a < 2 * n; ++a) {
    const int pos = a < n ? a + n : a - n;
    double denom = 0.0;
    for (int b = 0; b < 2 * n; ++b) {
      if (b != a) denom += std::exp(cos(a, b) / tau);
    }
    total += -std::log(std::exp(cos(a, pos) / tau) / denom);
  }
  return total / (2 * n);
}

// Scalar ADAM on f(x) = x^2; returns x after each step.
inline std::vector<double> adam_on_square(double x, double lr, int steps, double b1 = 0.9,
                                          double b2 = 0.999, double eps = 1e-8) {
  double m = 0.0, v = 0.0;
  std::vector<double> out;
  for (int t = 1; t <= steps; ++t) {
    const double g = 2.0 * x;
    m = b1 * m + (1 - b1) * g;
    v = b2 * v + (1 - b2) * g * g;
    const double mh = m / (1 - std::pow(b1, t));
    const double vh = v / (1 - std::pow(b2, t));
    x -= lr * mh / (std::sqrt(vh) + eps);
    out.push_back(x);
  }
  return out;
}

}  // namespace oracle
