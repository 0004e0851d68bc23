#include "shisr/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>

#include "shisr/cf_net.hpp"

namespace shisr {

namespace {

void check_pair(const Tensor& a, const Tensor& b, const char* what) {
  if (!a.defined() || !b.defined()) throw ShapeError(std::string(what) + ": undefined image");
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(what) + ": shape mismatch " + a.shape().str() + " vs " +
                     b.shape().str());
  }
  if (a.numel() == 0) throw ShapeError(std::string(what) + ": empty images");
}

std::pair<Tensor, Tensor> in_space(const Tensor& a, const Tensor& b, ColorSpace space) {
  if (space == ColorSpace::RGB) return {a, b};
  return {rgb_to_y(a), rgb_to_y(b)};
}

}  // namespace

Tensor rgb_to_y(const Tensor& rgb) {
  const Shape& s = rgb.shape();
  if (s.c != 3) throw ShapeError("rgb_to_y: expected 3 channels, got " + s.str());
  const std::size_t plane = static_cast<std::size_t>(s.h) * s.w;
  auto d = rgb.data();
  std::vector<Real> y(static_cast<std::size_t>(s.n) * plane);
  for (int n = 0; n < s.n; ++n) {
    const Real* base = d.data() + static_cast<std::size_t>(n) * 3 * plane;
    for (std::size_t i = 0; i < plane; ++i) {
      const double v = (16.0 + 65.481 * base[i] + 128.553 * base[plane + i] +
                        24.966 * base[2 * plane + i]) / 255.0;
      y[n * plane + i] = static_cast<Real>(v);
    }
  }
  return Tensor::from({s.n, 1, s.h, s.w}, std::move(y));
}

double psnr(const Tensor& a, const Tensor& b, double peak, ColorSpace space) {
  check_pair(a, b, "psnr");
  const auto [x, y] = in_space(a, b, space);
  auto da = x.data();
  auto db = y.data();
  double mse = 0.0;
  for (std::size_t i = 0; i < da.size(); ++i) {
    const double d = static_cast<double>(da[i]) - db[i];
    mse += d * d;
  }
  mse /= static_cast<double>(da.size());
  if (mse == 0.0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(peak * peak / mse));
}

std::vector<double> gaussian_window(int size, double sigma) {
  if (size < 1 || !(sigma > 0)) throw ConfigError("gaussian_window: invalid size or sigma");
  std::vector<double> w(size);
  const double centre = (size - 1) / 2.0;
  double total = 0.0;
  for (int i = 0; i < size; ++i) {
    w[i] = std::exp(-(i - centre) * (i - centre) / (2.0 * sigma * sigma));
    total += w[i];
  }
  for (double& v : w) v /= total;
  return w;
}

namespace {

// Valid-region separable filtering of one plane.
std::vector<double> filter_valid(const std::vector<double>& img, int h, int w,
                                 const std::vector<double>& g) {
  const int k = static_cast<int>(g.size());
  const int oh = h - k + 1;
  const int ow = w - k + 1;
  std::vector<double> rows(static_cast<std::size_t>(h) * ow);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < ow; ++x) {
      double acc = 0.0;
      for (int t = 0; t < k; ++t) acc += g[t] * img[static_cast<std::size_t>(y) * w + x + t];
      rows[static_cast<std::size_t>(y) * ow + x] = acc;
    }
  }
  std::vector<double> out(static_cast<std::size_t>(oh) * ow);
  for (int y = 0; y < oh; ++y) {
    for (int x = 0; x < ow; ++x) {
      double acc = 0.0;
      for (int t = 0; t < k; ++t) acc += g[t] * rows[static_cast<std::size_t>(y + t) * ow + x];
      out[static_cast<std::size_t>(y) * ow + x] = acc;
    }
  }
  return out;
}

}  // namespace

double ssim(const Tensor& a, const Tensor& b, const SsimOptions& o) {
  check_pair(a, b, "ssim");
  const auto [x, y] = in_space(a, b, o.space);
  const Shape& s = x.shape();
  if (s.h < o.window || s.w < o.window) {
    throw ShapeError("ssim: image " + s.str() + " smaller than the " + std::to_string(o.window) +
                     "x" + std::to_string(o.window) + " window");
  }
  const std::vector<double> g = gaussian_window(o.window, o.sigma);
  const double c1 = (o.k1 * o.peak) * (o.k1 * o.peak);
  const double c2 = (o.k2 * o.peak) * (o.k2 * o.peak);
  const std::size_t plane = static_cast<std::size_t>(s.h) * s.w;
  auto da = x.data();
  auto db = y.data();
  double total = 0.0;
  std::size_t count = 0;
  std::vector<double> pa(plane), pb(plane), aa(plane), bb(plane), ab(plane);
  for (int p = 0; p < s.n * s.c; ++p) {
    for (std::size_t i = 0; i < plane; ++i) {
      pa[i] = da[p * plane + i];
      pb[i] = db[p * plane + i];
      aa[i] = pa[i] * pa[i];
      bb[i] = pb[i] * pb[i];
      ab[i] = pa[i] * pb[i];
    }
    const auto mu_a = filter_valid(pa, s.h, s.w, g);
    const auto mu_b = filter_valid(pb, s.h, s.w, g);
    const auto e_aa = filter_valid(aa, s.h, s.w, g);
    const auto e_bb = filter_valid(bb, s.h, s.w, g);
    const auto e_ab = filter_valid(ab, s.h, s.w, g);
    for (std::size_t i = 0; i < mu_a.size(); ++i) {
      const double va = e_aa[i] - mu_a[i] * mu_a[i];
      const double vb = e_bb[i] - mu_b[i] * mu_b[i];
      const double cov = e_ab[i] - mu_a[i] * mu_b[i];
      total += ((2.0 * mu_a[i] * mu_b[i] + c1) * (2.0 * cov + c2)) /
               ((mu_a[i] * mu_a[i] + mu_b[i] * mu_b[i] + c1) * (va + vb + c2));
    }
    count += mu_a.size();
  }
  return total / static_cast<double>(count);
}

long Confusion::row_sum(int truth) const {
  long s = 0;
  for (int p = 0; p < n_classes; ++p) s += at(truth, p);
  return s;
}

long Confusion::correct() const {
  long s = 0;
  for (int k = 0; k < n_classes; ++k) s += at(k, k);
  return s;
}

double Confusion::accuracy() const {
  return total == 0 ? std::numeric_limits<double>::quiet_NaN()
                    : static_cast<double>(correct()) / static_cast<double>(total);
}

std::vector<double> Confusion::recall() const {
  std::vector<double> r(n_classes);
  for (int k = 0; k < n_classes; ++k) {
    const long row = row_sum(k);
    r[k] = row == 0 ? std::numeric_limits<double>::quiet_NaN()
                    : static_cast<double>(at(k, k)) / static_cast<double>(row);
  }
  return r;
}

void Confusion::merge(const Confusion& other) {
  if (other.n_classes != n_classes) throw ShapeError("Confusion::merge: class count mismatch");
  for (std::size_t i = 0; i < counts.size(); ++i) counts[i] += other.counts[i];
  total += other.total;
}

Confusion accuracy_and_confusion(std::span<const int> preds, std::span<const int> labels,
                                 int n_classes) {
  if (preds.size() != labels.size()) {
    throw ShapeError("accuracy_and_confusion: " + std::to_string(preds.size()) +
                     " predictions for " + std::to_string(labels.size()) + " labels");
  }
  Confusion c;
  c.n_classes = n_classes;
  c.counts.assign(static_cast<std::size_t>(n_classes) * n_classes, 0);
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (preds[i] < 0 || preds[i] >= n_classes || labels[i] < 0 || labels[i] >= n_classes) {
      throw ShapeError("accuracy_and_confusion: class id out of range at index " +
                       std::to_string(i));
    }
    ++c.counts[static_cast<std::size_t>(labels[i]) * n_classes + preds[i]];
  }
  c.total = static_cast<long>(preds.size());
  return c;
}

MetricAccumulator::MetricAccumulator(int scale, int n_classes)
    : scale_(scale), n_classes_(n_classes) {
  for (Group& g : groups_) g.confusion = accuracy_and_confusion({}, {}, n_classes);
}

void MetricAccumulator::add(Magnification magnification, int truth, int pred, double psnr_db,
                            double ssim_value) {
  Group& g = groups_[static_cast<int>(magnification)];
  const int p[1] = {pred};
  const int t[1] = {truth};
  g.confusion.merge(accuracy_and_confusion(p, t, n_classes_));
  ++g.count;
  if (!std::isnan(psnr_db)) {
    ++g.image_count;
    g.psnr_sum += psnr_db;
    g.ssim_sum += ssim_value;
  }
}

long MetricAccumulator::count() const {
  long c = 0;
  for (const Group& g : groups_) c += g.count;
  return c;
}

std::vector<MetricRow> MetricAccumulator::rows() const {
  const double nan = std::numeric_limits<double>::quiet_NaN();
  std::vector<MetricRow> out;
  Group all;
  all.confusion = accuracy_and_confusion({}, {}, n_classes_);
  auto make_row = [&](const Group& g, std::string name) {
    MetricRow r;
    r.scale = scale_;
    r.magnification = std::move(name);
    r.count = g.count;
    r.psnr_db = g.image_count ? g.psnr_sum / g.image_count : nan;
    r.ssim = g.image_count ? g.ssim_sum / g.image_count : nan;
    r.confusion = g.confusion;
    return r;
  };
  for (int m = 0; m < 4; ++m) {
    const Group& g = groups_[m];
    if (g.count == 0) continue;
    out.push_back(make_row(g, to_string(kMagnifications[m])));
    all.count += g.count;
    all.image_count += g.image_count;
    all.psnr_sum += g.psnr_sum;
    all.ssim_sum += g.ssim_sum;
    all.confusion.merge(g.confusion);
  }
  out.push_back(make_row(all, "all"));
  return out;
}

namespace {

std::string fmt(double v, int digits = 6) {
  if (std::isnan(v)) return "nan";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string class_name(int k) {
  return k < kNumClasses ? kClassNames[k] : "class" + std::to_string(k);
}

}  // namespace

std::string metrics_csv(const std::vector<MetricRow>& rows) {
  std::ostringstream out;
  out << "scale,magnification,count,psnr_db,ssim,accuracy";
  const int k = rows.empty() ? kNumClasses : rows.front().confusion.n_classes;
  for (int c = 0; c < k; ++c) out << ",recall_" << class_name(c);
  out << '\n';
  for (const MetricRow& r : rows) {
    out << r.scale << ',' << r.magnification << ',' << r.count << ',' << fmt(r.psnr_db) << ','
        << fmt(r.ssim) << ',' << fmt(r.confusion.accuracy());
    for (double v : r.confusion.recall()) out << ',' << fmt(v);
    out << '\n';
  }
  return out.str();
}

std::string confusion_csv(const std::vector<MetricRow>& rows) {
  std::ostringstream out;
  out << "scale,magnification,truth,pred,count\n";
  for (const MetricRow& r : rows) {
    const int k = r.confusion.n_classes;
    for (int t = 0; t < k; ++t) {
      for (int p = 0; p < k; ++p) {
        out << r.scale << ',' << r.magnification << ',' << class_name(t) << ',' << class_name(p)
            << ',' << r.confusion.at(t, p) << '\n';
      }
    }
  }
  return out.str();
}

std::string metrics_table(const std::vector<MetricRow>& rows) {
  std::ostringstream out;
  char buf[160];
  std::snprintf(buf, sizeof buf, "%-6s %-6s %7s %10s %8s %9s\n", "scale", "mag", "count",
                "PSNR(dB)", "SSIM", "accuracy");
  out << buf;
  for (const MetricRow& r : rows) {
    std::snprintf(buf, sizeof buf, "x%-5d %-6s %7ld %10s %8s %8s%%\n", r.scale,
                  r.magnification.c_str(), r.count, fmt(r.psnr_db, 3).c_str(),
                  fmt(r.ssim, 4).c_str(), fmt(100.0 * r.confusion.accuracy(), 2).c_str());
    out << buf;
  }
  return out.str();
}

}  // namespace shisr
