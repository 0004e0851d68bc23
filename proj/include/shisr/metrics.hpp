#pragma once

#include <array>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "shisr/data.hpp"
#include "shisr/tensor.hpp"

namespace shisr {

enum class ColorSpace {
  RGB,  ///< every channel compared, results averaged
  Y,    ///< BT.601 luma only
};

/// Cap returned for identical images.
inline constexpr double kPsnrCap = 100.0;

/// 10 log10(peak^2 / MSE) over all elements of two equally shaped tensors.
double psnr(const Tensor& a, const Tensor& b, double peak = 1.0,
            ColorSpace space = ColorSpace::RGB);

struct SsimOptions {
  int window = 11;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
  double peak = 1.0;
  ColorSpace space = ColorSpace::RGB;
};

/// Mean SSIM over the valid (unpadded) window positions of every image plane.
double ssim(const Tensor& a, const Tensor& b, const SsimOptions& options = {});

/// Normalized 1-D Gaussian taps.
std::vector<double> gaussian_window(int size, double sigma);

/// BT.601 luma of a (n, 3, h, w) image in [0, 1], as (n, 1, h, w).
Tensor rgb_to_y(const Tensor& rgb);

struct Confusion {
  int n_classes = 0;
  std::vector<long> counts;  ///< row-major, rows = truth, cols = prediction
  long total = 0;

  long at(int truth, int pred) const { return counts[truth * n_classes + pred]; }
  long row_sum(int truth) const;
  long correct() const;
  double accuracy() const;
  /// Per-class recall; NaN for classes without samples.
  std::vector<double> recall() const;
  void merge(const Confusion& other);
};

Confusion accuracy_and_confusion(std::span<const int> preds, std::span<const int> labels,
                                 int n_classes = 8);

/// Metrics of one (scale, magnification) group. `magnification` is "all" for
/// the overall row. PSNR/SSIM are NaN when the run did not produce images.
struct MetricRow {
  int scale = 0;
  std::string magnification;
  long count = 0;
  double psnr_db = 0.0;
  double ssim = 0.0;
  Confusion confusion;
};

/// Collects per-image results; rows come out in a fixed order (40x, 100x,
/// 200x, 400x, all), skipping empty magnifications.
class MetricAccumulator {
 public:
  MetricAccumulator(int scale, int n_classes = 8);

  /// `psnr_db`/`ssim_value` may be NaN when only classification is evaluated.
  void add(Magnification magnification, int truth, int pred, double psnr_db, double ssim_value);
  std::vector<MetricRow> rows() const;
  long count() const;

 private:
  struct Group {
    long count = 0;
    long image_count = 0;
    double psnr_sum = 0.0;
    double ssim_sum = 0.0;
    Confusion confusion;
  };
  int scale_;
  int n_classes_;
  std::array<Group, 4> groups_;
};

/// scale,magnification,count,psnr_db,ssim,accuracy,recall_<class>...
std::string metrics_csv(const std::vector<MetricRow>& rows);
/// scale,magnification,truth,pred,count for every cell.
std::string confusion_csv(const std::vector<MetricRow>& rows);
/// Aligned text table for terminals.
std::string metrics_table(const std::vector<MetricRow>& rows);

}  // namespace shisr
