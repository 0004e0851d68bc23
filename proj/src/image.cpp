#include "shisr/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <vector>

namespace shisr {

Tensor load_png(const std::filesystem::path& path) {
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  if (!std::filesystem::exists(path)) throw IoError("image '" + path.string() + "' not found");
  if (!png_image_begin_read_from_file(&img, path.c_str())) {
    throw IoError("cannot decode PNG '" + path.string() + "': " + img.message);
  }
  const png_uint_32 fmt = img.format;
  if (!(fmt & PNG_FORMAT_FLAG_COLOR) || (fmt & PNG_FORMAT_FLAG_ALPHA) ||
      (fmt & PNG_FORMAT_FLAG_LINEAR)) {
    png_image_free(&img);
    throw IoError("PNG '" + path.string() + "' is not 8-bit RGB");
  }
  img.format = PNG_FORMAT_RGB;
  std::vector<unsigned char> pixels(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, pixels.data(), 0, nullptr)) {
    const std::string msg = img.message;
    png_image_free(&img);
    throw IoError("cannot decode PNG '" + path.string() + "': " + msg);
  }
  const int h = static_cast<int>(img.height);
  const int w = static_cast<int>(img.width);
  std::vector<Real> data(static_cast<std::size_t>(3) * h * w);
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  for (std::size_t p = 0; p < plane; ++p) {
    for (int c = 0; c < 3; ++c) data[c * plane + p] = static_cast<Real>(pixels[3 * p + c] / 255.0);
  }
  return Tensor::from({1, 3, h, w}, std::move(data));
}

void save_png(const std::filesystem::path& path, const Tensor& image) {
  const Shape& s = image.shape();
  if (s.n != 1 || s.c != 3) throw ShapeError("save_png: expected (1, 3, H, W), got " + s.str());
  const std::size_t plane = static_cast<std::size_t>(s.h) * s.w;
  std::vector<unsigned char> pixels(3 * plane);
  auto d = image.data();
  for (std::size_t p = 0; p < plane; ++p) {
    for (int c = 0; c < 3; ++c) {
      const double v = std::clamp(static_cast<double>(d[c * plane + p]), 0.0, 1.0);
      pixels[3 * p + c] = static_cast<unsigned char>(std::lround(v * 255.0));
    }
  }
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(s.w);
  img.height = static_cast<png_uint_32>(s.h);
  img.format = PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&img, path.c_str(), 0, pixels.data(), 0, nullptr)) {
    const std::string msg = img.message;
    png_image_free(&img);
    throw IoError("cannot write PNG '" + path.string() + "': " + msg);
  }
}

double cubic_kernel(double x) {
  constexpr double a = -0.5;
  x = std::abs(x);
  if (x <= 1.0) return ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0;
  if (x < 2.0) return ((a * x - 5.0 * a) * x + 8.0 * a) * x - 4.0 * a;
  return 0.0;
}

namespace {

struct Taps {
  std::vector<int> index;
  std::vector<double> weight;
  int per_output = 0;
};

Taps resample_taps(int in, int out) {
  const double scale = static_cast<double>(in) / out;
  const double stretch = std::max(1.0, scale);
  const double support = 2.0 * stretch;
  Taps t;
  t.per_output = static_cast<int>(std::ceil(2.0 * support)) + 1;
  t.index.resize(static_cast<std::size_t>(out) * t.per_output);
  t.weight.resize(t.index.size());
  for (int d = 0; d < out; ++d) {
    const double centre = (d + 0.5) * scale - 0.5;
    const int first = static_cast<int>(std::floor(centre - support)) + 1;
    double total = 0.0;
    for (int k = 0; k < t.per_output; ++k) {
      const int i = first + k;
      const double wgt = cubic_kernel((centre - i) / stretch);
      t.index[static_cast<std::size_t>(d) * t.per_output + k] = std::clamp(i, 0, in - 1);
      t.weight[static_cast<std::size_t>(d) * t.per_output + k] = wgt;
      total += wgt;
    }
    for (int k = 0; k < t.per_output; ++k) {
      t.weight[static_cast<std::size_t>(d) * t.per_output + k] /= total;
    }
  }
  return t;
}

}  // namespace

Tensor bicubic_resample(const Tensor& image, int out_h, int out_w) {
  const Shape& s = image.shape();
  if (out_h < 1 || out_w < 1) throw ShapeError("bicubic_resample: zero output size");
  if (s.h < 1 || s.w < 1) throw ShapeError("bicubic_resample: empty input " + s.str());
  const Taps ty = resample_taps(s.h, out_h);
  const Taps tx = resample_taps(s.w, out_w);
  const std::size_t planes = static_cast<std::size_t>(s.n) * s.c;
  auto src = image.data();
  std::vector<double> rows(static_cast<std::size_t>(s.h) * out_w);
  std::vector<Real> out(planes * out_h * out_w);
  for (std::size_t p = 0; p < planes; ++p) {
    const Real* sp = src.data() + p * s.h * s.w;
    for (int y = 0; y < s.h; ++y) {
      for (int x = 0; x < out_w; ++x) {
        double acc = 0.0;
        for (int k = 0; k < tx.per_output; ++k) {
          const std::size_t t = static_cast<std::size_t>(x) * tx.per_output + k;
          acc += tx.weight[t] * sp[y * s.w + tx.index[t]];
        }
        rows[static_cast<std::size_t>(y) * out_w + x] = acc;
      }
    }
    Real* op = out.data() + p * out_h * out_w;
    for (int y = 0; y < out_h; ++y) {
      for (int x = 0; x < out_w; ++x) {
        double acc = 0.0;
        for (int k = 0; k < ty.per_output; ++k) {
          const std::size_t t = static_cast<std::size_t>(y) * ty.per_output + k;
          acc += ty.weight[t] * rows[static_cast<std::size_t>(ty.index[t]) * out_w + x];
        }
        op[y * out_w + x] = static_cast<Real>(acc);
      }
    }
  }
  return Tensor::from({s.n, s.c, out_h, out_w}, std::move(out));
}

Tensor crop(const Tensor& image, int top, int left, int height, int width) {
  const Shape& s = image.shape();
  if (top < 0 || left < 0 || height < 1 || width < 1 || top + height > s.h ||
      left + width > s.w) {
    throw ShapeError("crop: window outside image " + s.str());
  }
  std::vector<Real> out(static_cast<std::size_t>(s.n) * s.c * height * width);
  auto d = image.data();
  std::size_t o = 0;
  for (int p = 0; p < s.n * s.c; ++p) {
    for (int y = 0; y < height; ++y) {
      const Real* row = d.data() + (static_cast<std::size_t>(p) * s.h + top + y) * s.w + left;
      std::copy_n(row, width, out.data() + o);
      o += width;
    }
  }
  return Tensor::from({s.n, s.c, height, width}, std::move(out));
}

Tensor batch_item(const Tensor& batch, int index) {
  const Shape& s = batch.shape();
  if (index < 0 || index >= s.n) {
    throw ShapeError("batch_item: index " + std::to_string(index) + " outside " + s.str());
  }
  const std::size_t len = static_cast<std::size_t>(s.c) * s.h * s.w;
  auto d = batch.data().subspan(index * len, len);
  return Tensor::from({1, s.c, s.h, s.w}, std::vector<Real>(d.begin(), d.end()));
}

}  // namespace shisr
