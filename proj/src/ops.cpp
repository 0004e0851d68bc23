#include "shisr/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace shisr {

using detail::make_result;
using detail::Node;

namespace {

struct PatternState {
  enum class Mode { Off, Record, Replay } mode = Mode::Off;
  std::vector<std::vector<std::size_t>> choices;
  std::size_t cursor = 0;
};

thread_local PatternState pattern;

}  // namespace

FrozenPattern::FrozenPattern() {
  if (pattern.mode != PatternState::Mode::Off) throw Error("FrozenPattern: already active");
  pattern.mode = PatternState::Mode::Record;
  pattern.choices.clear();
  pattern.cursor = 0;
}

FrozenPattern::~FrozenPattern() {
  pattern.mode = PatternState::Mode::Off;
  pattern.choices.clear();
}

void FrozenPattern::replay() {
  pattern.mode = PatternState::Mode::Replay;
  pattern.cursor = 0;
}

bool detail::pattern_active() { return pattern.mode != PatternState::Mode::Off; }

void detail::freeze_choices(std::vector<std::size_t>& choices) {
  if (pattern.mode == PatternState::Mode::Record) {
    pattern.choices.push_back(choices);
  } else if (pattern.mode == PatternState::Mode::Replay) {
    if (pattern.cursor >= pattern.choices.size() ||
        pattern.choices[pattern.cursor].size() != choices.size()) {
      throw Error("FrozenPattern: replayed forward pass differs from the recorded one");
    }
    choices = pattern.choices[pattern.cursor++];
  }
}

namespace {

bool wants_grad(const Node& self, std::size_t i) { return self.inputs[i]->requires_grad; }

[[noreturn]] void shape_mismatch(const char* op, const Shape& a, const Shape& b) {
  throw ShapeError(std::string(op) + ": shape mismatch " + a.str() + " vs " + b.str());
}

void require_defined(const char* op, const Tensor& t) {
  if (!t.defined()) throw Error(std::string(op) + ": undefined input tensor");
}

struct ConvGeom {
  int n, ci, h, w, co, k, ho, wo, stride, pad, dil;
  int col_rows() const { return ci * k * k; }
  int col_cols() const { return ho * wo; }
};

// cols is (ci*k*k) x (ho*wo); out-of-image taps are explicit zeros.
void im2col(const Real* x, const ConvGeom& g, Real* cols) {
  const int plane = g.col_cols();
  for (int c = 0; c < g.ci; ++c) {
    const Real* xc = x + static_cast<std::size_t>(c) * g.h * g.w;
    for (int ky = 0; ky < g.k; ++ky) {
      for (int kx = 0; kx < g.k; ++kx) {
        Real* row = cols + static_cast<std::size_t>((c * g.k + ky) * g.k + kx) * plane;
        for (int oy = 0; oy < g.ho; ++oy) {
          const int iy = oy * g.stride - g.pad + ky * g.dil;
          for (int ox = 0; ox < g.wo; ++ox) {
            const int ix = ox * g.stride - g.pad + kx * g.dil;
            row[oy * g.wo + ox] =
                (iy >= 0 && iy < g.h && ix >= 0 && ix < g.w) ? xc[iy * g.w + ix] : Real(0);
          }
        }
      }
    }
  }
}

void col2im_add(const Real* cols, const ConvGeom& g, Real* dx) {
  const int plane = g.col_cols();
  for (int c = 0; c < g.ci; ++c) {
    Real* dc = dx + static_cast<std::size_t>(c) * g.h * g.w;
    for (int ky = 0; ky < g.k; ++ky) {
      for (int kx = 0; kx < g.k; ++kx) {
        const Real* row = cols + static_cast<std::size_t>((c * g.k + ky) * g.k + kx) * plane;
        for (int oy = 0; oy < g.ho; ++oy) {
          const int iy = oy * g.stride - g.pad + ky * g.dil;
          if (iy < 0 || iy >= g.h) continue;
          for (int ox = 0; ox < g.wo; ++ox) {
            const int ix = ox * g.stride - g.pad + kx * g.dil;
            if (ix < 0 || ix >= g.w) continue;
            dc[iy * g.w + ix] += row[oy * g.wo + ox];
          }
        }
      }
    }
  }
}

void conv_forward_im2col(const Real* x, const Real* wt, const Real* bias, const ConvGeom& g,
                         Real* out) {
  const int rows = g.col_rows();
  const int plane = g.col_cols();
  std::vector<Real> cols(static_cast<std::size_t>(rows) * plane);
  for (int b = 0; b < g.n; ++b) {
    im2col(x + static_cast<std::size_t>(b) * g.ci * g.h * g.w, g, cols.data());
    Real* ob = out + static_cast<std::size_t>(b) * g.co * plane;
    for (int o = 0; o < g.co; ++o) {
      Real* orow = ob + static_cast<std::size_t>(o) * plane;
      std::fill(orow, orow + plane, Real(0));
      const Real* wrow = wt + static_cast<std::size_t>(o) * rows;
      for (int r = 0; r < rows; ++r) {
        const Real wv = wrow[r];
        const Real* crow = cols.data() + static_cast<std::size_t>(r) * plane;
        for (int p = 0; p < plane; ++p) orow[p] += wv * crow[p];
      }
      if (bias) {
        for (int p = 0; p < plane; ++p) orow[p] += bias[o];
      }
    }
  }
}

void conv_forward_direct(const Real* x, const Real* wt, const Real* bias, const ConvGeom& g,
                         Real* out) {
  for (int b = 0; b < g.n; ++b) {
    const Real* xb = x + static_cast<std::size_t>(b) * g.ci * g.h * g.w;
    for (int o = 0; o < g.co; ++o) {
      for (int oy = 0; oy < g.ho; ++oy) {
        for (int ox = 0; ox < g.wo; ++ox) {
          Real acc = 0;
          for (int c = 0; c < g.ci; ++c) {
            for (int ky = 0; ky < g.k; ++ky) {
              const int iy = oy * g.stride - g.pad + ky * g.dil;
              for (int kx = 0; kx < g.k; ++kx) {
                const int ix = ox * g.stride - g.pad + kx * g.dil;
                const Real xv = (iy >= 0 && iy < g.h && ix >= 0 && ix < g.w)
                                    ? xb[(static_cast<std::size_t>(c) * g.h + iy) * g.w + ix]
                                    : Real(0);
                acc += wt[((static_cast<std::size_t>(o) * g.ci + c) * g.k + ky) * g.k + kx] * xv;
              }
            }
          }
          if (bias) acc += bias[o];
          out[((static_cast<std::size_t>(b) * g.co + o) * g.ho + oy) * g.wo + ox] = acc;
        }
      }
    }
  }
}

// Iteration helper for reductions along one axis: element (o, i, j) lives at
// (o * len + i) * inner + j.
struct AxisView {
  std::size_t outer = 1, len = 1, inner = 1;
  AxisView(const Shape& s, int axis) {
    const auto d = s.dims();
    for (int a = 0; a < axis; ++a) outer *= d[a];
    len = d[axis];
    for (int a = axis + 1; a < 4; ++a) inner *= d[a];
  }
};

template <typename F>
Tensor unary(const char* op, const Tensor& x, F&& f) {
  require_defined(op, x);
  auto in = x.data();
  std::vector<Real> out(in.size());
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = f(in[i]);
  return make_result(op, x.shape(), std::move(out), {&x}, {});
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor* bias,
              const ConvOptions& options) {
  require_defined("conv2d", input);
  require_defined("conv2d", weight);
  const Shape& xs = input.shape();
  const Shape& ws = weight.shape();
  if (options.stride < 1 || options.dilation < 1) {
    throw ShapeError("conv2d: stride and dilation must be >= 1 (stride=" +
                     std::to_string(options.stride) +
                     ", dilation=" + std::to_string(options.dilation) + ")");
  }
  if (options.padding < 0) throw ShapeError("conv2d: negative padding");
  if (ws.h != ws.w) throw ShapeError("conv2d: non-square kernel " + ws.str());
  if (ws.c != xs.c) {
    throw ShapeError("conv2d: input " + xs.str() + " has " + std::to_string(xs.c) +
                     " channels but weight " + ws.str() + " expects " + std::to_string(ws.c));
  }
  if (bias && bias->shape() != Shape{1, ws.n, 1, 1}) {
    throw ShapeError("conv2d: bias " + bias->shape().str() + " does not match weight " +
                     ws.str());
  }
  ConvGeom g{};
  g.n = xs.n;
  g.ci = xs.c;
  g.h = xs.h;
  g.w = xs.w;
  g.co = ws.n;
  g.k = ws.h;
  g.stride = options.stride;
  g.pad = options.padding;
  g.dil = options.dilation;
  const int span = g.dil * (g.k - 1) + 1;
  if (xs.h + 2 * g.pad < span || xs.w + 2 * g.pad < span) {
    throw ShapeError("conv2d: input " + xs.str() + " smaller than dilated kernel " + ws.str());
  }
  g.ho = (xs.h + 2 * g.pad - span) / g.stride + 1;
  g.wo = (xs.w + 2 * g.pad - span) / g.stride + 1;

  const Shape out_shape{g.n, g.co, g.ho, g.wo};
  std::vector<Real> out(out_shape.numel());
  const Real* bptr = bias ? bias->data().data() : nullptr;
  if (options.algo == ConvAlgo::Direct) {
    conv_forward_direct(input.data().data(), weight.data().data(), bptr, g, out.data());
  } else {
    conv_forward_im2col(input.data().data(), weight.data().data(), bptr, g, out.data());
  }

  auto backward_fn = [g, has_bias = bias != nullptr](Node& self) {
    const Node& x = *self.inputs[0];
    const Node& w = *self.inputs[1];
    const int rows = g.col_rows();
    const int plane = g.col_cols();
    const bool need_x = wants_grad(self, 0);
    const bool need_w = wants_grad(self, 1);
    const bool need_b = has_bias && wants_grad(self, 2);
    std::vector<Real> cols(static_cast<std::size_t>(rows) * plane);
    std::vector<Real> dcols(need_x ? cols.size() : 0);
    std::vector<double> dw(need_w ? static_cast<std::size_t>(g.co) * rows : 0, 0.0);
    for (int b = 0; b < g.n; ++b) {
      const Real* gb = self.grad.data() + static_cast<std::size_t>(b) * g.co * plane;
      if (need_w) {
        im2col(x.data.data() + static_cast<std::size_t>(b) * g.ci * g.h * g.w, g, cols.data());
        for (int o = 0; o < g.co; ++o) {
          const Real* grow = gb + static_cast<std::size_t>(o) * plane;
          for (int r = 0; r < rows; ++r) {
            const Real* crow = cols.data() + static_cast<std::size_t>(r) * plane;
            double acc = 0.0;
            for (int p = 0; p < plane; ++p) acc += static_cast<double>(grow[p]) * crow[p];
            dw[static_cast<std::size_t>(o) * rows + r] += acc;
          }
        }
      }
      if (need_x) {
        std::fill(dcols.begin(), dcols.end(), Real(0));
        for (int o = 0; o < g.co; ++o) {
          const Real* grow = gb + static_cast<std::size_t>(o) * plane;
          const Real* wrow = w.data.data() + static_cast<std::size_t>(o) * rows;
          for (int r = 0; r < rows; ++r) {
            const Real wv = wrow[r];
            Real* drow = dcols.data() + static_cast<std::size_t>(r) * plane;
            for (int p = 0; p < plane; ++p) drow[p] += wv * grow[p];
          }
        }
        Real* dx = self.inputs[0]->grad_buffer() + static_cast<std::size_t>(b) * g.ci * g.h * g.w;
        col2im_add(dcols.data(), g, dx);
      }
    }
    if (need_w) {
      Real* gw = self.inputs[1]->grad_buffer();
      for (std::size_t i = 0; i < dw.size(); ++i) gw[i] += static_cast<Real>(dw[i]);
    }
    if (need_b) {
      Real* gbias = self.inputs[2]->grad_buffer();
      for (int o = 0; o < g.co; ++o) {
        double acc = 0.0;
        for (int b = 0; b < g.n; ++b) {
          const Real* grow = self.grad.data() + (static_cast<std::size_t>(b) * g.co + o) * plane;
          for (int p = 0; p < plane; ++p) acc += grow[p];
        }
        gbias[o] += static_cast<Real>(acc);
      }
    }
  };
  if (bias) {
    return make_result("conv2d", out_shape, std::move(out), {&input, &weight, bias},
                       std::move(backward_fn));
  }
  return make_result("conv2d", out_shape, std::move(out), {&input, &weight},
                     std::move(backward_fn));
}

Tensor linear(const Tensor& input, const Tensor& weight, const Tensor* bias) {
  require_defined("linear", input);
  require_defined("linear", weight);
  const Shape& xs = input.shape();
  const Shape& ws = weight.shape();
  const int n = xs.n;
  const int d = xs.c * xs.h * xs.w;
  if (ws.h != 1 || ws.w != 1 || ws.c != d) {
    throw ShapeError("linear: input " + xs.str() + " flattens to " + std::to_string(d) +
                     " features but weight is " + ws.str());
  }
  const int dout = ws.n;
  if (bias && bias->shape() != Shape{1, dout, 1, 1}) {
    throw ShapeError("linear: bias " + bias->shape().str() + " does not match weight " +
                     ws.str());
  }
  std::vector<Real> out(static_cast<std::size_t>(n) * dout);
  auto x = input.data();
  auto w = weight.data();
  for (int i = 0; i < n; ++i) {
    for (int o = 0; o < dout; ++o) {
      double acc = 0.0;
      for (int k = 0; k < d; ++k) {
        acc += static_cast<double>(w[static_cast<std::size_t>(o) * d + k]) *
               x[static_cast<std::size_t>(i) * d + k];
      }
      if (bias) acc += bias->data()[o];
      out[static_cast<std::size_t>(i) * dout + o] = static_cast<Real>(acc);
    }
  }
  auto backward_fn = [n, d, dout, has_bias = bias != nullptr](Node& self) {
    const Real* g = self.grad.data();
    const Real* x = self.inputs[0]->data.data();
    const Real* w = self.inputs[1]->data.data();
    if (wants_grad(self, 0)) {
      Real* dx = self.inputs[0]->grad_buffer();
      for (int i = 0; i < n; ++i) {
        for (int k = 0; k < d; ++k) {
          double acc = 0.0;
          for (int o = 0; o < dout; ++o) {
            acc += static_cast<double>(g[static_cast<std::size_t>(i) * dout + o]) *
                   w[static_cast<std::size_t>(o) * d + k];
          }
          dx[static_cast<std::size_t>(i) * d + k] += static_cast<Real>(acc);
        }
      }
    }
    if (wants_grad(self, 1)) {
      Real* dw = self.inputs[1]->grad_buffer();
      for (int o = 0; o < dout; ++o) {
        for (int k = 0; k < d; ++k) {
          double acc = 0.0;
          for (int i = 0; i < n; ++i) {
            acc += static_cast<double>(g[static_cast<std::size_t>(i) * dout + o]) *
                   x[static_cast<std::size_t>(i) * d + k];
          }
          dw[static_cast<std::size_t>(o) * d + k] += static_cast<Real>(acc);
        }
      }
    }
    if (has_bias && wants_grad(self, 2)) {
      Real* db = self.inputs[2]->grad_buffer();
      for (int o = 0; o < dout; ++o) {
        double acc = 0.0;
        for (int i = 0; i < n; ++i) acc += g[static_cast<std::size_t>(i) * dout + o];
        db[o] += static_cast<Real>(acc);
      }
    }
  };
  const Shape out_shape{n, dout, 1, 1};
  if (bias) {
    return make_result("linear", out_shape, std::move(out), {&input, &weight, bias},
                       std::move(backward_fn));
  }
  return make_result("linear", out_shape, std::move(out), {&input, &weight},
                     std::move(backward_fn));
}

Tensor global_avg_pool(const Tensor& input) {
  require_defined("global_avg_pool", input);
  const Shape& s = input.shape();
  const std::size_t plane = static_cast<std::size_t>(s.h) * s.w;
  if (plane == 0) throw ShapeError("global_avg_pool: empty spatial plane in " + s.str());
  const std::size_t planes = static_cast<std::size_t>(s.n) * s.c;
  auto x = input.data();
  std::vector<Real> out(planes);
  for (std::size_t p = 0; p < planes; ++p) {
    double acc = 0.0;
    for (std::size_t i = 0; i < plane; ++i) acc += x[p * plane + i];
    out[p] = static_cast<Real>(acc / static_cast<double>(plane));
  }
  return make_result("global_avg_pool", {s.n, s.c, 1, 1}, std::move(out), {&input},
                     [plane, planes](Node& self) {
                       Real* dx = self.inputs[0]->grad_buffer();
                       const Real inv = Real(1) / static_cast<Real>(plane);
                       for (std::size_t p = 0; p < planes; ++p) {
                         const Real gv = self.grad[p] * inv;
                         for (std::size_t i = 0; i < plane; ++i) dx[p * plane + i] += gv;
                       }
                     });
}

Tensor max_pool2d(const Tensor& input, int kernel, int stride, int padding) {
  require_defined("max_pool2d", input);
  if (kernel < 1 || stride < 1 || padding < 0 || padding >= kernel) {
    throw ShapeError("max_pool2d: invalid kernel/stride/padding");
  }
  const Shape& s = input.shape();
  if (s.h + 2 * padding < kernel || s.w + 2 * padding < kernel) {
    throw ShapeError("max_pool2d: input " + s.str() + " smaller than window");
  }
  const int ho = (s.h + 2 * padding - kernel) / stride + 1;
  const int wo = (s.w + 2 * padding - kernel) / stride + 1;
  const Shape out_shape{s.n, s.c, ho, wo};
  std::vector<Real> out(out_shape.numel());
  std::vector<std::size_t> argmax(out.size());
  auto x = input.data();
  const std::size_t planes = static_cast<std::size_t>(s.n) * s.c;
  for (std::size_t p = 0; p < planes; ++p) {
    for (int oy = 0; oy < ho; ++oy) {
      for (int ox = 0; ox < wo; ++ox) {
        Real best = -std::numeric_limits<Real>::infinity();
        std::size_t best_idx = 0;
        for (int ky = 0; ky < kernel; ++ky) {
          const int iy = oy * stride - padding + ky;
          if (iy < 0 || iy >= s.h) continue;
          for (int kx = 0; kx < kernel; ++kx) {
            const int ix = ox * stride - padding + kx;
            if (ix < 0 || ix >= s.w) continue;
            const std::size_t idx = (p * s.h + iy) * s.w + ix;
            if (x[idx] > best) {
              best = x[idx];
              best_idx = idx;
            }
          }
        }
        const std::size_t o = (p * ho + oy) * wo + ox;
        out[o] = best;
        argmax[o] = best_idx;
      }
    }
  }
  if (detail::pattern_active()) {
    detail::freeze_choices(argmax);
    for (std::size_t o = 0; o < out.size(); ++o) out[o] = x[argmax[o]];
  }
  return make_result("max_pool2d", out_shape, std::move(out), {&input},
                     [argmax = std::move(argmax)](Node& self) {
                       Real* dx = self.inputs[0]->grad_buffer();
                       for (std::size_t o = 0; o < argmax.size(); ++o) dx[argmax[o]] += self.grad[o];
                     });
}

namespace {

// Flat index into the shuffle input for each output element (a permutation).
std::vector<std::size_t> shuffle_map(const Shape& in, int r) {
  const int c = in.c / (r * r);
  const int oh = in.h * r;
  const int ow = in.w * r;
  std::vector<std::size_t> map(in.numel());
  std::size_t o = 0;
  for (int b = 0; b < in.n; ++b) {
    for (int ch = 0; ch < c; ++ch) {
      for (int y = 0; y < oh; ++y) {
        for (int x = 0; x < ow; ++x) {
          const int src_c = ch * r * r + r * (y % r) + (x % r);
          map[o++] = ((static_cast<std::size_t>(b) * in.c + src_c) * in.h + y / r) * in.w + x / r;
        }
      }
    }
  }
  return map;
}

}  // namespace

Tensor pixel_shuffle(const Tensor& input, int factor) {
  require_defined("pixel_shuffle", input);
  const Shape& s = input.shape();
  if (factor < 1 || s.c % (factor * factor) != 0) {
    throw ShapeError("pixel_shuffle: " + std::to_string(s.c) +
                     " channels not divisible by factor^2 = " + std::to_string(factor * factor));
  }
  auto map = shuffle_map(s, factor);
  auto x = input.data();
  std::vector<Real> out(map.size());
  for (std::size_t o = 0; o < map.size(); ++o) out[o] = x[map[o]];
  const Shape out_shape{s.n, s.c / (factor * factor), s.h * factor, s.w * factor};
  return make_result("pixel_shuffle", out_shape, std::move(out), {&input},
                     [map = std::move(map)](Node& self) {
                       Real* dx = self.inputs[0]->grad_buffer();
                       for (std::size_t o = 0; o < map.size(); ++o) dx[map[o]] += self.grad[o];
                     });
}

Tensor pixel_unshuffle(const Tensor& input, int factor) {
  require_defined("pixel_unshuffle", input);
  const Shape& s = input.shape();
  if (factor < 1 || s.h % factor != 0 || s.w % factor != 0) {
    throw ShapeError("pixel_unshuffle: spatial dims of " + s.str() +
                     " not divisible by " + std::to_string(factor));
  }
  const Shape in_shape{s.n, s.c * factor * factor, s.h / factor, s.w / factor};
  auto map = shuffle_map(in_shape, factor);
  auto x = input.data();
  std::vector<Real> out(map.size());
  for (std::size_t o = 0; o < map.size(); ++o) out[map[o]] = x[o];
  return make_result("pixel_unshuffle", in_shape, std::move(out), {&input},
                     [map = std::move(map)](Node& self) {
                       Real* dx = self.inputs[0]->grad_buffer();
                       for (std::size_t o = 0; o < map.size(); ++o) dx[o] += self.grad[map[o]];
                     });
}

namespace {

struct LerpTap {
  int i0, i1;
  Real t;
};

std::vector<LerpTap> bilinear_taps(int in, int out) {
  std::vector<LerpTap> taps(out);
  const double scale = static_cast<double>(in) / out;
  for (int d = 0; d < out; ++d) {
    double src = (d + 0.5) * scale - 0.5;
    if (src < 0) src = 0;
    int i0 = static_cast<int>(std::floor(src));
    if (i0 > in - 1) i0 = in - 1;
    const int i1 = std::min(i0 + 1, in - 1);
    taps[d] = {i0, i1, static_cast<Real>(src - i0)};
  }
  return taps;
}

void check_resize(const char* op, const Shape& s, int out_h, int out_w) {
  if (out_h < 1 || out_w < 1) throw ShapeError(std::string(op) + ": zero output size");
  if (s.h < 1 || s.w < 1) throw ShapeError(std::string(op) + ": empty input " + s.str());
  if (out_h < s.h || out_w < s.w) {
    throw ShapeError(std::string(op) + ": output " + std::to_string(out_h) + "x" +
                     std::to_string(out_w) + " smaller than input " + s.str());
  }
}

}  // namespace

Tensor upsample_bilinear(const Tensor& input, int out_h, int out_w) {
  require_defined("upsample_bilinear", input);
  const Shape s = input.shape();
  check_resize("upsample_bilinear", s, out_h, out_w);
  auto ty = bilinear_taps(s.h, out_h);
  auto tx = bilinear_taps(s.w, out_w);
  const std::size_t planes = static_cast<std::size_t>(s.n) * s.c;
  auto x = input.data();
  std::vector<Real> out(planes * out_h * out_w);
  for (std::size_t p = 0; p < planes; ++p) {
    const Real* xp = x.data() + p * s.h * s.w;
    Real* op = out.data() + p * out_h * out_w;
    for (int y = 0; y < out_h; ++y) {
      const LerpTap& a = ty[y];
      for (int xo = 0; xo < out_w; ++xo) {
        const LerpTap& b = tx[xo];
        const Real top = xp[a.i0 * s.w + b.i0] * (1 - b.t) + xp[a.i0 * s.w + b.i1] * b.t;
        const Real bot = xp[a.i1 * s.w + b.i0] * (1 - b.t) + xp[a.i1 * s.w + b.i1] * b.t;
        op[y * out_w + xo] = top * (1 - a.t) + bot * a.t;
      }
    }
  }
  return make_result("upsample_bilinear", {s.n, s.c, out_h, out_w}, std::move(out), {&input},
                     [s, out_h, out_w, ty = std::move(ty), tx = std::move(tx)](Node& self) {
                       Real* dx = self.inputs[0]->grad_buffer();
                       const std::size_t planes = static_cast<std::size_t>(s.n) * s.c;
                       for (std::size_t p = 0; p < planes; ++p) {
                         Real* dp = dx + p * s.h * s.w;
                         const Real* gp = self.grad.data() + p * out_h * out_w;
                         for (int y = 0; y < out_h; ++y) {
                           const LerpTap& a = ty[y];
                           for (int xo = 0; xo < out_w; ++xo) {
                             const LerpTap& b = tx[xo];
                             const Real g = gp[y * out_w + xo];
                             dp[a.i0 * s.w + b.i0] += g * (1 - a.t) * (1 - b.t);
                             dp[a.i0 * s.w + b.i1] += g * (1 - a.t) * b.t;
                             dp[a.i1 * s.w + b.i0] += g * a.t * (1 - b.t);
                             dp[a.i1 * s.w + b.i1] += g * a.t * b.t;
                           }
                         }
                       }
                     });
}

Tensor upsample_nearest(const Tensor& input, int out_h, int out_w) {
  require_defined("upsample_nearest", input);
  const Shape s = input.shape();
  check_resize("upsample_nearest", s, out_h, out_w);
  const std::size_t planes = static_cast<std::size_t>(s.n) * s.c;
  std::vector<std::size_t> map(planes * out_h * out_w);
  for (std::size_t p = 0; p < planes; ++p) {
    for (int y = 0; y < out_h; ++y) {
      const int sy = static_cast<int>(static_cast<long long>(y) * s.h / out_h);
      for (int x = 0; x < out_w; ++x) {
        const int sx = static_cast<int>(static_cast<long long>(x) * s.w / out_w);
        map[(p * out_h + y) * out_w + x] = (p * s.h + sy) * s.w + sx;
      }
    }
  }
  auto x = input.data();
  std::vector<Real> out(map.size());
  for (std::size_t o = 0; o < map.size(); ++o) out[o] = x[map[o]];
  return make_result("upsample_nearest", {s.n, s.c, out_h, out_w}, std::move(out), {&input},
                     [map = std::move(map)](Node& self) {
                       Real* dx = self.inputs[0]->grad_buffer();
                       for (std::size_t o = 0; o < map.size(); ++o) dx[map[o]] += self.grad[o];
                     });
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_defined("add", a);
  require_defined("add", b);
  if (a.shape() != b.shape()) shape_mismatch("add", a.shape(), b.shape());
  auto x = a.data();
  auto y = b.data();
  std::vector<Real> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] + y[i];
  return make_result("add", a.shape(), std::move(out), {&a, &b}, [](Node& self) {
    for (std::size_t k = 0; k < 2; ++k) {
      if (!wants_grad(self, k)) continue;
      Real* d = self.inputs[k]->grad_buffer();
      for (std::size_t i = 0; i < self.grad.size(); ++i) d[i] += self.grad[i];
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_defined("sub", a);
  require_defined("sub", b);
  if (a.shape() != b.shape()) shape_mismatch("sub", a.shape(), b.shape());
  auto x = a.data();
  auto y = b.data();
  std::vector<Real> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] - y[i];
  return make_result("sub", a.shape(), std::move(out), {&a, &b}, [](Node& self) {
    if (wants_grad(self, 0)) {
      Real* d = self.inputs[0]->grad_buffer();
      for (std::size_t i = 0; i < self.grad.size(); ++i) d[i] += self.grad[i];
    }
    if (wants_grad(self, 1)) {
      Real* d = self.inputs[1]->grad_buffer();
      for (std::size_t i = 0; i < self.grad.size(); ++i) d[i] -= self.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_defined("mul", a);
  require_defined("mul", b);
  if (a.shape() != b.shape()) shape_mismatch("mul", a.shape(), b.shape());
  auto x = a.data();
  auto y = b.data();
  std::vector<Real> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * y[i];
  return make_result("mul", a.shape(), std::move(out), {&a, &b}, [](Node& self) {
    const Real* x = self.inputs[0]->data.data();
    const Real* y = self.inputs[1]->data.data();
    if (wants_grad(self, 0)) {
      Real* d = self.inputs[0]->grad_buffer();
      for (std::size_t i = 0; i < self.grad.size(); ++i) d[i] += self.grad[i] * y[i];
    }
    if (wants_grad(self, 1)) {
      Real* d = self.inputs[1]->grad_buffer();
      for (std::size_t i = 0; i < self.grad.size(); ++i) d[i] += self.grad[i] * x[i];
    }
  });
}

Tensor scale_channels(const Tensor& x, const Tensor& s) {
  require_defined("scale_channels", x);
  require_defined("scale_channels", s);
  const Shape xs = x.shape();
  if (s.shape() != Shape{xs.n, xs.c, 1, 1}) shape_mismatch("scale_channels", xs, s.shape());
  const std::size_t plane = static_cast<std::size_t>(xs.h) * xs.w;
  const std::size_t planes = static_cast<std::size_t>(xs.n) * xs.c;
  auto xd = x.data();
  auto sd = s.data();
  std::vector<Real> out(xd.size());
  for (std::size_t p = 0; p < planes; ++p) {
    for (std::size_t i = 0; i < plane; ++i) out[p * plane + i] = xd[p * plane + i] * sd[p];
  }
  return make_result("scale_channels", xs, std::move(out), {&x, &s},
                     [plane, planes](Node& self) {
                       const Real* xv = self.inputs[0]->data.data();
                       const Real* sv = self.inputs[1]->data.data();
                       const Real* g = self.grad.data();
                       if (wants_grad(self, 0)) {
                         Real* dx = self.inputs[0]->grad_buffer();
                         for (std::size_t p = 0; p < planes; ++p) {
                           for (std::size_t i = 0; i < plane; ++i) dx[p * plane + i] += g[p * plane + i] * sv[p];
                         }
                       }
                       if (wants_grad(self, 1)) {
                         Real* ds = self.inputs[1]->grad_buffer();
                         for (std::size_t p = 0; p < planes; ++p) {
                           double acc = 0.0;
                           for (std::size_t i = 0; i < plane; ++i) {
                             acc += static_cast<double>(g[p * plane + i]) * xv[p * plane + i];
                           }
                           ds[p] += static_cast<Real>(acc);
                         }
                       }
                     });
}

Tensor add_scalar(const Tensor& x, Real value) {
  require_defined("add_scalar", x);
  auto xd = x.data();
  std::vector<Real> out(xd.size());
  for (std::size_t i = 0; i < xd.size(); ++i) out[i] = xd[i] + value;
  return make_result("add_scalar", x.shape(), std::move(out), {&x}, [](Node& self) {
    Real* d = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < self.grad.size(); ++i) d[i] += self.grad[i];
  });
}

Tensor mul_scalar(const Tensor& x, Real value) {
  require_defined("mul_scalar", x);
  auto xd = x.data();
  std::vector<Real> out(xd.size());
  for (std::size_t i = 0; i < xd.size(); ++i) out[i] = xd[i] * value;
  return make_result("mul_scalar", x.shape(), std::move(out), {&x}, [value](Node& self) {
    Real* d = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < self.grad.size(); ++i) d[i] += self.grad[i] * value;
  });
}

Tensor relu(const Tensor& x) {
  if (detail::pattern_active()) {
    auto xv = x.data();
    std::vector<std::size_t> mask(xv.size());
    for (std::size_t i = 0; i < xv.size(); ++i) mask[i] = xv[i] > 0;
    detail::freeze_choices(mask);
    std::vector<Real> y(xv.size());
    for (std::size_t i = 0; i < xv.size(); ++i) y[i] = mask[i] ? xv[i] : Real(0);
    return make_result("relu", x.shape(), std::move(y), {&x}, [mask](Node& self) {
      Real* d = self.inputs[0]->grad_buffer();
      for (std::size_t i = 0; i < self.grad.size(); ++i) {
        if (mask[i]) d[i] += self.grad[i];
      }
    });
  }
  Tensor out = unary("relu", x, [](Real v) { return v > 0 ? v : Real(0); });
  if (out.requires_grad()) {
    out.node()->backward = [](Node& self) {
      const Real* xv = self.inputs[0]->data.data();
      Real* d = self.inputs[0]->grad_buffer();
      for (std::size_t i = 0; i < self.grad.size(); ++i) {
        if (xv[i] > 0) d[i] += self.grad[i];
      }
    };
  }
  return out;
}

Tensor sigmoid(const Tensor& x) {
  Tensor out = unary("sigmoid", x, [](Real v) {
    // Branch on sign so exp never overflows.
    if (v >= 0) return Real(1) / (Real(1) + std::exp(-v));
    const Real e = std::exp(v);
    return e / (Real(1) + e);
  });
  if (out.requires_grad()) {
    out.node()->backward = [](Node& self) {
      const Real* y = self.data.data();
      Real* d = self.inputs[0]->grad_buffer();
      for (std::size_t i = 0; i < self.grad.size(); ++i) d[i] += self.grad[i] * y[i] * (1 - y[i]);
    };
  }
  return out;
}

Tensor exp(const Tensor& x) {
  Tensor out = unary("exp", x, [](Real v) { return std::exp(v); });
  if (out.requires_grad()) {
    out.node()->backward = [](Node& self) {
      Real* d = self.inputs[0]->grad_buffer();
      for (std::size_t i = 0; i < self.grad.size(); ++i) d[i] += self.grad[i] * self.data[i];
    };
  }
  return out;
}

Tensor log(const Tensor& x) {
  Tensor out = unary("log", x, [](Real v) { return std::log(v); });
  if (out.requires_grad()) {
    out.node()->backward = [](Node& self) {
      const Real* xv = self.inputs[0]->data.data();
      Real* d = self.inputs[0]->grad_buffer();
      for (std::size_t i = 0; i < self.grad.size(); ++i) d[i] += self.grad[i] / xv[i];
    };
  }
  return out;
}

Tensor softmax(const Tensor& x, int axis) {
  require_defined("softmax", x);
  if (axis < 0 || axis > 3) throw ShapeError("softmax: axis must be in [0,4)");
  const AxisView v(x.shape(), axis);
  auto xd = x.data();
  std::vector<Real> out(xd.size());
  for (std::size_t o = 0; o < v.outer; ++o) {
    for (std::size_t j = 0; j < v.inner; ++j) {
      auto at = [&](std::size_t i) { return (o * v.len + i) * v.inner + j; };
      Real mx = -std::numeric_limits<Real>::infinity();
      for (std::size_t i = 0; i < v.len; ++i) mx = std::max(mx, xd[at(i)]);
      double total = 0.0;
      for (std::size_t i = 0; i < v.len; ++i) total += std::exp(static_cast<double>(xd[at(i)] - mx));
      for (std::size_t i = 0; i < v.len; ++i) {
        out[at(i)] = static_cast<Real>(std::exp(static_cast<double>(xd[at(i)] - mx)) / total);
      }
    }
  }
  return make_result("softmax", x.shape(), std::move(out), {&x}, [v](Node& self) {
    Real* d = self.inputs[0]->grad_buffer();
    const Real* y = self.data.data();
    const Real* g = self.grad.data();
    for (std::size_t o = 0; o < v.outer; ++o) {
      for (std::size_t j = 0; j < v.inner; ++j) {
        auto at = [&](std::size_t i) { return (o * v.len + i) * v.inner + j; };
        double dot = 0.0;
        for (std::size_t i = 0; i < v.len; ++i) dot += static_cast<double>(g[at(i)]) * y[at(i)];
        for (std::size_t i = 0; i < v.len; ++i) {
          d[at(i)] += static_cast<Real>(y[at(i)] * (g[at(i)] - dot));
        }
      }
    }
  });
}

Tensor concat_channels(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("concat_channels: no inputs");
  const Shape first = parts.front().shape();
  int total_c = 0;
  for (const Tensor& p : parts) {
    require_defined("concat_channels", p);
    const Shape& s = p.shape();
    if (s.n != first.n || s.h != first.h || s.w != first.w) {
      shape_mismatch("concat_channels", first, s);
    }
    total_c += s.c;
  }
  const Shape out_shape{first.n, total_c, first.h, first.w};
  const std::size_t plane = static_cast<std::size_t>(first.h) * first.w;
  std::vector<Real> out(out_shape.numel());
  std::vector<int> offsets;
  int off = 0;
  for (const Tensor& p : parts) {
    offsets.push_back(off);
    const int c = p.shape().c;
    auto d = p.data();
    for (int b = 0; b < first.n; ++b) {
      std::copy_n(d.data() + static_cast<std::size_t>(b) * c * plane, c * plane,
                  out.data() + (static_cast<std::size_t>(b) * total_c + off) * plane);
    }
    off += c;
  }
  return make_result("concat_channels", out_shape, std::move(out), parts,
                     [offsets, plane, total_c, n = first.n](Node& self) {
                       for (std::size_t k = 0; k < self.inputs.size(); ++k) {
                         if (!wants_grad(self, k)) continue;
                         const int c = self.inputs[k]->shape.c;
                         Real* d = self.inputs[k]->grad_buffer();
                         for (int b = 0; b < n; ++b) {
                           const Real* g = self.grad.data() +
                                           (static_cast<std::size_t>(b) * total_c + offsets[k]) * plane;
                           Real* db = d + static_cast<std::size_t>(b) * c * plane;
                           for (std::size_t i = 0; i < c * plane; ++i) db[i] += g[i];
                         }
                       }
                     });
}

Tensor slice_channels(const Tensor& x, int begin, int count) {
  require_defined("slice_channels", x);
  const Shape s = x.shape();
  if (begin < 0 || count < 1 || begin + count > s.c) {
    throw ShapeError("slice_channels: [" + std::to_string(begin) + ", " +
                     std::to_string(begin + count) + ") outside " + s.str());
  }
  const std::size_t plane = static_cast<std::size_t>(s.h) * s.w;
  auto d = x.data();
  std::vector<Real> out(static_cast<std::size_t>(s.n) * count * plane);
  for (int b = 0; b < s.n; ++b) {
    std::copy_n(d.data() + (static_cast<std::size_t>(b) * s.c + begin) * plane, count * plane,
                out.data() + static_cast<std::size_t>(b) * count * plane);
  }
  return make_result("slice_channels", {s.n, count, s.h, s.w}, std::move(out), {&x},
                     [s, begin, count, plane](Node& self) {
                       Real* dx = self.inputs[0]->grad_buffer();
                       for (int b = 0; b < s.n; ++b) {
                         const Real* g = self.grad.data() + static_cast<std::size_t>(b) * count * plane;
                         Real* db = dx + (static_cast<std::size_t>(b) * s.c + begin) * plane;
                         for (std::size_t i = 0; i < count * plane; ++i) db[i] += g[i];
                       }
                     });
}

Tensor reshape(const Tensor& x, Shape shape) {
  require_defined("reshape", x);
  if (shape.numel() != x.numel()) {
    throw ShapeError("reshape: " + x.shape().str() + " to " + shape.str() +
                     " changes the element count");
  }
  std::vector<Real> out(x.data().begin(), x.data().end());
  return make_result("reshape", shape, std::move(out), {&x}, [](Node& self) {
    Real* d = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < self.grad.size(); ++i) d[i] += self.grad[i];
  });
}

Tensor sum_all(const Tensor& x) {
  require_defined("sum_all", x);
  double acc = 0.0;
  for (Real v : x.data()) acc += v;
  return make_result("sum_all", {1, 1, 1, 1}, {static_cast<Real>(acc)}, {&x}, [](Node& self) {
    Real* d = self.inputs[0]->grad_buffer();
    const Real g = self.grad[0];
    for (std::size_t i = 0; i < self.inputs[0]->data.size(); ++i) d[i] += g;
  });
}

Tensor mean_all(const Tensor& x) {
  require_defined("mean_all", x);
  const std::size_t n = x.numel();
  if (n == 0) throw ShapeError("mean_all: empty tensor");
  double acc = 0.0;
  for (Real v : x.data()) acc += v;
  return make_result("mean_all", {1, 1, 1, 1}, {static_cast<Real>(acc / n)}, {&x},
                     [n](Node& self) {
                       Real* d = self.inputs[0]->grad_buffer();
                       const Real g = self.grad[0] / static_cast<Real>(n);
                       for (std::size_t i = 0; i < n; ++i) d[i] += g;
                     });
}

Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  BatchNormState& state, bool training) {
  require_defined("batch_norm", x);
  const Shape s = x.shape();
  const Shape cs{1, s.c, 1, 1};
  if (gamma.shape() != cs || beta.shape() != cs || state.running_mean.shape() != cs ||
      state.running_var.shape() != cs) {
    throw ShapeError("batch_norm: parameters do not match input " + s.str());
  }
  const std::size_t plane = static_cast<std::size_t>(s.h) * s.w;
  const std::size_t count = static_cast<std::size_t>(s.n) * plane;
  if (training && count < 2) {
    throw ShapeError("batch_norm: training mode needs more than one value per channel, got " +
                     s.str());
  }
  auto xd = x.data();
  auto gd = gamma.data();
  auto bd = beta.data();
  std::vector<Real> mean(s.c), invstd(s.c);
  if (training) {
    auto rm = state.running_mean.mutable_data();
    auto rv = state.running_var.mutable_data();
    for (int c = 0; c < s.c; ++c) {
      double sum = 0.0;
      for (int b = 0; b < s.n; ++b) {
        const Real* p = xd.data() + (static_cast<std::size_t>(b) * s.c + c) * plane;
        for (std::size_t i = 0; i < plane; ++i) sum += p[i];
      }
      const double mu = sum / count;
      double sq = 0.0;
      for (int b = 0; b < s.n; ++b) {
        const Real* p = xd.data() + (static_cast<std::size_t>(b) * s.c + c) * plane;
        for (std::size_t i = 0; i < plane; ++i) sq += (p[i] - mu) * (p[i] - mu);
      }
      const double var = sq / count;
      mean[c] = static_cast<Real>(mu);
      invstd[c] = static_cast<Real>(1.0 / std::sqrt(var + state.eps));
      const double unbiased = sq / (count - 1);
      rm[c] = static_cast<Real>((1 - state.momentum) * rm[c] + state.momentum * mu);
      rv[c] = static_cast<Real>((1 - state.momentum) * rv[c] + state.momentum * unbiased);
    }
  } else {
    auto rm = state.running_mean.data();
    auto rv = state.running_var.data();
    for (int c = 0; c < s.c; ++c) {
      mean[c] = rm[c];
      invstd[c] = static_cast<Real>(1.0 / std::sqrt(static_cast<double>(rv[c]) + state.eps));
    }
  }
  std::vector<Real> out(xd.size());
  for (int b = 0; b < s.n; ++b) {
    for (int c = 0; c < s.c; ++c) {
      const std::size_t base = (static_cast<std::size_t>(b) * s.c + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        out[base + i] = gd[c] * ((xd[base + i] - mean[c]) * invstd[c]) + bd[c];
      }
    }
  }
  return make_result(
      "batch_norm", s, std::move(out), {&x, &gamma, &beta},
      [s, plane, count, training, mean = std::move(mean), invstd = std::move(invstd)](Node& self) {
        const Real* xv = self.inputs[0]->data.data();
        const Real* gam = self.inputs[1]->data.data();
        const Real* g = self.grad.data();
        Real* dx = wants_grad(self, 0) ? self.inputs[0]->grad_buffer() : nullptr;
        Real* dgamma = wants_grad(self, 1) ? self.inputs[1]->grad_buffer() : nullptr;
        Real* dbeta = wants_grad(self, 2) ? self.inputs[2]->grad_buffer() : nullptr;
        for (int c = 0; c < s.c; ++c) {
          double sum_g = 0.0, sum_gx = 0.0;
          for (int b = 0; b < s.n; ++b) {
            const std::size_t base = (static_cast<std::size_t>(b) * s.c + c) * plane;
            for (std::size_t i = 0; i < plane; ++i) {
              const double xhat = (xv[base + i] - mean[c]) * invstd[c];
              sum_g += g[base + i];
              sum_gx += g[base + i] * xhat;
            }
          }
          if (dgamma) dgamma[c] += static_cast<Real>(sum_gx);
          if (dbeta) dbeta[c] += static_cast<Real>(sum_g);
          if (!dx) continue;
          for (int b = 0; b < s.n; ++b) {
            const std::size_t base = (static_cast<std::size_t>(b) * s.c + c) * plane;
            for (std::size_t i = 0; i < plane; ++i) {
              if (training) {
                const double xhat = (xv[base + i] - mean[c]) * invstd[c];
                dx[base + i] += static_cast<Real>(
                    gam[c] * invstd[c] *
                    (g[base + i] - sum_g / count - xhat * sum_gx / count));
              } else {
                dx[base + i] += gam[c] * invstd[c] * g[base + i];
              }
            }
          }
        }
      });
}

std::vector<Tensor> branch_softmax(const std::vector<Tensor>& logits) {
  if (logits.empty()) throw ShapeError("branch_softmax: no branches");
  const Shape s = logits.front().shape();
  for (const Tensor& t : logits) {
    if (t.shape() != s) shape_mismatch("branch_softmax", s, t.shape());
  }
  const int k = static_cast<int>(logits.size());
  Tensor stacked = reshape(concat_channels(logits), {s.n, k, s.c, s.h * s.w});
  Tensor weights = reshape(softmax(stacked, 1), {s.n, k * s.c, s.h, s.w});
  std::vector<Tensor> out;
  out.reserve(k);
  for (int i = 0; i < k; ++i) out.push_back(slice_channels(weights, i * s.c, s.c));
  return out;
}

}  // namespace shisr
