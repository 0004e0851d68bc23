#include "shisr/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>
#include <optional>

#include "shisr/blocks.hpp"
#include "shisr/cf_net.hpp"
#include "shisr/losses.hpp"
#include "shisr/ops.hpp"
#include "shisr/rng.hpp"
#include "shisr/sr_net.hpp"

namespace shisr {

namespace {

double objective(const std::vector<Tensor>& outs, const std::vector<std::vector<double>>& w) {
  double f = 0.0;
  for (std::size_t k = 0; k < outs.size(); ++k) {
    auto d = outs[k].data();
    for (std::size_t i = 0; i < d.size(); ++i) f += w[k][i] * d[i];
  }
  return f;
}

std::vector<std::size_t> probe_indices(std::size_t n, int max_coords, Rng& rng) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  if (static_cast<int>(n) <= max_coords) return idx;
  for (int i = 0; i < max_coords; ++i) {
    const int j = rng.uniform_int(i, static_cast<int>(n) - 1);
    std::swap(idx[i], idx[j]);
  }
  idx.resize(max_coords);
  std::sort(idx.begin(), idx.end());
  return idx;
}

// Coefficients c_j of the slope estimate sum_j c_j (f(x + h_j) - f(x - h_j))
// for steps h_j = step * j / m. The estimate is exact for linear f; with
// `cancel_cubic` it is also exact for cubic terms. Among those, the minimum
// norm solution keeps the amplification of evaluation noise lowest.
std::vector<double> stencil(double step, int m, bool cancel_cubic) {
  std::vector<double> h(m);
  for (int j = 0; j < m; ++j) h[j] = step * (j + 1) / m;
  std::vector<double> c(m);
  if (!cancel_cubic || m == 1) {
    // Minimum norm under sum 2 h_j c_j = 1.
    double hh = 0.0;
    for (double v : h) hh += 4.0 * v * v;
    for (int j = 0; j < m; ++j) c[j] = 2.0 * h[j] / hh;
    return c;
  }
  // Rows a = 2h, b = 2h^3; c = [a b] (G^-1 e1) with G the Gram matrix.
  double aa = 0.0, ab = 0.0, bb = 0.0;
  for (double v : h) {
    aa += 4.0 * v * v;
    ab += 4.0 * v * v * v * v;
    bb += 4.0 * v * v * v * v * v * v;
  }
  const double det = aa * bb - ab * ab;
  const double ya = bb / det;
  const double yb = -ab / det;
  for (int j = 0; j < m; ++j) c[j] = ya * 2.0 * h[j] + yb * 2.0 * h[j] * h[j] * h[j];
  return c;
}

}  // namespace

GradCheckResult check_gradients(const std::string& name,
                                const std::function<std::vector<Tensor>()>& forward,
                                const std::vector<Tensor>& inputs, std::uint64_t seed,
                                const GradCheckOptions& o) {
  GradCheckResult r;
  r.name = name;
  r.seed = seed;
  Rng rng(mix_seed(seed, 0x9c));

  std::vector<Tensor> params = inputs;
  for (Tensor& t : params) {
    t.set_requires_grad(true);
    t.zero_grad();
  }
  std::optional<FrozenPattern> frozen;
  if (o.freeze_kinks) frozen.emplace();
  std::vector<Tensor> outs = forward();
  std::vector<std::vector<double>> weights;
  Tensor loss;
  for (const Tensor& out : outs) {
    std::vector<double> w(out.numel());
    std::vector<Real> wr(out.numel());
    for (std::size_t i = 0; i < w.size(); ++i) {
      wr[i] = static_cast<Real>(rng.uniform(-1.0, 1.0));
      w[i] = wr[i];
    }
    weights.push_back(std::move(w));
    const Tensor term = sum_all(mul(out, Tensor::from(out.shape(), std::move(wr))));
    loss = loss.defined() ? add(loss, term) : term;
  }
  backward(loss);

  std::vector<std::vector<Real>> analytic;
  double scale = 0.0;
  for (const Tensor& t : params) {
    analytic.push_back(t.grad());
    for (Real g : analytic.back()) scale = std::max(scale, std::abs(static_cast<double>(g)));
  }
  const double floor = std::max(o.floor_fraction * scale, 1e-12);
  const int m = std::max(o.stencil, o.richardson ? 2 : 1);
  const std::vector<double> coef = stencil(o.step, m, o.richardson);

  NoGradGuard no_grad;
  for (std::size_t p = 0; p < params.size(); ++p) {
    Tensor t = params[p];
    const std::size_t n = t.numel();
    const std::vector<Real>& g = analytic[p];
    double g_norm = 0.0;
    for (Real v : g) g_norm += static_cast<double>(v) * v;
    g_norm = std::sqrt(g_norm);

    std::vector<double> a_checked, n_checked;
    for (std::size_t i : probe_indices(n, o.max_coords, rng)) {
      auto data = t.mutable_data();
      const Real x0 = data[i];
      // Central difference at step h, and the analytic slope over the
      // perturbation actually representable in Real.
      auto difference = [&](double h) {
        data[i] = static_cast<Real>(x0 + h);
        const double up = static_cast<double>(data[i]) - x0;
        if (frozen) frozen->replay();
        const double fp = objective(forward(), weights);
        data[i] = static_cast<Real>(x0 - h);
        const double down = x0 - static_cast<double>(data[i]);
        if (frozen) frozen->replay();
        const double fm = objective(forward(), weights);
        data[i] = x0;
        return std::pair{fp - fm, static_cast<double>(g[i]) * (up + down)};
      };
      std::vector<std::pair<double, double>> diffs;
      for (int j = 1; j <= m; ++j) diffs.push_back(difference(o.step * j / m));

      // Slopes at the two largest steps disagree: a non-differentiable point
      // lies within reach of the probe.
      const double df_half = m % 2 == 0 ? diffs[m / 2 - 1].first : difference(o.step / 2).first;
      const double coarse = diffs[m - 1].first / (2.0 * o.step);
      const double fine = df_half / o.step;
      if (std::abs(coarse - fine) >
          o.kink_ratio * std::max({std::abs(coarse), std::abs(fine), floor})) {
        ++r.skipped;
        continue;
      }
      double numeric = 0.0;
      double analytic_slope = 0.0;
      for (int j = 0; j < m; ++j) {
        numeric += coef[j] * diffs[j].first;
        analytic_slope += coef[j] * diffs[j].second;
      }
      a_checked.push_back(analytic_slope);
      n_checked.push_back(numeric);
      ++r.checked;
    }
    if (a_checked.empty()) continue;
    if (o.normwise) {
      double diff = 0.0, na = 0.0, nn = 0.0;
      for (std::size_t k = 0; k < a_checked.size(); ++k) {
        diff += (a_checked[k] - n_checked[k]) * (a_checked[k] - n_checked[k]);
        na += a_checked[k] * a_checked[k];
        nn += n_checked[k] * n_checked[k];
      }
      // The probed entries stand in for the whole tensor; their share of the
      // full gradient norm and the global floor bound the denominator below.
      const double k = static_cast<double>(a_checked.size());
      const double share = g_norm * std::sqrt(k / static_cast<double>(n));
      const double denom = std::max({std::sqrt(na), std::sqrt(nn), share, floor * std::sqrt(k)});
      r.max_rel_error = std::max(r.max_rel_error, std::sqrt(diff) / denom);
    } else {
      for (std::size_t k = 0; k < a_checked.size(); ++k) {
        const double rel = std::abs(a_checked[k] - n_checked[k]) /
                           std::max({std::abs(a_checked[k]), std::abs(n_checked[k]), floor});
        r.max_rel_error = std::max(r.max_rel_error, rel);
      }
    }
  }
  r.passed = r.checked > 0 && r.max_rel_error < o.tolerance;
  return r;
}

namespace {

Tensor random_tensor(Shape s, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::vector<Real> v(s.numel());
  for (Real& x : v) x = static_cast<Real>(rng.uniform(lo, hi));
  return Tensor::from(s, std::move(v), true);
}

std::vector<Tensor> trainable_values(const ParameterList& list) {
  std::vector<Tensor> out;
  for (const Parameter& p : list.trainable()) out.push_back(p.value);
  return out;
}

using Builder = std::function<GradCheckResult(const std::string&, std::uint64_t,
                                              const GradCheckOptions&)>;

GradCheckCase make_case(std::string name, Builder build) {
  return {name, [name, build](std::uint64_t seed, const GradCheckOptions& o) {
            return build(name, seed, o);
          }};
}

// Case whose inputs are freshly drawn tensors of the given shapes.
GradCheckCase op_case(std::string name, std::vector<Shape> shapes,
                      std::function<std::vector<Tensor>(const std::vector<Tensor>&)> f,
                      double lo = -1.0, double hi = 1.0) {
  return make_case(std::move(name), [shapes, f, lo, hi](const std::string& n, std::uint64_t seed,
                                                        const GradCheckOptions& o) {
    Rng rng(seed);
    std::vector<Tensor> in;
    for (const Shape& s : shapes) in.push_back(random_tensor(s, rng, lo, hi));
    return check_gradients(n, [&] { return f(in); }, in, seed, o);
  });
}

GradCheckCase conv_case(std::string name, int k, ConvOptions opts, bool bias, Shape x) {
  std::vector<Shape> shapes{x, {3, x.c, k, k}};
  if (bias) shapes.push_back({1, 3, 1, 1});
  return op_case(std::move(name), shapes, [opts, bias](const std::vector<Tensor>& in) {
    return std::vector<Tensor>{conv2d(in[0], in[1], bias ? &in[2] : nullptr, opts)};
  });
}

}  // namespace

std::vector<GradCheckCase> gradient_suite() {
  using V = std::vector<Tensor>;
  using In = const std::vector<Tensor>&;
  std::vector<GradCheckCase> s;

  // Primitive operations.
  s.push_back(conv_case("conv2d 3x3", 3, {1, 1, 1, ConvAlgo::Im2col}, true, {2, 2, 5, 5}));
  s.push_back(conv_case("conv2d 3x3 stride 2", 3, {2, 1, 1, ConvAlgo::Im2col}, true, {2, 2, 6, 5}));
  s.push_back(conv_case("conv2d 3x3 dilation 2", 3, {1, 2, 2, ConvAlgo::Im2col}, false, {1, 2, 6, 6}));
  s.push_back(conv_case("conv2d 1x1", 1, {1, 0, 1, ConvAlgo::Im2col}, true, {2, 3, 3, 4}));
  s.push_back(conv_case("conv2d 7x7 stride 2 direct", 7, {2, 3, 1, ConvAlgo::Direct}, true,
                        {1, 2, 8, 8}));
  s.push_back(op_case("linear", {{3, 2, 2, 2}, {4, 8, 1, 1}, {1, 4, 1, 1}},
                      [](In in) { return V{linear(in[0], in[1], &in[2])}; }));
  s.push_back(op_case("global_avg_pool", {{2, 3, 4, 3}},
                      [](In in) { return V{global_avg_pool(in[0])}; }));
  s.push_back(op_case("max_pool2d", {{2, 2, 7, 6}},
                      [](In in) { return V{max_pool2d(in[0], 3, 2, 1)}; }));
  s.push_back(op_case("pixel_shuffle", {{1, 8, 2, 3}},
                      [](In in) { return V{pixel_shuffle(in[0], 2)}; }));
  s.push_back(op_case("pixel_unshuffle", {{1, 2, 4, 6}},
                      [](In in) { return V{pixel_unshuffle(in[0], 2)}; }));
  s.push_back(op_case("upsample_bilinear", {{2, 2, 3, 3}},
                      [](In in) { return V{upsample_bilinear(in[0], 6, 5)}; }));
  s.push_back(op_case("upsample_nearest", {{2, 2, 3, 2}},
                      [](In in) { return V{upsample_nearest(in[0], 6, 5)}; }));
  s.push_back(op_case("add", {{2, 3, 2, 2}, {2, 3, 2, 2}},
                      [](In in) { return V{add(in[0], in[1])}; }));
  s.push_back(op_case("sub", {{2, 3, 2, 2}, {2, 3, 2, 2}},
                      [](In in) { return V{sub(in[0], in[1])}; }));
  s.push_back(op_case("mul", {{2, 3, 2, 2}, {2, 3, 2, 2}},
                      [](In in) { return V{mul(in[0], in[1])}; }));
  s.push_back(op_case("scale_channels", {{2, 3, 2, 2}, {2, 3, 1, 1}},
                      [](In in) { return V{scale_channels(in[0], in[1])}; }));
  s.push_back(op_case("add_scalar", {{1, 2, 3, 3}},
                      [](In in) { return V{add_scalar(in[0], Real(0.7))}; }));
  s.push_back(op_case("mul_scalar", {{1, 2, 3, 3}},
                      [](In in) { return V{mul_scalar(in[0], Real(-1.3))}; }));
  s.push_back(op_case("relu", {{2, 2, 3, 3}}, [](In in) { return V{relu(in[0])}; }));
  s.push_back(op_case("sigmoid", {{2, 2, 3, 3}}, [](In in) { return V{sigmoid(in[0])}; }, -3, 3));
  s.push_back(op_case("exp", {{2, 2, 3, 3}}, [](In in) { return V{exp(in[0])}; }));
  s.push_back(op_case("log", {{2, 2, 3, 3}}, [](In in) { return V{log(in[0])}; }, 0.5, 2.0));
  for (int axis = 0; axis < 4; ++axis) {
    s.push_back(op_case("softmax axis " + std::to_string(axis), {{2, 3, 2, 3}},
                        [axis](In in) { return V{softmax(in[0], axis)}; }, -2, 2));
  }
  s.push_back(op_case("concat_channels", {{2, 1, 2, 2}, {2, 3, 2, 2}},
                      [](In in) { return V{concat_channels({in[0], in[1]})}; }));
  s.push_back(op_case("slice_channels", {{2, 5, 2, 2}},
                      [](In in) { return V{slice_channels(in[0], 1, 3)}; }));
  s.push_back(op_case("reshape", {{2, 3, 2, 2}},
                      [](In in) { return V{reshape(in[0], {2, 12, 1, 1})}; }));
  s.push_back(op_case("sum_all", {{2, 3, 2, 2}}, [](In in) { return V{sum_all(in[0])}; }));
  s.push_back(op_case("mean_all", {{2, 3, 2, 2}}, [](In in) { return V{mean_all(in[0])}; }));
  for (bool training : {true, false}) {
    s.push_back(op_case(std::string("batch_norm ") + (training ? "train" : "eval"),
                        {{3, 2, 3, 2}, {1, 2, 1, 1}, {1, 2, 1, 1}}, [training](In in) {
                          BatchNormState st;
                          st.running_mean = Tensor::full({1, 2, 1, 1}, Real(0.1));
                          st.running_var = Tensor::full({1, 2, 1, 1}, Real(0.8));
                          return V{batch_norm(in[0], in[1], in[2], st, training)};
                        }));
  }
  s.push_back(op_case("branch_softmax", {{2, 3, 1, 1}, {2, 3, 1, 1}, {2, 3, 1, 1}},
                      [](In in) { return branch_softmax(in); }, -2, 2));

  // Composite blocks.
  s.push_back(op_case("MSF fusion", {{2, 3, 4, 4}, {2, 3, 4, 4}, {2, 3, 4, 4}, {2, 3, 4, 4}},
                      [](In in) {
                        MSFResult r = msf_fuse(in);
                        V out{r.fused};
                        out.insert(out.end(), r.weights.begin(), r.weights.end());
                        return out;
                      }));
  for (bool concat : {false, true}) {
    s.push_back(make_case(concat ? "MFE block (concat fusion)" : "MFE block",
                          [concat](const std::string& n, std::uint64_t seed,
                                   const GradCheckOptions& o) {
                            Rng rng(seed);
                            MFEBlockConfig cfg;
                            cfg.channels = 3;
                            cfg.concat_fusion = concat;
                            MFEBlock block(cfg, rng);
                            ParameterList pl;
                            block.collect("mfe", pl);
                            V in{random_tensor({2, 3, 7, 7}, rng)};
                            const V params = trainable_values(pl);
                            in.insert(in.end(), params.begin(), params.end());
                            return check_gradients(
                                n, [&] { return V{block.forward(in[0])}; }, in, seed, o);
                          }));
  }
  s.push_back(make_case("CSF block", [](const std::string& n, std::uint64_t seed,
                                        const GradCheckOptions& o) {
    Rng rng(seed);
    CSFBlockConfig cfg;
    cfg.channels = 4;
    CSFBlock block(cfg, rng);
    ParameterList pl;
    block.collect("csf", pl);
    V in{random_tensor({2, 4, 6, 5}, rng), random_tensor({2, 4, 3, 3}, rng)};
    const V params = trainable_values(pl);
    in.insert(in.end(), params.begin(), params.end());
    return check_gradients(
        n,
        [&] {
          CSFResult r = block.forward(in[0], in[1]);
          return V{r.out, r.a, r.b};
        },
        in, seed, o);
  }));
  for (int stride : {1, 2}) {
    s.push_back(make_case(stride == 1 ? "SK unit" : "SK unit (stride 2, projection)",
                          [stride](const std::string& n, std::uint64_t seed,
                                   const GradCheckOptions& o) {
                            Rng rng(seed);
                            SKUnitConfig cfg;
                            cfg.in_channels = stride == 1 ? 8 : 4;
                            cfg.out_channels = 8;
                            cfg.stride = stride;
                            auto unit = std::make_shared<SKUnit>(cfg, rng);
                            ParameterList pl;
                            unit->collect("sk", pl);
                            V in{random_tensor({2, cfg.in_channels, 5, 5}, rng)};
                            const V params = trainable_values(pl);
                            in.insert(in.end(), params.begin(), params.end());
                            return check_gradients(
                                n,
                                [&] {
                                  SKAttention r = unit->forward(in[0], true);
                                  return V{r.out, r.a};
                                },
                                in, seed, o);
                          }));
  }

  // Micro networks.
  s.push_back(make_case("SR network (micro, x2)", [](const std::string& n, std::uint64_t seed,
                                                     const GradCheckOptions& o) {
    Rng rng(seed);
    SRNet net(SRConfig::micro(2), rng);
    V in{random_tensor({2, 3, 8, 8}, rng, 0.0, 1.0)};
    const V params = trainable_values(net.parameters());
    in.insert(in.end(), params.begin(), params.end());
    return check_gradients(n, [&] { return V{net.forward(in[0])}; }, in, seed, o);
  }));
  s.push_back(make_case("CF network (micro)", [](const std::string& n, std::uint64_t seed,
                                                 const GradCheckOptions& o) {
    Rng rng(seed);
    auto net = std::make_shared<CFNet>(CFConfig::micro(), rng);
    // 64x64 leaves a 2x2 map at the last stage, so batch norm there
    // normalizes over 8 values per channel.
    V in{random_tensor({2, 3, 64, 64}, rng, 0.0, 1.0)};
    const V params = trainable_values(net->parameters());
    in.insert(in.end(), params.begin(), params.end());
    GradCheckOptions fewer = o;
    fewer.max_coords = std::min(o.max_coords, 8);
    return check_gradients(
        n,
        [&] {
          Classification c = net->classify(in[0]);
          return V{c.logits, c.features};
        },
        in, seed, fewer);
  }));

  // Losses.
  s.push_back(op_case("L1 loss", {{2, 3, 3, 3}, {2, 3, 3, 3}},
                      [](In in) { return V{l1_loss(in[0], in[1])}; }));
  s.push_back(op_case("focal loss", {{4, 5, 1, 1}}, [](In in) {
    const int labels[] = {0, 3, 4, 1};
    const double alpha[] = {0.5, 1.0, 0.25, 2.0, 1.0};
    return V{focal_loss(in[0], labels, 2.0), focal_loss(in[0], labels, 1.5, alpha)};
  }, -2, 2));
  s.push_back(op_case("NT-Xent loss", {{3, 6, 1, 1}, {3, 6, 1, 1}},
                      [](In in) { return V{nt_xent_loss(in[0], in[1], 0.5)}; }));
  s.push_back(op_case("total loss", {{1, 1, 1, 1}, {1, 1, 1, 1}, {1, 1, 1, 1}, {1, 1, 1, 1}},
                      [](In in) {
                        LossTerms t{in[0], in[1], in[2], in[3]};
                        return V{total_loss(t, LossWeights{})};
                      }));
  return s;
}

}  // namespace shisr
