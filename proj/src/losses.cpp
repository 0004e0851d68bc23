#include "shisr/losses.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "shisr/ops.hpp"

namespace shisr {

using detail::make_result;
using detail::Node;

void LossWeights::validate() const {
  if (l1 < 0 || focal < 0 || ntxent < 0) throw ConfigError("loss weights must be non-negative");
  if (std::abs(l1 + focal + ntxent - 1.0) > 1e-9) {
    throw ConfigError("loss weights must sum to 1, got " + std::to_string(l1 + focal + ntxent));
  }
  if (!(tau > 0)) throw ConfigError("NT-Xent temperature must be positive");
  if (!(gamma >= 0)) throw ConfigError("focal gamma must be non-negative");
  for (double a : alpha) {
    if (!(a >= 0)) throw ConfigError("focal alpha entries must be non-negative");
  }
}

Tensor l1_loss(const Tensor& sr, const Tensor& hr) {
  if (sr.shape() != hr.shape()) {
    throw ShapeError("l1_loss: shape mismatch " + sr.shape().str() + " vs " + hr.shape().str());
  }
  const std::size_t n = sr.numel();
  if (n == 0) throw ShapeError("l1_loss: empty tensors");
  auto a = sr.data();
  auto b = hr.data();
  double acc = 0.0;
  if (detail::pattern_active()) {
    // 0: negative, 1: zero, 2: positive difference.
    std::vector<std::size_t> sign(n);
    for (std::size_t i = 0; i < n; ++i) sign[i] = a[i] > b[i] ? 2 : (a[i] < b[i] ? 0 : 1);
    detail::freeze_choices(sign);
    for (std::size_t i = 0; i < n; ++i) {
      acc += (static_cast<double>(sign[i]) - 1.0) * (static_cast<double>(a[i]) - b[i]);
    }
  } else {
    for (std::size_t i = 0; i < n; ++i) acc += std::abs(static_cast<double>(a[i]) - b[i]);
  }
  return make_result("l1_loss", {1, 1, 1, 1}, {static_cast<Real>(acc / n)}, {&sr, &hr},
                     [n](Node& self) {
                       const Real* a = self.inputs[0]->data.data();
                       const Real* b = self.inputs[1]->data.data();
                       const Real g = self.grad[0] / static_cast<Real>(n);
                       for (int k = 0; k < 2; ++k) {
                         if (!self.inputs[k]->requires_grad) continue;
                         Real* d = self.inputs[k]->grad_buffer();
                         const Real sign_of_input = k == 0 ? Real(1) : Real(-1);
                         for (std::size_t i = 0; i < n; ++i) {
                           const Real diff = a[i] - b[i];
                           const Real s = diff > 0 ? Real(1) : (diff < 0 ? Real(-1) : Real(0));
                           d[i] += sign_of_input * s * g;
                         }
                       }
                     });
}

Tensor focal_loss(const Tensor& logits, std::span<const int> labels, double gamma,
                  std::span<const double> alpha) {
  const Shape& s = logits.shape();
  const int n = s.n;
  const int k = s.c * s.h * s.w;
  if (static_cast<int>(labels.size()) != n) {
    throw ShapeError("focal_loss: " + std::to_string(labels.size()) + " labels for batch of " +
                     std::to_string(n));
  }
  if (n == 0) throw ShapeError("focal_loss: empty batch");
  if (!alpha.empty() && static_cast<int>(alpha.size()) != k) {
    throw ShapeError("focal_loss: alpha has " + std::to_string(alpha.size()) + " entries for " +
                     std::to_string(k) + " classes");
  }
  for (int y : labels) {
    if (y < 0 || y >= k) {
      throw ShapeError("focal_loss: label " + std::to_string(y) + " outside [0, " +
                       std::to_string(k) + ")");
    }
  }
  auto z = logits.data();
  // Per sample: softmax probabilities and dloss/dlogits, both in double.
  std::vector<double> dlogits(static_cast<std::size_t>(n) * k);
  double total = 0.0;
  for (int i = 0; i < n; ++i) {
    const Real* zi = z.data() + static_cast<std::size_t>(i) * k;
    const double mx = *std::max_element(zi, zi + k);
    double denom = 0.0;
    for (int j = 0; j < k; ++j) denom += std::exp(zi[j] - mx);
    const double log_denom = std::log(denom);
    const int y = labels[i];
    const double lp = zi[y] - mx - log_denom;
    const double p = std::exp(lp);
    const double q = std::max(0.0, 1.0 - p);
    const double a = alpha.empty() ? 1.0 : alpha[y];
    total += -a * std::pow(q, gamma) * lp;
    // d/dz_j = -a (delta_jy - p_j) [q^g - g q^(g-1) p lp]
    double bracket = std::pow(q, gamma);
    if (gamma != 0.0 && q > 0.0) bracket -= gamma * std::pow(q, gamma - 1.0) * p * lp;
    for (int j = 0; j < k; ++j) {
      const double pj = std::exp(zi[j] - mx - log_denom);
      const double delta = j == y ? 1.0 : 0.0;
      dlogits[static_cast<std::size_t>(i) * k + j] = -a * (delta - pj) * bracket / n;
    }
  }
  return make_result("focal_loss", {1, 1, 1, 1}, {static_cast<Real>(total / n)}, {&logits},
                     [dlogits = std::move(dlogits)](Node& self) {
                       Real* d = self.inputs[0]->grad_buffer();
                       const double g = self.grad[0];
                       for (std::size_t i = 0; i < dlogits.size(); ++i) {
                         d[i] += static_cast<Real>(g * dlogits[i]);
                       }
                     });
}

Tensor nt_xent_loss(const Tensor& z_sr, const Tensor& z_hr, double tau) {
  if (z_sr.shape() != z_hr.shape()) {
    throw ShapeError("nt_xent_loss: view shapes differ " + z_sr.shape().str() + " vs " +
                     z_hr.shape().str());
  }
  if (!(tau > 0)) throw ConfigError("nt_xent_loss: temperature must be positive");
  const int n = z_sr.shape().n;
  if (n < 2) throw ShapeError("nt_xent_loss: needs a batch of at least 2 for negatives");
  const int d = z_sr.shape().c * z_sr.shape().h * z_sr.shape().w;
  const int views = 2 * n;

  // Row v < n is z_sr[v]; row v >= n is z_hr[v - n].
  std::vector<double> u(static_cast<std::size_t>(views) * d);
  std::vector<double> norms(views);
  for (int v = 0; v < views; ++v) {
    const Real* src = (v < n ? z_sr.data().data() : z_hr.data().data()) +
                      static_cast<std::size_t>(v % n) * d;
    double sq = 0.0;
    for (int j = 0; j < d; ++j) sq += static_cast<double>(src[j]) * src[j];
    const double norm = std::sqrt(sq);
    if (!(norm > 0.0)) {
      throw NumericError("nt_xent_loss: zero-norm embedding at view " + std::to_string(v));
    }
    norms[v] = norm;
    for (int j = 0; j < d; ++j) u[static_cast<std::size_t>(v) * d + j] = src[j] / norm;
  }
  auto row = [&](int v) { return u.data() + static_cast<std::size_t>(v) * d; };

  // coeff[a][b] = dL/dsim(a,b) where sim = cos / tau.
  std::vector<double> coeff(static_cast<std::size_t>(views) * views, 0.0);
  double total = 0.0;
  std::vector<double> sim(views);
  for (int a = 0; a < views; ++a) {
    const int pos = a < n ? a + n : a - n;
    double mx = -1e300;
    for (int b = 0; b < views; ++b) {
      if (b == a) continue;
      double dot = 0.0;
      for (int j = 0; j < d; ++j) dot += row(a)[j] * row(b)[j];
      sim[b] = dot / tau;
      mx = std::max(mx, sim[b]);
    }
    double denom = 0.0;
    for (int b = 0; b < views; ++b) {
      if (b != a) denom += std::exp(sim[b] - mx);
    }
    const double lse = mx + std::log(denom);
    total += lse - sim[pos];
    for (int b = 0; b < views; ++b) {
      if (b == a) continue;
      const double soft = std::exp(sim[b] - lse);
      coeff[static_cast<std::size_t>(a) * views + b] = (soft - (b == pos ? 1.0 : 0.0)) / views;
    }
  }

  // Gradient w.r.t. the raw views, then split back into the two inputs.
  std::vector<double> grad_u(u.size(), 0.0);
  for (int a = 0; a < views; ++a) {
    for (int b = 0; b < views; ++b) {
      const double c = coeff[static_cast<std::size_t>(a) * views + b];
      if (c == 0.0) continue;
      for (int j = 0; j < d; ++j) {
        grad_u[static_cast<std::size_t>(a) * d + j] += c * row(b)[j] / tau;
        grad_u[static_cast<std::size_t>(b) * d + j] += c * row(a)[j] / tau;
      }
    }
  }
  std::vector<double> grad_raw(u.size());
  for (int v = 0; v < views; ++v) {
    const double* gu = grad_u.data() + static_cast<std::size_t>(v) * d;
    double proj = 0.0;
    for (int j = 0; j < d; ++j) proj += gu[j] * row(v)[j];
    for (int j = 0; j < d; ++j) {
      grad_raw[static_cast<std::size_t>(v) * d + j] = (gu[j] - row(v)[j] * proj) / norms[v];
    }
  }

  const std::size_t half = static_cast<std::size_t>(n) * d;
  return make_result("nt_xent_loss", {1, 1, 1, 1}, {static_cast<Real>(total / views)},
                     {&z_sr, &z_hr}, [grad_raw = std::move(grad_raw), half](Node& self) {
                       const double g = self.grad[0];
                       for (int k = 0; k < 2; ++k) {
                         if (!self.inputs[k]->requires_grad) continue;
                         Real* dst = self.inputs[k]->grad_buffer();
                         for (std::size_t i = 0; i < half; ++i) {
                           dst[i] += static_cast<Real>(g * grad_raw[k * half + i]);
                         }
                       }
                     });
}

Tensor total_loss(const LossTerms& terms, const LossWeights& weights) {
  auto check = [](const Tensor& t, const char* name) {
    if (t.defined() && (t.numel() != 1 || !std::isfinite(t.item()))) {
      throw NumericError(std::string("total_loss: component ") + name +
                         " is not a finite scalar");
    }
  };
  check(terms.l1, "l1");
  check(terms.focal_sr, "focal_sr");
  check(terms.focal_hr, "focal_hr");
  check(terms.ntxent, "ntxent");

  Tensor total;
  auto accumulate = [&total](const Tensor& t, double w) {
    if (!t.defined()) return;
    const Tensor term = mul_scalar(t, static_cast<Real>(w));
    total = total.defined() ? add(total, term) : term;
  };
  accumulate(terms.l1, weights.l1);
  if (terms.focal_sr.defined() && terms.focal_hr.defined()) {
    const double share = weights.focal_combine == FocalCombine::Mean ? 0.5 : 1.0;
    accumulate(terms.focal_sr, weights.focal * share);
    accumulate(terms.focal_hr, weights.focal * share);
  } else {
    accumulate(terms.focal_sr, weights.focal);
    accumulate(terms.focal_hr, weights.focal);
  }
  accumulate(terms.ntxent, weights.ntxent);
  if (!total.defined()) throw Error("total_loss: no loss components");
  return total;
}

double total_loss(double l1, double focal_sr, double focal_hr, double ntxent,
                  const LossWeights& weights) {
  for (double v : {l1, focal_sr, focal_hr, ntxent}) {
    if (!std::isfinite(v)) throw NumericError("total_loss: non-finite component");
  }
  const double focal = weights.focal_combine == FocalCombine::Mean ? (focal_sr + focal_hr) / 2
                                                                    : focal_sr + focal_hr;
  return weights.l1 * l1 + weights.focal * focal + weights.ntxent * ntxent;
}

}  // namespace shisr
