#pragma once

#include <span>
#include <vector>

#include "shisr/tensor.hpp"

namespace shisr {

enum class FocalCombine {
  Mean,  ///< (FL_sr + FL_hr) / 2
  Sum,   ///< FL_sr + FL_hr
};

struct LossWeights {
  double l1 = 0.6;
  double focal = 0.3;
  double ntxent = 0.1;
  double gamma = 2.0;
  /// Optional per-class focal weights; empty means uniform.
  std::vector<double> alpha;
  double tau = 0.5;
  FocalCombine focal_combine = FocalCombine::Mean;

  /// Weights non-negative and summing to one (1e-9), tau > 0, gamma >= 0.
  void validate() const;
};

/// Mean absolute difference.
Tensor l1_loss(const Tensor& sr, const Tensor& hr);

/// Mean over the batch of -alpha_y (1 - p_y)^gamma log p_y with p the softmax
/// of `logits` (n, K, 1, 1); log p is taken from a stabilized log-softmax.
Tensor focal_loss(const Tensor& logits, std::span<const int> labels, double gamma,
                  std::span<const double> alpha = {});

/// NT-Xent over the 2n views {z_sr} u {z_hr}. Views are L2-normalized rows;
/// (z_sr[i], z_hr[i]) are the positives and every other view is a negative.
/// Mean of the 2n anchor losses.
Tensor nt_xent_loss(const Tensor& z_sr, const Tensor& z_hr, double tau);

/// Loss components of one step; undefined tensors are absent terms.
struct LossTerms {
  Tensor l1;
  Tensor focal_sr;
  Tensor focal_hr;
  Tensor ntxent;
};

/// lambda_1 L1 + lambda_2 FL + lambda_3 NT-Xent, where FL combines the SR-
/// and HR-input focal terms according to `weights.focal_combine` (just FL_sr
/// when the HR term is absent).
Tensor total_loss(const LossTerms& terms, const LossWeights& weights);

/// Scalar form of total_loss for logged component values.
double total_loss(double l1, double focal_sr, double focal_hr, double ntxent,
                  const LossWeights& weights);

}  // namespace shisr
