#pragma once

#include <string>
#include <vector>

#include "shisr/nn.hpp"

namespace shisr {

// ---------------------------------------------------------------------------
// Multi-scale selective fusion (MSF) and the multi-feature extraction block.
// ---------------------------------------------------------------------------

struct MSFResult {
  Tensor fused;
  /// Normalized per-(sample, channel) weight of each branch, (n, c, 1, 1).
  std::vector<Tensor> weights;
};

/// Parameter-free fusion of n >= 2 equally shaped branches:
/// w_i = sigmoid(GAP(Y_i)), normalized by a softmax across i at each channel,
/// then fused = sum_i w_i * Y_i.
MSFResult msf_fuse(const std::vector<Tensor>& features);

struct MFEBlockConfig {
  int channels = 64;
  int n_branches = 4;
  /// Dilation per branch; empty means the default 1, 2, 4, 6, ...
  std::vector<int> rates;
  /// Ablation: replace MSF by channel concatenation and a 1x1 convolution.
  bool concat_fusion = false;

  /// rate_1 = 1, rate_i = 2 (i - 1) for i > 1.
  static std::vector<int> default_rates(int n_branches);
  std::vector<int> effective_rates() const;
  void validate() const;
};

/// Cascade of 3x3 atrous convolutions where branch i > 1 consumes X + Y_{i-1},
/// fused by MSF and added back onto the input.
class MFEBlock {
 public:
  MFEBlock() = default;
  MFEBlock(MFEBlockConfig config, Rng& rng);

  Tensor forward(const Tensor& x) const;
  /// Same as forward but also exposes the branch outputs and fusion weights.
  struct Trace {
    std::vector<Tensor> branches;
    MSFResult fusion;
    Tensor out;
  };
  Trace trace(const Tensor& x) const;

  void collect(const std::string& prefix, ParameterList& out) const;
  const MFEBlockConfig& config() const { return config_; }

  std::vector<Conv2d> branches;
  Conv2d fuse;  // defined only with concat_fusion

 private:
  MFEBlockConfig config_;
};

// ---------------------------------------------------------------------------
// Cross-scale selective fusion (CSF) block.
// ---------------------------------------------------------------------------

enum class UpsampleMode { Bilinear, Nearest };

/// Hidden width of the squeeze layer: max(channels / reduction, min_hidden).
int attention_hidden_width(int channels, int reduction, int min_hidden = 8);

struct CSFBlockConfig {
  int channels = 128;
  int reduction = 16;
  UpsampleMode upsample = UpsampleMode::Bilinear;

  int hidden() const { return attention_hidden_width(channels, reduction); }
};

struct CSFResult {
  Tensor out;       ///< F = a * X_h + b * Up(X_l)
  Tensor a;         ///< (n, C, 1, 1)
  Tensor b;         ///< (n, C, 1, 1), a + b = 1
  Tensor up_low;    ///< Up(X_l)
};

Tensor resize_to(const Tensor& x, int h, int w, UpsampleMode mode);

class CSFBlock {
 public:
  CSFBlock() = default;
  CSFBlock(CSFBlockConfig config, Rng& rng);

  /// x_high (n,C,H,W) and x_low (n,C,H1,W1) with H1 <= H, W1 <= W.
  CSFResult forward(const Tensor& x_high, const Tensor& x_low) const;

  /// Registers "<prefix>.Wc", "<prefix>.Wa", "<prefix>.Wb".
  void collect(const std::string& prefix, ParameterList& out) const;
  const CSFBlockConfig& config() const { return config_; }

  Linear squeeze;  // W_c : C -> hidden
  Linear head_a;   // W_a : hidden -> C
  Linear head_b;   // W_b : hidden -> C

 private:
  CSFBlockConfig config_;
};

// ---------------------------------------------------------------------------
// Selective-kernel unit.
// ---------------------------------------------------------------------------

struct SKUnitConfig {
  int in_channels = 64;
  int out_channels = 64;
  int stride = 1;
  int reduction = 16;
  double bn_momentum = 0.1;
  double bn_eps = 1e-5;

  /// Width of the bottleneck that hosts the selective-kernel convolution.
  int mid_channels() const { return out_channels / 2 > 0 ? out_channels / 2 : 1; }
  void validate() const;
};

struct SKAttention {
  Tensor out;
  Tensor a;  ///< weight of the dilation-1 branch, (n, C, 1, 1)
  Tensor b;  ///< weight of the dilation-2 branch
};

/// Two 3x3 branches (dilation 1 and 2), each conv + BN + ReLU, selected per
/// channel by a softmax attention computed from their sum.
class SKConv {
 public:
  SKConv() = default;
  SKConv(int channels, int stride, int reduction, double bn_momentum, double bn_eps, Rng& rng);

  SKAttention forward(const Tensor& x, bool training);
  void collect(const std::string& prefix, ParameterList& out) const;

  Conv2d branch_small;
  Conv2d branch_wide;
  BatchNorm2d bn_small;
  BatchNorm2d bn_wide;
  Linear squeeze;
  Linear head_a;
  Linear head_b;
};

/// Bottleneck residual: 1x1 reduce, SK convolution, 1x1 expand, with a
/// projection shortcut whenever stride or width changes.
class SKUnit {
 public:
  SKUnit() = default;
  SKUnit(SKUnitConfig config, Rng& rng);

  SKAttention forward(const Tensor& x, bool training);
  void collect(const std::string& prefix, ParameterList& out) const;
  const SKUnitConfig& config() const { return config_; }
  bool has_projection() const { return projection.weight.defined(); }

  Conv2d reduce;
  BatchNorm2d bn_reduce;
  SKConv sk;
  Conv2d expand;
  BatchNorm2d bn_expand;
  Conv2d projection;
  BatchNorm2d bn_projection;

 private:
  SKUnitConfig config_;
};

}  // namespace shisr
