#pragma once

#include <array>
#include <string>
#include <vector>

#include "shisr/blocks.hpp"

namespace shisr {

inline constexpr int kNumClasses = 8;

/// Class ids follow the alphabetical order of the BreaKHis abbreviations.
inline constexpr std::array<const char*, kNumClasses> kClassNames = {"A",  "DC", "F",  "LC",
                                                                     "MC", "PC", "PT", "TA"};

/// Returns -1 for an unknown abbreviation.
int class_index(const std::string& abbreviation);

struct CFConfig {
  std::vector<int> stage_blocks{2, 2, 2, 2};
  std::vector<int> stage_channels{64, 128, 256, 512};
  int stem_channels = 32;
  int fpn_channels = 128;
  int n_classes = kNumClasses;
  int reduction = 16;
  UpsampleMode upsample = UpsampleMode::Bilinear;
  double bn_momentum = 0.1;
  double bn_eps = 1e-5;
  /// Ablation: backbone only, GAP of the last stage feeds the classifier.
  bool no_fpn_csf = false;
  /// Ablation: FPN merges by addition instead of CSF blocks.
  bool no_csf = false;

  /// Reduced profile for tests: one unit per stage, widths 8/16/32/64.
  static CFConfig micro();
  void validate() const;
  /// Length of the vector that feeds the classifier.
  int feature_dim() const;
};

struct Pyramid {
  std::vector<Tensor> laterals;  ///< 1x1 projections of the four stages
  std::vector<Tensor> merged;    ///< top-down merged maps, before smoothing
  std::vector<Tensor> levels;    ///< smoothed pyramid, strides 4, 8, 16, 32
  std::vector<CSFResult> fusions;  ///< fusions[k] produced merged[k], k = 0..2
};

struct Classification {
  Tensor logits;    ///< (n, n_classes, 1, 1)
  Tensor features;  ///< (n, feature_dim, 1, 1), pre-FC multi-scale vector
};

/// Selective-kernel backbone + feature pyramid with CSF merges + single FC.
class CFNet {
 public:
  CFNet() = default;
  CFNet(CFConfig config, Rng& rng);

  /// Stem (7x7/2 conv, 3x3/2 max-pool) and four SK stages; returns the stage
  /// outputs at strides 4, 8, 16, 32.
  std::vector<Tensor> backbone(const Tensor& img);
  Pyramid fpn(const std::vector<Tensor>& stages) const;
  Classification classify(const Tensor& img);

  void set_training(bool training) { training_ = training; }
  bool training() const { return training_; }

  void collect(const std::string& prefix, ParameterList& out) const;
  ParameterList parameters(const std::string& prefix = "cf") const;
  const CFConfig& config() const { return config_; }

  Conv2d stem;
  BatchNorm2d stem_bn;
  std::vector<std::vector<SKUnit>> stages;
  std::vector<Conv2d> laterals;
  std::vector<CSFBlock> fusions;
  std::vector<Conv2d> smoothing;
  Linear fc;

 private:
  CFConfig config_;
  bool training_ = true;
};

}  // namespace shisr
